#pragma once

// Synthetic scans, patches and small model configurations shared by the tests.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "nodseg/imaging_io.hpp"
#include "nodseg/network.hpp"
#include "nodseg/patch.hpp"
#include "nodseg/roi_pipeline.hpp"

namespace fixture {

struct Sphere {
  nodseg::Vec3 center_world;  // (Z,Y,X) mm
  double diameter;
};

// Dim background with bright solid spheres and optional Gaussian noise.
inline nodseg::ScanVolume sphere_volume(const std::string& series, std::array<std::int64_t, 3> shape,
                                        nodseg::Vec3 spacing, nodseg::Vec3 origin,
                                        const std::vector<Sphere>& spheres, double noise = 0.0,
                                        std::uint64_t seed = 1) {
  nodseg::ScanVolume v;
  v.series_id = series;
  v.shape = shape;
  v.spacing = spacing;
  v.origin = origin;
  v.voxels.assign(static_cast<std::size_t>(v.voxel_count()), 20.0f);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::size_t i = 0;
  for (std::int64_t z = 0; z < shape[0]; ++z)
    for (std::int64_t y = 0; y < shape[1]; ++y)
      for (std::int64_t x = 0; x < shape[2]; ++x, ++i) {
        const nodseg::Vec3 w{origin[0] + z * spacing[0], origin[1] + y * spacing[1], origin[2] + x * spacing[2]};
        for (const auto& s : spheres) {
          const double dz = w[0] - s.center_world[0], dy = w[1] - s.center_world[1], dx = w[2] - s.center_world[2];
          if (std::sqrt(dz * dz + dy * dy + dx * dx) <= s.diameter / 2) v.voxels[i] = 200.0f;
        }
        if (noise > 0) v.voxels[i] += static_cast<float>(noise * n01(rng));
      }
  return v;
}

inline nodseg::NoduleAnnotation annotation(const std::string& series, const Sphere& s) {
  return {series, s.center_world, s.diameter};
}

// Writes an annotation table with the columns in a non-default order.
inline void write_annotations(const std::filesystem::path& path, const std::vector<nodseg::NoduleAnnotation>& rows) {
  std::ofstream out(path);
  out << "diameter_mm,seriesuid,coordZ,coordY,coordX\n";
  out.precision(17);
  for (const auto& a : rows)
    out << a.diameter << ',' << a.series_id << ',' << a.center_world[0] << ',' << a.center_world[1] << ','
        << a.center_world[2] << '\n';
}

// Two volumes with three nodules each.
struct TwoVolumeFixture {
  std::vector<nodseg::ScanVolume> volumes;
  std::vector<nodseg::NoduleAnnotation> annotations;
};

inline TwoVolumeFixture two_volumes() {
  TwoVolumeFixture f;
  const nodseg::Vec3 spacing{2.5, 0.7, 0.7};
  const nodseg::Vec3 origin0{-30.0, -100.0, -90.0};
  const nodseg::Vec3 origin1{10.0, 5.0, 12.0};
  const std::vector<Sphere> s0{{{-10.0, -60.0, -40.0}, 8.0}, {{0.0, -30.0, -10.0}, 12.0}, {{-20.0, -80.0, -70.0}, 6.0}};
  const std::vector<Sphere> s1{{{30.0, 40.0, 50.0}, 10.0}, {{25.0, 70.0, 40.0}, 5.0}, {{40.0, 50.0, 80.0}, 14.0}};
  f.volumes.push_back(sphere_volume("1.3.6.1.100", {20, 120, 140}, spacing, origin0, s0, 5.0, 11));
  f.volumes.push_back(sphere_volume("1.3.6.1.200", {16, 130, 120}, spacing, origin1, s1, 5.0, 12));
  for (const auto& s : s0) f.annotations.push_back(annotation("1.3.6.1.100", s));
  for (const auto& s : s1) f.annotations.push_back(annotation("1.3.6.1.200", s));
  return f;
}

// Channel widths small enough for CPU tests.
inline nodseg::ModelConfig small_model() {
  nodseg::ModelConfig m;
  m.seg_widths = {8, 16, 32, 32, 32};
  m.cls_base_width = 2;
  m.cls_blocks = {1, 1, 1, 1};
  return m;
}

// Random images with blob masks; labels follow the masks.
inline std::vector<nodseg::SlicePatch> random_patches(int n, std::uint64_t seed, int size = nodseg::kPatchSize) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<nodseg::SlicePatch> out;
  for (int i = 0; i < n; ++i) {
    nodseg::SlicePatch p;
    p.height = p.width = size;
    p.image.resize(p.pixel_count());
    p.mask.assign(p.pixel_count(), 0);
    const bool positive = i % 3 != 2;
    const double cy = size * (0.3 + 0.4 * unit(rng)), cx = size * (0.3 + 0.4 * unit(rng));
    const double r = size * (0.05 + 0.1 * unit(rng));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const bool in = positive && std::hypot(y - cy, x - cx) <= r;
        p.mask[y * size + x] = in;
        p.image[y * size + x] = static_cast<float>(std::clamp((in ? 0.8 : 0.1) + 0.1 * (unit(rng) - 0.5), 0.0, 1.0));
      }
    p.class_label = positive;
    p.lesion_id = "L" + std::to_string(i / 2);
    p.patient_id = "P";
    p.slice_index = i % 2;
    p.fold = (i / 2) % 5;
    out.push_back(std::move(p));
  }
  return out;
}

// One nodule-bearing centre slice per lesion, produced by the ROI pipeline.
inline std::vector<nodseg::SlicePatch> sphere_patches(int n) {
  std::vector<nodseg::SlicePatch> out;
  const nodseg::Vec3 spacing{1.0, 0.75, 0.75};
  for (int i = 0; i < n; ++i) {
    const std::string series = "sphere" + std::to_string(i);
    const Sphere s{{4.0, 50.0 + 1.5 * i, 52.0 - i}, 7.0 + 1.3 * i};
    const auto vol = sphere_volume(series, {9, 140, 140}, spacing, {0.0, 0.0, 0.0}, {s}, 4.0, 100 + i);
    const auto ann = annotation(series, s);
    auto stack = nodseg::extract_roi(vol, ann, 0.0, series + "_n0");
    nodseg::prepare_stack(stack, ann, {0.0, 255.0});
    for (auto& p : stack.slices)
      if (p.slice_index == 0) {
        p.fold = i % 5;
        out.push_back(p);
      }
  }
  return out;
}

}  // namespace fixture
