#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "nodseg/imaging_io.hpp"
#include "nodseg/patch.hpp"

namespace nodseg {

/// Where a stack of ROI slices sits inside its source volume.
struct StackGeometry {
  std::array<std::int64_t, 3> center_voxel{0, 0, 0};  // (Z,Y,X)
  std::int64_t row0 = 0;  // volume row of patch row 0 (may be negative when padded)
  std::int64_t col0 = 0;
  std::vector<int> slice_offsets;  // Z offset of each slice relative to center_voxel[0]
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  int height = kPatchSize;
  int width = kPatchSize;
};

/// Slices cut around one nodule. Images hold raw intensities until
/// prepare_stack normalizes them and attaches masks.
struct ROIStack {
  std::vector<SlicePatch> slices;
  std::array<std::int64_t, 3> center_voxel{0, 0, 0};
  StackGeometry geometry;
};

/// Intensity range mapped onto [0,1].
struct IntensityWindow {
  double i_min = 0.0;
  double i_max = 255.0;
};

/// Crops a 128x128 window centred on the nodule for every slice within
/// +-max(half_depth_mm, diameter/2) of the centre slice. Out-of-volume pixels are zero.
ROIStack extract_roi(const ScanVolume& volume, const NoduleAnnotation& ann, double half_depth_mm,
                     const std::string& lesion_id);

/// clamp((I - i_min)/(i_max - i_min), 0, 1), elementwise.
std::vector<float> normalize_intensity(std::span<const float> field, double i_min, double i_max);

/// Per-slice masks marking pixels whose world position lies within diameter/2 of the centre.
std::vector<std::vector<std::uint8_t>> synthesize_sphere_mask(const NoduleAnnotation& ann,
                                                              const StackGeometry& geometry);

/// Normalizes images and attaches sphere masks and labels in place.
void prepare_stack(ROIStack& stack, const NoduleAnnotation& ann, const IntensityWindow& window);

/// Keeps every nodule-bearing slice plus round(keep_ratio * n_nodule) empty slices per lesion,
/// nearest to the nodule span first, then assigns folds per lesion from a seeded shuffle.
std::vector<SlicePatch> build_slice_dataset(std::span<const ROIStack> stacks, double keep_ratio,
                                            int k_folds, std::uint64_t seed);

/// Independent horizontal and vertical flips, each with probability 0.5.
SlicePatch augment_flip(const SlicePatch& patch, std::mt19937_64& rng);

/// Deterministic flip helpers used by augment_flip.
void flip_horizontal(SlicePatch& patch);
void flip_vertical(SlicePatch& patch);

}  // namespace nodseg
