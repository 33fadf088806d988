#include "nodseg/roi_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "nodseg/error.hpp"

namespace nodseg {

ROIStack extract_roi(const ScanVolume& volume, const NoduleAnnotation& ann, double half_depth_mm,
                     const std::string& lesion_id) {
  if (ann.series_id != volume.series_id)
    throw ParameterError("annotation for series " + ann.series_id + " applied to volume " +
                         volume.series_id);
  if (!(ann.diameter > 0.0)) throw ParameterError("nodule diameter must be positive");

  ROIStack stack;
  for (int a = 0; a < 3; ++a) {
    const double idx = std::round((ann.center_world[a] - volume.origin[a]) / volume.spacing[a]);
    if (!(idx >= 0.0 && idx < static_cast<double>(volume.shape[a])))
      throw PlacementError("nodule centre of " + lesion_id + " lies outside the volume on axis " +
                           std::to_string(a));
    stack.center_voxel[a] = static_cast<std::int64_t>(idx);
  }

  StackGeometry& geo = stack.geometry;
  geo.center_voxel = stack.center_voxel;
  geo.row0 = stack.center_voxel[1] - kPatchSize / 2;
  geo.col0 = stack.center_voxel[2] - kPatchSize / 2;
  geo.spacing = volume.spacing;
  geo.origin = volume.origin;

  const double half_extent = std::max(half_depth_mm, ann.diameter / 2.0);
  const int reach = static_cast<int>(std::floor(half_extent / volume.spacing[0] + 1e-9));
  for (int k = -reach; k <= reach; ++k) {
    const std::int64_t z = stack.center_voxel[0] + k;
    if (z < 0 || z >= volume.shape[0]) continue;
    geo.slice_offsets.push_back(k);

    SlicePatch p;
    p.image.assign(static_cast<std::size_t>(kPatchSize) * kPatchSize, 0.0f);
    p.mask.assign(p.image.size(), 0);
    for (int r = 0; r < kPatchSize; ++r) {
      const std::int64_t y = geo.row0 + r;
      if (y < 0 || y >= volume.shape[1]) continue;
      for (int c = 0; c < kPatchSize; ++c) {
        const std::int64_t x = geo.col0 + c;
        if (x < 0 || x >= volume.shape[2]) continue;
        p.image[static_cast<std::size_t>(r) * kPatchSize + c] = volume.at(z, y, x);
      }
    }
    p.lesion_id = lesion_id;
    p.patient_id = volume.series_id;
    p.slice_index = k;
    p.spacing_yx = {volume.spacing[1], volume.spacing[2]};
    stack.slices.push_back(std::move(p));
  }
  return stack;
}

std::vector<float> normalize_intensity(std::span<const float> field, double i_min, double i_max) {
  if (!(i_max > i_min)) throw ParameterError("normalize_intensity requires i_max > i_min");
  const double range = i_max - i_min;
  std::vector<float> out(field.size());
  std::transform(field.begin(), field.end(), out.begin(), [&](float v) {
    return static_cast<float>(std::clamp((static_cast<double>(v) - i_min) / range, 0.0, 1.0));
  });
  return out;
}

std::vector<std::vector<std::uint8_t>> synthesize_sphere_mask(const NoduleAnnotation& ann,
                                                              const StackGeometry& geo) {
  if (!(ann.diameter > 0.0)) throw ParameterError("nodule diameter must be positive");
  const double r2 = (ann.diameter / 2.0) * (ann.diameter / 2.0);
  std::vector<std::vector<std::uint8_t>> masks;
  masks.reserve(geo.slice_offsets.size());
  for (int k : geo.slice_offsets) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(geo.height) * geo.width, 0);
    const double dz = geo.origin[0] + static_cast<double>(geo.center_voxel[0] + k) * geo.spacing[0] -
                      ann.center_world[0];
    if (dz * dz <= r2) {
      for (int r = 0; r < geo.height; ++r) {
        const double dy = geo.origin[1] + static_cast<double>(geo.row0 + r) * geo.spacing[1] - ann.center_world[1];
        for (int c = 0; c < geo.width; ++c) {
          const double dx = geo.origin[2] + static_cast<double>(geo.col0 + c) * geo.spacing[2] - ann.center_world[2];
          if (dz * dz + dy * dy + dx * dx <= r2) m[static_cast<std::size_t>(r) * geo.width + c] = 1;
        }
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

void prepare_stack(ROIStack& stack, const NoduleAnnotation& ann, const IntensityWindow& window) {
  auto masks = synthesize_sphere_mask(ann, stack.geometry);
  for (std::size_t i = 0; i < stack.slices.size(); ++i) {
    auto& s = stack.slices[i];
    s.image = normalize_intensity(s.image, window.i_min, window.i_max);
    s.mask = std::move(masks[i]);
    s.class_label = s.mask_nonempty() ? 1 : 0;
  }
}

std::vector<SlicePatch> build_slice_dataset(std::span<const ROIStack> stacks, double keep_ratio,
                                            int k_folds, std::uint64_t seed) {
  if (k_folds < 2) throw ConfigError("k_folds must be at least 2");
  if (!(keep_ratio >= 0.0)) throw ConfigError("keep_ratio must be non-negative");

  std::vector<std::string> lesions;
  for (const auto& s : stacks)
    for (const auto& p : s.slices)
      if (std::find(lesions.begin(), lesions.end(), p.lesion_id) == lesions.end())
        lesions.push_back(p.lesion_id);
  if (static_cast<int>(lesions.size()) < k_folds)
    throw ConfigError("only " + std::to_string(lesions.size()) + " lesions for " +
                      std::to_string(k_folds) + " folds");

  std::vector<std::string> order = lesions;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = static_cast<int>(i % k_folds);

  std::vector<SlicePatch> out;
  for (const auto& stack : stacks) {
    std::vector<const SlicePatch*> nodule, empty;
    for (const auto& p : stack.slices) (p.class_label == 1 ? nodule : empty).push_back(&p);
    if (nodule.empty()) continue;

    auto distance = [&](const SlicePatch* p) {
      int best = INT32_MAX;
      for (const auto* n : nodule) best = std::min(best, std::abs(p->slice_index - n->slice_index));
      return best;
    };
    std::stable_sort(empty.begin(), empty.end(), [&](const SlicePatch* a, const SlicePatch* b) {
      const int da = distance(a), db = distance(b);
      return da != db ? da < db : a->slice_index < b->slice_index;
    });
    const auto wanted = static_cast<std::size_t>(std::llround(keep_ratio * static_cast<double>(nodule.size())));
    empty.resize(std::min(empty.size(), wanted));

    std::vector<const SlicePatch*> kept = nodule;
    kept.insert(kept.end(), empty.begin(), empty.end());
    std::sort(kept.begin(), kept.end(),
              [](const SlicePatch* a, const SlicePatch* b) { return a->slice_index < b->slice_index; });
    for (const auto* p : kept) {
      SlicePatch copy = *p;
      copy.fold = fold_of.at(copy.lesion_id);
      out.push_back(std::move(copy));
    }
  }
  return out;
}

void flip_horizontal(SlicePatch& p) {
  for (int r = 0; r < p.height; ++r) {
    const auto row = static_cast<std::size_t>(r) * p.width;
    std::reverse(p.image.begin() + row, p.image.begin() + row + p.width);
    std::reverse(p.mask.begin() + row, p.mask.begin() + row + p.width);
  }
}

void flip_vertical(SlicePatch& p) {
  for (int top = 0, bottom = p.height - 1; top < bottom; ++top, --bottom) {
    const auto a = static_cast<std::size_t>(top) * p.width, b = static_cast<std::size_t>(bottom) * p.width;
    std::swap_ranges(p.image.begin() + a, p.image.begin() + a + p.width, p.image.begin() + b);
    std::swap_ranges(p.mask.begin() + a, p.mask.begin() + a + p.width, p.mask.begin() + b);
  }
}

SlicePatch augment_flip(const SlicePatch& patch, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  SlicePatch out = patch;
  const bool horizontal = coin(rng);
  const bool vertical = coin(rng);
  if (horizontal) flip_horizontal(out);
  if (vertical) flip_vertical(out);
  return out;
}

}  // namespace nodseg
