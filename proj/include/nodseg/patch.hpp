#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nodseg {

/// Side length of every training patch.
inline constexpr int kPatchSize = 128;

/// (Z,Y,X) triple in millimetres or voxels.
using Vec3 = std::array<double, 3>;

/// One normalized in-plane slice around a nodule, with its binary mask.
///
/// Invariants: image values in [0,1], mask values in {0,1},
/// class_label == 1 iff the mask has at least one positive pixel.
struct SlicePatch {
  int height = kPatchSize;
  int width = kPatchSize;
  std::vector<float> image;         // row-major, height*width
  std::vector<std::uint8_t> mask;   // row-major, height*width
  int class_label = 0;
  std::string lesion_id;
  std::string patient_id;
  int slice_index = 0;              // Z offset from the lesion centre slice
  std::optional<int> fold;
  std::array<double, 2> spacing_yx{1.0, 1.0};

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool mask_nonempty() const;
};

/// Checks the SlicePatch invariants; returns a description of the first violation, or empty.
std::string validate_patch(const SlicePatch& patch);

}  // namespace nodseg
