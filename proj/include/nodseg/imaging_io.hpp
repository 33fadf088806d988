#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodseg/patch.hpp"

namespace nodseg {

/// CT volume in (Z,Y,X) order with spacing and world origin in millimetres.
struct ScanVolume {
  std::array<std::int64_t, 3> shape{0, 0, 0};
  std::vector<float> voxels;  // z-major, then y, then x
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::string series_id;

  std::int64_t voxel_count() const { return shape[0] * shape[1] * shape[2]; }
  float at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return voxels[static_cast<std::size_t>((z * shape[1] + y) * shape[2] + x)];
  }
};

struct NoduleAnnotation {
  std::string series_id;
  Vec3 center_world{0.0, 0.0, 0.0};  // (Z,Y,X) mm
  double diameter = 0.0;             // mm
};

struct AnnotationTable {
  std::vector<NoduleAnnotation> rows;
  std::size_t rejected = 0;
};

/// Reads a MetaImage header (.mhd) and its raw companion.
///
/// DimSize/ElementSpacing/Offset are stored X-first in the header and are
/// reversed into (Z,Y,X). Voxels of any supported element type are converted
/// to float. Compressed payloads are rejected with FormatError.
ScanVolume read_metaimage(const std::filesystem::path& header_path);

/// Writes `volume` as an uncompressed MET_FLOAT .mhd/.raw pair next to `header_path`.
void write_metaimage(const ScanVolume& volume, const std::filesystem::path& header_path);

/// Parses the merged nodule table (seriesuid, coordX, coordY, coordZ, diameter_mm).
/// Rows that do not parse or carry a non-positive diameter are counted in `rejected`.
AnnotationTable read_annotations(const std::filesystem::path& csv_path);

struct ManifestEntry {
  std::string image_path;  // relative to the dataset directory
  std::string mask_path;
  int class_label = 0;
  std::string lesion_id;
  std::string patient_id;
  int slice_index = 0;
  std::optional<int> fold;
  std::array<double, 2> spacing_yx{1.0, 1.0};

  bool operator==(const ManifestEntry&) const = default;
};

struct PatchManifest {
  static constexpr int kVersion = 1;

  std::vector<ManifestEntry> entries;
  int patch_height = kPatchSize;
  int patch_width = kPatchSize;
  int version = kVersion;

  bool operator==(const PatchManifest&) const = default;
};

struct PatchDataset {
  PatchManifest manifest;
  std::vector<SlicePatch> patches;
};

/// File stem used for a patch: "{lesion}_{slice}".
std::string patch_stem(const SlicePatch& patch);

/// Writes images as little-endian float32 (.img), masks as one byte per pixel
/// (.msk) and the manifest as dir/manifest.json. Entry order follows input order.
PatchManifest write_patch_dataset(std::span<const SlicePatch> patches,
                                  const std::filesystem::path& dir);

/// Loads and validates a dataset written by write_patch_dataset (or assembled
/// externally with the same layout).
PatchDataset load_patch_dataset(const std::filesystem::path& dir);

/// Reads a little-endian float32 raw file of exactly `count` values.
std::vector<float> read_float_raw(const std::filesystem::path& path, std::size_t count);
void write_float_raw(const std::filesystem::path& path, std::span<const float> values);
std::vector<std::uint8_t> read_mask_raw(const std::filesystem::path& path, std::size_t count);
void write_mask_raw(const std::filesystem::path& path, std::span<const std::uint8_t> values);

}  // namespace nodseg
