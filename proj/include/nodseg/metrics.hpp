#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nodseg {

/// Binary mask, row-major, values in {0,1}.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}
  BinaryMask(int h, int w, std::vector<std::uint8_t> values);

  std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
};

/// Pixel coordinate (row, column).
struct Pixel {
  int r = 0;
  int c = 0;
  bool operator==(const Pixel&) const = default;
  auto operator<=>(const Pixel&) const = default;
};

/// Per-case scores. Ratios whose denominator is zero are absent rather than 0 or 1.
struct CaseMetrics {
  std::string lesion_id;
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> precision, sensitivity, dice, iou;
  std::optional<double> hd_mm, assd_mm;
};

enum class Aggregation { Lesion, Slice };

/// Mean of every defined metric over a list of cases.
struct MetricsReport {
  std::vector<CaseMetrics> cases;
  std::optional<double> precision, sensitivity, dice, iou, hd_mm, assd_mm;
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;  // summed counts
  std::size_t hd_excluded = 0;
  std::size_t assd_excluded = 0;
};

/// Confusion counts and overlap ratios of `pred` against `gt`.
CaseMetrics pixel_metrics(const BinaryMask& pred, const BinaryMask& gt);

/// Thresholds probabilities at `threshold` (value >= threshold -> 1).
BinaryMask binarize(std::span<const float> probabilities, int height, int width, double threshold = 0.5);

/// Positive pixels with at least one 4-neighbour that is zero or outside the image.
std::vector<Pixel> extract_contour(const BinaryMask& mask);

/// Symmetric Hausdorff distance in mm; nullopt if either set is empty.
std::optional<double> hausdorff(std::span<const Pixel> a, std::span<const Pixel> b,
                                std::array<double, 2> spacing_yx);

/// Average symmetric surface distance in mm; nullopt if either set is empty.
std::optional<double> assd(std::span<const Pixel> a, std::span<const Pixel> b,
                           std::array<double, 2> spacing_yx);

/// Pixel metrics plus contour distances for one prediction.
CaseMetrics case_metrics(const BinaryMask& pred, const BinaryMask& gt, std::array<double, 2> spacing_yx,
                         std::string lesion_id = {});

/// Collapses per-slice cases into one case per lesion: counts are summed, every
/// metric is the mean of its defined slice values. Lesion order is first appearance.
std::vector<CaseMetrics> aggregate_by_lesion(std::span<const CaseMetrics> slices);

/// Unweighted mean of each defined metric. Throws ParameterError on empty input.
MetricsReport aggregate_report(std::vector<CaseMetrics> cases);

void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path);
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_metrics_json(const std::filesystem::path& path);

/// Checks that a metrics.json document has the expected keys and value types.
/// Returns a description of the first problem, or empty.
std::string validate_metrics_json(const std::filesystem::path& path);

}  // namespace nodseg
