#include "nodseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nodseg/error.hpp"

namespace nodseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

BinaryMask::BinaryMask(int h, int w, std::vector<std::uint8_t> values)
    : height(h), width(w), data(std::move(values)) {
  if (data.size() != static_cast<std::size_t>(h) * w)
    throw ParameterError("mask buffer does not match its dimensions");
}

namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

double sq(double v) { return v * v; }

/// Nearest-neighbour queries against a fixed point set, bucketed by row.
class RowIndex {
 public:
  RowIndex(std::span<const Pixel> points, std::array<double, 2> spacing) : spacing_(spacing) {
    for (const auto& p : points) rows_[p.r].push_back(p.c);
    for (auto& [r, cols] : rows_) std::sort(cols.begin(), cols.end());
    if (!rows_.empty()) {
      min_row_ = rows_.begin()->first;
      max_row_ = rows_.rbegin()->first;
    }
  }

  // Squared distance in mm^2 to the closest indexed point.
  double nearest_sq(const Pixel& q) const {
    double best = std::numeric_limits<double>::infinity();
    const int reach = std::max(q.r - min_row_, max_row_ - q.r);
    for (int dr = 0; dr <= reach; ++dr) {
      if (sq(dr * spacing_[0]) > best) break;
      visit_row(q, q.r - dr, best);
      if (dr != 0) visit_row(q, q.r + dr, best);
    }
    return best;
  }

 private:
  void visit_row(const Pixel& q, int row, double& best) const {
    auto it = rows_.find(row);
    if (it == rows_.end()) return;
    const auto& cols = it->second;
    const double dy2 = sq(static_cast<double>(q.r - row) * spacing_[0]);
    auto pos = std::lower_bound(cols.begin(), cols.end(), q.c);
    if (pos != cols.end()) best = std::min(best, dy2 + sq(static_cast<double>(q.c - *pos) * spacing_[1]));
    if (pos != cols.begin())
      best = std::min(best, dy2 + sq(static_cast<double>(q.c - *std::prev(pos)) * spacing_[1]));
  }

  std::map<int, std::vector<int>> rows_;
  std::array<double, 2> spacing_;
  int min_row_ = 0;
  int max_row_ = 0;
};

}  // namespace

CaseMetrics pixel_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.data.size() != gt.data.size())
    throw ParameterError("prediction and ground-truth masks differ in shape");
  CaseMetrics m;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    m.tp += p && g;
    m.fp += p && !g;
    m.fn += !p && g;
    m.tn += !p && !g;
  }
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.sensitivity = ratio(m.tp, m.tp + m.fn);
  m.dice = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
  m.iou = ratio(m.tp, m.tp + m.fp + m.fn);
  return m;
}

BinaryMask binarize(std::span<const float> probabilities, int height, int width, double threshold) {
  if (probabilities.size() != static_cast<std::size_t>(height) * width)
    throw ParameterError("probability map does not match its dimensions");
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < probabilities.size(); ++i) m.data[i] = probabilities[i] >= threshold ? 1 : 0;
  return m;
}

std::vector<Pixel> extract_contour(const BinaryMask& mask) {
  std::vector<Pixel> out;
  auto zero_or_outside = [&](int r, int c) {
    return r < 0 || c < 0 || r >= mask.height || c >= mask.width || mask.at(r, c) == 0;
  };
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c) != 0 && (zero_or_outside(r - 1, c) || zero_or_outside(r + 1, c) ||
                                 zero_or_outside(r, c - 1) || zero_or_outside(r, c + 1)))
        out.push_back({r, c});
  return out;
}

std::optional<double> hausdorff(std::span<const Pixel> a, std::span<const Pixel> b,
                                std::array<double, 2> spacing_yx) {
  if (a.empty() || b.empty()) return std::nullopt;
  const RowIndex ia(a, spacing_yx), ib(b, spacing_yx);
  double worst = 0.0;
  for (const auto& p : a) worst = std::max(worst, std::sqrt(ib.nearest_sq(p)));
  for (const auto& p : b) worst = std::max(worst, std::sqrt(ia.nearest_sq(p)));
  return worst;
}

std::optional<double> assd(std::span<const Pixel> a, std::span<const Pixel> b,
                           std::array<double, 2> spacing_yx) {
  if (a.empty() || b.empty()) return std::nullopt;
  const RowIndex ia(a, spacing_yx), ib(b, spacing_yx);
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& p : a) sum_a += std::sqrt(ib.nearest_sq(p));
  for (const auto& p : b) sum_b += std::sqrt(ia.nearest_sq(p));
  return (sum_a + sum_b) / static_cast<double>(a.size() + b.size());
}

CaseMetrics case_metrics(const BinaryMask& pred, const BinaryMask& gt, std::array<double, 2> spacing_yx,
                         std::string lesion_id) {
  CaseMetrics m = pixel_metrics(pred, gt);
  m.lesion_id = std::move(lesion_id);
  const auto cp = extract_contour(pred), cg = extract_contour(gt);
  m.hd_mm = hausdorff(cp, cg, spacing_yx);
  m.assd_mm = assd(cp, cg, spacing_yx);
  return m;
}

namespace {

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  std::optional<double> value() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

}  // namespace

std::vector<CaseMetrics> aggregate_by_lesion(std::span<const CaseMetrics> slices) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const CaseMetrics*>> groups;
  for (const auto& s : slices) {
    if (!groups.count(s.lesion_id)) order.push_back(s.lesion_id);
    groups[s.lesion_id].push_back(&s);
  }
  std::vector<CaseMetrics> out;
  for (const auto& id : order) {
    CaseMetrics lesion;
    lesion.lesion_id = id;
    Mean pre, sen, dice, iou, hd, as;
    for (const auto* s : groups[id]) {
      lesion.tp += s->tp;
      lesion.fp += s->fp;
      lesion.fn += s->fn;
      lesion.tn += s->tn;
      pre.add(s->precision);
      sen.add(s->sensitivity);
      dice.add(s->dice);
      iou.add(s->iou);
      hd.add(s->hd_mm);
      as.add(s->assd_mm);
    }
    lesion.precision = pre.value();
    lesion.sensitivity = sen.value();
    lesion.dice = dice.value();
    lesion.iou = iou.value();
    lesion.hd_mm = hd.value();
    lesion.assd_mm = as.value();
    out.push_back(std::move(lesion));
  }
  return out;
}

MetricsReport aggregate_report(std::vector<CaseMetrics> cases) {
  if (cases.empty()) throw ParameterError("cannot aggregate an empty list of cases");
  MetricsReport r;
  Mean pre, sen, dice, iou, hd, as;
  for (const auto& c : cases) {
    pre.add(c.precision);
    sen.add(c.sensitivity);
    dice.add(c.dice);
    iou.add(c.iou);
    hd.add(c.hd_mm);
    as.add(c.assd_mm);
    r.tp += c.tp;
    r.fp += c.fp;
    r.fn += c.fn;
    r.tn += c.tn;
    r.hd_excluded += !c.hd_mm.has_value();
    r.assd_excluded += !c.assd_mm.has_value();
  }
  r.precision = pre.value();
  r.sensitivity = sen.value();
  r.dice = dice.value();
  r.iou = iou.value();
  r.hd_mm = hd.value();
  r.assd_mm = as.value();
  r.cases = std::move(cases);
  return r;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

const char* const kRatioKeys[] = {"precision", "sensitivity", "dice", "iou", "hd_mm", "assd_mm"};
const char* const kCountKeys[] = {"tp", "fp", "fn", "tn"};

json case_json(const CaseMetrics& c) {
  return json{{"lesion_id", c.lesion_id}, {"tp", c.tp},           {"fp", c.fp},
              {"fn", c.fn},               {"tn", c.tn},           {"precision", opt(c.precision)},
              {"sensitivity", opt(c.sensitivity)}, {"dice", opt(c.dice)}, {"iou", opt(c.iou)},
              {"hd_mm", opt(c.hd_mm)},    {"assd_mm", opt(c.assd_mm)}};
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << std::setprecision(17) << *v;
  return s.str();
}

}  // namespace

void write_metrics_json(const MetricsReport& r, const fs::path& path) {
  json cases = json::array();
  for (const auto& c : r.cases) cases.push_back(case_json(c));
  const json doc{{"summary",
                  {{"n_cases", r.cases.size()},
                   {"precision", opt(r.precision)},
                   {"sensitivity", opt(r.sensitivity)},
                   {"dice", opt(r.dice)},
                   {"iou", opt(r.iou)},
                   {"hd_mm", opt(r.hd_mm)},
                   {"assd_mm", opt(r.assd_mm)},
                   {"tp", r.tp},
                   {"fp", r.fp},
                   {"fn", r.fn},
                   {"tn", r.tn},
                   {"hd_excluded", r.hd_excluded},
                   {"assd_excluded", r.assd_excluded}}},
                 {"cases", cases}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

void write_metrics_csv(const MetricsReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "case,lesion_id,tp,fp,fn,tn,precision,sensitivity,dice,iou,hd_mm,assd_mm\n";
  for (std::size_t i = 0; i < r.cases.size(); ++i) {
    const auto& c = r.cases[i];
    out << i << ',' << c.lesion_id << ',' << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.tn << ','
        << csv_cell(c.precision) << ',' << csv_cell(c.sensitivity) << ',' << csv_cell(c.dice) << ','
        << csv_cell(c.iou) << ',' << csv_cell(c.hd_mm) << ',' << csv_cell(c.assd_mm) << '\n';
  }
  out << "summary,," << r.tp << ',' << r.fp << ',' << r.fn << ',' << r.tn << ',' << csv_cell(r.precision)
      << ',' << csv_cell(r.sensitivity) << ',' << csv_cell(r.dice) << ',' << csv_cell(r.iou) << ','
      << csv_cell(r.hd_mm) << ',' << csv_cell(r.assd_mm) << '\n';
}

MetricsReport read_metrics_json(const fs::path& path) {
  if (const auto why = validate_metrics_json(path); !why.empty())
    throw FormatError(path.string() + ": " + why);
  std::ifstream in(path);
  const json doc = json::parse(in);
  MetricsReport r;
  for (const auto& j : doc["cases"]) {
    CaseMetrics c;
    c.lesion_id = j.at("lesion_id").get<std::string>();
    c.tp = j.at("tp").get<std::int64_t>();
    c.fp = j.at("fp").get<std::int64_t>();
    c.fn = j.at("fn").get<std::int64_t>();
    c.tn = j.at("tn").get<std::int64_t>();
    c.precision = opt_from(j, "precision");
    c.sensitivity = opt_from(j, "sensitivity");
    c.dice = opt_from(j, "dice");
    c.iou = opt_from(j, "iou");
    c.hd_mm = opt_from(j, "hd_mm");
    c.assd_mm = opt_from(j, "assd_mm");
    r.cases.push_back(std::move(c));
  }
  const auto& s = doc["summary"];
  r.precision = opt_from(s, "precision");
  r.sensitivity = opt_from(s, "sensitivity");
  r.dice = opt_from(s, "dice");
  r.iou = opt_from(s, "iou");
  r.hd_mm = opt_from(s, "hd_mm");
  r.assd_mm = opt_from(s, "assd_mm");
  r.tp = s.at("tp").get<std::int64_t>();
  r.fp = s.at("fp").get<std::int64_t>();
  r.fn = s.at("fn").get<std::int64_t>();
  r.tn = s.at("tn").get<std::int64_t>();
  r.hd_excluded = s.at("hd_excluded").get<std::size_t>();
  r.assd_excluded = s.at("assd_excluded").get<std::size_t>();
  return r;
}

std::string validate_metrics_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return "cannot open file";
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& ex) {
    return std::string("not valid JSON: ") + ex.what();
  }
  if (!doc.is_object()) return "top level is not an object";
  if (!doc.contains("summary") || !doc["summary"].is_object()) return "missing object 'summary'";
  if (!doc.contains("cases") || !doc["cases"].is_array()) return "missing array 'cases'";

  auto check_record = [](const json& j, const std::string& where) -> std::string {
    for (const char* k : kRatioKeys) {
      if (!j.contains(k)) return where + " lacks '" + k + "'";
      if (!j[k].is_null() && !j[k].is_number()) return where + "." + k + " is neither number nor null";
      if (j[k].is_number() && !std::isfinite(j[k].get<double>())) return where + "." + k + " is not finite";
    }
    for (const char* k : kCountKeys)
      if (!j.contains(k) || !j[k].is_number_integer() || j[k].get<std::int64_t>() < 0)
        return where + "." + k + " must be a non-negative integer";
    return {};
  };

  const auto& s = doc["summary"];
  if (auto why = check_record(s, "summary"); !why.empty()) return why;
  for (const char* k : {"n_cases", "hd_excluded", "assd_excluded"})
    if (!s.contains(k) || !s[k].is_number_unsigned()) return std::string("summary.") + k + " must be a count";
  if (s["n_cases"].get<std::size_t>() != doc["cases"].size()) return "summary.n_cases disagrees with cases";
  for (std::size_t i = 0; i < doc["cases"].size(); ++i) {
    const auto& c = doc["cases"][i];
    const std::string where = "cases[" + std::to_string(i) + "]";
    if (!c.is_object()) return where + " is not an object";
    if (!c.contains("lesion_id") || !c["lesion_id"].is_string()) return where + ".lesion_id must be a string";
    if (auto why = check_record(c, where); !why.empty()) return why;
  }
  return {};
}

}  // namespace nodseg
