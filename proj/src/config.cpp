#include "nodseg/config.hpp"

#include <fstream>
#include <set>

#include "nodseg/error.hpp"

namespace nodseg {

using json = nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Reads typed fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "<root>" : path_) + ": expected an object");
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  std::string path_of(const std::string& key) const { return join(path_, key); }

  void get(const std::string& key, int& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = child(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = child(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = child(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  template <std::size_t N>
  void get(const std::string& key, std::array<int, N>& out) {
    if (const json* v = child(key)) {
      if (!v->is_array() || v->size() != N) fail(key, "expected an array of " + std::to_string(N) + " integers");
      for (std::size_t i = 0; i < N; ++i) {
        if (!(*v)[i].is_number_integer()) fail(key, "expected integers");
        out[i] = (*v)[i].get<int>();
      }
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    if (const json* v = child(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "expected integers");
        out.push_back(e.get<int>());
      }
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError(path_of(key) + ": " + why);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_of(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Re-labels errors raised by validate() with the section they came from.
template <typename F>
void validated(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

int parse_group_index(const std::string& text, char prefix, const std::string& path) {
  if (text.size() != 2 || text[0] != prefix || text[1] < '1' || text[1] > '5')
    throw ConfigError(path + ": expected " + std::string(1, prefix) + "1.." + std::string(1, prefix) + "5, got '" +
                      text + "'");
  return text[1] - '0';
}

StdParams std_from_json(const json& j, const std::string& path) {
  StdParams p;
  ObjectReader r(j, path);
  r.get("eps0", p.eps);
  r.get("lambda1", p.lambda1);
  r.get("lambda2_0", p.lambda2);
  r.get("sigma0", p.sigma);
  r.get("iters", p.iters);
  r.get("kernel_radius", p.kernel_radius);
  r.get("learn_eps", p.learn_eps);
  r.get("learn_lambda1", p.learn_lambda1);
  r.get("learn_lambda2", p.learn_lambda2);
  r.get("learn_sigma", p.learn_sigma);
  r.get("xt_numerator", p.xt_numerator);
  r.finish();
  validated(path, [&] { p.validate(); });
  return p;
}

json std_to_json(const StdParams& p) {
  return json{{"eps0", p.eps},
              {"lambda1", p.lambda1},
              {"lambda2_0", p.lambda2},
              {"sigma0", p.sigma},
              {"iters", p.iters},
              {"kernel_radius", p.kernel_radius},
              {"learn_eps", p.learn_eps},
              {"learn_lambda1", p.learn_lambda1},
              {"learn_lambda2", p.learn_lambda2},
              {"learn_sigma", p.learn_sigma},
              {"xt_numerator", p.xt_numerator}};
}

Phase parse_phase(const std::string& s, const std::string& path) {
  if (s == "pretrain") return Phase::Pretrain;
  if (s == "finetune") return Phase::Finetune;
  throw ConfigError(path + ": expected 'pretrain' or 'finetune', got '" + s + "'");
}

}  // namespace

const char* phase_name(Phase phase) { return phase == Phase::Pretrain ? "pretrain" : "finetune"; }

ModelConfig model_config_from_json(const json& doc, const std::string& path) {
  ModelConfig m;
  ObjectReader r(doc, path);
  r.get("seg_widths", m.seg_widths);
  r.get("cls_base_width", m.cls_base_width);
  r.get("cls_blocks", m.cls_blocks);
  r.get("combination_enabled", m.combination_enabled);
  r.get("aspp_rates", m.aspp_rates);
  if (const json* c = r.child("combinations")) {
    const std::string cpath = r.path_of("combinations");
    if (!c->is_array()) throw ConfigError(cpath + ": expected an array");
    m.combinations.clear();
    for (std::size_t i = 0; i < c->size(); ++i) {
      const std::string epath = cpath + "[" + std::to_string(i) + "]";
      ObjectReader site(( *c)[i], epath);
      std::string cls, seg;
      site.get("cls_stage", cls);
      site.get("seg_block", seg);
      site.finish();
      m.combinations.push_back({parse_group_index(cls, 'C', epath + ".cls_stage"),
                                parse_group_index(seg, 'S', epath + ".seg_block")});
    }
  }
  if (const json* s = r.child("std")) m.std = std_from_json(*s, r.path_of("std"));
  r.finish();
  try {
    m.validate();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    throw ConfigError(what.rfind(path, 0) == 0 ? what : path + ": " + what);
  }
  return m;
}

json model_config_to_json(const ModelConfig& m) {
  json sites = json::array();
  for (const auto& s : m.combinations)
    sites.push_back({{"cls_stage", "C" + std::to_string(s.cls_stage)}, {"seg_block", "S" + std::to_string(s.seg_block)}});
  return json{{"seg_widths", m.seg_widths},
              {"cls_base_width", m.cls_base_width},
              {"cls_blocks", m.cls_blocks},
              {"combination_enabled", m.combination_enabled},
              {"combinations", sites},
              {"aspp_rates", m.aspp_rates},
              {"std", std_to_json(m.std)}};
}

RunConfig parse_run_config(const json& doc, std::optional<Phase> phase) {
  RunConfig cfg;
  ObjectReader root(doc, "");

  if (const json* d = root.child("data")) {
    ObjectReader r(*d, "data");
    r.get("volumes_dir", cfg.data.volumes_dir);
    r.get("annotations_csv", cfg.data.annotations_csv);
    r.get("patch_dir", cfg.data.patch_dir);
    r.get("i_min", cfg.data.i_min);
    r.get("i_max", cfg.data.i_max);
    r.get("keep_ratio", cfg.data.keep_ratio);
    r.get("half_depth_mm", cfg.data.half_depth_mm);
    r.get("k_folds", cfg.data.k_folds);
    r.get("seed", cfg.data.seed);
    r.finish();
    if (!(cfg.data.i_max > cfg.data.i_min)) throw ConfigError("data.i_max: must exceed data.i_min");
    if (!(cfg.data.keep_ratio >= 0.0)) throw ConfigError("data.keep_ratio: must be non-negative");
    if (!(cfg.data.half_depth_mm >= 0.0)) throw ConfigError("data.half_depth_mm: must be non-negative");
    if (cfg.data.k_folds < 2) throw ConfigError("data.k_folds: must be at least 2");
  }

  if (const json* m = root.child("model")) cfg.model = model_config_from_json(*m, "model");

  const json* t = root.child("train");
  std::optional<Phase> declared;
  if (t && t->is_object() && t->contains("phase") && !(*t)["phase"].is_null()) {
    if (!(*t)["phase"].is_string()) throw ConfigError("train.phase: expected a string");
    declared = parse_phase((*t)["phase"].get<std::string>(), "train.phase");
  }
  if (phase && declared && *phase != *declared)
    throw ConfigError(std::string("train.phase: config says '") + phase_name(*declared) + "' but the command runs '" +
                      phase_name(*phase) + "'");
  cfg.train = TrainConfig::defaults_for(phase ? *phase : declared.value_or(Phase::Finetune));
  if (t) {
    ObjectReader r(*t, "train");
    r.child("phase");
    r.get("epochs", cfg.train.epochs);
    r.get("batch_size", cfg.train.batch_size);
    r.get("lr0", cfg.train.lr0);
    r.get("decay_factor", cfg.train.decay_factor);
    r.get("decay_period_epochs", cfg.train.decay_period_epochs);
    r.get("weight_decay", cfg.train.weight_decay);
    r.get("adam_beta1", cfg.train.adam_beta1);
    r.get("adam_beta2", cfg.train.adam_beta2);
    r.get("adam_eps", cfg.train.adam_eps);
    r.get("seed", cfg.train.seed);
    r.get("std_enabled", cfg.train.std_enabled);
    r.get("k_folds", cfg.train.k_folds);
    r.get("augment", cfg.train.augment);
    r.get("max_steps", cfg.train.max_steps);
    if (const json* w = r.child("loss_weights")) {
      ObjectReader lw(*w, "train.loss_weights");
      lw.get("w_seg", cfg.train.loss_weights.w_seg);
      lw.get("w_cls", cfg.train.loss_weights.w_cls);
      lw.finish();
    }
    r.finish();
  }
  cfg.train.validate();

  if (const json* f = root.child("freeze")) {
    if (!f->is_array()) throw ConfigError("freeze: expected an array of group names");
    for (std::size_t i = 0; i < f->size(); ++i) {
      if (!(*f)[i].is_string()) throw ConfigError("freeze[" + std::to_string(i) + "]: expected a group name");
      cfg.freeze.frozen_groups.push_back((*f)[i].get<std::string>());
    }
  }

  if (const json* e = root.child("eval")) {
    ObjectReader r(*e, "eval");
    r.get("threshold", cfg.eval.threshold);
    std::string aggregation = "lesion";
    r.get("aggregation", aggregation);
    if (aggregation == "lesion")
      cfg.eval.aggregation = Aggregation::Lesion;
    else if (aggregation == "slice")
      cfg.eval.aggregation = Aggregation::Slice;
    else
      throw ConfigError("eval.aggregation: expected 'lesion' or 'slice'");
    r.get("holdout_fold", cfg.eval.holdout_fold);
    r.finish();
    if (!(cfg.eval.threshold > 0.0 && cfg.eval.threshold < 1.0))
      throw ConfigError("eval.threshold: must lie in (0,1)");
  }
  if (cfg.eval.holdout_fold < -1 || cfg.eval.holdout_fold >= cfg.data.k_folds)
    throw ConfigError("eval.holdout_fold: must be -1 or a fold below data.k_folds");

  root.finish();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<Phase> phase) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& ex) {
    throw ConfigError("--config: " + path.string() + " is not valid JSON: " + ex.what());
  }
  return parse_run_config(doc, phase);
}

json to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  return json{
      {"data",
       {{"volumes_dir", cfg.data.volumes_dir},
        {"annotations_csv", cfg.data.annotations_csv},
        {"patch_dir", cfg.data.patch_dir},
        {"i_min", cfg.data.i_min},
        {"i_max", cfg.data.i_max},
        {"keep_ratio", cfg.data.keep_ratio},
        {"half_depth_mm", cfg.data.half_depth_mm},
        {"k_folds", cfg.data.k_folds},
        {"seed", cfg.data.seed}}},
      {"model", model_config_to_json(cfg.model)},
      {"train",
       {{"phase", phase_name(t.phase)},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr0", t.lr0},
        {"decay_factor", t.decay_factor},
        {"decay_period_epochs", t.decay_period_epochs},
        {"weight_decay", t.weight_decay},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
        {"seed", t.seed},
        {"std_enabled", t.std_enabled},
        {"loss_weights", {{"w_seg", t.loss_weights.w_seg}, {"w_cls", t.loss_weights.w_cls}}},
        {"k_folds", t.k_folds},
        {"augment", t.augment},
        {"max_steps", t.max_steps}}},
      {"freeze", cfg.freeze.frozen_groups},
      {"eval",
       {{"threshold", cfg.eval.threshold},
        {"aggregation", cfg.eval.aggregation == Aggregation::Lesion ? "lesion" : "slice"},
        {"holdout_fold", cfg.eval.holdout_fold}}}};
}

}  // namespace nodseg
