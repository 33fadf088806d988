#include "nodseg/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nodseg/checkpoint.hpp"
#include "nodseg/config.hpp"
#include "nodseg/error.hpp"
#include "nodseg/imaging_io.hpp"
#include "nodseg/metrics.hpp"
#include "nodseg/roi_pipeline.hpp"
#include "nodseg/trainer.hpp"

namespace nodseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<SlicePatch> select_split(std::span<const SlicePatch> patches, const std::string& split, int holdout_fold) {
  std::function<bool(const SlicePatch&)> keep;
  if (split == "all") {
    keep = [](const SlicePatch&) { return true; };
  } else if (split == "train") {
    keep = [&](const SlicePatch& p) { return !p.fold || *p.fold != holdout_fold; };
  } else if (split == "val" || split == "test") {
    keep = [&](const SlicePatch& p) { return p.fold && *p.fold == holdout_fold; };
  } else if (split.rfind("fold", 0) == 0 && split.size() > 4 &&
             std::all_of(split.begin() + 4, split.end(), ::isdigit)) {
    const int f = std::stoi(split.substr(4));
    keep = [f](const SlicePatch& p) { return p.fold && *p.fold == f; };
  } else {
    throw ConfigError("--split: expected train, val, test, all or foldN, got '" + split + "'");
  }
  std::vector<SlicePatch> out;
  std::copy_if(patches.begin(), patches.end(), std::back_inserter(out), keep);
  if (out.empty()) throw ConfigError("--split: '" + split + "' selects no patches");
  return out;
}

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string split;
  std::string out;
  std::string predictions;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> reports;
};

void write_resolved(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "resolved_config.json");
  if (!out) throw IoError("cannot write resolved config in " + dir.string());
  out << to_json(cfg).dump(2) << '\n';
}

RunConfig load(const Options& o, std::optional<Phase> phase = {}) {
  auto cfg = load_run_config(o.config, phase);
  if (o.seed) {
    cfg.data.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  return cfg;
}

fs::path out_dir(const Options& o, const std::string& fallback) { return o.out.empty() ? fs::path(fallback) : fs::path(o.out); }

std::vector<SlicePatch> load_patches(const RunConfig& cfg) {
  if (cfg.data.patch_dir.empty()) throw ConfigError("data.patch_dir: required for this command");
  return load_patch_dataset(cfg.data.patch_dir).patches;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions e;
  e.threshold = cfg.eval.threshold;
  e.aggregation = cfg.eval.aggregation;
  e.std_enabled = cfg.train.std_enabled;
  e.batch_size = cfg.train.batch_size;
  return e;
}

MultitaskNet model_from_checkpoint(const RunConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint: required for this command");
  auto model = make_model(cfg.model, cfg.train.seed);
  load_checkpoint(model, checkpoint);
  model->eval();
  return model;
}

int cmd_preprocess(const Options& o) {
  const auto cfg = load(o);
  if (cfg.data.volumes_dir.empty()) throw ConfigError("data.volumes_dir: required for preprocess");
  if (cfg.data.annotations_csv.empty()) throw ConfigError("data.annotations_csv: required for preprocess");
  const fs::path dest = o.out.empty() ? fs::path(cfg.data.patch_dir) : fs::path(o.out);
  if (dest.empty()) throw ConfigError("data.patch_dir: required for preprocess");

  const auto table = read_annotations(cfg.data.annotations_csv);
  std::vector<fs::path> headers;
  for (const auto& e : fs::directory_iterator(cfg.data.volumes_dir))
    if (e.path().extension() == ".mhd") headers.push_back(e.path());
  std::sort(headers.begin(), headers.end());

  std::vector<ROIStack> stacks;
  std::size_t placed = 0, skipped = 0;
  const IntensityWindow window{cfg.data.i_min, cfg.data.i_max};
  for (const auto& h : headers) {
    const auto volume = read_metaimage(h);
    int n = 0;
    for (const auto& ann : table.rows) {
      if (ann.series_id != volume.series_id) continue;
      const std::string lesion = volume.series_id + "_n" + std::to_string(n++);
      try {
        auto stack = extract_roi(volume, ann, cfg.data.half_depth_mm, lesion);
        prepare_stack(stack, ann, window);
        stacks.push_back(std::move(stack));
        ++placed;
      } catch (const PlacementError& e) {
        std::cerr << "warning: " << e.what() << '\n';
        ++skipped;
      }
    }
  }
  const auto patches = build_slice_dataset(stacks, cfg.data.keep_ratio, cfg.data.k_folds, cfg.data.seed);
  write_patch_dataset(patches, dest);
  write_resolved(cfg, dest);
  std::cerr << "preprocess: " << headers.size() << " volumes, " << placed << " lesions (" << skipped << " skipped, "
            << table.rejected << " annotation rows rejected), " << patches.size() << " slices -> " << dest.string()
            << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, Phase phase) {
  const auto cfg = load(o, phase);
  const auto patches = select_split(load_patches(cfg), o.split.empty() ? "train" : o.split, cfg.holdout_fold());
  const fs::path dest = out_dir(o, std::string("runs/") + phase_name(phase));
  write_resolved(cfg, dest);
  auto model = make_model(cfg.model, cfg.train.seed);
  std::optional<fs::path> resume;
  if (!o.checkpoint.empty()) resume = o.checkpoint;
  const auto result = train(model, patches, cfg.train, cfg.freeze, resume, dest);
  const auto& last = result.log.back();
  std::cerr << phase_name(phase) << ": " << result.log.size() << " epochs, " << result.steps
            << " steps, final loss " << last.loss_total << ", train dice " << last.train_dice << " -> "
            << dest.string() << '\n';
  return kExitOk;
}

int cmd_crossval(const Options& o) {
  const auto cfg = load(o);
  const auto patches = load_patches(cfg);
  const fs::path dest = out_dir(o, "runs/crossval");
  write_resolved(cfg, dest);
  std::optional<fs::path> resume;
  if (!o.checkpoint.empty()) resume = o.checkpoint;
  const auto r = crossvalidate(patches, cfg.model, cfg.train, cfg.freeze, eval_options(cfg), resume, dest);
  std::cerr << "crossval: " << r.folds.size() << " folds, mean dice "
            << (r.dice.mean ? std::to_string(*r.dice.mean) : "n/a") << " -> " << dest.string() << '\n';
  return kExitOk;
}

std::vector<std::vector<float>> read_predictions(const fs::path& dir, std::span<const SlicePatch> patches) {
  std::vector<std::vector<float>> out;
  for (const auto& p : patches) {
    const fs::path prob = dir / (patch_stem(p) + ".prob");
    const fs::path mask = dir / (patch_stem(p) + ".msk");
    if (fs::exists(prob)) {
      out.push_back(read_float_raw(prob, p.pixel_count()));
    } else if (fs::exists(mask)) {
      const auto m = read_mask_raw(mask, p.pixel_count());
      out.emplace_back(m.begin(), m.end());
    } else {
      throw IntegrityError("no prediction for " + patch_stem(p) + " in " + dir.string());
    }
  }
  return out;
}

int cmd_evaluate(const Options& o) {
  if (o.predictions.empty() && o.checkpoint.empty())
    throw ConfigError("--checkpoint: required unless --predictions is given");
  const auto cfg = load(o);
  const auto patches = select_split(load_patches(cfg), o.split.empty() ? "test" : o.split, cfg.holdout_fold());
  const fs::path dest = out_dir(o, "runs/evaluate");
  write_resolved(cfg, dest);
  MetricsReport report;
  if (!o.predictions.empty()) {
    report = score_predictions(patches, read_predictions(o.predictions, patches), eval_options(cfg));
  } else {
    auto model = model_from_checkpoint(cfg, o.checkpoint);
    report = evaluate_model(model, patches, eval_options(cfg));
  }
  write_metrics_json(report, dest / "metrics.json");
  write_metrics_csv(report, dest / "metrics.csv");
  std::cerr << "evaluate: " << report.cases.size() << " cases, dice "
            << (report.dice ? std::to_string(*report.dice) : "n/a") << " -> " << dest.string() << '\n';
  return kExitOk;
}

int cmd_predict(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint: required for predict");
  const auto cfg = load(o);
  const auto patches = select_split(load_patches(cfg), o.split.empty() ? "test" : o.split, cfg.holdout_fold());
  const fs::path dest = out_dir(o, "runs/predict");
  write_resolved(cfg, dest);
  auto model = model_from_checkpoint(cfg, o.checkpoint);
  const auto probs = predict_probabilities(model, patches, cfg.train.std_enabled, cfg.train.batch_size);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    write_float_raw(dest / (patch_stem(p) + ".prob"), probs[i]);
    write_mask_raw(dest / (patch_stem(p) + ".msk"), binarize(probs[i], p.height, p.width, cfg.eval.threshold).data);
  }
  std::cerr << "predict: " << patches.size() << " slices -> " << dest.string() << '\n';
  return kExitOk;
}

std::string run_label(const fs::path& p) {
  if (p.filename() == "metrics.json" && p.has_parent_path() && !p.parent_path().filename().empty())
    return p.parent_path().filename().string();
  return p.stem().string();
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << *v;
  return s.str();
}

int cmd_report(const Options& o) {
  if (o.reports.empty()) throw ConfigError("report: expected at least one metrics.json");
  std::ostringstream md, csv;
  md << "| Run | Pre | Sen | Dice | IoU | HD(mm) | ASSD(mm) |\n|---|---|---|---|---|---|---|\n";
  csv << "run,pre,sen,dice,iou,hd_mm,assd_mm\n";
  for (const auto& path : o.reports) {
    const auto r = read_metrics_json(path);
    const std::string label = run_label(path);
    md << "| " << label << " | " << cell(r.precision) << " | " << cell(r.sensitivity) << " | " << cell(r.dice)
       << " | " << cell(r.iou) << " | " << cell(r.hd_mm) << " | " << cell(r.assd_mm) << " |\n";
    csv << label << ',' << cell(r.precision) << ',' << cell(r.sensitivity) << ',' << cell(r.dice) << ','
        << cell(r.iou) << ',' << cell(r.hd_mm) << ',' << cell(r.assd_mm) << '\n';
  }
  std::cout << md.str();
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream(fs::path(o.out) / "report.md") << md.str();
    std::ofstream(fs::path(o.out) / "report.csv") << csv.str();
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Multitask lung-nodule segmentation toolkit", "nodseg"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool with_checkpoint, bool with_split) {
    sub->add_option("--config", o.config, "Run configuration (JSON)")->required();
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Overrides data.seed and train.seed");
    if (with_checkpoint) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint directory");
    if (with_split) sub->add_option("--split", o.split, "train, val, test, all or foldN");
  };

  auto* preprocess = app.add_subcommand("preprocess", "Build the patch dataset from volumes and annotations");
  add_common(preprocess, false, false);
  auto* pretrain = app.add_subcommand("pretrain", "Train from scratch without STD");
  add_common(pretrain, true, true);
  auto* finetune = app.add_subcommand("finetune", "Fine-tune, optionally from a checkpoint");
  add_common(finetune, true, true);
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation");
  add_common(crossval, true, false);
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint or external predictions");
  add_common(evaluate, true, true);
  evaluate->add_option("--predictions", o.predictions, "Directory of {lesion}_{slice}.prob or .msk files");
  auto* predict = app.add_subcommand("predict", "Write probability maps and masks");
  add_common(predict, true, true);
  auto* report = app.add_subcommand("report", "Merge metrics.json files into a comparison table");
  report->add_option("reports", o.reports, "metrics.json files")->required();
  report->add_option("--out", o.out, "Directory for report.md and report.csv");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (preprocess->parsed()) return cmd_preprocess(o);
    if (pretrain->parsed()) return cmd_train(o, Phase::Pretrain);
    if (finetune->parsed()) return cmd_train(o, Phase::Finetune);
    if (crossval->parsed()) return cmd_crossval(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (predict->parsed()) return cmd_predict(o);
    if (report->parsed()) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace nodseg
