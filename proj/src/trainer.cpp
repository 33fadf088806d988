#include "nodseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "nodseg/checkpoint.hpp"
#include "nodseg/config.hpp"
#include "nodseg/error.hpp"
#include "nodseg/roi_pipeline.hpp"

namespace nodseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

TrainConfig TrainConfig::defaults_for(Phase phase) {
  TrainConfig cfg;
  cfg.phase = phase;
  if (phase == Phase::Pretrain) {
    cfg.epochs = 200;
    cfg.std_enabled = false;
  } else {
    cfg.epochs = 50;
    cfg.std_enabled = true;
  }
  return cfg;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* key, const char* why) {
    if (!ok) throw ConfigError(std::string("train.") + key + ": " + why);
  };
  require(epochs >= 1, "epochs", "must be positive");
  require(batch_size >= 1, "batch_size", "must be positive");
  require(lr0 > 0.0, "lr0", "must be positive");
  require(decay_factor > 0.0 && decay_factor <= 1.0, "decay_factor", "must lie in (0,1]");
  require(decay_period_epochs >= 1, "decay_period_epochs", "must be positive");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in [0,1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in [0,1)");
  require(adam_eps > 0.0, "adam_eps", "must be positive");
  require(k_folds >= 2, "k_folds", "must be at least 2");
  require(loss_weights.w_seg >= 0.0, "loss_weights.w_seg", "must be non-negative");
  require(loss_weights.w_cls >= 0.0, "loss_weights.w_cls", "must be non-negative");
  require(max_steps >= 0, "max_steps", "must be non-negative");
}

bool FreezeSpec::contains(const std::string& group) const {
  return std::find(frozen_groups.begin(), frozen_groups.end(), group) != frozen_groups.end();
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ParameterError("epoch must be non-negative");
  if (cfg.phase == Phase::Pretrain) return cfg.lr0;
  return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_period_epochs);
}

void apply_freeze(MultitaskNet& model, const FreezeSpec& spec) {
  const auto& groups = model->group_names();
  for (const auto& g : spec.frozen_groups) {
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) {
      std::string valid;
      for (const auto& name : groups) valid += (valid.empty() ? "" : ", ") + name;
      throw ConfigError("freeze: unknown group '" + g + "' (valid: " + valid + ")");
    }
  }
  for (auto& p : model->named_parameters(true)) p.value().set_requires_grad(!spec.contains(group_of(p.key())));
}

void set_training_mode(MultitaskNet& model, const FreezeSpec& spec) {
  model->train(true);
  for (const auto& child : model->named_children())
    if (spec.contains(child.key())) child.value()->eval();
}

Batch make_batch(std::span<const SlicePatch> patches) {
  if (patches.empty()) throw ParameterError("cannot batch zero patches");
  const auto n = static_cast<std::int64_t>(patches.size());
  const int h = patches[0].height, w = patches[0].width;
  Batch b;
  b.image = torch::empty({n, 1, h, w}, torch::kFloat);
  b.mask = torch::empty({n, 1, h, w}, torch::kFloat);
  b.label = torch::empty({n}, torch::kFloat);
  auto img = b.image.accessor<float, 4>();
  auto msk = b.mask.accessor<float, 4>();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& p = patches[static_cast<std::size_t>(i)];
    if (p.height != h || p.width != w) throw ParameterError("patches in a batch must share their size");
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const auto k = static_cast<std::size_t>(r) * w + c;
        img[i][0][r][c] = p.image[k];
        msk[i][0][r][c] = static_cast<float>(p.mask[k]);
      }
    b.label[i] = static_cast<float>(p.class_label);
  }
  return b;
}

namespace {

std::string config_hash(const MultitaskNet& model, const TrainConfig& cfg) {
  RunConfig rc;
  rc.model = model->config();
  rc.train = cfg;
  const json j = to_json(rc);
  return fnv1a_hex(j.at("model").dump() + j.at("train").dump());
}

}  // namespace

TrainResult train(MultitaskNet& model, std::span<const SlicePatch> dataset, const TrainConfig& cfg,
                  const FreezeSpec& freeze, const std::optional<fs::path>& resume,
                  const std::optional<fs::path>& out_dir) {
  if (dataset.empty()) throw ConfigError("training set is empty");
  if (cfg.epochs < 0) throw ConfigError("train.epochs: must be non-negative");
  if (cfg.batch_size < 1) throw ConfigError("train.batch_size: must be positive");

  int start_epoch = 0;
  if (resume) start_epoch = load_checkpoint(model, *resume).epoch;
  apply_freeze(model, freeze);

  std::vector<torch::Tensor> trainable;
  for (const auto& p : model->parameters())
    if (p.requires_grad()) trainable.push_back(p);
  std::optional<torch::optim::AdamW> optimizer;
  if (!trainable.empty())
    optimizer.emplace(trainable, torch::optim::AdamWOptions(cfg.lr0)
                                     .betas({cfg.adam_beta1, cfg.adam_beta2})
                                     .eps(cfg.adam_eps)
                                     .weight_decay(cfg.weight_decay));

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    if (optimizer)
      for (auto& group : optimizer->param_groups())
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

    std::shuffle(order.begin(), order.end(), rng);
    set_training_mode(model, freeze);

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    std::int64_t tp = 0, fp = 0, fn = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0, batch_index = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<SlicePatch> items;
      items.reserve(end - start);
      for (std::size_t i = start; i < end; ++i)
        items.push_back(cfg.augment ? augment_flip(dataset[order[i]], rng) : dataset[order[i]]);
      const Batch batch = make_batch(items);

      const auto out = model->forward(batch.image, cfg.std_enabled);
      const auto loss = total_loss(out.x, batch.mask, out.c, batch.label, cfg.loss_weights);
      const double total = loss.total.item<double>();
      if (!std::isfinite(total))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));

      if (optimizer) {
        optimizer->zero_grad();
        loss.total.backward();
        optimizer->step();
      }
      ++result.steps;

      const double weight = static_cast<double>(items.size());
      row.loss_total += total * weight;
      row.loss_dice += loss.dice.item<double>() * weight;
      row.loss_bce_seg += loss.bce_seg.item<double>() * weight;
      row.loss_bce_cls += loss.bce_cls.item<double>() * weight;
      seen += items.size();
      {
        torch::NoGradGuard guard;
        const auto pred = out.x >= 0.5;
        const auto gt = batch.mask >= 0.5;
        tp += (pred & gt).sum().item<std::int64_t>();
        fp += (pred & ~gt).sum().item<std::int64_t>();
        fn += (~pred & gt).sum().item<std::int64_t>();
      }
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
    const double n = static_cast<double>(seen);
    row.loss_total /= n;
    row.loss_dice /= n;
    row.loss_bce_seg /= n;
    row.loss_bce_cls /= n;
    row.train_dice = (2 * tp + fp + fn) == 0 ? 1.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    result.log.push_back(row);
  }

  model->eval();
  if (out_dir) {
    save_checkpoint(model, *out_dir / "checkpoint", start_epoch + static_cast<int>(result.log.size()),
                    config_hash(model, cfg));
    write_train_log(result.log, *out_dir / "train_log.csv");
  }
  return result;
}

void write_train_log(std::span<const EpochLog> log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17) << "epoch,lr,loss_total,loss_dice,loss_bce_seg,loss_bce_cls,train_dice\n";
  for (const auto& r : log)
    out << r.epoch << ',' << r.lr << ',' << r.loss_total << ',' << r.loss_dice << ',' << r.loss_bce_seg << ','
        << r.loss_bce_cls << ',' << r.train_dice << '\n';
}

std::vector<std::vector<float>> predict_probabilities(MultitaskNet& model, std::span<const SlicePatch> patches,
                                                      bool std_enabled, int batch_size) {
  if (batch_size < 1) throw ParameterError("batch_size must be positive");
  torch::NoGradGuard guard;
  std::vector<std::vector<float>> out;
  out.reserve(patches.size());
  for (std::size_t start = 0; start < patches.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(patches.size(), start + static_cast<std::size_t>(batch_size));
    const Batch batch = make_batch(patches.subspan(start, end - start));
    const auto fwd = model_forward(model, batch.image, Mode::Eval, std_enabled);
    const auto x = fwd.x.to(torch::kFloat).contiguous();
    const auto per_item = static_cast<std::size_t>(x.size(2) * x.size(3));
    const float* data = x.data_ptr<float>();
    for (std::size_t i = 0; i < end - start; ++i) out.emplace_back(data + i * per_item, data + (i + 1) * per_item);
  }
  return out;
}

MetricsReport score_predictions(std::span<const SlicePatch> patches, std::span<const std::vector<float>> probabilities,
                                const EvalOptions& opts) {
  if (patches.empty()) throw ParameterError("evaluation split is empty");
  if (patches.size() != probabilities.size()) throw ParameterError("one probability map per patch is required");
  std::vector<CaseMetrics> slices;
  slices.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    const auto pred = binarize(probabilities[i], p.height, p.width, opts.threshold);
    const BinaryMask gt(p.height, p.width, p.mask);
    slices.push_back(case_metrics(pred, gt, p.spacing_yx, p.lesion_id));
  }
  if (opts.aggregation == Aggregation::Lesion) return aggregate_report(aggregate_by_lesion(slices));
  return aggregate_report(std::move(slices));
}

MetricsReport evaluate_model(MultitaskNet& model, std::span<const SlicePatch> patches, const EvalOptions& opts) {
  if (patches.empty()) throw ParameterError("evaluation split is empty");
  const auto probabilities = predict_probabilities(model, patches, opts.std_enabled, opts.batch_size);
  return score_predictions(patches, probabilities, opts);
}

MultitaskNet make_model(const ModelConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  return MultitaskNet(cfg);
}

namespace {

MetricSummary summarize(const std::vector<MetricsReport>& folds, std::optional<double> MetricsReport::*field) {
  std::vector<double> values;
  for (const auto& f : folds)
    if (f.*field) values.push_back(*(f.*field));
  MetricSummary s;
  if (values.empty()) return s;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.mean = mean;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    s.stdev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace

CrossvalResult crossvalidate(std::span<const SlicePatch> dataset, const ModelConfig& model_cfg, const TrainConfig& cfg,
                             const FreezeSpec& freeze, const EvalOptions& eval, const std::optional<fs::path>& resume,
                             const std::optional<fs::path>& out_dir) {
  if (dataset.empty()) throw ConfigError("crossval: dataset is empty");
  for (const auto& p : dataset) {
    if (!p.fold) throw ConfigError("crossval: patch " + patch_stem(p) + " has no fold assigned");
    if (*p.fold < 0 || *p.fold >= cfg.k_folds)
      throw ConfigError("crossval: patch " + patch_stem(p) + " has fold " + std::to_string(*p.fold) + " outside 0.." +
                        std::to_string(cfg.k_folds - 1));
  }

  CrossvalResult result;
  for (int f = 0; f < cfg.k_folds; ++f) {
    std::vector<SlicePatch> train_set, val_set;
    std::set<std::string> val_lesions;
    for (const auto& p : dataset) {
      if (*p.fold == f) {
        val_set.push_back(p);
        val_lesions.insert(p.lesion_id);
      } else {
        train_set.push_back(p);
      }
    }
    if (val_set.empty() || train_set.empty())
      throw ConfigError("crossval: fold " + std::to_string(f) + " leaves an empty training or validation split");

    auto model = make_model(model_cfg, cfg.seed);
    std::optional<fs::path> fold_dir;
    if (out_dir) fold_dir = *out_dir / ("fold_" + std::to_string(f));
    if (fold_dir) fs::create_directories(*fold_dir);
    train(model, train_set, cfg, freeze, resume, fold_dir);
    auto report = evaluate_model(model, val_set, eval);
    if (fold_dir) {
      write_metrics_json(report, *fold_dir / "metrics.json");
      write_metrics_csv(report, *fold_dir / "metrics.csv");
    }
    result.folds.push_back(std::move(report));
    result.validation_lesions.push_back(val_lesions.size());
  }
  result.precision = summarize(result.folds, &MetricsReport::precision);
  result.sensitivity = summarize(result.folds, &MetricsReport::sensitivity);
  result.dice = summarize(result.folds, &MetricsReport::dice);
  result.iou = summarize(result.folds, &MetricsReport::iou);
  result.hd_mm = summarize(result.folds, &MetricsReport::hd_mm);
  result.assd_mm = summarize(result.folds, &MetricsReport::assd_mm);
  if (out_dir) write_crossval_summary(result, *out_dir / "crossval_summary.json");
  return result;
}

void write_crossval_summary(const CrossvalResult& r, const fs::path& path) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  auto entry = [&](const MetricSummary& s) { return json{{"mean", opt(s.mean)}, {"stdev", opt(s.stdev)}}; };
  json folds = json::array();
  for (std::size_t i = 0; i < r.folds.size(); ++i)
    folds.push_back({{"fold", i},
                     {"validation_lesions", r.validation_lesions[i]},
                     {"precision", opt(r.folds[i].precision)},
                     {"sensitivity", opt(r.folds[i].sensitivity)},
                     {"dice", opt(r.folds[i].dice)},
                     {"iou", opt(r.folds[i].iou)},
                     {"hd_mm", opt(r.folds[i].hd_mm)},
                     {"assd_mm", opt(r.folds[i].assd_mm)}});
  const json doc{{"folds", folds},
                 {"summary",
                  {{"precision", entry(r.precision)},
                   {"sensitivity", entry(r.sensitivity)},
                   {"dice", entry(r.dice)},
                   {"iou", entry(r.iou)},
                   {"hd_mm", entry(r.hd_mm)},
                   {"assd_mm", entry(r.assd_mm)}}}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace nodseg
