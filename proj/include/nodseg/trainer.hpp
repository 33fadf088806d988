#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodseg/metrics.hpp"
#include "nodseg/network.hpp"
#include "nodseg/objectives.hpp"
#include "nodseg/patch.hpp"

namespace nodseg {

enum class Phase { Pretrain, Finetune };

struct TrainConfig {
  Phase phase = Phase::Finetune;
  int epochs = 50;
  int batch_size = 10;
  double lr0 = 1e-3;
  double decay_factor = 0.75;    // finetune only
  int decay_period_epochs = 5;   // finetune only
  double weight_decay = 1e-8;    // decoupled, trainable groups only
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool std_enabled = true;
  LossWeights loss_weights;
  int k_folds = 5;
  bool augment = true;
  int max_steps = 0;  // stop after this many optimizer steps; 0 = no limit

  /// Pretrain runs 200 epochs without STD or decay; finetune keeps the fields above.
  static TrainConfig defaults_for(Phase phase);
  /// Throws ConfigError naming the offending train.* key.
  void validate() const;
};

/// Names of parameter groups excluded from updates during training.
struct FreezeSpec {
  std::vector<std::string> frozen_groups;
  bool contains(const std::string& group) const;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_dice = 0.0;
  double loss_bce_seg = 0.0;
  double loss_bce_cls = 0.0;
  double train_dice = 0.0;  // pooled hard Dice over the epoch's training batches
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::int64_t steps = 0;
};

/// Learning rate for a 0-based epoch: constant for pretraining,
/// lr0 * decay_factor^floor(epoch / decay_period_epochs) for fine-tuning.
double lr_at(int epoch, const TrainConfig& cfg);

/// Marks parameters of frozen groups as non-trainable and every other
/// parameter as trainable. Throws ConfigError on unknown group names.
void apply_freeze(MultitaskNet& model, const FreezeSpec& spec);

/// Training mode for trainable groups; frozen groups stay in eval mode so
/// their batch-norm statistics do not move.
void set_training_mode(MultitaskNet& model, const FreezeSpec& spec);

/// Stacks patches into (N,1,H,W) image/mask tensors and an (N) label tensor.
struct Batch {
  torch::Tensor image;
  torch::Tensor mask;
  torch::Tensor label;
};
Batch make_batch(std::span<const SlicePatch> patches);

/// Runs the training protocol. When `resume` names a checkpoint its tensors are
/// loaded first; when `out_dir` is given the final checkpoint and train_log.csv
/// are written there. Deterministic for a fixed seed on one device.
TrainResult train(MultitaskNet& model, std::span<const SlicePatch> dataset, const TrainConfig& cfg,
                  const FreezeSpec& freeze, const std::optional<std::filesystem::path>& resume = {},
                  const std::optional<std::filesystem::path>& out_dir = {});

void write_train_log(std::span<const EpochLog> log, const std::filesystem::path& path);

struct EvalOptions {
  double threshold = 0.5;
  Aggregation aggregation = Aggregation::Lesion;
  bool std_enabled = true;
  int batch_size = 10;
};

/// Probability maps x for every patch, in eval mode.
std::vector<std::vector<float>> predict_probabilities(MultitaskNet& model, std::span<const SlicePatch> patches,
                                                      bool std_enabled, int batch_size = 10);

/// Scores pre-computed probability maps against the patches' masks.
MetricsReport score_predictions(std::span<const SlicePatch> patches,
                                std::span<const std::vector<float>> probabilities, const EvalOptions& opts);

/// Runs the model on every patch, thresholds, and aggregates the metrics.
MetricsReport evaluate_model(MultitaskNet& model, std::span<const SlicePatch> patches, const EvalOptions& opts);

struct MetricSummary {
  std::optional<double> mean;
  std::optional<double> stdev;  // sample standard deviation over folds
};

struct CrossvalResult {
  std::vector<MetricsReport> folds;
  std::vector<std::size_t> validation_lesions;  // per fold
  MetricSummary precision, sensitivity, dice, iou, hd_mm, assd_mm;
};

/// Trains on folds != f and evaluates on fold f for every f < cfg.k_folds.
/// Each fold starts from a model seeded with cfg.seed (or from `resume`).
CrossvalResult crossvalidate(std::span<const SlicePatch> dataset, const ModelConfig& model_cfg,
                             const TrainConfig& cfg, const FreezeSpec& freeze, const EvalOptions& eval,
                             const std::optional<std::filesystem::path>& resume = {},
                             const std::optional<std::filesystem::path>& out_dir = {});

void write_crossval_summary(const CrossvalResult& result, const std::filesystem::path& path);

/// Builds a freshly initialised model from a seed.
MultitaskNet make_model(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace nodseg
