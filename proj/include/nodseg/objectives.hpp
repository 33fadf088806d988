#pragma once

#include <torch/torch.h>

namespace nodseg {

/// Weights of the segmentation BCE and classification BCE terms added to the Dice loss.
struct LossWeights {
  double w_seg = 1.0;
  double w_cls = 1.0;
};

struct LossBreakdown {
  torch::Tensor total;
  torch::Tensor dice;
  torch::Tensor bce_seg;
  torch::Tensor bce_cls;
};

inline constexpr double kDiceSmoothing = 1e-6;
inline constexpr double kProbabilityClamp = 1e-7;

/// 1 - (2 sum(x g) + s) / (sum x + sum g + s) per item, averaged over the batch.
torch::Tensor dice_loss(const torch::Tensor& x, const torch::Tensor& g);

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7].
torch::Tensor bce_loss(const torch::Tensor& p, const torch::Tensor& t);

/// dice(x,g) + w_seg * bce(x,g) + w_cls * bce(c,y).
LossBreakdown total_loss(const torch::Tensor& x, const torch::Tensor& g, const torch::Tensor& c,
                         const torch::Tensor& y, const LossWeights& w = {});

}  // namespace nodseg
