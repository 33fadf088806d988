#include "nodseg/objectives.hpp"

#include "nodseg/error.hpp"

namespace nodseg {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ParameterError(std::string(what) + ": prediction and target shapes differ");
}

}  // namespace

torch::Tensor dice_loss(const torch::Tensor& x, const torch::Tensor& g) {
  require_same_shape(x, g, "dice_loss");
  const auto xf = x.reshape({x.size(0), -1});
  const auto gf = g.to(x.dtype()).reshape({g.size(0), -1});
  const auto inter = (xf * gf).sum(1);
  const auto score = (2.0 * inter + kDiceSmoothing) / (xf.sum(1) + gf.sum(1) + kDiceSmoothing);
  return (1.0 - score).mean();
}

torch::Tensor bce_loss(const torch::Tensor& p, const torch::Tensor& t) {
  require_same_shape(p, t, "bce_loss");
  const auto pc = p.clamp(kProbabilityClamp, 1.0 - kProbabilityClamp);
  const auto tt = t.to(p.dtype());
  return -(tt * torch::log(pc) + (1.0 - tt) * torch::log(1.0 - pc)).mean();
}

LossBreakdown total_loss(const torch::Tensor& x, const torch::Tensor& g, const torch::Tensor& c,
                         const torch::Tensor& y, const LossWeights& w) {
  if (w.w_seg < 0.0 || w.w_cls < 0.0) throw ParameterError("loss weights must be non-negative");
  LossBreakdown out;
  out.dice = dice_loss(x, g);
  out.bce_seg = bce_loss(x, g);
  out.bce_cls = bce_loss(c, y);
  out.total = out.dice + w.w_seg * out.bce_seg + w.w_cls * out.bce_cls;
  return out;
}

}  // namespace nodseg
