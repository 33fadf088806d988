#pragma once

#include <vector>

#include <torch/torch.h>

namespace nodseg {

/// Plain-value parameters of the soft-threshold-dynamics activation.
///
/// The solver minimizes, per pixel field,
///   -<u,x> + eps<x,ln x> + eps<1-x,ln(1-x)> + lambda1<x, k_sigma*(1-x)> + lambda2(1-c)<1,x>
/// by linearizing the concave smoothing term around the previous iterate.
struct StdParams {
  double eps = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  double sigma = 1.5;
  int iters = 10;
  int kernel_radius = 0;  // 0 selects ceil(3 * sigma)
  bool learn_eps = false;
  bool learn_lambda1 = false;
  bool learn_lambda2 = true;
  bool learn_sigma = true;
  // Use the previous iterate instead of u in the update numerator (ablation only).
  bool xt_numerator = false;

  int radius() const;
  /// Throws ParameterError when a value is outside its domain.
  void validate() const;
};

/// Differentiable view of the parameters as 0-dim tensors.
struct StdTensors {
  torch::Tensor eps;
  torch::Tensor lambda1;
  torch::Tensor lambda2;
  torch::Tensor sigma;
  int iters = 10;
  int radius = 5;
  bool xt_numerator = false;

  static StdTensors from(const StdParams& p, torch::Dtype dtype = torch::kDouble);
};

/// (2r+1)x(2r+1) Gaussian normalized to unit sum; differentiable in sigma.
torch::Tensor gaussian_kernel(const torch::Tensor& sigma, int radius);
torch::Tensor gaussian_kernel(double sigma, int radius, torch::Dtype dtype = torch::kDouble);

/// The separable factor g of the 2-D kernel: gaussian_kernel == outer(g, g).
torch::Tensor gaussian_kernel_1d(const torch::Tensor& sigma, int radius);

/// Convolves each (N,1,H,W) field with `kernel` using half-sample symmetric
/// extension at the borders (edge pixel repeated, then mirrored). With a
/// symmetric kernel the resulting operator is self-adjoint.
torch::Tensor smooth(const torch::Tensor& field, const torch::Tensor& kernel);
/// Same operator as smooth() with outer(kernel_1d, kernel_1d), applied as two 1-D passes.
torch::Tensor smooth_separable(const torch::Tensor& field, const torch::Tensor& kernel_1d);

/// Sig(u / eps), the minimizer of the linear-plus-entropy objective.
torch::Tensor variational_sigmoid(const torch::Tensor& u, const torch::Tensor& eps);
torch::Tensor variational_sigmoid(const torch::Tensor& u, double eps);

/// Objective value summed over every element of the batch.
/// `c` is a per-item confidence of shape (N) or a scalar. Throws DomainError
/// if any x lies outside the open interval (0,1).
torch::Tensor std_energy(const torch::Tensor& x, const torch::Tensor& u, const torch::Tensor& c,
                         const StdTensors& p);

/// Unrolled fixed-point iterations starting from Sig(u/eps):
///   x <- Sig((u - lambda1 * k_sigma*(1-2x) - lambda2 (1-c)) / eps)
/// `c` is detached, so no gradient ever reaches it. When `iterates` is given it
/// receives x^0..x^T.
torch::Tensor std_solve(const torch::Tensor& u, const torch::Tensor& c, const StdTensors& p,
                        std::vector<torch::Tensor>* iterates = nullptr);

/// Learnable STD output layer. Learnable positive quantities are stored as logs.
class StdLayerImpl : public torch::nn::Module {
 public:
  explicit StdLayerImpl(const StdParams& init = {});

  /// x = std_solve(u, c) when `enabled`, else the plain sigmoid Sig(u).
  torch::Tensor forward(const torch::Tensor& u, const torch::Tensor& c, bool enabled);

  StdTensors tensors() const;
  /// Current parameter values as plain numbers.
  StdParams current() const;

 private:
  torch::Tensor positive(const char* name, double value, bool learnable);
  torch::Tensor value_of(const torch::Tensor& stored, bool is_log) const;

  StdParams init_;
  torch::Tensor eps_, lambda1_, lambda2_, sigma_;
  bool eps_log_ = false, lambda1_log_ = false, lambda2_log_ = false, sigma_log_ = false;
};
TORCH_MODULE(StdLayer);

}  // namespace nodseg
