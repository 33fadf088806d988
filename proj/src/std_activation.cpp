#include "nodseg/std_activation.hpp"

#include <cmath>

#include "nodseg/error.hpp"

namespace nodseg {

namespace {

constexpr double kEntropyClamp = 1e-7;

torch::Tensor scalar(double v, torch::Dtype dtype) { return torch::tensor(v, torch::TensorOptions().dtype(dtype)); }

// Index map for half-sample symmetric extension of length n by r on each side.
torch::Tensor symmetric_index(std::int64_t n, int r) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n + 2 * r));
  const std::int64_t period = 2 * n;
  for (std::int64_t p = 0; p < n + 2 * r; ++p) {
    std::int64_t m = ((p - r) % period + period) % period;
    if (m >= n) m = period - 1 - m;
    idx[static_cast<std::size_t>(p)] = m;
  }
  return torch::tensor(idx, torch::kLong);
}

torch::Tensor per_item(const torch::Tensor& c, const torch::Tensor& like) {
  if (c.dim() == 0) return c.to(like.dtype());
  return c.to(like.dtype()).reshape({-1, 1, 1, 1});
}

}  // namespace

int StdParams::radius() const {
  if (kernel_radius > 0) return kernel_radius;
  return std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
}

void StdParams::validate() const {
  if (!(eps > 0.0)) throw ParameterError("std.eps must be positive");
  if (!(sigma > 0.0)) throw ParameterError("std.sigma must be positive");
  if (!(lambda1 >= 0.0)) throw ParameterError("std.lambda1 must be non-negative");
  if (!(lambda2 >= 0.0)) throw ParameterError("std.lambda2 must be non-negative");
  if (iters < 1) throw ParameterError("std.iters must be at least 1");
  if (kernel_radius < 0) throw ParameterError("std.kernel_radius must be non-negative");
}

StdTensors StdTensors::from(const StdParams& p, torch::Dtype dtype) {
  p.validate();
  return {scalar(p.eps, dtype),   scalar(p.lambda1, dtype), scalar(p.lambda2, dtype),
          scalar(p.sigma, dtype), p.iters,                  p.radius(),
          p.xt_numerator};
}

torch::Tensor gaussian_kernel(const torch::Tensor& sigma, int radius) {
  if (radius < 1) throw ParameterError("Gaussian kernel radius must be at least 1");
  if (!(sigma.item<double>() > 0.0)) throw ParameterError("Gaussian sigma must be positive");
  auto opts = torch::TensorOptions().dtype(sigma.dtype());
  const auto offsets = torch::arange(-radius, radius + 1, opts);
  const auto r2 = offsets.pow(2).unsqueeze(1) + offsets.pow(2).unsqueeze(0);
  const auto k = torch::exp(-r2 / (2.0 * sigma * sigma));
  return k / k.sum();
}

torch::Tensor gaussian_kernel_1d(const torch::Tensor& sigma, int radius) {
  if (radius < 1) throw ParameterError("Gaussian kernel radius must be at least 1");
  if (!(sigma.item<double>() > 0.0)) throw ParameterError("Gaussian sigma must be positive");
  const auto offsets = torch::arange(-radius, radius + 1, torch::TensorOptions().dtype(sigma.dtype()));
  const auto k = torch::exp(-offsets.pow(2) / (2.0 * sigma * sigma));
  return k / k.sum();
}

torch::Tensor gaussian_kernel(double sigma, int radius, torch::Dtype dtype) {
  return gaussian_kernel(scalar(sigma, dtype), radius);
}

torch::Tensor smooth(const torch::Tensor& field, const torch::Tensor& kernel) {
  TORCH_CHECK(field.dim() == 4 && field.size(1) == 1, "smooth expects an (N,1,H,W) field");
  const int r = static_cast<int>((kernel.size(0) - 1) / 2);
  const auto rows = symmetric_index(field.size(2), r);
  const auto cols = symmetric_index(field.size(3), r);
  const auto padded = field.index_select(2, rows).index_select(3, cols);
  return torch::conv2d(padded, kernel.to(field.dtype()).view({1, 1, kernel.size(0), kernel.size(1)}));
}

torch::Tensor smooth_separable(const torch::Tensor& field, const torch::Tensor& kernel_1d) {
  TORCH_CHECK(field.dim() == 4 && field.size(1) == 1, "smooth expects an (N,1,H,W) field");
  const auto n = kernel_1d.size(0);
  const int r = static_cast<int>((n - 1) / 2);
  const auto k = kernel_1d.to(field.dtype());
  const auto padded = field.index_select(2, symmetric_index(field.size(2), r))
                          .index_select(3, symmetric_index(field.size(3), r));
  return torch::conv2d(torch::conv2d(padded, k.view({1, 1, n, 1})), k.view({1, 1, 1, n}));
}

torch::Tensor variational_sigmoid(const torch::Tensor& u, const torch::Tensor& eps) {
  return torch::sigmoid(u / eps);
}

torch::Tensor variational_sigmoid(const torch::Tensor& u, double eps) {
  if (!(eps > 0.0)) throw ParameterError("eps must be positive");
  return torch::sigmoid(u / eps);
}

torch::Tensor std_energy(const torch::Tensor& x, const torch::Tensor& u, const torch::Tensor& c,
                         const StdTensors& p) {
  {
    torch::NoGradGuard guard;
    if ((x <= 0).any().item<bool>() || (x >= 1).any().item<bool>())
      throw DomainError("std_energy requires x strictly inside (0,1)");
  }
  const auto xc = x.clamp(kEntropyClamp, 1.0 - kEntropyClamp);
  const auto kernel = gaussian_kernel_1d(p.sigma, p.radius);
  const auto cc = per_item(c, x);
  const auto linear = -(u * x);
  const auto entropy = p.eps * (x * torch::log(xc) + (1 - x) * torch::log(1 - xc));
  const auto smoothing = p.lambda1 * x * smooth_separable(1 - x, kernel);
  const auto prior = p.lambda2 * (1 - cc) * x;
  return (linear + entropy + smoothing + prior).sum();
}

torch::Tensor std_solve(const torch::Tensor& u, const torch::Tensor& c, const StdTensors& p,
                        std::vector<torch::Tensor>* iterates) {
  const auto cc = per_item(c.detach(), u);
  const auto kernel = gaussian_kernel_1d(p.sigma, p.radius);
  const auto prior = p.lambda2 * (1 - cc);
  auto x = variational_sigmoid(u, p.eps);
  if (iterates) iterates->push_back(x);
  for (int t = 0; t < p.iters; ++t) {
    const auto& base = p.xt_numerator ? x : u;
    x = torch::sigmoid((base - p.lambda1 * smooth_separable(1 - 2 * x, kernel) - prior) / p.eps);
    if (iterates) iterates->push_back(x);
  }
  return x;
}

StdLayerImpl::StdLayerImpl(const StdParams& init) : init_(init) {
  init_.validate();
  init_.kernel_radius = init_.radius();
  eps_ = positive("eps", init_.eps, init_.learn_eps);
  eps_log_ = init_.learn_eps;
  lambda1_ = positive("lambda1", init_.lambda1, init_.learn_lambda1 && init_.lambda1 > 0.0);
  lambda1_log_ = init_.learn_lambda1 && init_.lambda1 > 0.0;
  lambda2_ = positive("lambda2", init_.lambda2, init_.learn_lambda2 && init_.lambda2 > 0.0);
  lambda2_log_ = init_.learn_lambda2 && init_.lambda2 > 0.0;
  sigma_ = positive("sigma", init_.sigma, init_.learn_sigma);
  sigma_log_ = init_.learn_sigma;
}

torch::Tensor StdLayerImpl::positive(const char* name, double value, bool learnable) {
  if (learnable)
    return register_parameter(std::string("log_") + name, torch::tensor(std::log(value), torch::kFloat));
  return register_buffer(name, torch::tensor(value, torch::kFloat));
}

torch::Tensor StdLayerImpl::value_of(const torch::Tensor& stored, bool is_log) const {
  return is_log ? torch::exp(stored) : stored;
}

StdTensors StdLayerImpl::tensors() const {
  return {value_of(eps_, eps_log_),     value_of(lambda1_, lambda1_log_), value_of(lambda2_, lambda2_log_),
          value_of(sigma_, sigma_log_), init_.iters,                      init_.kernel_radius,
          init_.xt_numerator};
}

StdParams StdLayerImpl::current() const {
  torch::NoGradGuard guard;
  StdParams p = init_;
  const auto t = tensors();
  p.eps = t.eps.item<double>();
  p.lambda1 = t.lambda1.item<double>();
  p.lambda2 = t.lambda2.item<double>();
  p.sigma = t.sigma.item<double>();
  return p;
}

torch::Tensor StdLayerImpl::forward(const torch::Tensor& u, const torch::Tensor& c, bool enabled) {
  if (!enabled) return torch::sigmoid(u);
  return std_solve(u, c, tensors());
}

}  // namespace nodseg
