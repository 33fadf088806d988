#include "nodseg/network.hpp"

#include <set>

#include "nodseg/error.hpp"

namespace nodseg {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int k, int stride = 1, int padding = 0, bool bias = true, int dilation = 1,
                int groups = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k)
                        .stride(stride)
                        .padding(padding)
                        .dilation(dilation)
                        .groups(groups)
                        .bias(bias));
}

std::string shape_str(const torch::Tensor& t) {
  std::string s = "(";
  for (int64_t i = 0; i < t.dim(); ++i) s += (i ? "," : "") + std::to_string(t.size(i));
  return s + ")";
}

}  // namespace

void ModelConfig::validate() const {
  for (int w : seg_widths)
    if (w < 1) throw ConfigError("model.seg_widths must be positive");
  if (cls_base_width < 1) throw ConfigError("model.cls_base_width must be positive");
  for (int b : cls_blocks)
    if (b < 1) throw ConfigError("model.cls_blocks must be positive");
  if (aspp_rates.empty()) throw ConfigError("model.aspp_rates must not be empty");
  for (int r : aspp_rates)
    if (r < 1) throw ConfigError("model.aspp_rates must be positive");
  std::set<int> used;
  for (const auto& site : combinations) {
    if (site.cls_stage < 1 || site.cls_stage > 5 || site.seg_block < 1 || site.seg_block > 5)
      throw ConfigError("model.combinations: sites must pair C1..C5 with S1..S5");
    // C_l runs at stride 2^l, S_b at stride 2^(b-1); features are never resampled.
    if (site.cls_stage != site.seg_block - 1)
      throw ConfigError("model.combinations: C" + std::to_string(site.cls_stage) + " and S" +
                        std::to_string(site.seg_block) + " have different resolutions");
    if (!used.insert(site.seg_block).second)
      throw ConfigError("model.combinations: S" + std::to_string(site.seg_block) + " combined twice");
  }
  try {
    std.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model.") + e.what());
  }
}

DepthwiseSeparableConvImpl::DepthwiseSeparableConvImpl(int in, int out, int stride) : in_channels(in) {
  depthwise = register_module("depthwise", conv(in, in, 3, stride, 1, false, 1, in));
  pointwise = register_module("pointwise", conv(in, out, 1));
}

torch::Tensor DepthwiseSeparableConvImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != in_channels)
    throw ConfigError("depthwise-separable conv expects " + std::to_string(in_channels) + " channels, got " +
                      shape_str(x));
  return pointwise(depthwise(x));
}

AsppImpl::AsppImpl(int in, int out, std::vector<int> r) : rates(std::move(r)) {
  for (std::size_t i = 0; i < rates.size(); ++i)
    branches.push_back(register_module("branch" + std::to_string(i), conv(in, out, 3, 1, rates[i], true, rates[i])));
  fuse = register_module("fuse", conv(out * static_cast<int>(rates.size()), out, 1));
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> outs;
  outs.reserve(branches.size());
  for (auto& b : branches) outs.push_back(b(x));
  return fuse(torch::cat(outs, 1));
}

ResidualUnitImpl::ResidualUnitImpl(int in, int out, int stride) {
  bn1 = register_module("bn1", nn::BatchNorm2d(in));
  conv1 = register_module("conv1", DepthwiseSeparableConv(in, out, stride));
  bn2 = register_module("bn2", nn::BatchNorm2d(out));
  conv2 = register_module("conv2", conv(out, out, 3, 1, 1));
  shortcut = register_module("shortcut", conv(in, out, 1, stride, 0, false));
  shortcut_bn = register_module("shortcut_bn", nn::BatchNorm2d(out));
}

torch::Tensor ResidualUnitImpl::forward(const torch::Tensor& x) {
  auto h = conv1(torch::relu(bn1(x)));
  h = conv2(torch::relu(bn2(h)));
  return h + shortcut_bn(shortcut(x));
}

EncoderBlockImpl::EncoderBlockImpl(int in, int out, int stride, const std::vector<int>& aspp_rates) {
  unit = register_module("unit", ResidualUnit(in, out, stride));
  if (!aspp_rates.empty()) aspp = register_module("aspp", Aspp(out, out, aspp_rates));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x) {
  auto h = unit(x);
  return aspp ? aspp(h) : h;
}

DecoderBlockImpl::DecoderBlockImpl(int in, int skip, int out, const std::vector<int>& aspp_rates, bool with_head) {
  unit = register_module("unit", ResidualUnit(in + skip, out, 1));
  if (!aspp_rates.empty()) aspp = register_module("aspp", Aspp(out, out, aspp_rates));
  if (with_head) head = register_module("head", conv(out, 1, 1));
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
  const auto up = torch::nn::functional::interpolate(
      x, torch::nn::functional::InterpolateFuncOptions()
             .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
             .mode(torch::kNearest));
  auto h = unit(torch::cat({up, skip}, 1));
  if (aspp) h = aspp(h);
  if (head) h = head(h);
  return h;
}

FeatureCombineImpl::FeatureCombineImpl(int cls, int seg) : cls_channels(cls), seg_channels(seg) {
  transform = register_module("transform", conv(cls, cls, 1));
  reduce = register_module("reduce", conv(cls + seg, seg, 1));
  refine = register_module("refine", DepthwiseSeparableConv(seg, seg, 1));
  torch::NoGradGuard guard;
  refine->pointwise->weight.zero_();
  refine->pointwise->bias.zero_();
}

torch::Tensor FeatureCombineImpl::forward(const torch::Tensor& f_cls, const torch::Tensor& f_seg) {
  if (f_cls.dim() != 4 || f_seg.dim() != 4 || f_cls.size(0) != f_seg.size(0) || f_cls.size(2) != f_seg.size(2) ||
      f_cls.size(3) != f_seg.size(3))
    throw ConfigError("feature combination needs matching batch and spatial sizes, got " + shape_str(f_cls) +
                      " and " + shape_str(f_seg));
  if (f_cls.size(1) != cls_channels || f_seg.size(1) != seg_channels)
    throw ConfigError("feature combination expects " + std::to_string(cls_channels) + "/" +
                      std::to_string(seg_channels) + " channels, got " + shape_str(f_cls) + " and " +
                      shape_str(f_seg));
  const auto fused = reduce(torch::cat({transform(f_cls), f_seg}, 1));
  return f_seg + refine(fused);
}

BottleneckImpl::BottleneckImpl(int in, int mid, int stride) {
  const int out = 4 * mid;
  conv1 = register_module("conv1", conv(in, mid, 1, 1, 0, false));
  bn1 = register_module("bn1", nn::BatchNorm2d(mid));
  conv2 = register_module("conv2", conv(mid, mid, 3, stride, 1, false));
  bn2 = register_module("bn2", nn::BatchNorm2d(mid));
  conv3 = register_module("conv3", conv(mid, out, 1, 1, 0, false));
  bn3 = register_module("bn3", nn::BatchNorm2d(out));
  if (stride != 1 || in != out) {
    down = register_module("down", conv(in, out, 1, stride, 0, false));
    down_bn = register_module("down_bn", nn::BatchNorm2d(out));
  }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(bn1(conv1(x)));
  h = torch::relu(bn2(conv2(h)));
  h = bn3(conv3(h));
  const auto identity = down ? down_bn(down(x)) : x;
  return torch::relu(h + identity);
}

MultitaskNetImpl::MultitaskNetImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto& w = config_.seg_widths;
  const std::vector<int> no_aspp;

  const std::array<int, 5> strides{1, 2, 2, 2, 2};
  int in = 1;
  for (int b = 0; b < 5; ++b) {
    const std::string name = "S" + std::to_string(b + 1);
    encoder[b] = register_module(name, EncoderBlock(in, w[b], strides[b], b == 4 ? config_.aspp_rates : no_aspp));
    groups_.push_back(name);
    in = w[b];
  }
  // S6..S9 mirror S4..S1.
  for (int d = 0; d < 4; ++d) {
    const int skip = w[3 - d];
    const bool last = d == 3;
    const std::string name = "S" + std::to_string(d + 6);
    decoder[d] = register_module(name, DecoderBlock(in, skip, skip, last ? config_.aspp_rates : no_aspp, last));
    groups_.push_back(name);
    in = skip;
  }

  const int base = config_.cls_base_width;
  stem = register_module("C1", nn::Sequential(conv(1, base, 7, 2, 3, false), nn::BatchNorm2d(base),
                                              nn::ReLU()));
  groups_.push_back("C1");
  int cin = base;
  for (int s = 0; s < 4; ++s) {
    nn::Sequential seq;
    const int mid = base << s;
    if (s == 0) seq->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
    for (int i = 0; i < config_.cls_blocks[s]; ++i) {
      seq->push_back(Bottleneck(cin, mid, (i == 0 && s > 0) ? 2 : 1));
      cin = 4 * mid;
    }
    const std::string name = "C" + std::to_string(s + 2);
    stages[s] = register_module(name, seq);
    groups_.push_back(name);
  }
  fc = register_module("FC", nn::Linear(cin, 1));
  groups_.push_back("FC");

  if (config_.combination_enabled) {
    const auto cls = cls_channels();
    for (std::size_t i = 0; i < config_.combinations.size(); ++i) {
      const auto& site = config_.combinations[i];
      const std::string name = "FCB" + std::to_string(i + 1);
      combiners.push_back(register_module(name, FeatureCombine(cls[site.cls_stage - 1], w[site.seg_block - 1])));
      groups_.push_back(name);
    }
  }

  std_layer = register_module("STD", StdLayer(config_.std));
  groups_.push_back("STD");
}

std::array<int, 5> MultitaskNetImpl::cls_channels() const {
  const int b = config_.cls_base_width;
  return {b, 4 * b, 8 * b, 16 * b, 32 * b};
}

ClassifierOutputs MultitaskNetImpl::classify(const torch::Tensor& image) {
  ClassifierOutputs out;
  out.stages[0] = stem->forward(image);
  for (int s = 0; s < 4; ++s) out.stages[s + 1] = stages[s]->forward(out.stages[s]);
  const auto pooled = torch::adaptive_avg_pool2d(out.stages[4], {1, 1}).flatten(1);
  out.c = torch::sigmoid(fc(pooled)).flatten();
  return out;
}

ForwardOutputs MultitaskNetImpl::forward(const torch::Tensor& image, bool std_enabled) {
  if (image.dim() != 4 || image.size(1) != 1)
    throw ConfigError("model input must be (N,1,H,W), got " + shape_str(image));
  if (image.size(2) % 32 != 0 || image.size(3) % 32 != 0)
    throw ConfigError("model input sides must be multiples of 32, got " + shape_str(image));

  const auto cls = classify(image);

  std::array<torch::Tensor, 5> enc;
  auto h = image;
  for (int b = 0; b < 5; ++b) {
    h = encoder[b]->forward(h);
    for (std::size_t i = 0; i < combiners.size(); ++i) {
      const auto& site = config_.combinations[i];
      if (site.seg_block == b + 1) h = combiners[i]->forward(cls.stages[site.cls_stage - 1], h);
    }
    enc[b] = h;
  }
  for (int d = 0; d < 4; ++d) h = decoder[d]->forward(h, enc[3 - d]);

  ForwardOutputs out;
  out.u = h;
  out.c = cls.c;
  out.x = std_layer->forward(out.u, cls.c.detach(), std_enabled);
  return out;
}

ForwardOutputs model_forward(MultitaskNet& model, const torch::Tensor& image, Mode mode, bool std_enabled) {
  model->train(mode == Mode::Train);
  return model->forward(image, std_enabled);
}

std::string group_of(const std::string& tensor_name) { return tensor_name.substr(0, tensor_name.find('.')); }

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace nodseg
