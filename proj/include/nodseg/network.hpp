#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "nodseg/std_activation.hpp"

namespace nodseg {

/// A classifier stage paired with the segmentation encoder block of the same resolution.
struct CombinationSite {
  int cls_stage = 2;  // C1..C5
  int seg_block = 3;  // S1..S5
  bool operator==(const CombinationSite&) const = default;
};

struct ModelConfig {
  std::array<int, 5> seg_widths{64, 128, 256, 512, 512};
  int cls_base_width = 64;  // bottleneck width of C2; stage outputs are 4x, 8x, 16x, 32x this
  std::array<int, 4> cls_blocks{3, 4, 6, 3};
  bool combination_enabled = true;
  std::vector<CombinationSite> combinations{{2, 3}, {3, 4}, {4, 5}};
  std::vector<int> aspp_rates{1, 5, 10, 15};
  StdParams std;

  /// Throws ConfigError on inconsistent values (including resolution mismatches).
  void validate() const;
};

/// 3x3 per-channel convolution followed by a 1x1 cross-channel convolution.
class DepthwiseSeparableConvImpl : public torch::nn::Module {
 public:
  DepthwiseSeparableConvImpl(int in_channels, int out_channels, int stride = 1);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d depthwise{nullptr};
  torch::nn::Conv2d pointwise{nullptr};
  int in_channels;
};
TORCH_MODULE(DepthwiseSeparableConv);

/// Parallel 3x3 atrous convolutions (padding = rate) concatenated and fused by a 1x1 convolution.
class AsppImpl : public torch::nn::Module {
 public:
  AsppImpl(int in_channels, int out_channels, std::vector<int> rates);
  torch::Tensor forward(const torch::Tensor& x);

  std::vector<torch::nn::Conv2d> branches;
  torch::nn::Conv2d fuse{nullptr};
  std::vector<int> rates;
};
TORCH_MODULE(Aspp);

/// Residual unit of two BN-ReLU-conv stages; the first convolution is depthwise-separable.
class ResidualUnitImpl : public torch::nn::Module {
 public:
  ResidualUnitImpl(int in_channels, int out_channels, int stride);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, shortcut_bn{nullptr};
  DepthwiseSeparableConv conv1{nullptr};
  torch::nn::Conv2d conv2{nullptr}, shortcut{nullptr};
};
TORCH_MODULE(ResidualUnit);

/// Encoder block S1..S5: residual unit, optionally followed by ASPP.
class EncoderBlockImpl : public torch::nn::Module {
 public:
  EncoderBlockImpl(int in_channels, int out_channels, int stride, const std::vector<int>& aspp_rates);
  torch::Tensor forward(const torch::Tensor& x);

  ResidualUnit unit{nullptr};
  Aspp aspp{nullptr};
};
TORCH_MODULE(EncoderBlock);

/// Decoder block S6..S9: 2x upsample, concatenate the skip, residual unit, optional ASPP and head.
class DecoderBlockImpl : public torch::nn::Module {
 public:
  DecoderBlockImpl(int in_channels, int skip_channels, int out_channels, const std::vector<int>& aspp_rates,
                   bool with_head);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip);

  ResidualUnit unit{nullptr};
  Aspp aspp{nullptr};
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(DecoderBlock);

/// Resolution-matched fusion of a classifier feature into a segmentation feature.
///
/// f_cls -> 1x1 conv -> concat f_seg -> 1x1 conv to seg channels -> 3x3
/// depthwise-separable conv, added back onto f_seg. The final pointwise
/// convolution starts at zero so a fresh block passes f_seg through unchanged.
class FeatureCombineImpl : public torch::nn::Module {
 public:
  FeatureCombineImpl(int cls_channels, int seg_channels);
  torch::Tensor forward(const torch::Tensor& f_cls, const torch::Tensor& f_seg);

  torch::nn::Conv2d transform{nullptr};
  torch::nn::Conv2d reduce{nullptr};
  DepthwiseSeparableConv refine{nullptr};
  int cls_channels, seg_channels;
};
TORCH_MODULE(FeatureCombine);

class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in_channels, int mid_channels, int stride);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, down{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr}, down_bn{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Output of the classifier branch: features of C1..C5 and the nodule probability.
struct ClassifierOutputs {
  std::array<torch::Tensor, 5> stages;  // C1 (stride 2) .. C5 (stride 32)
  torch::Tensor c;                      // (N) in [0,1]
};

struct ForwardOutputs {
  torch::Tensor u;  // (N,1,H,W) logits
  torch::Tensor c;  // (N) classifier probability
  torch::Tensor x;  // (N,1,H,W) relaxed mask
};

/// The dual-branch multitask network. Every parameter lives under exactly one
/// top-level child whose name is its group: S1..S9, C1..C5, FC, FCB1.., STD.
class MultitaskNetImpl : public torch::nn::Module {
 public:
  explicit MultitaskNetImpl(const ModelConfig& config);

  ClassifierOutputs classify(const torch::Tensor& image);
  ForwardOutputs forward(const torch::Tensor& image, bool std_enabled);

  /// Group names in construction order.
  const std::vector<std::string>& group_names() const { return groups_; }
  const ModelConfig& config() const { return config_; }
  /// Channel count of each classifier stage output.
  std::array<int, 5> cls_channels() const;

  std::array<EncoderBlock, 5> encoder{nullptr, nullptr, nullptr, nullptr, nullptr};
  std::array<DecoderBlock, 4> decoder{nullptr, nullptr, nullptr, nullptr};
  torch::nn::Sequential stem{nullptr};                          // C1
  std::array<torch::nn::Sequential, 4> stages{nullptr, nullptr, nullptr, nullptr};  // C2..C5
  torch::nn::Linear fc{nullptr};
  std::vector<FeatureCombine> combiners;  // parallel to config().combinations when enabled
  StdLayer std_layer{nullptr};

 private:
  ModelConfig config_;
  std::vector<std::string> groups_;
};
TORCH_MODULE(MultitaskNet);

enum class Mode { Train, Eval };

/// Sets train/eval mode and runs the network.
ForwardOutputs model_forward(MultitaskNet& model, const torch::Tensor& image, Mode mode, bool std_enabled);

/// Group of a parameter or buffer name (its first path component).
std::string group_of(const std::string& tensor_name);

/// Number of trainable scalars in a module.
std::int64_t parameter_count(const torch::nn::Module& module);

}  // namespace nodseg
