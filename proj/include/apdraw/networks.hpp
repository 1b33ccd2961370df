#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "apdraw/backbones.hpp"
#include "apdraw/common.hpp"

namespace apdraw {

/// Shared architecture hyper-parameters for the generators and discriminators.
struct GeneratorConfig {
  int base_channels = 64;
  int n_resblocks = 9;
  int image_size = 512;
  bool style_input = true;  // false for the style-free ablation

  static GeneratorConfig full(int image_size = 512) { return {64, 9, image_size, true}; }
  static GeneratorConfig toy(int image_size = 64) { return {8, 9, image_size, true}; }

  /// Throws ValidationError unless n_resblocks >= 1, base_channels >= 1 and
  /// image_size is a positive multiple of 4.
  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
  bool operator==(const GeneratorConfig&) const = default;
};

/// Discriminator patch maps come out at exactly input/8 per side (3x3 flat convs with
/// padding 1 after three stride-2 blocks).
inline constexpr int kRfDownsample = 8;
inline constexpr int kRfMargin = 0;

/// Called with (layer name, activation) for every convolution layer during a traced forward.
using LayerObserver = std::function<void(const std::string&, const torch::Tensor&)>;

struct ConvLayerInfo {
  std::string name;
  int64_t channels;
};

struct ResnetGeneratorOptions {
  int64_t in_channels = 3;
  int64_t out_channels = 1;
  int64_t style_channels = 3;  // 0 disables style injection
  bool merge = true;           // flat merge conv after the second down block (G only)
  int64_t base_channels = 64;
  int64_t n_resblocks = 9;
  int64_t image_size = 512;
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x, const std::string& name = {}, const LayerObserver* obs = nullptr);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Encoder / residual / decoder generator. With style_channels = 3 the style code is
/// broadcast to a 3-channel map, concatenated after the second down block and merged
/// by a flat convolution before the residual blocks (drawing generator G); with 0 it
/// is the plain encoder-decoder used for the inverse generator F.
class ResnetGeneratorImpl : public torch::nn::Module {
 public:
  explicit ResnetGeneratorImpl(ResnetGeneratorOptions opts);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style = {});
  torch::Tensor forward_traced(const torch::Tensor& x, const torch::Tensor& style, const LayerObserver& obs);

  /// Every convolution layer with its unit (output channel) count, in forward order.
  std::vector<ConvLayerInfo> conv_layers() const;
  const ResnetGeneratorOptions& options() const { return opts_; }

 private:
  torch::Tensor run(const torch::Tensor& x, const torch::Tensor& style, const LayerObserver* obs);

  ResnetGeneratorOptions opts_;
  torch::nn::Conv2d flat_{nullptr}, down1_{nullptr}, down2_{nullptr}, merge_{nullptr}, final_{nullptr};
  torch::nn::ConvTranspose2d up1_{nullptr}, up2_{nullptr};
  torch::nn::ModuleList blocks_;
};
TORCH_MODULE(ResnetGenerator);

ResnetGenerator make_drawing_generator(const GeneratorConfig& cfg);
ResnetGenerator make_photo_generator(const GeneratorConfig& cfg);

struct DiscriminatorOutput {
  torch::Tensor rf_map;     // N x 1 x H/8 x W/8 real/fake logits
  torch::Tensor cls_probs;  // N x 3 softmax probabilities; undefined without a cls branch
  torch::Tensor cls_logits;
};

/// PatchGAN with three shared stride-2 blocks. The real/fake branch adds two flat conv
/// blocks; the optional style branch adds two more stride-2 blocks, a 1x1 conv to three
/// logits and global average pooling.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl(int64_t in_channels, int64_t base_channels, bool with_cls);
  DiscriminatorOutput forward(const torch::Tensor& x);
  bool has_cls() const { return with_cls_; }
  int64_t in_channels() const { return in_channels_; }

 private:
  int64_t in_channels_;
  bool with_cls_;
  torch::nn::Sequential shared_{nullptr}, rf_{nullptr}, cls_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// The drawing critic D_D: the global two-branch discriminator plus local
/// discriminators for eyes, nose and lips (absent in the no-local ablations).
/// With `mask_channel`, the global discriminator takes the union of the region
/// masks as a second input channel instead of having locals.
struct DrawingCriticOptions {
  int64_t base_channels = 64;
  bool style_branch = true;
  bool locals = true;
  bool mask_channel = false;
};

class DrawingCriticImpl : public torch::nn::Module {
 public:
  explicit DrawingCriticImpl(DrawingCriticOptions opts);
  PatchDiscriminator global() const { return global_; }
  /// Local discriminator for region index r in kFaceRegions order.
  PatchDiscriminator local(size_t r) const;
  bool has_locals() const { return !locals_.empty(); }
  const DrawingCriticOptions& options() const { return opts_; }

 private:
  DrawingCriticOptions opts_;
  PatchDiscriminator global_{nullptr};
  std::vector<PatchDiscriminator> locals_;
};
TORCH_MODULE(DrawingCritic);

/// Convolutional trunk + linear head shared by the style classifier C and quality
/// regressor M. The trunk is either a native stride-2 conv stack or an external
/// feature adapter (its last activation, globally pooled).
struct ImageHeadOptions {
  int64_t in_channels = 1;
  int64_t width = 8;
  int64_t stages = 4;
  int64_t outputs = 3;
  std::shared_ptr<const FeatureExtractor> external;
  int64_t external_dim = 0;
};

class ImageHeadImpl : public torch::nn::Module {
 public:
  explicit ImageHeadImpl(ImageHeadOptions opts);
  torch::Tensor forward(const torch::Tensor& x);  // raw head outputs
  const ImageHeadOptions& options() const { return opts_; }

 private:
  ImageHeadOptions opts_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(ImageHead);

ImageHead make_style_classifier(int64_t width = 8, int64_t stages = 4);
ImageHead make_quality_regressor(int64_t width = 8, int64_t stages = 4);

/// Deterministic N(0, 0.02) conv init (zero biases) under the given seed.
void init_weights(torch::nn::Module& module, uint64_t seed);

// ---- operations -----------------------------------------------------------

/// p: 3 x S x S or N x 3 x S x S in [0, 1]; returns the single-channel drawing(s) in [0, 1].
torch::Tensor generate_drawing(const torch::Tensor& p, const StyleVector& s, ResnetGenerator& G);
/// Per-sample style codes: `styles` is N x 3.
torch::Tensor generate_drawing(const torch::Tensor& p, const torch::Tensor& styles, ResnetGenerator& G);
torch::Tensor reconstruct_photo(const torch::Tensor& d, ResnetGenerator& F);

DiscriminatorOutput discriminate_drawing(const torch::Tensor& d, PatchDiscriminator& D);
torch::Tensor discriminate_photo(const torch::Tensor& p, PatchDiscriminator& DP);

/// Masked drawing with white (1.0) background, the input to a local discriminator.
torch::Tensor masked_drawing(const torch::Tensor& d, const torch::Tensor& mask);

struct LocalOutput {
  torch::Tensor rf_map;  // logits for the samples whose mask is non-empty; undefined if none
  torch::Tensor valid;   // N bools
};
/// Samples with an all-zero mask are skipped for this local term.
LocalOutput discriminate_local(const torch::Tensor& d, const torch::Tensor& mask, PatchDiscriminator& D_region);

torch::Tensor classify_style(const torch::Tensor& d, ImageHead& C);
/// Scaled-sigmoid head: 0.1 + 0.9 * sigmoid(.), one score per drawing.
torch::Tensor predict_quality(const torch::Tensor& d, ImageHead& M);

/// Batch helper: adds the batch dimension to a single C x H x W image.
torch::Tensor as_image_batch(const torch::Tensor& x);

}  // namespace apdraw
