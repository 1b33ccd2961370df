#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <torch/script.h>
#include <torch/torch.h>

#include "apdraw/config.hpp"

namespace apdraw {

// Adapters around the fixed third-party networks the model consumes: an edge
// operator, a perceptual distance, multi-layer feature activations and an FID
// embedding. Real adapters load TorchScript graphs; the fallbacks are small,
// seeded and deterministic so nothing in the test profile needs downloads.
//
// All adapters accept N x C x H x W tensors in [0, 1] of any floating dtype and
// are immutable after construction.

class EdgeExtractor {
 public:
  virtual ~EdgeExtractor() = default;
  /// N x C x H x W -> N x 1 x H x W edge strengths in [0, 1].
  virtual torch::Tensor extract(const torch::Tensor& images) const = 0;
};

class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  /// Batch-mean distance, a scalar >= 0; differentiable in both inputs.
  virtual torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const = 0;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  /// Exactly five activations with non-increasing spatial size.
  virtual std::vector<torch::Tensor> activations(const torch::Tensor& images) const = 0;
};

class FidEmbedder {
 public:
  virtual ~FidEmbedder() = default;
  /// N x E embedding; N >= 2.
  virtual torch::Tensor embed(const torch::Tensor& images) const = 0;
};

/// Forward-difference gradient magnitude on luminance, scaled by the largest
/// attainable magnitude so outputs stay in [0, 1]. Smoothed near zero so it is
/// differentiable everywhere and exactly zero on flat images.
class GradientEdgeExtractor final : public EdgeExtractor {
 public:
  torch::Tensor extract(const torch::Tensor& images) const override;
};

/// Five-level random-weight conv pyramid (channels 8, 16, 32, 64, 128; the first
/// level at input resolution, each further level halving it). Weights come from
/// a portable seeded generator, so two processes produce identical features.
class RandomConvPyramid final : public FeatureExtractor {
 public:
  static constexpr std::array<int64_t, 5> kChannels{8, 16, 32, 64, 128};

  explicit RandomConvPyramid(uint64_t seed);
  std::vector<torch::Tensor> activations(const torch::Tensor& images) const override;

 private:
  std::vector<torch::Tensor> weights_;  // float64 master copies
  std::vector<torch::Tensor> biases_;
};

/// Symmetric mean squared feature distance over a seeded pyramid.
class PyramidPerceptualDistance final : public PerceptualDistance {
 public:
  explicit PyramidPerceptualDistance(uint64_t seed);
  torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const override;

 private:
  RandomConvPyramid pyramid_;
};

/// Global average pool of the pyramid's 64-channel level: E = 64.
class PooledPyramidEmbedder final : public FidEmbedder {
 public:
  static constexpr int64_t kDim = 64;
  explicit PooledPyramidEmbedder(std::shared_ptr<const RandomConvPyramid> pyramid);
  torch::Tensor embed(const torch::Tensor& images) const override;

 private:
  std::shared_ptr<const RandomConvPyramid> pyramid_;
};

/// TorchScript-backed adapters. Each loads a serialized graph whose forward
/// matches the corresponding interface.
class ScriptedEdgeExtractor final : public EdgeExtractor {
 public:
  explicit ScriptedEdgeExtractor(const std::string& path);
  torch::Tensor extract(const torch::Tensor& images) const override;

 private:
  mutable torch::jit::Module module_;
};

class ScriptedPerceptualDistance final : public PerceptualDistance {
 public:
  explicit ScriptedPerceptualDistance(const std::string& path);
  torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const override;

 private:
  mutable torch::jit::Module module_;
};

class ScriptedFeatureExtractor final : public FeatureExtractor {
 public:
  explicit ScriptedFeatureExtractor(const std::string& path);
  std::vector<torch::Tensor> activations(const torch::Tensor& images) const override;

 private:
  mutable torch::jit::Module module_;
};

class ScriptedFidEmbedder final : public FidEmbedder {
 public:
  explicit ScriptedFidEmbedder(const std::string& path);
  torch::Tensor embed(const torch::Tensor& images) const override;

 private:
  mutable torch::jit::Module module_;
};

struct BackboneConfig {
  bool fallback = true;
  std::string edge;  // TorchScript paths; empty means "use the fallback"
  std::string perceptual;
  std::string features;
  std::string fid;
  uint64_t seed = 20210907;

  /// Reads `backbones.edge|perceptual|features|fid|fallback|seed`.
  static BackboneConfig from_config(const Config& cfg);
};

struct Backbones {
  std::shared_ptr<const EdgeExtractor> edges;
  std::shared_ptr<const PerceptualDistance> perceptual;
  std::shared_ptr<const FeatureExtractor> features;
  std::shared_ptr<const FidEmbedder> fid;

  static Backbones fallback(uint64_t seed = BackboneConfig{}.seed);
};

/// Throws ConfigError when an adapter has no weights and fallbacks are disabled.
Backbones make_backbones(const BackboneConfig& cfg);

/// Replicates single-channel images to `channels` channels.
torch::Tensor replicate_channels(const torch::Tensor& images, int64_t channels);

}  // namespace apdraw
