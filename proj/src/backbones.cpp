#include "apdraw/backbones.hpp"

#include <cmath>

#include "apdraw/common.hpp"
#include "apdraw/rng.hpp"

namespace apdraw {
namespace {

constexpr double kEdgeSmoothing = 1e-4;

torch::Tensor as_batch(const torch::Tensor& x) {
  if (x.dim() == 3) return x.unsqueeze(0);
  if (x.dim() != 4) throw ShapeError("expected a C x H x W image or an N x C x H x W batch");
  return x;
}

torch::jit::Module load_script(const std::string& path, const char* what) {
  try {
    auto m = torch::jit::load(path);
    m.eval();
    return m;
  } catch (const c10::Error& e) {
    throw ConfigError(std::string("cannot load ") + what + " adapter from " + path + ": " + e.what_without_backtrace());
  }
}

}  // namespace

torch::Tensor replicate_channels(const torch::Tensor& images, int64_t channels) {
  auto x = as_batch(images);
  if (x.size(1) == channels) return x;
  if (x.size(1) != 1) throw ShapeError("cannot replicate a multi-channel image");
  return x.expand({x.size(0), channels, x.size(2), x.size(3)});
}

torch::Tensor GradientEdgeExtractor::extract(const torch::Tensor& images) const {
  const bool single = images.dim() == 3;
  auto x = as_batch(images);
  torch::Tensor gray;
  if (x.size(1) == 3) {
    gray = 0.299 * x.select(1, 0) + 0.587 * x.select(1, 1) + 0.114 * x.select(1, 2);
    gray = gray.unsqueeze(1);
  } else if (x.size(1) == 1) {
    gray = x;
  } else {
    throw ShapeError("edge extractor expects 1 or 3 channels");
  }
  namespace F = torch::nn::functional;
  // Replicate padding gives zero difference past the last row/column.
  auto padded = F::pad(gray, F::PadFuncOptions({0, 1, 0, 1}).mode(torch::kReplicate));
  const int64_t h = gray.size(2), w = gray.size(3);
  auto gx = padded.slice(2, 0, h).slice(3, 1, w + 1) - gray;
  auto gy = padded.slice(2, 1, h + 1).slice(3, 0, w) - gray;
  const double root_eps = std::sqrt(kEdgeSmoothing);
  const double scale = std::sqrt(2.0 + kEdgeSmoothing) - root_eps;
  auto mag = ((gx * gx + gy * gy + kEdgeSmoothing).sqrt() - root_eps) / scale;
  auto out = mag.clamp(0.0, 1.0);
  return single ? out.squeeze(0) : out;
}

RandomConvPyramid::RandomConvPyramid(uint64_t seed) {
  int64_t in = 3;
  for (size_t i = 0; i < kChannels.size(); ++i) {
    const int64_t out = kChannels[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
    weights_.push_back(seeded_uniform({out, in, 3, 3}, mix_seed(seed, 2 * i), -bound, bound));
    biases_.push_back(seeded_uniform({out}, mix_seed(seed, 2 * i + 1), -0.1, 0.1));
    in = out;
  }
}

std::vector<torch::Tensor> RandomConvPyramid::activations(const torch::Tensor& images) const {
  auto x = replicate_channels(images, 3);
  if (!x.is_floating_point()) throw ShapeError("feature pyramid expects floating-point images");
  x = x * 2.0 - 1.0;
  std::vector<torch::Tensor> out;
  for (size_t i = 0; i < weights_.size(); ++i) {
    const int64_t stride = i == 0 ? 1 : 2;
    x = torch::conv2d(x, weights_[i].to(x.dtype()), biases_[i].to(x.dtype()), stride, 1);
    x = torch::leaky_relu(x, 0.2);
    out.push_back(x);
  }
  return out;
}

PyramidPerceptualDistance::PyramidPerceptualDistance(uint64_t seed) : pyramid_(mix_seed(seed, 101)) {}

torch::Tensor PyramidPerceptualDistance::distance(const torch::Tensor& a, const torch::Tensor& b) const {
  auto xa = as_batch(a), xb = as_batch(b);
  if (xa.sizes() != xb.sizes()) throw ShapeError("perceptual distance inputs differ in shape");
  auto fa = pyramid_.activations(xa);
  auto fb = pyramid_.activations(xb);
  torch::Tensor total = torch::zeros({}, xa.options());
  for (size_t i = 0; i < fa.size(); ++i) total = total + (fa[i] - fb[i]).pow(2).mean();
  return total;
}

PooledPyramidEmbedder::PooledPyramidEmbedder(std::shared_ptr<const RandomConvPyramid> pyramid)
    : pyramid_(std::move(pyramid)) {}

torch::Tensor PooledPyramidEmbedder::embed(const torch::Tensor& images) const {
  auto x = as_batch(images);
  if (x.size(0) < 2) throw ValidationError("FID embedding needs at least 2 images");
  auto feats = pyramid_->activations(x);
  return feats[3].mean({2, 3});
}

ScriptedEdgeExtractor::ScriptedEdgeExtractor(const std::string& path) : module_(load_script(path, "edge")) {}

torch::Tensor ScriptedEdgeExtractor::extract(const torch::Tensor& images) const {
  const bool single = images.dim() == 3;
  auto x = as_batch(images);
  auto out = module_.forward({x}).toTensor().clamp(0.0, 1.0);
  if (out.size(2) != x.size(2) || out.size(3) != x.size(3)) throw ShapeError("edge adapter changed the spatial size");
  return single ? out.squeeze(0) : out;
}

ScriptedPerceptualDistance::ScriptedPerceptualDistance(const std::string& path)
    : module_(load_script(path, "perceptual")) {}

torch::Tensor ScriptedPerceptualDistance::distance(const torch::Tensor& a, const torch::Tensor& b) const {
  auto xa = replicate_channels(a, 3), xb = replicate_channels(b, 3);
  if (xa.sizes() != xb.sizes()) throw ShapeError("perceptual distance inputs differ in shape");
  return module_.forward({xa * 2.0 - 1.0, xb * 2.0 - 1.0}).toTensor().mean();
}

ScriptedFeatureExtractor::ScriptedFeatureExtractor(const std::string& path)
    : module_(load_script(path, "features")) {}

std::vector<torch::Tensor> ScriptedFeatureExtractor::activations(const torch::Tensor& images) const {
  auto result = module_.forward({replicate_channels(images, 3)});
  std::vector<torch::Tensor> out;
  if (result.isTuple()) {
    for (const auto& v : result.toTupleRef().elements()) out.push_back(v.toTensor());
  } else if (result.isList()) {
    for (const auto& v : result.toList()) out.push_back(v.get().toTensor());
  }
  if (out.size() != 5) throw ConfigError("feature adapter must return exactly 5 activations");
  return out;
}

ScriptedFidEmbedder::ScriptedFidEmbedder(const std::string& path) : module_(load_script(path, "fid")) {}

torch::Tensor ScriptedFidEmbedder::embed(const torch::Tensor& images) const {
  auto x = replicate_channels(images, 3);
  if (x.size(0) < 2) throw ValidationError("FID embedding needs at least 2 images");
  return module_.forward({x}).toTensor().flatten(1);
}

BackboneConfig BackboneConfig::from_config(const Config& cfg) {
  BackboneConfig b;
  b.fallback = cfg.get_bool("backbones.fallback", b.fallback);
  b.edge = cfg.get_string("backbones.edge", "");
  b.perceptual = cfg.get_string("backbones.perceptual", "");
  b.features = cfg.get_string("backbones.features", "");
  b.fid = cfg.get_string("backbones.fid", "");
  b.seed = static_cast<uint64_t>(cfg.get_int("backbones.seed", static_cast<long long>(b.seed)));
  return b;
}

Backbones Backbones::fallback(uint64_t seed) {
  BackboneConfig cfg;
  cfg.seed = seed;
  return make_backbones(cfg);
}

Backbones make_backbones(const BackboneConfig& cfg) {
  auto need_fallback = [&](const std::string& path, const char* key) {
    if (!path.empty()) return false;
    if (!cfg.fallback)
      throw ConfigError(std::string("backbones.") + key + " has no weights and backbones.fallback=false");
    return true;
  };
  Backbones b;
  auto pyramid = std::make_shared<const RandomConvPyramid>(mix_seed(cfg.seed, 202));
  if (need_fallback(cfg.edge, "edge")) {
    b.edges = std::make_shared<GradientEdgeExtractor>();
  } else {
    b.edges = std::make_shared<ScriptedEdgeExtractor>(cfg.edge);
  }
  if (need_fallback(cfg.perceptual, "perceptual")) {
    b.perceptual = std::make_shared<PyramidPerceptualDistance>(cfg.seed);
  } else {
    b.perceptual = std::make_shared<ScriptedPerceptualDistance>(cfg.perceptual);
  }
  if (need_fallback(cfg.features, "features")) {
    b.features = pyramid;
  } else {
    b.features = std::make_shared<ScriptedFeatureExtractor>(cfg.features);
  }
  if (need_fallback(cfg.fid, "fid")) {
    b.fid = std::make_shared<PooledPyramidEmbedder>(pyramid);
  } else {
    b.fid = std::make_shared<ScriptedFidEmbedder>(cfg.fid);
  }
  return b;
}

}  // namespace apdraw
