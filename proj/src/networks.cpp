#include "apdraw/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <iostream>

namespace apdraw {
namespace F = torch::nn::functional;
namespace {

torch::Tensor inorm(const torch::Tensor& x) { return F::instance_norm(x, F::InstanceNormFuncOptions()); }

torch::Tensor reflect(const torch::Tensor& x, int64_t pad) {
  return F::pad(x, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReflect));
}

void notify(const LayerObserver* obs, const std::string& name, const torch::Tensor& t) {
  if (obs && *obs) (*obs)(name, t);
}

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

}  // namespace

void GeneratorConfig::validate() const {
  if (n_resblocks < 1) throw ValidationError("n_resblocks must be >= 1");
  if (base_channels < 1) throw ValidationError("base_channels must be >= 1");
  if (image_size <= 0 || image_size % 4 != 0) throw ValidationError("image_size must be a positive multiple of 4");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"base_channels", base_channels},
          {"n_resblocks", n_resblocks},
          {"image_size", image_size},
          {"style_input", style_input},
          {"norm", "instance"},
          {"disc_leaky_slope", 0.2}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.n_resblocks = j.at("n_resblocks").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.style_input = j.value("style_input", true);
  return c;
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
  conv1_ = register_module("conv1", conv(channels, channels, 3, 1, 0));
  conv2_ = register_module("conv2", conv(channels, channels, 3, 1, 0));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x, const std::string& name, const LayerObserver* obs) {
  auto h = torch::relu(inorm(conv1_(reflect(x, 1))));
  notify(obs, name + ".conv1", h);
  h = inorm(conv2_(reflect(h, 1)));
  notify(obs, name + ".conv2", h);
  return x + h;
}

ResnetGeneratorImpl::ResnetGeneratorImpl(ResnetGeneratorOptions opts) : opts_(opts) {
  const int64_t c = opts_.base_channels;
  if (opts_.n_resblocks < 1) throw ValidationError("n_resblocks must be >= 1");
  flat_ = register_module("flat", conv(opts_.in_channels, c, 7, 1, 0));
  down1_ = register_module("down1", conv(c, 2 * c, 3, 2, 1));
  down2_ = register_module("down2", conv(2 * c, 4 * c, 3, 2, 1));
  if (opts_.merge) merge_ = register_module("merge", conv(4 * c + opts_.style_channels, 4 * c, 3, 1, 0));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < opts_.n_resblocks; ++i) blocks_->push_back(ResidualBlock(4 * c));
  up1_ = register_module("up1", torch::nn::ConvTranspose2d(
                                    torch::nn::ConvTranspose2dOptions(4 * c, 2 * c, 3).stride(2).padding(1).output_padding(1)));
  up2_ = register_module("up2", torch::nn::ConvTranspose2d(
                                    torch::nn::ConvTranspose2dOptions(2 * c, c, 3).stride(2).padding(1).output_padding(1)));
  final_ = register_module("final", conv(c, opts_.out_channels, 7, 1, 0));
}

std::vector<ConvLayerInfo> ResnetGeneratorImpl::conv_layers() const {
  const int64_t c = opts_.base_channels;
  std::vector<ConvLayerInfo> out{{"flat", c}, {"down1", 2 * c}, {"down2", 4 * c}};
  if (opts_.merge) out.push_back({"merge", 4 * c});
  for (int64_t i = 1; i <= opts_.n_resblocks; ++i) {
    out.push_back({"res" + std::to_string(i) + ".conv1", 4 * c});
    out.push_back({"res" + std::to_string(i) + ".conv2", 4 * c});
  }
  out.push_back({"up1", 2 * c});
  out.push_back({"up2", c});
  out.push_back({"final", opts_.out_channels});
  return out;
}

torch::Tensor ResnetGeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  return run(x, style, nullptr);
}

torch::Tensor ResnetGeneratorImpl::forward_traced(const torch::Tensor& x, const torch::Tensor& style,
                                                  const LayerObserver& obs) {
  return run(x, style, &obs);
}

torch::Tensor ResnetGeneratorImpl::run(const torch::Tensor& x, const torch::Tensor& style, const LayerObserver* obs) {
  if (x.dim() != 4 || x.size(1) != opts_.in_channels)
    throw ShapeError("generator expects N x " + std::to_string(opts_.in_channels) + " x H x W input");
  if (x.size(2) != opts_.image_size || x.size(3) != opts_.image_size)
    throw ShapeError("generator configured for " + std::to_string(opts_.image_size) + "px input, got " +
                     std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)));
  auto h = torch::relu(inorm(flat_(reflect(x * 2.0 - 1.0, 3))));
  notify(obs, "flat", h);
  h = torch::relu(inorm(down1_(h)));
  notify(obs, "down1", h);
  h = torch::relu(inorm(down2_(h)));
  notify(obs, "down2", h);
  if (opts_.merge) {
    if (opts_.style_channels > 0) {
      if (!style.defined()) throw ShapeError("this generator needs a style code");
      auto s = style.to(h.dtype());
      if (s.dim() != 2 || s.size(1) != opts_.style_channels) throw ShapeError("style must be N x 3");
      if (s.size(0) == 1 && h.size(0) > 1) s = s.expand({h.size(0), s.size(1)});
      if (s.size(0) != h.size(0)) throw ShapeError("style batch does not match image batch");
      auto smap = s.view({s.size(0), s.size(1), 1, 1}).expand({s.size(0), s.size(1), h.size(2), h.size(3)});
      h = torch::cat({h, smap}, 1);
    }
    // No instance norm here: the style map is spatially constant, so normalizing the
    // merge output would subtract the style contribution right back out.
    h = torch::relu(merge_(reflect(h, 1)));
    notify(obs, "merge", h);
  }
  for (size_t i = 0; i < blocks_->size(); ++i)
    h = blocks_->ptr<ResidualBlockImpl>(i)->forward(h, "res" + std::to_string(i + 1), obs);
  h = torch::relu(inorm(up1_(h)));
  notify(obs, "up1", h);
  h = torch::relu(inorm(up2_(h)));
  notify(obs, "up2", h);
  h = torch::sigmoid(final_(reflect(h, 3)));
  notify(obs, "final", h);
  return h;
}

ResnetGenerator make_drawing_generator(const GeneratorConfig& cfg) {
  cfg.validate();
  ResnetGeneratorOptions o;
  o.in_channels = 3;
  o.out_channels = 1;
  o.style_channels = cfg.style_input ? 3 : 0;
  o.merge = true;
  o.base_channels = cfg.base_channels;
  o.n_resblocks = cfg.n_resblocks;
  o.image_size = cfg.image_size;
  return ResnetGenerator(o);
}

ResnetGenerator make_photo_generator(const GeneratorConfig& cfg) {
  cfg.validate();
  ResnetGeneratorOptions o;
  o.in_channels = 1;
  o.out_channels = 3;
  o.style_channels = 0;
  o.merge = false;
  o.base_channels = cfg.base_channels;
  o.n_resblocks = cfg.n_resblocks;
  o.image_size = cfg.image_size;
  return ResnetGenerator(o);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t in_channels, int64_t base_channels, bool with_cls)
    : in_channels_(in_channels), with_cls_(with_cls) {
  const int64_t c = base_channels;
  auto lrelu = [] { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)); };
  auto in = [](int64_t ch) { return torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(ch)); };
  shared_ = register_module("shared", torch::nn::Sequential(conv(in_channels, c, 4, 2, 1), lrelu(),
                                                            conv(c, 2 * c, 4, 2, 1), in(2 * c), lrelu(),
                                                            conv(2 * c, 4 * c, 4, 2, 1), in(4 * c), lrelu()));
  rf_ = register_module("rf", torch::nn::Sequential(conv(4 * c, 8 * c, 3, 1, 1), in(8 * c), lrelu(),
                                                    conv(8 * c, 1, 3, 1, 1)));
  if (with_cls_)
    cls_ = register_module("cls", torch::nn::Sequential(conv(4 * c, 8 * c, 4, 2, 1), lrelu(),
                                                        conv(8 * c, 8 * c, 4, 2, 1), lrelu(), conv(8 * c, 3, 1, 1, 0)));
}

DiscriminatorOutput PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != in_channels_)
    throw ShapeError("discriminator expects N x " + std::to_string(in_channels_) + " x H x W input");
  if (x.size(2) % kRfDownsample != 0 || x.size(3) % kRfDownsample != 0)
    throw ShapeError("discriminator input side must be a multiple of 8");
  auto h = shared_->forward(x * 2.0 - 1.0);
  DiscriminatorOutput out;
  out.rf_map = rf_->forward(h);
  if (with_cls_) {
    out.cls_logits = cls_->forward(h).mean({2, 3});
    out.cls_probs = torch::softmax(out.cls_logits, 1);
  }
  return out;
}

DrawingCriticImpl::DrawingCriticImpl(DrawingCriticOptions opts) : opts_(opts) {
  if (opts_.mask_channel) opts_.locals = false;
  global_ = register_module("global", PatchDiscriminator(opts_.mask_channel ? 2 : 1, opts_.base_channels,
                                                         opts_.style_branch));
  if (opts_.locals) {
    for (auto name : kFaceRegions)
      locals_.push_back(register_module("local_" + std::string(name), PatchDiscriminator(1, opts_.base_channels, false)));
  }
}

PatchDiscriminator DrawingCriticImpl::local(size_t r) const {
  if (r >= locals_.size()) throw ValidationError("no local discriminator for region index " + std::to_string(r));
  return locals_[r];
}

ImageHeadImpl::ImageHeadImpl(ImageHeadOptions opts) : opts_(std::move(opts)) {
  int64_t features = 0;
  if (opts_.external) {
    if (opts_.external_dim <= 0) throw ConfigError("external trunk needs its feature dimension");
    features = opts_.external_dim;
  } else {
    trunk_ = torch::nn::Sequential();
    int64_t in = opts_.in_channels;
    for (int64_t k = 0; k < opts_.stages; ++k) {
      const int64_t out = opts_.width << k;
      trunk_->push_back(conv(in, out, 3, 2, 1));
      trunk_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
      in = out;
    }
    register_module("trunk", trunk_);
    features = in;
  }
  head_ = register_module("head", torch::nn::Linear(features, opts_.outputs));
}

torch::Tensor ImageHeadImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != opts_.in_channels) throw ShapeError("head network expects N x 1 x H x W drawings");
  torch::Tensor pooled;
  if (opts_.external) {
    pooled = opts_.external->activations(x).back().mean({2, 3});
  } else {
    pooled = trunk_->forward(x * 2.0 - 1.0).mean({2, 3});
  }
  return head_(pooled);
}

ImageHead make_style_classifier(int64_t width, int64_t stages) {
  ImageHeadOptions o;
  o.width = width;
  o.stages = stages;
  o.outputs = 3;
  return ImageHead(o);
}

ImageHead make_quality_regressor(int64_t width, int64_t stages) {
  ImageHeadOptions o;
  o.width = width;
  o.stages = stages;
  o.outputs = 1;
  return ImageHead(o);
}

void init_weights(torch::nn::Module& module, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& p : module.named_parameters()) {
    const auto& name = p.key();
    auto& t = p.value();
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) {
      t.zero_();
    } else {
      t.normal_(0.0, 0.02, gen);
    }
  }
}

torch::Tensor as_image_batch(const torch::Tensor& x) {
  if (x.dim() == 3) return x.unsqueeze(0);
  if (x.dim() != 4) throw ShapeError("expected C x H x W or N x C x H x W");
  return x;
}

torch::Tensor generate_drawing(const torch::Tensor& p, const StyleVector& s, ResnetGenerator& G) {
  auto batch = as_image_batch(p);
  auto style = s.to_tensor(batch.scalar_type()).expand({batch.size(0), 3});
  auto out = generate_drawing(batch, style, G);
  return p.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor generate_drawing(const torch::Tensor& p, const torch::Tensor& styles, ResnetGenerator& G) {
  auto batch = as_image_batch(p);
  if (batch.size(1) != 3) throw ShapeError("generate_drawing expects 3-channel photos");
  auto out = G->forward(batch, G->options().style_channels > 0 ? styles : torch::Tensor());
  return p.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor reconstruct_photo(const torch::Tensor& d, ResnetGenerator& Fgen) {
  auto batch = as_image_batch(d);
  if (batch.size(1) != 1) throw ShapeError("reconstruct_photo expects single-channel drawings");
  auto out = Fgen->forward(batch);
  return d.dim() == 3 ? out.squeeze(0) : out;
}

DiscriminatorOutput discriminate_drawing(const torch::Tensor& d, PatchDiscriminator& D) {
  return D->forward(as_image_batch(d));
}

torch::Tensor discriminate_photo(const torch::Tensor& p, PatchDiscriminator& DP) {
  auto batch = as_image_batch(p);
  if (batch.size(1) != 3) throw ShapeError("photo discriminator expects 3-channel photos");
  return DP->forward(batch).rf_map;
}

torch::Tensor masked_drawing(const torch::Tensor& d, const torch::Tensor& mask) {
  auto m = mask.to(d.dtype());
  return d * m + (1.0 - m);
}

LocalOutput discriminate_local(const torch::Tensor& d, const torch::Tensor& mask, PatchDiscriminator& D_region) {
  auto batch = as_image_batch(d);
  auto m = as_image_batch(mask);
  if (m.size(0) != batch.size(0) || m.size(2) != batch.size(2) || m.size(3) != batch.size(3))
    throw ShapeError("local mask must match the drawing size");
  LocalOutput out;
  out.valid = m.flatten(1).gt(0.5).any(1);
  const auto n_valid = out.valid.sum().item<int64_t>();
  if (n_valid == 0) {
    static thread_local bool warned = false;
    if (!warned) {
      std::cerr << "warning: degenerate (all-zero) region mask; local term skipped\n";
      warned = true;
    }
    return out;
  }
  auto idx = out.valid.nonzero().view({-1});
  out.rf_map = D_region->forward(masked_drawing(batch.index_select(0, idx), m.index_select(0, idx))).rf_map;
  return out;
}

torch::Tensor classify_style(const torch::Tensor& d, ImageHead& C) { return torch::softmax(C->forward(as_image_batch(d)), 1); }

torch::Tensor predict_quality(const torch::Tensor& d, ImageHead& M) {
  return 0.1 + 0.9 * torch::sigmoid(M->forward(as_image_batch(d)).view({-1}));
}

}  // namespace apdraw
