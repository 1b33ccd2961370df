#include "apdraw/losses.hpp"

#include <cmath>

namespace apdraw {
namespace F = torch::nn::functional;
namespace {

torch::Tensor real_term(const torch::Tensor& logits, AdversarialMode mode) {
  if (mode == AdversarialMode::lsgan) return (logits - 1.0).pow(2).mean();
  return F::binary_cross_entropy_with_logits(logits, torch::ones_like(logits));
}

torch::Tensor fake_term(const torch::Tensor& logits, AdversarialMode mode) {
  if (mode == AdversarialMode::lsgan) return logits.pow(2).mean();
  return F::binary_cross_entropy_with_logits(logits, torch::zeros_like(logits));
}

void require_batch(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 4 || t.size(0) == 0) throw ValidationError(std::string("empty or malformed ") + what + " batch");
}

torch::Tensor region_mask(const torch::Tensor& masks, size_t r) {
  return masks.slice(1, static_cast<int64_t>(r), static_cast<int64_t>(r) + 1);
}

}  // namespace

AdversarialMode parse_adversarial_mode(const std::string& s) {
  if (s == "log") return AdversarialMode::log;
  if (s == "lsgan") return AdversarialMode::lsgan;
  throw ConfigError("loss.adv must be log or lsgan, got '" + s + "'");
}

torch::Tensor discriminator_adversarial_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                             AdversarialMode mode) {
  if (real_logits.numel() == 0 || fake_logits.numel() == 0) throw ValidationError("empty discriminator output");
  return real_term(real_logits, mode) + fake_term(fake_logits, mode);
}

torch::Tensor generator_adversarial_loss(const torch::Tensor& fake_logits, AdversarialMode mode) {
  if (fake_logits.numel() == 0) throw ValidationError("empty discriminator output");
  return real_term(fake_logits, mode);
}

torch::Tensor critic_input(const torch::Tensor& drawing, const DrawingCritic& critic, const torch::Tensor& masks) {
  if (!critic->options().mask_channel) return drawing;
  if (!masks.defined()) throw ValidationError("mask-channel discriminator needs region masks");
  auto uni = masks.amax(1, /*keepdim=*/true).to(drawing.dtype());
  return torch::cat({drawing, uni}, 1);
}

torch::Tensor adv_loss_drawing(const torch::Tensor& real, const torch::Tensor& fake, DrawingCritic& critic,
                               const CriticMasks& masks, AdversarialMode mode) {
  require_batch(real, "real drawing");
  require_batch(fake, "fake drawing");
  auto D = critic->global();
  auto loss = real_term(D->forward(critic_input(real, critic, masks.real)).rf_map, mode) +
              fake_term(D->forward(critic_input(fake, critic, masks.fake)).rf_map, mode);
  if (critic->has_locals()) {
    if (!masks.real.defined() || !masks.fake.defined()) throw ValidationError("local discriminators need region masks");
    for (size_t r = 0; r < kFaceRegions.size(); ++r) {
      auto Dr = critic->local(r);
      auto ro = discriminate_local(real, region_mask(masks.real, r), Dr);
      auto fo = discriminate_local(fake, region_mask(masks.fake, r), Dr);
      if (ro.rf_map.defined()) loss = loss + real_term(ro.rf_map, mode);
      if (fo.rf_map.defined()) loss = loss + fake_term(fo.rf_map, mode);
    }
  }
  return loss;
}

torch::Tensor adv_loss_drawing_generator(const torch::Tensor& fake, DrawingCritic& critic, const torch::Tensor& fake_masks,
                                         AdversarialMode mode) {
  require_batch(fake, "fake drawing");
  auto D = critic->global();
  auto loss = real_term(D->forward(critic_input(fake, critic, fake_masks)).rf_map, mode);
  if (critic->has_locals()) {
    if (!fake_masks.defined()) throw ValidationError("local discriminators need region masks");
    for (size_t r = 0; r < kFaceRegions.size(); ++r) {
      auto Dr = critic->local(r);
      auto fo = discriminate_local(fake, region_mask(fake_masks, r), Dr);
      if (fo.rf_map.defined()) loss = loss + real_term(fo.rf_map, mode);
    }
  }
  return loss;
}

torch::Tensor adv_loss_photo(const torch::Tensor& real, const torch::Tensor& fake, PatchDiscriminator& DP,
                             AdversarialMode mode) {
  require_batch(real, "real photo");
  require_batch(fake, "fake photo");
  return discriminator_adversarial_loss(discriminate_photo(real, DP), discriminate_photo(fake, DP), mode);
}

torch::Tensor adv_loss_photo_generator(const torch::Tensor& fake, PatchDiscriminator& DP, AdversarialMode mode) {
  require_batch(fake, "fake photo");
  return generator_adversarial_loss(discriminate_photo(fake, DP), mode);
}

torch::Tensor relaxed_cycle_loss(const torch::Tensor& p, const torch::Tensor& p_rec, const Backbones& backbones) {
  if (p.sizes() != p_rec.sizes()) throw ShapeError("relaxed cycle loss: photo and reconstruction differ in shape");
  return backbones.perceptual->distance(backbones.edges->extract(p), backbones.edges->extract(p_rec));
}

torch::Tensor strict_cycle_loss(const torch::Tensor& d, const torch::Tensor& d_rec) {
  if (d.sizes() != d_rec.sizes()) throw ShapeError("strict cycle loss: drawing and reconstruction differ in shape");
  return (d - d_rec).abs().mean();
}

torch::Tensor truncate6(const torch::Tensor& x) {
  auto levels = torch::floor(x.detach().clamp_max(1.0 - 1e-6) * 64.0) / 64.0;
  // Forward value is exactly `levels`; the gradient is the identity.
  return levels + (x - x.detach());
}

torch::Tensor truncation_loss(const torch::Tensor& p, const torch::Tensor& fake_drawing, ResnetGenerator& Fgen,
                              const Backbones& backbones) {
  auto rec = reconstruct_photo(truncate6(fake_drawing), Fgen);
  return relaxed_cycle_loss(p, rec, backbones);
}

torch::Tensor truncation_loss(const torch::Tensor& p, ResnetGenerator& G, ResnetGenerator& Fgen,
                              const torch::Tensor& styles, const Backbones& backbones) {
  return truncation_loss(p, generate_drawing(p, styles, G), Fgen, backbones);
}

torch::Tensor soft_cross_entropy(const torch::Tensor& target, const torch::Tensor& predicted) {
  if (target.sizes() != predicted.sizes()) throw ShapeError("soft cross entropy: shape mismatch");
  auto t = target.dim() == 1 ? target.unsqueeze(0) : target;
  auto p = predicted.dim() == 1 ? predicted.unsqueeze(0) : predicted;
  return -(t.to(p.dtype()) * p.clamp_min(1e-12).log()).sum(1).mean();
}

torch::Tensor style_classification_loss(const torch::Tensor& real_target, const torch::Tensor& real_pred,
                                        const torch::Tensor& fake_target, const torch::Tensor& fake_pred) {
  return soft_cross_entropy(real_target, real_pred) + soft_cross_entropy(fake_target, fake_pred);
}

torch::Tensor quality_loss(const torch::Tensor& fake, ImageHead* M) {
  if (M == nullptr || M->is_empty()) throw ConfigError("quality loss requested but no quality model is loaded");
  return (1.0 - predict_quality(fake, *M)).mean();
}

nlohmann::json LossWeights::to_json() const {
  return {{"epoch", epoch},         {"total_epochs", total_epochs}, {"lambda1", relaxed}, {"lambda2", strict},
          {"lambda3", truncation}, {"lambda4", style},              {"lambda5", quality}};
}

LossWeights loss_weights(int epoch, int total_epochs, int quality_after) {
  if (total_epochs < 1) throw ValidationError("total epochs must be >= 1");
  if (epoch < 1 || epoch > total_epochs)
    throw ValidationError("epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(total_epochs));
  LossWeights w;
  w.epoch = epoch;
  w.total_epochs = total_epochs;
  const double ramp = 4.5 * epoch / total_epochs;
  w.relaxed = 5.0 - ramp;
  w.strict = 5.0;
  w.truncation = ramp;
  w.style = 1.0;
  w.quality = epoch > quality_after ? 0.5 : 0.0;
  return w;
}

nlohmann::json LossReport::to_json() const {
  return {{"adv_drawing", adv_drawing}, {"adv_photo", adv_photo}, {"relaxed_cyc", relaxed_cyc},
          {"strict_cyc", strict_cyc},   {"trunc", trunc},         {"style", style},
          {"quality", quality},         {"total", total}};
}

bool LossReport::all_finite() const {
  for (double v : {adv_drawing, adv_photo, relaxed_cyc, strict_cyc, trunc, style, quality, total})
    if (!std::isfinite(v)) return false;
  return true;
}

WeightedTotal total_loss(const LossTerms& terms, const LossWeights& w) {
  WeightedTotal out;
  torch::Tensor total;
  auto add = [&](const torch::Tensor& t, double weight, double& slot, const char* name) {
    if (!t.defined()) return;
    slot = t.detach().to(torch::kFloat64).item<double>();
    if (!std::isfinite(slot)) throw NonFiniteError(std::string("loss term ") + name + " is not finite");
    if (weight == 0.0) return;
    auto weighted = t * weight;
    total = total.defined() ? total + weighted : weighted;
  };
  add(terms.adv_drawing, 1.0, out.report.adv_drawing, "adv_drawing");
  add(terms.adv_photo, 1.0, out.report.adv_photo, "adv_photo");
  add(terms.relaxed_cyc, w.relaxed, out.report.relaxed_cyc, "relaxed_cyc");
  add(terms.strict_cyc, w.strict, out.report.strict_cyc, "strict_cyc");
  add(terms.trunc, w.truncation, out.report.trunc, "trunc");
  add(terms.style, w.style, out.report.style, "style");
  add(terms.quality, w.quality, out.report.quality, "quality");
  out.total = total.defined() ? total : torch::zeros({});
  out.report.total = out.total.detach().to(torch::kFloat64).item<double>();
  if (!std::isfinite(out.report.total)) throw NonFiniteError("total loss is not finite");
  return out;
}

}  // namespace apdraw
