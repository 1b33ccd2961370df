#pragma once

#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "apdraw/backbones.hpp"
#include "apdraw/networks.hpp"

namespace apdraw {

enum class AdversarialMode { log, lsgan };
AdversarialMode parse_adversarial_mode(const std::string& s);

/// Discriminator-side adversarial loss on logits: BCE(real, 1) + BCE(fake, 0),
/// i.e. -(E log D(real) + E log(1 - D(fake))), averaged over patches and batch.
/// The least-squares variant uses (D - 1)^2 + D^2 on the raw outputs.
torch::Tensor discriminator_adversarial_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                             AdversarialMode mode = AdversarialMode::log);
/// Generator-side (non-saturating) term: BCE(fake, 1), or (D - 1)^2 for lsgan.
torch::Tensor generator_adversarial_loss(const torch::Tensor& fake_logits, AdversarialMode mode = AdversarialMode::log);

/// Region masks for real and fake drawings, N x 3 x H x W in kFaceRegions order.
struct CriticMasks {
  torch::Tensor real;
  torch::Tensor fake;
};

/// Discriminator-side drawing adversarial loss summed over the global discriminator
/// and every local discriminator. Samples with empty region masks drop out of that
/// local term. With the mask-channel variant the global input is (drawing, mask union).
torch::Tensor adv_loss_drawing(const torch::Tensor& real, const torch::Tensor& fake, DrawingCritic& critic,
                               const CriticMasks& masks, AdversarialMode mode = AdversarialMode::log);
/// Generator-side counterpart of adv_loss_drawing.
torch::Tensor adv_loss_drawing_generator(const torch::Tensor& fake, DrawingCritic& critic, const torch::Tensor& fake_masks,
                                         AdversarialMode mode = AdversarialMode::log);

torch::Tensor adv_loss_photo(const torch::Tensor& real, const torch::Tensor& fake, PatchDiscriminator& DP,
                             AdversarialMode mode = AdversarialMode::log);
torch::Tensor adv_loss_photo_generator(const torch::Tensor& fake, PatchDiscriminator& DP,
                                       AdversarialMode mode = AdversarialMode::log);

/// Global discriminator input: the drawing alone, or with the mask-union channel appended.
torch::Tensor critic_input(const torch::Tensor& drawing, const DrawingCritic& critic, const torch::Tensor& masks);

/// Forward (photo) cycle: perceptual distance between edge maps of p and its reconstruction.
torch::Tensor relaxed_cycle_loss(const torch::Tensor& p, const torch::Tensor& p_rec, const Backbones& backbones);
/// Backward (drawing) cycle: mean absolute pixel error.
torch::Tensor strict_cycle_loss(const torch::Tensor& d, const torch::Tensor& d_rec);

/// 6-bit truncation floor(min(x, 1 - 1e-6) * 64) / 64, straight-through gradient.
torch::Tensor truncate6(const torch::Tensor& x);
/// Relaxed cycle loss after truncating the generated drawing: F sees T[G(p, s)].
torch::Tensor truncation_loss(const torch::Tensor& p, const torch::Tensor& fake_drawing, ResnetGenerator& F,
                              const Backbones& backbones);
torch::Tensor truncation_loss(const torch::Tensor& p, ResnetGenerator& G, ResnetGenerator& F,
                              const torch::Tensor& styles, const Backbones& backbones);

/// Batch mean of -sum_c target(c) log predicted(c), log argument clamped at 1e-12.
torch::Tensor soft_cross_entropy(const torch::Tensor& target, const torch::Tensor& predicted);
/// Both terms: real drawings against their classifier probabilities, generated
/// drawings against the style codes that produced them.
torch::Tensor style_classification_loss(const torch::Tensor& real_target, const torch::Tensor& real_pred,
                                        const torch::Tensor& fake_target, const torch::Tensor& fake_pred);

/// E[1 - M(G(p, s))]; throws ConfigError when M is absent.
torch::Tensor quality_loss(const torch::Tensor& fake, ImageHead* M);

struct LossWeights {
  double relaxed = 0;     // lambda1 = 5 - 4.5 i / N
  double strict = 5;      // lambda2
  double truncation = 0;  // lambda3 = 4.5 i / N
  double style = 1;       // lambda4
  double quality = 0;     // lambda5 = 0.5 * [i > quality_after]
  int epoch = 1;
  int total_epochs = 1;
  nlohmann::json to_json() const;
};

/// Epoch-indexed weights, epochs 1-based. `quality_after` is 100 in the full
/// schedule; the toy profile lowers it to switch the quality term on early.
LossWeights loss_weights(int epoch, int total_epochs, int quality_after = 100);

struct LossTerms {
  torch::Tensor adv_drawing, adv_photo, relaxed_cyc, strict_cyc, trunc, style, quality;
};

struct LossReport {
  double adv_drawing = 0, adv_photo = 0, relaxed_cyc = 0, strict_cyc = 0, trunc = 0, style = 0, quality = 0;
  double total = 0;
  nlohmann::json to_json() const;
  bool all_finite() const;
};

/// Weighted objective adv + sum_k lambda_k term_k. Undefined terms count as 0. Throws
/// NonFiniteError naming the first non-finite term.
struct WeightedTotal {
  torch::Tensor total;
  LossReport report;
};
WeightedTotal total_loss(const LossTerms& terms, const LossWeights& w);

}  // namespace apdraw
