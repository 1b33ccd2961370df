#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "apdraw/backbones.hpp"
#include "apdraw/config.hpp"
#include "apdraw/corpus.hpp"
#include "apdraw/losses.hpp"
#include "apdraw/networks.hpp"
#include "apdraw/rng.hpp"

namespace apdraw {

enum class Profile { full, toy };
Profile parse_profile(const std::string& s);
std::string_view to_string(Profile p);

struct AblationFlags {
  bool no_style_feature = false;
  bool no_truncation_loss = false;
  bool single_disc_mask_channel = false;
  bool no_quality_loss = false;
  bool no_relaxed = false;  // pixel L1 on photos in the forward cycle
  bool no_local_disc = false;
  bool no_hed = false;      // perceptual distance on photos instead of their edges

  /// Reads `ablation.<flag>` booleans.
  static AblationFlags from_config(const Config& cfg);
  nlohmann::json to_json() const;
};

struct TrainConfig {
  Profile profile = Profile::full;
  GeneratorConfig net = GeneratorConfig::full();
  int epochs = 300;
  int batch = 1;
  int steps_per_epoch = 0;  // 0: one pass over the photos
  int quality_after = 100;
  double gan_lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double head_lr = 1e-4;
  int head_steps = 500;
  int head_batch = 8;
  uint64_t seed = 1;
  AdversarialMode adv = AdversarialMode::log;
  double dilation_frac = 0.02;
  AblationFlags ablations;

  static TrainConfig defaults(Profile p);
  /// Profile defaults overridden by `train.*`, `net.*`, `optim.*`, `loss.adv`,
  /// `corpus.dilation_frac` and `ablation.*` keys.
  static TrainConfig from_config(const Config& cfg);
  /// Toy runs are capped at 128 px and 10 epochs.
  void validate() const;
  nlohmann::json to_json() const;
};

// ---- style classifier C and quality regressor M ---------------------------

/// Draws sample indices with probability inversely proportional to the size of
/// their class, so every class is drawn equally often in expectation.
class BalancedSampler {
 public:
  BalancedSampler(std::span<const int> labels, int n_classes, uint64_t seed);
  size_t next();

 private:
  Rng rng_;
  std::discrete_distribution<size_t> dist_;
};

/// Random rotation, translation and scaling; the exposed background is white.
struct AffineJitter {
  double max_rotation_deg = 10.0;
  double max_translate = 0.05;  // fraction of the side
  double min_scale = 0.9;
  double max_scale = 1.1;
};
torch::Tensor augment_drawings(const torch::Tensor& drawings, Rng& rng, const AffineJitter& jitter = {});

struct HeadTrainOptions {
  int steps = 500;
  int batch = 8;
  double lr = 1e-4;
  uint64_t seed = 1;
  bool augment = true;
  AffineJitter jitter;
};

struct HeadTrainHistory {
  std::vector<double> losses;  // per step
};

/// Cross-entropy training of C on labelled drawings (labels 0..2) with balanced
/// sampling. Throws ValidationError if a style has no drawings.
HeadTrainHistory train_classifier(ImageHead& C, const torch::Tensor& drawings, std::span<const int> labels,
                                  const HeadTrainOptions& opts);
double classifier_accuracy(ImageHead& C, const torch::Tensor& drawings, std::span<const int> labels);

/// MSE regression of predict_quality onto scores in [0.1, 1].
HeadTrainHistory train_metric(ImageHead& M, const torch::Tensor& drawings, std::span<const double> scores,
                              const HeadTrainOptions& opts);
double metric_mse(ImageHead& M, const torch::Tensor& drawings, std::span<const double> scores);

// ---- main model ------------------------------------------------------------

struct GanData {
  torch::Tensor photos;          // P x 3 x S x S
  torch::Tensor photo_masks;     // P x 3 x S x S, kFaceRegions order
  torch::Tensor drawings;        // D x 1 x S x S
  torch::Tensor drawing_masks;   // D x 3 x S x S
  torch::Tensor drawing_styles;  // D x 3, the style code s(d) of each drawing
  std::vector<StyleVector> style_pool;
};

/// Loads and preprocesses the corpus, parses region masks (parser failures give
/// empty masks, which drop out of the local terms) and assigns s(d): tagged
/// drawings get their basis code, untagged ones the classifier's probabilities.
GanData prepare_gan_data(std::span<const ImageRecord> records, const TrainConfig& cfg, const FaceParser& parser,
                         ImageHead* classifier);

struct GanModels {
  ResnetGenerator G{nullptr};
  ResnetGenerator F{nullptr};
  DrawingCritic DD{nullptr};
  PatchDiscriminator DP{nullptr};

  static GanModels create(const TrainConfig& cfg);
  /// G.ckpt, F.ckpt, D_D.ckpt, D_P.ckpt under `dir`.
  void save(const std::filesystem::path& dir, const TrainConfig& cfg);
  void load(const std::filesystem::path& dir, const TrainConfig& cfg);
};

/// Network config stored in checkpoints; loads across different configs are rejected.
nlohmann::json model_config_json(const TrainConfig& cfg);

/// The criteria of the two cycles. The forward (photo) cycle compares edge maps
/// with the perceptual distance; the backward (drawing) cycle uses pixel L1.
struct CycleCriteria {
  std::shared_ptr<const EdgeExtractor> edges;
  std::shared_ptr<const PerceptualDistance> perceptual;
  std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)> pixel_l1 = strict_cycle_loss;
  bool relaxed = true;
  bool use_edges = true;
  bool truncation = true;

  static CycleCriteria from(const Backbones& b, const AblationFlags& flags);
};

struct ForwardCycle {
  torch::Tensor fake_drawing, reconstruction, relaxed, trunc;
};
struct BackwardCycle {
  torch::Tensor fake_photo, reconstruction, strict;
};

ForwardCycle forward_cycle(const torch::Tensor& photos, const torch::Tensor& styles, ResnetGenerator& G,
                           ResnetGenerator& F, const CycleCriteria& criteria);
BackwardCycle backward_cycle(const torch::Tensor& drawings, const torch::Tensor& drawing_styles, ResnetGenerator& G,
                             ResnetGenerator& F, const CycleCriteria& criteria);

struct StepReport {
  int64_t step = 0;
  int epoch = 0;
  LossWeights weights;
  LossReport losses;
  double d_loss = 0;
  nlohmann::json to_json() const;
};

struct EpochReport {
  int epoch = 0;
  int steps = 0;
  LossWeights weights;
  LossReport mean;
  double d_loss = 0;
  nlohmann::json to_json() const;
};

/// A non-finite loss stopped the epoch; `report` holds the offending step's terms.
struct TrainingAborted : NonFiniteError {
  TrainingAborted(const std::string& what, StepReport r) : NonFiniteError(what), report(std::move(r)) {}
  StepReport report;
};

/// Alternating updates: discriminators (adversarial + unweighted style
/// classification) first, then both generators on the weighted objective.
/// M, when given, is frozen.
class GanTrainer {
 public:
  GanTrainer(TrainConfig cfg, GanModels models, GanData data, Backbones backbones, ImageHead M = nullptr);

  EpochReport train_epoch(int epoch);
  /// Runs epochs 1..N, writing `train_log.jsonl`, `weights.csv` and `losses.csv`
  /// under `out_dir` when given.
  std::vector<EpochReport> train(const std::optional<std::filesystem::path>& out_dir = std::nullopt);

  void set_step_log(const std::filesystem::path& path);
  GanModels& models() { return models_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  StepReport step(int epoch, int64_t index);

  TrainConfig cfg_;
  GanModels models_;
  GanData data_;
  Backbones backbones_;
  ImageHead M_;
  CycleCriteria criteria_;
  std::unique_ptr<torch::optim::Adam> opt_d_, opt_g_;
  int64_t global_step_ = 0;
  std::ofstream step_log_;
};

}  // namespace apdraw
