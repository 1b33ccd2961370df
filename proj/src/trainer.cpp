#include "apdraw/trainer.hpp"

#include <cmath>
#include <iostream>
#include <numbers>

#include "apdraw/checkpoint.hpp"

namespace apdraw {

Profile parse_profile(const std::string& s) {
  if (s == "full") return Profile::full;
  if (s == "toy") return Profile::toy;
  throw ConfigError("profile must be full or toy, got '" + s + "'");
}

std::string_view to_string(Profile p) { return p == Profile::full ? "full" : "toy"; }

AblationFlags AblationFlags::from_config(const Config& cfg) {
  AblationFlags f;
  f.no_style_feature = cfg.get_bool("ablation.no_style_feature", false);
  f.no_truncation_loss = cfg.get_bool("ablation.no_truncation_loss", false);
  f.single_disc_mask_channel = cfg.get_bool("ablation.single_disc_mask_channel", false);
  f.no_quality_loss = cfg.get_bool("ablation.no_quality_loss", false);
  f.no_relaxed = cfg.get_bool("ablation.no_relaxed", false);
  f.no_local_disc = cfg.get_bool("ablation.no_local_disc", false);
  f.no_hed = cfg.get_bool("ablation.no_hed", false);
  return f;
}

nlohmann::json AblationFlags::to_json() const {
  return {{"no_style_feature", no_style_feature},
          {"no_truncation_loss", no_truncation_loss},
          {"single_disc_mask_channel", single_disc_mask_channel},
          {"no_quality_loss", no_quality_loss},
          {"no_relaxed", no_relaxed},
          {"no_local_disc", no_local_disc},
          {"no_hed", no_hed}};
}

TrainConfig TrainConfig::defaults(Profile p) {
  TrainConfig c;
  c.profile = p;
  if (p == Profile::toy) {
    c.net = GeneratorConfig::toy(64);
    c.epochs = 2;
    c.batch = 2;
    c.head_steps = 200;
  }
  return c;
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
  auto c = defaults(parse_profile(cfg.get_string("train.profile", "full")));
  c.net.image_size = static_cast<int>(cfg.get_int("train.image_size", c.net.image_size));
  c.net.base_channels = static_cast<int>(cfg.get_int("net.base_channels", c.net.base_channels));
  c.net.n_resblocks = static_cast<int>(cfg.get_int("net.n_resblocks", c.net.n_resblocks));
  c.epochs = static_cast<int>(cfg.get_int("train.epochs", c.epochs));
  c.batch = static_cast<int>(cfg.get_int("train.batch", c.batch));
  c.steps_per_epoch = static_cast<int>(cfg.get_int("train.steps_per_epoch", c.steps_per_epoch));
  c.quality_after = static_cast<int>(cfg.get_int("train.quality_after", c.quality_after));
  c.seed = static_cast<uint64_t>(cfg.get_int("train.seed", static_cast<long long>(c.seed)));
  c.head_steps = static_cast<int>(cfg.get_int("train.head_steps", c.head_steps));
  c.head_batch = static_cast<int>(cfg.get_int("train.head_batch", c.head_batch));
  c.gan_lr = cfg.get_double("optim.gan_lr", c.gan_lr);
  c.beta1 = cfg.get_double("optim.beta1", c.beta1);
  c.beta2 = cfg.get_double("optim.beta2", c.beta2);
  c.head_lr = cfg.get_double("optim.head_lr", c.head_lr);
  c.adv = parse_adversarial_mode(cfg.get_string("loss.adv", "log"));
  c.dilation_frac = cfg.get_double("corpus.dilation_frac", c.dilation_frac);
  c.ablations = AblationFlags::from_config(cfg);
  c.net.style_input = !c.ablations.no_style_feature;
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  net.validate();
  if (net.image_size % 8 != 0) throw ValidationError("image_size must be divisible by 8");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch < 1) throw ValidationError("batch must be >= 1");
  if (steps_per_epoch < 0) throw ValidationError("steps_per_epoch must be >= 0");
  if (profile == Profile::toy && (net.image_size > 128 || epochs > 10))
    throw ValidationError("toy profile is limited to image_size <= 128 and at most 10 epochs");
  if (!(gan_lr > 0) || !(head_lr > 0)) throw ValidationError("learning rates must be positive");
  if (dilation_frac < 0) throw ValidationError("dilation_frac must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"profile", std::string(to_string(profile))},
          {"net", net.to_json()},
          {"epochs", epochs},
          {"batch", batch},
          {"steps_per_epoch", steps_per_epoch},
          {"quality_after", quality_after},
          {"gan_lr", gan_lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"head_lr", head_lr},
          {"head_steps", head_steps},
          {"seed", seed},
          {"adv", adv == AdversarialMode::log ? "log" : "lsgan"},
          {"dilation_frac", dilation_frac},
          {"ablations", ablations.to_json()}};
}

// ---- heads -------------------------------------------------------------------

BalancedSampler::BalancedSampler(std::span<const int> labels, int n_classes, uint64_t seed) : rng_(seed) {
  std::vector<size_t> counts(static_cast<size_t>(n_classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes) throw ValidationError("label " + std::to_string(l) + " out of range");
    ++counts[static_cast<size_t>(l)];
  }
  for (int k = 0; k < n_classes; ++k)
    if (counts[static_cast<size_t>(k)] == 0) throw ValidationError("no training drawings for style" + std::to_string(k + 1));
  std::vector<double> w;
  w.reserve(labels.size());
  for (int l : labels) w.push_back(1.0 / static_cast<double>(counts[static_cast<size_t>(l)]));
  dist_ = std::discrete_distribution<size_t>(w.begin(), w.end());
}

size_t BalancedSampler::next() { return dist_(rng_); }

torch::Tensor augment_drawings(const torch::Tensor& drawings, Rng& rng, const AffineJitter& j) {
  auto x = as_image_batch(drawings);
  const int64_t n = x.size(0);
  auto theta = torch::empty({n, 2, 3}, x.options());
  for (int64_t i = 0; i < n; ++i) {
    const double angle = (2 * uniform01(rng) - 1) * j.max_rotation_deg * std::numbers::pi / 180.0;
    const double scale = j.min_scale + (j.max_scale - j.min_scale) * uniform01(rng);
    const double tx = (2 * uniform01(rng) - 1) * j.max_translate * 2.0;
    const double ty = (2 * uniform01(rng) - 1) * j.max_translate * 2.0;
    const double c = std::cos(angle) / scale, s = std::sin(angle) / scale;
    theta[i] = torch::tensor({c, -s, tx, s, c, ty}, torch::kFloat64).view({2, 3}).to(x.dtype());
  }
  namespace F = torch::nn::functional;
  auto grid = F::affine_grid(theta, x.sizes(), /*align_corners=*/false);
  auto ink = F::grid_sample(1.0 - x, grid,
                            F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
  return 1.0 - ink;
}

namespace {

torch::Tensor index_tensor(const std::vector<size_t>& idx) {
  std::vector<int64_t> v(idx.begin(), idx.end());
  return torch::tensor(v, torch::kLong);
}

std::vector<size_t> uniform_batch(Rng& rng, size_t n, int batch) {
  std::vector<size_t> idx;
  if (static_cast<size_t>(batch) >= n) {
    for (size_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  for (int b = 0; b < batch; ++b) idx.push_back(uniform_index(rng, n));
  return idx;
}

}  // namespace

HeadTrainHistory train_classifier(ImageHead& C, const torch::Tensor& drawings, std::span<const int> labels,
                                  const HeadTrainOptions& opts) {
  auto x = as_image_batch(drawings);
  if (static_cast<size_t>(x.size(0)) != labels.size()) throw ValidationError("one label per drawing required");
  BalancedSampler sampler(labels, 3, opts.seed);
  Rng rng(mix_seed(opts.seed, 1));
  auto targets = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()), torch::kLong);
  torch::optim::Adam adam(C->parameters(), torch::optim::AdamOptions(opts.lr));
  C->train();
  HeadTrainHistory h;
  for (int step = 0; step < opts.steps; ++step) {
    std::vector<size_t> idx;
    for (int b = 0; b < opts.batch; ++b) idx.push_back(sampler.next());
    auto it = index_tensor(idx);
    auto xb = x.index_select(0, it);
    if (opts.augment) xb = augment_drawings(xb, rng, opts.jitter);
    adam.zero_grad();
    auto loss = torch::nn::functional::cross_entropy(C->forward(xb), targets.index_select(0, it));
    loss.backward();
    adam.step();
    h.losses.push_back(loss.item<double>());
  }
  C->eval();
  return h;
}

double classifier_accuracy(ImageHead& C, const torch::Tensor& drawings, std::span<const int> labels) {
  torch::NoGradGuard no_grad;
  auto pred = classify_style(drawings, C).argmax(1);
  int64_t correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) correct += pred[static_cast<int64_t>(i)].item<int64_t>() == labels[i];
  return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

HeadTrainHistory train_metric(ImageHead& M, const torch::Tensor& drawings, std::span<const double> scores,
                              const HeadTrainOptions& opts) {
  auto x = as_image_batch(drawings);
  if (x.size(0) == 0) throw ValidationError("metric dataset is empty");
  if (static_cast<size_t>(x.size(0)) != scores.size()) throw ValidationError("one score per drawing required");
  for (double s : scores)
    if (!(s >= 0.1 && s <= 1.0)) throw ValidationError("metric score " + std::to_string(s) + " outside [0.1, 1]");
  auto y = torch::tensor(std::vector<double>(scores.begin(), scores.end()), torch::kFloat64).to(x.dtype());
  Rng rng(opts.seed);
  torch::optim::Adam adam(M->parameters(), torch::optim::AdamOptions(opts.lr));
  M->train();
  HeadTrainHistory h;
  for (int step = 0; step < opts.steps; ++step) {
    auto it = index_tensor(uniform_batch(rng, scores.size(), opts.batch));
    auto xb = x.index_select(0, it);
    if (opts.augment) xb = augment_drawings(xb, rng, opts.jitter);
    adam.zero_grad();
    auto loss = (predict_quality(xb, M) - y.index_select(0, it)).pow(2).mean();
    loss.backward();
    adam.step();
    h.losses.push_back(loss.item<double>());
  }
  M->eval();
  return h;
}

double metric_mse(ImageHead& M, const torch::Tensor& drawings, std::span<const double> scores) {
  torch::NoGradGuard no_grad;
  auto y = torch::tensor(std::vector<double>(scores.begin(), scores.end()), torch::kFloat64);
  return (predict_quality(drawings, M).to(torch::kFloat64) - y).pow(2).mean().item<double>();
}

// ---- data and models ----------------------------------------------------------

GanData prepare_gan_data(std::span<const ImageRecord> records, const TrainConfig& cfg, const FaceParser& parser,
                         ImageHead* classifier) {
  const int size = cfg.net.image_size;
  auto photos = select(records, Kind::photo);
  auto drawings = select(records, Kind::drawing);
  if (photos.empty() || drawings.empty()) throw ValidationError("training needs both photos and drawings");

  auto masks_for = [&](const torch::Tensor& img, const std::string& id) {
    try {
      return region_masks(img, parser, cfg.dilation_frac, id).stacked();
    } catch (const NoFaceError& e) {
      std::cerr << "warning: " << e.what() << "; local terms skip this image\n";
      return torch::zeros({3, img.size(1), img.size(2)});
    }
  };

  GanData data;
  std::vector<torch::Tensor> ps, pm, ds, dm, styles;
  for (const auto& r : photos) {
    auto img = load_preprocessed(r, size);
    pm.push_back(masks_for(img, r.id));
    ps.push_back(img);
  }
  std::vector<size_t> untagged;
  for (const auto& r : drawings) {
    auto img = load_preprocessed(r, size);
    dm.push_back(masks_for(img, r.id));
    ds.push_back(img);
    auto idx = r.style_tag ? style_index(*r.style_tag) : std::nullopt;
    if (idx) {
      styles.push_back(StyleVector::basis(*idx).to_tensor().squeeze(0));
    } else {
      untagged.push_back(styles.size());
      styles.push_back(torch::zeros({3}));
    }
  }
  data.photos = torch::stack(ps);
  data.photo_masks = torch::stack(pm);
  data.drawings = torch::stack(ds);
  data.drawing_masks = torch::stack(dm);
  if (!untagged.empty()) {
    if (classifier == nullptr || classifier->is_empty())
      throw ConfigError(std::to_string(untagged.size()) + " untagged drawings need a trained style classifier");
    torch::NoGradGuard no_grad;
    for (size_t i : untagged) styles[i] = classify_style(ds[i], *classifier).squeeze(0);
  }
  data.drawing_styles = torch::stack(styles);
  for (int64_t i = 0; i < data.drawing_styles.size(0); ++i)
    data.style_pool.push_back(StyleVector::from_tensor(data.drawing_styles[i].unsqueeze(0)));
  return data;
}

GanModels GanModels::create(const TrainConfig& cfg) {
  GanModels m;
  auto net = cfg.net;
  net.style_input = !cfg.ablations.no_style_feature;
  m.G = make_drawing_generator(net);
  m.F = make_photo_generator(net);
  DrawingCriticOptions o;
  o.base_channels = net.base_channels;
  o.style_branch = !cfg.ablations.no_style_feature;
  o.mask_channel = cfg.ablations.single_disc_mask_channel;
  o.locals = !cfg.ablations.no_local_disc && !cfg.ablations.single_disc_mask_channel;
  m.DD = DrawingCritic(o);
  m.DP = PatchDiscriminator(3, net.base_channels, false);
  init_weights(*m.G, mix_seed(cfg.seed, 11));
  init_weights(*m.F, mix_seed(cfg.seed, 12));
  init_weights(*m.DD, mix_seed(cfg.seed, 13));
  init_weights(*m.DP, mix_seed(cfg.seed, 14));
  return m;
}

nlohmann::json model_config_json(const TrainConfig& cfg) {
  auto net = cfg.net;
  net.style_input = !cfg.ablations.no_style_feature;
  return {{"net", net.to_json()},
          {"local_discriminators", !cfg.ablations.no_local_disc && !cfg.ablations.single_disc_mask_channel},
          {"mask_channel", cfg.ablations.single_disc_mask_channel}};
}

void GanModels::save(const std::filesystem::path& dir, const TrainConfig& cfg) {
  const auto j = model_config_json(cfg);
  save_checkpoint(dir / "G.ckpt", *G, "G", j);
  save_checkpoint(dir / "F.ckpt", *F, "F", j);
  save_checkpoint(dir / "D_D.ckpt", *DD, "D_D", j);
  save_checkpoint(dir / "D_P.ckpt", *DP, "D_P", j);
}

void GanModels::load(const std::filesystem::path& dir, const TrainConfig& cfg) {
  const std::optional<nlohmann::json> j(std::in_place, model_config_json(cfg));
  load_checkpoint(dir / "G.ckpt", *G, "G", j);
  load_checkpoint(dir / "F.ckpt", *F, "F", j);
  load_checkpoint(dir / "D_D.ckpt", *DD, "D_D", j);
  load_checkpoint(dir / "D_P.ckpt", *DP, "D_P", j);
}

// ---- cycles -----------------------------------------------------------------------

CycleCriteria CycleCriteria::from(const Backbones& b, const AblationFlags& flags) {
  CycleCriteria c;
  c.edges = b.edges;
  c.perceptual = b.perceptual;
  c.relaxed = !flags.no_relaxed;
  c.use_edges = !flags.no_hed;
  c.truncation = !flags.no_truncation_loss;
  return c;
}

namespace {

torch::Tensor photo_distance(const torch::Tensor& p, const torch::Tensor& rec, const CycleCriteria& c) {
  if (!c.relaxed) return c.pixel_l1(p, rec);
  if (!c.use_edges) {
    if (p.sizes() != rec.sizes()) throw ShapeError("photo and reconstruction differ in shape");
    return c.perceptual->distance(p, rec);
  }
  Backbones b;
  b.edges = c.edges;
  b.perceptual = c.perceptual;
  return relaxed_cycle_loss(p, rec, b);
}

}  // namespace

ForwardCycle forward_cycle(const torch::Tensor& photos, const torch::Tensor& styles, ResnetGenerator& G,
                           ResnetGenerator& F, const CycleCriteria& criteria) {
  ForwardCycle out;
  out.fake_drawing = generate_drawing(photos, styles, G);
  out.reconstruction = reconstruct_photo(out.fake_drawing, F);
  out.relaxed = photo_distance(photos, out.reconstruction, criteria);
  if (criteria.truncation) out.trunc = photo_distance(photos, reconstruct_photo(truncate6(out.fake_drawing), F), criteria);
  return out;
}

BackwardCycle backward_cycle(const torch::Tensor& drawings, const torch::Tensor& drawing_styles, ResnetGenerator& G,
                             ResnetGenerator& F, const CycleCriteria& criteria) {
  BackwardCycle out;
  out.fake_photo = reconstruct_photo(drawings, F);
  out.reconstruction = generate_drawing(out.fake_photo, drawing_styles, G);
  out.strict = criteria.pixel_l1(drawings, out.reconstruction);
  return out;
}

// ---- GAN trainer ----------------------------------------------------------------

nlohmann::json StepReport::to_json() const {
  auto j = losses.to_json();
  j["step"] = step;
  j["epoch"] = epoch;
  j["d_loss"] = d_loss;
  const auto w = weights.to_json();  // keep alive: items() only borrows
  for (const auto& el : w.items())
    if (el.key() != "epoch") j[el.key()] = el.value();
  return j;
}

nlohmann::json EpochReport::to_json() const {
  auto j = mean.to_json();
  j["epoch"] = epoch;
  j["steps"] = steps;
  j["d_loss"] = d_loss;
  const auto w = weights.to_json();  // keep alive: items() only borrows
  for (const auto& el : w.items())
    if (el.key() != "epoch") j[el.key()] = el.value();
  return j;
}

GanTrainer::GanTrainer(TrainConfig cfg, GanModels models, GanData data, Backbones backbones, ImageHead M)
    : cfg_(std::move(cfg)),
      models_(std::move(models)),
      data_(std::move(data)),
      backbones_(std::move(backbones)),
      M_(std::move(M)),
      criteria_(CycleCriteria::from(backbones_, cfg_.ablations)) {
  cfg_.validate();
  if (data_.photos.size(0) == 0 || data_.drawings.size(0) == 0) throw ValidationError("empty training domain");
  if (data_.style_pool.empty()) throw ValidationError("empty style pool");
  if (!M_.is_empty()) {
    for (auto& p : M_->parameters()) p.requires_grad_(false);
    M_->eval();
  }
  torch::manual_seed(cfg_.seed);
  std::vector<torch::Tensor> d_params = models_.DD->parameters();
  for (auto& p : models_.DP->parameters()) d_params.push_back(p);
  std::vector<torch::Tensor> g_params = models_.G->parameters();
  for (auto& p : models_.F->parameters()) g_params.push_back(p);
  auto opts = torch::optim::AdamOptions(cfg_.gan_lr).betas({cfg_.beta1, cfg_.beta2});
  opt_d_ = std::make_unique<torch::optim::Adam>(d_params, opts);
  opt_g_ = std::make_unique<torch::optim::Adam>(g_params, opts);
}

void GanTrainer::set_step_log(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  step_log_.open(path, std::ios::app);
  if (!step_log_) throw Error("cannot open training log " + path.string());
}

StepReport GanTrainer::step(int epoch, int64_t /*index*/) {
  StepReport rep;
  rep.step = global_step_;
  rep.epoch = epoch;
  rep.weights = loss_weights(epoch, cfg_.epochs, cfg_.quality_after);
  const auto& w = rep.weights;

  auto batch = sample_unpaired_batch(static_cast<size_t>(data_.photos.size(0)), static_cast<size_t>(data_.drawings.size(0)),
                                     data_.style_pool, cfg_.batch, cfg_.seed, static_cast<uint64_t>(global_step_));
  ++global_step_;
  auto pi = index_tensor(batch.photo_index), di = index_tensor(batch.drawing_index);
  auto p = data_.photos.index_select(0, pi);
  auto pm = data_.photo_masks.index_select(0, pi);
  auto d = data_.drawings.index_select(0, di);
  auto dm = data_.drawing_masks.index_select(0, di);
  auto sd = data_.drawing_styles.index_select(0, di);
  std::vector<torch::Tensor> srows;
  for (const auto& s : batch.styles) srows.push_back(s.to_tensor());
  auto s = torch::cat(srows, 0);

  auto& G = models_.G;
  auto& F = models_.F;
  auto& DD = models_.DD;
  auto& DP = models_.DP;
  const bool style_branch = DD->options().style_branch;

  auto fwd = forward_cycle(p, s, G, F, criteria_);
  auto bwd = backward_cycle(d, sd, G, F, criteria_);

  // Discriminators.
  opt_d_->zero_grad();
  auto fake_d = fwd.fake_drawing.detach();
  auto d_loss = adv_loss_drawing(d, fake_d, DD, {dm, pm}, cfg_.adv) + adv_loss_photo(p, bwd.fake_photo.detach(), DP, cfg_.adv);
  if (style_branch) {
    auto global = DD->global();
    auto real_probs = global->forward(critic_input(d, DD, dm)).cls_probs;
    auto fake_probs = global->forward(critic_input(fake_d, DD, pm)).cls_probs;
    d_loss = d_loss + style_classification_loss(sd, real_probs, s, fake_probs);
  }
  rep.d_loss = d_loss.item<double>();
  if (!std::isfinite(rep.d_loss))
    throw TrainingAborted("discriminator loss is not finite at step " + std::to_string(rep.step), rep);
  d_loss.backward();
  opt_d_->step();

  // Generators.
  opt_g_->zero_grad();
  LossTerms terms;
  terms.adv_drawing = adv_loss_drawing_generator(fwd.fake_drawing, DD, pm, cfg_.adv);
  terms.adv_photo = adv_loss_photo_generator(bwd.fake_photo, DP, cfg_.adv);
  terms.relaxed_cyc = fwd.relaxed;
  terms.trunc = fwd.trunc;
  terms.strict_cyc = bwd.strict;
  if (style_branch) {
    auto probs = DD->global()->forward(critic_input(fwd.fake_drawing, DD, pm)).cls_probs;
    terms.style = soft_cross_entropy(s, probs);
  }
  if (w.quality > 0 && !cfg_.ablations.no_quality_loss)
    terms.quality = quality_loss(fwd.fake_drawing, M_.is_empty() ? nullptr : &M_);

  auto value = [](const torch::Tensor& t) { return t.defined() ? t.detach().to(torch::kFloat64).item<double>() : 0.0; };
  rep.losses.adv_drawing = value(terms.adv_drawing);
  rep.losses.adv_photo = value(terms.adv_photo);
  rep.losses.relaxed_cyc = value(terms.relaxed_cyc);
  rep.losses.strict_cyc = value(terms.strict_cyc);
  rep.losses.trunc = value(terms.trunc);
  rep.losses.style = value(terms.style);
  rep.losses.quality = value(terms.quality);
  WeightedTotal total;
  try {
    total = total_loss(terms, w);
  } catch (const NonFiniteError& e) {
    throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(rep.step), rep);
  }
  rep.losses = total.report;
  total.total.backward();
  opt_g_->step();
  return rep;
}

EpochReport GanTrainer::train_epoch(int epoch) {
  const int steps = cfg_.steps_per_epoch > 0
                        ? cfg_.steps_per_epoch
                        : static_cast<int>((data_.photos.size(0) + cfg_.batch - 1) / cfg_.batch);
  EpochReport er;
  er.epoch = epoch;
  er.weights = loss_weights(epoch, cfg_.epochs, cfg_.quality_after);
  models_.G->train();
  models_.F->train();
  models_.DD->train();
  models_.DP->train();
  for (int i = 0; i < steps; ++i) {
    auto r = step(epoch, i);
    if (step_log_.is_open()) {
      step_log_ << r.to_json().dump() << '\n';
      step_log_.flush();
    }
    er.mean.adv_drawing += r.losses.adv_drawing;
    er.mean.adv_photo += r.losses.adv_photo;
    er.mean.relaxed_cyc += r.losses.relaxed_cyc;
    er.mean.strict_cyc += r.losses.strict_cyc;
    er.mean.trunc += r.losses.trunc;
    er.mean.style += r.losses.style;
    er.mean.quality += r.losses.quality;
    er.mean.total += r.losses.total;
    er.d_loss += r.d_loss;
  }
  const double k = steps;
  for (double* f : {&er.mean.adv_drawing, &er.mean.adv_photo, &er.mean.relaxed_cyc, &er.mean.strict_cyc, &er.mean.trunc,
                    &er.mean.style, &er.mean.quality, &er.mean.total, &er.d_loss})
    *f /= k;
  er.steps = steps;
  return er;
}

std::vector<EpochReport> GanTrainer::train(const std::optional<std::filesystem::path>& out_dir) {
  std::ofstream weights_csv, losses_csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    if (!step_log_.is_open()) set_step_log(*out_dir / "train_log.jsonl");
    weights_csv.open(*out_dir / "weights.csv");
    losses_csv.open(*out_dir / "losses.csv");
    weights_csv << "epoch,lambda1,lambda2,lambda3,lambda4,lambda5\n";
    losses_csv << "epoch,adv_drawing,adv_photo,relaxed_cyc,strict_cyc,trunc,style,quality,total,d_loss\n";
    weights_csv.precision(17);
    losses_csv.precision(10);
  }
  std::vector<EpochReport> reports;
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    auto r = train_epoch(epoch);
    if (out_dir) {
      const auto& w = r.weights;
      weights_csv << epoch << ',' << w.relaxed << ',' << w.strict << ',' << w.truncation << ',' << w.style << ','
                  << w.quality << '\n';
      const auto& m = r.mean;
      losses_csv << epoch << ',' << m.adv_drawing << ',' << m.adv_photo << ',' << m.relaxed_cyc << ',' << m.strict_cyc
                 << ',' << m.trunc << ',' << m.style << ',' << m.quality << ',' << m.total << ',' << r.d_loss << '\n';
    }
    reports.push_back(r);
  }
  return reports;
}

}  // namespace apdraw
