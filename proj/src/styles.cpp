#include "apdraw/styles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "apdraw/rng.hpp"

namespace apdraw {

StyleVector interpolate_styles(const StyleVector& a, const StyleVector& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("interpolation parameter must lie in [0, 1]");
  StyleVector out;
  for (size_t i = 0; i < 3; ++i) out.values[i] = (1.0 - t) * a.values[i] + t * b.values[i];
  out.relaxed = a.relaxed || b.relaxed;
  return out;
}

std::array<double, 3> project_simplex(const std::array<double, 3>& v) {
  std::array<double, 3> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0, theta = 0;
  for (size_t j = 0; j < 3; ++j) {
    cumulative += u[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0) theta = candidate;
  }
  std::array<double, 3> out;
  for (size_t i = 0; i < 3; ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

namespace {

// Target quantile function evaluated at probabilities u (rows x n), exact mode.
torch::Tensor exact_quantiles(const torch::Tensor& u, const torch::Tensor& target_sorted) {
  const int64_t m = target_sorted.size(1);
  auto q = (u * static_cast<double>(m) - 0.5).clamp(0.0, static_cast<double>(m - 1));
  auto lo = q.floor().to(torch::kLong);
  auto hi = (lo + 1).clamp_max(m - 1);
  auto w = q - lo.to(q.dtype());
  auto a = target_sorted.gather(1, lo);
  auto b = target_sorted.gather(1, hi);
  return a * (1.0 - w) + b * w;
}

// Inverse of the piecewise-linear CDF of a `bins`-bin histogram per row.
torch::Tensor binned_quantiles(const torch::Tensor& u, const torch::Tensor& target, int bins) {
  const int64_t rows = target.size(0);
  auto out = torch::empty_like(u);
  for (int64_t r = 0; r < rows; ++r) {
    auto t = target[r];
    const double lo = t.min().item<double>(), hi = t.max().item<double>();
    if (hi <= lo) {
      out[r].fill_(lo);
      continue;
    }
    auto hist = torch::histc(t, bins, lo, hi);
    auto cdf = torch::cat({torch::zeros({1}, hist.options()), hist.cumsum(0) / hist.sum()});
    auto edges = torch::linspace(lo, hi, bins + 1, t.options());
    auto ur = u[r].contiguous();
    // First edge index whose CDF reaches u; interpolate inside that bin.
    auto k = torch::searchsorted(cdf, ur).clamp(1, bins);
    auto c0 = cdf.index_select(0, k - 1), c1 = cdf.index_select(0, k);
    auto e0 = edges.index_select(0, k - 1), e1 = edges.index_select(0, k);
    auto frac = ((ur - c0) / (c1 - c0).clamp_min(1e-300)).clamp(0.0, 1.0);
    out[r].copy_(e0 + frac * (e1 - e0));
  }
  return out;
}

}  // namespace

torch::Tensor histogram_remap_rows(const torch::Tensor& source, const torch::Tensor& target, int bins) {
  if (source.dim() != 2 || target.dim() != 2 || source.size(0) != target.size(0))
    throw ShapeError("histogram_remap_rows expects C x K source and C x L target");
  if (source.size(1) == 0 || target.size(1) == 0) throw ValidationError("histogram remap needs non-empty channels");
  if (bins == 1 || bins < 0) throw ValidationError("histogram bins must be 0 (exact) or >= 2");
  torch::NoGradGuard no_grad;
  auto src = source.detach().to(torch::kFloat64).contiguous();
  auto tgt = target.detach().to(torch::kFloat64).contiguous();
  const int64_t n = src.size(1);

  auto [sorted, order] = src.sort(1);
  sorted = sorted.contiguous();
  // Mid-rank of every sorted position, averaging over ties.
  auto first = torch::searchsorted(sorted, sorted, /*out_int32=*/false, /*right=*/false).to(torch::kFloat64);
  auto end = torch::searchsorted(sorted, sorted, /*out_int32=*/false, /*right=*/true).to(torch::kFloat64);
  auto midrank = (first + end - 1.0) * 0.5;
  auto u = (midrank + 0.5) / static_cast<double>(n);

  torch::Tensor mapped;
  if (bins == 0) {
    auto tsorted = std::get<0>(tgt.sort(1)).contiguous();
    const int64_t m = tsorted.size(1);
    if (m == n) {
      // Same sample count: the quantile position is the mid-rank itself, no rounding.
      auto q = midrank;
      auto lo = q.floor().to(torch::kLong);
      auto hi = (lo + 1).clamp_max(m - 1);
      auto w = q - lo.to(q.dtype());
      mapped = tsorted.gather(1, lo) * (1.0 - w) + tsorted.gather(1, hi) * w;
    } else {
      mapped = exact_quantiles(u, tsorted);
    }
  } else {
    mapped = binned_quantiles(u, tgt, bins);
  }
  auto out = torch::empty_like(src);
  out.scatter_(1, order, mapped);
  return out.to(source.scalar_type());
}

torch::Tensor histogram_remap(const torch::Tensor& source, const torch::Tensor& target, int bins) {
  auto out = histogram_remap_rows(source.reshape({1, -1}), target.reshape({1, -1}), bins);
  return out.view(source.sizes());
}

namespace {

std::vector<torch::Tensor> channel_rows(const std::vector<torch::Tensor>& acts) {
  std::vector<torch::Tensor> rows;
  for (const auto& o : acts) {
    if (o.dim() != 4) throw ShapeError("feature activations must be N x C x H x W");
    rows.push_back(o.transpose(0, 1).reshape({o.size(1), -1}));
  }
  return rows;
}

torch::Tensor sum_layer_mse(const std::vector<torch::Tensor>& rows, const std::vector<torch::Tensor>& targets) {
  if (rows.size() != targets.size()) throw ShapeError("feature stacks differ in depth");
  torch::Tensor loss;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].sizes() != targets[i].sizes()) throw ShapeError("feature layer " + std::to_string(i) + " differs in shape");
    auto term = (rows[i] - targets[i]).pow(2).mean();
    loss = loss.defined() ? loss + term : term;
  }
  return loss;
}

std::vector<torch::Tensor> remap_targets(const std::vector<torch::Tensor>& rows_a, const torch::Tensor& B,
                                         const torch::Tensor& A, const FeatureExtractor& features, int bins) {
  torch::NoGradGuard no_grad;
  auto rows_b = channel_rows(features.activations(as_image_batch(B).to(A.scalar_type())));
  if (rows_a.size() != rows_b.size()) throw ShapeError("feature stacks differ in depth");
  std::vector<torch::Tensor> out;
  for (size_t i = 0; i < rows_a.size(); ++i) {
    if (rows_a[i].size(0) != rows_b[i].size(0))
      throw ShapeError("feature layer " + std::to_string(i) + " differs in channel count");
    out.push_back(histogram_remap_rows(rows_a[i], rows_b[i], bins));
  }
  return out;
}

}  // namespace

torch::Tensor histogram_style_loss(const torch::Tensor& A, const torch::Tensor& B, const FeatureExtractor& features,
                                   int bins) {
  auto rows_a = channel_rows(features.activations(as_image_batch(A)));
  return sum_layer_mse(rows_a, remap_targets(rows_a, B, A, features, bins));
}

std::vector<torch::Tensor> histogram_style_targets(const torch::Tensor& A, const torch::Tensor& B,
                                                   const FeatureExtractor& features, int bins) {
  torch::NoGradGuard no_grad;
  auto rows_a = channel_rows(features.activations(as_image_batch(A)));
  return remap_targets(rows_a, B, A, features, bins);
}

torch::Tensor histogram_style_loss_to(const torch::Tensor& A, const std::vector<torch::Tensor>& targets,
                                      const FeatureExtractor& features) {
  return sum_layer_mse(channel_rows(features.activations(as_image_batch(A))), targets);
}

namespace {

struct FreezeGuard {
  explicit FreezeGuard(torch::nn::Module& m) {
    for (auto& p : m.parameters()) {
      params.push_back(p);
      flags.push_back(p.requires_grad());
      p.requires_grad_(false);
    }
  }
  ~FreezeGuard() {
    for (size_t i = 0; i < params.size(); ++i) params[i].requires_grad_(flags[i]);
  }
  std::vector<torch::Tensor> params;
  std::vector<bool> flags;
};

}  // namespace

StyleSearchState search_new_style(ResnetGenerator& G, const torch::Tensor& photos, const torch::Tensor& target,
                                  const FeatureExtractor& features, const StyleSearchOptions& opts) {
  if (opts.steps < 1) throw ValidationError("style search needs at least one step");
  if (!(opts.lr > 0)) throw ValidationError("style search learning rate must be positive");
  if (G->options().style_channels != 3) throw ConfigError("style search needs a style-conditioned generator");
  FreezeGuard frozen(*G);
  const auto dtype = G->parameters().front().scalar_type();
  auto p = as_image_batch(photos).to(dtype);
  auto d_target = as_image_batch(target).detach().to(dtype);

  std::array<double, 3> init{};
  if (opts.init) {
    init = opts.init->values;
  } else {
    Rng rng(opts.seed);
    double sum = 0;
    for (auto& x : init) sum += (x = uniform01(rng));
    if (sum <= 0) init = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    else for (auto& x : init) x /= sum;
  }
  auto s = torch::tensor({init[0], init[1], init[2]}, torch::kFloat64).view({1, 3}).to(p.scalar_type());
  s.requires_grad_(true);
  torch::optim::Adam adam({s}, torch::optim::AdamOptions(opts.lr));

  StyleSearchState state;
  state.loss = std::numeric_limits<double>::infinity();
  for (int step = 0; step < opts.steps; ++step) {
    adam.zero_grad();
    auto d = G->forward(p, s.expand({p.size(0), 3}));
    auto loss = histogram_style_loss(d, d_target, features, opts.bins);
    const double value = loss.item<double>();
    auto current = StyleVector::from_tensor(s.detach(), /*relaxed=*/true);
    state.trace.push_back({step, current, value});
    if (!std::isfinite(value))
      throw StyleSearchAborted("style search loss became non-finite at step " + std::to_string(step), state);
    if (value < state.loss) {
      state.loss = value;
      state.s = current;
      state.step = step;
    }
    loss.backward();
    adam.step();
    if (opts.project_simplex) {
      torch::NoGradGuard no_grad;
      auto v = StyleVector::from_tensor(s.detach()).values;
      auto pr = project_simplex(v);
      s.copy_(torch::tensor({pr[0], pr[1], pr[2]}, torch::kFloat64).view({1, 3}));
    }
  }
  return state;
}

void write_trace_csv(const std::filesystem::path& path, const StyleSearchState& state) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "step,s0,s1,s2,loss\n";
  for (const auto& e : state.trace)
    out << e.step << ',' << e.s.values[0] << ',' << e.s.values[1] << ',' << e.s.values[2] << ',' << e.loss << '\n';
}

}  // namespace apdraw
