#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "apdraw/backbones.hpp"
#include "apdraw/common.hpp"
#include "apdraw/networks.hpp"

namespace apdraw {

/// (1 - t) a + t b for t in [0, 1].
StyleVector interpolate_styles(const StyleVector& a, const StyleVector& b, double t);

/// Euclidean projection onto the probability simplex.
std::array<double, 3> project_simplex(const std::array<double, 3>& v);

/// Monotone CDF-matching remap of `source` values onto the distribution of
/// `target` (both flattened). `bins == 0` matches exact empirical quantiles, so a
/// source equal to its target maps to itself; `bins >= 2` goes through the
/// target's piecewise-linear binned CDF. Output has the source's shape and dtype.
torch::Tensor histogram_remap(const torch::Tensor& source, const torch::Tensor& target, int bins = 0);

/// Row-wise histogram_remap over the last dimension of C x K tensors.
torch::Tensor histogram_remap_rows(const torch::Tensor& source, const torch::Tensor& target, int bins = 0);

/// Sum over the five feature layers of the mean squared difference between the
/// activations of A and their per-channel remaps onto B's activations. Remapped
/// targets are constants, so the gradient flows only through A's activations.
torch::Tensor histogram_style_loss(const torch::Tensor& A, const torch::Tensor& B, const FeatureExtractor& features,
                                   int bins = 0);

/// The remapped activations (one C x K tensor per layer, detached) that
/// histogram_style_loss compares A against.
std::vector<torch::Tensor> histogram_style_targets(const torch::Tensor& A, const torch::Tensor& B,
                                                   const FeatureExtractor& features, int bins = 0);
/// The same objective against fixed targets.
torch::Tensor histogram_style_loss_to(const torch::Tensor& A, const std::vector<torch::Tensor>& targets,
                                      const FeatureExtractor& features);

struct TraceEntry {
  int step = 0;
  StyleVector s;
  double loss = 0;
};

struct StyleSearchState {
  StyleVector s;  // best code seen
  int step = 0;   // step at which it was seen
  double loss = 0;
  std::vector<TraceEntry> trace;
};

struct StyleSearchOptions {
  int steps = 200;
  double lr = 0.05;
  uint64_t seed = 0;
  std::optional<StyleVector> init;  // default: uniform components divided by their sum
  bool project_simplex = false;
  int bins = 0;
};

/// Non-finite loss during the search; carries the trace up to that point.
struct StyleSearchAborted : NonFiniteError {
  StyleSearchAborted(const std::string& what, StyleSearchState s) : NonFiniteError(what), state(std::move(s)) {}
  StyleSearchState state;
};

/// Adam over the style code only, minimizing histogram_style_loss(G(p, s), target)
/// with G frozen. The trace holds the loss at the code in effect before each update.
StyleSearchState search_new_style(ResnetGenerator& G, const torch::Tensor& photos, const torch::Tensor& target,
                                  const FeatureExtractor& features, const StyleSearchOptions& opts = {});

/// step,s0,s1,s2,loss
void write_trace_csv(const std::filesystem::path& path, const StyleSearchState& state);

}  // namespace apdraw
