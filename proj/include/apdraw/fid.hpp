#pragma once

#include <torch/torch.h>

#include "apdraw/backbones.hpp"
#include "apdraw/networks.hpp"

namespace apdraw {

inline constexpr double kCovarianceEpsilon = 1e-6;

struct GaussianFit {
  torch::Tensor mean;  // E, float64
  torch::Tensor cov;   // E x E, float64
};

/// Sample mean and unbiased covariance of N x E rows (N >= 2).
GaussianFit fit_gaussian(const torch::Tensor& embeddings);

/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)). A singular covariance gets
/// epsilon * I added (with a warning).
double frechet_distance(const GaussianFit& a, const GaussianFit& b);
double frechet_distance(const torch::Tensor& embeddings_a, const torch::Tensor& embeddings_b);

/// FID between two image sets (N x C x H x W, N >= 2 each) in the embedder's space.
double evaluate_fid(const torch::Tensor& generated, const torch::Tensor& reference, const FidEmbedder& embedder);

/// Mean predicted quality over a non-empty set of drawings.
double evaluate_quality(const torch::Tensor& drawings, ImageHead& M);

}  // namespace apdraw
