#include "apdraw/fid.hpp"

#include <iostream>

namespace apdraw {
namespace {

// Symmetric PSD square root through the eigendecomposition.
torch::Tensor sqrt_psd(const torch::Tensor& s) {
  auto [vals, vecs] = torch::linalg_eigh(s);
  return vecs.matmul(torch::diag(vals.clamp_min(0).sqrt())).matmul(vecs.transpose(0, 1));
}

torch::Tensor regularized(const torch::Tensor& cov, const char* which) {
  auto vals = torch::linalg_eigvalsh(cov);
  const double lo = vals.min().item<double>(), hi = vals.max().item<double>();
  if (lo > 1e-12 * std::max(hi, 1.0)) return cov;
  std::cerr << "warning: singular covariance for the " << which << " set; adding " << kCovarianceEpsilon << " * I\n";
  return cov + kCovarianceEpsilon * torch::eye(cov.size(0), cov.options());
}

}  // namespace

GaussianFit fit_gaussian(const torch::Tensor& embeddings) {
  if (embeddings.dim() != 2) throw ShapeError("embeddings must be N x E");
  if (embeddings.size(0) < 2) throw ValidationError("FID needs at least 2 samples per set");
  auto x = embeddings.detach().to(torch::kFloat64);
  GaussianFit g;
  g.mean = x.mean(0);
  auto c = x - g.mean;
  g.cov = c.transpose(0, 1).matmul(c) / static_cast<double>(x.size(0) - 1);
  return g;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  if (a.mean.sizes() != b.mean.sizes()) throw ShapeError("embedding dimensions differ");
  auto s1 = regularized(a.cov, "first");
  auto s2 = regularized(b.cov, "second");
  auto r1 = sqrt_psd(s1);
  auto inner = r1.matmul(s2).matmul(r1);
  inner = (inner + inner.transpose(0, 1)) * 0.5;
  // tr((S1 S2)^(1/2)) = tr((S1^(1/2) S2 S1^(1/2))^(1/2)) = sum of sqrt eigenvalues.
  const double tr_sqrt = torch::linalg_eigvalsh(inner).clamp_min(0).sqrt().sum().item<double>();
  const double mean_term = (a.mean - b.mean).pow(2).sum().item<double>();
  return mean_term + s1.trace().item<double>() + s2.trace().item<double>() - 2.0 * tr_sqrt;
}

double frechet_distance(const torch::Tensor& embeddings_a, const torch::Tensor& embeddings_b) {
  return frechet_distance(fit_gaussian(embeddings_a), fit_gaussian(embeddings_b));
}

double evaluate_fid(const torch::Tensor& generated, const torch::Tensor& reference, const FidEmbedder& embedder) {
  if (generated.size(0) < 2 || reference.size(0) < 2) throw ValidationError("FID needs at least 2 images per set");
  torch::NoGradGuard no_grad;
  return frechet_distance(embedder.embed(generated), embedder.embed(reference));
}

double evaluate_quality(const torch::Tensor& drawings, ImageHead& M) {
  auto d = as_image_batch(drawings);
  if (d.size(0) == 0) throw ValidationError("quality evaluation needs at least one drawing");
  torch::NoGradGuard no_grad;
  return predict_quality(d, M).to(torch::kFloat64).mean().item<double>();
}

}  // namespace apdraw
