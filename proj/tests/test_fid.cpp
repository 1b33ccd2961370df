#include <cmath>

#include <gtest/gtest.h>

#include "apdraw/fid.hpp"
#include "apdraw/rng.hpp"

using namespace apdraw;

namespace {

GaussianFit fit(std::vector<double> mean, std::vector<std::vector<double>> cov) {
  GaussianFit g;
  g.mean = torch::tensor(mean, torch::kFloat64);
  std::vector<torch::Tensor> rows;
  for (const auto& r : cov) rows.push_back(torch::tensor(r, torch::kFloat64));
  g.cov = torch::stack(rows);
  return g;
}

class IdentityFeatures final : public FeatureExtractor {
 public:
  std::vector<torch::Tensor> activations(const torch::Tensor& images) const override { return {images}; }
};

}  // namespace

TEST(Fid, FitGaussian) {
  auto x = torch::tensor({{1.0, 2.0}, {3.0, 6.0}}, torch::kFloat64);
  auto g = fit_gaussian(x);
  EXPECT_TRUE(torch::allclose(g.mean, torch::tensor({2.0, 4.0}, torch::kFloat64)));
  // Unbiased: deviations (+-1, +-2) over N - 1 = 1.
  EXPECT_TRUE(torch::allclose(g.cov, torch::tensor({{2.0, 4.0}, {4.0, 8.0}}, torch::kFloat64)));
  EXPECT_THROW(fit_gaussian(torch::zeros({1, 3})), ValidationError);
  EXPECT_THROW(fit_gaussian(torch::zeros({4})), ShapeError);
}

TEST(Fid, OneDimensionalClosedForm) {
  // (m1 - m2)^2 + (s1 - s2)^2 with s1 = 2, s2 = 1.
  EXPECT_NEAR(frechet_distance(fit({0.0}, {{4.0}}), fit({1.0}, {{1.0}})), 2.0, 1e-12);
}

TEST(Fid, NonCommutingCovariances) {
  // S1 S2 = [[2, 3], [1, 6]]: trace 8, det 9, eigenvalues 4 +- sqrt(7).
  auto a = fit({0.0, 0.0}, {{2.0, 1.0}, {1.0, 2.0}});
  auto b = fit({1.0, -1.0}, {{1.0, 0.0}, {0.0, 3.0}});
  const double tr_sqrt = std::sqrt(4 + std::sqrt(7.0)) + std::sqrt(4 - std::sqrt(7.0));
  EXPECT_NEAR(frechet_distance(a, b), 2.0 + 4.0 + 4.0 - 2 * tr_sqrt, 1e-10);
  EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-10);
}

TEST(Fid, SameSetIsZero) {
  auto b = Backbones::fallback();
  auto x = seeded_uniform({64, 3, 32, 32}, 1, 0, 1).to(torch::kFloat32);
  EXPECT_LT(std::abs(evaluate_fid(x, x, *b.fid)), 1e-3);
}

TEST(Fid, GaussianMeanShift) {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(7);
  const int64_t n = 20000;
  auto mu = torch::tensor({1.0, -0.5, 0.25, 2.0}, torch::kFloat64);
  auto a = torch::randn({n, 4}, gen, torch::kFloat64);
  auto b = torch::randn({n, 4}, gen, torch::kFloat64) + mu;
  const double expected = mu.pow(2).sum().item<double>();
  EXPECT_NEAR(frechet_distance(a, b), expected, 0.05 * expected);
}

TEST(Fid, SingularCovarianceStaysFinite) {
  auto x = seeded_uniform({3, 8}, 2, 0, 1);  // rank <= 2 in 8 dimensions
  auto y = seeded_uniform({3, 8}, 3, 0, 1);
  const double d = frechet_distance(x, y);
  EXPECT_TRUE(std::isfinite(d));
  EXPECT_GE(d, -1e-6);
  EXPECT_THROW(frechet_distance(torch::zeros({3, 4}), torch::zeros({3, 5})), ShapeError);
}

TEST(Fid, NeedsTwoImagesPerSet) {
  auto b = Backbones::fallback();
  auto x = seeded_uniform({4, 3, 16, 16}, 4, 0, 1).to(torch::kFloat32);
  EXPECT_THROW(evaluate_fid(x.slice(0, 0, 1), x, *b.fid), ValidationError);
  EXPECT_THROW(evaluate_fid(x, x.slice(0, 0, 1), *b.fid), ValidationError);
}

TEST(Fid, EvaluateQuality) {
  ImageHeadOptions o;
  o.outputs = 1;
  o.external = std::make_shared<IdentityFeatures>();
  o.external_dim = 1;
  ImageHead M(o);
  {
    torch::NoGradGuard ng;
    for (auto& p : M->named_parameters()) p.value().fill_(p.key().find("weight") != std::string::npos ? 1.0 : 0.0);
  }
  // Drawing value v scores 0.1 + 0.9 sigmoid(v); 0 -> 0.55, +-inf-ish -> 1.0 / 0.1.
  auto d = torch::stack({torch::full({1, 8, 8}, 0.0), torch::full({1, 8, 8}, 100.0), torch::full({1, 8, 8}, -100.0)});
  EXPECT_NEAR(evaluate_quality(d, M), (0.55 + 1.0 + 0.1) / 3, 1e-6);
  EXPECT_THROW(evaluate_quality(torch::zeros({0, 1, 8, 8}), M), ValidationError);
}
