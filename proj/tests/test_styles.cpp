#include <fstream>

#include <gtest/gtest.h>

#include "apdraw/rng.hpp"
#include "apdraw/styles.hpp"
#include "test_util.hpp"

using namespace apdraw;
using apdraw::testing::gradient_check;
using apdraw::testing::median;
using apdraw::testing::TempDir;

namespace {

/// Normalized histogram over [lo, hi] with `bins` equal bins.
std::vector<double> histogram(const torch::Tensor& x, int bins, double lo, double hi) {
  std::vector<double> h(static_cast<size_t>(bins), 0.0);
  auto v = x.to(torch::kFloat64).contiguous().view(-1);
  const auto* p = v.data_ptr<double>();
  for (int64_t i = 0; i < v.numel(); ++i) {
    int b = static_cast<int>((p[i] - lo) / (hi - lo) * bins);
    h[static_cast<size_t>(std::clamp(b, 0, bins - 1))] += 1.0 / static_cast<double>(v.numel());
  }
  return h;
}

double histogram_l1(const torch::Tensor& a, const torch::Tensor& b, int bins) {
  const double lo = b.min().item<double>(), hi = b.max().item<double>();
  auto ha = histogram(a, bins, lo, hi), hb = histogram(b, bins, lo, hi);
  double l1 = 0;
  for (size_t i = 0; i < ha.size(); ++i) l1 += std::abs(ha[i] - hb[i]);
  return l1;
}

bool monotone(const torch::Tensor& source, const torch::Tensor& mapped) {
  auto order = std::get<1>(source.view(-1).sort());
  auto m = mapped.view(-1).index_select(0, order);
  return (m.slice(0, 1) - m.slice(0, 0, -1)).min().item<double>() >= 0;
}

ResnetGenerator toy_generator(uint64_t seed, int64_t size = 32) {
  auto G = make_drawing_generator(GeneratorConfig::toy(size));
  init_weights(*G, seed);
  return G;
}

}  // namespace

// ---- interpolation and projection -------------------------------------------------------

TEST(Styles, InterpolationEndpointsAndMidpoint) {
  auto a = StyleVector::basis(1), b = StyleVector::basis(2);
  EXPECT_EQ(interpolate_styles(a, b, 0.0).values, a.values);
  EXPECT_EQ(interpolate_styles(a, b, 1.0).values, b.values);
  auto mid = interpolate_styles(a, b, 0.5).values;
  EXPECT_EQ(mid, (std::array<double, 3>{0.0, 0.5, 0.5}));
  EXPECT_THROW(interpolate_styles(a, b, 1.5), ValidationError);
  EXPECT_THROW(interpolate_styles(a, b, std::nan("")), ValidationError);
}

TEST(Styles, InterpolationStaysOnSimplex) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    auto s = interpolate_styles(StyleVector::basis(0), StyleVector::basis(2), uniform01(rng));
    EXPECT_NEAR(s.values[0] + s.values[1] + s.values[2], 1.0, 1e-12);
    for (double v : s.values) EXPECT_GE(v, 0.0);
  }
}

TEST(Styles, SimplexProjection) {
  EXPECT_EQ(project_simplex({0.2, 0.3, 0.5}), (std::array<double, 3>{0.2, 0.3, 0.5}));
  EXPECT_EQ(project_simplex({2.0, 0.0, 0.0}), (std::array<double, 3>{1.0, 0.0, 0.0}));
  auto p = project_simplex({0.5, 0.5, 0.5});
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 3> v{uniform01(rng) * 4 - 2, uniform01(rng) * 4 - 2, uniform01(rng) * 4 - 2};
    auto q = project_simplex(v);
    EXPECT_NEAR(q[0] + q[1] + q[2], 1.0, 1e-12);
    for (double x : q) EXPECT_GE(x, 0.0);
    // Projection is idempotent.
    auto qq = project_simplex(q);
    for (size_t k = 0; k < 3; ++k) EXPECT_NEAR(qq[k], q[k], 1e-12);
  }
}

// ---- histogram remap --------------------------------------------------------------------

TEST(Styles, RemapThreePointExample) {
  auto src = torch::tensor({0.0, 0.5, 1.0}, torch::kFloat64);
  auto tgt = torch::tensor({0.0, 0.25, 0.5}, torch::kFloat64);
  auto out = histogram_remap(src, tgt);
  EXPECT_TRUE(torch::allclose(out, tgt, 0, 1e-15)) << out;
  // Order of the source is kept, whatever the order of the input values.
  auto shuffled = histogram_remap(torch::tensor({1.0, 0.0, 0.5}, torch::kFloat64), tgt);
  EXPECT_TRUE(torch::allclose(shuffled, torch::tensor({0.5, 0.0, 0.25}, torch::kFloat64), 0, 1e-15));
}

TEST(Styles, RemapOfSameDistributionIsIdentity) {
  auto x = seeded_uniform({1000}, 3, -1, 2).to(torch::kFloat64);
  EXPECT_TRUE(torch::equal(histogram_remap(x, x), x));
  // Binned mode: identity within one bin width.
  const double width = 3.0 / 256;
  EXPECT_LE((histogram_remap(x, x, 256) - x).abs().max().item<double>(), width);
}

TEST(Styles, RemapConstantTarget) {
  auto x = seeded_uniform({50}, 4, 0, 1).to(torch::kFloat64);
  auto c = torch::full({20}, 0.3, torch::kFloat64);
  EXPECT_TRUE(torch::equal(histogram_remap(x, c), torch::full({50}, 0.3, torch::kFloat64)));
  EXPECT_TRUE(torch::equal(histogram_remap(x, c, 16), torch::full({50}, 0.3, torch::kFloat64)));
}

TEST(Styles, RemapMatchesTargetHistogram) {
  for (int bins : {0, 64, 256}) {
    const int measure = bins == 0 ? 256 : bins;
    for (uint64_t seed = 0; seed < 3; ++seed) {
      auto src = seeded_uniform({10000}, seed, 0, 1).to(torch::kFloat64);
      auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed + 100);
      auto tgt = torch::randn({12000}, gen, torch::kFloat64).pow(3);  // heavy tails
      auto out = histogram_remap(src, tgt, bins);
      EXPECT_LE(histogram_l1(out, tgt, measure), 2.0 / measure) << "bins " << bins << " seed " << seed;
      EXPECT_TRUE(monotone(src, out));
    }
  }
}

TEST(Styles, RemapKeepsShapeAndDtype) {
  auto src = seeded_uniform({2, 3, 4}, 5, 0, 1).to(torch::kFloat32);
  auto out = histogram_remap(src, seeded_uniform({7}, 6, 0, 1));
  EXPECT_EQ(out.sizes(), src.sizes());
  EXPECT_EQ(out.scalar_type(), torch::kFloat32);
  EXPECT_THROW(histogram_remap(src, torch::empty({0})), ValidationError);
  EXPECT_THROW(histogram_remap(src, src, 1), ValidationError);
}

TEST(Styles, RemapRowsAreIndependent) {
  auto src = seeded_uniform({3, 100}, 7, 0, 1).to(torch::kFloat64);
  auto tgt = seeded_uniform({3, 80}, 8, 0, 1).to(torch::kFloat64) * torch::tensor({1.0, 10.0, 100.0}, torch::kFloat64).view({3, 1});
  auto rows = histogram_remap_rows(src, tgt);
  for (int64_t r = 0; r < 3; ++r) EXPECT_TRUE(torch::equal(rows[r], histogram_remap(src[r], tgt[r])));
}

// ---- histogram style loss -----------------------------------------------------------------

TEST(Styles, HistogramLossOfSelfIsZero) {
  auto b = Backbones::fallback();
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto a = seeded_uniform({1, 1, 32, 32}, seed, 0, 1);
    EXPECT_LT(histogram_style_loss(a, a, *b.features).item<double>(), 1e-6);
  }
}

TEST(Styles, HistogramLossSeesStyleNotLayout) {
  auto b = Backbones::fallback();
  auto a = seeded_uniform({1, 1, 32, 32}, 9, 0, 1);
  // An independent draw of the same noise has different pixels but the same
  // activation statistics; a darker drawing changes the statistics.
  const double resampled = histogram_style_loss(a, seeded_uniform({1, 1, 32, 32}, 90, 0, 1), *b.features).item<double>();
  const double darker = histogram_style_loss(a, a * 0.3, *b.features).item<double>();
  EXPECT_LT(resampled, 0.5 * darker) << resampled << " vs " << darker;
}

TEST(Styles, HistogramLossTargetsAreDetached) {
  auto b = Backbones::fallback();
  auto a = seeded_uniform({1, 1, 16, 16}, 10, 0, 1).requires_grad_(true);
  auto t = seeded_uniform({1, 1, 16, 16}, 11, 0, 1).requires_grad_(true);
  histogram_style_loss(a, t, *b.features).backward();
  EXPECT_TRUE(a.grad().defined());
  EXPECT_FALSE(t.grad().defined());
  auto targets = histogram_style_targets(a, t, *b.features);
  ASSERT_EQ(targets.size(), 5u);
  for (const auto& x : targets) EXPECT_FALSE(x.requires_grad());
  EXPECT_NEAR(histogram_style_loss_to(a, targets, *b.features).item<double>(),
              histogram_style_loss(a, t, *b.features).item<double>(), 1e-6);
}

TEST(Styles, GradientHistogramLoss) {
  auto b = Backbones::fallback();
  auto a = seeded_uniform({1, 1, 8, 8}, 12, 0, 1).to(torch::kFloat64);
  auto t = seeded_uniform({1, 1, 8, 8}, 13, 0, 1).to(torch::kFloat64);
  auto targets = histogram_style_targets(a, t, *b.features);
  auto loss = [&](const torch::Tensor& x) { return histogram_style_loss_to(x, targets, *b.features); };
  EXPECT_LT(gradient_check(loss, a), 1e-3);
}

// ---- search -------------------------------------------------------------------------------

TEST(Styles, SearchHoldsSelfTarget) {
  auto b = Backbones::fallback();
  auto G = toy_generator(20);
  auto p = seeded_uniform({1, 3, 32, 32}, 21, 0, 1).to(torch::kFloat32);
  torch::Tensor target;
  {
    torch::NoGradGuard ng;
    target = generate_drawing(p, StyleVector::basis(0), G);
  }
  StyleSearchOptions o;
  o.steps = 20;
  o.init = StyleVector::basis(0);
  auto st = search_new_style(G, p, target, *b.features, o);
  ASSERT_EQ(st.trace.size(), 20u);
  for (const auto& e : st.trace) EXPECT_LT(e.loss, 1e-4) << "step " << e.step;
  EXPECT_LT(st.loss, 1e-4);
}

TEST(Styles, SearchFromRandomStartReducesLoss) {
  auto b = Backbones::fallback();
  auto G = toy_generator(22);
  auto p = seeded_uniform({1, 3, 32, 32}, 23, 0, 1).to(torch::kFloat32);
  torch::Tensor target;
  {
    torch::NoGradGuard ng;
    target = generate_drawing(p, StyleVector::basis(2), G);
  }
  std::vector<double> drops;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    StyleSearchOptions o;
    o.steps = 40;
    o.seed = seed;
    auto st = search_new_style(G, p, target, *b.features, o);
    drops.push_back(st.trace.front().loss - st.trace.back().loss);
    EXPECT_LE(st.loss, st.trace.front().loss);
  }
  EXPECT_GT(median(drops), 0.0);
}

TEST(Styles, SearchLeavesGeneratorUntouched) {
  auto b = Backbones::fallback();
  auto G = toy_generator(24);
  std::vector<torch::Tensor> before;
  for (const auto& p : G->parameters()) before.push_back(p.detach().clone());
  auto p = seeded_uniform({1, 3, 32, 32}, 25, 0, 1).to(torch::kFloat32);
  StyleSearchOptions o;
  o.steps = 5;
  search_new_style(G, p, seeded_uniform({1, 1, 32, 32}, 26, 0, 1), *b.features, o);
  auto params = G->parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    EXPECT_TRUE(torch::equal(params[i], before[i]));
    EXPECT_TRUE(params[i].requires_grad());
  }
}

TEST(Styles, SearchWithProjectionStaysOnSimplex) {
  auto b = Backbones::fallback();
  auto G = toy_generator(27);
  auto p = seeded_uniform({1, 3, 32, 32}, 28, 0, 1).to(torch::kFloat32);
  StyleSearchOptions o;
  o.steps = 10;
  o.lr = 0.5;
  o.project_simplex = true;
  auto st = search_new_style(G, p, seeded_uniform({1, 1, 32, 32}, 29, 0, 1), *b.features, o);
  for (const auto& e : st.trace) {
    EXPECT_NEAR(e.s.values[0] + e.s.values[1] + e.s.values[2], 1.0, 1e-5);
    for (double v : e.s.values) EXPECT_GE(v, -1e-7);
  }
}

TEST(Styles, SearchRejectsBadOptions) {
  auto b = Backbones::fallback();
  auto G = toy_generator(30);
  auto p = seeded_uniform({1, 3, 32, 32}, 31, 0, 1).to(torch::kFloat32);
  auto t = seeded_uniform({1, 1, 32, 32}, 32, 0, 1);
  StyleSearchOptions o;
  o.steps = 0;
  EXPECT_THROW(search_new_style(G, p, t, *b.features, o), ValidationError);
  o.steps = 1;
  o.lr = 0;
  EXPECT_THROW(search_new_style(G, p, t, *b.features, o), ValidationError);
  auto F = make_photo_generator(GeneratorConfig::toy(32));
  EXPECT_THROW(search_new_style(F, p, t, *b.features, StyleSearchOptions{}), ConfigError);
}

TEST(Styles, TraceCsv) {
  TempDir dir;
  StyleSearchState st;
  st.trace.push_back({0, StyleVector::basis(0), 0.5});
  st.trace.push_back({1, StyleVector::basis(1), 0.25});
  write_trace_csv(dir / "trace.csv", st);
  std::ifstream in(dir / "trace.csv");
  std::string header, first, second, extra;
  std::getline(in, header);
  std::getline(in, first);
  std::getline(in, second);
  EXPECT_EQ(header, "step,s0,s1,s2,loss");
  EXPECT_EQ(first, "0,1,0,0,0.5");
  EXPECT_EQ(second, "1,0,1,0,0.25");
  EXPECT_FALSE(std::getline(in, extra));
}
