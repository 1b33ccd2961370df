#include <fstream>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "apdraw/dissect.hpp"
#include "apdraw/image_io.hpp"
#include "apdraw/rng.hpp"
#include "apdraw/synthetic.hpp"
#include "test_util.hpp"

using namespace apdraw;
using apdraw::testing::TempDir;

namespace {

torch::Tensor disc(int64_t size, double cy, double cx, double r) {
  auto ys = torch::arange(size, torch::kFloat64).view({size, 1}).expand({size, size});
  auto xs = torch::arange(size, torch::kFloat64).view({1, size}).expand({size, size});
  return ((ys - cy).pow(2) + (xs - cx).pow(2)).le(r * r).to(torch::kFloat32);
}

/// Toy G whose flat-layer unit 0 passes photo channel 0 through its centre tap
/// and ignores everything else.
ResnetGenerator wired_generator(int64_t size) {
  auto G = make_drawing_generator(GeneratorConfig::toy(size));
  init_weights(*G, 1);
  torch::NoGradGuard ng;
  for (auto& p : G->named_parameters()) {
    if (p.key() == "flat.weight") {
      p.value()[0].zero_();
      p.value()[0][0][3][3] = 1.0;
    } else if (p.key() == "flat.bias") {
      p.value()[0] = 0.0;
    }
  }
  return G;
}

}  // namespace

TEST(Dissect, IouHalfOverlapIsOneThird) {
  auto map = torch::zeros({1, 16, 16});
  map.slice(2, 0, 8).fill_(1);  // columns 0..7
  auto mask = torch::zeros({1, 16, 16});
  mask.slice(2, 4, 12).fill_(1);  // columns 4..11
  EXPECT_EQ(unit_region_iou(map, mask, 0.5), 1.0 / 3.0);
}

TEST(Dissect, IouProperties) {
  auto map = seeded_uniform({2, 16, 16}, 1, 0, 1);
  auto bin = map.gt(0.7).to(torch::kFloat32);
  EXPECT_EQ(unit_region_iou(map, bin, 0.7), 1.0);
  EXPECT_EQ(unit_region_iou(map, torch::zeros_like(map), 2.0), 0.0);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto m = seeded_uniform({2, 16, 16}, seed + 10, 0, 1).gt(0.5);
    const double iou = unit_region_iou(map, m, 0.3);
    EXPECT_GE(iou, 0.0);
    EXPECT_LE(iou, 1.0);
  }
  EXPECT_THROW(unit_region_iou(map, torch::zeros({1, 16, 16}), 0.5), ShapeError);
}

/// Brute force over the same 64 quantile candidates: I / H from the 2 x 2 counts.
double oracle_threshold(const torch::Tensor& map, const torch::Tensor& mask) {
  auto v = map.reshape({-1}).to(torch::kFloat64);
  auto m = mask.reshape({-1}).gt(0.5);
  auto sorted = std::get<0>(v.sort());
  const double n = static_cast<double>(v.numel());
  auto h = [&](std::initializer_list<double> counts) {
    double out = 0;
    for (double c : counts)
      if (c > 0) out -= c / n * std::log(c / n);
    return out;
  };
  double best = -1, best_t = 0;
  for (int k = 1; k <= 64; ++k) {
    const double t = sorted[static_cast<int64_t>(std::floor(k / 65.0 * (n - 1)))].item<double>();
    auto bin = v.gt(t);
    const double on = bin.sum().item<double>(), mk = m.sum().item<double>();
    if (on == 0 || on == n) continue;
    const double n11 = (bin & m).sum().item<double>(), n10 = on - n11, n01 = mk - n11, n00 = n - n11 - n10 - n01;
    const double joint = h({n11, n10, n01, n00});
    const double q = (h({on, n - on}) + h({mk, n - mk}) - joint) / joint;
    if (q > best) {
      best = q;
      best_t = t;
    }
  }
  return best_t;
}

TEST(Dissect, ThresholdFindsPlantedRegion) {
  auto mask = disc(32, 16, 16, 6).unsqueeze(0);
  auto map = mask * 2.0 + seeded_uniform({1, 32, 32}, 2, 0, 0.5);
  auto th = optimal_threshold(map, mask);
  ASSERT_TRUE(th.threshold);
  EXPECT_EQ(*th.threshold, oracle_threshold(map, mask));
  // The quantile grid cannot cut exactly at the disc edge, but lands within a step.
  EXPECT_GT(unit_region_iou(map, mask, *th.threshold), 0.9);
}

TEST(Dissect, ThresholdMatchesBruteForceOnNoise) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto mask = disc(24, 8 + seed, 12, 5).unsqueeze(0);
    auto map = mask * 0.5 + seeded_uniform({1, 24, 24}, seed + 20, 0, 1);
    auto th = optimal_threshold(map, mask);
    ASSERT_TRUE(th.threshold);
    EXPECT_EQ(*th.threshold, oracle_threshold(map, mask)) << seed;
  }
}

TEST(Dissect, ThresholdInvariantUnderMonotoneRescale) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto mask = disc(32, 12, 20, 7).unsqueeze(0).expand({2, 32, 32}).contiguous();
    auto map = mask * 0.3 + seeded_uniform({2, 32, 32}, seed, 0, 1);
    auto rescaled = torch::exp(3.0 * map) - 5.0;
    auto a = optimal_threshold(map, mask), b = optimal_threshold(rescaled, mask);
    ASSERT_TRUE(a.threshold && b.threshold);
    EXPECT_TRUE(torch::equal(map.gt(*a.threshold), rescaled.gt(*b.threshold)));
    EXPECT_NEAR(a.information_quality, b.information_quality, 1e-12);
  }
}

TEST(Dissect, DegenerateInputsHaveNoThreshold) {
  auto map = seeded_uniform({1, 8, 8}, 3, 0, 1);
  EXPECT_FALSE(optimal_threshold(map, torch::zeros({1, 8, 8})).threshold);
  EXPECT_FALSE(optimal_threshold(map, torch::ones({1, 8, 8})).threshold);
  EXPECT_FALSE(optimal_threshold(torch::ones({1, 8, 8}), disc(8, 4, 4, 2).unsqueeze(0)).threshold);
  auto bad = map.clone();
  bad[0][0][0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(optimal_threshold(bad, disc(8, 4, 4, 2).unsqueeze(0)), ValidationError);
}

TEST(Dissect, NoiseUnitsAreRarelyInterpretable) {
  // Facial-part sized masks (about 3% of the image each).
  const int64_t n = 4, s = 64;
  auto masks = torch::stack({disc(s, 24, 20, 6), disc(s, 24, 44, 6), disc(s, 46, 32, 6)}).unsqueeze(0).expand({n, 3, s, s});
  int interpretable = 0, total = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto map = seeded_uniform({n, s, s}, seed, -1, 1);
    double best = 0;
    for (int64_t r = 0; r < 3; ++r) {
      auto m = masks.select(1, r);
      auto th = optimal_threshold(map, m);
      if (th.threshold) best = std::max(best, unit_region_iou(map, m, *th.threshold));
    }
    interpretable += best > kInterpretableIou ? 1 : 0;
    ++total;
  }
  EXPECT_LE(static_cast<double>(interpretable) / total, 0.05);
}

TEST(Dissect, WiredUnitIsLabelledWithItsRegion) {
  const int64_t s = 64, n = 3;
  auto G = wired_generator(s);
  std::vector<torch::Tensor> photos, masks;
  for (int64_t i = 0; i < n; ++i) {
    auto target = disc(s, 20 + 8 * i, 24 + 6 * i, 9);
    auto other = disc(s, 48, 48 - 10 * i, 7);
    auto photo = seeded_uniform({3, s, s}, 40 + i, 0, 1).to(torch::kFloat32);
    photo[0] = target;
    photos.push_back(photo);
    masks.push_back(torch::stack({other, target}));
  }
  auto report = label_units(G, torch::stack(photos), torch::stack(masks), {"other", "disc"});
  ASSERT_FALSE(report.units.empty());
  const auto& u = report.units.front();
  EXPECT_EQ(u.layer, "flat");
  EXPECT_EQ(u.unit, 0);
  EXPECT_EQ(u.best_region, "disc");
  EXPECT_GT(u.iou, 0.9);
  EXPECT_TRUE(u.interpretable);
  EXPECT_EQ(report.photos_used, static_cast<size_t>(n));
}

TEST(Dissect, ReportCoversEveryUnit) {
  auto G = make_drawing_generator(GeneratorConfig::toy(32));
  init_weights(*G, 5);
  auto photos = seeded_uniform({2, 3, 32, 32}, 6, 0, 1).to(torch::kFloat32);
  auto masks = torch::stack({disc(32, 10, 16, 4), disc(32, 22, 16, 5)}).unsqueeze(0).expand({2, 2, 32, 32});
  auto report = label_units(G, photos, masks, {"a", "b"});
  int64_t units = 0;
  for (const auto& l : G->conv_layers()) units += l.channels;
  EXPECT_EQ(static_cast<int64_t>(report.units.size()), units);
  for (const auto& u : report.units) {
    EXPECT_GE(u.iou, 0.0);
    EXPECT_LE(u.iou, 1.0);
    EXPECT_EQ(u.interpretable, u.iou > kInterpretableIou);
  }
  EXPECT_THROW(label_units(G, photos, masks, {"a"}), ShapeError);
}

TEST(Dissect, FeatureMapShapesAndErrors) {
  auto G = make_drawing_generator(GeneratorConfig::toy(32));
  init_weights(*G, 7);
  auto photos = seeded_uniform({2, 3, 32, 32}, 8, 0, 1).to(torch::kFloat32);
  EXPECT_EQ(unit_feature_map(G, photos, "down2", 3).sizes(), (std::vector<int64_t>{2, 32, 32}));
  auto maps = layer_feature_maps(G, photos);
  EXPECT_EQ(maps.size(), G->conv_layers().size());
  for (const auto& [name, m] : maps) EXPECT_EQ(m.size(2), 32) << name;
  try {
    unit_feature_map(G, photos, "nope", 0);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("down1"), std::string::npos);
  }
  EXPECT_THROW(unit_feature_map(G, photos, "flat", 8), ValidationError);
}

TEST(Dissect, ParserPathSkipsFlatPhotos) {
  const int s = 64;
  std::vector<torch::Tensor> photos;
  for (uint64_t i = 0; i < 2; ++i) photos.push_back(mat_to_tensor(synth_photo(s, i)));
  photos.push_back(torch::full({3, s, s}, 0.5));
  auto G = make_drawing_generator(GeneratorConfig::toy(s));
  init_weights(*G, 9);
  TemplateFaceParser parser;
  auto report = label_units(G, torch::stack(photos), parser);
  EXPECT_EQ(report.photos_used, 2u);
  EXPECT_EQ(report.photos_skipped, 1u);
  EXPECT_EQ(report.regions, parser.labels());
}

TEST(Dissect, CsvAndOverlay) {
  TempDir dir;
  DissectionReport r;
  r.units.push_back({"flat", 0, "eyes", 0.25, 0.5, true});
  r.units.push_back({"flat", 1, "", 0.0, 0.0, false});
  write_unit_csv(dir / "units.csv", r);
  std::ifstream in(dir / "units.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "layer,unit,region,t,iou,interpretable");
  std::getline(in, line);
  EXPECT_EQ(line, "flat,0,eyes,0.25,0.5,1");
  std::getline(in, line);
  EXPECT_EQ(line, "flat,1,,0,0,0");

  auto photo = torch::full({3, 32, 32}, 0.2);
  auto map = disc(32, 16, 16, 8);
  write_overlay_png(dir / "overlay.png", photo, map, 0.5);
  auto img = cv::imread((dir / "overlay.png").string());
  ASSERT_FALSE(img.empty());
  EXPECT_EQ(img.rows, 32);
  // The outline is yellow (BGR 0,255,255); the centre is untouched.
  auto centre = img.at<cv::Vec3b>(16, 16);
  EXPECT_EQ(centre[2], centre[0]);
  bool yellow = false;
  for (int x = 0; x < 32; ++x) {
    auto px = img.at<cv::Vec3b>(16, x);
    yellow = yellow || (px[0] == 0 && px[1] == 255 && px[2] == 255);
  }
  EXPECT_TRUE(yellow);
}
