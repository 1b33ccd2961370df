#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "apdraw/common.hpp"
#include "apdraw/config.hpp"
#include "apdraw/corpus.hpp"
#include "apdraw/image_io.hpp"
#include "apdraw/rng.hpp"
#include "apdraw/synthetic.hpp"
#include "test_util.hpp"

using namespace apdraw;
using apdraw::testing::TempDir;

namespace {

// Parser that returns one centered disc of the given radius as every region.
class DiscParser final : public FaceParser {
 public:
  explicit DiscParser(double radius_frac) : radius_frac_(radius_frac) {}
  RegionMap parse(const torch::Tensor& image, const std::string&) const override {
    const auto h = image.size(1), w = image.size(2);
    auto ys = torch::arange(h, torch::kFloat32).view({h, 1}) - (h - 1) / 2.0;
    auto xs = torch::arange(w, torch::kFloat32).view({1, w}) - (w - 1) / 2.0;
    const double r = radius_frac_ * static_cast<double>(std::min(h, w));
    auto disc = (ys * ys + xs * xs).le(r * r).to(torch::kFloat32).unsqueeze(0);
    return {{"eyes", disc}, {"nose", disc.clone()}, {"lips", disc.clone()}};
  }
  std::vector<std::string> labels() const override { return {"eyes", "nose", "lips"}; }

 private:
  double radius_frac_;
};

}  // namespace

TEST(Common, StyleVectorParsingAndBasis) {
  auto s = parse_style_vector("0, 0.5,0.5");
  EXPECT_EQ(s.values, (std::array<double, 3>{0.0, 0.5, 0.5}));
  EXPECT_TRUE(s.on_simplex());
  EXPECT_THROW(parse_style_vector("1,0"), ValidationError);
  EXPECT_THROW(parse_style_vector("1,0,0,0"), ValidationError);
  EXPECT_THROW(parse_style_vector("1,x,0"), ValidationError);
  for (int k = 0; k < 3; ++k) {
    auto e = StyleVector::basis(k);
    EXPECT_DOUBLE_EQ(e.values[static_cast<size_t>(k)], 1.0);
    EXPECT_TRUE(e.on_simplex());
    EXPECT_EQ(StyleVector::from_tensor(e.to_tensor()), e);
  }
  StyleVector relaxed{{0.7, 0.7, -0.1}, true};
  EXPECT_FALSE(relaxed.on_simplex());
}

TEST(Common, ConfigLayering) {
  auto c = Config::from_string("[train]\nepochs = 5\nprofile = toy\n[net]\nbase_channels=8\n");
  EXPECT_EQ(c.get_int("train.epochs", 0), 5);
  EXPECT_EQ(c.get_string("train.profile", ""), "toy");
  c.set("train.epochs=7");
  EXPECT_EQ(c.get_int("train.epochs", 0), 7);
  EXPECT_EQ(c.get_int("net.base_channels", 0), 8);
  EXPECT_EQ(c.get_double("optim.gan_lr", 2e-4), 2e-4);
  EXPECT_THROW(c.set("no_equals_sign"), ValidationError);
  auto other = Config::from_string("[train]\nepochs = 9\n");
  c.merge(other);
  EXPECT_EQ(c.get_int("train.epochs", 0), 9);
}

TEST(Common, SeededUniformIsPortable) {
  auto a = seeded_uniform({4, 4}, 42, 0.0, 1.0);
  auto b = seeded_uniform({4, 4}, 42, 0.0, 1.0);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_FALSE(torch::equal(a, seeded_uniform({4, 4}, 43, 0.0, 1.0)));
  EXPECT_GE(a.min().item<double>(), 0.0);
  EXPECT_LT(a.max().item<double>(), 1.0);
}

TEST(Corpus, EmptyManifestGivesNoRecords) {
  std::istringstream in(std::string(kManifestHeader) + "\n");
  EXPECT_TRUE(parse_manifest(in).empty());
}

TEST(Corpus, ToyManifestHasSixteenRecords) {
  TempDir dir;
  write_synthetic_corpus(dir.path(), 8, 8, 64, 7);
  auto records = load_manifest(dir / "manifest.tsv");
  ASSERT_EQ(records.size(), 16u);
  auto counts = count_records(records);
  EXPECT_EQ(counts.photos, 8u);
  EXPECT_EQ(counts.drawings, 8u);
  EXPECT_EQ(counts.by_style.size(), 3u);
  for (const auto& r : records) EXPECT_TRUE(std::filesystem::exists(r.path)) << r.path;
}

TEST(Corpus, ManifestRoundTrip) {
  TempDir dir;
  std::vector<ImageRecord> recs = {{"p1", dir / "p1.png", Kind::photo, std::nullopt, Origin::real},
                                   {"d1", dir / "d1.png", Kind::drawing, StyleTag::style2, Origin::synthesized},
                                   {"d2", dir / "d2.png", Kind::drawing, StyleTag::untagged, Origin::real}};
  save_manifest(dir / "m.tsv", recs);
  auto back = load_manifest(dir / "m.tsv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].style_tag, StyleTag::style2);
  EXPECT_EQ(back[1].origin, Origin::synthesized);
  EXPECT_EQ(back[2].style_tag, StyleTag::untagged);
  EXPECT_FALSE(back[0].style_tag.has_value());
}

TEST(Corpus, MalformedManifestNamesTheLine) {
  std::istringstream in(std::string(kManifestHeader) + "\np1\tp1.png\tphoto\t-\treal\nbroken line\n");
  try {
    parse_manifest(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  std::istringstream bad_kind(std::string(kManifestHeader) + "\np1\tp1.png\tsketch\t-\treal\n");
  EXPECT_THROW(parse_manifest(bad_kind), ParseError);
  std::istringstream no_header("p1\tp1.png\tphoto\t-\treal\n");
  EXPECT_THROW(parse_manifest(no_header), ParseError);
}

TEST(Corpus, ManifestInvariants) {
  std::istringstream dup(std::string(kManifestHeader) + "\na\ta.png\tphoto\t-\treal\na\tb.png\tphoto\t-\treal\n");
  EXPECT_THROW(parse_manifest(dup), ValidationError);
  std::istringstream tagged_photo(std::string(kManifestHeader) + "\na\ta.png\tphoto\tstyle1\treal\n");
  EXPECT_THROW(parse_manifest(tagged_photo), ValidationError);
  std::istringstream synth_photo(std::string(kManifestHeader) + "\na\ta.png\tphoto\t-\tsynthesized\n");
  EXPECT_THROW(parse_manifest(synth_photo), ValidationError);
}

TEST(Corpus, PreprocessCropsPhotoTo512) {
  cv::Mat raw(800, 600, CV_8UC3, cv::Scalar(10, 200, 30));
  auto t = preprocess(raw, 512, Kind::photo);
  EXPECT_EQ(t.sizes(), (std::vector<int64_t>{3, 512, 512}));
  EXPECT_GE(t.min().item<double>(), 0.0);
  EXPECT_LE(t.max().item<double>(), 1.0);
  // BGR input, RGB output.
  EXPECT_NEAR(t[0][0][0].item<double>(), 30 / 255.0, 1e-6);
  EXPECT_NEAR(t[2][0][0].item<double>(), 10 / 255.0, 1e-6);
}

TEST(Corpus, PreprocessKeepsMatchingGeometry) {
  for (int size : {64, 512}) {
    auto raw = synth_photo(size, 3);
    auto t = preprocess(raw, size, Kind::photo);
    EXPECT_TRUE(torch::allclose(t, mat_to_tensor(raw), 0, 1e-6)) << size;
    auto d = preprocess(synth_drawing(size, StyleTag::style1, 3), size, Kind::drawing);
    EXPECT_EQ(d.size(0), 1);
    EXPECT_EQ(d.size(1), size);
  }
}

TEST(Corpus, PreprocessErrors) {
  TempDir dir;
  {
    std::ofstream(dir / "junk.png") << "definitely not a png";
  }
  EXPECT_THROW(read_image(dir / "junk.png"), DecodeError);
  EXPECT_THROW(preprocess(cv::Mat(), 64, Kind::photo), DecodeError);
  EXPECT_THROW(preprocess(synth_photo(64, 1), 8, Kind::photo), ValidationError);
}

TEST(Corpus, PreprocessedFixturesStayInUnitRange) {
  TempDir dir;
  auto records = write_synthetic_corpus(dir.path(), 4, 6, 64, 11);
  for (const auto& r : records) {
    auto t = load_preprocessed(r, 64);
    EXPECT_GE(t.min().item<double>(), 0.0);
    EXPECT_LE(t.max().item<double>(), 1.0);
    EXPECT_EQ(t.size(0), r.kind == Kind::photo ? 3 : 1);
  }
}

TEST(Corpus, DilationRadius) {
  EXPECT_EQ(dilation_radius(0.02, 512), 11);
  EXPECT_EQ(dilation_radius(0.0, 512), 0);
  EXPECT_EQ(dilation_radius(0.02, 64), 2);
}

TEST(Corpus, ZeroDilationEqualsRawParse) {
  DiscParser parser(0.2);
  auto img = torch::rand({3, 64, 64});
  auto set = region_masks(img, parser, 0.0, "x");
  auto raw = parser.parse(img, "x");
  for (const auto& [name, mask] : raw) EXPECT_TRUE(torch::equal(set.regions.at(name), mask)) << name;
  EXPECT_EQ(set.stacked().sizes(), (std::vector<int64_t>{3, 64, 64}));
}

TEST(Corpus, DilatedMaskIsBinarySuperset) {
  DiscParser parser(0.15);
  auto img = torch::rand({3, 128, 128});
  auto raw = parser.parse(img, "x");
  for (double frac : {0.01, 0.02, 0.05}) {
    auto set = region_masks(img, parser, frac, "x");
    for (const auto& [name, mask] : set.regions) {
      EXPECT_TRUE(torch::equal(mask, mask.gt(0.5).to(mask.dtype()))) << "binary";
      EXPECT_TRUE(mask.ge(raw.at(name)).all().item<bool>()) << "superset";
      EXPECT_GT(mask.sum().item<double>(), raw.at(name).sum().item<double>());
    }
  }
}

TEST(Corpus, DiscDilationGrowsRadius) {
  auto m = torch::zeros({1, 41, 41});
  m[0][20][20] = 1;
  auto d = dilate_disc(m, 5);
  EXPECT_EQ(d[0][20][25].item<float>(), 1.0f);
  EXPECT_EQ(d[0][20][26].item<float>(), 0.0f);
  EXPECT_EQ(d[0][24][23].item<float>(), 1.0f);  // 4^2 + 3^2 = 25
  EXPECT_EQ(d[0][25][24].item<float>(), 0.0f);  // corner of the box is outside the disc
}

TEST(Corpus, TemplateParserRejectsFlatImages) {
  TemplateFaceParser parser;
  EXPECT_THROW(parser.parse(torch::full({3, 64, 64}, 0.5), "flat"), NoFaceError);
  auto photo = mat_to_tensor(synth_photo(64, 1));
  auto regions = parser.parse(photo, "p");
  for (auto name : kFaceRegions) {
    ASSERT_TRUE(regions.count(std::string(name)));
    EXPECT_GT(regions.at(std::string(name)).sum().item<double>(), 0);
  }
}

TEST(Corpus, UnpairedBatchIsDeterministic) {
  std::vector<StyleVector> pool = {StyleVector::basis(0), StyleVector::basis(1), StyleVector::basis(2)};
  auto a = sample_unpaired_batch(10, 7, pool, 4, 99, 3);
  auto b = sample_unpaired_batch(10, 7, pool, 4, 99, 3);
  EXPECT_EQ(a.photo_index, b.photo_index);
  EXPECT_EQ(a.drawing_index, b.drawing_index);
  EXPECT_EQ(a.styles, b.styles);
  auto c = sample_unpaired_batch(10, 7, pool, 4, 99, 4);
  EXPECT_TRUE(c.photo_index != a.photo_index || c.drawing_index != a.drawing_index || c.styles != a.styles);
}

TEST(Corpus, UnpairedBatchOfOne) {
  std::vector<StyleVector> pool = {StyleVector::basis(1), StyleVector{{0.58, 0.40, 0.02}, false}};
  auto b = sample_unpaired_batch(5, 5, pool, 1, 1);
  ASSERT_EQ(b.photo_index.size(), 1u);
  ASSERT_EQ(b.drawing_index.size(), 1u);
  ASSERT_EQ(b.styles.size(), 1u);
  EXPECT_TRUE(b.styles[0] == pool[0] || b.styles[0] == pool[1]);
}

TEST(Corpus, DegeneratePoolAlwaysGivesItsVector) {
  std::vector<StyleVector> pool = {StyleVector::basis(0)};
  for (uint64_t step = 0; step < 20; ++step)
    for (const auto& s : sample_unpaired_batch(4, 4, pool, 8, 5, step).styles) EXPECT_EQ(s, StyleVector::basis(0));
}

TEST(Corpus, EmptyDomainIsAnError) {
  std::vector<StyleVector> pool = {StyleVector::basis(0)};
  EXPECT_THROW(sample_unpaired_batch(0, 4, pool, 1, 0), ValidationError);
  EXPECT_THROW(sample_unpaired_batch(4, 0, pool, 1, 0), ValidationError);
  EXPECT_THROW(sample_unpaired_batch(4, 4, {}, 1, 0), ValidationError);
}
