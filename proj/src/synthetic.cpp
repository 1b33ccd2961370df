#include "apdraw/synthetic.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "apdraw/face_parser.hpp"
#include "apdraw/rng.hpp"

namespace apdraw {
namespace {

cv::Point at(double fx, double fy, int size) {
  return {static_cast<int>(std::lround(fx * size)), static_cast<int>(std::lround(fy * size))};
}

cv::Size axes(double rx, double ry, int size) {
  return {std::max(1, static_cast<int>(std::lround(rx * size))), std::max(1, static_cast<int>(std::lround(ry * size)))};
}

double jitter(Rng& rng, double amount) { return (uniform01(rng) * 2.0 - 1.0) * amount; }

// Fixed-point variants for the line drawings: the per-seed jitter is well under a
// pixel at toy sizes and would vanish under integer rounding.
constexpr int kShift = 4;
constexpr double kUnit = 1 << kShift;

cv::Point at_fp(double fx, double fy, int size) {
  return {static_cast<int>(std::lround(fx * size * kUnit)), static_cast<int>(std::lround(fy * size * kUnit))};
}

cv::Size axes_fp(double rx, double ry, int size) {
  return {std::max(static_cast<int>(kUnit), static_cast<int>(std::lround(rx * size * kUnit))),
          std::max(static_cast<int>(kUnit), static_cast<int>(std::lround(ry * size * kUnit)))};
}

}  // namespace

cv::Mat synth_photo(int size, uint64_t seed) {
  Rng rng(seed);
  cv::Mat img(size, size, CV_8UC3);
  const cv::Scalar bg(60 + 120 * uniform01(rng), 60 + 120 * uniform01(rng), 60 + 120 * uniform01(rng));
  for (int y = 0; y < size; ++y) {
    const double g = 0.7 + 0.3 * y / std::max(1, size - 1);
    img.row(y).setTo(bg * g);
  }
  const double s = 0.85 + 0.3 * uniform01(rng);
  const cv::Scalar skin(120 * s, 160 * s, 210 * s);  // BGR
  const cv::Scalar hair(30 + 40 * uniform01(rng), 30 + 30 * uniform01(rng), 30 + 50 * uniform01(rng));
  cv::ellipse(img, at(0.5, 0.36, size), axes(0.34, 0.26, size), 0, 180, 360, hair, cv::FILLED, cv::LINE_AA);
  cv::ellipse(img, at(0.5 + jitter(rng, 0.01), 0.52, size), axes(0.27, 0.36, size), 0, 0, 360, skin, cv::FILLED,
              cv::LINE_AA);
  for (const auto& e : canonical_layout()) {
    const double cx = e.cx + jitter(rng, 0.005), cy = e.cy + jitter(rng, 0.005);
    if (e.name == "eyes") {
      cv::ellipse(img, at(cx, cy, size), axes(e.rx * 0.8, e.ry * 0.7, size), 0, 0, 360, cv::Scalar(240, 240, 240),
                  cv::FILLED, cv::LINE_AA);
      cv::circle(img, at(cx, cy, size), std::max(1, static_cast<int>(e.ry * 0.6 * size)), cv::Scalar(40, 30, 20),
                 cv::FILLED, cv::LINE_AA);
    } else if (e.name == "nose") {
      cv::ellipse(img, at(cx, cy + e.ry * 0.5, size), axes(e.rx * 0.8, e.ry * 0.35, size), 0, 0, 360, skin * 0.7,
                  cv::FILLED, cv::LINE_AA);
    } else {
      cv::ellipse(img, at(cx, cy, size), axes(e.rx * 0.8, e.ry * 0.6, size), 0, 0, 360, cv::Scalar(90, 80, 180),
                  cv::FILLED, cv::LINE_AA);
    }
  }
  cv::Mat f, out;
  img.convertTo(f, CV_32FC3);
  cv::Mat noise(size, size, CV_32FC3);
  cv::RNG noise_rng(seed ^ 0x5EEDULL);
  noise_rng.fill(noise, cv::RNG::NORMAL, 0.0, 4.0);
  f += noise;
  f.convertTo(out, CV_8UC3);
  return out;
}

cv::Mat synth_drawing(int size, StyleTag style, uint64_t seed) {
  Rng rng(seed);
  cv::Mat img(size, size, CV_8UC1, cv::Scalar(255));
  const cv::Scalar ink(0);
  int thick = 1;
  if (style == StyleTag::style3) thick = std::max(2, size / 32);
  if (style == StyleTag::untagged) thick = 1 + static_cast<int>(uniform01(rng) * 2);

  const auto face_c = at_fp(0.5 + jitter(rng, 0.01), 0.52, size);
  cv::ellipse(img, face_c, axes_fp(0.27, 0.36, size), 0, 0, 360, ink, thick, cv::LINE_AA, kShift);

  // Hair: hatching (style1), a single contour (style2), a filled dark mass (style3).
  if (style == StyleTag::style3) {
    cv::ellipse(img, at_fp(0.5, 0.36, size), axes_fp(0.34, 0.26, size), 0, 180, 360, ink, cv::FILLED, cv::LINE_AA, kShift);
  } else {
    cv::ellipse(img, at_fp(0.5, 0.36, size), axes_fp(0.34, 0.26, size), 0, 180, 360, ink, thick, cv::LINE_AA, kShift);
  }
  if (style == StyleTag::style1) {
    const int step = std::max(3, size / 24);
    for (int x = static_cast<int>(0.2 * size); x < static_cast<int>(0.8 * size); x += step)
      cv::line(img, {x, static_cast<int>(0.13 * size)}, {x + step, static_cast<int>(0.3 * size)}, ink, 1, cv::LINE_AA);
    for (int y = static_cast<int>(0.55 * size); y < static_cast<int>(0.8 * size); y += step)
      cv::line(img, {static_cast<int>(0.25 * size), y}, {static_cast<int>(0.32 * size), y + step / 2}, ink, 1,
               cv::LINE_AA);
  }

  for (const auto& e : canonical_layout()) {
    const double cx = e.cx + jitter(rng, 0.005), cy = e.cy + jitter(rng, 0.005);
    if (e.name == "eyes") {
      cv::ellipse(img, at_fp(cx, cy, size), axes_fp(e.rx * 0.8, e.ry * 0.6, size), 0, 0, 360, ink, thick, cv::LINE_AA,
                  kShift);
      cv::circle(img, at_fp(cx, cy, size), std::max(static_cast<int>(kUnit), static_cast<int>(e.ry * 0.4 * size * kUnit)),
                 ink, cv::FILLED, cv::LINE_AA, kShift);
    } else if (e.name == "nose") {
      cv::ellipse(img, at_fp(cx, cy + e.ry * 0.5, size), axes_fp(e.rx * 0.7, e.ry * 0.3, size), 0, 0, 180, ink, thick,
                  cv::LINE_AA, kShift);
    } else {
      cv::ellipse(img, at_fp(cx, cy, size), axes_fp(e.rx * 0.8, e.ry * 0.4, size), 0, 0, 360, ink,
                  style == StyleTag::style3 ? cv::FILLED : thick, cv::LINE_AA, kShift);
    }
  }
  return img;
}

std::vector<ImageRecord> write_synthetic_corpus(const std::filesystem::path& dir, int n_photos, int n_drawings,
                                                int size, uint64_t seed) {
  std::filesystem::create_directories(dir / "photos");
  std::filesystem::create_directories(dir / "drawings");
  std::vector<ImageRecord> records;
  for (int i = 0; i < n_photos; ++i) {
    ImageRecord r;
    r.id = "p" + std::to_string(i);
    r.path = dir / "photos" / (r.id + ".png");
    r.kind = Kind::photo;
    cv::imwrite(r.path.string(), synth_photo(size, mix_seed(seed, 2 * static_cast<uint64_t>(i))));
    records.push_back(r);
  }
  constexpr StyleTag kCycle[] = {StyleTag::style1, StyleTag::style2, StyleTag::style3};
  for (int i = 0; i < n_drawings; ++i) {
    ImageRecord r;
    r.id = "d" + std::to_string(i);
    r.path = dir / "drawings" / (r.id + ".png");
    r.kind = Kind::drawing;
    r.style_tag = kCycle[i % 3];
    cv::imwrite(r.path.string(), synth_drawing(size, *r.style_tag, mix_seed(seed, 2 * static_cast<uint64_t>(i) + 1)));
    records.push_back(r);
  }
  save_manifest(dir / "manifest.tsv", records);
  return records;
}

}  // namespace apdraw
