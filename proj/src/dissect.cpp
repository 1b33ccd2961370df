#include "apdraw/dissect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "apdraw/image_io.hpp"

namespace apdraw {
namespace {

std::string layer_listing(ResnetGenerator& G) {
  std::string out;
  for (const auto& l : G->conv_layers())
    out += (out.empty() ? "" : ", ") + l.name + " [0," + std::to_string(l.channels - 1) + "]";
  return out;
}

torch::Tensor upsample_to(const torch::Tensor& act, int64_t h, int64_t w) {
  if (act.size(2) == h && act.size(3) == w) return act;
  return torch::nn::functional::interpolate(
      act, torch::nn::functional::InterpolateFuncOptions()
               .size(std::vector<int64_t>{h, w})
               .mode(torch::kBilinear)
               .align_corners(false));
}

std::map<std::string, torch::Tensor> raw_activations(ResnetGenerator& G, const torch::Tensor& photos,
                                                     const StyleVector& style) {
  torch::NoGradGuard no_grad;
  auto p = as_image_batch(photos);
  std::map<std::string, torch::Tensor> acts;
  G->forward_traced(p, style.to_tensor(p.scalar_type()).expand({p.size(0), 3}),
                    [&](const std::string& name, const torch::Tensor& a) { acts[name] = a.detach(); });
  return acts;
}

double plogp(double count, double n) {
  if (count <= 0) return 0.0;
  const double p = count / n;
  return -p * std::log(p);
}

// One unit's pooled activations, sorted once and reused for every region.
struct SortedMap {
  explicit SortedMap(const torch::Tensor& maps) {
    auto flat = maps.detach().to(torch::kFloat64).reshape({-1}).contiguous();
    auto [sorted, idx] = flat.sort();
    values.assign(sorted.data_ptr<double>(), sorted.data_ptr<double>() + sorted.numel());
    auto idx_c = idx.contiguous();
    order.assign(idx_c.data_ptr<int64_t>(), idx_c.data_ptr<int64_t>() + idx_c.numel());
  }

  // suffix[j] = number of mask pixels among sorted positions >= j.
  std::vector<int64_t> mask_suffix(const torch::Tensor& masks) const {
    auto m = masks.detach().reshape({-1}).gt(0.5).contiguous();
    if (static_cast<size_t>(m.numel()) != values.size()) throw ShapeError("feature maps and masks differ in size");
    const bool* mp = m.data_ptr<bool>();
    std::vector<int64_t> suffix(values.size() + 1, 0);
    for (size_t j = values.size(); j-- > 0;) suffix[j] = suffix[j + 1] + (mp[order[j]] ? 1 : 0);
    return suffix;
  }

  size_t first_above(double t) const {
    return static_cast<size_t>(std::upper_bound(values.begin(), values.end(), t) - values.begin());
  }

  ThresholdResult best_threshold(const std::vector<int64_t>& suffix) const {
    ThresholdResult result;
    const auto n = static_cast<int64_t>(values.size());
    const int64_t mask_total = suffix[0];
    if (n == 0 || mask_total == 0 || mask_total == n) return result;
    const double nd = static_cast<double>(n);
    double last_t = std::nan("");
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 1; k <= kThresholdCandidates; ++k) {
      const double level = static_cast<double>(k) / (kThresholdCandidates + 1);
      const auto idx = static_cast<size_t>(std::floor(level * static_cast<double>(n - 1)));
      const double t = values[idx];
      if (t == last_t) continue;
      last_t = t;
      const size_t pos = first_above(t);
      const auto on = n - static_cast<int64_t>(pos);
      if (on == 0 || on == n) continue;  // constant binarization carries no information
      const auto both = suffix[pos];
      const double n11 = static_cast<double>(both), n10 = static_cast<double>(on - both),
                   n01 = static_cast<double>(mask_total - both), n00 = nd - n11 - n10 - n01;
      const double joint = plogp(n11, nd) + plogp(n10, nd) + plogp(n01, nd) + plogp(n00, nd);
      if (joint <= 0) continue;
      const double hx = plogp(static_cast<double>(on), nd) + plogp(nd - static_cast<double>(on), nd);
      const double hy = plogp(static_cast<double>(mask_total), nd) + plogp(nd - static_cast<double>(mask_total), nd);
      const double quality = (hx + hy - joint) / joint;
      if (quality > best) {
        best = quality;
        result.threshold = t;
        result.information_quality = quality;
      }
    }
    return result;
  }

  double iou(const std::vector<int64_t>& suffix, double t) const {
    const size_t pos = first_above(t);
    const auto on = static_cast<int64_t>(values.size() - pos);
    const int64_t inter = suffix[pos];
    const int64_t uni = on + suffix[0] - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }

  std::vector<double> values;
  std::vector<int64_t> order;
};

}  // namespace

torch::Tensor unit_feature_map(ResnetGenerator& G, const torch::Tensor& photos, const std::string& layer, int64_t unit,
                               const StyleVector& style) {
  const auto layers = G->conv_layers();
  auto it = std::find_if(layers.begin(), layers.end(), [&](const ConvLayerInfo& l) { return l.name == layer; });
  if (it == layers.end()) throw ValidationError("unknown layer '" + layer + "'; valid: " + layer_listing(G));
  if (unit < 0 || unit >= it->channels)
    throw ValidationError("unit " + std::to_string(unit) + " out of range for " + layer + "; valid: " + layer_listing(G));
  auto p = as_image_batch(photos);
  auto acts = raw_activations(G, p, style);
  auto a = acts.at(layer).slice(1, unit, unit + 1);
  return upsample_to(a, p.size(2), p.size(3)).squeeze(1);
}

std::map<std::string, torch::Tensor> layer_feature_maps(ResnetGenerator& G, const torch::Tensor& photos,
                                                        const StyleVector& style) {
  auto p = as_image_batch(photos);
  auto acts = raw_activations(G, p, style);
  for (auto& [name, a] : acts) a = upsample_to(a, p.size(2), p.size(3));
  return acts;
}

ThresholdResult optimal_threshold(const torch::Tensor& maps, const torch::Tensor& masks) {
  if (maps.numel() != masks.numel()) throw ShapeError("feature maps and masks differ in size");
  if (!torch::isfinite(maps).all().item<bool>()) throw ValidationError("feature maps contain non-finite values");
  SortedMap sm(maps);
  return sm.best_threshold(sm.mask_suffix(masks));
}

double unit_region_iou(const torch::Tensor& maps, const torch::Tensor& masks, double t) {
  if (maps.numel() != masks.numel()) throw ShapeError("feature maps and masks differ in size");
  auto bin = maps.detach().gt(t).reshape({-1});
  auto m = masks.detach().gt(0.5).reshape({-1});
  const auto inter = (bin & m).sum().item<int64_t>();
  const auto uni = (bin | m).sum().item<int64_t>();
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

size_t DissectionReport::interpretable() const {
  return static_cast<size_t>(std::count_if(units.begin(), units.end(), [](const UnitReport& u) { return u.interpretable; }));
}

DissectionReport label_units(ResnetGenerator& G, const torch::Tensor& photos, const torch::Tensor& masks,
                             std::vector<std::string> regions, const StyleVector& style) {
  auto p = as_image_batch(photos);
  if (p.size(0) == 0) throw ValidationError("dissection needs at least one test photo");
  if (masks.dim() != 4 || masks.size(0) != p.size(0) || masks.size(1) != static_cast<int64_t>(regions.size()) ||
      masks.size(2) != p.size(2) || masks.size(3) != p.size(3))
    throw ShapeError("masks must be N x R x H x W matching the photos and region list");

  DissectionReport report;
  report.regions = regions;
  report.photos_used = static_cast<size_t>(p.size(0));
  auto acts = raw_activations(G, p, style);
  for (const auto& layer : G->conv_layers()) {
    const auto& a = acts.at(layer.name);
    for (int64_t u = 0; u < layer.channels; ++u) {
      auto map = upsample_to(a.slice(1, u, u + 1), p.size(2), p.size(3));
      SortedMap sm(map);
      UnitReport r;
      r.layer = layer.name;
      r.unit = u;
      r.iou = -1;
      for (size_t k = 0; k < regions.size(); ++k) {
        auto suffix = sm.mask_suffix(masks.select(1, static_cast<int64_t>(k)));
        auto th = sm.best_threshold(suffix);
        if (!th.threshold) continue;
        const double iou = sm.iou(suffix, *th.threshold);
        if (iou > r.iou) {
          r.iou = iou;
          r.best_region = regions[k];
          r.threshold = *th.threshold;
        }
      }
      if (r.iou < 0) {
        r.iou = 0;
        r.threshold = sm.values.empty() ? 0.0 : sm.values.front();
      }
      r.interpretable = r.iou > kInterpretableIou;
      report.units.push_back(std::move(r));
    }
  }
  return report;
}

DissectionReport label_units(ResnetGenerator& G, const torch::Tensor& photos, const FaceParser& parser,
                             const StyleVector& style) {
  auto p = as_image_batch(photos);
  const auto regions = parser.labels();
  std::vector<torch::Tensor> kept_photos, kept_masks;
  size_t skipped = 0;
  for (int64_t i = 0; i < p.size(0); ++i) {
    try {
      auto parsed = parser.parse(p[i], "test" + std::to_string(i));
      std::vector<torch::Tensor> channels;
      for (const auto& name : regions) channels.push_back(parsed.at(name).reshape({p.size(2), p.size(3)}));
      kept_masks.push_back(torch::stack(channels));
      kept_photos.push_back(p[i]);
    } catch (const NoFaceError& e) {
      std::cerr << "warning: skipping test photo " << i << ": " << e.what() << '\n';
      ++skipped;
    }
  }
  if (kept_photos.empty()) throw ValidationError("no test photo could be parsed");
  auto report = label_units(G, torch::stack(kept_photos), torch::stack(kept_masks), regions, style);
  report.photos_skipped = skipped;
  return report;
}

void write_unit_csv(const std::filesystem::path& path, const DissectionReport& report) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(10);
  out << "layer,unit,region,t,iou,interpretable\n";
  for (const auto& u : report.units)
    out << u.layer << ',' << u.unit << ',' << u.best_region << ',' << u.threshold << ',' << u.iou << ','
        << (u.interpretable ? 1 : 0) << '\n';
}

void write_overlay_png(const std::filesystem::path& path, const torch::Tensor& photo, const torch::Tensor& map, double t) {
  auto img = photo.dim() == 4 ? photo[0] : photo;
  cv::Mat canvas = tensor_to_mat(img);
  if (canvas.channels() == 1) cv::cvtColor(canvas, canvas, cv::COLOR_GRAY2BGR);
  auto m = map.dim() == 3 ? map[0] : map;
  auto bin = m.gt(t).to(torch::kUInt8).mul(255).contiguous();
  cv::Mat mask(static_cast<int>(bin.size(0)), static_cast<int>(bin.size(1)), CV_8UC1, bin.data_ptr<uint8_t>());
  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(mask.clone(), contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
  cv::drawContours(canvas, contours, -1, cv::Scalar(0, 255, 255), 1);
  if (!cv::imwrite(path.string(), canvas)) throw Error("cannot write " + path.string());
}

}  // namespace apdraw
