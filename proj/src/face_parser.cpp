#include "apdraw/face_parser.hpp"

#include <opencv2/imgproc.hpp>

#include "apdraw/common.hpp"
#include "apdraw/image_io.hpp"

namespace apdraw {

const std::vector<RegionEllipse>& canonical_layout() {
  // Two eyes share one region; lips cover both lips.
  static const std::vector<RegionEllipse> layout{
      {"eyes", 0.36, 0.42, 0.07, 0.035},
      {"eyes", 0.64, 0.42, 0.07, 0.035},
      {"nose", 0.50, 0.55, 0.05, 0.08},
      {"lips", 0.50, 0.70, 0.10, 0.04},
  };
  return layout;
}

RegionMap canonical_regions(int64_t height, int64_t width) {
  RegionMap out;
  for (auto name : kFaceRegions) out[std::string(name)] = torch::zeros({1, height, width});
  auto ys = torch::arange(height, torch::kFloat64).add(0.5).div(static_cast<double>(height)).view({height, 1});
  auto xs = torch::arange(width, torch::kFloat64).add(0.5).div(static_cast<double>(width)).view({1, width});
  for (const auto& e : canonical_layout()) {
    auto d = (xs - e.cx).div(e.rx).pow(2) + (ys - e.cy).div(e.ry).pow(2);
    auto inside = d.le(1.0).to(torch::kFloat32).unsqueeze(0);
    out[e.name] = torch::maximum(out[e.name], inside);
  }
  return out;
}

RegionMap TemplateFaceParser::parse(const torch::Tensor& image, const std::string& image_id) const {
  if (image.dim() != 3) throw ShapeError("face parser expects a C x H x W image");
  const int64_t h = image.size(1), w = image.size(2);
  auto center = image.slice(1, h / 4, 3 * h / 4).slice(2, w / 4, 3 * w / 4);
  if (center.numel() == 0 || center.std().item<double>() < 1e-4)
    throw NoFaceError("no face found in " + (image_id.empty() ? std::string("image") : image_id));
  return canonical_regions(h, w);
}

std::vector<std::string> TemplateFaceParser::labels() const { return {"eyes", "nose", "lips"}; }

MaskDirectoryParser::MaskDirectoryParser(std::filesystem::path dir, std::vector<std::string> regions)
    : dir_(std::move(dir)), regions_(std::move(regions)) {}

RegionMap MaskDirectoryParser::parse(const torch::Tensor& image, const std::string& image_id) const {
  RegionMap out;
  for (const auto& r : regions_) {
    auto path = dir_ / (image_id + "_" + r + ".png");
    if (!std::filesystem::exists(path)) throw NoFaceError("no parsed mask for " + image_id + " (" + path.string() + ")");
    cv::Mat m = read_image(path);
    if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2GRAY);
    if (image.dim() == 3 && (m.rows != image.size(1) || m.cols != image.size(2)))
      cv::resize(m, m, cv::Size(static_cast<int>(image.size(2)), static_cast<int>(image.size(1))), 0, 0, cv::INTER_NEAREST);
    out[r] = mat_to_tensor(m).gt(0.5).to(torch::kFloat32);
  }
  return out;
}

}  // namespace apdraw
