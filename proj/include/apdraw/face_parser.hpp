#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace apdraw {

/// Region name -> 1 x H x W binary float mask.
using RegionMap = std::map<std::string, torch::Tensor>;

/// Face parsing adapter. Implementations throw NoFaceError when no face is found.
class FaceParser {
 public:
  virtual ~FaceParser() = default;
  virtual RegionMap parse(const torch::Tensor& image, const std::string& image_id) const = 0;
  virtual std::vector<std::string> labels() const = 0;
};

/// Places eyes, nose and lips at the canonical positions of a portrait-framed
/// face. Images whose central region is flat (no face content) are rejected.
class TemplateFaceParser final : public FaceParser {
 public:
  RegionMap parse(const torch::Tensor& image, const std::string& image_id) const override;
  std::vector<std::string> labels() const override;
};

/// Reads masks produced offline by an external parser: `<dir>/<id>_<region>.png`.
/// A missing mask set for an id is reported as no face.
class MaskDirectoryParser final : public FaceParser {
 public:
  explicit MaskDirectoryParser(std::filesystem::path dir, std::vector<std::string> regions = {"eyes", "nose", "lips"});
  RegionMap parse(const torch::Tensor& image, const std::string& image_id) const override;
  std::vector<std::string> labels() const override { return regions_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> regions_;
};

/// Canonical facial-part layout, as fractions of the image side (center x, center y, radius x, radius y).
struct RegionEllipse {
  std::string name;
  double cx, cy, rx, ry;
};
const std::vector<RegionEllipse>& canonical_layout();

/// Rasterises the canonical ellipses for a size x size image.
RegionMap canonical_regions(int64_t height, int64_t width);

}  // namespace apdraw
