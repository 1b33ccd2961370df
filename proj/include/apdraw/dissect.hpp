#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "apdraw/common.hpp"
#include "apdraw/face_parser.hpp"
#include "apdraw/networks.hpp"

namespace apdraw {

struct UnitReport {
  std::string layer;
  int64_t unit = 0;
  std::string best_region;  // empty when no region admits a threshold
  double threshold = 0;
  double iou = 0;
  bool interpretable = false;
};

inline constexpr double kInterpretableIou = 0.05;
inline constexpr int kThresholdCandidates = 64;

/// Activation of one unit on photos (N x 3 x H x W), bilinearly upsampled to the
/// input size: N x H x W. Throws ValidationError listing the valid layers/units.
torch::Tensor unit_feature_map(ResnetGenerator& G, const torch::Tensor& photos, const std::string& layer, int64_t unit,
                               const StyleVector& style = StyleVector::basis(0));

/// Every conv layer's activations, upsampled to input size: layer -> N x C x H x W.
std::map<std::string, torch::Tensor> layer_feature_maps(ResnetGenerator& G, const torch::Tensor& photos,
                                                        const StyleVector& style = StyleVector::basis(0));

struct ThresholdResult {
  std::optional<double> threshold;  // none when every candidate was degenerate
  double information_quality = 0;   // I / H at the chosen threshold
};

/// Threshold maximizing I/H between (map > t) and the mask, pooled over every
/// pixel. Candidates are the pooled activation values at the 64 quantile levels
/// k / 65 (k = 1..64), so the result only depends on the order of the values.
ThresholdResult optimal_threshold(const torch::Tensor& maps, const torch::Tensor& masks);

/// Pooled IoU of (map > t) with the mask; 0 when the union is empty.
double unit_region_iou(const torch::Tensor& maps, const torch::Tensor& masks, double t);

struct DissectionReport {
  std::vector<UnitReport> units;
  std::vector<std::string> regions;
  size_t photos_used = 0;
  size_t photos_skipped = 0;  // parser failures
  size_t interpretable() const;
};

/// Labels every conv unit of G against the region masks (N x R x H x W, one
/// channel per name in `regions`).
DissectionReport label_units(ResnetGenerator& G, const torch::Tensor& photos, const torch::Tensor& masks,
                             std::vector<std::string> regions, const StyleVector& style = StyleVector::basis(0));

/// Parses each photo first; photos the parser rejects are skipped and counted.
DissectionReport label_units(ResnetGenerator& G, const torch::Tensor& photos, const FaceParser& parser,
                             const StyleVector& style = StyleVector::basis(0));

/// layer,unit,region,t,iou,interpretable
void write_unit_csv(const std::filesystem::path& path, const DissectionReport& report);

/// Photo with the outline of (map > t) drawn in yellow.
void write_overlay_png(const std::filesystem::path& path, const torch::Tensor& photo, const torch::Tensor& map, double t);

}  // namespace apdraw
