#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "apdraw/common.hpp"
#include "apdraw/face_parser.hpp"

namespace apdraw {

inline constexpr std::string_view kManifestHeader = "#apdraw-manifest v1";

struct ImageRecord {
  std::string id;
  std::filesystem::path path;  // resolved against the manifest directory when relative
  Kind kind = Kind::photo;
  std::optional<StyleTag> style_tag;
  Origin origin = Origin::real;
};

/// Reads a tab-separated manifest (id, path, kind, style_tag, origin) headed by
/// `#apdraw-manifest v1`. Photos use `-` for the style tag. Blank lines and
/// further `#` lines are ignored.
std::vector<ImageRecord> load_manifest(const std::filesystem::path& path);
std::vector<ImageRecord> parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
void save_manifest(const std::filesystem::path& path, std::span<const ImageRecord> records);

struct CorpusCounts {
  size_t photos = 0;
  size_t drawings = 0;
  std::map<StyleTag, size_t> by_style;  // drawings only
};
CorpusCounts count_records(std::span<const ImageRecord> records);

std::vector<ImageRecord> select(std::span<const ImageRecord> records, Kind kind);

struct PreprocessOptions {
  bool hflip = false;  // training-time augmentation for the GAN
};

/// Resizes the shorter side to `size`, center-crops to size x size and converts
/// to 3 channels (photos) or 1 channel (drawings) in [0, 1].
torch::Tensor preprocess(const cv::Mat& raw, int size, Kind kind, PreprocessOptions opts = {});
torch::Tensor load_preprocessed(const ImageRecord& record, int size, PreprocessOptions opts = {});
/// Stacks preprocessed images into N x C x size x size.
torch::Tensor load_batch(std::span<const ImageRecord> records, int size);

struct RegionMaskSet {
  std::string photo_id;
  RegionMap regions;

  /// Stacks the regions named in kFaceRegions into 3 x H x W.
  torch::Tensor stacked() const;
};

/// Disc structuring-element dilation of a 1 x H x W binary mask.
torch::Tensor dilate_disc(const torch::Tensor& mask, int radius);
int dilation_radius(double dilation_frac, int64_t side);

/// Parses facial regions and dilates each by ceil(dilation_frac * side) pixels.
RegionMaskSet region_masks(const torch::Tensor& image, const FaceParser& parser, double dilation_frac,
                           const std::string& image_id = {});

struct UnpairedBatch {
  std::vector<size_t> photo_index;
  std::vector<size_t> drawing_index;
  std::vector<StyleVector> styles;  // one per photo, drawn from the empirical pool
};

/// Pure function of (sizes, pool, batch, seed, step): photos and drawings are drawn
/// independently with replacement, and each photo gets a style vector drawn from
/// `style_pool` (the style vectors extracted from the training drawings).
UnpairedBatch sample_unpaired_batch(size_t n_photos, size_t n_drawings, std::span<const StyleVector> style_pool,
                                    int batch, uint64_t seed, uint64_t step = 0);

}  // namespace apdraw
