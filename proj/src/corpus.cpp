#include "apdraw/corpus.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "apdraw/image_io.hpp"
#include "apdraw/rng.hpp"

namespace apdraw {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    auto end = line.find('\t', start);
    fields.push_back(line.substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return fields;
}

}  // namespace

std::vector<ImageRecord> parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  std::vector<ImageRecord> out;
  std::set<std::string> ids;
  std::string line;
  size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (line != kManifestHeader)
        throw ParseError("manifest line 1: expected header '" + std::string(kManifestHeader) + "'");
      header_seen = true;
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    auto f = split_tabs(line);
    auto where = "manifest line " + std::to_string(lineno) + ": ";
    if (f.size() != 5) throw ParseError(where + "expected 5 tab-separated fields, got " + std::to_string(f.size()));
    ImageRecord r;
    r.id = f[0];
    if (r.id.empty()) throw ParseError(where + "empty id");
    r.path = f[1];
    if (r.path.empty()) throw ParseError(where + "empty path");
    if (r.path.is_relative() && !base_dir.empty()) r.path = base_dir / r.path;
    try {
      r.kind = parse_kind(f[2]);
      if (!f[3].empty() && f[3] != "-") r.style_tag = parse_style_tag(f[3]);
      r.origin = parse_origin(f[4]);
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
    if (r.kind == Kind::photo && r.style_tag) throw ValidationError(where + "photos carry no style tag");
    if (r.kind == Kind::photo && r.origin == Origin::synthesized)
      throw ValidationError(where + "only drawings may be synthesized");
    if (r.kind == Kind::drawing && !r.style_tag) r.style_tag = StyleTag::untagged;
    if (!ids.insert(r.id).second) throw ValidationError(where + "duplicate id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  if (!header_seen) return out;  // an empty file is an empty manifest
  return out;
}

std::vector<ImageRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

void save_manifest(const std::filesystem::path& path, std::span<const ImageRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  const auto base = path.parent_path();
  for (const auto& r : records) {
    auto p = r.path;
    if (!base.empty() && p.is_absolute()) {
      auto rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    out << r.id << '\t' << p.generic_string() << '\t' << to_string(r.kind) << '\t'
        << (r.style_tag ? to_string(*r.style_tag) : std::string_view("-")) << '\t' << to_string(r.origin) << '\n';
  }
}

CorpusCounts count_records(std::span<const ImageRecord> records) {
  CorpusCounts c;
  for (const auto& r : records) {
    if (r.kind == Kind::photo) {
      ++c.photos;
    } else {
      ++c.drawings;
      ++c.by_style[r.style_tag.value_or(StyleTag::untagged)];
    }
  }
  return c;
}

std::vector<ImageRecord> select(std::span<const ImageRecord> records, Kind kind) {
  std::vector<ImageRecord> out;
  for (const auto& r : records)
    if (r.kind == kind) out.push_back(r);
  return out;
}

torch::Tensor preprocess(const cv::Mat& raw, int size, Kind kind, PreprocessOptions opts) {
  if (size < 16) throw ValidationError("preprocess size must be >= 16");
  if (raw.empty()) throw DecodeError("empty image");
  cv::Mat img = raw;
  if (kind == Kind::photo && img.channels() == 1) cv::cvtColor(img, img, cv::COLOR_GRAY2BGR);
  if (kind == Kind::drawing && img.channels() == 3) cv::cvtColor(img, img, cv::COLOR_BGR2GRAY);

  if (img.rows != size || img.cols != size) {
    const double scale = static_cast<double>(size) / std::min(img.rows, img.cols);
    const int w = std::max(size, static_cast<int>(std::lround(img.cols * scale)));
    const int h = std::max(size, static_cast<int>(std::lround(img.rows * scale)));
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(w, h), 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
    const int x0 = (w - size) / 2, y0 = (h - size) / 2;
    img = resized(cv::Rect(x0, y0, size, size)).clone();
  }
  auto t = mat_to_tensor(img);
  if (opts.hflip) t = t.flip({2}).contiguous();
  return t;
}

torch::Tensor load_preprocessed(const ImageRecord& record, int size, PreprocessOptions opts) {
  return preprocess(read_image(record.path), size, record.kind, opts);
}

torch::Tensor load_batch(std::span<const ImageRecord> records, int size) {
  std::vector<torch::Tensor> items;
  items.reserve(records.size());
  for (const auto& r : records) items.push_back(load_preprocessed(r, size));
  if (items.empty()) return torch::empty({0});
  return torch::stack(items);
}

torch::Tensor RegionMaskSet::stacked() const {
  std::vector<torch::Tensor> parts;
  for (auto name : kFaceRegions) {
    auto it = regions.find(std::string(name));
    if (it == regions.end()) throw ValidationError("mask set lacks region " + std::string(name));
    parts.push_back(it->second.view({-1, it->second.size(-2), it->second.size(-1)}).select(0, 0));
  }
  return torch::stack(parts);
}

int dilation_radius(double dilation_frac, int64_t side) {
  if (dilation_frac < 0) throw ValidationError("dilation_frac must be >= 0");
  // Small tolerance keeps exact products (0.25 * 64 = 16) from rounding up on float noise.
  return static_cast<int>(std::ceil(dilation_frac * static_cast<double>(side) - 1e-9));
}

torch::Tensor dilate_disc(const torch::Tensor& mask, int radius) {
  auto binary = mask.gt(0.5).to(torch::kFloat32);
  if (radius <= 0) return binary;
  auto m = tensor_to_mat(binary);
  cv::Mat kernel(2 * radius + 1, 2 * radius + 1, CV_8U, cv::Scalar(0));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) kernel.at<uint8_t>(dy + radius, dx + radius) = 1;
  cv::Mat out;
  cv::dilate(m, out, kernel, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
  return mat_to_tensor(out).gt(0.5).to(torch::kFloat32);
}

RegionMaskSet region_masks(const torch::Tensor& image, const FaceParser& parser, double dilation_frac,
                           const std::string& image_id) {
  if (image.dim() != 3) throw ShapeError("region_masks expects a C x H x W image");
  const int radius = dilation_radius(dilation_frac, std::max(image.size(1), image.size(2)));
  RegionMaskSet set;
  set.photo_id = image_id;
  for (auto& [name, raw] : parser.parse(image, image_id)) set.regions[name] = dilate_disc(raw, radius);
  return set;
}

UnpairedBatch sample_unpaired_batch(size_t n_photos, size_t n_drawings, std::span<const StyleVector> style_pool,
                                    int batch, uint64_t seed, uint64_t step) {
  if (n_photos == 0 || n_drawings == 0) throw ValidationError("both photo and drawing domains must be non-empty");
  if (style_pool.empty()) throw ValidationError("style pool is empty");
  if (batch < 1) throw ValidationError("batch must be >= 1");
  Rng rng(mix_seed(seed, step));
  UnpairedBatch b;
  for (int i = 0; i < batch; ++i) {
    b.photo_index.push_back(uniform_index(rng, n_photos));
    b.drawing_index.push_back(uniform_index(rng, n_drawings));
    b.styles.push_back(style_pool[uniform_index(rng, style_pool.size())]);
  }
  return b;
}

}  // namespace apdraw
