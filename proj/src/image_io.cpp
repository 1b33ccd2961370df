#include "apdraw/image_io.hpp"

#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "apdraw/common.hpp"

namespace apdraw {

cv::Mat read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open image " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const DecodeError&) {
    throw DecodeError("cannot decode image " + path.string());
  }
}

cv::Mat decode_image(std::span<const uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty image buffer");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<uint8_t*>(bytes.data()));
  cv::Mat img = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (img.empty()) throw DecodeError("undecodable image buffer");
  if (img.depth() == CV_16U) img.convertTo(img, CV_8U, 1.0 / 257.0);
  if (img.channels() == 4) cv::cvtColor(img, img, cv::COLOR_BGRA2BGR);
  return img;
}

torch::Tensor mat_to_tensor(const cv::Mat& mat) {
  if (mat.depth() != CV_8U) throw DecodeError("expected an 8-bit image");
  // cvtColor into a fresh Mat: an in-place call would rewrite the caller's shared buffer.
  cv::Mat src;
  if (mat.channels() == 3)
    cv::cvtColor(mat, src, cv::COLOR_BGR2RGB);
  else
    src = mat;
  if (!src.isContinuous()) src = src.clone();
  const int c = src.channels();
  auto t = torch::from_blob(src.data, {src.rows, src.cols, c}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0f).contiguous();
}

cv::Mat tensor_to_mat(const torch::Tensor& image) {
  auto t = image.detach().to(torch::kCPU);
  if (t.dim() == 4) {
    if (t.size(0) != 1) throw ShapeError("tensor_to_mat expects a single image");
    t = t.squeeze(0);
  }
  if (t.dim() == 2) t = t.unsqueeze(0);
  if (t.dim() != 3 || (t.size(0) != 1 && t.size(0) != 3)) throw ShapeError("tensor_to_mat expects 1xHxW or 3xHxW");
  auto bytes = t.to(torch::kFloat32).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  const int c = static_cast<int>(bytes.size(2));
  cv::Mat mat(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC(c), bytes.data_ptr<uint8_t>());
  mat = mat.clone();
  if (c == 3) cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
  return mat;
}

std::vector<uint8_t> encode_png(const torch::Tensor& image) {
  std::vector<uint8_t> out;
  if (!cv::imencode(".png", tensor_to_mat(image), out)) throw Error("PNG encoding failed");
  return out;
}

void write_png(const torch::Tensor& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace apdraw
