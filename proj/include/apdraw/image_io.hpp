#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace apdraw {

// Image tensors are C x H x W (or N x C x H x W for batches), float, intensities in [0, 1].
// Photos carry 3 channels in RGB order, drawings and masks carry 1.

/// Decodes a PNG/JPEG file; throws DecodeError when the file cannot be decoded.
cv::Mat read_image(const std::filesystem::path& path);
cv::Mat decode_image(std::span<const uint8_t> bytes);

/// 8-bit (gray or BGR) matrix to a C x H x W float tensor in [0, 1], RGB channel order.
torch::Tensor mat_to_tensor(const cv::Mat& mat);
/// C x H x W tensor in [0, 1] to an 8-bit gray or BGR matrix.
cv::Mat tensor_to_mat(const torch::Tensor& image);

void write_png(const torch::Tensor& image, const std::filesystem::path& path);
std::vector<uint8_t> encode_png(const torch::Tensor& image);

}  // namespace apdraw
