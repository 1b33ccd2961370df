#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace apdraw {

// Error taxonomy. The CLI maps the first group to exit code 1 (input/validation)
// and everything else to exit code 2 (runtime).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DecodeError : Error {
  using Error::Error;
};
struct NoFaceError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NonFiniteError : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};

enum class Kind { photo, drawing };
enum class StyleTag { style1, style2, style3, untagged };
enum class Origin { real, synthesized };

std::string_view to_string(Kind k);
std::string_view to_string(StyleTag t);
std::string_view to_string(Origin o);
Kind parse_kind(std::string_view s);
StyleTag parse_style_tag(std::string_view s);
Origin parse_origin(std::string_view s);

/// Index of a tagged style (0, 1, 2); untagged has no index.
std::optional<int> style_index(StyleTag t);

/// A 3-component style code. Codes produced by the classifier or the basis
/// presets lie on the probability simplex; search may hold relaxed values.
struct StyleVector {
  std::array<double, 3> values{1.0, 0.0, 0.0};
  bool relaxed = false;

  static StyleVector basis(int k);
  bool on_simplex(double tol = 1e-6) const;
  /// 1x3 tensor of the given dtype.
  torch::Tensor to_tensor(torch::Dtype dtype = torch::kFloat32) const;
  static StyleVector from_tensor(const torch::Tensor& t, bool relaxed = false);
  std::string str() const;

  bool operator==(const StyleVector&) const = default;
};

/// Parses "a,b,c" into a style vector; throws ValidationError on bad input.
StyleVector parse_style_vector(std::string_view text);

/// Region names used by the local discriminators and dissection, in channel order.
inline constexpr std::array<std::string_view, 3> kFaceRegions{"eyes", "nose", "lips"};

}  // namespace apdraw
