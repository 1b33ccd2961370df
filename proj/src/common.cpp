#include "apdraw/common.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace apdraw {

std::string_view to_string(Kind k) { return k == Kind::photo ? "photo" : "drawing"; }

std::string_view to_string(StyleTag t) {
  switch (t) {
    case StyleTag::style1: return "style1";
    case StyleTag::style2: return "style2";
    case StyleTag::style3: return "style3";
    case StyleTag::untagged: return "untagged";
  }
  return "untagged";
}

std::string_view to_string(Origin o) { return o == Origin::real ? "real" : "synthesized"; }

Kind parse_kind(std::string_view s) {
  if (s == "photo") return Kind::photo;
  if (s == "drawing") return Kind::drawing;
  throw ParseError("unknown kind '" + std::string(s) + "'");
}

StyleTag parse_style_tag(std::string_view s) {
  if (s == "style1") return StyleTag::style1;
  if (s == "style2") return StyleTag::style2;
  if (s == "style3") return StyleTag::style3;
  if (s == "untagged") return StyleTag::untagged;
  throw ParseError("unknown style tag '" + std::string(s) + "'");
}

Origin parse_origin(std::string_view s) {
  if (s == "real") return Origin::real;
  if (s == "synthesized") return Origin::synthesized;
  throw ParseError("unknown origin '" + std::string(s) + "'");
}

std::optional<int> style_index(StyleTag t) {
  switch (t) {
    case StyleTag::style1: return 0;
    case StyleTag::style2: return 1;
    case StyleTag::style3: return 2;
    default: return std::nullopt;
  }
}

StyleVector StyleVector::basis(int k) {
  if (k < 0 || k > 2) throw ValidationError("style basis index must be 0, 1 or 2");
  StyleVector v;
  v.values = {0.0, 0.0, 0.0};
  v.values[static_cast<size_t>(k)] = 1.0;
  return v;
}

bool StyleVector::on_simplex(double tol) const {
  double sum = 0.0;
  for (double x : values) {
    if (x < -tol) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

torch::Tensor StyleVector::to_tensor(torch::Dtype dtype) const {
  auto t = torch::tensor({values[0], values[1], values[2]}, torch::kFloat64);
  return t.view({1, 3}).to(dtype);
}

StyleVector StyleVector::from_tensor(const torch::Tensor& t, bool relaxed) {
  auto flat = t.detach().to(torch::kFloat64).contiguous().view({-1});
  if (flat.numel() != 3) throw ValidationError("style vector must have 3 components");
  StyleVector v;
  auto acc = flat.accessor<double, 1>();
  v.values = {acc[0], acc[1], acc[2]};
  v.relaxed = relaxed;
  return v;
}

std::string StyleVector::str() const {
  std::ostringstream os;
  os.precision(17);
  os << values[0] << ',' << values[1] << ',' << values[2];
  return os.str();
}

StyleVector parse_style_vector(std::string_view text) {
  std::array<double, 3> out{};
  size_t n = 0;
  size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto field = text.substr(start, end - start);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
    if (n >= 3) throw ValidationError("style vector must have exactly 3 components");
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v))
      throw ValidationError("bad style component '" + std::string(field) + "'");
    out[n++] = v;
    start = end + 1;
  }
  if (n != 3) throw ValidationError("style vector must have exactly 3 components");
  StyleVector sv;
  sv.values = out;
  sv.relaxed = !sv.on_simplex();
  return sv;
}

}  // namespace apdraw
