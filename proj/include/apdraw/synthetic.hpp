#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "apdraw/common.hpp"
#include "apdraw/corpus.hpp"

namespace apdraw {

// Procedural portrait fixtures for the toy profile and the test suites: face
// photos with facial parts at the canonical layout, and line drawings in three
// distinguishable styles (hatching, sparse lines, thick lines with dark hair).

cv::Mat synth_photo(int size, uint64_t seed);
cv::Mat synth_drawing(int size, StyleTag style, uint64_t seed);

/// Writes PNGs plus `manifest.tsv` into `dir`. Drawings cycle through the three
/// styles. Returns the records in manifest order.
std::vector<ImageRecord> write_synthetic_corpus(const std::filesystem::path& dir, int n_photos, int n_drawings,
                                                int size, uint64_t seed);

}  // namespace apdraw
