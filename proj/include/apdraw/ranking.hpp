#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "apdraw/common.hpp"
#include "apdraw/corpus.hpp"
#include "apdraw/rng.hpp"

namespace apdraw {

/// One study response. `order` lists the three drawings worst to best.
struct PreferenceAnswer {
  std::string question_id;
  StyleTag style = StyleTag::style1;
  std::array<std::string, 3> drawing_ids;
  std::array<std::string, 3> order;
  std::string timestamp;
  std::string annotator;

  /// Throws ValidationError unless the ids are distinct, the style is tagged and
  /// `order` is a permutation of `drawing_ids`.
  void validate() const;
  nlohmann::json to_json() const;
  static PreferenceAnswer from_json(const nlohmann::json& j);
};

/// Rejected because its question id was already recorded.
struct ReplayError : ValidationError {
  using ValidationError::ValidationError;
};

struct ScoreEntry {
  StyleTag style = StyleTag::style1;
  long long raw = 0;
  int appearances = 0;
  std::optional<double> normalized;  // set by normalize_scores for drawings that appeared
};

/// Per-drawing raw (integer) and normalized scores. A table built from pools only
/// accepts answers about pool drawings; an open table registers ids on first sight.
class ScoreTable {
 public:
  ScoreTable() = default;
  explicit ScoreTable(const std::map<StyleTag, std::vector<std::string>>& pools);

  bool open() const { return open_; }
  void add_drawing(const std::string& id, StyleTag style);
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  const ScoreEntry& at(const std::string& id) const;
  const std::map<std::string, ScoreEntry>& entries() const { return entries_; }
  bool seen_question(const std::string& question_id) const { return questions_.count(question_id) != 0; }
  size_t answers() const { return questions_.size(); }

  /// I1 -= 2, I3 += 2, all three appearances += 1. Throws ReplayError for a known
  /// question id and ValidationError for unknown drawings; the table is unchanged
  /// on error.
  void record(const PreferenceAnswer& answer);
  long long raw_sum() const;
  bool operator==(const ScoreTable& other) const;

  nlohmann::json to_json() const;

 private:
  friend ScoreTable normalize_scores(const ScoreTable& table);
  bool open_ = true;
  std::map<std::string, ScoreEntry> entries_;
  std::set<std::string> questions_;
};

ScoreTable& record_answer(const PreferenceAnswer& answer, ScoreTable& table);

/// Folds record_answer over the answers. Errors name the offending answer index.
ScoreTable aggregate_scores(std::span<const PreferenceAnswer> answers, ScoreTable base = {});

/// Per style, affine map of raw scores of drawings that appeared: min -> 0.1,
/// max -> 1.0 (endpoints exact); all equal -> 0.55.
ScoreTable normalize_scores(const ScoreTable& table);

/// Unordered triplets already asked, keyed by their sorted ids.
class TripletHistory {
 public:
  bool contains(const std::array<std::string, 3>& ids) const;
  void add(const std::array<std::string, 3>& ids);
  size_t size() const { return seen_.size(); }

 private:
  static std::string key(std::array<std::string, 3> ids);
  std::set<std::string> seen_;
};

struct PoolExhausted : ValidationError {
  using ValidationError::ValidationError;
};

/// Uniformly random distinct triplet from one style's pool that is not in
/// `history`. Throws ValidationError for pools under 3 and PoolExhausted when
/// every triplet has been asked.
std::array<std::string, 3> sample_triplet(std::span<const std::string> pool, Rng& rng,
                                          const TripletHistory& history = {});
std::array<std::string, 3> sample_triplet(std::span<const std::string> pool, uint64_t seed,
                                          const TripletHistory& history = {});

/// Kendall tau-b between two score vectors (ties handled); 0 when either is constant.
double kendall_tau(std::span<const double> a, std::span<const double> b);

struct MetricRow {
  std::string id;
  std::filesystem::path path;
  StyleTag style = StyleTag::style1;
  double score = 0;
};

/// Normalized scores of every drawing that appeared, joined to the manifest.
/// Styles without scored drawings are skipped with a warning; ids missing from
/// the manifest raise ValidationError listing them.
std::vector<MetricRow> build_metric_dataset(const ScoreTable& normalized, std::span<const ImageRecord> manifest);

/// Two columns, tab-separated: path, score.
void write_metric_dataset(const std::filesystem::path& path, std::span<const MetricRow> rows);
std::vector<MetricRow> read_metric_dataset(const std::filesystem::path& path);

/// CSV with id, style, raw, normalized, appearances.
void write_scores_csv(const std::filesystem::path& path, const ScoreTable& table);

/// Append-only JSON-lines answer log.
class AnswerLog {
 public:
  explicit AnswerLog(std::filesystem::path path);
  void append(const PreferenceAnswer& answer);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Reads every answer of a log; a missing file is an empty log.
std::vector<PreferenceAnswer> read_answer_log(const std::filesystem::path& path);

}  // namespace apdraw
