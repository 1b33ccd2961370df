#include "apdraw/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace apdraw {

void PreferenceAnswer::validate() const {
  if (question_id.empty()) throw ValidationError("answer without question_id");
  if (!style_index(style)) throw ValidationError("answer style must be style1, style2 or style3");
  for (const auto& id : drawing_ids)
    if (id.empty()) throw ValidationError("answer " + question_id + ": empty drawing id");
  if (drawing_ids[0] == drawing_ids[1] || drawing_ids[0] == drawing_ids[2] || drawing_ids[1] == drawing_ids[2])
    throw ValidationError("answer " + question_id + ": drawing ids are not distinct");
  auto a = drawing_ids, b = order;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) throw ValidationError("answer " + question_id + ": order is not a permutation of the drawing ids");
}

nlohmann::json PreferenceAnswer::to_json() const {
  return {{"question_id", question_id}, {"style", std::string(to_string(style))},
          {"drawing_ids", drawing_ids}, {"order", order},
          {"timestamp", timestamp},     {"annotator", annotator}};
}

PreferenceAnswer PreferenceAnswer::from_json(const nlohmann::json& j) {
  try {
    PreferenceAnswer a;
    a.question_id = j.at("question_id").get<std::string>();
    a.style = parse_style_tag(j.at("style").get<std::string>());
    a.drawing_ids = j.at("drawing_ids").get<std::array<std::string, 3>>();
    a.order = j.at("order").get<std::array<std::string, 3>>();
    a.timestamp = j.value("timestamp", "");
    a.annotator = j.value("annotator", "");
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed answer: ") + e.what());
  }
}

ScoreTable::ScoreTable(const std::map<StyleTag, std::vector<std::string>>& pools) : open_(false) {
  for (const auto& [style, ids] : pools)
    for (const auto& id : ids) add_drawing(id, style);
}

void ScoreTable::add_drawing(const std::string& id, StyleTag style) {
  auto [it, inserted] = entries_.try_emplace(id);
  if (inserted) {
    it->second.style = style;
  } else if (it->second.style != style) {
    throw ValidationError("drawing " + id + " registered under two styles");
  }
}

const ScoreEntry& ScoreTable::at(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ValidationError("unknown drawing id " + id);
  return it->second;
}

void ScoreTable::record(const PreferenceAnswer& answer) {
  answer.validate();
  if (seen_question(answer.question_id)) throw ReplayError("question " + answer.question_id + " already answered");
  for (const auto& id : answer.order) {
    auto it = entries_.find(id);
    if (it == entries_.end()) {
      if (!open_) throw ValidationError("answer " + answer.question_id + ": unknown drawing id " + id);
    } else if (it->second.style != answer.style) {
      throw ValidationError("answer " + answer.question_id + ": drawing " + id + " is not " +
                            std::string(to_string(answer.style)));
    }
  }
  for (const auto& id : answer.order) add_drawing(id, answer.style);
  entries_[answer.order[0]].raw -= 2;
  entries_[answer.order[2]].raw += 2;
  for (const auto& id : answer.order) {
    entries_[id].appearances += 1;
    entries_[id].normalized.reset();
  }
  questions_.insert(answer.question_id);
}

long long ScoreTable::raw_sum() const {
  long long s = 0;
  for (const auto& [id, e] : entries_) s += e.raw;
  return s;
}

bool ScoreTable::operator==(const ScoreTable& other) const {
  if (entries_.size() != other.entries_.size() || questions_ != other.questions_) return false;
  for (const auto& [id, e] : entries_) {
    auto it = other.entries_.find(id);
    if (it == other.entries_.end()) return false;
    const auto& o = it->second;
    if (e.style != o.style || e.raw != o.raw || e.appearances != o.appearances || e.normalized != o.normalized)
      return false;
  }
  return true;
}

nlohmann::json ScoreTable::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [id, e] : entries_) {
    nlohmann::json row{{"style", std::string(to_string(e.style))}, {"raw", e.raw}, {"appearances", e.appearances}};
    row["normalized"] = e.normalized ? nlohmann::json(*e.normalized) : nlohmann::json(nullptr);
    out[id] = row;
  }
  return out;
}

ScoreTable& record_answer(const PreferenceAnswer& answer, ScoreTable& table) {
  table.record(answer);
  return table;
}

ScoreTable aggregate_scores(std::span<const PreferenceAnswer> answers, ScoreTable base) {
  for (size_t i = 0; i < answers.size(); ++i) {
    try {
      base.record(answers[i]);
    } catch (const ReplayError& e) {
      throw ReplayError("answer #" + std::to_string(i) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("answer #" + std::to_string(i) + ": " + e.what());
    }
  }
  return base;
}

ScoreTable normalize_scores(const ScoreTable& table) {
  std::map<StyleTag, std::pair<long long, long long>> range;
  for (const auto& [id, e] : table.entries_) {
    if (e.appearances == 0) continue;
    auto [it, inserted] = range.try_emplace(e.style, e.raw, e.raw);
    if (!inserted) {
      it->second.first = std::min(it->second.first, e.raw);
      it->second.second = std::max(it->second.second, e.raw);
    }
  }
  if (range.empty()) throw ValidationError("no scored drawings to normalize");
  ScoreTable out = table;
  for (auto& [id, e] : out.entries_) {
    if (e.appearances == 0) {
      e.normalized.reset();
      continue;
    }
    const auto [lo, hi] = range.at(e.style);
    if (lo == hi) {
      e.normalized = 0.55;
    } else if (e.raw == lo) {
      e.normalized = 0.1;
    } else if (e.raw == hi) {
      e.normalized = 1.0;
    } else {
      e.normalized = 0.1 + 0.9 * static_cast<double>(e.raw - lo) / static_cast<double>(hi - lo);
    }
  }
  return out;
}

std::string TripletHistory::key(std::array<std::string, 3> ids) {
  std::sort(ids.begin(), ids.end());
  return ids[0] + '\x1f' + ids[1] + '\x1f' + ids[2];
}

bool TripletHistory::contains(const std::array<std::string, 3>& ids) const { return seen_.count(key(ids)) != 0; }

void TripletHistory::add(const std::array<std::string, 3>& ids) { seen_.insert(key(ids)); }

std::array<std::string, 3> sample_triplet(std::span<const std::string> pool, Rng& rng, const TripletHistory& history) {
  const uint64_t n = pool.size();
  if (n < 3) throw ValidationError("style pool needs at least 3 drawings, has " + std::to_string(n));
  const uint64_t total = n * (n - 1) * (n - 2) / 6;
  if (history.size() >= total) throw PoolExhausted("every triplet of this pool has been asked");

  auto shuffle3 = [&](std::array<std::string, 3> t) {
    for (size_t i = 2; i > 0; --i) std::swap(t[i], t[uniform_index(rng, i + 1)]);
    return t;
  };
  for (int attempt = 0; attempt < 64; ++attempt) {
    uint64_t a = uniform_index(rng, n), b = uniform_index(rng, n - 1), c = uniform_index(rng, n - 2);
    if (b >= a) ++b;
    const uint64_t lo = std::min(a, b), hi = std::max(a, b);
    if (c >= lo) ++c;
    if (c >= hi) ++c;
    std::array<std::string, 3> t{pool[a], pool[b], pool[c]};
    if (!history.contains(t)) return t;
  }
  // Dense history: enumerate what is left and pick uniformly.
  std::vector<std::array<uint64_t, 3>> left;
  for (uint64_t i = 0; i < n; ++i)
    for (uint64_t j = i + 1; j < n; ++j)
      for (uint64_t k = j + 1; k < n; ++k)
        if (!history.contains({pool[i], pool[j], pool[k]})) left.push_back({i, j, k});
  if (left.empty()) throw PoolExhausted("every triplet of this pool has been asked");
  const auto& pick = left[uniform_index(rng, left.size())];
  return shuffle3({pool[pick[0]], pool[pick[1]], pool[pick[2]]});
}

std::array<std::string, 3> sample_triplet(std::span<const std::string> pool, uint64_t seed,
                                          const TripletHistory& history) {
  Rng rng(seed);
  return sample_triplet(pool, rng, history);
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("kendall_tau needs equal-length inputs");
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if ((da > 0) == (db > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double denom = std::sqrt(static_cast<double>(concordant + discordant + ties_a) *
                                 static_cast<double>(concordant + discordant + ties_b));
  if (denom == 0) return 0.0;
  return static_cast<double>(concordant - discordant) / denom;
}

std::vector<MetricRow> build_metric_dataset(const ScoreTable& normalized, std::span<const ImageRecord> manifest) {
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : manifest) by_id[r.id] = &r;

  std::vector<MetricRow> rows;
  std::vector<std::string> missing;
  std::map<StyleTag, size_t> per_style;
  for (const auto& [id, e] : normalized.entries()) {
    if (e.appearances == 0) continue;
    if (!e.normalized) throw ValidationError("scores must be normalized before building the metric dataset");
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      missing.push_back(id);
      continue;
    }
    rows.push_back({id, it->second->path, e.style, *e.normalized});
    ++per_style[e.style];
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("drawings missing from manifest: " + list);
  }
  for (auto s : {StyleTag::style1, StyleTag::style2, StyleTag::style3})
    if (per_style[s] == 0) std::cerr << "warning: no scored drawings for " << to_string(s) << "; style excluded\n";
  return rows;
}

void write_metric_dataset(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  for (const auto& r : rows) out << r.path.string() << '\t' << r.score << '\n';
}

std::vector<MetricRow> read_metric_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open metric dataset " + path.string());
  std::vector<MetricRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected path<TAB>score");
    MetricRow r;
    r.path = line.substr(0, tab);
    if (r.path.is_relative()) r.path = path.parent_path() / r.path;
    r.id = r.path.stem().string();
    try {
      size_t used = 0;
      const auto field = line.substr(tab + 1);
      r.score = std::stod(field, &used);
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad score");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_scores_csv(const std::filesystem::path& path, const ScoreTable& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "id,style,raw,normalized,appearances\n";
  for (const auto& [id, e] : table.entries()) {
    out << id << ',' << to_string(e.style) << ',' << e.raw << ',';
    if (e.normalized) out << *e.normalized;
    out << ',' << e.appearances << '\n';
  }
}

AnswerLog::AnswerLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  out_.open(path_, std::ios::app);
  if (!out_) throw Error("cannot open answer log " + path_.string());
}

void AnswerLog::append(const PreferenceAnswer& answer) {
  out_ << answer.to_json().dump() << '\n';
  out_.flush();
  if (!out_) throw Error("failed writing answer log " + path_.string());
}

std::vector<PreferenceAnswer> read_answer_log(const std::filesystem::path& path) {
  std::vector<PreferenceAnswer> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(PreferenceAnswer::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace apdraw
