#include "apdraw/serve.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <random>

#include <httplib.h>
#include <openssl/evp.h>

#include "apdraw/image_io.hpp"

namespace apdraw {

std::string sha256_hex(std::span<const uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

nlohmann::json StudyQuestion::to_json() const {
  return {{"question_id", question_id},
          {"style", std::string(to_string(style))},
          {"drawing_ids", drawing_ids},
          {"drawing_urls", drawing_urls}};
}

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

constexpr std::array<StyleTag, 3> kStyles{StyleTag::style1, StyleTag::style2, StyleTag::style3};

}  // namespace

StudyService::StudyService(std::span<const ImageRecord> records, std::filesystem::path answer_log, uint64_t seed)
    : log_path_(answer_log), log_(std::move(answer_log)), rng_(seed), nonce_(std::random_device{}()) {
  for (const auto& r : records) {
    if (r.kind != Kind::drawing || !r.style_tag || !style_index(*r.style_tag)) continue;
    pools_[*r.style_tag].push_back(r.id);
    const auto h = file_sha256(r.path);
    hash_of_[r.id] = h;
    by_hash_[h] = r.path;
  }
  if (pools_.empty()) throw ValidationError("study manifest has no style-tagged drawings");
  table_ = ScoreTable(pools_);
  const auto past = read_answer_log(log_path_);
  table_ = aggregate_scores(past, table_);
}

StudyService::Session& StudyService::session_at(const std::string& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw HttpError(404, "unknown session " + id);
  return it->second;
}

const StudyService::Session& StudyService::session_at(const std::string& id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw HttpError(404, "unknown session " + id);
  return it->second;
}

std::string StudyService::open_session(const std::string& annotator, std::optional<StyleTag> focus) {
  std::lock_guard lock(mu_);
  if (focus && pools_.count(*focus) == 0) throw HttpError(422, "no drawings for " + std::string(to_string(*focus)));
  char buf[48];
  ++session_counter_;
  std::snprintf(buf, sizeof buf, "s%llu-%08llx", static_cast<unsigned long long>(session_counter_),
                static_cast<unsigned long long>(mix_seed(nonce_, session_counter_) & 0xffffffffULL));
  Session s;
  s.annotator = annotator;
  s.focus = focus;
  sessions_.emplace(buf, std::move(s));
  return buf;
}

StudyQuestion StudyService::next(const std::string& session) {
  std::lock_guard lock(mu_);
  auto& s = session_at(session);
  std::vector<StyleTag> order;
  if (s.focus) {
    order.push_back(*s.focus);
  } else {
    for (size_t k = 0; k < kStyles.size(); ++k) {
      auto style = kStyles[(static_cast<size_t>(s.turn) + k) % kStyles.size()];
      if (pools_.count(style)) order.push_back(style);
    }
  }
  for (auto style : order) {
    const auto& pool = pools_.at(style);
    if (pool.size() < 3) continue;
    std::array<std::string, 3> ids;
    try {
      ids = sample_triplet(pool, rng_, s.history[style]);
    } catch (const PoolExhausted&) {
      continue;
    }
    s.history[style].add(ids);
    s.counts[style].served += 1;
    s.turn += 1;
    StudyQuestion q;
    q.question_id = session + "-q" + std::to_string(s.turn);
    q.style = style;
    q.drawing_ids = ids;
    for (size_t i = 0; i < 3; ++i) q.drawing_urls[i] = "/api/images/" + hash_of_.at(ids[i]);
    served_[q.question_id] = {session, style, ids, false};
    return q;
  }
  throw HttpError(409, "no unasked triplets left for this session");
}

nlohmann::json StudyService::answer(const std::string& session, const std::string& question_id,
                                    const std::array<std::string, 3>& order) {
  std::lock_guard lock(mu_);
  auto& s = session_at(session);
  if (table_.seen_question(question_id)) throw HttpError(409, "question " + question_id + " already answered");
  auto it = served_.find(question_id);
  if (it == served_.end() || it->second.session != session)
    throw HttpError(404, "question " + question_id + " was not served to this session");
  auto& q = it->second;
  if (q.answered) throw HttpError(409, "question " + question_id + " already answered");

  PreferenceAnswer a;
  a.question_id = question_id;
  a.style = q.style;
  a.drawing_ids = q.ids;
  a.order = order;
  a.timestamp = utc_timestamp();
  a.annotator = s.annotator;
  try {
    a.validate();
  } catch (const ValidationError& e) {
    throw HttpError(422, e.what());
  }
  auto updated = table_;
  updated.record(a);
  log_.append(a);
  table_ = std::move(updated);
  q.answered = true;
  s.counts[q.style].answered += 1;

  nlohmann::json progress_json;
  for (const auto& [style, c] : s.counts)
    progress_json[std::string(to_string(style))] = {{"served", c.served}, {"answered", c.answered}};
  return {{"accepted", true}, {"progress", progress_json}};
}

nlohmann::json StudyService::progress(const std::string& session) const {
  std::lock_guard lock(mu_);
  const auto& s = session_at(session);
  nlohmann::json out;
  int served = 0, answered = 0;
  for (auto style : kStyles) {
    if (!pools_.count(style)) continue;
    StyleProgress c;
    if (auto it = s.counts.find(style); it != s.counts.end()) c = it->second;
    out["styles"][std::string(to_string(style))] = {{"served", c.served}, {"answered", c.answered}};
    served += c.served;
    answered += c.answered;
  }
  out["served"] = served;
  out["answered"] = answered;
  return out;
}

std::optional<std::string> StudyService::session_of(const std::string& question_id) const {
  std::lock_guard lock(mu_);
  auto it = served_.find(question_id);
  if (it == served_.end()) return std::nullopt;
  return it->second.session;
}

ScoreTable StudyService::table() const {
  std::lock_guard lock(mu_);
  return table_;
}

nlohmann::json StudyService::scores_json() const {
  std::lock_guard lock(mu_);
  ScoreTable t = table_;
  try {
    t = normalize_scores(table_);
  } catch (const ValidationError&) {
    // nothing answered yet
  }
  return {{"answers", t.answers()}, {"scores", t.to_json()}};
}

std::optional<std::filesystem::path> StudyService::image_path(const std::string& sha256) const {
  std::lock_guard lock(mu_);
  auto it = by_hash_.find(sha256);
  if (it == by_hash_.end()) return std::nullopt;
  return it->second;
}

void GenerationService::load(ResnetGenerator G) {
  std::lock_guard lock(mu_);
  G->eval();
  G_ = std::move(G);
}

bool GenerationService::loaded() const {
  std::lock_guard lock(mu_);
  return !G_.is_empty();
}

void GenerationService::add_photo(const std::string& id, const std::filesystem::path& path) {
  std::lock_guard lock(mu_);
  photos_[id] = path;
}

std::string style_header(const StyleVector& s) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", s.values[0], s.values[1], s.values[2]);
  return buf;
}

GenerationService::Result GenerationService::generate(const std::optional<std::string>& photo_id,
                                                      const std::optional<std::vector<uint8_t>>& upload,
                                                      const nlohmann::json& style) {
  if (!style.is_array() || style.size() != 3) throw HttpError(422, "style must be an array of exactly 3 numbers");
  StyleVector s;
  for (size_t i = 0; i < 3; ++i) {
    if (!style[i].is_number()) throw HttpError(422, "style components must be numbers");
    s.values[i] = style[i].get<double>();
    if (!std::isfinite(s.values[i])) throw HttpError(422, "style components must be finite");
  }
  s.relaxed = !s.on_simplex();
  if (photo_id.has_value() == upload.has_value()) throw HttpError(422, "give exactly one of photo_id or upload");

  std::lock_guard lock(mu_);
  if (G_.is_empty()) throw HttpError(503, "no generator loaded");
  cv::Mat raw;
  if (photo_id) {
    auto it = photos_.find(*photo_id);
    if (it == photos_.end()) throw HttpError(404, "unknown photo " + *photo_id);
    raw = read_image(it->second);
  } else {
    try {
      raw = decode_image(*upload);
    } catch (const DecodeError& e) {
      throw HttpError(422, e.what());
    }
  }
  auto p = preprocess(raw, static_cast<int>(G_->options().image_size), Kind::photo);
  torch::NoGradGuard no_grad;
  auto d = generate_drawing(p, s, G_);
  return {encode_png(d), s};
}

namespace {

std::vector<uint8_t> base64_decode(const std::string& text) {
  std::vector<uint8_t> out(3 * ((text.size() + 3) / 4) + 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw HttpError(422, "upload is not valid base64");
  size_t len = static_cast<size_t>(n);
  size_t pad = 0;
  for (auto it = text.rbegin(); it != text.rend() && *it == '='; ++it) ++pad;
  out.resize(len - std::min(pad, len));
  return out;
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
auto guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const HttpError& e) {
      send_json(res, e.status, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 422, {{"error", std::string("malformed request: ") + e.what()}});
    } catch (const ValidationError& e) {
      send_json(res, 422, {{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

nlohmann::json body_json(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body.empty() ? "{}" : req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw HttpError(422, "request body must be a JSON object");
  return j;
}

std::string required_param(const httplib::Request& req, const std::string& name) {
  if (!req.has_param(name)) throw HttpError(422, "missing query parameter " + name);
  return req.get_param_value(name);
}

}  // namespace

void install_routes(httplib::Server& server, StudyService& study, GenerationService& generation) {
  server.Post("/api/study/session", guarded([&](const httplib::Request& req, httplib::Response& res) {
                auto j = body_json(req);
                std::optional<StyleTag> focus;
                if (j.contains("style") && !j["style"].is_null()) {
                  try {
                    focus = parse_style_tag(j["style"].get<std::string>());
                  } catch (const Error& e) {
                    throw HttpError(422, e.what());
                  }
                }
                send_json(res, 200, {{"session", study.open_session(j.value("annotator", "anonymous"), focus)}});
              }));
  server.Get("/api/study/next", guarded([&](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, study.next(required_param(req, "session")).to_json());
             }));
  server.Post("/api/study/answer", guarded([&](const httplib::Request& req, httplib::Response& res) {
                auto j = body_json(req);
                if (!j.contains("order") || !j["order"].is_array() || j["order"].size() != 3)
                  throw HttpError(422, "order must list the three drawing ids worst to best");
                std::array<std::string, 3> order;
                for (size_t i = 0; i < 3; ++i) {
                  if (!j["order"][i].is_string()) throw HttpError(422, "order entries must be drawing ids");
                  order[i] = j["order"][i].get<std::string>();
                }
                const auto qid = j.at("question_id").get<std::string>();
                std::string session;
                if (j.contains("session")) {
                  session = j["session"].get<std::string>();
                } else {
                  auto owner = study.session_of(qid);
                  if (!owner) throw HttpError(404, "question " + qid + " was never served");
                  session = *owner;
                }
                send_json(res, 200, study.answer(session, qid, order));
              }));
  server.Get("/api/study/scores", guarded([&](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, study.scores_json());
             }));
  server.Get("/api/study/progress", guarded([&](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, study.progress(required_param(req, "session")));
             }));
  server.Get(R"(/api/images/([0-9a-f]{64}))", guarded([&](const httplib::Request& req, httplib::Response& res) {
               auto path = study.image_path(req.matches[1].str());
               if (!path) throw HttpError(404, "unknown image");
               std::ifstream in(*path, std::ios::binary);
               std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
               res.set_header("Cache-Control", "public, max-age=31536000, immutable");
               res.set_content(bytes, "image/png");
             }));
  server.Post("/api/generate", guarded([&](const httplib::Request& req, httplib::Response& res) {
                auto j = body_json(req);
                std::optional<std::string> photo;
                std::optional<std::vector<uint8_t>> upload;
                if (j.contains("photo_id")) photo = j["photo_id"].get<std::string>();
                if (j.contains("upload")) upload = base64_decode(j["upload"].get<std::string>());
                auto result = generation.generate(photo, upload, j.value("style", nlohmann::json()));
                res.set_header("X-Style-Vector", style_header(result.style));
                res.set_content(std::string(result.png.begin(), result.png.end()), "image/png");
              }));
}

void run_server(StudyService& study, GenerationService& generation, const std::string& host, int port) {
  httplib::Server server;
  install_routes(server, study, generation);
  if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace apdraw
