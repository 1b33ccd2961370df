#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "apdraw/common.hpp"
#include "apdraw/corpus.hpp"
#include "apdraw/networks.hpp"
#include "apdraw/ranking.hpp"
#include "apdraw/rng.hpp"

namespace httplib {
class Server;
}

namespace apdraw {

/// Carries the HTTP status a service error maps to.
struct HttpError : Error {
  HttpError(int status_code, const std::string& what) : Error(what), status(status_code) {}
  int status;
};

std::string sha256_hex(std::span<const uint8_t> bytes);
std::string file_sha256(const std::filesystem::path& path);

struct StudyQuestion {
  std::string question_id;
  StyleTag style = StyleTag::style1;
  std::array<std::string, 3> drawing_ids;
  std::array<std::string, 3> drawing_urls;
  nlohmann::json to_json() const;
};

struct StyleProgress {
  int served = 0;
  int answered = 0;
};

/// Preference-study sessions over the tagged drawings of a manifest. The
/// append-only answer log is the source of truth: constructing the service
/// replays it into the score table. All state changes are serialized.
class StudyService {
 public:
  StudyService(std::span<const ImageRecord> records, std::filesystem::path answer_log, uint64_t seed = 0);

  std::string open_session(const std::string& annotator, std::optional<StyleTag> focus = std::nullopt);
  /// 404 unknown session, 409 when every triplet has been asked.
  StudyQuestion next(const std::string& session);
  /// 404 unknown session or question, 409 replay, 422 bad order.
  nlohmann::json answer(const std::string& session, const std::string& question_id,
                        const std::array<std::string, 3>& order);
  nlohmann::json progress(const std::string& session) const;
  /// Session a question was served to, if any.
  std::optional<std::string> session_of(const std::string& question_id) const;
  ScoreTable table() const;
  nlohmann::json scores_json() const;
  std::optional<std::filesystem::path> image_path(const std::string& sha256) const;
  const std::filesystem::path& log_path() const { return log_path_; }

 private:
  struct Session {
    std::string annotator;
    std::optional<StyleTag> focus;
    std::map<StyleTag, TripletHistory> history;
    std::map<StyleTag, StyleProgress> counts;
    int turn = 0;
  };
  struct Served {
    std::string session;
    StyleTag style;
    std::array<std::string, 3> ids;
    bool answered = false;
  };

  Session& session_at(const std::string& id);
  const Session& session_at(const std::string& id) const;

  mutable std::mutex mu_;
  std::filesystem::path log_path_;
  AnswerLog log_;
  std::map<StyleTag, std::vector<std::string>> pools_;
  std::map<std::string, std::string> hash_of_;               // drawing id -> sha256
  std::map<std::string, std::filesystem::path> by_hash_;     // sha256 -> path
  ScoreTable table_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, Served> served_;
  Rng rng_;
  uint64_t session_counter_ = 0;
  uint64_t nonce_;
};

/// Style-conditioned inference for the explorer. Without a loaded generator
/// every request fails with 503.
class GenerationService {
 public:
  void load(ResnetGenerator G);
  bool loaded() const;
  void add_photo(const std::string& id, const std::filesystem::path& path);

  struct Result {
    std::vector<uint8_t> png;
    StyleVector style;
  };
  /// Exactly one of photo_id / upload. `style` must be a JSON array of 3 numbers
  /// (422 otherwise); unknown photo -> 404.
  Result generate(const std::optional<std::string>& photo_id, const std::optional<std::vector<uint8_t>>& upload,
                  const nlohmann::json& style);

 private:
  mutable std::mutex mu_;
  ResnetGenerator G_{nullptr};
  std::map<std::string, std::filesystem::path> photos_;
};

/// Exact text of a style vector as echoed in the X-Style-Vector header.
std::string style_header(const StyleVector& s);

void install_routes(httplib::Server& server, StudyService& study, GenerationService& generation);

/// Blocks serving on host:port.
void run_server(StudyService& study, GenerationService& generation, const std::string& host, int port);

}  // namespace apdraw
