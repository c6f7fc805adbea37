#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "gsi/real_adapter.hpp"

namespace httplib {
class Server;
}

namespace gsi {

inline constexpr std::string_view kReviewLockFile = "real_manifest.lock";

/// Review state over a real manifest directory. Holds an exclusive lock on
/// the directory for its lifetime, replays `review.log.jsonl` on open and
/// appends every decision to it before acknowledging. Thread-safe.
class ReviewService {
 public:
  /// Throws ManifestLocked when another service holds the directory.
  explicit ReviewService(std::filesystem::path dir);
  ~ReviewService();
  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  struct Response {
    int status = 200;
    nlohmann::json body;
  };

  /// Pending and judge-passed samples in manifest order:
  /// [{sample_id, caption, overlay_url, op_kind}].
  nlohmann::json queue() const;
  /// Full sample record; nullopt for unknown ids.
  std::optional<nlohmann::json> sample(const std::string& id) const;
  /// {sample_id, decision: accept|reject|edit, caption?, reason?}. 200 with
  /// the updated sample, 400 for malformed requests, 404 for unknown ids,
  /// 409 when the sample was already decided.
  Response decide(const nlohmann::json& request);
  /// Overlay file for a known sample.
  std::optional<std::filesystem::path> overlay_path(const std::string& id) const;

  /// Writes the current states into the manifest.
  void fold();

  std::vector<RealSample> samples() const;
  /// Log entries applied while opening.
  std::size_t replayed() const { return replayed_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  void load();
  std::size_t index_of(const std::string& id) const;
  void append_log(const nlohmann::json& entry);

  std::filesystem::path dir_;
  int lock_fd_ = -1;
  mutable std::mutex mu_;
  std::vector<RealSample> samples_;
  std::size_t replayed_ = 0;
  std::uint64_t seq_ = 0;
};

/// HTTP front end for a ReviewService:
///   GET  /api/queue, GET /api/sample/{id}, POST /api/decision,
///   GET  /overlays/{id}.png, and an optional static UI bundle at /.
class ReviewServer {
 public:
  /// Binds immediately; port 0 picks a free port. Throws PortInUse.
  ReviewServer(ReviewService& service, const std::string& host, int port,
               const std::filesystem::path& ui_dir = {});
  ~ReviewServer();

  int port() const { return port_; }
  /// Serves on a background thread until stop().
  void start();
  /// Serves on the calling thread until stop() from elsewhere.
  void run();
  void stop();

 private:
  ReviewService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace gsi
