#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace gsi {

enum class JudgeTask { GateSynthetic, GateReal, CaptionRewrite, AppearanceTransform, AppearanceRemoval };

std::string_view to_string(JudgeTask task);
std::optional<JudgeTask> parse_judge_task(std::string_view s);

/// Images each task carries.
std::size_t expected_image_count(JudgeTask task);

/// Versioned prompt template shipped with the build.
std::string_view prompt_template(JudgeTask task);
inline constexpr std::string_view kPromptVersion = "v1";

struct JudgeRequest {
  JudgeTask task = JudgeTask::GateSynthetic;
  std::vector<std::vector<std::uint8_t>> images;  // PNG payloads
  nlohmann::json metadata = nlohmann::json::object();
  std::string request_id;
};

enum class JudgeDecision { Accept, Reject };

struct JudgeVerdict {
  JudgeDecision decision = JudgeDecision::Accept;
  std::string reason;
  std::optional<std::string> rewritten_caption;
  bool operator==(const JudgeVerdict&) const = default;
};

/// Wire encoding of a request (schema "gsi-judge/1").
nlohmann::json judge_request_to_json(const JudgeRequest& request);
/// Throws SchemaViolation on anything but a well-formed verdict.
JudgeVerdict parse_verdict(std::string_view body);
nlohmann::json verdict_to_json(const JudgeVerdict& v);

/// Content hash of (task, image digests, metadata); hex SHA-256.
std::string judge_cache_key(const JudgeRequest& request);

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Moves one request body to the service. Throws JudgeUnavailable when the
/// service cannot be reached or answers with a non-2xx status.
class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  virtual std::string post(const std::string& body) = 0;
};

/// POST {url} with a JSON body; bearer token when non-empty.
class HttpJudgeTransport : public JudgeTransport {
 public:
  HttpJudgeTransport(std::string url, std::string token,
                     std::chrono::seconds timeout = std::chrono::seconds(120));
  /// From GSI_JUDGE_URL / GSI_JUDGE_TOKEN; nullptr when the URL is unset.
  static std::unique_ptr<HttpJudgeTransport> from_environment();
  std::string post(const std::string& body) override;

 private:
  std::string url_;
  std::string token_;
  std::chrono::seconds timeout_;
};

/// Deterministic in-process judge with rule-based verdicts and fault
/// injection.
class MockJudge : public JudgeTransport {
 public:
  struct Rule {
    std::string caption_contains;  // matched against metadata.caption
    std::string reason;            // reject reason
  };
  enum class Fault { None, Unreachable, Malformed };

  void add_reject_rule(std::string caption_contains, std::string reason);
  /// The next `count` calls fail with `fault`; count < 0 fails forever.
  void inject(Fault fault, int count);
  /// Optional caption rewrite applied on accept.
  void set_rewriter(std::function<std::string(const std::string&)> fn);
  std::string post(const std::string& body) override;
  int calls() const { return calls_.load(); }

 private:
  std::mutex mu_;
  std::vector<Rule> rules_;
  Fault fault_ = Fault::None;
  int fault_count_ = 0;
  std::function<std::string(const std::string&)> rewriter_;
  std::atomic<int> calls_{0};
};

class Clock {
 public:
  virtual ~Clock() = default;
  virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock : public Clock {
 public:
  void sleep_for(std::chrono::milliseconds d) override;
};

/// Records requested sleeps instead of sleeping.
class FakeClock : public Clock {
 public:
  void sleep_for(std::chrono::milliseconds d) override;
  std::chrono::milliseconds total() const;
  std::vector<std::chrono::milliseconds> sleeps() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::chrono::milliseconds> sleeps_;
};

struct JudgePolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{1000};
  int max_in_flight = 4;
  /// Persistent cache; empty keeps the cache in memory only.
  std::optional<std::filesystem::path> cache_dir;
};

/// Default persistent cache location (~/.cache/gsi-forge/judge).
std::filesystem::path default_judge_cache_dir();

/// Retrying, caching, rate-limited judge client. Safe for concurrent use.
class JudgeClient {
 public:
  JudgeClient(std::shared_ptr<JudgeTransport> transport, JudgePolicy policy = {},
              std::shared_ptr<Clock> clock = std::make_shared<SystemClock>());

  /// Throws JudgeUnavailable when every attempt failed, SchemaViolation when
  /// every attempt returned a malformed reply.
  JudgeVerdict submit(const JudgeRequest& request);

  int network_calls() const { return network_calls_.load(); }
  int cache_hits() const { return cache_hits_.load(); }

 private:
  std::optional<JudgeVerdict> cache_get(const std::string& key);
  void cache_put(const std::string& key, const JudgeVerdict& v);

  std::shared_ptr<JudgeTransport> transport_;
  JudgePolicy policy_;
  std::shared_ptr<Clock> clock_;
  std::counting_semaphore<1024> in_flight_;
  std::mutex cache_mu_;
  std::map<std::string, JudgeVerdict> memory_cache_;
  std::atomic<int> network_calls_{0};
  std::atomic<int> cache_hits_{0};
};

}  // namespace gsi
