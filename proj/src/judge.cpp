#include "gsi/judge.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "gsi/errors.hpp"
#include "gsi/image.hpp"
#include "httplib.h"

namespace gsi {

namespace prompts {
// Generated from assets/prompts at build time.
extern const char* const kGateSynthetic;
extern const char* const kGateReal;
extern const char* const kCaptionRewrite;
extern const char* const kAppearanceTransform;
extern const char* const kAppearanceRemoval;
}  // namespace prompts

using nlohmann::json;

namespace {

constexpr std::array<std::pair<JudgeTask, std::string_view>, 5> kTaskNames{{
    {JudgeTask::GateSynthetic, "gate_synthetic"},
    {JudgeTask::GateReal, "gate_real"},
    {JudgeTask::CaptionRewrite, "caption_rewrite"},
    {JudgeTask::AppearanceTransform, "appearance_transform"},
    {JudgeTask::AppearanceRemoval, "appearance_removal"},
}};

[[noreturn]] void schema_violation(const std::string& msg) {
  throw Error(ErrorCode::SchemaViolation, "judge reply: " + msg);
}

}  // namespace

std::string_view to_string(JudgeTask task) {
  for (const auto& [t, name] : kTaskNames) {
    if (t == task) return name;
  }
  return "?";
}

std::optional<JudgeTask> parse_judge_task(std::string_view s) {
  for (const auto& [t, name] : kTaskNames) {
    if (name == s) return t;
  }
  return std::nullopt;
}

std::size_t expected_image_count(JudgeTask task) {
  switch (task) {
    case JudgeTask::CaptionRewrite:
    case JudgeTask::GateReal:  // the side-by-side overlay
      return 1;
    default:
      return 2;
  }
}

std::string_view prompt_template(JudgeTask task) {
  switch (task) {
    case JudgeTask::GateSynthetic: return prompts::kGateSynthetic;
    case JudgeTask::GateReal: return prompts::kGateReal;
    case JudgeTask::CaptionRewrite: return prompts::kCaptionRewrite;
    case JudgeTask::AppearanceTransform: return prompts::kAppearanceTransform;
    case JudgeTask::AppearanceRemoval: return prompts::kAppearanceRemoval;
  }
  return {};
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char c : digest) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 15]);
  }
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::ParseError, "base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::ParseError, "invalid base64");
  // EVP_DecodeBlock keeps the bytes produced by '=' padding.
  std::size_t pad = 0;
  for (std::size_t i = text.size(); i > 0 && text[i - 1] == '='; --i) ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

json judge_request_to_json(const JudgeRequest& request) {
  json images = json::array();
  for (const auto& img : request.images) images.push_back(base64_encode(img));
  return {{"schema", "gsi-judge/1"},
          {"task", std::string(to_string(request.task))},
          {"prompt_version", std::string(kPromptVersion)},
          {"prompt", std::string(prompt_template(request.task))},
          {"request_id", request.request_id},
          {"images", images},
          {"metadata", request.metadata}};
}

JudgeVerdict parse_verdict(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    schema_violation("not JSON");
  }
  if (!j.is_object()) schema_violation("not an object");
  if (!j.contains("decision") || !j["decision"].is_string()) schema_violation("missing decision");
  if (!j.contains("reason") || !j["reason"].is_string()) schema_violation("missing reason");
  JudgeVerdict v;
  const std::string d = j["decision"];
  if (d == "accept") {
    v.decision = JudgeDecision::Accept;
  } else if (d == "reject") {
    v.decision = JudgeDecision::Reject;
  } else {
    schema_violation("decision must be accept or reject");
  }
  v.reason = j["reason"];
  if (v.decision == JudgeDecision::Reject && v.reason.empty()) {
    schema_violation("reject without a reason");
  }
  if (j.contains("rewritten_caption") && !j["rewritten_caption"].is_null()) {
    if (!j["rewritten_caption"].is_string()) schema_violation("rewritten_caption must be a string");
    v.rewritten_caption = j["rewritten_caption"].get<std::string>();
  }
  return v;
}

json verdict_to_json(const JudgeVerdict& v) {
  return {{"decision", v.decision == JudgeDecision::Accept ? "accept" : "reject"},
          {"reason", v.reason},
          {"rewritten_caption", v.rewritten_caption ? json(*v.rewritten_caption) : json(nullptr)}};
}

std::string judge_cache_key(const JudgeRequest& request) {
  std::string material = "gsi-judge/1\n";
  material += to_string(request.task);
  material += '\n';
  material += kPromptVersion;
  material += '\n';
  for (const auto& img : request.images) {
    material += sha256_hex(std::string_view(reinterpret_cast<const char*>(img.data()), img.size()));
    material += '\n';
  }
  material += request.metadata.dump();
  return sha256_hex(material);
}

// ---------------------------------------------------------------------------
// Transports

HttpJudgeTransport::HttpJudgeTransport(std::string url, std::string token,
                                       std::chrono::seconds timeout)
    : url_(std::move(url)), token_(std::move(token)), timeout_(timeout) {}

std::unique_ptr<HttpJudgeTransport> HttpJudgeTransport::from_environment() {
  const char* url = std::getenv("GSI_JUDGE_URL");
  if (!url || !*url) return nullptr;
  const char* token = std::getenv("GSI_JUDGE_TOKEN");
  return std::make_unique<HttpJudgeTransport>(url, token ? token : "");
}

std::string HttpJudgeTransport::post(const std::string& body) {
  // Split "scheme://host[:port]/path".
  const auto scheme_end = url_.find("://");
  const auto path_start = url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = url_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);
  httplib::Client client(origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
  auto res = client.Post(path, headers, body, "application/json");
  if (!res) {
    throw Error(ErrorCode::JudgeUnavailable,
                "judge unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::JudgeUnavailable, "judge returned HTTP " + std::to_string(res->status));
  }
  return res->body;
}

void MockJudge::add_reject_rule(std::string caption_contains, std::string reason) {
  std::lock_guard lock(mu_);
  rules_.push_back({std::move(caption_contains), std::move(reason)});
}

void MockJudge::inject(Fault fault, int count) {
  std::lock_guard lock(mu_);
  fault_ = fault;
  fault_count_ = count;
}

void MockJudge::set_rewriter(std::function<std::string(const std::string&)> fn) {
  std::lock_guard lock(mu_);
  rewriter_ = std::move(fn);
}

std::string MockJudge::post(const std::string& body) {
  ++calls_;
  std::lock_guard lock(mu_);
  if (fault_ != Fault::None && fault_count_ != 0) {
    if (fault_count_ > 0) --fault_count_;
    if (fault_ == Fault::Unreachable) {
      throw Error(ErrorCode::JudgeUnavailable, "mock judge unreachable");
    }
    return "{\"verdict\": ";  // truncated, not a verdict
  }
  const json req = json::parse(body);
  const auto task = parse_judge_task(req.at("task").get<std::string>());
  if (!task || req.at("images").size() != expected_image_count(*task)) {
    return verdict_to_json({JudgeDecision::Reject, "malformed request", std::nullopt}).dump();
  }
  const json& meta = req.at("metadata");
  const std::string caption = meta.value("caption", std::string());
  for (const Rule& r : rules_) {
    if (caption.find(r.caption_contains) != std::string::npos) {
      return verdict_to_json({JudgeDecision::Reject, r.reason, std::nullopt}).dump();
    }
  }
  JudgeVerdict v{JudgeDecision::Accept, "ok", std::nullopt};
  if (rewriter_ && (*task == JudgeTask::GateReal || *task == JudgeTask::CaptionRewrite)) {
    v.rewritten_caption = rewriter_(caption);
  }
  return verdict_to_json(v).dump();
}

void SystemClock::sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

void FakeClock::sleep_for(std::chrono::milliseconds d) {
  std::lock_guard lock(mu_);
  sleeps_.push_back(d);
}

std::chrono::milliseconds FakeClock::total() const {
  std::lock_guard lock(mu_);
  std::chrono::milliseconds t{0};
  for (auto d : sleeps_) t += d;
  return t;
}

std::vector<std::chrono::milliseconds> FakeClock::sleeps() const {
  std::lock_guard lock(mu_);
  return sleeps_;
}

std::filesystem::path default_judge_cache_dir() {
  const char* home = std::getenv("HOME");
  return std::filesystem::path(home ? home : ".") / ".cache" / "gsi-forge" / "judge";
}

// ---------------------------------------------------------------------------
// Client

JudgeClient::JudgeClient(std::shared_ptr<JudgeTransport> transport, JudgePolicy policy,
                         std::shared_ptr<Clock> clock)
    : transport_(std::move(transport)),
      policy_(std::move(policy)),
      clock_(std::move(clock)),
      in_flight_(std::max(1, policy_.max_in_flight)) {}

std::optional<JudgeVerdict> JudgeClient::cache_get(const std::string& key) {
  std::lock_guard lock(cache_mu_);
  if (auto it = memory_cache_.find(key); it != memory_cache_.end()) return it->second;
  if (!policy_.cache_dir) return std::nullopt;
  const auto path = *policy_.cache_dir / (key + ".json");
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    JudgeVerdict v = parse_verdict(ss.str());
    memory_cache_[key] = v;
    return v;
  } catch (const Error&) {
    return std::nullopt;  // a corrupt entry is refetched
  }
}

void JudgeClient::cache_put(const std::string& key, const JudgeVerdict& v) {
  std::lock_guard lock(cache_mu_);
  memory_cache_[key] = v;
  if (policy_.cache_dir) {
    write_file_atomic(*policy_.cache_dir / (key + ".json"), verdict_to_json(v).dump() + "\n");
  }
}

JudgeVerdict JudgeClient::submit(const JudgeRequest& request) {
  if (request.images.size() != expected_image_count(request.task)) {
    throw Error(ErrorCode::SchemaViolation,
                std::string("task ") + std::string(to_string(request.task)) + " takes " +
                    std::to_string(expected_image_count(request.task)) + " images");
  }
  const std::string key = judge_cache_key(request);
  if (auto hit = cache_get(key)) {
    ++cache_hits_;
    return *hit;
  }
  const std::string body = judge_request_to_json(request).dump();
  const int attempts = std::max(1, policy_.attempts);
  int malformed = 0;
  std::string last_error;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) clock_->sleep_for(policy_.base_delay * (1 << (attempt - 1)));
    std::string reply;
    in_flight_.acquire();
    try {
      ++network_calls_;
      reply = transport_->post(body);
      in_flight_.release();
    } catch (const Error& e) {
      in_flight_.release();
      last_error = e.what();
      continue;
    }
    try {
      JudgeVerdict v = parse_verdict(reply);
      cache_put(key, v);
      return v;
    } catch (const Error& e) {
      ++malformed;
      last_error = e.what();
    }
  }
  const std::string msg = "judge failed after " + std::to_string(attempts) + " attempts: " +
                          last_error;
  if (malformed == attempts) throw Error(ErrorCode::SchemaViolation, msg);
  throw Error(ErrorCode::JudgeUnavailable, msg);
}

}  // namespace gsi
