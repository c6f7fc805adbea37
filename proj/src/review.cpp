#include "gsi/review.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <variant>

#include <fmt/format.h>

#include "httplib.h"

#include "gsi/errors.hpp"
#include "gsi/image.hpp"

namespace gsi {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::optional<ReviewState> decision_state(std::string_view d) {
  if (d == "accept") return ReviewState::Accepted;
  if (d == "reject") return ReviewState::Rejected;
  if (d == "edit") return ReviewState::Edited;
  return std::nullopt;
}

bool open_state(ReviewState s) {
  return s == ReviewState::Pending || s == ReviewState::JudgePassed;
}

ReviewService::Response error_response(int status, std::string error, std::string detail,
                                       json extra = json::object()) {
  extra["error"] = std::move(error);
  extra["detail"] = std::move(detail);
  return {status, std::move(extra)};
}

/// Validated decision from a request or log entry.
struct Decision {
  std::string sample_id;
  ReviewState state;
  std::optional<std::string> caption;
  std::string reason;
};

std::variant<Decision, ReviewService::Response> parse_decision(const json& j) {
  if (!j.is_object()) return error_response(400, "bad_request", "body must be a JSON object");
  const auto id = j.find("sample_id");
  if (id == j.end() || !id->is_string() || id->get<std::string>().empty()) {
    return error_response(400, "bad_request", "sample_id must be a non-empty string");
  }
  const auto dec = j.find("decision");
  const auto state = dec != j.end() && dec->is_string()
                         ? decision_state(dec->get<std::string>())
                         : std::nullopt;
  if (!state) return error_response(400, "bad_request", "decision must be accept, reject or edit");
  Decision d{id->get<std::string>(), *state, std::nullopt, ""};
  if (const auto c = j.find("caption"); c != j.end() && !c->is_null()) {
    if (!c->is_string()) return error_response(400, "bad_request", "caption must be a string");
    d.caption = c->get<std::string>();
  }
  if (const auto r = j.find("reason"); r != j.end() && !r->is_null()) {
    if (!r->is_string()) return error_response(400, "bad_request", "reason must be a string");
    d.reason = r->get<std::string>();
  }
  if (d.state == ReviewState::Edited) {
    if (!d.caption || d.caption->find_first_not_of(" \t\r\n") == std::string::npos) {
      return error_response(400, "bad_request", "edit needs a non-empty caption");
    }
  } else {
    d.caption.reset();
  }
  return d;
}

void apply(RealSample& s, const Decision& d) {
  s.transition(d.state, d.reason);
  if (d.caption) s.edited_caption = d.caption;
}

bool already_applied(const RealSample& s, const Decision& d) {
  return s.state == d.state && (!d.caption || s.edited_caption == d.caption);
}

}  // namespace

ReviewService::ReviewService(fs::path dir) : dir_(std::move(dir)) {
  if (!fs::exists(dir_ / kRealManifestFile)) {
    throw Error(ErrorCode::ConfigError, "no real manifest in " + dir_.string());
  }
  const fs::path lock = dir_ / kReviewLockFile;
  lock_fd_ = ::open(lock.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) {
    throw Error(ErrorCode::ImageIo, fmt::format("{}: {}", lock.string(), std::strerror(errno)));
  }
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    lock_fd_ = -1;
    throw Error(ErrorCode::ManifestLocked,
                dir_.string() + " is already being served by another review session");
  }
  try {
    load();
  } catch (...) {
    ::close(lock_fd_);
    throw;
  }
}

void ReviewService::load() {
  samples_ = read_real_manifest(dir_);

  // Replay: entries already folded into the manifest are skipped, so the
  // log never needs truncating.
  const fs::path log = dir_ / kReviewLogFile;
  if (!fs::exists(log)) return;
  const auto bytes = read_file(log);
  const std::string text(bytes.begin(), bytes.end());
  std::vector<std::pair<std::size_t, std::string>> lines;  // (offset, text)
  for (std::size_t pos = 0; pos < text.size();) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    if (end > pos) lines.emplace_back(pos, text.substr(pos, end - pos));
    pos = end + 1;
  }
  for (std::size_t n = 0; n < lines.size(); ++n) {
    json entry;
    try {
      entry = json::parse(lines[n].second);
    } catch (const json::exception& e) {
      // A torn final line is a write interrupted before it was acknowledged;
      // cut it so later appends start on a clean line.
      if (n + 1 == lines.size()) {
        fs::resize_file(log, lines[n].first);
        break;
      }
      throw Error(ErrorCode::ParseError, fmt::format("{}:{}: {}", log.string(), n + 1, e.what()));
    }
    seq_ = std::max<std::uint64_t>(seq_, entry.value("seq", std::uint64_t{0}));
    auto parsed = parse_decision(entry);
    if (!std::holds_alternative<Decision>(parsed)) {
      throw Error(ErrorCode::ParseError, fmt::format("{}:{}: malformed decision", log.string(), n + 1));
    }
    const Decision& d = std::get<Decision>(parsed);
    const std::size_t i = index_of(d.sample_id);
    if (i == samples_.size()) continue;
    RealSample& s = samples_[i];
    if (already_applied(s, d)) continue;
    if (!open_state(s.state)) {
      throw Error(ErrorCode::InvalidTransition,
                  fmt::format("{}:{}: {} is {} in the manifest", log.string(), n + 1, d.sample_id,
                              to_string(s.state)));
    }
    apply(s, d);
    ++replayed_;
  }
}

ReviewService::~ReviewService() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

std::size_t ReviewService::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].sample_id == id) return i;
  }
  return samples_.size();
}

json ReviewService::queue() const {
  std::lock_guard lock(mu_);
  json out = json::array();
  for (const RealSample& s : samples_) {
    if (!open_state(s.state)) continue;
    out.push_back({{"sample_id", s.sample_id},
                   {"caption", s.effective_caption()},
                   {"overlay_url", "/overlays/" + s.sample_id + ".png"},
                   {"op_kind", std::string(to_string(s.op_kind))}});
  }
  return out;
}

std::optional<json> ReviewService::sample(const std::string& id) const {
  std::lock_guard lock(mu_);
  const std::size_t i = index_of(id);
  if (i == samples_.size()) return std::nullopt;
  return real_sample_to_json(samples_[i]);
}

std::optional<fs::path> ReviewService::overlay_path(const std::string& id) const {
  std::lock_guard lock(mu_);
  const std::size_t i = index_of(id);
  if (i == samples_.size() || samples_[i].overlay.empty()) return std::nullopt;
  return dir_ / samples_[i].overlay;
}

void ReviewService::append_log(const json& entry) {
  const fs::path path = dir_ / kReviewLogFile;
  const std::string line = entry.dump() + "\n";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::ImageIo, fmt::format("{}: {}", path.string(), std::strerror(errno)));
  }
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(fd, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int e = errno;
      ::close(fd);
      throw Error(ErrorCode::ImageIo, fmt::format("{}: {}", path.string(), std::strerror(e)));
    }
    done += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw Error(ErrorCode::ImageIo, path.string() + ": fsync failed");
}

ReviewService::Response ReviewService::decide(const json& request) {
  auto parsed = parse_decision(request);
  if (auto* r = std::get_if<Response>(&parsed)) return *r;
  const Decision& d = std::get<Decision>(parsed);

  std::lock_guard lock(mu_);
  const std::size_t i = index_of(d.sample_id);
  if (i == samples_.size()) return error_response(404, "not_found", "unknown sample " + d.sample_id);
  RealSample& s = samples_[i];
  if (!open_state(s.state)) {
    return error_response(409, "conflict",
                          fmt::format("{} was already decided ({})", s.sample_id, to_string(s.state)),
                          {{"state", std::string(to_string(s.state))}});
  }
  // Persist before acknowledging; the in-memory state follows the log.
  json entry = {{"seq", ++seq_}, {"sample_id", d.sample_id}, {"decision", request.at("decision")}};
  if (d.caption) entry["caption"] = *d.caption;
  if (!d.reason.empty()) entry["reason"] = d.reason;
  append_log(entry);
  apply(s, d);
  return {200, real_sample_to_json(s)};
}

void ReviewService::fold() {
  std::lock_guard lock(mu_);
  write_real_manifest(samples_, dir_);
}

std::vector<RealSample> ReviewService::samples() const {
  std::lock_guard lock(mu_);
  return samples_;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

}  // namespace

ReviewServer::ReviewServer(ReviewService& service, const std::string& host, int port,
                           const fs::path& ui_dir)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  // Plain SO_REUSEADDR: the library default also sets SO_REUSEPORT, which
  // would let a second server share the port silently.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  server_->Get("/api/queue", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, service_.queue());
  });
  server_->Get(R"(/api/sample/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (auto s = service_.sample(id)) {
      send_json(res, 200, *s);
    } else {
      send_json(res, 404, {{"error", "not_found"}, {"detail", "unknown sample " + id}});
    }
  });
  server_->Post("/api/decision", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      send_json(res, 400, {{"error", "bad_request"}, {"detail", "body is not valid JSON"}});
      return;
    }
    try {
      const auto r = service_.decide(body);
      send_json(res, r.status, r.body);
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", "internal"}, {"detail", e.what()}});
    }
  });
  server_->Get(R"(/overlays/([^/]+)\.png)", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
    const auto path = service_.overlay_path(req.matches[1]);
    if (!path || !fs::exists(*path)) {
      send_json(res, 404, {{"error", "not_found"}, {"detail", "no overlay"}});
      return;
    }
    const auto bytes = read_file(*path);
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  });
  if (!ui_dir.empty() && !server_->set_mount_point("/", ui_dir.string())) {
    throw Error(ErrorCode::ConfigError, "no UI bundle at " + ui_dir.string());
  }

  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    if (port_ < 0) throw Error(ErrorCode::PortInUse, "cannot bind " + host);
  } else {
    if (!server_->bind_to_port(host, port)) {
      throw Error(ErrorCode::PortInUse, fmt::format("{}:{} is not available", host, port));
    }
    port_ = port;
  }
}

ReviewServer::~ReviewServer() { stop(); }

void ReviewServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void ReviewServer::run() { server_->listen_after_bind(); }

void ReviewServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace gsi
