#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "gsi/cli.hpp"
#include "gsi/errors.hpp"
#include "gsi/real_adapter.hpp"
#include "gsi/review.hpp"
#include "test_support.hpp"

// After Eigen: resolv.h defines a `_res` macro that collides with it.
#include "httplib.h"

using namespace gsi;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult forge(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  const auto bytes = read_file(p);
  return std::string(bytes.begin(), bytes.end());
}

/// Relative path -> contents for every file under `dir`.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

std::string envs() { return (test::source_dir() / "envs").string(); }

/// A synthetic manifest shared by the evaluate cases.
const fs::path& small_manifest() {
  static const fs::path dir = [] {
    const fs::path d = test::temp_dir("cli_manifest");
    const RunResult r = forge({"generate", "--env", "tabletop-small", "--env-dir", envs(),
                               "--counts", "CM=3,OR=2,SR=3,PC=2", "--seed", "11", "--out",
                               (d / "m").string()});
    REQUIRE(r.code == cli::kExitOk);
    return d / "m";
  }();
  return dir;
}

/// Grounded tabletop frames with the small objects shifted per frame.
fs::path frames_dir(const std::string& name, int n) {
  const fs::path dir = test::temp_dir(name);
  for (int i = 0; i < n; ++i) {
    Scene s = test::tabletop_scene();
    for (ObjectState& o : s.objects) {
      if (o.support_id == std::optional<std::string>("table_top")) o.center.x() += 0.03 * (i % 3);
    }
    test::write_grounded_frame(dir, fmt::format("frame{:03d}", i), s, -21.8);
  }
  return dir;
}

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

/// A review queue of at least 20 samples, exported once and copied per test.
fs::path review_queue(const std::string& name) {
  static const fs::path master = [] {
    const fs::path frames = frames_dir("cli_review_frames", 4);
    const fs::path cfg = frames / "queue.toml";
    write_file_atomic(cfg, std::string("schema = \"gsi-forge-config/1\"\n[real]\nstride = 1\n"
                                       "per_kind = 3\nkinds = [\"CM\", \"OR\", \"SR\"]\n"));
    const fs::path out = test::temp_dir("cli_review_master");
    const RunResult r = forge({"export-queue", "--frames", frames.string(), "--out", out.string(),
                               "--config", cfg.string(), "--seed", "3"});
    INFO(r.err);
    REQUIRE(r.code == cli::kExitOk);
    return out;
  }();
  const fs::path dir = test::temp_dir(name);
  fs::copy(master, dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  return dir;
}

json post_decision(httplib::Client& c, const json& body, int expected) {
  auto res = c.Post("/api/decision", body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expected);
  return json::parse(res->body);
}

json get_json(httplib::Client& c, const std::string& path) {
  auto res = c.Get(path);
  REQUIRE(res);
  REQUIRE(res->status == 200);
  return json::parse(res->body);
}

}  // namespace

// ---------------------------------------------------------------------------
// generate

TEST_CASE("generate with the same seed writes identical manifests and images") {
  const fs::path dir = test::temp_dir("cli_generate");
  for (const char* run : {"a", "b"}) {
    const RunResult r = forge({"generate", "--env", "tabletop-small", "--env-dir", envs(),
                               "--counts", "CM=10,SR=10", "--seed", "7", "--out",
                               (dir / run).string()});
    INFO(r.err);
    REQUIRE(r.code == cli::kExitOk);
  }
  const Manifest m = read_manifest(dir / "a");
  std::size_t validated = 0;
  for (const Sample& s : m.samples) validated += s.status == SampleStatus::Validated;
  CHECK(validated == 20);
  CHECK(m.config.at("generate").at("seed") == 7);
  const auto a = tree(dir / "a");
  const auto b = tree(dir / "b");
  CHECK(a.size() > 40);
  CHECK(a == b);
  fs::remove_all(dir);
}

TEST_CASE("a missing environment is a config error naming the file") {
  const RunResult r = forge({"generate", "--env", "no-such-room", "--env-dir", envs(), "--counts",
                             "CM=1", "--out", (test::temp_dir("cli_noenv") / "m").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("no-such-room.json") != std::string::npos);
}

TEST_CASE("config and usage errors exit 3") {
  const fs::path dir = test::temp_dir("cli_badcfg");
  write_file_atomic(dir / "bad.toml", std::string("schema = \"gsi-forge-config/1\"\n[generate]\n"
                                                  "seeed = 1\n"));
  RunResult r = forge({"generate", "--config", (dir / "bad.toml").string(), "--out",
                       (dir / "m").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("bad.toml") != std::string::npos);
  CHECK(r.err.find("generate.seeed") != std::string::npos);

  CHECK(forge({"generate", "--env", "tabletop-small", "--env-dir", envs(), "--counts", "XX=1",
               "--out", (dir / "m").string()})
            .code == cli::kExitConfig);
  CHECK(forge({"generate", "--env", "tabletop-small", "--env-dir", envs(), "--out",
               (dir / "m").string()})
            .code == cli::kExitConfig);
  CHECK(forge({"generate", "--env", "tabletop-small", "--env-dir", envs(), "--counts", "CM=1",
               "--judge", "maybe", "--out", (dir / "m").string()})
            .code == cli::kExitConfig);
  CHECK(forge({"generate", "--bogus"}).code == cli::kExitConfig);
  CHECK(forge({}).code == cli::kExitConfig);
  r = forge({"--help"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("serve-review") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("an exhausted candidate budget exits 2 and keeps the partial manifest") {
  const fs::path dir = test::temp_dir("cli_budget");
  write_file_atomic(dir / "tight.toml",
                    std::string("schema = \"gsi-forge-config/1\"\n[generate]\n"
                                "attempts_per_sample = 1\nmin_attempts = 1\n"));
  const RunResult r = forge({"generate", "--config", (dir / "tight.toml").string(), "--env",
                             "tabletop-small", "--env-dir", envs(), "--counts", "CM=60", "--out",
                             (dir / "m").string()});
  CHECK(r.code == cli::kExitShortfall);
  CHECK(r.err.find("BudgetExhausted") != std::string::npos);
  CHECK(fs::exists(dir / "m" / kManifestFile));
  fs::remove_all(dir);
}

TEST_CASE("--scale multiplies every configured count") {
  const fs::path dir = test::temp_dir("cli_scale");
  const RunResult r = forge({"generate", "--env", "tabletop-small", "--env-dir", envs(),
                             "--counts", "CM=200,SR=100", "--scale", "0.01", "--out",
                             (dir / "m").string()});
  REQUIRE(r.code == cli::kExitOk);
  const Manifest m = read_manifest(dir / "m");
  CHECK(m.requested.at(OpKind::CM) == 2);
  CHECK(m.requested.at(OpKind::SR) == 1);
  CHECK(m.requested.at(OpKind::OR) == 0);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// evaluate / report

TEST_CASE("ground-truth renders score near 100 and source images score IC 0") {
  const fs::path m = small_manifest();
  const fs::path dir = test::temp_dir("cli_eval");
  REQUIRE(forge({"export-candidates", "--manifest", m.string(), "--out", (dir / "gt").string()})
              .code == 0);
  REQUIRE(forge({"export-candidates", "--manifest", m.string(), "--out", (dir / "src").string(),
                 "--which", "source"})
              .code == 0);

  RunResult r = forge({"evaluate", "--manifest", m.string(), "--candidates",
                       (dir / "gt").string(), "--out", (dir / "gt_eval").string()});
  INFO(r.err);
  REQUIRE(r.code == cli::kExitOk);
  json report = json::parse(slurp(dir / "gt_eval" / "report.json"));
  const auto overall = [](const json& rep) {
    for (const json& row : rep.at("rows")) {
      if (row.at("group") == "overall") return row;
    }
    FAIL("no overall row");
    return json();
  };
  CHECK(overall(report).at("avg").get<double>() >= 98.0);
  CHECK(overall(report).at("dataset") == "GSI-Syn");
  CHECK(fs::exists(dir / "gt_eval" / "report.txt"));
  CHECK(r.out == slurp(dir / "gt_eval" / "report.txt"));

  r = forge({"evaluate", "--manifest", m.string(), "--candidates", (dir / "src").string(),
             "--out", (dir / "src_eval").string(), "--jobs", "2"});
  REQUIRE(r.code == cli::kExitOk);
  report = json::parse(slurp(dir / "src_eval" / "report.json"));
  CHECK(overall(report).at("ic").get<double>() == 0.0);

  // report recomputes the same table from the results file.
  r = forge({"report", "--results", (dir / "gt_eval" / "results.jsonl").string(), "--out",
             (dir / "rep").string()});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(slurp(dir / "rep" / "report.json") == slurp(dir / "gt_eval" / "report.json"));
  fs::remove_all(dir);
}

TEST_CASE("evaluation reruns are byte-identical") {
  const fs::path m = small_manifest();
  const fs::path dir = test::temp_dir("cli_eval_rerun");
  REQUIRE(forge({"export-candidates", "--manifest", m.string(), "--out", (dir / "gt").string()})
              .code == 0);
  for (const char* run : {"a", "b"}) {
    REQUIRE(forge({"evaluate", "--manifest", m.string(), "--candidates", (dir / "gt").string(),
                   "--out", (dir / run).string(), "--jobs", run[0] == 'a' ? "1" : "3"})
                .code == 0);
  }
  CHECK(tree(dir / "a") == tree(dir / "b"));
  fs::remove_all(dir);
}

TEST_CASE("missing candidates score zero; mostly missing or empty directories exit 2") {
  const fs::path m = small_manifest();
  const fs::path dir = test::temp_dir("cli_eval_missing");
  REQUIRE(forge({"export-candidates", "--manifest", m.string(), "--out", (dir / "gt").string()})
              .code == 0);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir / "gt")) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  REQUIRE(files.size() == 10);

  // 3 of 10 missing, one corrupt: scored, with notes.
  for (int i = 0; i < 3; ++i) fs::remove(files[i]);
  write_file_atomic(files[3], std::string("not a png"));
  RunResult r = forge({"evaluate", "--manifest", m.string(), "--candidates",
                       (dir / "gt").string(), "--out", (dir / "e1").string()});
  REQUIRE(r.code == cli::kExitOk);
  std::ifstream in(dir / "e1" / "results.jsonl");
  int missing = 0, lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const EvalResult res = eval_result_from_json(json::parse(line));
    if (res.missing) {
      ++missing;
      CHECK(res.ic == 0.0);
      CHECK(res.sa == 0.0);
      CHECK(res.el == 0.0);
      CHECK(res.ac == 0.0);
    }
  }
  CHECK(lines == 10);
  CHECK(missing == 4);

  // 6 of 10 missing.
  for (int i = 3; i < 6; ++i) fs::remove(files[i]);
  r = forge({"evaluate", "--manifest", m.string(), "--candidates", (dir / "gt").string(), "--out",
             (dir / "e2").string()});
  CHECK(r.code == cli::kExitShortfall);
  CHECK_FALSE(fs::exists(dir / "e2" / "results.jsonl"));

  fs::create_directories(dir / "empty");
  CHECK(forge({"evaluate", "--manifest", m.string(), "--candidates", (dir / "empty").string(),
               "--out", (dir / "e3").string()})
            .code == cli::kExitShortfall);
  CHECK(forge({"evaluate", "--manifest", (dir / "nowhere").string(), "--candidates",
               (dir / "empty").string(), "--out", (dir / "e4").string()})
            .code == cli::kExitConfig);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// export-queue

TEST_CASE("export-queue writes pending samples with overlays") {
  const fs::path dir = review_queue("cli_queue");
  const auto samples = read_real_manifest(dir);
  REQUIRE(samples.size() >= 20);
  std::set<OpKind> kinds;
  std::set<std::string> ids;
  for (const RealSample& s : samples) {
    CHECK(s.state == ReviewState::Pending);
    CHECK(fs::exists(dir / s.overlay));
    CHECK(fs::path(s.image).is_absolute());
    kinds.insert(s.op_kind);
    ids.insert(s.sample_id);
  }
  CHECK(ids.size() == samples.size());
  CHECK(kinds == std::set<OpKind>{OpKind::CM, OpKind::OR, OpKind::SR});
  const RgbImage overlay = read_png(dir / samples.front().overlay);
  CHECK(overlay.width == 2 * test::intrinsics_512().width);
  fs::remove_all(dir);
}

TEST_CASE("export-queue is deterministic and reports empty inputs") {
  const fs::path frames = frames_dir("cli_queue_frames", 3);
  const fs::path out = test::temp_dir("cli_queue_det");
  for (const char* run : {"a", "b"}) {
    REQUIRE(forge({"export-queue", "--frames", frames.string(), "--out", (out / run).string(),
                   "--stride", "1", "--seed", "5"})
                .code == 0);
  }
  CHECK(tree(out / "a") == tree(out / "b"));

  // Stride keeps frames 0 and 2 only.
  REQUIRE(forge({"export-queue", "--frames", frames.string(), "--out", (out / "c").string(),
                 "--stride", "2", "--seed", "5"})
              .code == 0);
  std::set<std::string> used;
  for (const RealSample& s : read_real_manifest(out / "c")) used.insert(s.frame_id);
  CHECK(used == std::set<std::string>{"frame000", "frame002"});

  fs::create_directories(out / "none");
  CHECK(forge({"export-queue", "--frames", (out / "none").string(), "--out",
               (out / "d").string()})
            .code == cli::kExitShortfall);
  CHECK(forge({"export-queue", "--frames", (out / "absent").string(), "--out",
               (out / "d").string()})
            .code == cli::kExitConfig);
  CHECK(forge({"export-queue", "--frames", frames.string(), "--out", (out / "d").string(),
               "--kinds", "CM,PC"})
            .code == cli::kExitError);
  fs::remove_all(frames);
  fs::remove_all(out);
}

TEST_CASE("export-queue with the mock judge gates samples") {
  const fs::path frames = frames_dir("cli_queue_judge_frames", 2);
  const fs::path out = test::temp_dir("cli_queue_judge");
  write_file_atomic(frames / "judge.toml",
                    std::string("schema = \"gsi-forge-config/1\"\n[judge]\nenabled = true\n"
                                "mock = true\n[real]\nstride = 1\n"));
  const RunResult r = forge({"export-queue", "--frames", frames.string(), "--out", out.string(),
                             "--config", (frames / "judge.toml").string()});
  INFO(r.err);
  REQUIRE(r.code == cli::kExitOk);
  for (const RealSample& s : read_real_manifest(out)) CHECK(s.state == ReviewState::JudgePassed);
  fs::remove_all(frames);
  fs::remove_all(out);
}

// ---------------------------------------------------------------------------
// Review service and HTTP API

TEST_CASE("the review queue lists pending samples in manifest order") {
  const fs::path dir = review_queue("cli_review_queue");
  const auto samples = read_real_manifest(dir);
  ReviewService service(dir);
  ReviewServer server(service, "127.0.0.1", 0);
  server.start();
  httplib::Client c("127.0.0.1", server.port());

  const json q = get_json(c, "/api/queue");
  REQUIRE(q.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(q[i].at("sample_id") == samples[i].sample_id);
    CHECK(q[i].at("caption") == samples[i].effective_caption());
    CHECK(q[i].at("op_kind") == std::string(to_string(samples[i].op_kind)));
    CHECK(q[i].at("overlay_url") == "/overlays/" + samples[i].sample_id + ".png");
  }
  const json one = get_json(c, "/api/sample/" + samples[0].sample_id);
  CHECK(one == real_sample_to_json(samples[0]));
  CHECK(c.Get("/api/sample/nope")->status == 404);

  auto png = c.Get("/overlays/" + samples[0].sample_id + ".png");
  REQUIRE(png);
  CHECK(png->status == 200);
  CHECK(png->get_header_value("Content-Type") == "image/png");
  CHECK(png->body == slurp(dir / samples[0].overlay));
  CHECK(c.Get("/overlays/..%2Freal_manifest.png")->status == 404);
  server.stop();
  fs::remove_all(dir);
}

TEST_CASE("decisions validate input, conflict on repeats and persist") {
  const fs::path dir = review_queue("cli_review_decide");
  const auto samples = read_real_manifest(dir);
  ReviewService service(dir);
  ReviewServer server(service, "127.0.0.1", 0);
  server.start();
  httplib::Client c("127.0.0.1", server.port());
  const std::string a = samples[0].sample_id;
  const std::string b = samples[1].sample_id;

  CHECK(c.Post("/api/decision", "{not json", "application/json")->status == 400);
  post_decision(c, json::array(), 400);
  post_decision(c, {{"decision", "accept"}}, 400);
  post_decision(c, {{"sample_id", a}, {"decision", "maybe"}}, 400);
  post_decision(c, {{"sample_id", a}, {"decision", "edit"}}, 400);
  post_decision(c, {{"sample_id", a}, {"decision", "edit"}, {"caption", "  "}}, 400);
  post_decision(c, {{"sample_id", a}, {"decision", "accept"}, {"caption", 3}}, 400);
  post_decision(c, {{"sample_id", "nope"}, {"decision", "accept"}}, 404);
  CHECK_FALSE(fs::exists(dir / kReviewLogFile));

  const json edited = post_decision(
      c, {{"sample_id", a}, {"decision", "edit"}, {"caption", "Move the red mug left."}}, 200);
  CHECK(edited.at("state") == "edited");
  CHECK(edited.at("edited_caption") == "Move the red mug left.");
  CHECK(edited.at("caption") == samples[0].caption);

  // A second tab deciding the same item is told, not silently overwritten.
  httplib::Client other("127.0.0.1", server.port());
  const json conflict = post_decision(other, {{"sample_id", a}, {"decision", "reject"}}, 409);
  CHECK(conflict.at("state") == "edited");
  post_decision(c, {{"sample_id", b}, {"decision", "reject"}, {"reason", "ambiguous"}}, 200);
  post_decision(c, {{"sample_id", b}, {"decision", "reject"}}, 409);

  const json q = get_json(c, "/api/queue");
  CHECK(q.size() == samples.size() - 2);
  CHECK(q[0].at("sample_id") == samples[2].sample_id);

  std::ifstream log(dir / kReviewLogFile);
  std::vector<json> entries;
  for (std::string line; std::getline(log, line);) entries.push_back(json::parse(line));
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].at("sample_id") == a);
  CHECK(entries[1].at("reason") == "ambiguous");
  server.stop();
  fs::remove_all(dir);
}

TEST_CASE("a 20-item session survives a mid-session restart") {
  const fs::path dir = review_queue("cli_review_session");
  const auto samples = read_real_manifest(dir);
  REQUIRE(samples.size() >= 20);
  const std::array<const char*, 3> kinds{"accept", "reject", "edit"};
  auto decision_for = [&](std::size_t i) {
    json d = {{"sample_id", samples[i].sample_id}, {"decision", kinds[i % 3]}};
    if (i % 3 == 2) d["caption"] = fmt::format("edited caption {}", i);
    if (i % 3 == 1) d["reason"] = "wrong box";
    return d;
  };
  const int port = free_port();

  {
    // First half, then the process dies without folding.
    ReviewService service(dir);
    ReviewServer server(service, "127.0.0.1", port);
    server.start();
    httplib::Client c("127.0.0.1", port);
    for (std::size_t i = 0; i < 10; ++i) post_decision(c, decision_for(i), 200);
    server.stop();
  }
  for (const RealSample& s : read_real_manifest(dir)) CHECK(s.state == ReviewState::Pending);
  {
    ReviewService service(dir);
    CHECK(service.replayed() == 10);
    ReviewServer server(service, "127.0.0.1", port);
    server.start();
    httplib::Client c("127.0.0.1", port);
    const json q = get_json(c, "/api/queue");
    CHECK(q.size() == samples.size() - 10);
    CHECK(q[0].at("sample_id") == samples[10].sample_id);
    // Decisions from before the restart still conflict.
    post_decision(c, decision_for(3), 409);
    for (std::size_t i = 10; i < 20; ++i) post_decision(c, decision_for(i), 200);
    server.stop();
    service.fold();
  }

  const auto folded = read_real_manifest(dir);
  for (std::size_t i = 0; i < 20; ++i) {
    const ReviewState want = i % 3 == 0   ? ReviewState::Accepted
                             : i % 3 == 1 ? ReviewState::Rejected
                                          : ReviewState::Edited;
    CHECK(folded[i].state == want);
    if (i % 3 == 2) CHECK(folded[i].edited_caption == fmt::format("edited caption {}", i));
    if (i % 3 == 1) CHECK(folded[i].reason == "wrong box");
  }
  for (std::size_t i = 20; i < folded.size(); ++i) CHECK(folded[i].state == ReviewState::Pending);

  // Replaying a log that is already folded changes nothing.
  ReviewService again(dir);
  CHECK(again.replayed() == 0);
  CHECK(again.queue().size() == samples.size() - 20);
  fs::remove_all(dir);
}

TEST_CASE("a torn final log line is dropped on replay") {
  const fs::path dir = review_queue("cli_review_torn");
  const auto samples = read_real_manifest(dir);
  {
    ReviewService service(dir);
    CHECK(service.decide({{"sample_id", samples[0].sample_id}, {"decision", "accept"}}).status ==
          200);
  }
  {
    std::ofstream log(dir / kReviewLogFile, std::ios::app);
    log << "{\"seq\": 2, \"sample_id\": \"" << samples[1].sample_id << "\", \"decis";
  }
  {
    ReviewService service(dir);
    CHECK(service.replayed() == 1);
    CHECK(service.decide({{"sample_id", samples[1].sample_id}, {"decision", "reject"}}).status ==
          200);
  }
  ReviewService service(dir);
  CHECK(service.replayed() == 2);
  fs::remove_all(dir);
}

TEST_CASE("a second session on the same manifest or port is refused") {
  const fs::path dir = review_queue("cli_review_lock");
  ReviewService service(dir);
  try {
    ReviewService second(dir);
    FAIL("expected ManifestLocked");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ManifestLocked);
  }
  RunResult r = forge({"serve-review", "--manifest", dir.string(), "--port", "0"});
  CHECK(r.code == cli::kExitService);
  CHECK(r.err.find("ManifestLocked") != std::string::npos);

  ReviewServer server(service, "127.0.0.1", 0);
  server.start();
  const fs::path other = review_queue("cli_review_lock2");
  ReviewService service2(other);
  try {
    ReviewServer clash(service2, "127.0.0.1", server.port());
    FAIL("expected PortInUse");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PortInUse);
  }
  r = forge({"serve-review", "--manifest", (test::temp_dir("cli_review_lock3")).string()});
  CHECK(r.code == cli::kExitConfig);
  server.stop();
  fs::remove_all(dir);
  fs::remove_all(other);
}

TEST_CASE("serve-review folds decisions into the manifest on shutdown") {
  const fs::path dir = review_queue("cli_review_serve");
  const auto samples = read_real_manifest(dir);
  const int port = free_port();
  RunResult r;
  std::thread t([&] {
    r = forge({"serve-review", "--manifest", dir.string(), "--port", std::to_string(port)});
  });
  httplib::Client c("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 200 && !(res = c.Get("/api/queue")); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  REQUIRE(res);
  post_decision(c, {{"sample_id", samples[0].sample_id}, {"decision", "accept"}}, 200);
  cli::request_shutdown();
  t.join();
  CHECK(r.code == cli::kExitOk);
  CHECK(read_real_manifest(dir)[0].state == ReviewState::Accepted);
  // The lock is released.
  ReviewService after(dir);
  CHECK(after.replayed() == 0);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Real-profile evaluation

TEST_CASE("real samples are scored from candidate images and state files") {
  const fs::path dir = review_queue("cli_real_eval");
  std::vector<RealSample> samples = read_real_manifest(dir);
  std::vector<RealSample> decided;
  for (RealSample& s : samples) {
    if (s.op_kind == OpKind::SR) continue;
    s.transition(ReviewState::Accepted);
    decided.push_back(s);
    if (decided.size() == 4) break;
  }
  REQUIRE(decided.size() == 4);
  write_real_manifest(decided, dir);

  const fs::path cands = dir / "cands";
  fs::create_directories(cands);
  for (std::size_t i = 0; i < 3; ++i) {
    const RealSample& s = decided[i];
    // The source photo itself, with an estimate that matches the ideal
    // destination: perfect compliance, nothing outside the target changed.
    fs::copy_file(s.image, cands / (s.sample_id + ".png"));
    EstimatedState est;
    for (const ObjectState& o : s.dst_scene.objects) {
      EstimatedObject eo;
      eo.id = o.id;
      eo.present = true;
      eo.center = o.center;
      eo.rotation = o.rotation;
      est.objects[o.id] = eo;
    }
    write_file_atomic(cands / (s.sample_id + ".state.json"), estimated_state_to_json(est).dump());
  }
  // The fourth has an image but no state file.
  fs::copy_file(decided[3].image, cands / (decided[3].sample_id + ".png"));

  const RunResult r = forge({"evaluate", "--manifest", dir.string(), "--candidates",
                             cands.string(), "--out", (dir / "eval").string()});
  INFO(r.err);
  REQUIRE(r.code == cli::kExitOk);
  std::ifstream in(dir / "eval" / "results.jsonl");
  std::vector<EvalResult> results;
  for (std::string line; std::getline(in, line);) {
    results.push_back(eval_result_from_json(json::parse(line)));
  }
  REQUIRE(results.size() == 4);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(results[i].dataset == "GSI-Real");
    CHECK(results[i].gate_passed);
    CHECK(results[i].ic == 100.0);
    CHECK(results[i].sa == doctest::Approx(100.0));
    CHECK_FALSE(results[i].ac.has_value());
  }
  CHECK(results[3].missing);
  fs::remove_all(dir);
}
