#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <thread>

#include "gsi/errors.hpp"
#include "gsi/judge.hpp"
#include "httplib.h"

using namespace gsi;
using namespace std::chrono_literals;

namespace {

JudgeRequest gate_request(const std::string& caption) {
  JudgeRequest r;
  r.task = JudgeTask::GateSynthetic;
  r.images = {{1, 2, 3}, {4, 5, 6}};
  r.metadata = {{"caption", caption}, {"op_kind", "CM"}};
  r.request_id = "req-1";
  return r;
}

struct Harness {
  std::shared_ptr<MockJudge> mock = std::make_shared<MockJudge>();
  std::shared_ptr<FakeClock> clock = std::make_shared<FakeClock>();
  JudgeClient client{mock, JudgePolicy{}, clock};
};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ParseError;
}

}  // namespace

TEST_CASE("sha256 and base64 known vectors") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::vector<std::uint8_t> foob{'f', 'o', 'o', 'b'};
  CHECK(base64_encode(foob) == "Zm9vYg==");
  CHECK(base64_decode("Zm9vYg==") == foob);
  for (std::size_t n = 0; n < 10; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(37 * i + 250);
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
}

TEST_CASE("verdict schema") {
  CHECK(parse_verdict(R"({"decision":"accept","reason":"","rewritten_caption":null})").decision ==
        JudgeDecision::Accept);
  const auto v = parse_verdict(R"({"decision":"accept","reason":"ok","rewritten_caption":"x"})");
  CHECK(v.rewritten_caption == "x");
  CHECK(code_of([] { parse_verdict(R"({"decision":"reject","reason":""})"); }) ==
        ErrorCode::SchemaViolation);
  CHECK(code_of([] { parse_verdict(R"({"decision":"maybe","reason":"x"})"); }) ==
        ErrorCode::SchemaViolation);
  CHECK(code_of([] { parse_verdict("not json"); }) == ErrorCode::SchemaViolation);
  CHECK(code_of([] { parse_verdict(R"({"decision":"accept"})"); }) == ErrorCode::SchemaViolation);
  CHECK(parse_verdict(verdict_to_json(v).dump()) == v);
}

TEST_CASE("wire request carries prompt and base64 images") {
  const auto j = judge_request_to_json(gate_request("Move the apple 15 cm to the left."));
  CHECK(j["schema"] == "gsi-judge/1");
  CHECK(j["task"] == "gate_synthetic");
  CHECK(j["images"].size() == 2);
  CHECK(j["images"][0] == "AQID");
  CHECK(j["prompt"].get<std::string>().find("JSON") != std::string::npos);
  for (JudgeTask t : {JudgeTask::GateSynthetic, JudgeTask::GateReal, JudgeTask::CaptionRewrite,
                      JudgeTask::AppearanceTransform, JudgeTask::AppearanceRemoval}) {
    CHECK_FALSE(prompt_template(t).empty());
    CHECK(parse_judge_task(to_string(t)) == t);
  }
}

TEST_CASE("cache key depends on task, images and metadata") {
  const JudgeRequest a = gate_request("x");
  JudgeRequest b = a;
  b.request_id = "other";
  CHECK(judge_cache_key(a) == judge_cache_key(b));  // request_id is not content
  b.images[1][0] = 9;
  CHECK(judge_cache_key(a) != judge_cache_key(b));
  b = a;
  b.metadata["caption"] = "y";
  CHECK(judge_cache_key(a) != judge_cache_key(b));
  b = a;
  b.task = JudgeTask::AppearanceTransform;
  CHECK(judge_cache_key(a) != judge_cache_key(b));
}

TEST_CASE("cache hit makes zero network calls") {
  Harness h;
  const auto first = h.client.submit(gate_request("Move the mug 20 cm to the left."));
  CHECK(h.mock->calls() == 1);
  const auto second = h.client.submit(gate_request("Move the mug 20 cm to the left."));
  CHECK(second == first);
  CHECK(h.mock->calls() == 1);
  CHECK(h.client.cache_hits() == 1);
}

TEST_CASE("reject rule is deterministic") {
  Harness h;
  h.mock->add_reject_rule("floating", "floating object");
  const auto v = h.client.submit(gate_request("The floating mug"));
  CHECK(v.decision == JudgeDecision::Reject);
  CHECK(v.reason == "floating object");
  CHECK(h.client.submit(gate_request("The mug")).decision == JudgeDecision::Accept);
}

TEST_CASE("endpoint down: JudgeUnavailable after 3 attempts with backoff") {
  Harness h;
  h.mock->inject(MockJudge::Fault::Unreachable, -1);
  CHECK(code_of([&] { h.client.submit(gate_request("x")); }) == ErrorCode::JudgeUnavailable);
  CHECK(h.mock->calls() == 3);
  CHECK(h.clock->sleeps() == std::vector<std::chrono::milliseconds>{1000ms, 2000ms});
  CHECK(h.clock->total() == 3000ms);
  // Failures are never cached.
  h.mock->inject(MockJudge::Fault::None, 0);
  CHECK(h.client.submit(gate_request("x")).decision == JudgeDecision::Accept);
}

TEST_CASE("malformed replies: SchemaViolation after 3 attempts") {
  Harness h;
  h.mock->inject(MockJudge::Fault::Malformed, -1);
  CHECK(code_of([&] { h.client.submit(gate_request("x")); }) == ErrorCode::SchemaViolation);
  CHECK(h.mock->calls() == 3);
}

TEST_CASE("transient fault recovers within the retry budget") {
  Harness h;
  h.mock->inject(MockJudge::Fault::Unreachable, 2);
  CHECK(h.client.submit(gate_request("x")).decision == JudgeDecision::Accept);
  CHECK(h.mock->calls() == 3);
  CHECK(h.clock->total() == 3000ms);
}

TEST_CASE("image count is enforced per task") {
  Harness h;
  JudgeRequest r = gate_request("x");
  r.images.pop_back();
  CHECK(code_of([&] { h.client.submit(r); }) == ErrorCode::SchemaViolation);
  CHECK(h.mock->calls() == 0);
}

TEST_CASE("disk cache survives a new client") {
  const auto dir = std::filesystem::temp_directory_path() / "gsi_judge_cache_test";
  std::filesystem::remove_all(dir);
  auto mock = std::make_shared<MockJudge>();
  mock->add_reject_rule("bad", "bad caption");
  JudgePolicy policy;
  policy.cache_dir = dir;
  {
    JudgeClient c(mock, policy, std::make_shared<FakeClock>());
    c.submit(gate_request("bad one"));
  }
  JudgeClient c(mock, policy, std::make_shared<FakeClock>());
  const auto v = c.submit(gate_request("bad one"));
  CHECK(v.decision == JudgeDecision::Reject);
  CHECK(mock->calls() == 1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("concurrent submissions are consistent") {
  auto mock = std::make_shared<MockJudge>();
  mock->add_reject_rule("odd", "odd");
  JudgeClient client(mock, JudgePolicy{}, std::make_shared<FakeClock>());
  std::vector<std::thread> threads;
  std::vector<JudgeDecision> out(16);
  for (int i = 0; i < 16; ++i) {
    threads.emplace_back([&, i] {
      out[i] = client.submit(gate_request(i % 2 ? "odd" : "even")).decision;
    });
  }
  for (auto& t : threads) t.join();
  for (int i = 0; i < 16; ++i) {
    CHECK(out[i] == (i % 2 ? JudgeDecision::Reject : JudgeDecision::Accept));
  }
}

TEST_CASE("http transport against a local service") {
  httplib::Server server;
  std::string seen_auth;
  server.Post("/judge", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    const bool ok = body["metadata"]["caption"] != "reject me";
    res.set_content(verdict_to_json({ok ? JudgeDecision::Accept : JudgeDecision::Reject,
                                     ok ? "fine" : "nope", std::nullopt})
                        .dump(),
                    "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  auto transport = std::make_shared<HttpJudgeTransport>(base + "/judge", "secret");
  JudgeClient client(transport, JudgePolicy{}, std::make_shared<FakeClock>());
  CHECK(client.submit(gate_request("fine")).decision == JudgeDecision::Accept);
  CHECK(client.submit(gate_request("reject me")).reason == "nope");
  CHECK(seen_auth == "Bearer secret");

  auto clock = std::make_shared<FakeClock>();
  JudgeClient broken(std::make_shared<HttpJudgeTransport>(base + "/broken", ""), JudgePolicy{},
                     clock);
  CHECK(code_of([&] { broken.submit(gate_request("x")); }) == ErrorCode::JudgeUnavailable);
  CHECK(broken.network_calls() == 3);
  server.stop();
  th.join();

  // Nothing listens any more.
  JudgeClient down(std::make_shared<HttpJudgeTransport>(base + "/judge", "", 2s), JudgePolicy{},
                   std::make_shared<FakeClock>());
  CHECK(code_of([&] { down.submit(gate_request("x")); }) == ErrorCode::JudgeUnavailable);
}
