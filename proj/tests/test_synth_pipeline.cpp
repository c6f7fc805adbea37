#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <regex>

#include "gsi/errors.hpp"
#include "gsi/synth_pipeline.hpp"
#include "test_support.hpp"

using namespace gsi;
namespace fs = std::filesystem;

namespace {

std::map<OpKind, int> all_kinds(int n) {
  std::map<OpKind, int> counts;
  for (OpKind k : kAllOpKinds) counts[k] = n;
  return counts;
}

const EnvSpec& tabletop() {
  static const EnvSpec env = load_env("tabletop-small", test::source_dir() / "envs");
  return env;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ParseError;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto bytes = read_file(e.path());
    out[fs::relative(e.path(), root).string()] = std::string(bytes.begin(), bytes.end());
  }
  return out;
}

// Independent FNV-1a / splitmix64 composition.
std::uint64_t reference_seed(std::uint64_t seed, const std::string& tag) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : tag) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return mix(seed ^ mix(h));
}

}  // namespace

TEST_CASE("stream seeds are derived from the run seed and the tag") {
  CHECK(derive_seed(7, "tabletop-small/CM") == reference_seed(7, "tabletop-small/CM"));
  CHECK(derive_seed(0, "") == reference_seed(0, ""));
  CHECK(derive_seed(7, "a/CM") != derive_seed(7, "a/OP"));
  CHECK(derive_seed(7, "a/CM") != derive_seed(8, "a/CM"));
}

TEST_CASE("generation is byte-for-byte deterministic, independent of worker count") {
  const fs::path a = test::temp_dir("pipe_det_a");
  const fs::path b = test::temp_dir("pipe_det_b");
  GenerateOptions oa;
  oa.out_dir = a;
  oa.config.jobs = 1;
  GenerateOptions ob = oa;
  ob.out_dir = b;
  ob.config.jobs = 4;
  generate_samples({tabletop()}, all_kinds(2), 21, oa);
  generate_samples({tabletop()}, all_kinds(2), 21, ob);
  const auto ta = tree_bytes(a);
  CHECK(ta.size() > 2);
  CHECK(ta == tree_bytes(b));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("validated samples satisfy the pipeline invariants and replay") {
  const fs::path dir = test::temp_dir("pipe_replay");
  GenerateOptions opt;
  opt.out_dir = dir;
  const Manifest m = generate_samples({tabletop()}, all_kinds(2), 5, opt);
  const Manifest back = read_manifest(dir);
  REQUIRE(back.samples.size() == m.samples.size());
  const std::regex id_re(R"(tabletop-small-(CM|OP|OR|RP|PC|SR|OS)-\d{5})");
  std::map<OpKind, int> validated;
  for (const Sample& s : back.samples) {
    CAPTURE(s.sample_id);
    CHECK(std::regex_match(s.sample_id, id_re));
    CHECK(sample_to_json(s) == sample_to_json(*m.find(s.sample_id)));
    if (s.status != SampleStatus::Validated) {
      CHECK(s.image_dir.empty());
      continue;
    }
    ++validated[s.op_kind];
    CHECK(s.pixel_change >= opt.config.min_pixel_change);
    CHECK(fs::is_regular_file(dir / s.source_image()));
    CHECK(fs::is_regular_file(dir / s.target_masks()));
    CHECK(back.scene_ids().count(s.scene_id) == 1);
    const ReplayReport r = replay_sample(s, opt.config, &dir);
    CHECK(r.ok());
    CHECK(r.pixel_change == doctest::Approx(s.pixel_change).epsilon(1e-8));
  }
  for (OpKind k : kAllOpKinds) CHECK(validated[k] == 2);
  CHECK(back.achieved == m.achieved);
  fs::remove_all(dir);
}

TEST_CASE("an object left hanging in the air fails execution") {
  const Scene s = test::tabletop_scene();
  SceneTransform t;
  t.kind = OpKind::CM;
  t.target_id = "mug_red";
  const ObjectState& mug = *s.find("mug_red");
  t.object_deltas["mug_red"] = ObjectDelta{mug.center + Vec3(0.0, 0.0, 0.3), mug.rotation, 1.0, {}};
  const ExecutionResult r = execute_and_validate(s, t);
  CHECK_FALSE(r.success);
  CHECK(r.actual_dst.find("mug_red")->center.z() == doctest::Approx(mug.center.z()));
  CHECK(r.ideal_dst.find("mug_red")->center.z() == doctest::Approx(mug.center.z() + 0.3));

  SceneTransform ok = make_camera_relative_move(s, "mug_red", Direction::Right, 0.1);
  CHECK(execute_and_validate(s, ok).success);
}

TEST_CASE("zero counts write a meta-only manifest") {
  const fs::path dir = test::temp_dir("pipe_zero");
  GenerateOptions opt;
  opt.out_dir = dir;
  const Manifest m = generate_samples({tabletop()}, all_kinds(0), 1, opt);
  CHECK(m.samples.empty());
  CHECK(fs::is_regular_file(dir / kManifestMetaFile));
  CHECK(fs::file_size(dir / kManifestFile) == 0);
  CHECK_FALSE(fs::exists(dir / "images"));
  CHECK(read_manifest(dir).samples.empty());
  CHECK(code_of([&] { generate_samples({tabletop()}, {{OpKind::CM, -1}}, 1, opt); }) ==
        ErrorCode::ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("excluded scenes never appear") {
  GenerateOptions opt;
  const Manifest first = generate_samples({tabletop()}, all_kinds(1), 3, opt);
  const auto held_out = first.scene_ids();
  REQUIRE_FALSE(held_out.empty());
  opt.exclude_scene_ids = held_out;
  Manifest second;
  try {
    second = generate_samples({tabletop()}, all_kinds(1), 4, opt);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BudgetExhausted);
  }
  for (const Sample& s : second.samples) CHECK(held_out.count(s.scene_id) == 0);
}

TEST_CASE("budget exhaustion writes the partial manifest and throws") {
  const fs::path dir = test::temp_dir("pipe_budget");
  GenerateOptions opt;
  opt.out_dir = dir;
  opt.config.min_attempts = 5;
  opt.config.attempts_per_sample = 1;
  CHECK(code_of([&] { generate_samples({tabletop()}, {{OpKind::CM, 5}}, 2, opt); }) ==
        ErrorCode::BudgetExhausted);
  const Manifest partial = read_manifest(dir);
  CHECK(partial.requested.at(OpKind::CM) == 5);
  CHECK(partial.achieved.at(OpKind::CM) < 5);
  fs::remove_all(dir);
}

TEST_CASE("judge gating filters rejected and unreachable candidates") {
  auto mock = std::make_shared<MockJudge>();
  mock->add_reject_rule("to the left", "looks wrong");
  JudgeClient judge(mock, JudgePolicy{}, std::make_shared<FakeClock>());
  GenerateOptions opt;
  opt.judge = &judge;
  const Manifest m = generate_samples({tabletop()}, {{OpKind::CM, 4}}, 9, opt);
  int rejected = 0;
  for (const Sample& s : m.samples) {
    if (s.status == SampleStatus::Validated) {
      CHECK(s.instruction.caption.find("to the left") == std::string::npos);
      REQUIRE(s.judge.has_value());
      CHECK(s.judge->decision == JudgeDecision::Accept);
    }
    if (s.status == SampleStatus::FilteredJudge) {
      ++rejected;
      CHECK(s.note == "looks wrong");
    }
  }
  CHECK(rejected > 0);

  auto down = std::make_shared<MockJudge>();
  down->inject(MockJudge::Fault::Unreachable, -1);
  JudgeClient unreachable(down, JudgePolicy{}, std::make_shared<FakeClock>());
  opt.judge = &unreachable;
  opt.config.min_attempts = 10;
  opt.config.attempts_per_sample = 1;
  const fs::path dir = test::temp_dir("pipe_judge_down");
  opt.out_dir = dir;
  CHECK(code_of([&] { generate_samples({tabletop()}, {{OpKind::CM, 2}}, 9, opt); }) ==
        ErrorCode::BudgetExhausted);
  const Manifest partial = read_manifest(dir);
  int unavailable = 0;
  for (const Sample& s : partial.samples) {
    CHECK(s.status != SampleStatus::Validated);
    unavailable += s.status == SampleStatus::JudgeUnavailable;
  }
  CHECK(unavailable > 0);
  fs::remove_all(dir);
}

TEST_CASE("missing environment files are named") {
  try {
    load_env("no-such-env", test::source_dir() / "envs");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    CHECK(std::string(e.what()).find("no-such-env.json") != std::string::npos);
  }
}

TEST_CASE("sample status names round-trip") {
  for (SampleStatus s : {SampleStatus::Validated, SampleStatus::FilteredInsignificant,
                         SampleStatus::FilteredJudge, SampleStatus::FailedExecution,
                         SampleStatus::JudgeUnavailable}) {
    CHECK(parse_sample_status(to_string(s)) == s);
  }
  CHECK_FALSE(parse_sample_status("kept").has_value());
}
