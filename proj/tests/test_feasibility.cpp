#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "gsi/errors.hpp"
#include "gsi/feasibility.hpp"
#include "test_support.hpp"

using namespace gsi;
using gsi::test::tabletop_scene;
using gsi::test::uniform;

namespace {

std::vector<std::string> names(const FeasibilityReport& r) {
  std::vector<std::string> out;
  for (const auto& c : r.checks) out.push_back(c.name);
  return out;
}

void check_report_shape(const FeasibilityReport& r) {
  const std::vector<std::string> expected(kFeasibilityChecks.begin(), kFeasibilityChecks.end());
  CHECK(names(r) == expected);
  std::optional<std::string> first;
  bool all = true;
  for (const auto& c : r.checks) {
    if (!c.passed && !first) first = c.name;
    all &= c.passed;
  }
  CHECK(r.first_failure == first);
  CHECK(r.feasible == all);
}

}  // namespace

TEST_CASE("a 10 m move leaves the support") {
  const Scene s = tabletop_scene();
  const auto r = check_feasible(s, make_camera_relative_move(s, "chair", Direction::Right, 10.0));
  check_report_shape(r);
  CHECK_FALSE(r.feasible);
  CHECK_FALSE(r.find("support")->passed);
}

TEST_CASE("a 1 cm move is not significant") {
  const Scene s = tabletop_scene();
  const auto r = check_feasible(s, make_camera_relative_move(s, "plate", Direction::Left, 0.01));
  check_report_shape(r);
  CHECK(r.first_failure == std::optional<std::string>("significance"));
}

TEST_CASE("placing into an occupied slot fails at collision") {
  const Scene s = tabletop_scene();
  Scene crowded = s;
  const auto probe = make_object_relative_place(s, "mug_blue", "plate", Relation::Left, 0.05);
  const Vec3 slot = probe.object_deltas.at("mug_blue").new_center;
  // Slightly behind the slot: overlaps by 2 cm but stays mostly visible.
  crowded.find("mug_red")->center.head<2>() = slot.head<2>() + Vec2(0.0, 0.06);
  REQUIRE(validate_scene(crowded).warnings.empty());
  const auto t = make_object_relative_place(crowded, "mug_blue", "plate", Relation::Left, 0.05);
  Scene dst = settle(ideal_destination(crowded, t));
  REQUIRE(obb_intersects(dst.find("mug_blue")->obb(), dst.find("mug_red")->obb()));
  const auto r = check_feasible(crowded, t);
  check_report_shape(r);
  CHECK(r.first_failure == std::optional<std::string>("collision"));
}

TEST_CASE("a feasible placement passes every check") {
  const Scene s = tabletop_scene();
  const auto r = check_feasible(s, make_object_relative_place(s, "mug_blue", "plate",
                                                              Relation::Right, 0.05));
  check_report_shape(r);
  CHECK(r.feasible);
  CHECK(r.find("containment")->detail == "n/a");
}

TEST_CASE("receptacle placement runs the containment check") {
  const Scene s = tabletop_scene();
  const auto r = check_feasible(s, make_receptacle_place(s, "mug_red", "box"));
  check_report_shape(r);
  CHECK(r.find("containment")->passed);
  CHECK(r.find("containment")->detail != "n/a");
}

TEST_CASE("unresolvable targets skip the remaining checks") {
  const Scene s = tabletop_scene();
  SceneTransform t = make_rotation(s, "plate", 0.5);
  t.target_id = "ghost";
  t.object_deltas = {{"ghost", t.object_deltas.at("plate")}};
  const auto r = check_feasible(s, t);
  check_report_shape(r);
  CHECK(r.first_failure == std::optional<std::string>("target"));
  for (std::size_t i = 1; i < r.checks.size(); ++i) CHECK(r.checks[i].detail == "skipped");
}

TEST_CASE("objects carrying others cannot be moved or removed") {
  const Scene s = tabletop_scene();
  const auto r = check_feasible(s, make_removal(s, {std::string("table"), {}, {}}));
  check_report_shape(r);
  CHECK_FALSE(r.find("support")->passed);
}

TEST_CASE("perspective changes") {
  const Scene s = tabletop_scene();
  const auto ok = check_feasible(s, make_perspective_change(s, PerspectiveMode::OrbitLeft, 0.5));
  check_report_shape(ok);
  CHECK(ok.feasible);
  const auto tiny = check_feasible(s, make_perspective_change(s, PerspectiveMode::ZoomIn, 0.01));
  CHECK(tiny.first_failure == std::optional<std::string>("significance"));
}

TEST_CASE("feasible candidates never collide when applied") {
  std::mt19937_64 rng(41);
  const Scene s = tabletop_scene();
  const std::vector<std::string> movable{"mug_red", "mug_blue", "plate", "chair", "box"};
  int feasible = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string& id = movable[rng() % movable.size()];
    SceneTransform t;
    try {
      switch (rng() % 6) {
        case 0:
          t = make_camera_relative_move(s, id, static_cast<Direction>(rng() % 6),
                                        uniform(rng, 0.0, 1.5));
          break;
        case 1:
          t = make_object_relative_place(s, id, movable[rng() % movable.size()],
                                         static_cast<Relation>(rng() % 4), uniform(rng, 0.0, 0.3));
          break;
        case 2: t = make_rotation(s, id, uniform(rng, -kPi, kPi)); break;
        case 3: t = make_receptacle_place(s, id, "box"); break;
        case 4: t = make_scale(s, id, uniform(rng, 0.25, 4.0)); break;
        default: t = make_removal(s, {id, {}, {}}); break;
      }
    } catch (const Error&) {
      continue;
    }
    const auto r = check_feasible(s, t);
    check_report_shape(r);
    if (!r.feasible) continue;
    ++feasible;
    CHECK_NOTHROW(apply_transform(s, t));
  }
  MESSAGE("feasible candidates: " << feasible);
  CHECK(feasible > 50);
}
