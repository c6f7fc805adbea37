#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "gsi/errors.hpp"
#include "gsi/spatial_ops.hpp"
#include "test_support.hpp"

using namespace gsi;
using gsi::test::make_object;
using gsi::test::tabletop_scene;
using gsi::test::uniform;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ParseError;
}

const ObjectDelta& delta(const SceneTransform& t) { return t.object_deltas.at(t.target_id); }

void check_pose_close(const Scene& a, const Scene& b, double eps) {
  REQUIRE(a.objects.size() == b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    CHECK((a.objects[i].center - b.objects[i].center).norm() < eps);
    CHECK((a.objects[i].size - b.objects[i].size).norm() < eps);
    CHECK((a.objects[i].rotation.matrix() - b.objects[i].rotation.matrix()).norm() < eps);
  }
  CHECK((a.camera.rotation.matrix() - b.camera.rotation.matrix()).norm() < eps);
  CHECK((a.camera.translation - b.camera.translation).norm() < eps);
}

Scene with_camera_rotation(Scene s, const Rotation& r) {
  s.camera.rotation = r;
  return s;
}

}  // namespace

TEST_CASE("token round trips") {
  for (OpKind k : kAllOpKinds) CHECK(parse_op_kind(to_string(k)) == k);
  CHECK(parse_direction("left") == Direction::Left);
  CHECK(parse_relation("inside") == Relation::Inside);
  CHECK(parse_perspective_mode("zoom_out") == PerspectiveMode::ZoomOut);
  CHECK_FALSE(parse_op_kind("XX").has_value());
}

TEST_CASE("camera-relative move") {
  const Scene base = tabletop_scene();
  SUBCASE("identity camera: left is world -x") {
    const Scene s = with_camera_rotation(base, Rotation::identity());
    const auto t = make_camera_relative_move(s, "mug_red", Direction::Left, 0.15);
    const Vec3 d = delta(t).new_center - s.find("mug_red")->center;
    CHECK((d - Vec3(-0.15, 0.0, 0.0)).norm() < 1e-12);
    CHECK(delta(t).new_rotation == s.find("mug_red")->rotation);
  }
  SUBCASE("camera yawed 90 degrees: left is world -y") {
    // R_c^T * (-1, 0, 0) with R_c = rot_z(pi/2)^T is rot_z(pi/2) * (-1, 0, 0) = (0, -1, 0).
    const Scene s = with_camera_rotation(base, Rotation::about_z(kPi / 2).transpose());
    const auto t = make_camera_relative_move(s, "mug_red", Direction::Left, 0.15);
    const Vec3 d = delta(t).new_center - s.find("mug_red")->center;
    CHECK((d - Vec3(0.0, -0.15, 0.0)).norm() < 1e-12);
  }
  SUBCASE("distance 0 is the identity") {
    const auto t = make_camera_relative_move(base, "plate", Direction::Forward, 0.0);
    CHECK(apply_transform(base, t) == base);
  }
  SUBCASE("displacement length equals distance") {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 200; ++i) {
      Scene s = base;
      s.camera = CameraState::from_yaw_pitch({0, -2.5, 1.2}, uniform(rng, -kPi, kPi),
                                             uniform(rng, -1.0, 0.0), s.camera.intrinsics);
      const auto dir = static_cast<Direction>(rng() % 6);
      const double dist = uniform(rng, 0.0, 1.0);
      const auto t = make_camera_relative_move(s, "mug_blue", dir, dist);
      CHECK(std::abs((delta(t).new_center - s.find("mug_blue")->center).norm() - dist) < 1e-9);
    }
  }
  SUBCASE("errors") {
    CHECK(code_of([&] { make_camera_relative_move(base, "ghost", Direction::Left, 0.1); }) ==
          ErrorCode::UnknownTarget);
    CHECK(code_of([&] { make_camera_relative_move(base, "table", Direction::Left, 0.1); }) ==
          ErrorCode::NonManipulable);
  }
}

TEST_CASE("object-relative place") {
  const Scene s = tabletop_scene();  // camera right is world +x
  SUBCASE("cup left of plate") {
    const auto t = make_object_relative_place(s, "mug_red", "plate", Relation::Left, 0.05);
    const ObjectState& cup = *s.find("mug_red");
    const ObjectState& plate = *s.find("plate");
    const Vec3 expected = plate.center + Vec3(-(0.04 + 0.1 + 0.05), 0.0, 0.0);
    const Vec3 got = delta(t).new_center;
    CHECK(got.x() == doctest::Approx(expected.x()));
    CHECK(got.y() == doctest::Approx(expected.y()));
    CHECK(got.z() == doctest::Approx(0.75 + cup.size.z() / 2));
    CHECK(t.reference_id == std::optional<std::string>("plate"));
  }
  SUBCASE("gap 0 between identical objects leaves one full extent between centers") {
    const auto t = make_object_relative_place(s, "mug_red", "mug_blue", Relation::Right, 0.0);
    const Vec3 d = delta(t).new_center - s.find("mug_blue")->center;
    CHECK(d.head<2>().norm() == doctest::Approx(0.08));
  }
  SUBCASE("behind with a yawed camera follows the camera's horizontal forward axis") {
    Scene y = s;
    const double yaw = 1.1;  // heading from world +x
    y.camera = CameraState::from_yaw_pitch({0, -2.5, 1.2}, yaw, -0.4, y.camera.intrinsics);
    const auto t = make_object_relative_place(y, "mug_red", "plate", Relation::Behind, 0.05);
    const Vec3 axis(std::cos(yaw), std::sin(yaw), 0.0);
    // Oracle: half extents along the axis from the corners, by hand.
    auto reach = [&](const ObjectState& o) {
      double m = 0.0;
      for (const Vec3& c : o.obb().corners()) m = std::max(m, (c - o.center).dot(axis));
      return m;
    };
    const double mag = reach(*y.find("mug_red")) + reach(*y.find("plate")) + 0.05;
    const Vec3 d = delta(t).new_center - y.find("plate")->center;
    CHECK(d.x() == doctest::Approx(mag * axis.x()));
    CHECK(d.y() == doctest::Approx(mag * axis.y()));
    // In the camera frame the displacement points away from the viewer.
    CHECK((y.camera.rotation * d).z() > 0.0);
  }
  SUBCASE("errors") {
    CHECK(code_of([&] { make_object_relative_place(s, "plate", "plate", Relation::Left, 0.1); }) ==
          ErrorCode::SameObject);
    CHECK(code_of([&] { make_object_relative_place(s, "plate", "ghost", Relation::Left, 0.1); }) ==
          ErrorCode::UnknownReference);
  }
}

TEST_CASE("rotation") {
  const Scene s = tabletop_scene();
  CHECK(apply_transform(s, make_rotation(s, "plate", 0.0)) == s);
  const Scene once = apply_transform(s, make_rotation(s, "plate", kPi / 2));
  const Scene back = apply_transform(once, make_rotation(once, "plate", -kPi / 2));
  CHECK((back.find("plate")->rotation.matrix() - s.find("plate")->rotation.matrix()).norm() <
        1e-9);
  CHECK(geodesic_distance(s.find("plate")->rotation, once.find("plate")->rotation) ==
        doctest::Approx(kPi / 2));
  CHECK(code_of([&] { make_rotation(s, "plate", 3.5); }) == ErrorCode::AngleOutOfRange);
}

TEST_CASE("receptacle place") {
  const Scene s = tabletop_scene();
  const ObjectState& box = *s.find("box");
  SUBCASE("small object lands centered on the interior floor") {
    const auto t = make_receptacle_place(s, "mug_red", "box");
    const Vec3 c = delta(t).new_center;
    CHECK(c.x() == doctest::Approx(box.center.x()));
    CHECK(c.y() == doctest::Approx(box.center.y()));
    CHECK(c.z() == doctest::Approx(0.05 * 0.3 + 0.05));
    CHECK(delta(t).new_support_id == std::optional<std::string>("box"));
    const Scene after = apply_transform(s, t);
    CHECK(obb_contains(receptacle_interior(box), after.find("mug_red")->obb(), 0.0));
  }
  SUBCASE("object larger than the receptacle does not fit") {
    Scene big = s;
    big.find("plate")->size = Vec3(0.5, 0.5, 0.02);
    CHECK(code_of([&] { make_receptacle_place(big, "plate", "box"); }) == ErrorCode::DoesNotFit);
  }
  SUBCASE("second object is shifted off the occupied center") {
    const Scene one = apply_transform(s, make_receptacle_place(s, "mug_red", "box"));
    const auto t = make_receptacle_place(one, "mug_blue", "box");
    const Scene two = apply_transform(one, t);
    const Obb a = two.find("mug_red")->obb();
    const Obb b = two.find("mug_blue")->obb();
    CHECK_FALSE(obb_intersects(a, b));
    CHECK(obb_contains(receptacle_interior(box), b, 0.0));
  }
  SUBCASE("full receptacle") {
    Scene full = s;
    full.find("plate")->size = Vec3(0.34, 0.25, 0.02);
    full = apply_transform(full, make_receptacle_place(full, "plate", "box"));
    CHECK(code_of([&] { make_receptacle_place(full, "mug_red", "box"); }) ==
          ErrorCode::DoesNotFit);
  }
  CHECK(code_of([&] { make_receptacle_place(s, "mug_red", "chair"); }) ==
        ErrorCode::NotAReceptacle);
}

TEST_CASE("perspective change") {
  const Scene s = tabletop_scene();
  SUBCASE("orbit 0 is the identity") {
    const auto t = make_perspective_change(s, PerspectiveMode::OrbitLeft, 0.0);
    CHECK((apply_transform(s, t).camera.translation - s.camera.translation).norm() < 1e-12);
  }
  SUBCASE("zoom in then out restores the camera") {
    const Scene in = apply_transform(s, make_perspective_change(s, PerspectiveMode::ZoomIn, 0.4));
    const Scene out = apply_transform(in, make_perspective_change(in, PerspectiveMode::ZoomOut, 0.4));
    CHECK((out.camera.translation - s.camera.translation).norm() < 1e-9);
    CHECK((in.camera.position() - s.camera.position()).norm() == doctest::Approx(0.4));
  }
  SUBCASE("orbit preserves the distance to the pivot and its image position") {
    const Vec3 pivot = orbit_pivot(s);
    const Scene o = apply_transform(s, make_perspective_change(s, PerspectiveMode::OrbitLeft, kPi / 6));
    CHECK(std::abs((o.camera.position() - pivot).norm() - (s.camera.position() - pivot).norm()) <
          1e-9);
    const Vec2 before = project_point(pivot, s.camera).pixel;
    const Vec2 after = project_point(pivot, o.camera).pixel;
    CHECK((before - after).norm() < 1e-6);
    // Orbiting left moves the camera toward its own left.
    CHECK((o.camera.position() - s.camera.position()).dot(s.camera.right()) < 0.0);
    // Objects are untouched.
    CHECK(o.objects == s.objects);
  }
  CHECK(code_of([&] { make_perspective_change(s, PerspectiveMode::OrbitRight, 2.0); }) ==
        ErrorCode::MagnitudeOutOfRange);
  CHECK(code_of([&] { make_perspective_change(s, PerspectiveMode::ZoomIn, 10.0); }) ==
        ErrorCode::MagnitudeOutOfRange);
}

TEST_CASE("removal") {
  const Scene s = tabletop_scene();
  SUBCASE("explicit id") {
    const auto t = make_removal(s, RemovalCriterion{std::string("plate"), {}, {}});
    CHECK(t.removals == std::set<std::string>{"plate"});
    const Scene after = apply_transform(s, t);
    CHECK(after.find("plate") == nullptr);
    CHECK(after.objects.size() == s.objects.size() - 1);
  }
  SUBCASE("leftmost mug by projected bbox center") {
    const double xr = project_obb(s.find("mug_red")->obb(), s.camera).bbox.center().x();
    const double xb = project_obb(s.find("mug_blue")->obb(), s.camera).bbox.center().x();
    REQUIRE(xr != xb);
    const auto t = make_removal(s, RemovalCriterion{std::nullopt, RemovalPredicate::Leftmost, "mug"});
    CHECK(t.target_id == (xr < xb ? "mug_red" : "mug_blue"));
    const auto r = make_removal(s, RemovalCriterion{std::nullopt, RemovalPredicate::Rightmost, "mug"});
    CHECK(r.target_id == (xr < xb ? "mug_blue" : "mug_red"));
  }
  SUBCASE("singleton predicate") {
    const auto t = make_removal(s, RemovalCriterion{std::nullopt, RemovalPredicate::Nearest, "chair"});
    CHECK(t.target_id == "chair");
  }
  SUBCASE("no match is ambiguous") {
    CHECK(code_of([&] {
            make_removal(s, RemovalCriterion{std::nullopt, RemovalPredicate::Nearest, "lamp"});
          }) == ErrorCode::AmbiguousCriterion);
  }
}

TEST_CASE("scale") {
  Scene s = tabletop_scene();
  s.objects.push_back(make_object("cube", "cube", {1.2, -1.0, 0.1}, {0.2, 0.2, 0.2},
                                  {230, 210, 40}));
  CHECK(apply_transform(s, make_scale(s, "cube", 1.0)) == s);
  const Scene big = apply_transform(s, make_scale(s, "cube", 2.0));
  CHECK(big.find("cube")->size.x() == doctest::Approx(0.4));
  CHECK(big.find("cube")->center.z() == doctest::Approx(0.2));
  const Scene back = apply_transform(big, make_scale(big, "cube", 0.5));
  CHECK((back.find("cube")->size - s.find("cube")->size).norm() < 1e-9);
  CHECK(code_of([&] { make_scale(s, "cube", 5.0); }) == ErrorCode::FactorOutOfRange);
  CHECK(code_of([&] { make_scale(s, "cube", 0.2); }) == ErrorCode::FactorOutOfRange);
}

TEST_CASE("apply_transform") {
  const Scene s = tabletop_scene();
  SUBCASE("CM changes only the target's center") {
    const auto t = make_camera_relative_move(s, "mug_blue", Direction::Right, 0.1);
    const Scene copy = s;
    const Scene after = apply_transform(s, t);
    CHECK(s == copy);  // input untouched
    const auto a = scene_to_json(s);
    const auto b = scene_to_json(after);
    const auto diff = nlohmann::json::diff(a, b);
    REQUIRE(diff.size() == 1);  // one replaced value
    CHECK(diff[0]["path"].get<std::string>() == "/objects/2/center/0");
    CHECK(save_scene(apply_transform(s, t)) == save_scene(after));
  }
  SUBCASE("dangling references") {
    SceneTransform t = make_rotation(s, "plate", 0.5);
    t.object_deltas["ghost"] = t.object_deltas.at("plate");
    CHECK(code_of([&] { apply_transform(s, t); }) == ErrorCode::DanglingReference);
  }
  SUBCASE("collisions are reported") {
    SceneTransform t = make_object_relative_place(s, "mug_red", "plate", Relation::Left, 0.0);
    t.object_deltas.at("mug_red").new_center = s.find("plate")->center;
    CHECK(code_of([&] { apply_transform(s, t); }) == ErrorCode::PostTransformCollision);
  }
}

TEST_CASE("analytic inverses restore the scene") {
  std::mt19937_64 rng(32);
  const Scene s = tabletop_scene();
  const auto opposite = [](Direction d) {
    switch (d) {
      case Direction::Left: return Direction::Right;
      case Direction::Right: return Direction::Left;
      case Direction::Forward: return Direction::Backward;
      case Direction::Backward: return Direction::Forward;
      case Direction::Up: return Direction::Down;
      case Direction::Down: return Direction::Up;
    }
    return Direction::Left;
  };
  for (int i = 0; i < 50; ++i) {
    const Direction d = static_cast<Direction>(rng() % 4);
    const double dist = uniform(rng, 0.0, 0.05);
    const Scene a = apply_transform(s, make_camera_relative_move(s, "plate", d, dist));
    check_pose_close(apply_transform(a, make_camera_relative_move(a, "plate", opposite(d), dist)),
                     s, 1e-7);

    const double angle = uniform(rng, -kPi, kPi);
    const Scene r = apply_transform(s, make_rotation(s, "plate", angle));
    check_pose_close(apply_transform(r, make_rotation(r, "plate", -angle)), s, 1e-7);

    const double f = uniform(rng, 0.5, 1.0);
    const Scene k = ideal_destination(s, make_scale(s, "chair", f));
    check_pose_close(ideal_destination(k, make_scale(k, "chair", 1.0 / f)), s, 1e-7);

    const double th = uniform(rng, 0.0, kPi / 2);
    const Scene o = apply_transform(s, make_perspective_change(s, PerspectiveMode::OrbitLeft, th));
    check_pose_close(apply_transform(o, make_perspective_change(o, PerspectiveMode::OrbitRight, th)),
                     s, 1e-7);
  }
}

TEST_CASE("transform shape invariants") {
  const Scene s = tabletop_scene();
  CHECK_NOTHROW(check_transform_shape(make_rotation(s, "plate", 0.3)));
  CHECK_NOTHROW(check_transform_shape(make_removal(s, {std::string("plate"), {}, {}})));
  CHECK_NOTHROW(check_transform_shape(make_perspective_change(s, PerspectiveMode::ZoomIn, 0.2)));
  SceneTransform bad = make_rotation(s, "plate", 0.3);
  bad.object_deltas.at("plate").scale = 2.0;
  CHECK_THROWS_AS(check_transform_shape(bad), Error);
  SceneTransform sr = make_removal(s, {std::string("plate"), {}, {}});
  sr.camera_delta = CameraDelta{};
  CHECK_THROWS_AS(check_transform_shape(sr), Error);
}

TEST_CASE("captions") {
  const Scene s = tabletop_scene();
  SpatialInstruction cm;
  cm.target = Descriptor{"apple", std::nullopt};
  cm.action.kind = OpKind::CM;
  cm.action.direction = Direction::Left;
  cm.action.distance = 0.15;
  CHECK(caption(cm) == "Move the apple 15 cm to the left.");

  SpatialInstruction sr;
  sr.target = Descriptor{"plate", std::nullopt};
  sr.action.kind = OpKind::SR;
  CHECK(caption(sr) == "Remove the plate.");

  SpatialInstruction op;
  op.target = Descriptor{"cup", std::nullopt};
  op.reference = Descriptor{"plate", std::nullopt};
  op.action.kind = OpKind::OP;
  op.action.relation = Relation::Left;
  op.action.gap = 0.05;
  CHECK(caption(op) == "Place the cup to the left of the plate.");

  SpatialInstruction orr;
  orr.target = *describe(s, "mug_red");
  orr.action.kind = OpKind::OR;
  orr.action.angle = -kPi / 2;
  CHECK(caption(orr) == "Rotate the red mug 90 degrees clockwise.");

  SpatialInstruction os;
  os.target = Descriptor{"chair", std::nullopt};
  os.action.kind = OpKind::OS;
  os.action.scale_factor = 0.5;
  CHECK(caption(os) == "Scale the chair by a factor of 0.5.");
}

TEST_CASE("referring expressions") {
  const Scene s = tabletop_scene();
  CHECK(describe(s, "plate") == Descriptor{"plate", std::nullopt});
  CHECK(describe(s, "mug_blue") == Descriptor{"mug", std::string("blue")});
  Scene twins = s;
  twins.find("mug_blue")->color = {210, 35, 30};
  CHECK_FALSE(describe(twins, "mug_red").has_value());
  CHECK(color_word({200, 30, 30}) == "red");
}

TEST_CASE("instruction records regenerate their captions byte-exactly") {
  const Scene s = tabletop_scene();
  std::vector<SpatialInstruction> all;
  {
    SpatialInstruction i;
    i.target = *describe(s, "mug_red");
    i.action.kind = OpKind::CM;
    i.action.direction = Direction::Right;
    i.action.distance = 0.27;
    i.transform = make_camera_relative_move(s, "mug_red", Direction::Right, 0.27);
    all.push_back(i);
  }
  {
    SpatialInstruction i;
    i.target = Descriptor{"camera", std::nullopt};
    i.action.kind = OpKind::PC;
    i.action.mode = PerspectiveMode::OrbitRight;
    i.action.magnitude = deg_to_rad(30);
    i.transform = make_perspective_change(s, PerspectiveMode::OrbitRight, i.action.magnitude);
    all.push_back(i);
  }
  {
    SpatialInstruction i;
    i.target = *describe(s, "plate");
    i.reference = *describe(s, "box");
    i.action.kind = OpKind::RP;
    i.action.relation = Relation::Inside;
    i.transform = make_receptacle_place(s, "plate", "box");
    all.push_back(i);
  }
  for (auto& i : all) {
    i.caption = caption(i);
    const std::string text = instruction_to_json(i).dump();
    const SpatialInstruction back = instruction_from_json(nlohmann::json::parse(text));
    CHECK(caption(back) == i.caption);
    CHECK(back.caption == i.caption);
    CHECK(instruction_to_json(back).dump() == text);
    const SceneTransform canon = canonicalize(i.transform);
    CHECK(transform_to_json(canonicalize(canon)) == transform_to_json(canon));
  }
}
