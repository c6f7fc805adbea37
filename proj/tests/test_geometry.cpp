#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "gsi/errors.hpp"
#include "gsi/geometry.hpp"
#include "gsi/renderer.hpp"
#include "test_support.hpp"

using namespace gsi;
using gsi::test::random_rotation;
using gsi::test::uniform;

namespace {

CameraState identity_camera() {
  CameraState cam;
  cam.intrinsics = Intrinsics{100, 100, 50, 50, 100, 100};
  return cam;
}

// Dense grid of points inside `a` (surface included); true if any lies in `b`.
bool sampling_oracle_intersects(const Obb& a, const Obb& b, int n = 20) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        const Vec3 local(a.half_extents.x() * (-1.0 + 2.0 * i / (n - 1)),
                         a.half_extents.y() * (-1.0 + 2.0 * j / (n - 1)),
                         a.half_extents.z() * (-1.0 + 2.0 * k / (n - 1)));
        if (obb_contains_point(b, a.center + a.rotation * local)) return true;
      }
    }
  }
  return false;
}

// Penetration depth lower bound: minimum over the 15 SAT axes of the overlap.
double min_axis_overlap(const Obb& a, const Obb& b) {
  double best = 1e9;
  auto axis = [&](Vec3 u) {
    if (u.norm() < 1e-9) return;
    u.normalize();
    const double overlap = a.extent_along(u) + b.extent_along(u) -
                           std::abs((b.center - a.center).dot(u));
    best = std::min(best, overlap);
  };
  for (int i = 0; i < 3; ++i) {
    axis(a.rotation.matrix().col(i));
    axis(b.rotation.matrix().col(i));
    for (int j = 0; j < 3; ++j) {
      axis(a.rotation.matrix().col(i).cross(b.rotation.matrix().col(j)));
    }
  }
  return best;
}

}  // namespace

TEST_CASE("project_point examples") {
  const CameraState cam = identity_camera();
  auto p = project_point(Vec3(0, 0, 2), cam);
  CHECK(p.pixel.x() == doctest::Approx(50));
  CHECK(p.pixel.y() == doctest::Approx(50));
  CHECK(p.depth == doctest::Approx(2));

  p = project_point(Vec3(1, 0, 2), cam);
  CHECK(p.pixel.x() == doctest::Approx(100));
  CHECK(p.pixel.y() == doctest::Approx(50));

  try {
    project_point(Vec3(0, 0, -1), cam);
    FAIL("expected BehindCamera");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BehindCamera);
  }
}

TEST_CASE("projection then back-projection recovers the point") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    CameraState cam;
    cam.rotation = random_rotation(rng);
    cam.translation = Vec3(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
    cam.intrinsics = gsi::test::intrinsics_512();
    const Vec3 p_cam(uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, 0.2, 10));
    const Vec3 p = cam.rotation.matrix().transpose() * (p_cam - cam.translation);
    const auto proj = project_point(p, cam);
    CHECK((back_project(proj.pixel, proj.depth, cam) - p).norm() < 1e-6);
  }
}

TEST_CASE("geodesic_distance examples") {
  const Rotation r = Rotation::about_y(0.7) * Rotation::about_x(-0.2);
  CHECK(geodesic_distance(r, r) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(geodesic_distance(Rotation::identity(), Rotation::about_z(kPi / 2)) ==
        doctest::Approx(kPi / 2));

  // Axis-angle oracle: relative rotation a^T b as an angle-axis pair.
  const Rotation a = Rotation::about_x(0.3), b = Rotation::about_x(0.7);
  const Eigen::AngleAxisd rel(a.matrix().transpose() * b.matrix());
  CHECK(rel.angle() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(geodesic_distance(a, b) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("geodesic_distance is a metric on random rotations") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 1000; ++t) {
    const Rotation a = random_rotation(rng), b = random_rotation(rng),
                   c = random_rotation(rng);
    const double ab = geodesic_distance(a, b), ba = geodesic_distance(b, a);
    CHECK(std::abs(ab - ba) <= 1e-9);
    CHECK(ab >= 0.0);
    CHECK(ab <= kPi);
    CHECK(geodesic_distance(a, c) <= ab + geodesic_distance(b, c) + 1e-7);
  }
}

TEST_CASE("rotation validation and quaternion helpers") {
  Mat3 skew = Mat3::Identity();
  skew(0, 1) = 0.1;
  CHECK_THROWS_AS(Rotation::from_matrix(skew), Error);
  Mat3 reflect = Mat3::Identity();
  reflect(2, 2) = -1;
  CHECK_THROWS_AS(Rotation::from_matrix(reflect), Error);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Rotation r = random_rotation(rng);
    const Rotation back = Rotation::from_quaternion(r.to_quaternion());
    CHECK(geodesic_distance(r, back) < 1e-7);
  }
}

TEST_CASE("obb_intersects examples") {
  const Obb unit = Obb::make(Vec3::Zero(), Vec3::Constant(0.5));
  CHECK(obb_intersects(unit, unit));
  CHECK_FALSE(obb_intersects(unit, Obb::make(Vec3(3, 0, 0), Vec3::Constant(0.5))));
  // Touching faces count as intersecting.
  CHECK(obb_intersects(unit, Obb::make(Vec3(1, 0, 0), Vec3::Constant(0.5))));
  CHECK_FALSE(obb_intersects(unit, Obb::make(Vec3(1 + 1e-6, 0, 0), Vec3::Constant(0.5))));

  const Obb turned =
      Obb::make(Vec3(1.2, 1.2, 0), Vec3::Constant(0.5), Rotation::about_z(kPi / 4));
  const bool oracle = sampling_oracle_intersects(unit, turned) ||
                      sampling_oracle_intersects(turned, unit);
  CHECK(oracle == false);
  CHECK(obb_intersects(unit, turned) == oracle);
}

TEST_CASE("obb_intersects agrees with the point-sampling oracle") {
  std::mt19937_64 rng(2024);
  int agree = 0, disagreements_deep = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const Obb a = Obb::make(Vec3::Zero(),
                            Vec3(uniform(rng, 0.1, 0.6), uniform(rng, 0.1, 0.6),
                                 uniform(rng, 0.1, 0.6)),
                            random_rotation(rng));
    const Obb b = Obb::make(Vec3(uniform(rng, -1.2, 1.2), uniform(rng, -1.2, 1.2),
                                 uniform(rng, -1.2, 1.2)),
                            Vec3(uniform(rng, 0.1, 0.6), uniform(rng, 0.1, 0.6),
                                 uniform(rng, 0.1, 0.6)),
                            random_rotation(rng));
    const bool sat = obb_intersects(a, b);
    CHECK(sat == obb_intersects(b, a));
    const bool oracle = sampling_oracle_intersects(a, b) || sampling_oracle_intersects(b, a);
    if (sat == oracle) {
      ++agree;
    } else if (min_axis_overlap(a, b) >= 1e-3 * 20) {
      ++disagreements_deep;
    }
  }
  CHECK(agree >= 990);
  CHECK(disagreements_deep == 0);
}

TEST_CASE("obb_contains examples") {
  const Obb outer = Obb::make(Vec3::Zero(), Vec3::Constant(1.0));
  const Obb inner = Obb::make(Vec3::Zero(), Vec3::Constant(0.4));
  CHECK(obb_contains(outer, inner, 0.1));
  CHECK_FALSE(obb_contains(outer, Obb::make(Vec3(0.8, 0, 0), Vec3::Constant(0.4)), 0.1));
  CHECK_THROWS_AS(obb_contains(outer, inner, 1.0), Error);
  CHECK_THROWS_AS(obb_contains(outer, inner, -0.1), Error);

  // Tilted inner box against a hand-written corner transform.
  const double tilt = kPi / 6;
  for (double offset : {0.0, 0.2, 0.35, 0.5}) {
    const Obb tilted = Obb::make(Vec3(offset, 0, 0), Vec3(0.4, 0.2, 0.3),
                                 Rotation::about_y(tilt));
    bool oracle = true;
    for (int sx : {-1, 1}) {
      for (int sy : {-1, 1}) {
        for (int sz : {-1, 1}) {
          const double lx = sx * 0.4, ly = sy * 0.2, lz = sz * 0.3;
          const double wx = std::cos(tilt) * lx + std::sin(tilt) * lz + offset;
          const double wy = ly;
          const double wz = -std::sin(tilt) * lx + std::cos(tilt) * lz;
          oracle = oracle && std::abs(wx) <= 0.9 && std::abs(wy) <= 0.9 &&
                   std::abs(wz) <= 0.9;
        }
      }
    }
    CHECK(obb_contains(outer, tilted, 0.1) == oracle);
  }
}

TEST_CASE("obb_contains is reflexive at zero margin") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 200; ++t) {
    const Obb o = Obb::make(Vec3(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)),
                            Vec3(uniform(rng, 0.01, 2), uniform(rng, 0.01, 2), uniform(rng, 0.01, 2)),
                            random_rotation(rng));
    CHECK(obb_contains(o, o, 0.0));
  }
}

TEST_CASE("project_obb visibility fraction") {
  const CameraState cam = gsi::test::camera_looking(Vec3(0, -3, 0), Vec3(0, 0, 0));
  const Obb centered = Obb::make(Vec3::Zero(), Vec3::Constant(0.3));
  const auto full = project_obb(centered, cam);
  CHECK(full.visible_fraction == doctest::Approx(1.0));
  CHECK(full.bbox.center().x() == doctest::Approx(256.0));

  const Obb behind = Obb::make(Vec3(0, -6, 0), Vec3::Constant(0.3));
  const auto none = project_obb(behind, cam);
  CHECK(none.visible_fraction == 0.0);
  CHECK(none.bbox.empty());

  // A face-on box straddling the right image edge: the bbox clip ratio must
  // match the rendered-mask ratio (clipped pixels vs pixels in a wider frame).
  Scene scene;
  scene.floor = Rect2{-5, -5, 5, 5};
  scene.camera = cam;
  // Half-width of the image at depth 3 is 3 * 256 / 443.4 = 1.732 m.
  scene.objects.push_back(gsi::test::make_object("b", "box", Vec3(1.732, 0.0, 0.0),
                                                 Vec3(0.6, 0.01, 0.6), {200, 40, 40},
                                                 std::nullopt));
  const auto half_off = project_obb(scene.objects[0].obb(), scene.camera);
  CHECK(half_off.visible_fraction > 0.4);
  CHECK(half_off.visible_fraction < 0.6);

  const FrameBuffers clipped = render(scene);
  Scene wide = scene;
  wide.camera.intrinsics.width = 1024;  // same cx: extends the image to the right
  const FrameBuffers unclipped = render(wide);
  const double mask_ratio =
      static_cast<double>(instance_pixel_counts(clipped, 1)[1]) /
      static_cast<double>(instance_pixel_counts(unclipped, 1)[1]);
  CHECK(half_off.visible_fraction == doctest::Approx(mask_ratio).epsilon(0.02));
}

TEST_CASE("ray_obb_entry") {
  const Obb box = Obb::make(Vec3(0, 0, 5), Vec3::Constant(1.0));
  auto t = ray_obb_entry(Vec3::Zero(), Vec3::UnitZ(), box);
  REQUIRE(t.has_value());
  CHECK(*t == doctest::Approx(4.0));
  CHECK_FALSE(ray_obb_entry(Vec3::Zero(), -Vec3::UnitZ(), box).has_value());
  CHECK(*ray_obb_entry(Vec3(0, 0, 5), Vec3::UnitX(), box) == 0.0);
}
