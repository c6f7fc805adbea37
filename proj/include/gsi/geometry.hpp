#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <optional>

namespace gsi {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Conventions: world frame is +z up. Camera frame is +x right, +y down,
// +z forward. A camera maps world points as p_cam = R_c * p + t_c.

/// Proper rotation (orthonormal, det +1 within 1e-6).
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Throws InvalidRotation when `m` is not in SO(3) within 1e-6.
  static Rotation from_matrix(const Mat3& m);
  static Rotation from_quaternion(const Eigen::Quaterniond& q);
  static Rotation identity() { return {}; }
  static Rotation about_x(double angle);
  static Rotation about_y(double angle);
  static Rotation about_z(double angle);

  const Mat3& matrix() const { return m_; }
  Eigen::Quaterniond to_quaternion() const;
  Rotation transpose() const;
  Rotation operator*(const Rotation& rhs) const;
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  bool operator==(const Rotation& rhs) const { return m_ == rhs.m_; }

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

/// Oriented bounding box. Half extents are strictly positive.
struct Obb {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();
  Rotation rotation;

  static Obb make(const Vec3& center, const Vec3& half_extents,
                  const Rotation& rotation = Rotation::identity());

  /// Corner i has sign (+/-) on local axis a given by bit a of i.
  std::array<Vec3, 8> corners() const;
  /// Radius of the box projected onto the unit direction `dir`.
  double extent_along(const Vec3& dir) const;
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws InvalidIntrinsics when focal lengths or principal point are out
  /// of range.
  void validate() const;
  /// Same field of view at a different resolution.
  Intrinsics resized(int new_width, int new_height) const;
};

struct CameraState {
  Rotation rotation;  // world -> camera
  Vec3 translation = Vec3::Zero();
  Intrinsics intrinsics;

  Vec3 to_camera(const Vec3& world) const {
    return rotation * world + translation;
  }
  Vec3 position() const;
  Vec3 forward() const;  // camera +z in world coordinates
  Vec3 right() const;    // camera +x in world coordinates
  Vec3 down() const;     // camera +y in world coordinates

  /// Camera at `eye` looking at `target`, no roll relative to world +z.
  static CameraState look_at(const Vec3& eye, const Vec3& target,
                             const Intrinsics& k);
  /// Camera at `eye` with heading `yaw` (radians from world +x, CCW) and
  /// `pitch` (radians, negative looks down).
  static CameraState from_yaw_pitch(const Vec3& eye, double yaw, double pitch,
                                    const Intrinsics& k);
};

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

inline constexpr double kMinDepth = 1e-6;

/// Pinhole projection. Throws BehindCamera when camera-frame z <= 1e-6. The
/// pixel may fall outside the image.
Projection project_point(const Vec3& p, const CameraState& cam);
Projection project_point(const Vec3& p, const Rotation& cam_rotation,
                         const Vec3& cam_translation, const Intrinsics& k);

/// Inverse of project_point for a known camera-frame depth.
Vec3 back_project(const Vec2& pixel, double depth, const CameraState& cam);

/// Arc length between two rotations, in [0, pi].
double geodesic_distance(const Rotation& a, const Rotation& b);

/// Separating-axis test. Touching boxes (gap within 1e-9) intersect.
bool obb_intersects(const Obb& a, const Obb& b);

/// True iff every corner of `inner` is inside `outer` shrunk by `margin`.
/// Throws InvalidMargin when margin < 0 or margin >= min(outer.half_extents).
bool obb_contains(const Obb& outer, const Obb& inner, double margin);

/// True iff `p` lies inside `box` (inclusive, 1e-12 slack).
bool obb_contains_point(const Obb& box, const Vec3& p);

/// Axis-aligned pixel rectangle [x0, x1) x [y0, y1) in continuous
/// coordinates.
struct PixelRect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  bool empty() const { return !(x1 > x0 && y1 > y0); }
  double area() const { return empty() ? 0.0 : (x1 - x0) * (y1 - y0); }
  Vec2 center() const { return {(x0 + x1) / 2.0, (y0 + y1) / 2.0}; }
};

struct ObbProjection {
  PixelRect bbox;                 // clipped to the image
  double visible_fraction = 0.0;  // clipped area / unclipped area
};

ObbProjection project_obb(const Obb& o, const CameraState& cam);

/// Ray/box slab test. Returns the smallest t >= 0 where origin + t*dir enters
/// (or is inside) the box.
std::optional<double> ray_obb_entry(const Vec3& origin, const Vec3& dir,
                                    const Obb& box);

inline constexpr double kPi = 3.14159265358979323846;
inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

}  // namespace gsi
