#include "gsi/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gsi/errors.hpp"

namespace gsi {

namespace {

constexpr double kRotationTolerance = 1e-6;
constexpr double kTouchTolerance = 1e-9;
constexpr double kDegenerateAxis = 1e-9;

}  // namespace

Rotation Rotation::from_matrix(const Mat3& m) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::InvalidRotation, "non-finite entries");
  }
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > kRotationTolerance) {
    throw Error(ErrorCode::InvalidRotation, "matrix is not orthonormal");
  }
  if (std::abs(m.determinant() - 1.0) > kRotationTolerance) {
    throw Error(ErrorCode::InvalidRotation, "determinant is not +1");
  }
  return Rotation(m);
}

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& q) {
  if (q.norm() < 1e-12) {
    throw Error(ErrorCode::InvalidRotation, "zero quaternion");
  }
  return Rotation(q.normalized().toRotationMatrix());
}

Rotation Rotation::about_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return Rotation(m);
}

Rotation Rotation::about_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return Rotation(m);
}

Rotation Rotation::about_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return Rotation(m);
}

Eigen::Quaterniond Rotation::to_quaternion() const {
  return Eigen::Quaterniond(m_).normalized();
}

Rotation Rotation::transpose() const { return Rotation(m_.transpose()); }

Rotation Rotation::operator*(const Rotation& rhs) const {
  return Rotation(m_ * rhs.m_);
}

Obb Obb::make(const Vec3& center, const Vec3& half_extents,
              const Rotation& rotation) {
  if (!center.allFinite() || !half_extents.allFinite() ||
      (half_extents.array() <= 0.0).any()) {
    throw Error(ErrorCode::InvalidObb, "half extents must be positive and finite");
  }
  return Obb{center, half_extents, rotation};
}

std::array<Vec3, 8> Obb::corners() const {
  std::array<Vec3, 8> out;
  const Mat3& r = rotation.matrix();
  for (int i = 0; i < 8; ++i) {
    Vec3 local((i & 1) ? half_extents.x() : -half_extents.x(),
               (i & 2) ? half_extents.y() : -half_extents.y(),
               (i & 4) ? half_extents.z() : -half_extents.z());
    out[i] = center + r * local;
  }
  return out;
}

double Obb::extent_along(const Vec3& dir) const {
  const Mat3& r = rotation.matrix();
  double sum = 0.0;
  for (int a = 0; a < 3; ++a) {
    sum += std::abs(dir.dot(r.col(a))) * half_extents[a];
  }
  return sum;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::InvalidIntrinsics, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidIntrinsics, "image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::InvalidIntrinsics, "principal point outside image");
  }
}

Intrinsics Intrinsics::resized(int new_width, int new_height) const {
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  return Intrinsics{fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
}

Vec3 CameraState::position() const {
  return -(rotation.matrix().transpose() * translation);
}
Vec3 CameraState::forward() const { return rotation.matrix().row(2).transpose(); }
Vec3 CameraState::right() const { return rotation.matrix().row(0).transpose(); }
Vec3 CameraState::down() const { return rotation.matrix().row(1).transpose(); }

namespace {

CameraState camera_from_forward(const Vec3& eye, Vec3 forward,
                                const Intrinsics& k) {
  forward.normalize();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) {
    // Looking straight up or down: pick world +x as right.
    right = Vec3::UnitX();
  }
  right.normalize();
  const Vec3 down = forward.cross(right).normalized();
  Mat3 m;
  m.row(0) = right.transpose();
  m.row(1) = down.transpose();
  m.row(2) = forward.transpose();
  CameraState cam;
  cam.rotation = Rotation::from_matrix(m);
  cam.translation = -(m * eye);
  cam.intrinsics = k;
  return cam;
}

}  // namespace

CameraState CameraState::look_at(const Vec3& eye, const Vec3& target,
                                 const Intrinsics& k) {
  return camera_from_forward(eye, target - eye, k);
}

CameraState CameraState::from_yaw_pitch(const Vec3& eye, double yaw,
                                        double pitch, const Intrinsics& k) {
  const Vec3 forward(std::cos(pitch) * std::cos(yaw),
                     std::cos(pitch) * std::sin(yaw), std::sin(pitch));
  return camera_from_forward(eye, forward, k);
}

Projection project_point(const Vec3& p, const Rotation& cam_rotation,
                         const Vec3& cam_translation, const Intrinsics& k) {
  const Vec3 c = cam_rotation * p + cam_translation;
  if (!(c.z() > kMinDepth)) {
    throw Error(ErrorCode::BehindCamera, "point is not in front of the camera");
  }
  return {Vec2(k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy), c.z()};
}

Projection project_point(const Vec3& p, const CameraState& cam) {
  return project_point(p, cam.rotation, cam.translation, cam.intrinsics);
}

Vec3 back_project(const Vec2& pixel, double depth, const CameraState& cam) {
  const Intrinsics& k = cam.intrinsics;
  const Vec3 c((pixel.x() - k.cx) / k.fx * depth,
               (pixel.y() - k.cy) / k.fy * depth, depth);
  return cam.rotation.matrix().transpose() * (c - cam.translation);
}

double geodesic_distance(const Rotation& a, const Rotation& b) {
  const double tr = (a.matrix().transpose() * b.matrix()).trace();
  return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

bool obb_intersects(const Obb& a, const Obb& b) {
  const Mat3& ra = a.rotation.matrix();
  const Mat3& rb = b.rotation.matrix();
  const Vec3 d = b.center - a.center;

  auto separated = [&](const Vec3& axis) {
    const double n = axis.norm();
    if (n < kDegenerateAxis) return false;
    const Vec3 u = axis / n;
    const double dist = std::abs(d.dot(u));
    return dist - (a.extent_along(u) + b.extent_along(u)) > kTouchTolerance;
  };

  for (int i = 0; i < 3; ++i) {
    if (separated(ra.col(i)) || separated(rb.col(i))) return false;
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (separated(ra.col(i).cross(rb.col(j)))) return false;
    }
  }
  return true;
}

bool obb_contains_point(const Obb& box, const Vec3& p) {
  const Vec3 local = box.rotation.matrix().transpose() * (p - box.center);
  return (local.cwiseAbs().array() <= box.half_extents.array() + 1e-12).all();
}

bool obb_contains(const Obb& outer, const Obb& inner, double margin) {
  if (!(margin >= 0.0) || margin >= outer.half_extents.minCoeff()) {
    throw Error(ErrorCode::InvalidMargin,
                "margin must be in [0, min(outer half extents))");
  }
  const Mat3 to_local = outer.rotation.matrix().transpose();
  const Vec3 limit = outer.half_extents.array() - margin;
  for (const Vec3& c : inner.corners()) {
    const Vec3 local = to_local * (c - outer.center);
    if ((local.cwiseAbs().array() > limit.array() + 1e-12).any()) return false;
  }
  return true;
}

ObbProjection project_obb(const Obb& o, const CameraState& cam) {
  const Intrinsics& k = cam.intrinsics;
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  bool any = false;
  for (const Vec3& c : o.corners()) {
    const Vec3 pc = cam.to_camera(c);
    if (!(pc.z() > kMinDepth)) continue;
    any = true;
    const double u = k.fx * pc.x() / pc.z() + k.cx;
    const double v = k.fy * pc.y() / pc.z() + k.cy;
    x0 = std::min(x0, u);
    x1 = std::max(x1, u);
    y0 = std::min(y0, v);
    y1 = std::max(y1, v);
  }
  ObbProjection out;
  if (!any) return out;
  const PixelRect full{x0, y0, x1, y1};
  PixelRect clipped{std::max(x0, 0.0), std::max(y0, 0.0),
                    std::min(x1, static_cast<double>(k.width)),
                    std::min(y1, static_cast<double>(k.height))};
  if (clipped.empty()) clipped = PixelRect{};
  out.bbox = clipped;
  const double full_area = full.area();
  out.visible_fraction = full_area > 0.0 ? clipped.area() / full_area : 0.0;
  return out;
}

std::optional<double> ray_obb_entry(const Vec3& origin, const Vec3& dir,
                                    const Obb& box) {
  const Mat3 to_local = box.rotation.matrix().transpose();
  const Vec3 o = to_local * (origin - box.center);
  const Vec3 d = to_local * dir;
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double h = box.half_extents[a];
    if (std::abs(d[a]) < 1e-15) {
      if (std::abs(o[a]) > h) return std::nullopt;
      continue;
    }
    double t0 = (-h - o[a]) / d[a];
    double t1 = (h - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_far < 0.0) return std::nullopt;
  return std::max(t_near, 0.0);
}

}  // namespace gsi
