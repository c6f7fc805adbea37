#pragma once

#include "json.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gsi/geometry.hpp"
#include "gsi/image.hpp"

namespace gsi {

/// Reserved support id for the floor rectangle at z = 0.
inline constexpr std::string_view kFloorId = "floor";

/// Receptacle walls and floor are this fraction of the receptacle's extent.
inline constexpr double kReceptacleWallFraction = 0.05;

inline constexpr double kSupportHeightTolerance = 1e-4;

struct Rect2 {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  bool operator==(const Rect2&) const = default;
};

/// Horizontal support region: an oriented rectangle at a fixed height.
struct SupportArea {
  std::string id;
  Vec2 center = Vec2::Zero();
  Vec2 half_size = Vec2::Zero();
  double yaw = 0.0;
  double height = 0.0;

  bool contains(const Vec2& p, double tolerance = 1e-6) const;
  /// Axis-aligned bounds of the region (exact when yaw = 0).
  Rect2 bounds() const;
};

struct Surface {
  std::string id;
  Rect2 rect;
  double height = 0.0;
  /// Object that physically carries this surface (a table, a shelf).
  std::optional<std::string> owner;

  bool operator==(const Surface&) const = default;
};

struct ObjectState {
  std::string id;
  std::string category;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // full extents
  Rotation rotation;
  Rgb color{0, 0, 0};
  std::optional<std::string> support_id;
  bool manipulable = false;
  bool is_receptacle = false;

  Obb obb() const { return Obb{center, size / 2.0, rotation}; }
  /// Lowest corner height.
  double base_height() const;
  /// Half of the vertical extent.
  double half_height() const { return obb().extent_along(Vec3::UnitZ()); }

  bool operator==(const ObjectState& o) const;
};

struct Scene {
  std::vector<ObjectState> objects;
  CameraState camera;
  Rect2 floor;
  std::vector<Surface> surfaces;

  const ObjectState* find(std::string_view id) const;
  ObjectState* find(std::string_view id);
  std::optional<std::size_t> index_of(std::string_view id) const;
  const Surface* find_surface(std::string_view id) const;

  bool operator==(const Scene& o) const;
};

enum class ValidationMode {
  Strict,
  /// Collision, support-height, and footprint violations become warnings.
  Relaxed,
  /// Structural parsing only. Used for intermediate (unsettled) scenes.
  Skip,
};

struct ValidationReport {
  std::vector<std::string> warnings;
};

/// Throws ValidationError with field() naming the violated invariant: "id",
/// "size", "color", "support_id", "support_height", "support_footprint",
/// "surfaces", "camera", "collision".
ValidationReport validate_scene(const Scene& scene,
                                ValidationMode mode = ValidationMode::Strict);

/// Pairs that may legitimately touch: an object and the receptacle or
/// surface owner that carries it.
bool collision_exempt(const Scene& scene, const ObjectState& a,
                      const ObjectState& b);

/// Throws NoSupport when the object has no support_id; UnknownObject when the
/// object does not exist.
SupportArea support_surface_of(const Scene& scene, std::string_view object_id);

/// Resolves a support id (floor, surface, or receptacle) to its area.
/// Throws DanglingReference if it does not resolve.
SupportArea support_area(const Scene& scene, std::string_view support_id);

/// x,y projection of the object's bottom face corners.
std::array<Vec2, 4> object_footprint(const ObjectState& o);

/// Inner cavity of a receptacle: walls and floor removed.
Obb receptacle_interior(const ObjectState& receptacle);

/// Yaw of a rotation's x axis about world +z.
double yaw_of(const Rotation& r);

// Serialization. Reals are written as decimal strings with 9 significant
// digits; loading accepts strings or JSON numbers.
std::string format_real(double v);
nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j,
                      ValidationMode mode = ValidationMode::Strict);
nlohmann::json rotation_to_json(const Rotation& r);
Rotation rotation_from_json(const nlohmann::json& j);
nlohmann::json vec_to_json(const Vec3& v);
Vec3 vec3_from_json(const nlohmann::json& j);
double real_from_json(const nlohmann::json& j);

/// Throws ParseError on malformed documents and ValidationError on invariant
/// violations.
Scene load_scene(std::string_view text, ValidationMode mode = ValidationMode::Strict);
std::string save_scene(const Scene& scene);
Scene load_scene_file(const std::string& path,
                      ValidationMode mode = ValidationMode::Strict);

/// Round-trips through the serialized form so that every real carries
/// exactly 9 significant digits.
Scene canonicalize(const Scene& scene);

}  // namespace gsi
