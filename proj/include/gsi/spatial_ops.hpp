#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "gsi/scene.hpp"

namespace gsi {

/// Camera-relative move, object-relative place, object rotation, receptacle
/// place, perspective change, spatial removal, object scaling.
enum class OpKind { CM, OP, OR, RP, PC, SR, OS };

inline constexpr std::array<OpKind, 7> kAllOpKinds{
    OpKind::CM, OpKind::OP, OpKind::OR, OpKind::RP, OpKind::PC, OpKind::SR, OpKind::OS};

std::string_view to_string(OpKind kind);
std::optional<OpKind> parse_op_kind(std::string_view s);

enum class Direction { Left, Right, Forward, Backward, Up, Down };
enum class Relation { Left, Right, Front, Behind, On, Inside };
enum class PerspectiveMode { OrbitLeft, OrbitRight, ZoomIn, ZoomOut };
enum class RemovalPredicate { Leftmost, Rightmost, Nearest, Farthest };

std::string_view to_string(Direction d);
std::string_view to_string(Relation r);
std::string_view to_string(PerspectiveMode m);
std::string_view to_string(RemovalPredicate p);
std::optional<Direction> parse_direction(std::string_view s);
std::optional<Relation> parse_relation(std::string_view s);
std::optional<PerspectiveMode> parse_perspective_mode(std::string_view s);
std::optional<RemovalPredicate> parse_removal_predicate(std::string_view s);

/// Unit camera-frame axis for a direction token (+x right, +y down, +z
/// forward).
Vec3 camera_axis(Direction d);

struct ObjectDelta {
  Vec3 new_center = Vec3::Zero();
  Rotation new_rotation;
  double scale = 1.0;
  /// Set when the object changes support (placements).
  std::optional<std::string> new_support_id;
};

struct CameraDelta {
  Rotation new_rotation;
  Vec3 new_translation = Vec3::Zero();
};

struct SceneTransform {
  OpKind kind = OpKind::CM;
  std::string target_id;  // empty for PC
  std::optional<std::string> reference_id;
  std::map<std::string, ObjectDelta> object_deltas;
  std::optional<CameraDelta> camera_delta;
  std::set<std::string> removals;
};

/// Throws DanglingReference when the populated fields do not match the kind
/// (e.g. SR with object deltas, scale != 1 outside OS).
void check_transform_shape(const SceneTransform& t);

// Constructors. All are pure; the scene is never modified.
SceneTransform make_camera_relative_move(const Scene& scene, std::string_view target_id,
                                         Direction direction, double distance);
SceneTransform make_object_relative_place(const Scene& scene, std::string_view target_id,
                                          std::string_view reference_id, Relation relation,
                                          double gap);
SceneTransform make_rotation(const Scene& scene, std::string_view target_id, double angle);
SceneTransform make_receptacle_place(const Scene& scene, std::string_view target_id,
                                     std::string_view receptacle_id);
SceneTransform make_perspective_change(const Scene& scene, PerspectiveMode mode,
                                       double magnitude);

struct RemovalCriterion {
  std::optional<std::string> id;
  RemovalPredicate predicate = RemovalPredicate::Leftmost;
  std::string category;
};

SceneTransform make_removal(const Scene& scene, const RemovalCriterion& criterion,
                            double min_visible_fraction = 0.6);
SceneTransform make_scale(const Scene& scene, std::string_view target_id, double factor);

/// Horizontal unit axis (world frame) for a camera-relative relation.
Vec3 relation_axis(const CameraState& camera, Relation relation);

/// Orbit pivot: centroid of manipulable objects (all objects if none).
Vec3 orbit_pivot(const Scene& scene);

/// Deltas, removals, and camera change applied verbatim. No settling and no
/// validation. Throws DanglingReference.
Scene ideal_destination(const Scene& scene, const SceneTransform& t);

/// Snaps each supported object's base onto its support's top.
Scene settle(const Scene& scene);

/// ideal_destination + settle + strict validation. Throws DanglingReference
/// and PostTransformCollision.
Scene apply_transform(const Scene& scene, const SceneTransform& t);

// Instructions and captions.

struct Descriptor {
  std::string category;
  std::optional<std::string> disambiguator;

  std::string text() const {
    return disambiguator ? *disambiguator + " " + category : category;
  }
  bool operator==(const Descriptor&) const = default;
};

struct Action {
  OpKind kind = OpKind::CM;
  std::optional<Direction> direction;
  double distance = 0.0;  // meters (CM)
  double angle = 0.0;     // radians (OR, orbit)
  double scale_factor = 1.0;
  std::optional<Relation> relation;
  double gap = 0.0;  // meters (OP)
  std::optional<PerspectiveMode> mode;
  double magnitude = 0.0;  // radians for orbit, meters for zoom
};

struct SpatialInstruction {
  Descriptor target;
  std::optional<Descriptor> reference;
  Action action;
  SceneTransform transform;
  std::string caption;
};

/// Nearest named color.
std::string color_word(Rgb color);

/// Referring expression for an object: its category, or "{color} {category}"
/// when the category repeats. nullopt when even the color word repeats.
std::optional<Descriptor> describe(const Scene& scene, std::string_view id);

/// Deterministic template fill from the referring expression and action.
std::string caption(const SpatialInstruction& instruction);

nlohmann::json transform_to_json(const SceneTransform& t);
SceneTransform transform_from_json(const nlohmann::json& j);
nlohmann::json instruction_to_json(const SpatialInstruction& s);
SpatialInstruction instruction_from_json(const nlohmann::json& j);

/// Round-trips through JSON so every real carries 9 significant digits.
SceneTransform canonicalize(const SceneTransform& t);

}  // namespace gsi
