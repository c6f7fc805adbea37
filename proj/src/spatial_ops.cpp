#include "gsi/spatial_ops.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "gsi/errors.hpp"
#include "gsi/visibility.hpp"

namespace gsi {

namespace {

template <typename E, std::size_t N>
std::optional<E> parse_token(std::string_view s,
                             const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [e, name] : table) {
    if (name == s) return e;
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view token_of(E e, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [v, name] : table) {
    if (v == e) return name;
  }
  return "?";
}

constexpr std::array<std::pair<OpKind, std::string_view>, 7> kKindNames{{
    {OpKind::CM, "CM"}, {OpKind::OP, "OP"}, {OpKind::OR, "OR"}, {OpKind::RP, "RP"},
    {OpKind::PC, "PC"}, {OpKind::SR, "SR"}, {OpKind::OS, "OS"},
}};
constexpr std::array<std::pair<Direction, std::string_view>, 6> kDirectionNames{{
    {Direction::Left, "left"}, {Direction::Right, "right"},
    {Direction::Forward, "forward"}, {Direction::Backward, "backward"},
    {Direction::Up, "up"}, {Direction::Down, "down"},
}};
constexpr std::array<std::pair<Relation, std::string_view>, 6> kRelationNames{{
    {Relation::Left, "left"}, {Relation::Right, "right"}, {Relation::Front, "front"},
    {Relation::Behind, "behind"}, {Relation::On, "on"}, {Relation::Inside, "inside"},
}};
constexpr std::array<std::pair<PerspectiveMode, std::string_view>, 4> kModeNames{{
    {PerspectiveMode::OrbitLeft, "orbit_left"}, {PerspectiveMode::OrbitRight, "orbit_right"},
    {PerspectiveMode::ZoomIn, "zoom_in"}, {PerspectiveMode::ZoomOut, "zoom_out"},
}};
constexpr std::array<std::pair<RemovalPredicate, std::string_view>, 4> kPredicateNames{{
    {RemovalPredicate::Leftmost, "leftmost"}, {RemovalPredicate::Rightmost, "rightmost"},
    {RemovalPredicate::Nearest, "nearest"}, {RemovalPredicate::Farthest, "farthest"},
}};

const ObjectState& require_target(const Scene& scene, std::string_view id) {
  const ObjectState* o = scene.find(id);
  if (!o) throw Error(ErrorCode::UnknownTarget, "no object '" + std::string(id) + "'");
  return *o;
}

const ObjectState& require_manipulable(const Scene& scene, std::string_view id) {
  const ObjectState& o = require_target(scene, id);
  if (!o.manipulable) {
    throw Error(ErrorCode::NonManipulable, "object '" + o.id + "' is not manipulable");
  }
  return o;
}

SceneTransform single_delta(OpKind kind, const ObjectState& o) {
  SceneTransform t;
  t.kind = kind;
  t.target_id = o.id;
  t.object_deltas[o.id] = ObjectDelta{o.center, o.rotation, 1.0, std::nullopt};
  return t;
}

bool collides_with_others(const Scene& scene, const Obb& box,
                          std::initializer_list<std::string_view> ignore) {
  for (const ObjectState& other : scene.objects) {
    if (std::find(ignore.begin(), ignore.end(), other.id) != ignore.end()) continue;
    if (obb_intersects(box, other.obb())) return true;
  }
  return false;
}

[[noreturn]] void bad_shape(const std::string& msg) {
  throw Error(ErrorCode::ValidationError, msg, "transform");
}

}  // namespace

std::string_view to_string(OpKind kind) { return token_of(kind, kKindNames); }
std::string_view to_string(Direction d) { return token_of(d, kDirectionNames); }
std::string_view to_string(Relation r) { return token_of(r, kRelationNames); }
std::string_view to_string(PerspectiveMode m) { return token_of(m, kModeNames); }
std::string_view to_string(RemovalPredicate p) { return token_of(p, kPredicateNames); }

std::optional<OpKind> parse_op_kind(std::string_view s) { return parse_token(s, kKindNames); }
std::optional<Direction> parse_direction(std::string_view s) {
  return parse_token(s, kDirectionNames);
}
std::optional<Relation> parse_relation(std::string_view s) {
  return parse_token(s, kRelationNames);
}
std::optional<PerspectiveMode> parse_perspective_mode(std::string_view s) {
  return parse_token(s, kModeNames);
}
std::optional<RemovalPredicate> parse_removal_predicate(std::string_view s) {
  return parse_token(s, kPredicateNames);
}

Vec3 camera_axis(Direction d) {
  switch (d) {
    case Direction::Left: return {-1.0, 0.0, 0.0};
    case Direction::Right: return {1.0, 0.0, 0.0};
    case Direction::Up: return {0.0, -1.0, 0.0};
    case Direction::Down: return {0.0, 1.0, 0.0};
    case Direction::Forward: return {0.0, 0.0, 1.0};
    case Direction::Backward: return {0.0, 0.0, -1.0};
  }
  return Vec3::Zero();
}

void check_transform_shape(const SceneTransform& t) {
  for (const auto& [id, d] : t.object_deltas) {
    if (!(d.scale > 0.0) || !std::isfinite(d.scale)) bad_shape("scale must be positive");
    if (t.kind != OpKind::OS && d.scale != 1.0) bad_shape("scale != 1 outside OS");
  }
  const bool wants_reference = t.kind == OpKind::OP || t.kind == OpKind::RP;
  if (wants_reference != t.reference_id.has_value()) {
    bad_shape("reference_id presence does not match kind");
  }
  switch (t.kind) {
    case OpKind::PC:
      if (!t.camera_delta || !t.object_deltas.empty() || !t.removals.empty()) {
        bad_shape("PC populates camera_delta only");
      }
      return;
    case OpKind::SR:
      if (t.camera_delta || !t.object_deltas.empty() || t.removals.size() != 1 ||
          *t.removals.begin() != t.target_id) {
        bad_shape("SR populates removals only");
      }
      return;
    default:
      if (t.camera_delta || !t.removals.empty() || t.object_deltas.size() != 1 ||
          !t.object_deltas.count(t.target_id)) {
        bad_shape("object transforms populate exactly one delta for the target");
      }
  }
}

SceneTransform make_camera_relative_move(const Scene& scene, std::string_view target_id,
                                         Direction direction, double distance) {
  const ObjectState& o = require_manipulable(scene, target_id);
  if (!std::isfinite(distance) || distance < 0.0) {
    throw Error(ErrorCode::MagnitudeOutOfRange, "distance must be >= 0");
  }
  SceneTransform t = single_delta(OpKind::CM, o);
  const Vec3 d_world = scene.camera.rotation.transpose() * camera_axis(direction);
  t.object_deltas[o.id].new_center = o.center + distance * d_world;
  return t;
}

Vec3 relation_axis(const CameraState& camera, Relation relation) {
  Vec3 axis;
  switch (relation) {
    case Relation::Left: axis = -camera.right(); break;
    case Relation::Right: axis = camera.right(); break;
    case Relation::Front: axis = -camera.forward(); break;
    case Relation::Behind: axis = camera.forward(); break;
    default:
      throw Error(ErrorCode::UnsupportedKind,
                  "relation '" + std::string(to_string(relation)) + "' has no axis");
  }
  axis.z() = 0.0;
  const double n = axis.norm();
  if (n < 1e-9) {
    throw Error(ErrorCode::DegenerateCamera, "camera axis is vertical");
  }
  return axis / n;
}

SceneTransform make_object_relative_place(const Scene& scene, std::string_view target_id,
                                          std::string_view reference_id, Relation relation,
                                          double gap) {
  const ObjectState& o = require_manipulable(scene, target_id);
  const ObjectState* ref = scene.find(reference_id);
  if (!ref) {
    throw Error(ErrorCode::UnknownReference, "no object '" + std::string(reference_id) + "'");
  }
  if (ref->id == o.id) throw Error(ErrorCode::SameObject, "target equals reference");
  if (!std::isfinite(gap) || gap < 0.0) {
    throw Error(ErrorCode::MagnitudeOutOfRange, "gap must be >= 0");
  }
  if (!ref->support_id) {
    throw Error(ErrorCode::NoSupport, "reference '" + ref->id + "' has no support");
  }
  const Vec3 axis = relation_axis(scene.camera, relation);
  const double offset = o.obb().extent_along(axis) + ref->obb().extent_along(axis) + gap;
  const SupportArea area = support_area(scene, *ref->support_id);

  SceneTransform t = single_delta(OpKind::OP, o);
  t.reference_id = ref->id;
  ObjectDelta& d = t.object_deltas[o.id];
  d.new_center.head<2>() = ref->center.head<2>() + offset * axis.head<2>();
  d.new_center.z() = area.height + o.half_height();
  d.new_support_id = *ref->support_id;
  return t;
}

SceneTransform make_rotation(const Scene& scene, std::string_view target_id, double angle) {
  const ObjectState& o = require_manipulable(scene, target_id);
  if (!std::isfinite(angle) || std::abs(angle) > kPi) {
    throw Error(ErrorCode::AngleOutOfRange, "|angle| must be <= pi");
  }
  SceneTransform t = single_delta(OpKind::OR, o);
  t.object_deltas[o.id].new_rotation = Rotation::about_z(angle) * o.rotation;
  return t;
}

SceneTransform make_receptacle_place(const Scene& scene, std::string_view target_id,
                                     std::string_view receptacle_id) {
  const ObjectState& o = require_manipulable(scene, target_id);
  const ObjectState* rec = scene.find(receptacle_id);
  if (!rec) {
    throw Error(ErrorCode::UnknownReference, "no object '" + std::string(receptacle_id) + "'");
  }
  if (rec->id == o.id) throw Error(ErrorCode::SameObject, "target equals receptacle");
  if (!rec->is_receptacle) {
    throw Error(ErrorCode::NotAReceptacle, "'" + rec->id + "' is not a receptacle");
  }
  const Obb interior = receptacle_interior(*rec);
  const double floor_z = interior.center.z() - interior.half_extents.z();
  Obb box = o.obb();
  const auto at = [&](const Vec2& xy) {
    box.center = Vec3(xy.x(), xy.y(), floor_z + o.half_height());
    return box;
  };

  // Candidate offsets on a 1 cm grid in the interior frame, nearest to the
  // interior centroid first.
  const Mat3& r = interior.rotation.matrix();
  const Vec2 ex = r.col(0).head<2>();
  const Vec2 ey = r.col(1).head<2>();
  constexpr double kStep = 0.01;
  const int nx = static_cast<int>(interior.half_extents.x() / kStep);
  const int ny = static_cast<int>(interior.half_extents.y() / kStep);
  std::vector<std::pair<int, int>> offsets;
  offsets.reserve(static_cast<std::size_t>((2 * nx + 1) * (2 * ny + 1)));
  for (int j = -ny; j <= ny; ++j) {
    for (int i = -nx; i <= nx; ++i) offsets.emplace_back(i, j);
  }
  std::stable_sort(offsets.begin(), offsets.end(), [](const auto& a, const auto& b) {
    return a.first * a.first + a.second * a.second < b.first * b.first + b.second * b.second;
  });

  bool fits_somewhere = false;
  for (const auto& [i, j] : offsets) {
    const Vec2 xy = interior.center.head<2>() + kStep * (i * ex + j * ey);
    const Obb candidate = at(xy);
    if (!obb_contains(interior, candidate, 0.0)) continue;
    fits_somewhere = true;
    if (collides_with_others(scene, candidate, {o.id, rec->id})) continue;
    SceneTransform t = single_delta(OpKind::RP, o);
    t.reference_id = rec->id;
    ObjectDelta& d = t.object_deltas[o.id];
    d.new_center = candidate.center;
    d.new_support_id = rec->id;
    return t;
  }
  throw Error(ErrorCode::DoesNotFit,
              fits_somewhere ? "no free spot in '" + rec->id + "'"
                             : "'" + o.id + "' does not fit in '" + rec->id + "'");
}

Vec3 orbit_pivot(const Scene& scene) {
  Vec3 sum = Vec3::Zero();
  int n = 0;
  for (const ObjectState& o : scene.objects) {
    if (o.manipulable) {
      sum += o.center;
      ++n;
    }
  }
  if (n == 0) {
    for (const ObjectState& o : scene.objects) {
      sum += o.center;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::UnknownTarget, "scene has no objects to orbit");
  return sum / n;
}

SceneTransform make_perspective_change(const Scene& scene, PerspectiveMode mode,
                                       double magnitude) {
  if (!std::isfinite(magnitude) || magnitude < 0.0) {
    throw Error(ErrorCode::MagnitudeOutOfRange, "magnitude must be >= 0");
  }
  const CameraState& cam = scene.camera;
  SceneTransform t;
  t.kind = OpKind::PC;
  CameraDelta delta{cam.rotation, cam.translation};
  const Vec3 pivot = orbit_pivot(scene);
  switch (mode) {
    case PerspectiveMode::OrbitLeft:
    case PerspectiveMode::OrbitRight: {
      if (magnitude > kPi / 2.0) {
        throw Error(ErrorCode::MagnitudeOutOfRange, "orbit angle must be <= pi/2");
      }
      // Moving toward the camera's left is a clockwise turn seen from above.
      const double angle = mode == PerspectiveMode::OrbitLeft ? -magnitude : magnitude;
      const Rotation turn = Rotation::about_z(angle);
      Vec3 rel = cam.position() - pivot;
      const Vec3 pos = pivot + turn * rel;
      delta.new_rotation = cam.rotation * turn.transpose();
      delta.new_translation = -(delta.new_rotation * pos);
      break;
    }
    case PerspectiveMode::ZoomIn:
    case PerspectiveMode::ZoomOut: {
      const double depth = cam.to_camera(pivot).z();
      if (mode == PerspectiveMode::ZoomIn && magnitude >= depth) {
        throw Error(ErrorCode::MagnitudeOutOfRange, "zoom passes the look-at point");
      }
      // Moving the center by s along the optical axis shifts t_c.z by -s.
      const double s = mode == PerspectiveMode::ZoomIn ? magnitude : -magnitude;
      delta.new_translation.z() -= s;
      break;
    }
  }
  t.camera_delta = delta;
  return t;
}

SceneTransform make_removal(const Scene& scene, const RemovalCriterion& criterion,
                            double min_visible_fraction) {
  SceneTransform t;
  t.kind = OpKind::SR;
  if (criterion.id) {
    require_target(scene, *criterion.id);
    t.target_id = *criterion.id;
    t.removals.insert(*criterion.id);
    return t;
  }
  struct Candidate {
    std::string id;
    double key;
  };
  std::vector<Candidate> candidates;
  for (const VisibleObject& v : visible_objects(scene, min_visible_fraction)) {
    const ObjectState& o = *scene.find(v.id);
    if (o.category != criterion.category) continue;
    double key = 0.0;
    switch (criterion.predicate) {
      case RemovalPredicate::Leftmost:
        key = project_obb(o.obb(), scene.camera).bbox.center().x();
        break;
      case RemovalPredicate::Rightmost:
        key = -project_obb(o.obb(), scene.camera).bbox.center().x();
        break;
      case RemovalPredicate::Nearest: key = scene.camera.to_camera(o.center).z(); break;
      case RemovalPredicate::Farthest: key = -scene.camera.to_camera(o.center).z(); break;
    }
    candidates.push_back({o.id, key});
  }
  if (candidates.empty()) {
    throw Error(ErrorCode::AmbiguousCriterion,
                "no visible '" + criterion.category + "' matches");
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.key < b.key; });
  if (candidates.size() > 1 && candidates[1].key - candidates[0].key < 1e-9) {
    throw Error(ErrorCode::AmbiguousCriterion,
                std::string(to_string(criterion.predicate)) + " '" + criterion.category +
                    "' is tied");
  }
  t.target_id = candidates.front().id;
  t.removals.insert(t.target_id);
  return t;
}

SceneTransform make_scale(const Scene& scene, std::string_view target_id, double factor) {
  const ObjectState& o = require_manipulable(scene, target_id);
  if (!(factor >= 0.25 && factor <= 4.0)) {
    throw Error(ErrorCode::FactorOutOfRange, "factor must lie in [0.25, 4]");
  }
  SceneTransform t = single_delta(OpKind::OS, o);
  ObjectDelta& d = t.object_deltas[o.id];
  d.scale = factor;
  d.new_center.z() = o.base_height() + factor * o.half_height();
  return t;
}

Scene ideal_destination(const Scene& scene, const SceneTransform& t) {
  Scene out = scene;
  for (const auto& [id, d] : t.object_deltas) {
    ObjectState* o = out.find(id);
    if (!o) throw Error(ErrorCode::DanglingReference, "delta for unknown '" + id + "'");
    o->center = d.new_center;
    o->rotation = d.new_rotation;
    o->size *= d.scale;
    if (d.new_support_id) o->support_id = d.new_support_id;
  }
  for (const std::string& id : t.removals) {
    const auto idx = out.index_of(id);
    if (!idx) throw Error(ErrorCode::DanglingReference, "removal of unknown '" + id + "'");
    out.objects.erase(out.objects.begin() + static_cast<std::ptrdiff_t>(*idx));
  }
  if (t.camera_delta) {
    out.camera.rotation = t.camera_delta->new_rotation;
    out.camera.translation = t.camera_delta->new_translation;
  }
  return out;
}

Scene settle(const Scene& scene) {
  Scene out = scene;
  for (ObjectState& o : out.objects) {
    if (!o.support_id) continue;
    const SupportArea area = support_area(out, *o.support_id);
    o.center.z() += area.height - o.base_height();
  }
  return out;
}

Scene apply_transform(const Scene& scene, const SceneTransform& t) {
  Scene out = settle(ideal_destination(scene, t));
  try {
    validate_scene(out, ValidationMode::Strict);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ValidationError && e.field() == "collision") {
      throw Error(ErrorCode::PostTransformCollision, e.what());
    }
    throw;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Referring expressions and captions

namespace {

struct NamedColor {
  std::string_view name;
  Rgb rgb;
};

constexpr std::array<NamedColor, 12> kColorNames{{
    {"red", {200, 30, 30}},     {"green", {40, 160, 60}},   {"blue", {40, 70, 200}},
    {"yellow", {230, 210, 40}}, {"orange", {240, 140, 30}}, {"purple", {130, 50, 170}},
    {"pink", {240, 140, 180}},  {"brown", {130, 80, 40}},   {"white", {235, 235, 235}},
    {"gray", {128, 128, 128}},  {"black", {25, 25, 25}},    {"cyan", {40, 200, 210}},
}};

// One decimal, dropped when the value is integral after rounding.
std::string format_quantity(double v) {
  const double r = std::round(v * 10.0) / 10.0;
  if (std::abs(r - std::round(r)) < 1e-9) return fmt::format("{}", static_cast<long>(std::round(r)));
  return fmt::format("{:.1f}", r);
}

std::string format_factor(double v) {
  std::string s = fmt::format("{:.2f}", v);
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s;
}

std::string relation_phrase(Relation r) {
  switch (r) {
    case Relation::Left: return "to the left of";
    case Relation::Right: return "to the right of";
    case Relation::Front: return "in front of";
    case Relation::Behind: return "behind";
    case Relation::On: return "on";
    case Relation::Inside: return "inside";
  }
  return "near";
}

std::string direction_phrase(Direction d) {
  switch (d) {
    case Direction::Left: return "to the left";
    case Direction::Right: return "to the right";
    default: return std::string(to_string(d));
  }
}

}  // namespace

std::string color_word(Rgb color) {
  std::string_view best;
  long best_d = std::numeric_limits<long>::max();
  for (const NamedColor& c : kColorNames) {
    long d = 0;
    for (int k = 0; k < 3; ++k) {
      const long e = long(color[k]) - long(c.rgb[k]);
      d += e * e;
    }
    if (d < best_d) {
      best_d = d;
      best = c.name;
    }
  }
  return std::string(best);
}

std::optional<Descriptor> describe(const Scene& scene, std::string_view id) {
  const ObjectState& o = require_target(scene, id);
  Descriptor out{o.category, std::nullopt};
  bool repeated = false;
  for (const ObjectState& other : scene.objects) {
    repeated |= other.id != o.id && other.category == o.category;
  }
  if (!repeated) return out;
  const std::string word = color_word(o.color);
  for (const ObjectState& other : scene.objects) {
    if (other.id != o.id && other.category == o.category && color_word(other.color) == word) {
      return std::nullopt;
    }
  }
  out.disambiguator = word;
  return out;
}

std::string caption(const SpatialInstruction& s) {
  const Action& a = s.action;
  const std::string target = s.target.text();
  const std::string reference = s.reference ? s.reference->text() : std::string("object");
  switch (a.kind) {
    case OpKind::CM:
      return fmt::format("Move the {} {} cm {}.", target, format_quantity(a.distance * 100.0),
                         direction_phrase(a.direction.value_or(Direction::Left)));
    case OpKind::OP:
      return fmt::format("Place the {} {} the {}.", target,
                         relation_phrase(a.relation.value_or(Relation::Left)), reference);
    case OpKind::OR:
      return fmt::format("Rotate the {} {} degrees {}.", target,
                         format_quantity(std::abs(rad_to_deg(a.angle))),
                         a.angle >= 0.0 ? "counterclockwise" : "clockwise");
    case OpKind::RP:
      return fmt::format("Put the {} in the {}.", target, reference);
    case OpKind::PC: {
      const PerspectiveMode m = a.mode.value_or(PerspectiveMode::OrbitLeft);
      switch (m) {
        case PerspectiveMode::OrbitLeft:
        case PerspectiveMode::OrbitRight:
          return fmt::format("Orbit the camera {} degrees to the {}.",
                             format_quantity(rad_to_deg(a.magnitude)),
                             m == PerspectiveMode::OrbitLeft ? "left" : "right");
        case PerspectiveMode::ZoomIn:
          return fmt::format("Move the camera {} cm closer.",
                             format_quantity(a.magnitude * 100.0));
        case PerspectiveMode::ZoomOut:
          return fmt::format("Move the camera {} cm back.", format_quantity(a.magnitude * 100.0));
      }
      break;
    }
    case OpKind::SR:
      return fmt::format("Remove the {}.", target);
    case OpKind::OS:
      return fmt::format("Scale the {} by a factor of {}.", target, format_factor(a.scale_factor));
  }
  return {};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using nlohmann::json;

json descriptor_to_json(const Descriptor& d) {
  return {{"category", d.category},
          {"disambiguator", d.disambiguator ? json(*d.disambiguator) : json(nullptr)}};
}

Descriptor descriptor_from_json(const json& j) {
  Descriptor d;
  d.category = j.at("category").get<std::string>();
  if (j.contains("disambiguator") && !j.at("disambiguator").is_null()) {
    d.disambiguator = j.at("disambiguator").get<std::string>();
  }
  return d;
}

template <typename E>
json token_or_null(const std::optional<E>& v) {
  return v ? json(std::string(to_string(*v))) : json(nullptr);
}

template <typename E, typename Parse>
std::optional<E> token_from(const json& j, const char* key, Parse parse) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const std::string s = j.at(key).get<std::string>();
  auto v = parse(s);
  if (!v) throw Error(ErrorCode::ParseError, "bad " + std::string(key) + " '" + s + "'", key);
  return v;
}

json action_to_json(const Action& a) {
  return {{"kind", std::string(to_string(a.kind))},
          {"direction", token_or_null(a.direction)},
          {"distance", format_real(a.distance)},
          {"angle", format_real(a.angle)},
          {"scale_factor", format_real(a.scale_factor)},
          {"relation", token_or_null(a.relation)},
          {"gap", format_real(a.gap)},
          {"mode", token_or_null(a.mode)},
          {"magnitude", format_real(a.magnitude)}};
}

OpKind kind_from_json(const json& j) {
  const std::string s = j.get<std::string>();
  auto k = parse_op_kind(s);
  if (!k) throw Error(ErrorCode::ParseError, "unknown kind '" + s + "'", "kind");
  return *k;
}

Action action_from_json(const json& j) {
  Action a;
  a.kind = kind_from_json(j.at("kind"));
  a.direction = token_from<Direction>(j, "direction", parse_direction);
  a.distance = real_from_json(j.at("distance"));
  a.angle = real_from_json(j.at("angle"));
  a.scale_factor = real_from_json(j.at("scale_factor"));
  a.relation = token_from<Relation>(j, "relation", parse_relation);
  a.gap = real_from_json(j.at("gap"));
  a.mode = token_from<PerspectiveMode>(j, "mode", parse_perspective_mode);
  a.magnitude = real_from_json(j.at("magnitude"));
  return a;
}

}  // namespace

nlohmann::json transform_to_json(const SceneTransform& t) {
  json deltas = json::object();
  for (const auto& [id, d] : t.object_deltas) {
    deltas[id] = {{"new_center", vec_to_json(d.new_center)},
                  {"new_rotation", rotation_to_json(d.new_rotation)},
                  {"scale", format_real(d.scale)},
                  {"new_support_id", d.new_support_id ? json(*d.new_support_id) : json(nullptr)}};
  }
  json camera = nullptr;
  if (t.camera_delta) {
    camera = {{"new_rotation", rotation_to_json(t.camera_delta->new_rotation)},
              {"new_translation", vec_to_json(t.camera_delta->new_translation)}};
  }
  return {{"kind", std::string(to_string(t.kind))},
          {"target_id", t.target_id},
          {"reference_id", t.reference_id ? json(*t.reference_id) : json(nullptr)},
          {"object_deltas", deltas},
          {"camera_delta", camera},
          {"removals", json(std::vector<std::string>(t.removals.begin(), t.removals.end()))}};
}

SceneTransform transform_from_json(const nlohmann::json& j) {
  try {
    SceneTransform t;
    t.kind = kind_from_json(j.at("kind"));
    t.target_id = j.at("target_id").get<std::string>();
    if (!j.at("reference_id").is_null()) t.reference_id = j.at("reference_id").get<std::string>();
    for (const auto& [id, d] : j.at("object_deltas").items()) {
      ObjectDelta delta;
      delta.new_center = vec3_from_json(d.at("new_center"));
      delta.new_rotation = rotation_from_json(d.at("new_rotation"));
      delta.scale = real_from_json(d.at("scale"));
      if (!d.at("new_support_id").is_null()) {
        delta.new_support_id = d.at("new_support_id").get<std::string>();
      }
      t.object_deltas[id] = delta;
    }
    if (!j.at("camera_delta").is_null()) {
      const json& c = j.at("camera_delta");
      t.camera_delta = CameraDelta{rotation_from_json(c.at("new_rotation")),
                                   vec3_from_json(c.at("new_translation"))};
    }
    for (const auto& id : j.at("removals")) t.removals.insert(id.get<std::string>());
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("transform: ") + e.what(), "transform");
  }
}

nlohmann::json instruction_to_json(const SpatialInstruction& s) {
  return {{"referring",
           {{"target", descriptor_to_json(s.target)},
            {"reference", s.reference ? descriptor_to_json(*s.reference) : json(nullptr)}}},
          {"action", action_to_json(s.action)},
          {"transform", transform_to_json(s.transform)},
          {"caption", s.caption}};
}

SpatialInstruction instruction_from_json(const nlohmann::json& j) {
  try {
    SpatialInstruction s;
    const json& r = j.at("referring");
    s.target = descriptor_from_json(r.at("target"));
    if (!r.at("reference").is_null()) s.reference = descriptor_from_json(r.at("reference"));
    s.action = action_from_json(j.at("action"));
    s.transform = transform_from_json(j.at("transform"));
    s.caption = j.at("caption").get<std::string>();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("instruction: ") + e.what(), "instruction");
  }
}

SceneTransform canonicalize(const SceneTransform& t) {
  return transform_from_json(transform_to_json(t));
}

}  // namespace gsi
