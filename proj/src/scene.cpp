#include "gsi/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "gsi/errors.hpp"

namespace gsi {

using nlohmann::json;

bool SupportArea::contains(const Vec2& p, double tolerance) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const Vec2 d = p - center;
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= half_size.x() + tolerance &&
         std::abs(ly) <= half_size.y() + tolerance;
}

Rect2 SupportArea::bounds() const {
  const double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
  const double ex = c * half_size.x() + s * half_size.y();
  const double ey = s * half_size.x() + c * half_size.y();
  return {center.x() - ex, center.y() - ey, center.x() + ex, center.y() + ey};
}

double ObjectState::base_height() const {
  return center.z() - half_height();
}

bool ObjectState::operator==(const ObjectState& o) const {
  return id == o.id && category == o.category && center == o.center &&
         size == o.size && rotation == o.rotation && color == o.color &&
         support_id == o.support_id && manipulable == o.manipulable &&
         is_receptacle == o.is_receptacle;
}

const ObjectState* Scene::find(std::string_view id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

ObjectState* Scene::find(std::string_view id) {
  for (auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

std::optional<std::size_t> Scene::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].id == id) return i;
  }
  return std::nullopt;
}

const Surface* Scene::find_surface(std::string_view id) const {
  for (const auto& s : surfaces) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

bool Scene::operator==(const Scene& o) const {
  return objects == o.objects && camera.rotation == o.camera.rotation &&
         camera.translation == o.camera.translation &&
         camera.intrinsics.fx == o.camera.intrinsics.fx &&
         camera.intrinsics.fy == o.camera.intrinsics.fy &&
         camera.intrinsics.cx == o.camera.intrinsics.cx &&
         camera.intrinsics.cy == o.camera.intrinsics.cy &&
         camera.intrinsics.width == o.camera.intrinsics.width &&
         camera.intrinsics.height == o.camera.intrinsics.height &&
         floor == o.floor && surfaces == o.surfaces;
}

double yaw_of(const Rotation& r) {
  const Mat3& m = r.matrix();
  return std::atan2(m(1, 0), m(0, 0));
}

Obb receptacle_interior(const ObjectState& receptacle) {
  const Vec3 h = receptacle.size / 2.0;
  const double wall_x = kReceptacleWallFraction * receptacle.size.x();
  const double wall_y = kReceptacleWallFraction * receptacle.size.y();
  const double floor_t = kReceptacleWallFraction * receptacle.size.z();
  const Vec3 up = receptacle.rotation.matrix().col(2);
  Obb out;
  out.rotation = receptacle.rotation;
  out.half_extents = Vec3(h.x() - wall_x, h.y() - wall_y, h.z() - floor_t / 2.0);
  out.center = receptacle.center + up * (floor_t / 2.0);
  return out;
}

SupportArea support_area(const Scene& scene, std::string_view support_id) {
  SupportArea area;
  area.id = std::string(support_id);
  if (support_id == kFloorId) {
    const Rect2& f = scene.floor;
    area.center = Vec2((f.min_x + f.max_x) / 2.0, (f.min_y + f.max_y) / 2.0);
    area.half_size = Vec2((f.max_x - f.min_x) / 2.0, (f.max_y - f.min_y) / 2.0);
    area.height = 0.0;
    return area;
  }
  if (const Surface* s = scene.find_surface(support_id)) {
    area.center = Vec2((s->rect.min_x + s->rect.max_x) / 2.0,
                       (s->rect.min_y + s->rect.max_y) / 2.0);
    area.half_size = Vec2((s->rect.max_x - s->rect.min_x) / 2.0,
                          (s->rect.max_y - s->rect.min_y) / 2.0);
    area.height = s->height;
    return area;
  }
  if (const ObjectState* r = scene.find(support_id); r && r->is_receptacle) {
    const Obb interior = receptacle_interior(*r);
    area.center = interior.center.head<2>();
    area.half_size = interior.half_extents.head<2>();
    area.yaw = yaw_of(r->rotation);
    area.height = interior.center.z() - interior.half_extents.z();
    return area;
  }
  throw Error(ErrorCode::DanglingReference,
              "support '" + std::string(support_id) + "' does not resolve");
}

SupportArea support_surface_of(const Scene& scene, std::string_view object_id) {
  const ObjectState* o = scene.find(object_id);
  if (!o) {
    throw Error(ErrorCode::UnknownObject, "no object '" + std::string(object_id) + "'");
  }
  if (!o->support_id) {
    throw Error(ErrorCode::NoSupport, "object '" + o->id + "' has no support");
  }
  return support_area(scene, *o->support_id);
}

bool collision_exempt(const Scene& scene, const ObjectState& a,
                      const ObjectState& b) {
  auto carried_by = [&](const ObjectState& x, const ObjectState& carrier) {
    if (!x.support_id) return false;
    if (*x.support_id == carrier.id) return true;
    const Surface* s = scene.find_surface(*x.support_id);
    return s && s->owner && *s->owner == carrier.id;
  };
  return carried_by(a, b) || carried_by(b, a);
}

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::ValidationError, msg, field);
}

}  // namespace

std::array<Vec2, 4> object_footprint(const ObjectState& o) {
  // The 4 lowest corners are the bottom face.
  std::array<Vec3, 8> sorted = o.obb().corners();
  std::sort(sorted.begin(), sorted.end(),
            [](const Vec3& a, const Vec3& b) { return a.z() < b.z(); });
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = sorted[i].head<2>();
  return out;
}

ValidationReport validate_scene(const Scene& scene, ValidationMode mode) {
  ValidationReport report;
  if (mode == ValidationMode::Skip) return report;
  const bool strict = mode == ValidationMode::Strict;
  auto soft = [&](const std::string& field, const std::string& msg) {
    if (strict) invalid(field, msg);
    report.warnings.push_back(field + ": " + msg);
  };

  try {
    scene.camera.intrinsics.validate();
  } catch (const Error& e) {
    invalid("camera", e.what());
  }

  std::set<std::string> surface_ids;
  for (const auto& s : scene.surfaces) {
    if (s.id.empty() || s.id == kFloorId || !surface_ids.insert(s.id).second) {
      invalid("surfaces", "surface id '" + s.id + "' is empty, reserved, or repeated");
    }
    if (!(s.rect.max_x > s.rect.min_x && s.rect.max_y > s.rect.min_y)) {
      invalid("surfaces", "surface '" + s.id + "' has an empty rectangle");
    }
    if (s.owner && !scene.find(*s.owner)) {
      invalid("surfaces", "surface '" + s.id + "' owner does not exist");
    }
  }

  std::set<std::string> ids;
  std::set<Rgb> colors;
  for (const auto& o : scene.objects) {
    if (o.id.empty() || !ids.insert(o.id).second) {
      invalid("id", "object id '" + o.id + "' is empty or repeated");
    }
    if (surface_ids.count(o.id) || o.id == kFloorId) {
      invalid("id", "object id '" + o.id + "' collides with a support id");
    }
    if (!o.center.allFinite() || !o.size.allFinite() || (o.size.array() <= 0.0).any()) {
      invalid("size", "object '" + o.id + "' must have positive finite size");
    }
    if (!colors.insert(o.color).second) {
      invalid("color", "object '" + o.id + "' repeats another object's color");
    }
  }

  for (const auto& o : scene.objects) {
    if (!o.support_id) continue;
    const std::string& sid = *o.support_id;
    if (sid == o.id) invalid("support_id", "object '" + o.id + "' supports itself");
    const ObjectState* carrier = scene.find(sid);
    if (sid != kFloorId && !scene.find_surface(sid) && !(carrier && carrier->is_receptacle)) {
      invalid("support_id", "object '" + o.id + "' references unknown support '" + sid + "'");
    }
    const SupportArea area = support_area(scene, sid);
    if (std::abs(o.base_height() - area.height) > kSupportHeightTolerance) {
      soft("support_height", "object '" + o.id + "' base is not on '" + sid + "'");
    }
    for (const Vec2& p : object_footprint(o)) {
      if (!area.contains(p)) {
        soft("support_footprint", "object '" + o.id + "' overhangs '" + sid + "'");
        break;
      }
    }
  }

  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    for (std::size_t j = i + 1; j < scene.objects.size(); ++j) {
      const auto& a = scene.objects[i];
      const auto& b = scene.objects[j];
      if (collision_exempt(scene, a, b)) continue;
      if (obb_intersects(a.obb(), b.obb())) {
        soft("collision", "objects '" + a.id + "' and '" + b.id + "' intersect");
      }
    }
  }
  return report;
}

std::string format_real(double v) {
  if (v == 0.0) v = 0.0;  // drop negative zero
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double real_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string& s = j.get_ref<const std::string&>();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
      throw Error(ErrorCode::ParseError, "malformed real '" + s + "'");
    }
    return v;
  }
  throw Error(ErrorCode::ParseError, "expected a real, got " + j.dump());
}

json vec_to_json(const Vec3& v) {
  return json::array({format_real(v.x()), format_real(v.y()), format_real(v.z())});
}

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::ParseError, "expected a 3-vector, got " + j.dump());
  }
  return {real_from_json(j[0]), real_from_json(j[1]), real_from_json(j[2])};
}

namespace {

json vec2_to_json(double x, double y) {
  return json::array({format_real(x), format_real(y)});
}

Vec2 vec2_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) {
    throw Error(ErrorCode::ParseError, "expected a 2-vector, got " + j.dump());
  }
  return {real_from_json(j[0]), real_from_json(j[1])};
}

const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::ParseError, std::string("missing key '") + key + "'");
  }
  return j.at(key);
}

Rect2 rect_from_json(const json& j) {
  const Vec2 lo = vec2_from_json(require(j, "min"));
  const Vec2 hi = vec2_from_json(require(j, "max"));
  return {lo.x(), lo.y(), hi.x(), hi.y()};
}

}  // namespace

json rotation_to_json(const Rotation& r) {
  json rows = json::array();
  for (int i = 0; i < 3; ++i) {
    rows.push_back(json::array({format_real(r.matrix()(i, 0)),
                                format_real(r.matrix()(i, 1)),
                                format_real(r.matrix()(i, 2))}));
  }
  return rows;
}

Rotation rotation_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::ParseError, "rotation must be a 3x3 array");
  }
  Mat3 m;
  for (int i = 0; i < 3; ++i) {
    const Vec3 row = vec3_from_json(j[i]);
    m.row(i) = row.transpose();
  }
  try {
    return Rotation::from_matrix(m);
  } catch (const Error& e) {
    throw Error(ErrorCode::ValidationError, e.what(), "rotation");
  }
}

json scene_to_json(const Scene& scene) {
  json j;
  j["version"] = "gsi-scene/1";
  const Intrinsics& k = scene.camera.intrinsics;
  j["camera"] = {
      {"rotation", rotation_to_json(scene.camera.rotation)},
      {"translation", vec_to_json(scene.camera.translation)},
      {"intrinsics",
       {{"fx", format_real(k.fx)},
        {"fy", format_real(k.fy)},
        {"cx", format_real(k.cx)},
        {"cy", format_real(k.cy)},
        {"width", k.width},
        {"height", k.height}}}};
  j["floor"] = {{"min", vec2_to_json(scene.floor.min_x, scene.floor.min_y)},
                {"max", vec2_to_json(scene.floor.max_x, scene.floor.max_y)}};
  j["surfaces"] = json::array();
  for (const auto& s : scene.surfaces) {
    json js = {{"id", s.id},
               {"min", vec2_to_json(s.rect.min_x, s.rect.min_y)},
               {"max", vec2_to_json(s.rect.max_x, s.rect.max_y)},
               {"height", format_real(s.height)}};
    if (s.owner) js["owner"] = *s.owner;
    j["surfaces"].push_back(std::move(js));
  }
  j["objects"] = json::array();
  for (const auto& o : scene.objects) {
    j["objects"].push_back(
        {{"id", o.id},
         {"category", o.category},
         {"center", vec_to_json(o.center)},
         {"size", vec_to_json(o.size)},
         {"rotation", rotation_to_json(o.rotation)},
         {"color", json::array({o.color[0], o.color[1], o.color[2]})},
         {"support_id", o.support_id ? json(*o.support_id) : json(nullptr)},
         {"manipulable", o.manipulable},
         {"is_receptacle", o.is_receptacle}});
  }
  return j;
}

Scene scene_from_json(const json& j, ValidationMode mode) {
  Scene scene;
  try {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "scene must be an object");
    if (require(j, "version") != "gsi-scene/1") {
      throw Error(ErrorCode::ParseError, "unsupported scene version");
    }
    const json& cam = require(j, "camera");
    scene.camera.rotation = rotation_from_json(require(cam, "rotation"));
    scene.camera.translation = vec3_from_json(require(cam, "translation"));
    const json& k = require(cam, "intrinsics");
    scene.camera.intrinsics =
        Intrinsics{real_from_json(require(k, "fx")), real_from_json(require(k, "fy")),
                   real_from_json(require(k, "cx")), real_from_json(require(k, "cy")),
                   require(k, "width").get<int>(), require(k, "height").get<int>()};
    scene.floor = rect_from_json(require(j, "floor"));
    for (const json& js : require(j, "surfaces")) {
      Surface s;
      s.id = require(js, "id").get<std::string>();
      s.rect = rect_from_json(js);
      s.height = real_from_json(require(js, "height"));
      if (js.contains("owner") && !js["owner"].is_null()) {
        s.owner = js["owner"].get<std::string>();
      }
      scene.surfaces.push_back(std::move(s));
    }
    for (const json& jo : require(j, "objects")) {
      ObjectState o;
      o.id = require(jo, "id").get<std::string>();
      o.category = require(jo, "category").get<std::string>();
      o.center = vec3_from_json(require(jo, "center"));
      o.size = vec3_from_json(require(jo, "size"));
      o.rotation = rotation_from_json(require(jo, "rotation"));
      const json& c = require(jo, "color");
      if (!c.is_array() || c.size() != 3) {
        throw Error(ErrorCode::ParseError, "color must be [r, g, b]");
      }
      for (int i = 0; i < 3; ++i) {
        const int v = c[i].get<int>();
        if (v < 0 || v > 255) {
          throw Error(ErrorCode::ValidationError, "color channel out of range", "color");
        }
        o.color[i] = static_cast<std::uint8_t>(v);
      }
      if (jo.contains("support_id") && !jo["support_id"].is_null()) {
        o.support_id = jo["support_id"].get<std::string>();
      }
      o.manipulable = jo.value("manipulable", false);
      o.is_receptacle = jo.value("is_receptacle", false);
      scene.objects.push_back(std::move(o));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  validate_scene(scene, mode);
  return scene;
}

Scene load_scene(std::string_view text, ValidationMode mode) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  return scene_from_json(j, mode);
}

std::string save_scene(const Scene& scene) {
  return scene_to_json(scene).dump(2) + "\n";
}

Scene load_scene_file(const std::string& path, ValidationMode mode) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open scene file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scene(ss.str(), mode);
}

Scene canonicalize(const Scene& scene) {
  return scene_from_json(scene_to_json(scene), ValidationMode::Skip);
}

}  // namespace gsi
