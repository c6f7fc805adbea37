#include "gsi/feasibility.hpp"

#include <fmt/format.h>

#include <cmath>

#include "gsi/errors.hpp"

namespace gsi {

const FeasibilityCheck* FeasibilityReport::find(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

namespace {

struct Context {
  const Scene& src;
  const SceneTransform& t;
  const FeasibilityConfig& cfg;
  Scene dst;
  bool object_kind = false;  // a single object moves
};

FeasibilityCheck pass(std::string_view name, std::string detail = {}) {
  return {std::string(name), true, std::move(detail)};
}

FeasibilityCheck fail(std::string_view name, std::string detail) {
  return {std::string(name), false, std::move(detail)};
}

// Objects resting on `id`, directly or through a surface it owns.
std::vector<std::string> dependents_of(const Scene& scene, const std::string& id) {
  std::vector<std::string> out;
  for (const ObjectState& o : scene.objects) {
    if (!o.support_id || o.id == id) continue;
    if (*o.support_id == id) {
      out.push_back(o.id);
      continue;
    }
    const Surface* s = scene.find_surface(*o.support_id);
    if (s && s->owner && *s->owner == id) out.push_back(o.id);
  }
  return out;
}

FeasibilityCheck check_target(Context& c) {
  const SceneTransform& t = c.t;
  try {
    check_transform_shape(t);
  } catch (const Error& e) {
    return fail("target", e.what());
  }
  if (t.kind != OpKind::PC && !c.src.find(t.target_id)) {
    return fail("target", "unknown target '" + t.target_id + "'");
  }
  if (t.reference_id && !c.src.find(*t.reference_id)) {
    return fail("target", "unknown reference '" + *t.reference_id + "'");
  }
  if (c.object_kind && !c.src.find(t.target_id)->manipulable) {
    return fail("target", "target is not manipulable");
  }
  try {
    c.dst = settle(ideal_destination(c.src, t));
  } catch (const Error& e) {
    return fail("target", e.what());
  }
  return pass("target");
}

FeasibilityCheck check_visibility(const Context& c) {
  const VisibilityOptions raster{c.cfg.raster_width, c.cfg.raster_height};
  if (c.t.kind == OpKind::PC) {
    // The new view must still show the scene's manipulable content.
    const auto visible = visible_objects(c.dst, c.cfg.min_visible_fraction, raster);
    std::size_t manipulable = 0;
    for (const auto& v : visible) manipulable += c.dst.find(v.id)->manipulable;
    if (manipulable == 0) return fail("visibility", "no manipulable object visible");
    return pass("visibility", fmt::format("{} objects visible", visible.size()));
  }
  // Removals are judged in the source view; everything else after the edit.
  const Scene& scene = c.t.kind == OpKind::SR ? c.src : c.dst;
  const std::size_t index = *scene.index_of(c.t.target_id);
  const ObjectVisibility v = object_visibility(scene, index, raster);
  if (v.clip_fraction < c.cfg.min_visible_fraction) {
    return fail("visibility", fmt::format("in-frame fraction {:.3f}", v.clip_fraction));
  }
  const double occluded = 1.0 - v.unoccluded_share();
  if (v.unoccluded_pixels == 0 || occluded > c.cfg.max_occlusion) {
    return fail("visibility", fmt::format("occluded share {:.3f}", occluded));
  }
  return pass("visibility", fmt::format("in-frame {:.3f}, occluded {:.3f}", v.clip_fraction,
                                        occluded));
}

FeasibilityCheck check_support(const Context& c) {
  if (c.t.kind == OpKind::PC) return pass("support", "n/a");
  const auto deps = dependents_of(c.src, c.t.target_id);
  if (!deps.empty()) return fail("support", "'" + deps.front() + "' rests on the target");
  if (c.t.kind == OpKind::SR) {
    for (const Surface& s : c.src.surfaces) {
      if (s.owner == c.t.target_id) return fail("support", "target carries '" + s.id + "'");
    }
    return pass("support");
  }
  const ObjectState& o = *c.dst.find(c.t.target_id);
  if (!o.support_id) return fail("support", "target has no support");
  SupportArea area;
  try {
    area = support_area(c.dst, *o.support_id);
  } catch (const Error& e) {
    return fail("support", e.what());
  }
  for (const Vec2& p : object_footprint(o)) {
    if (!area.contains(p)) {
      return fail("support", fmt::format("footprint leaves '{}' at ({:.3f}, {:.3f})",
                                         area.id, p.x(), p.y()));
    }
  }
  return pass("support", "on '" + area.id + "'");
}

FeasibilityCheck check_collision(const Context& c) {
  if (c.t.kind == OpKind::SR) return pass("collision", "n/a");
  if (c.t.kind == OpKind::PC) {
    const Vec3 eye = c.dst.camera.position();
    for (const ObjectState& o : c.dst.objects) {
      if (obb_contains_point(o.obb(), eye)) return fail("collision", "camera inside '" + o.id + "'");
    }
    return pass("collision");
  }
  const ObjectState& o = *c.dst.find(c.t.target_id);
  const Obb box = o.obb();
  for (const ObjectState& other : c.dst.objects) {
    if (other.id == o.id || collision_exempt(c.dst, o, other)) continue;
    if (obb_intersects(box, other.obb())) return fail("collision", "intersects '" + other.id + "'");
  }
  return pass("collision");
}

FeasibilityCheck check_containment(const Context& c) {
  if (c.t.kind != OpKind::RP) return pass("containment", "n/a");
  const ObjectState& rec = *c.dst.find(*c.t.reference_id);
  if (!rec.is_receptacle) return fail("containment", "'" + rec.id + "' is not a receptacle");
  try {
    // The margin is a wall clearance: the target legitimately rests on the
    // interior floor, so the cavity is first grown vertically by the margin.
    Obb cavity = receptacle_interior(rec);
    cavity.half_extents.z() += c.cfg.containment_margin;
    if (!obb_contains(cavity, c.dst.find(c.t.target_id)->obb(), c.cfg.containment_margin)) {
      return fail("containment", "target leaves the interior");
    }
  } catch (const Error& e) {
    return fail("containment", e.what());
  }
  return pass("containment");
}

FeasibilityCheck check_significance(const Context& c) {
  const FeasibilityConfig& cfg = c.cfg;
  if (c.t.kind == OpKind::SR) return pass("significance", "removal");
  double translation = 0.0;
  double rotation = 0.0;
  double scale = 1.0;
  if (c.t.kind == OpKind::PC) {
    translation = (c.dst.camera.position() - c.src.camera.position()).norm();
    rotation = geodesic_distance(c.src.camera.rotation, c.dst.camera.rotation);
  } else {
    const ObjectState& before = *c.src.find(c.t.target_id);
    const ObjectState& after = *c.dst.find(c.t.target_id);
    translation = (after.center - before.center).norm();
    rotation = geodesic_distance(before.rotation, after.rotation);
    scale = c.t.object_deltas.at(c.t.target_id).scale;
  }
  const std::string detail =
      fmt::format("translation {:.3f} m, rotation {:.1f} deg, scale {:.2f}", translation,
                  rad_to_deg(rotation), scale);
  const bool significant = translation >= cfg.min_translation ||
                           rad_to_deg(rotation) >= cfg.min_rotation_deg ||
                           scale < cfg.min_scale_ratio || scale > cfg.max_scale_ratio;
  return significant ? pass("significance", detail) : fail("significance", detail);
}

}  // namespace

FeasibilityReport check_feasible(const Scene& scene, const SceneTransform& t,
                                 const FeasibilityConfig& config) {
  Context c{scene, t, config, {}, false};
  c.object_kind = t.kind != OpKind::PC && t.kind != OpKind::SR;

  FeasibilityReport report;
  report.checks.push_back(check_target(c));
  if (!report.checks.back().passed) {
    for (std::size_t i = 1; i < kFeasibilityChecks.size(); ++i) {
      report.checks.push_back(fail(kFeasibilityChecks[i], "skipped"));
    }
  } else {
    report.checks.push_back(check_visibility(c));
    report.checks.push_back(check_support(c));
    report.checks.push_back(check_collision(c));
    report.checks.push_back(check_containment(c));
    report.checks.push_back(check_significance(c));
  }
  for (const auto& check : report.checks) {
    if (!check.passed) {
      report.first_failure = check.name;
      break;
    }
  }
  report.feasible = !report.first_failure.has_value();
  return report;
}

}  // namespace gsi
