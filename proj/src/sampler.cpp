#include "gsi/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "gsi/errors.hpp"
#include "gsi/kernels.hpp"
#include "gsi/visibility.hpp"

namespace gsi {

namespace {

struct Columns {
  std::vector<double> xs;
  std::vector<double> ys;
};

Columns split(const std::vector<Vec2>& pts) {
  Columns c;
  c.xs.reserve(pts.size());
  c.ys.reserve(pts.size());
  for (const Vec2& p : pts) {
    c.xs.push_back(p.x());
    c.ys.push_back(p.y());
  }
  return c;
}

}  // namespace

std::vector<int> dbscan(const std::vector<Vec2>& points, double eps, int min_pts) {
  const std::size_t n = points.size();
  std::vector<int> labels(n, kNoise);
  if (n == 0) return labels;
  const Columns cols = split(points);
  const double eps2 = eps * eps;
  const auto& k = kernels::active();

  // Neighborhoods up front: reused by the core test and the expansion.
  std::vector<std::vector<std::size_t>> nbrs(n);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    k.squared_distances(cols.xs.data(), cols.ys.data(), n, points[i].x(), points[i].y(),
                        d2.data());
    for (std::size_t j = 0; j < n; ++j) {
      if (d2[j] <= eps2) nbrs[i].push_back(j);
    }
  }
  const auto is_core = [&](std::size_t i) {
    return nbrs[i].size() >= static_cast<std::size_t>(std::max(min_pts, 1));
  };

  std::vector<char> assigned(n, 0);
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (assigned[i] || !is_core(i)) continue;
    std::vector<std::size_t> frontier{i};
    assigned[i] = 1;
    labels[i] = cluster;
    while (!frontier.empty()) {
      const std::size_t p = frontier.back();
      frontier.pop_back();
      for (std::size_t q : nbrs[p]) {
        if (assigned[q]) continue;
        assigned[q] = 1;
        labels[q] = cluster;
        if (is_core(q)) frontier.push_back(q);
      }
    }
    ++cluster;
  }
  return labels;
}

std::vector<std::size_t> farthest_point_sample(const std::vector<Vec2>& candidates,
                                               std::size_t k) {
  const std::size_t n = candidates.size();
  if (k > n) {
    throw Error(ErrorCode::KTooLarge,
                "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " candidates");
  }
  std::vector<std::size_t> picked;
  if (k == 0) return picked;
  picked.reserve(k);

  Vec2 centroid = Vec2::Zero();
  for (const Vec2& p : candidates) centroid += p;
  centroid /= static_cast<double>(n);

  const Columns cols = split(candidates);
  const auto& kern = kernels::active();
  std::vector<double> dmin(n);
  kern.squared_distances(cols.xs.data(), cols.ys.data(), n, centroid.x(), centroid.y(),
                         dmin.data());
  std::size_t next = static_cast<std::size_t>(
      std::min_element(dmin.begin(), dmin.end()) - dmin.begin());

  std::fill(dmin.begin(), dmin.end(), std::numeric_limits<double>::infinity());
  for (;;) {
    picked.push_back(next);
    if (picked.size() == k) break;
    kern.min_squared_distances(cols.xs.data(), cols.ys.data(), n, candidates[next].x(),
                               candidates[next].y(), dmin.data());
    // max_element returns the first maximum: lowest index on ties.
    next = static_cast<std::size_t>(std::max_element(dmin.begin(), dmin.end()) - dmin.begin());
  }
  return picked;
}

std::vector<Vec2> free_floor_grid(const Scene& env, const CurationConfig& config) {
  std::vector<Vec2> out;
  const Rect2& f = env.floor;
  const double s = config.grid_spacing;
  const int nx = static_cast<int>(std::floor((f.max_x - f.min_x) / s + 1e-9));
  const int ny = static_cast<int>(std::floor((f.max_y - f.min_y) / s + 1e-9));
  // Footprint bounding rectangles grown by the clearance.
  std::vector<Rect2> blocked;
  for (const ObjectState& o : env.objects) {
    Rect2 r{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const Vec3& c : o.obb().corners()) {
      r.min_x = std::min(r.min_x, c.x());
      r.min_y = std::min(r.min_y, c.y());
      r.max_x = std::max(r.max_x, c.x());
      r.max_y = std::max(r.max_y, c.y());
    }
    blocked.push_back({r.min_x - config.clearance, r.min_y - config.clearance,
                       r.max_x + config.clearance, r.max_y + config.clearance});
  }
  // Cell centers, so the grid stays off the floor boundary.
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const Vec2 p(f.min_x + (i + 0.5) * s, f.min_y + (j + 0.5) * s);
      const bool free = std::none_of(blocked.begin(), blocked.end(), [&](const Rect2& r) {
        return p.x() >= r.min_x && p.x() <= r.max_x && p.y() >= r.min_y && p.y() <= r.max_y;
      });
      if (free) out.push_back(p);
    }
  }
  return out;
}

CameraState viewpoint_camera(const Viewpoint& v, const Intrinsics& k) {
  return CameraState::from_yaw_pitch(v.position, v.yaw, v.pitch, k);
}

std::vector<Viewpoint> curate_viewpoints(const Scene& env, std::size_t per_room,
                                         std::uint64_t seed, const CurationConfig& config) {
  const std::vector<Vec2> grid = free_floor_grid(env, config);
  if (grid.empty()) throw Error(ErrorCode::NoFreeSpace, "environment has no free floor");
  const std::vector<int> labels = dbscan(grid, config.eps, config.min_pts);

  std::map<int, std::vector<Vec2>> rooms;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (labels[i] != kNoise) rooms[labels[i]].push_back(grid[i]);
  }
  if (rooms.empty()) throw Error(ErrorCode::NoFreeSpace, "free floor has no dense region");

  const int bins = std::max(config.yaw_bins, 1);
  const double bin = 2.0 * kPi / bins;
  // splitmix-style scramble of the seed into a yaw offset within one bin.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  z ^= z >> 31;
  const double offset = static_cast<double>(z >> 11) * 0x1.0p-53 * bin;
  const VisibilityOptions raster{config.raster_width, config.raster_height};

  std::vector<Viewpoint> out;
  for (const auto& [room, pts] : rooms) {
    const std::size_t k = std::min(per_room, pts.size());
    struct Scored {
      Viewpoint v;
      std::size_t order;
    };
    std::vector<Scored> scored;
    std::size_t order = 0;
    for (std::size_t idx : farthest_point_sample(pts, k)) {
      for (int b = 0; b < bins; ++b) {
        Viewpoint v;
        v.position = Vec3(pts[idx].x(), pts[idx].y(), config.eye_height);
        v.yaw = offset + b * bin;
        if (v.yaw > kPi) v.yaw -= 2.0 * kPi;
        v.pitch = deg_to_rad(config.pitch_deg);
        v.room_id = room;
        Scene view = env;
        view.camera = viewpoint_camera(v, env.camera.intrinsics);
        for (const VisibleObject& vis :
             visible_objects(view, config.min_visible_fraction, raster)) {
          v.actionability += view.find(vis.id)->manipulable;
        }
        scored.push_back({v, order++});
      }
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
      return a.v.actionability > b.v.actionability;
    });
    std::size_t taken = 0;
    for (const Scored& s : scored) {
      if (taken == per_room) break;
      if (s.v.actionability < config.min_actionability) break;
      out.push_back(s.v);
      ++taken;
    }
  }
  return out;
}

}  // namespace gsi
