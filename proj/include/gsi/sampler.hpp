#pragma once

#include <cstdint>
#include <vector>

#include "gsi/scene.hpp"

namespace gsi {

struct Viewpoint {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
  double pitch = 0.0;
  int room_id = 0;
  int actionability = 0;
};

inline constexpr int kNoise = -1;

/// Density clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are numbered in order of
/// their lowest-index core point; a border point takes the first cluster that
/// reaches it.
std::vector<int> dbscan(const std::vector<Vec2>& points, double eps, int min_pts);

/// Greedy farthest-point selection starting at the candidate nearest the
/// centroid; ties go to the lowest index. Throws KTooLarge.
std::vector<std::size_t> farthest_point_sample(const std::vector<Vec2>& candidates,
                                               std::size_t k);

struct CurationConfig {
  double grid_spacing = 0.25;
  /// Grid points closer than this to an object footprint are not free floor.
  double clearance = 0.2;
  double eps = 0.5;
  int min_pts = 4;
  double eye_height = 1.5;
  double pitch_deg = -15.0;
  int yaw_bins = 8;
  int min_actionability = 1;
  double min_visible_fraction = 0.6;
  /// Raster used when counting visible objects.
  int raster_width = 128;
  int raster_height = 128;
};

/// Free-floor sample grid: floor points away from every object footprint.
std::vector<Vec2> free_floor_grid(const Scene& env, const CurationConfig& config = {});

/// Camera for a viewpoint with the environment's intrinsics.
CameraState viewpoint_camera(const Viewpoint& v, const Intrinsics& k);

/// Room partition, dispersed positions, and actionability ranking. The seed
/// rotates the yaw bins. Throws NoFreeSpace.
std::vector<Viewpoint> curate_viewpoints(const Scene& env, std::size_t per_room,
                                         std::uint64_t seed,
                                         const CurationConfig& config = {});

}  // namespace gsi
