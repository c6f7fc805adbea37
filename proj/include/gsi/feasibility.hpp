#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gsi/spatial_ops.hpp"
#include "gsi/visibility.hpp"

namespace gsi {

struct FeasibilityConfig {
  double min_visible_fraction = 0.6;
  /// Largest tolerated occluded share of the target's mask.
  double max_occlusion = 0.5;
  double containment_margin = 0.01;
  double min_translation = 0.05;
  double min_rotation_deg = 10.0;
  double min_scale_ratio = 0.9;
  double max_scale_ratio = 1.1;
  /// Raster used for the occlusion test.
  int raster_width = 256;
  int raster_height = 256;
};

struct FeasibilityCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct FeasibilityReport {
  bool feasible = false;
  std::vector<FeasibilityCheck> checks;
  std::optional<std::string> first_failure;

  const FeasibilityCheck* find(std::string_view name) const;
};

/// Check names in report order.
inline constexpr std::array<std::string_view, 6> kFeasibilityChecks{
    "target", "visibility", "support", "collision", "containment", "significance"};

/// Every check is listed; checks that do not apply to the kind pass with
/// detail "n/a", and checks after an unresolvable target fail as "skipped".
FeasibilityReport check_feasible(const Scene& scene, const SceneTransform& t,
                                 const FeasibilityConfig& config = {});

}  // namespace gsi
