#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gsi/renderer.hpp"
#include "gsi/scene.hpp"

namespace gsi {

/// Objects covering less than this share of their unoccluded mask count as
/// occluded.
inline constexpr double kMinUnoccludedShare = 0.5;

struct VisibleObject {
  std::string id;
  double visible_fraction = 0.0;
};

struct ObjectVisibility {
  double clip_fraction = 0.0;         // project_obb visible fraction
  std::size_t mask_pixels = 0;        // pixels owned in the full render
  std::size_t unoccluded_pixels = 0;  // pixels when rendered alone

  double unoccluded_share() const {
    return unoccluded_pixels == 0
               ? 0.0
               : static_cast<double>(mask_pixels) / static_cast<double>(unoccluded_pixels);
  }
};

struct VisibilityOptions {
  /// Raster size for the occlusion test; 0 uses the camera's image size.
  int raster_width = 0;
  int raster_height = 0;
};

/// Objects whose projected box keeps at least `min_fraction` inside the image
/// and whose rendered mask keeps at least half of its unoccluded pixels.
std::vector<VisibleObject> visible_objects(const Scene& scene, double min_fraction,
                                           const VisibilityOptions& options = {});

/// Visibility statistics of one object. `full` may carry a precomputed render
/// of the scene at the raster size.
ObjectVisibility object_visibility(const Scene& scene, std::size_t index,
                                   const VisibilityOptions& options = {},
                                   const FrameBuffers* full = nullptr);

}  // namespace gsi
