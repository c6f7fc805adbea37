#include "gsi/visibility.hpp"

namespace gsi {

namespace {

std::pair<int, int> raster_size(const Scene& scene, const VisibilityOptions& options) {
  if (options.raster_width > 0 && options.raster_height > 0) {
    return {options.raster_width, options.raster_height};
  }
  return {scene.camera.intrinsics.width, scene.camera.intrinsics.height};
}

std::size_t count_id(const FrameBuffers& fb, std::uint16_t id) {
  std::size_t n = 0;
  for (std::uint16_t v : fb.instance) n += v == id;
  return n;
}

}  // namespace

ObjectVisibility object_visibility(const Scene& scene, std::size_t index,
                                   const VisibilityOptions& options,
                                   const FrameBuffers* full) {
  ObjectVisibility out;
  const ObjectState& o = scene.objects.at(index);
  out.clip_fraction = project_obb(o.obb(), scene.camera).visible_fraction;
  if (out.clip_fraction <= 0.0) return out;
  const auto [w, h] = raster_size(scene, options);
  FrameBuffers own;
  if (!full || full->width != w || full->height != h) {
    own = render(scene, w, h);
    full = &own;
  }
  const auto id = static_cast<std::uint16_t>(index + 1);
  out.mask_pixels = count_id(*full, id);
  RenderOptions alone;
  alone.only = std::vector<std::size_t>{index};
  out.unoccluded_pixels = count_id(render(scene, w, h, alone), id);
  return out;
}

std::vector<VisibleObject> visible_objects(const Scene& scene, double min_fraction,
                                           const VisibilityOptions& options) {
  std::vector<VisibleObject> out;
  const auto [w, h] = raster_size(scene, options);
  const FrameBuffers full = render(scene, w, h);
  const auto counts = instance_pixel_counts(full, scene.objects.size());
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const ObjectState& o = scene.objects[i];
    const double fraction = project_obb(o.obb(), scene.camera).visible_fraction;
    if (fraction <= 0.0 || fraction < min_fraction) continue;
    if (counts[i + 1] == 0) continue;
    RenderOptions alone;
    alone.only = std::vector<std::size_t>{i};
    const std::size_t unoccluded = count_id(render(scene, w, h, alone),
                                            static_cast<std::uint16_t>(i + 1));
    if (unoccluded == 0) continue;
    if (static_cast<double>(counts[i + 1]) <
        kMinUnoccludedShare * static_cast<double>(unoccluded)) {
      continue;
    }
    out.push_back({o.id, fraction});
  }
  return out;
}

}  // namespace gsi
