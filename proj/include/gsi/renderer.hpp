#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "gsi/image.hpp"
#include "gsi/scene.hpp"

namespace gsi {

/// Renderer output. Instance id 0 is background; object i of the scene is
/// id i + 1. Depth is camera-frame z in meters, +inf for background.
struct FrameBuffers {
  int width = 0;
  int height = 0;
  RgbImage color;
  std::vector<float> depth;
  std::vector<std::uint16_t> instance;

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width + x;
  }
  bool operator==(const FrameBuffers&) const = default;
};

inline constexpr Rgb kBackgroundColor{0, 0, 0};

/// Face shade factors in percent: top/bottom, +-x faces, +-y faces.
inline constexpr int kShadeTop = 100;
inline constexpr int kShadeSideX = 85;
inline constexpr int kShadeSideY = 70;
inline constexpr std::array<int, 3> kShadeFactors{kShadeTop, kShadeSideX, kShadeSideY};

/// Palette color scaled by a shade factor, rounded half up.
Rgb shade(Rgb color, int factor_percent);

/// Near clipping plane for rasterization (meters).
inline constexpr double kNearPlane = 0.01;

struct RenderOptions {
  /// Restrict rendering to these object indices (instance ids stay i + 1).
  std::optional<std::vector<std::size_t>> only;
};

/// Deterministic rasterization of the scene's boxes at `width` x `height`.
/// Intrinsics are rescaled when the size differs from the camera's.
FrameBuffers render(const Scene& scene, int width, int height,
                    const RenderOptions& options = {});
inline FrameBuffers render(const Scene& scene) {
  return render(scene, scene.camera.intrinsics.width, scene.camera.intrinsics.height);
}

/// Per-instance pixel counts; index 0 counts background.
std::vector<std::size_t> instance_pixel_counts(const FrameBuffers& fb,
                                               std::size_t object_count);

/// Fraction of pixels whose instance ids differ or whose color differs by
/// more than 8/255 in any channel. Throws DimensionMismatch.
double pixel_change_fraction(const FrameBuffers& a, const FrameBuffers& b);

/// Writes `{prefix}_rgb.png`, `{prefix}_iid.pgm`, `{prefix}_d.pgm` (depth in
/// millimeters, 0 = background).
void write_frame(const std::filesystem::path& prefix, const FrameBuffers& fb);

/// Reads the instance-id plane written by write_frame.
std::vector<std::uint16_t> read_instance_plane(const std::filesystem::path& path,
                                               int* width = nullptr,
                                               int* height = nullptr);

}  // namespace gsi
