#include "gsi/renderer.hpp"

#include <algorithm>
#include <cmath>

#include "gsi/errors.hpp"
#include "gsi/kernels.hpp"

namespace gsi {

namespace {

// Vertex coordinates are snapped to 1/256 pixel.
constexpr int kSubpixelBits = 8;
constexpr std::int64_t kSubpixelOne = std::int64_t{1} << kSubpixelBits;

struct CamVertex {
  Vec3 p;  // camera frame
};

struct ScreenVertex {
  std::int64_t x;  // fixed point
  std::int64_t y;
  double inv_z;
};

struct Face {
  std::array<Vec3, 4> corners;  // world, in winding order
  int shade_percent;
};

// Six faces of a box; corner index bits follow Obb::corners().
void box_faces(const Obb& box, std::vector<Face>& out) {
  const auto c = box.corners();
  // {corner indices}, local axis of the face normal
  static constexpr int kFaces[6][5] = {
      {0, 2, 6, 4, 0}, {1, 3, 7, 5, 0},  // -x, +x
      {0, 1, 5, 4, 1}, {2, 3, 7, 6, 1},  // -y, +y
      {0, 1, 3, 2, 2}, {4, 5, 7, 6, 2},  // -z, +z
  };
  for (const auto& f : kFaces) {
    Face face;
    for (int i = 0; i < 4; ++i) face.corners[i] = c[f[i]];
    face.shade_percent = kShadeFactors[f[4] == 2 ? 0 : (f[4] == 0 ? 1 : 2)];
    out.push_back(face);
  }
}

std::vector<Obb> object_parts(const ObjectState& o) {
  const Obb box = o.obb();
  if (!o.is_receptacle) return {box};
  const Vec3 h = box.half_extents;
  const double wx = kReceptacleWallFraction * o.size.x();
  const double wy = kReceptacleWallFraction * o.size.y();
  const double ft = kReceptacleWallFraction * o.size.z();
  const Mat3& r = o.rotation.matrix();
  auto part = [&](const Vec3& local_center, const Vec3& half) {
    return Obb{box.center + r * local_center, half, o.rotation};
  };
  return {
      part({0, 0, -h.z() + ft / 2}, {h.x(), h.y(), ft / 2}),
      part({-h.x() + wx / 2, 0, 0}, {wx / 2, h.y(), h.z()}),
      part({h.x() - wx / 2, 0, 0}, {wx / 2, h.y(), h.z()}),
      part({0, -h.y() + wy / 2, 0}, {h.x() - wx, wy / 2, h.z()}),
      part({0, h.y() - wy / 2, 0}, {h.x() - wx, wy / 2, h.z()}),
  };
}

// Clip a convex polygon against z >= kNearPlane (camera frame).
int clip_near(const std::array<Vec3, 3>& in, std::array<Vec3, 4>& out) {
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const Vec3& a = in[i];
    const Vec3& b = in[(i + 1) % 3];
    const bool a_in = a.z() >= kNearPlane;
    const bool b_in = b.z() >= kNearPlane;
    if (a_in) out[n++] = a;
    if (a_in != b_in) {
      const double t = (kNearPlane - a.z()) / (b.z() - a.z());
      Vec3 p = a + t * (b - a);
      p.z() = kNearPlane;
      out[n++] = p;
    }
  }
  return n;
}

bool edge_includes_boundary(std::int64_t dx, std::int64_t dy) {
  return dy < 0 || (dy == 0 && dx > 0);
}

class Rasterizer {
 public:
  Rasterizer(FrameBuffers& fb, const Intrinsics& k) : fb_(fb), k_(k) {}

  void triangle(const std::array<Vec3, 3>& cam, std::uint16_t id, Rgb color) {
    std::array<Vec3, 4> poly;
    const int n = clip_near(cam, poly);
    if (n < 3) return;
    std::array<ScreenVertex, 4> sv;
    for (int i = 0; i < n; ++i) sv[i] = to_screen(poly[i]);
    for (int i = 1; i + 1 < n; ++i) fill(sv[0], sv[i], sv[i + 1], id, color);
  }

 private:
  ScreenVertex to_screen(const Vec3& p) const {
    const double u = k_.fx * p.x() / p.z() + k_.cx;
    const double v = k_.fy * p.y() / p.z() + k_.cy;
    return {std::llround(u * kSubpixelOne), std::llround(v * kSubpixelOne), 1.0 / p.z()};
  }

  static std::int64_t edge(const ScreenVertex& a, const ScreenVertex& b,
                           std::int64_t px, std::int64_t py) {
    return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
  }

  void fill(ScreenVertex v0, ScreenVertex v1, ScreenVertex v2, std::uint16_t id,
            Rgb color) {
    std::int64_t area = edge(v0, v1, v2.x, v2.y);
    if (area == 0) return;
    if (area < 0) {
      std::swap(v1, v2);
      area = -area;
    }
    const std::int64_t min_x = std::min({v0.x, v1.x, v2.x});
    const std::int64_t max_x = std::max({v0.x, v1.x, v2.x});
    const std::int64_t min_y = std::min({v0.y, v1.y, v2.y});
    const std::int64_t max_y = std::max({v0.y, v1.y, v2.y});
    // Pixel (px, py) samples at ((px + 0.5), (py + 0.5)).
    const std::int64_t half = kSubpixelOne / 2;
    auto first_pixel = [&](std::int64_t lo) {
      // smallest p with p*one + half >= lo
      const std::int64_t num = lo - half;
      std::int64_t p = num >= 0 ? (num + kSubpixelOne - 1) / kSubpixelOne
                                : -((-num) / kSubpixelOne);
      return p;
    };
    auto last_pixel = [&](std::int64_t hi) {
      const std::int64_t num = hi - half;
      return num >= 0 ? num / kSubpixelOne : -((-num + kSubpixelOne - 1) / kSubpixelOne);
    };
    const int x0 = static_cast<int>(std::max<std::int64_t>(0, first_pixel(min_x)));
    const int x1 = static_cast<int>(std::min<std::int64_t>(fb_.width - 1, last_pixel(max_x)));
    const int y0 = static_cast<int>(std::max<std::int64_t>(0, first_pixel(min_y)));
    const int y1 = static_cast<int>(std::min<std::int64_t>(fb_.height - 1, last_pixel(max_y)));
    if (x0 > x1 || y0 > y1) return;

    const std::int64_t bias0 = edge_includes_boundary(v2.x - v1.x, v2.y - v1.y) ? 0 : 1;
    const std::int64_t bias1 = edge_includes_boundary(v0.x - v2.x, v0.y - v2.y) ? 0 : 1;
    const std::int64_t bias2 = edge_includes_boundary(v1.x - v0.x, v1.y - v0.y) ? 0 : 1;
    const double inv_area = 1.0 / static_cast<double>(area);

    // Edge function steps per pixel.
    const std::int64_t a0 = -(v2.y - v1.y) * kSubpixelOne, b0 = (v2.x - v1.x) * kSubpixelOne;
    const std::int64_t a1 = -(v0.y - v2.y) * kSubpixelOne, b1 = (v0.x - v2.x) * kSubpixelOne;
    const std::int64_t a2 = -(v1.y - v0.y) * kSubpixelOne, b2 = (v1.x - v0.x) * kSubpixelOne;
    const std::int64_t sx = x0 * kSubpixelOne + half;
    const std::int64_t sy = y0 * kSubpixelOne + half;
    std::int64_t row0 = edge(v1, v2, sx, sy);
    std::int64_t row1 = edge(v2, v0, sx, sy);
    std::int64_t row2 = edge(v0, v1, sx, sy);

    for (int y = y0; y <= y1; ++y) {
      std::int64_t w0 = row0, w1 = row1, w2 = row2;
      const std::size_t base = static_cast<std::size_t>(y) * fb_.width;
      for (int x = x0; x <= x1; ++x) {
        if ((w0 - bias0) >= 0 && (w1 - bias1) >= 0 && (w2 - bias2) >= 0) {
          const double inv_z = (static_cast<double>(w0) * v0.inv_z +
                                static_cast<double>(w1) * v1.inv_z +
                                static_cast<double>(w2) * v2.inv_z) *
                               inv_area;
          const float z = static_cast<float>(1.0 / inv_z);
          const std::size_t i = base + x;
          if (z < fb_.depth[i]) {
            fb_.depth[i] = z;
            fb_.instance[i] = id;
            fb_.color.data[3 * i] = color[0];
            fb_.color.data[3 * i + 1] = color[1];
            fb_.color.data[3 * i + 2] = color[2];
          }
        }
        w0 += a0;
        w1 += a1;
        w2 += a2;
      }
      row0 += b0;
      row1 += b1;
      row2 += b2;
    }
  }

  FrameBuffers& fb_;
  const Intrinsics& k_;
};

}  // namespace

Rgb shade(Rgb color, int factor_percent) {
  Rgb out;
  for (int c = 0; c < 3; ++c) {
    out[c] = static_cast<std::uint8_t>((color[c] * factor_percent + 50) / 100);
  }
  return out;
}

FrameBuffers render(const Scene& scene, int width, int height,
                    const RenderOptions& options) {
  const Intrinsics& base = scene.camera.intrinsics;
  if (!(base.fx > 0.0) || !(base.fy > 0.0) || width <= 0 || height <= 0) {
    throw Error(ErrorCode::DegenerateCamera, "camera cannot produce an image");
  }
  const Intrinsics k = (width == base.width && height == base.height)
                           ? base
                           : base.resized(width, height);

  FrameBuffers fb;
  fb.width = width;
  fb.height = height;
  fb.color = RgbImage(width, height, kBackgroundColor);
  fb.depth.assign(fb.pixel_count(), std::numeric_limits<float>::infinity());
  fb.instance.assign(fb.pixel_count(), 0);

  Rasterizer raster(fb, k);
  std::vector<Face> faces;
  auto draw = [&](std::size_t idx) {
    const ObjectState& o = scene.objects[idx];
    const auto id = static_cast<std::uint16_t>(idx + 1);
    faces.clear();
    for (const Obb& part : object_parts(o)) box_faces(part, faces);
    for (const Face& f : faces) {
      std::array<Vec3, 4> cam;
      for (int i = 0; i < 4; ++i) cam[i] = scene.camera.to_camera(f.corners[i]);
      const Rgb color = shade(o.color, f.shade_percent);
      raster.triangle({cam[0], cam[1], cam[2]}, id, color);
      raster.triangle({cam[0], cam[2], cam[3]}, id, color);
    }
  };
  if (options.only) {
    for (std::size_t idx : *options.only) {
      if (idx < scene.objects.size()) draw(idx);
    }
  } else {
    for (std::size_t idx = 0; idx < scene.objects.size(); ++idx) draw(idx);
  }
  return fb;
}

std::vector<std::size_t> instance_pixel_counts(const FrameBuffers& fb,
                                               std::size_t object_count) {
  std::vector<std::size_t> counts(object_count + 1, 0);
  for (std::uint16_t id : fb.instance) {
    if (id < counts.size()) ++counts[id];
  }
  return counts;
}

double pixel_change_fraction(const FrameBuffers& a, const FrameBuffers& b) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(ErrorCode::DimensionMismatch, "frame sizes differ");
  }
  const std::size_t n = a.pixel_count();
  if (n == 0) return 0.0;
  const std::size_t changed = kernels::active().count_changed_pixels(
      a.instance.data(), b.instance.data(), a.color.data.data(),
      b.color.data.data(), n, 8);
  return static_cast<double>(changed) / static_cast<double>(n);
}

void write_frame(const std::filesystem::path& prefix, const FrameBuffers& fb) {
  const std::string p = prefix.string();
  write_png(p + "_rgb.png", fb.color);
  Gray16Image iid{fb.width, fb.height, fb.instance};
  write_pgm16(p + "_iid.pgm", iid);
  Gray16Image depth{fb.width, fb.height, std::vector<std::uint16_t>(fb.pixel_count(), 0)};
  for (std::size_t i = 0; i < fb.pixel_count(); ++i) {
    const float z = fb.depth[i];
    if (std::isfinite(z)) {
      const double mm = std::round(static_cast<double>(z) * 1000.0);
      depth.data[i] = static_cast<std::uint16_t>(std::clamp(mm, 1.0, 65535.0));
    }
  }
  write_pgm16(p + "_d.pgm", depth);
}

std::vector<std::uint16_t> read_instance_plane(const std::filesystem::path& path,
                                               int* width, int* height) {
  Gray16Image img = read_pgm16(path);
  if (width) *width = img.width;
  if (height) *height = img.height;
  return std::move(img.data);
}

}  // namespace gsi
