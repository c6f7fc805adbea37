#include "gsi/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "gsi/errors.hpp"
#include "gsi/kernels.hpp"
#include "gsi/visibility.hpp"
#include "httplib.h"

namespace gsi {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Masked SSIM

namespace {

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> taps{};
  const int r = kSsimWindow / 2;
  double sum = 0.0;
  for (int k = -r; k <= r; ++k) {
    taps[k + r] = std::exp(-(k * k) / (2.0 * kSsimSigma * kSsimSigma));
    sum += taps[k + r];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Valid-mode separable Gaussian filter: (w - 10) x (h - 10).
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h) {
  static const auto taps = gaussian_taps();
  const auto& k = kernels::active();
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(ow) * h);
  k.convolve_rows(in.data(), w, h, taps.data(), kSsimWindow, rows.data());
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  k.convolve_cols(rows.data(), ow, h, taps.data(), kSsimWindow, out.data());
  return out;
}

void require_same_size(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2) {
    throw Error(ErrorCode::DimensionMismatch,
                fmt::format("{}: {}x{} vs {}x{}", what, w1, h1, w2, h2));
  }
}

}  // namespace

double masked_ssim(const RgbImage& a, const RgbImage& b, const Mask& exclude) {
  require_same_size(a.width, a.height, b.width, b.height, "images");
  require_same_size(a.width, a.height, exclude.width, exclude.height, "mask");
  const int w = a.width;
  const int h = a.height;
  if (w < kSsimWindow || h < kSsimWindow) return 1.0;

  const std::vector<double> la = to_luma(a);
  const std::vector<double> lb = to_luma(b);
  std::vector<double> aa(la.size()), bb(la.size()), ab(la.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    aa[i] = la[i] * la[i];
    bb[i] = lb[i] * lb[i];
    ab[i] = la[i] * lb[i];
  }
  const auto mu_a = filter_valid(la, w, h);
  const auto mu_b = filter_valid(lb, w, h);
  const auto e_aa = filter_valid(aa, w, h);
  const auto e_bb = filter_valid(bb, w, h);
  const auto e_ab = filter_valid(ab, w, h);

  // Integral image of the mask for the any-pixel-excluded window test.
  std::vector<std::uint32_t> integral(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  for (int y = 0; y < h; ++y) {
    std::uint32_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += exclude.at(x, y) != 0;
      integral[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] =
          integral[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  auto masked = [&](int x, int y) {
    const auto at = [&](int xx, int yy) { return integral[static_cast<std::size_t>(yy) * (w + 1) + xx]; };
    const int x1 = x + kSsimWindow;
    const int y1 = y + kSsimWindow;
    return at(x1, y1) - at(x, y1) - at(x1, y) + at(x, y) != 0;
  };

  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      if (masked(x, y)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * ow + x;
      const double ma = mu_a[i];
      const double mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  }
  if (n == 0) return 1.0;
  return std::clamp(sum / static_cast<double>(n), 0.0, 1.0);
}

double SsimProxyProvider::distance(const RgbImage& a, const RgbImage& b, const Mask& exclude) {
  return 1.0 - masked_ssim(a, b, exclude);
}

HttpPerceptualProvider::HttpPerceptualProvider(std::string base_url, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

double HttpPerceptualProvider::distance(const RgbImage& a, const RgbImage& b,
                                        const Mask& exclude) {
  require_same_size(a.width, a.height, b.width, b.height, "images");
  const json body = {{"image_a", base64_encode(encode_png(a))},
                     {"image_b", base64_encode(encode_png(b))},
                     {"mask", base64_encode(encode_png(exclude))}};
  const auto scheme_end = base_url_.find("://");
  const auto path_start = base_url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = base_url_.substr(0, path_start);
  const std::string prefix = path_start == std::string::npos ? "" : base_url_.substr(path_start);
  httplib::Client client(origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  auto res = client.Post(prefix + "/score", body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::ProviderUnavailable,
                "perceptual provider unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::ProviderUnavailable,
                "perceptual provider returned HTTP " + std::to_string(res->status));
  }
  try {
    const double d = json::parse(res->body).at("distance").get<double>();
    if (!(d >= 0.0 && d <= 1.0)) throw Error(ErrorCode::ProviderUnavailable, "distance out of range");
    return d;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, std::string("bad provider reply: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Gate

std::string_view to_string(EvalProfile p) {
  return p == EvalProfile::Synthetic ? "synthetic" : "real";
}

std::optional<EvalProfile> parse_eval_profile(std::string_view s) {
  if (s == "synthetic") return EvalProfile::Synthetic;
  if (s == "real") return EvalProfile::Real;
  return std::nullopt;
}

GateResult locality_gate(const RgbImage& original, const RgbImage& edited, const Mask& target_mask,
                         const GateThresholds& t, PerceptualProvider& provider) {
  GateResult g;
  g.masked_ssim = masked_ssim(original, edited, target_mask);
  g.perceptual = provider.distance(original, edited, target_mask);
  g.passed = g.masked_ssim >= t.min_masked_ssim && g.perceptual <= t.max_masked_perceptual;
  return g;
}

double edit_locality_score(const RgbImage& original, const RgbImage& edited,
                           const Mask& target_mask, PerceptualProvider& provider) {
  return 100.0 * (1.0 - provider.distance(original, edited, target_mask));
}

Mask edit_region_mask(const Scene& src, const Scene& dst, const std::vector<std::string>& ids,
                      int width, int height, int dilation) {
  Mask m(width, height, 0);
  auto mark = [&](const Scene& scene) {
    CameraState cam = scene.camera;
    cam.intrinsics = cam.intrinsics.resized(width, height);
    for (const ObjectState& o : scene.objects) {
      if (!ids.empty() && std::find(ids.begin(), ids.end(), o.id) == ids.end()) continue;
      const PixelRect r = project_obb(o.obb(), cam).bbox;
      if (r.empty()) continue;
      const int x0 = std::max(0, static_cast<int>(std::floor(r.x0)) - dilation);
      const int y0 = std::max(0, static_cast<int>(std::floor(r.y0)) - dilation);
      const int x1 = std::min(width, static_cast<int>(std::ceil(r.x1)) + dilation);
      const int y1 = std::min(height, static_cast<int>(std::ceil(r.y1)) + dilation);
      for (int y = y0; y < y1; ++y) {
        std::fill(m.data.begin() + static_cast<std::ptrdiff_t>(y) * width + x0,
                  m.data.begin() + static_cast<std::ptrdiff_t>(y) * width + x1, 1);
      }
    }
  };
  mark(src);
  mark(dst);
  return m;
}

// ---------------------------------------------------------------------------
// Palette state estimation

const EstimatedObject* EstimatedState::find(std::string_view id) const {
  const auto it = objects.find(std::string(id));
  return it == objects.end() ? nullptr : &it->second;
}

namespace {

constexpr int kBackground = 0;
constexpr int kUnknown = -1;

int class_of(std::size_t object, int shade_index) {
  return 1 + 3 * static_cast<int>(object) + shade_index;
}
int object_of(int cls) { return cls <= 0 ? -1 : (cls - 1) / 3; }

int channel_distance(Rgb a, Rgb b) {
  int d = 0;
  for (int k = 0; k < 3; ++k) d = std::max(d, std::abs(int(a[k]) - int(b[k])));
  return d;
}

// Shaded palette of a scene: three entries per object plus the background.
class Palette {
 public:
  Palette(const Scene& scene, int tolerance) : tolerance_(tolerance) {
    entries_.push_back({kBackgroundColor, kBackground});
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      for (int s = 0; s < 3; ++s) {
        entries_.push_back({shade(scene.objects[i].color, kShadeFactors[s]), class_of(i, s)});
      }
    }
    for (std::size_t a = 0; a < entries_.size(); ++a) {
      for (std::size_t b = a + 1; b < entries_.size(); ++b) {
        if (object_of(entries_[a].cls) == object_of(entries_[b].cls)) continue;
        if (channel_distance(entries_[a].color, entries_[b].color) <= tolerance_) {
          throw Error(ErrorCode::PaletteAmbiguous,
                      fmt::format("palette entries {} and {} are within tolerance",
                                  entries_[a].cls, entries_[b].cls));
        }
      }
    }
  }

  int classify(Rgb c) {
    const std::uint32_t key = (std::uint32_t(c[0]) << 16) | (std::uint32_t(c[1]) << 8) | c[2];
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    int best = kUnknown;
    int best_d = tolerance_ + 1;
    for (const Entry& e : entries_) {
      const int d = channel_distance(c, e.color);
      if (d < best_d) {
        best_d = d;
        best = e.cls;
      }
    }
    cache_.emplace(key, best);
    return best;
  }

  std::vector<int> classify(const RgbImage& img) {
    std::vector<int> out(img.pixel_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = classify(Rgb{img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]});
    }
    return out;
  }

 private:
  struct Entry {
    Rgb color;
    int cls;
  };
  int tolerance_;
  std::vector<Entry> entries_;
  std::unordered_map<std::uint32_t, int> cache_;
};

// Class labels of a render: exact shade lookup by instance.
std::vector<int> render_classes(const Scene& scene, const FrameBuffers& fb) {
  std::vector<int> out(fb.pixel_count(), kBackground);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const std::uint16_t id = fb.instance[p];
    if (id == 0) continue;
    const std::size_t obj = id - 1u;
    const Rgb c{fb.color.data[3 * p], fb.color.data[3 * p + 1], fb.color.data[3 * p + 2]};
    int best = 0;
    int best_d = std::numeric_limits<int>::max();
    for (int s = 0; s < 3; ++s) {
      const int d = channel_distance(c, shade(scene.objects[obj].color, kShadeFactors[s]));
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    out[p] = class_of(obj, best);
  }
  return out;
}

struct IRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // [x0, x1) x [y0, y1)
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  IRect unite(const IRect& o) const {
    if (empty()) return o;
    if (o.empty()) return *this;
    return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
  }
  bool intersects(const IRect& o) const {
    return !empty() && !o.empty() && x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
};

IRect to_irect(const PixelRect& r, int w, int h) {
  if (r.empty()) return {};
  return {std::max(0, static_cast<int>(std::floor(r.x0)) - 1),
          std::max(0, static_cast<int>(std::floor(r.y0)) - 1),
          std::min(w, static_cast<int>(std::ceil(r.x1)) + 1),
          std::min(h, static_cast<int>(std::ceil(r.y1)) + 1)};
}

struct ObjectPose {
  Vec3 center;
  Rotation rotation;
  double scale = 1.0;
  std::string support_id;
};

class Estimator {
 public:
  Estimator(const RgbImage& image, const Scene& source, const EstimateOptions& options)
      : options_(options),
        w_(image.width),
        h_(image.height),
        source_(source),
        hyp_(source),
        palette_(source, options.color_tolerance) {
    hyp_.camera.intrinsics = source.camera.intrinsics.resized(w_, h_);
    obs_ = palette_.classify(image);
    const std::size_t n = source.objects.size();
    counts_.assign(n, 0);
    obs_box_.assign(n, IRect{});
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const int o = object_of(obs_[static_cast<std::size_t>(y) * w_ + x]);
        if (o < 0) continue;
        ++counts_[o];
        obs_box_[o] = obs_box_[o].unite(IRect{x, y, x + 1, y + 1});
      }
    }
    present_.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) present_[i] = counts_[i] >= options.min_present_pixels;
    poses_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const ObjectState& o = source.objects[i];
      poses_[i] = {o.center, o.rotation, 1.0, o.support_id.value_or("")};
    }
    base_size_.resize(n);
    for (std::size_t i = 0; i < n; ++i) base_size_[i] = source.objects[i].size;
  }

  EstimatedState run() {
    EstimatedState out;
    const std::size_t n = source_.objects.size();
    std::vector<bool> refined(n, false);
    std::vector<std::size_t> residual(n, 0);
    if (options_.fit_camera) {
      fit_camera(out);
    } else {
      // Objects whose pixels disagree with the current hypothesis, worst
      // first; later objects see the earlier fits.
      for (int pass = 0; pass < 2; ++pass) {
        const auto full = classes_for(hyp_, all_present(), full_frame());
        std::vector<std::pair<std::size_t, std::size_t>> order;
        for (std::size_t i = 0; i < n; ++i) {
          if (!present_[i]) continue;
          const std::size_t m = object_mismatch(full, i, full_frame());
          if (m > 0) order.emplace_back(m, i);
        }
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
          return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        for (const auto& [m, i] : order) {
          if (refine(i)) refined[i] = true;
        }
      }
      const auto full = classes_for(hyp_, all_present(), full_frame());
      for (std::size_t i = 0; i < n; ++i) {
        if (present_[i]) residual[i] = object_mismatch(full, i, full_frame());
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      EstimatedObject e;
      e.id = source_.objects[i].id;
      e.present = present_[i];
      e.pixels = counts_[i];
      e.center = poses_[i].center;
      e.rotation = poses_[i].rotation;
      e.scale = poses_[i].scale;
      e.support_id = poses_[i].support_id;
      e.refined = refined[i];
      e.residual = residual[i];
      out.objects.emplace(e.id, e);
    }
    return out;
  }

 private:
  std::vector<std::size_t> all_present() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < present_.size(); ++i) {
      if (present_[i]) idx.push_back(i);
    }
    return idx;
  }

  IRect full_frame() const { return IRect{0, 0, w_, h_}; }

  // Class labels of `roi` only: the camera's principal point is shifted so
  // the render covers just that window.
  std::vector<int> classes_for(const Scene& scene, std::vector<std::size_t> only,
                               const IRect& roi) {
    RenderOptions opt;
    opt.only = std::move(only);
    ++renders_;
    if (roi.x0 == 0 && roi.y0 == 0 && roi.x1 == w_ && roi.y1 == h_) {
      return render_classes(scene, render(scene, w_, h_, opt));
    }
    Scene& cropped = crop_scratch_;
    cropped = scene;
    Intrinsics& k = cropped.camera.intrinsics;
    k.cx -= roi.x0;
    k.cy -= roi.y0;
    k.width = roi.x1 - roi.x0;
    k.height = roi.y1 - roi.y0;
    return render_classes(cropped, render(cropped, k.width, k.height, opt));
  }

  // `ren` covers exactly `roi`.
  std::size_t object_mismatch(const std::vector<int>& ren, std::size_t i, const IRect& roi) const {
    const int obj = static_cast<int>(i);
    const int rw = roi.x1 - roi.x0;
    std::size_t m = 0;
    for (int y = roi.y0; y < roi.y1; ++y) {
      for (int x = roi.x0; x < roi.x1; ++x) {
        const int a = obs_[static_cast<std::size_t>(y) * w_ + x];
        const int b = ren[static_cast<std::size_t>(y - roi.y0) * rw + (x - roi.x0)];
        if (a != b && (object_of(a) == obj || object_of(b) == obj)) ++m;
      }
    }
    return m;
  }

  void apply_pose(Scene& scene, std::size_t i, const ObjectPose& pose) const {
    ObjectState& o = scene.objects[i];
    o.center = pose.center;
    o.rotation = pose.rotation;
    o.size = base_size_[i] * pose.scale;
    o.support_id = pose.support_id;
  }

  // Mismatch of object i at `pose`, counted where either the observation or
  // the hypothesis shows it.
  std::size_t score(std::size_t i, const ObjectPose& pose) {
    Scene& s = scratch_;
    s = hyp_;
    apply_pose(s, i, pose);
    const IRect own = to_irect(project_obb(s.objects[i].obb(), s.camera).bbox, w_, h_);
    const IRect roi = own.unite(obs_box_[i]);
    std::vector<std::size_t> only;
    for (std::size_t j = 0; j < s.objects.size(); ++j) {
      if (!present_[j]) continue;
      if (j == i ||
          to_irect(project_obb(s.objects[j].obb(), s.camera).bbox, w_, h_).intersects(roi)) {
        only.push_back(j);
      }
    }
    if (roi.empty()) return 0;
    return object_mismatch(classes_for(s, std::move(only), roi), i, roi);
  }

  struct Hypothesis {
    std::string support_id;
    double height = 0.0;
  };

  std::vector<Hypothesis> support_hypotheses(std::size_t i) const {
    std::vector<Hypothesis> out;
    out.push_back({std::string(kFloorId), 0.0});
    for (const Surface& s : hyp_.surfaces) out.push_back({s.id, s.height});
    for (std::size_t j = 0; j < hyp_.objects.size(); ++j) {
      if (j == i || !hyp_.objects[j].is_receptacle) continue;
      out.push_back({hyp_.objects[j].id, support_area(hyp_, hyp_.objects[j].id).height});
    }
    return out;
  }

  // Candidate footprint centers from the observed mask on the plane
  // z = height: the bottom-edge midpoint pushed away from the camera, and the
  // top-edge midpoint (on the top face) pulled back toward it. The second
  // survives occluders in front of the object's base.
  std::vector<Vec2> coarse_positions(std::size_t i, double height) const {
    std::vector<Vec2> out;
    const IRect& box = obs_box_[i];
    if (box.empty()) return out;
    const int obj = static_cast<int>(i);
    const Vec3& size = base_size_[i];
    const double reach = (size.x() + size.y()) / 4.0;
    const double top = height + 2.0 * source_.objects[i].half_height();
    auto row_mid = [&](int y) -> std::optional<double> {
      int x_min = w_, x_max = -1;
      for (int x = box.x0; x < box.x1; ++x) {
        if (object_of(obs_[static_cast<std::size_t>(y) * w_ + x]) == obj) {
          x_min = std::min(x_min, x);
          x_max = std::max(x_max, x);
        }
      }
      if (x_max < 0) return std::nullopt;
      return (x_min + x_max + 1) / 2.0;
    };
    auto cast = [&](const Vec2& pixel, double plane, double push) -> std::optional<Vec2> {
      const CameraState& cam = hyp_.camera;
      const Vec3 origin = cam.position();
      const Vec3 dir = back_project(pixel, 1.0, cam) - origin;
      if (dir.z() >= -1e-9) return std::nullopt;
      const double t = (plane - origin.z()) / dir.z();
      if (t <= 0.0) return std::nullopt;
      const Vec3 hit = origin + t * dir;
      Vec2 horizontal = dir.head<2>();
      if (horizontal.norm() < 1e-9) return Vec2(hit.head<2>());
      horizontal.normalize();
      return Vec2(hit.head<2>() + horizontal * push);
    };
    if (const auto mid = row_mid(box.y1 - 1)) {
      if (auto p = cast(Vec2(*mid, box.y1), height, reach)) out.push_back(*p);
    }
    if (const auto mid = row_mid(box.y0)) {
      if (auto p = cast(Vec2(*mid, box.y0), top, -reach)) out.push_back(*p);
    }
    return out;
  }

  ObjectPose pose_from(std::size_t i, const Hypothesis& hyp, double x, double y, double yaw,
                       double log_scale) const {
    const ObjectState& src = source_.objects[i];
    ObjectPose p;
    p.scale = std::exp(log_scale);
    p.rotation = Rotation::about_z(yaw) * src.rotation;
    const double half_height = src.obb().extent_along(Vec3::UnitZ()) * p.scale;
    p.center = Vec3(x, y, hyp.height + half_height);
    p.support_id = hyp.support_id;
    return p;
  }

  // Pattern search over (x, y, yaw, log scale) for one support hypothesis.
  std::pair<std::size_t, ObjectPose> search(std::size_t i, const Hypothesis& hyp,
                                            std::array<double, 4> x) {
    auto eval = [&](const std::array<double, 4>& v) {
      return score(i, pose_from(i, hyp, v[0], v[1], v[2], v[3]));
    };
    const int dims = options_.fit_scale ? 4 : 3;
    std::array<double, 4> step{0.04, 0.04, deg_to_rad(6.0), 0.08};
    const std::array<double, 4> min_step{0.0002, 0.0002, deg_to_rad(0.05), 0.0005};
    std::size_t best = eval(x);
    int evals = 0;
    while (best > 0 && evals < 600) {
      bool improved = false;
      for (int d = 0; d < dims && best > 0; ++d) {
        for (double sign : {1.0, -1.0}) {
          auto cand = x;
          cand[d] += sign * step[d];
          const std::size_t s = eval(cand);
          ++evals;
          if (s < best) {
            best = s;
            x = cand;
            improved = true;
            break;
          }
        }
      }
      if (improved) continue;
      bool any = false;
      for (int d = 0; d < dims; ++d) {
        if (step[d] > min_step[d]) {
          step[d] /= 2.0;
          any = true;
        }
      }
      if (!any) break;
    }
    return {best, pose_from(i, hyp, x[0], x[1], x[2], x[3])};
  }

  bool refine(std::size_t i) {
    const ObjectState& src = source_.objects[i];
    const ObjectPose current = poses_[i];
    const std::size_t current_score = score(i, current);
    if (current_score == 0) return false;

    std::size_t best_score = current_score;
    ObjectPose best = current;
    for (const Hypothesis& hyp : support_hypotheses(i)) {
      const bool same_support = hyp.support_id == current.support_id;
      std::vector<std::array<double, 4>> starts;
      // Boxes repeat under a half turn, so half a circle of yaws suffices.
      // The best few scan results seed the local search.
      std::vector<std::pair<std::size_t, std::array<double, 4>>> scan;
      for (const Vec2& c : coarse_positions(i, hyp.height)) {
        if (!same_support) {
          const Rect2 r = support_area(hyp_, hyp.support_id).bounds();
          if (c.x() < r.min_x - 0.2 || c.x() > r.max_x + 0.2 || c.y() < r.min_y - 0.2 ||
              c.y() > r.max_y + 0.2) {
            continue;
          }
        }
        const std::vector<double> scales =
            options_.fit_scale ? std::vector<double>{0.5, 0.7071, 1.0, 1.4142, 2.0}
                               : std::vector<double>{1.0};
        for (double s : scales) {
          for (int k = 0; k < 12; ++k) {
            const std::array<double, 4> v{c.x(), c.y(), deg_to_rad(15.0 * k), std::log(s)};
            scan.emplace_back(score(i, pose_from(i, hyp, v[0], v[1], v[2], v[3])), v);
          }
        }
      }
      std::stable_sort(scan.begin(), scan.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      for (std::size_t k = 0; k < std::min<std::size_t>(3, scan.size()); ++k) {
        starts.push_back(scan[k].second);
      }
      if (same_support) {
        const double yaw = yaw_of(current.rotation) - yaw_of(src.rotation);
        starts.push_back({current.center.x(), current.center.y(), yaw, std::log(current.scale)});
      }
      for (const auto& start : starts) {
        const auto [sc, pose] = search(i, hyp, start);
        if (sc < best_score) {
          best_score = sc;
          best = pose;
        }
        if (best_score == 0) break;
      }
      if (best_score == 0) break;
    }
    if (best_score >= current_score) return false;
    poses_[i] = best;
    apply_pose(hyp_, i, best);
    return true;
  }

  // Orbit about the source pivot by `angle`, then dolly along the optical
  // axis by `dolly` (positive = forward).
  CameraState camera_at(double angle, double dolly) const {
    CameraState cam = hyp_.camera;
    const Vec3 pivot = orbit_pivot(source_);
    const Rotation turn = Rotation::about_z(angle);
    const Vec3 pos = pivot + turn * (cam.position() - pivot);
    cam.rotation = cam.rotation * turn.transpose();
    cam.translation = -(cam.rotation * pos);
    cam.translation.z() -= dolly;
    return cam;
  }

  std::size_t camera_score(double angle, double dolly) {
    Scene& s = scratch_;
    s = hyp_;
    s.camera = camera_at(angle, dolly);
    const auto ren = classes_for(s, all_present(), full_frame());
    std::size_t m = 0;
    for (std::size_t p = 0; p < ren.size(); ++p) m += ren[p] != obs_[p];
    return m;
  }

  void fit_camera(EstimatedState& out) {
    double best_a = 0.0, best_d = 0.0;
    std::size_t best = camera_score(0.0, 0.0);
    for (int k = -30; k <= 30; ++k) {
      const double a = deg_to_rad(3.0 * k);
      const std::size_t s = camera_score(a, 0.0);
      if (s < best) {
        best = s;
        best_a = a;
      }
    }
    for (int k = -24; k <= 24; ++k) {
      const double d = 0.05 * k;
      const std::size_t s = camera_score(best_a, d);
      if (s < best) {
        best = s;
        best_d = d;
      }
    }
    std::array<double, 2> x{best_a, best_d};
    std::array<double, 2> step{deg_to_rad(1.5), 0.025};
    const std::array<double, 2> min_step{deg_to_rad(0.005), 0.0001};
    int evals = 0;
    while (best > 0 && evals < 400) {
      bool improved = false;
      for (int d = 0; d < 2 && !improved; ++d) {
        for (double sign : {1.0, -1.0}) {
          auto cand = x;
          cand[d] += sign * step[d];
          const std::size_t s = camera_score(cand[0], cand[1]);
          ++evals;
          if (s < best) {
            best = s;
            x = cand;
            improved = true;
            break;
          }
        }
      }
      if (improved) continue;
      if (step[0] <= min_step[0] && step[1] <= min_step[1]) break;
      step[0] = std::max(min_step[0], step[0] / 2.0);
      step[1] = std::max(min_step[1], step[1] / 2.0);
    }
    out.orbit = x[0];
    out.dolly = x[1];
    CameraState cam = camera_at(x[0], x[1]);
    cam.intrinsics = source_.camera.intrinsics;
    out.camera = cam;
  }

  EstimateOptions options_;
  int w_;
  int h_;
  const Scene& source_;
  Scene hyp_;
  Scene scratch_;
  Scene crop_scratch_;
  Palette palette_;
  std::vector<int> obs_;
  std::vector<std::size_t> counts_;
  std::vector<IRect> obs_box_;
  std::vector<bool> present_;
  std::vector<ObjectPose> poses_;
  std::vector<Vec3> base_size_;
  std::size_t renders_ = 0;
};

}  // namespace

EstimatedState estimate_state(const RgbImage& edited, const Scene& source,
                              const EstimateOptions& options) {
  if (edited.width <= 0 || edited.height <= 0) {
    throw Error(ErrorCode::DimensionMismatch, "empty image");
  }
  const Intrinsics& k = source.camera.intrinsics;
  if (edited.width * k.height != edited.height * k.width) {
    throw Error(ErrorCode::DimensionMismatch, "image aspect differs from the camera");
  }
  return Estimator(edited, source, options).run();
}

// ---------------------------------------------------------------------------
// Metrics

EvalCase eval_case_from_sample(const Sample& s) {
  return {s.op_kind, s.source_scene, s.instruction.transform, s.ideal_dst_scene, s.instruction};
}

namespace {

double wrap_half_turn(double a) {
  // Box rotations repeat every pi about the vertical axis.
  a = std::fmod(a, kPi);
  if (a > kPi / 2.0) a -= kPi;
  if (a < -kPi / 2.0) a += kPi;
  return a;
}

double yaw_delta(const Rotation& from, const Rotation& to) {
  return yaw_of(to * from.transpose());
}

// Geodesic error modulo the box's half-turn symmetry about its vertical axis.
double symmetric_rotation_error(const Rotation& estimate, const Rotation& ideal) {
  const Rotation flipped = ideal * Rotation::about_z(kPi);
  return std::min(geodesic_distance(estimate, ideal), geodesic_distance(estimate, flipped));
}

const EstimatedObject& require_estimate(const EstimatedState& e, const std::string& id) {
  const EstimatedObject* o = e.find(id);
  if (!o || !o->present) {
    throw Error(ErrorCode::EstimationUnavailable, "'" + id + "' not found in the image");
  }
  return *o;
}

std::size_t ideal_pixels(const Scene& ideal, const std::string& id, int w, int h) {
  const auto idx = ideal.index_of(id);
  if (!idx) return 0;
  const FrameBuffers fb = render(ideal, w, h);
  return instance_pixel_counts(fb, ideal.objects.size())[*idx + 1];
}

std::size_t image_pixels_of(const RgbImage& img, const ObjectState& o, int tolerance) {
  std::array<Rgb, 3> shades{};
  for (int s = 0; s < 3; ++s) shades[s] = shade(o.color, kShadeFactors[s]);
  std::size_t n = 0;
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const Rgb c{img.data[3 * p], img.data[3 * p + 1], img.data[3 * p + 2]};
    for (const Rgb& s : shades) {
      if (channel_distance(c, s) <= tolerance) {
        ++n;
        break;
      }
    }
  }
  return n;
}

}  // namespace

ComplianceResult instruction_compliance(const EstimatedState& e, const EvalCase& c,
                                        const RgbImage& edited, const ComplianceTolerances& tol) {
  const SceneTransform& t = c.transform;
  ComplianceResult r;
  try {
    switch (c.kind) {
      case OpKind::CM: {
        const EstimatedObject& o = require_estimate(e, t.target_id);
        const Vec3 commanded = c.ideal_dst.find(t.target_id)->center - c.source.find(t.target_id)->center;
        const Vec3 achieved = o.center - c.source.find(t.target_id)->center;
        const double an = achieved.norm();
        const double cn = commanded.norm();
        const double cosine = an > 1e-9 && cn > 1e-9 ? achieved.dot(commanded) / (an * cn) : 0.0;
        const double ratio = cn > 1e-9 ? an / cn : 0.0;
        r.compliant = cosine >= tol.direction_cosine && ratio >= tol.magnitude_min &&
                      ratio <= tol.magnitude_max;
        r.detail = fmt::format("cosine {:.3f}, magnitude ratio {:.3f}", cosine, ratio);
        break;
      }
      case OpKind::OP:
      case OpKind::RP: {
        const EstimatedObject& o = require_estimate(e, t.target_id);
        const EstimatedObject& ref = require_estimate(e, *t.reference_id);
        const Vec3 src = c.source.find(t.target_id)->center;
        const Vec3 ideal = c.ideal_dst.find(t.target_id)->center;
        bool relation = false;
        if (c.kind == OpKind::OP) {
          const Vec3 axis = relation_axis(c.source.camera, c.instruction.action.relation.value());
          relation = (o.center - ref.center).head<2>().dot(axis.head<2>()) > 0.0;
        } else {
          ObjectState rec = *c.source.find(*t.reference_id);
          rec.center = ref.center;
          rec.rotation = ref.rotation;
          const Obb interior = receptacle_interior(rec);
          const Vec3 local = interior.rotation.transpose() * (o.center - interior.center);
          relation = std::abs(local.x()) <= interior.half_extents.x() &&
                     std::abs(local.y()) <= interior.half_extents.y();
        }
        const double miss = (o.center - ideal).norm();
        const double travel = (src - ideal).norm();
        const bool plausible = miss <= tol.plausible_fraction * travel;
        r.compliant = relation && plausible;
        r.detail = fmt::format("relation {}, {:.3f} m from ideal (source {:.3f} m)",
                               relation ? "holds" : "fails", miss, travel);
        break;
      }
      case OpKind::OR: {
        const EstimatedObject& o = require_estimate(e, t.target_id);
        const Rotation& src = c.source.find(t.target_id)->rotation;
        const double commanded = yaw_delta(src, c.ideal_dst.find(t.target_id)->rotation);
        const double achieved = yaw_delta(src, o.rotation);
        const double err = std::abs(wrap_half_turn(achieved - commanded));
        r.compliant = rad_to_deg(err) <= tol.rotation_deg;
        r.detail = fmt::format("yaw {:.1f} deg vs {:.1f} deg commanded", rad_to_deg(achieved),
                               rad_to_deg(commanded));
        break;
      }
      case OpKind::SR: {
        const EstimatedObject* target = e.find(t.target_id);
        const bool gone = !target || !target->present;
        std::vector<std::string> lost;
        const FrameBuffers ideal = render(c.ideal_dst, edited.width, edited.height);
        const auto ideal_counts = instance_pixel_counts(ideal, c.ideal_dst.objects.size());
        for (std::size_t i = 0; i < c.ideal_dst.objects.size(); ++i) {
          if (ideal_counts[i + 1] < tol.bystander_min_pixels) continue;
          const EstimatedObject* o = e.find(c.ideal_dst.objects[i].id);
          if (!o || !o->present) lost.push_back(c.ideal_dst.objects[i].id);
        }
        r.compliant = gone && lost.empty();
        r.detail = gone ? (lost.empty() ? "target removed" : "bystander missing: " + lost.front())
                        : "target still present";
        break;
      }
      case OpKind::OS: {
        require_estimate(e, t.target_id);
        const ObjectState& o = *c.source.find(t.target_id);
        const std::size_t src_px = ideal_pixels(c.source, t.target_id, edited.width, edited.height);
        const std::size_t dst_px = ideal_pixels(c.ideal_dst, t.target_id, edited.width, edited.height);
        const std::size_t obs_px = image_pixels_of(edited, o, 24);
        if (src_px == 0 || dst_px == 0) {
          throw Error(ErrorCode::EstimationUnavailable, "target not visible in the reference renders");
        }
        const double expected = static_cast<double>(dst_px) / static_cast<double>(src_px);
        const double observed = static_cast<double>(obs_px) / static_cast<double>(src_px);
        r.compliant = observed >= tol.area_ratio_min * expected &&
                      observed <= tol.area_ratio_max * expected;
        r.detail = fmt::format("area ratio {:.3f} vs {:.3f} expected", observed, expected);
        break;
      }
      case OpKind::PC: {
        if (!e.camera) throw Error(ErrorCode::EstimationUnavailable, "camera was not fitted");
        const PerspectiveMode mode = c.instruction.action.mode.value();
        const double mag = c.instruction.action.magnitude;
        double achieved = 0.0;
        switch (mode) {
          case PerspectiveMode::OrbitLeft: achieved = -e.orbit; break;
          case PerspectiveMode::OrbitRight: achieved = e.orbit; break;
          case PerspectiveMode::ZoomIn: achieved = e.dolly; break;
          case PerspectiveMode::ZoomOut: achieved = -e.dolly; break;
        }
        const double ratio = mag > 0.0 ? achieved / mag : 0.0;
        r.compliant = ratio >= tol.magnitude_min && ratio <= tol.magnitude_max;
        r.detail = fmt::format("{} achieved {:.4f} of {:.4f}", to_string(mode), achieved, mag);
        break;
      }
    }
  } catch (const Error& err) {
    if (err.code() != ErrorCode::EstimationUnavailable) throw;
    r.compliant = false;
    r.detail = err.what();
  }
  return r;
}

AccuracyBreakdown spatial_accuracy(const EstimatedState& e, const EvalCase& c) {
  const SceneTransform& t = c.transform;
  AccuracyBreakdown b;
  std::vector<double> parts;
  if (c.kind == OpKind::SR) {
    const EstimatedObject* o = e.find(t.target_id);
    b.translation_error = (o && o->present) ? 1.0 : 0.0;
    parts.push_back(b.translation_error);
  } else if (c.kind == OpKind::PC) {
    if (!e.camera) throw Error(ErrorCode::EstimationUnavailable, "camera was not fitted");
    const Vec3 ideal = c.ideal_dst.camera.position();
    const Vec3 src = c.source.camera.position();
    b.translation_error =
        (e.camera->position() - ideal).norm() / std::max((ideal - src).norm(), 0.05);
    b.rotation_error = geodesic_distance(e.camera->rotation, c.ideal_dst.camera.rotation) / kPi;
    parts = {b.translation_error, *b.rotation_error};
  } else {
    const EstimatedObject& o = require_estimate(e, t.target_id);
    const ObjectState& ideal = *c.ideal_dst.find(t.target_id);
    const ObjectState& src = *c.source.find(t.target_id);
    b.translation_error =
        (o.center - ideal.center).norm() / std::max((ideal.center - src.center).norm(), 0.05);
    b.rotation_error = symmetric_rotation_error(o.rotation, ideal.rotation) / kPi;
    parts = {b.translation_error, *b.rotation_error};
    if (c.kind == OpKind::OP || c.kind == OpKind::RP) {
      const EstimatedObject& ref = require_estimate(e, *t.reference_id);
      const ObjectState& ref_src = *c.source.find(*t.reference_id);
      const double extent = std::max(ref_src.size.x(), ref_src.size.y());
      b.relative_error = ((o.center - ref.center) - (ideal.center - ref_src.center)).norm() / extent;
      parts.push_back(*b.relative_error);
    }
  }
  double mean = 0.0;
  for (double p : parts) mean += std::min(1.0, p);
  mean /= static_cast<double>(parts.size());
  b.score = 100.0 * (1.0 - std::min(1.0, mean));
  b.detail = fmt::format("e_t {:.4f}", b.translation_error);
  if (b.rotation_error) b.detail += fmt::format(", e_r {:.4f}", *b.rotation_error);
  if (b.relative_error) b.detail += fmt::format(", e_rel {:.4f}", *b.relative_error);
  return b;
}

bool palette_appearance_consistent(const RgbImage& edited, const EvalCase& c, int tolerance) {
  const int w = edited.width;
  const int h = edited.height;
  const SceneTransform& t = c.transform;
  auto color_at = [&](std::size_t p) {
    return Rgb{edited.data[3 * p], edited.data[3 * p + 1], edited.data[3 * p + 2]};
  };
  if (c.kind == OpKind::PC) {
    // Every object pixel of the new view carries some palette color.
    Palette palette(c.source, tolerance);
    const FrameBuffers ideal = render(c.ideal_dst, w, h);
    std::size_t total = 0, ok = 0;
    for (std::size_t p = 0; p < ideal.pixel_count(); ++p) {
      if (ideal.instance[p] == 0) continue;
      ++total;
      ok += palette.classify(color_at(p)) > 0;
    }
    return total > 0 && ok >= 0.9 * static_cast<double>(total);
  }
  if (c.kind == OpKind::SR) {
    // The vacated region shows no trace of the target and matches the scene
    // behind it.
    const auto idx = c.source.index_of(t.target_id);
    if (!idx) return false;
    const FrameBuffers before = render(c.source, w, h);
    const FrameBuffers after = render(c.ideal_dst, w, h);
    const ObjectState& target = c.source.objects[*idx];
    std::size_t region = 0, matched = 0, residue = 0;
    for (std::size_t p = 0; p < before.pixel_count(); ++p) {
      if (before.instance[p] != *idx + 1) continue;
      ++region;
      const Rgb got = color_at(p);
      const Rgb want{after.color.data[3 * p], after.color.data[3 * p + 1], after.color.data[3 * p + 2]};
      matched += channel_distance(got, want) <= tolerance;
      for (int s = 0; s < 3; ++s) {
        if (channel_distance(got, shade(target.color, kShadeFactors[s])) <= tolerance) {
          ++residue;
          break;
        }
      }
    }
    return region > 0 && residue == 0 && matched >= 0.9 * static_cast<double>(region);
  }
  // Modal color over the target's expected footprint is one of its shades.
  const auto idx = c.ideal_dst.index_of(t.target_id);
  if (!idx) return false;
  const FrameBuffers ideal = render(c.ideal_dst, w, h);
  std::map<std::uint32_t, std::size_t> histogram;
  for (std::size_t p = 0; p < ideal.pixel_count(); ++p) {
    if (ideal.instance[p] != *idx + 1) continue;
    const Rgb v = color_at(p);
    ++histogram[(std::uint32_t(v[0]) << 16) | (std::uint32_t(v[1]) << 8) | v[2]];
  }
  if (histogram.empty()) return false;
  const auto mode = std::max_element(histogram.begin(), histogram.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
  const Rgb modal{std::uint8_t(mode->first >> 16), std::uint8_t(mode->first >> 8),
                  std::uint8_t(mode->first)};
  const Rgb original = c.source.find(t.target_id)->color;
  for (int s = 0; s < 3; ++s) {
    if (channel_distance(modal, shade(original, kShadeFactors[s])) <= tolerance) return true;
  }
  return false;
}

std::optional<double> judge_appearance_consistency(const EvalCase& c, const RgbImage& source,
                                                   const RgbImage& edited, JudgeClient& judge) {
  JudgeRequest req;
  req.task = c.kind == OpKind::SR ? JudgeTask::AppearanceRemoval : JudgeTask::AppearanceTransform;
  req.images = {encode_png(source), encode_png(edited)};
  auto box = [&](const Scene& s) -> json {
    const ObjectState* o = s.find(c.transform.target_id);
    if (!o) return nullptr;
    const PixelRect r = project_obb(o->obb(), s.camera).bbox;
    if (r.empty()) return nullptr;
    return json::array({format_real(r.x0), format_real(r.y0), format_real(r.x1), format_real(r.y1)});
  };
  req.metadata = {{"caption", c.instruction.caption},
                  {"op_kind", std::string(to_string(c.kind))},
                  {"target_category", c.instruction.target.category},
                  {"target_box_source", box(c.source)},
                  {"target_box_target", box(c.ideal_dst)}};
  req.request_id = "ac:" + c.instruction.caption;
  try {
    return judge.submit(req).decision == JudgeDecision::Accept ? 100.0 : 0.0;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::JudgeUnavailable || e.code() == ErrorCode::SchemaViolation) {
      return std::nullopt;
    }
    throw;
  }
}

// ---------------------------------------------------------------------------
// Per-sample evaluation

namespace {

std::vector<std::string> edited_ids(const EvalCase& c) {
  if (c.kind == OpKind::PC) return {};
  return {c.transform.target_id};
}

}  // namespace

EvalResult evaluate_sample(const Sample& sample, const RgbImage& source_image,
                           const RgbImage& edited, const EvalConfig& config,
                           PerceptualProvider& provider, JudgeClient* judge) {
  return evaluate_case(sample.sample_id, eval_case_from_sample(sample), source_image, edited,
                       config, provider, judge);
}

EvalResult evaluate_case(const std::string& sample_id, const EvalCase& c,
                         const RgbImage& source_image, const RgbImage& edited,
                         const EvalConfig& config, PerceptualProvider& provider,
                         JudgeClient* judge, const EstimatedState* estimate) {
  EvalResult r;
  r.sample_id = sample_id;
  r.dataset = std::string(dataset_label(config.gate.profile));
  r.op_kind = c.kind;
  if (edited.width != source_image.width || edited.height != source_image.height) {
    r.notes.push_back(fmt::format("candidate is {}x{}, expected {}x{}", edited.width, edited.height,
                                  source_image.width, source_image.height));
    return r;
  }
  const Mask mask = edit_region_mask(c.source, c.ideal_dst, edited_ids(c), edited.width,
                                     edited.height, config.mask_dilation);
  const GateResult gate = locality_gate(source_image, edited, mask, config.gate, provider);
  r.gate_passed = gate.passed;
  r.masked_ssim = gate.masked_ssim;
  r.perceptual = gate.perceptual;
  r.el = 100.0 * (1.0 - gate.perceptual);

  if (gate.passed) {
    EstimatedState est;
    if (estimate) {
      est = *estimate;
    } else {
      EstimateOptions opt;
      opt.color_tolerance = config.color_tolerance;
      opt.fit_camera = c.kind == OpKind::PC;
      opt.fit_scale = c.kind == OpKind::OS;
      est = estimate_state(edited, c.source, opt);
    }
    const ComplianceResult ic = instruction_compliance(est, c, edited, config.tolerances);
    r.ic = ic.compliant ? 100.0 : 0.0;
    r.notes.push_back("ic: " + ic.detail);
    try {
      const AccuracyBreakdown sa = spatial_accuracy(est, c);
      r.sa = sa.score;
      r.translation_error_norm = sa.translation_error;
      r.rotation_error = sa.rotation_error.value_or(0.0) * kPi;
      r.relative_pose_error = sa.relative_error;
      r.notes.push_back("sa: " + sa.detail);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EstimationUnavailable) throw;
      r.notes.push_back(std::string("sa: ") + e.what());
    }
  } else {
    r.notes.push_back(fmt::format("gate failed: masked ssim {:.4f}, perceptual {:.4f}",
                                  gate.masked_ssim, gate.perceptual));
  }

  if (judge) {
    r.ac = judge_appearance_consistency(c, source_image, edited, *judge);
    r.ac_source = "judge";
    if (!r.ac) r.notes.push_back("ac: judge unavailable, unscored");
  } else if (!estimate) {
    r.ac = palette_appearance_consistent(edited, c, config.color_tolerance) ? 100.0 : 0.0;
    r.ac_source = "palette";
  } else {
    r.notes.push_back("ac: needs the judge for real images, unscored");
  }
  return r;
}

std::string_view dataset_label(EvalProfile p) {
  return p == EvalProfile::Synthetic ? "GSI-Syn" : "GSI-Real";
}

json estimated_state_to_json(const EstimatedState& s) {
  json objects = json::array();
  for (const auto& [id, o] : s.objects) {
    objects.push_back({{"id", id},
                       {"present", o.present},
                       {"center", vec_to_json(o.center)},
                       {"rotation", rotation_to_json(o.rotation)},
                       {"scale", format_real(o.scale)}});
  }
  json j = {{"objects", objects}};
  if (s.camera) {
    j["orbit"] = format_real(s.orbit);
    j["dolly"] = format_real(s.dolly);
  }
  return j;
}

EstimatedState estimated_state_from_json(const json& j) {
  EstimatedState s;
  try {
    for (const json& o : j.at("objects")) {
      EstimatedObject e;
      e.id = o.at("id").get<std::string>();
      e.present = o.value("present", true);
      if (e.present) {
        e.center = vec3_from_json(o.at("center"));
        e.rotation = o.contains("rotation") ? rotation_from_json(o.at("rotation")) : Rotation();
        e.scale = o.contains("scale") ? real_from_json(o.at("scale")) : 1.0;
        e.refined = true;
      }
      s.objects[e.id] = e;
    }
    if (j.contains("orbit") || j.contains("dolly")) {
      s.orbit = j.contains("orbit") ? real_from_json(j.at("orbit")) : 0.0;
      s.dolly = j.contains("dolly") ? real_from_json(j.at("dolly")) : 0.0;
      s.camera = CameraState{};
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("estimated state: ") + e.what());
  }
  return s;
}

EvalResult missing_result(const Sample& sample, const std::string& dataset) {
  return missing_result(sample.sample_id, sample.op_kind, dataset);
}

EvalResult missing_result(const std::string& sample_id, OpKind kind, const std::string& dataset) {
  EvalResult r;
  r.sample_id = sample_id;
  r.dataset = dataset;
  r.op_kind = kind;
  r.missing = true;
  r.ac = 0.0;
  r.ac_source = "missing";
  r.notes.push_back("missing");
  return r;
}

json eval_result_to_json(const EvalResult& r) {
  return {{"sample_id", r.sample_id},
          {"dataset", r.dataset},
          {"op_kind", std::string(to_string(r.op_kind))},
          {"missing", r.missing},
          {"gate_passed", r.gate_passed},
          {"masked_ssim", r.masked_ssim},
          {"perceptual", r.perceptual},
          {"ic", r.ic},
          {"sa", r.sa},
          {"el", r.el},
          {"ac", r.ac ? json(*r.ac) : json(nullptr)},
          {"ac_source", r.ac_source},
          {"translation_error_norm", r.translation_error_norm},
          {"rotation_error", r.rotation_error},
          {"relative_pose_error", r.relative_pose_error ? json(*r.relative_pose_error) : json(nullptr)},
          {"notes", r.notes}};
}

EvalResult eval_result_from_json(const json& j) {
  EvalResult r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  const auto kind = parse_op_kind(j.at("op_kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::ParseError, "bad op_kind", "op_kind");
  r.op_kind = *kind;
  r.missing = j.at("missing").get<bool>();
  r.gate_passed = j.at("gate_passed").get<bool>();
  r.masked_ssim = j.at("masked_ssim").get<double>();
  r.perceptual = j.at("perceptual").get<double>();
  r.ic = j.at("ic").get<double>();
  r.sa = j.at("sa").get<double>();
  r.el = j.at("el").get<double>();
  if (!j.at("ac").is_null()) r.ac = j.at("ac").get<double>();
  r.ac_source = j.value("ac_source", std::string());
  r.translation_error_norm = j.at("translation_error_norm").get<double>();
  r.rotation_error = j.at("rotation_error").get<double>();
  if (!j.at("relative_pose_error").is_null()) {
    r.relative_pose_error = j.at("relative_pose_error").get<double>();
  }
  r.notes = j.value("notes", std::vector<std::string>{});
  return r;
}

// ---------------------------------------------------------------------------
// Reports

const ReportRow* Report::find(std::string_view dataset, std::string_view group) const {
  for (const ReportRow& r : rows) {
    if (r.dataset == dataset && r.group == group) return &r;
  }
  return nullptr;
}

namespace {

ReportRow summarize(const std::string& dataset, const std::string& group,
                    const std::vector<const EvalResult*>& rs) {
  ReportRow row;
  row.dataset = dataset;
  row.group = group;
  row.samples = rs.size();
  double ac_sum = 0.0;
  for (const EvalResult* r : rs) {
    // Gate failures already carry IC = SA = 0.
    row.ic += r->ic;
    row.sa += r->sa;
    row.el += r->el;
    if (r->ac) {
      ac_sum += *r->ac;
      ++row.ac_scored;
    }
    row.gate_passed += r->gate_passed;
    row.missing += r->missing;
  }
  const double n = static_cast<double>(rs.size());
  row.ic /= n;
  row.sa /= n;
  row.el /= n;
  if (row.ac_scored > 0) {
    row.ac = ac_sum / static_cast<double>(row.ac_scored);
    row.avg = (row.ic + row.sa + row.ac + row.el) / 4.0;
  } else {
    row.ac = std::numeric_limits<double>::quiet_NaN();
    row.avg = (row.ic + row.sa + row.el) / 3.0;
  }
  return row;
}

}  // namespace

Report aggregate_report(const std::vector<EvalResult>& results) {
  if (results.empty()) throw Error(ErrorCode::EmptyInput, "no results to aggregate");
  std::vector<std::string> datasets;
  for (const EvalResult& r : results) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
      datasets.push_back(r.dataset);
    }
  }
  Report report;
  for (const std::string& ds : datasets) {
    std::vector<const EvalResult*> all;
    for (OpKind k : kAllOpKinds) {
      std::vector<const EvalResult*> group;
      for (const EvalResult& r : results) {
        if (r.dataset == ds && r.op_kind == k) group.push_back(&r);
      }
      if (group.empty()) continue;
      report.rows.push_back(summarize(ds, std::string(to_string(k)), group));
      all.insert(all.end(), group.begin(), group.end());
    }
    const ReportRow overall = summarize(ds, "overall", all);
    if (overall.ac_scored < overall.samples) {
      report.notes.push_back(fmt::format("{}: AC scored on {} of {} samples", ds,
                                         overall.ac_scored, overall.samples));
    }
    if (overall.missing > 0) {
      report.notes.push_back(fmt::format("{}: {} candidates missing, scored 0", ds, overall.missing));
    }
    report.rows.push_back(overall);
  }
  return report;
}

json report_to_json(const Report& r) {
  json rows = json::array();
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  for (const ReportRow& row : r.rows) {
    rows.push_back({{"dataset", row.dataset},
                    {"group", row.group},
                    {"samples", row.samples},
                    {"ic", num(row.ic)},
                    {"sa", num(row.sa)},
                    {"ac", num(row.ac)},
                    {"el", num(row.el)},
                    {"avg", num(row.avg)},
                    {"ac_scored", row.ac_scored},
                    {"gate_passed", row.gate_passed},
                    {"missing", row.missing}});
  }
  return {{"schema", "gsi-report/1"}, {"rows", rows}, {"notes", r.notes}};
}

std::string report_to_text(const Report& r) {
  auto cell = [](double v) { return std::isnan(v) ? std::string("n/a") : fmt::format("{:.2f}", v); };
  std::string out = fmt::format("{:<10} {:<8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>6}\n", "Dataset",
                                "Op", "IC", "SA", "AC", "EL", "Avg", "N");
  for (const ReportRow& row : r.rows) {
    out += fmt::format("{:<10} {:<8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>6}\n", row.dataset,
                       row.group == "overall" ? "Avg" : row.group, cell(row.ic), cell(row.sa),
                       cell(row.ac), cell(row.el), cell(row.avg), row.samples);
  }
  for (const std::string& n : r.notes) out += "note: " + n + "\n";
  return out;
}

}  // namespace gsi
