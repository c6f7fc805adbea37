#include "gsi/real_adapter.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include "gsi/errors.hpp"
#include "gsi/eval.hpp"

namespace gsi {
namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Frame selection

namespace {

// FFTW planning is not thread-safe; execution is.
std::mutex& fftw_planner() {
  static std::mutex mu;
  return mu;
}

}  // namespace

double sharpness_score(const RgbImage& image) {
  constexpr int n = kSharpnessCrop;
  if (image.width < n || image.height < n) {
    throw Error(ErrorCode::ImageTooSmall,
                fmt::format("{}x{} is below {}x{}", image.width, image.height, n, n));
  }
  const std::vector<double> luma = to_luma(image);
  const int x0 = (image.width - n) / 2;
  const int y0 = (image.height - n) / 2;

  double* in = fftw_alloc_real(n * n);
  fftw_complex* out = fftw_alloc_complex(n * (n / 2 + 1));
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner());
    plan = fftw_plan_dft_r2c_2d(n, n, in, out, FFTW_ESTIMATE);
  }
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      in[y * n + x] = luma[static_cast<std::size_t>(y0 + y) * image.width + (x0 + x)];
    }
  }
  fftw_execute(plan);

  // Radial frequency in cycles per pixel; Nyquist is 0.5.
  const double cutoff = kSharpnessCutoff * 0.5;
  double total = 0.0;
  double high = 0.0;
  const int cols = n / 2 + 1;
  for (int r = 0; r < n; ++r) {
    const double fy = static_cast<double>(r < n / 2 ? r : r - n) / n;
    for (int k = 0; k < cols; ++k) {
      if (r == 0 && k == 0) continue;  // DC carries no detail
      const double fx = static_cast<double>(k) / n;
      // The half spectrum stands in for its mirror, except on the self-
      // conjugate columns.
      const double weight = (k == 0 || k == n / 2) ? 1.0 : 2.0;
      const fftw_complex& c = out[r * cols + k];
      const double e = weight * (c[0] * c[0] + c[1] * c[1]);
      total += e;
      if (std::sqrt(fx * fx + fy * fy) > cutoff) high += e;
    }
  }
  {
    std::lock_guard lock(fftw_planner());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  // Relative guard: a constant image leaves only rounding noise.
  return total > 1e-18 * n * n ? high / total : 0.0;
}

std::vector<FrameCandidate> select_frames(const std::vector<FrameCandidate>& frames, int stride,
                                          std::size_t top_k) {
  stride = std::max(stride, 1);
  std::vector<FrameCandidate> picked;
  for (std::size_t i = 0; i < frames.size(); i += static_cast<std::size_t>(stride)) {
    picked.push_back(frames[i]);
  }
  std::stable_sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) {
    if (a.sharpness != b.sharpness) return a.sharpness > b.sharpness;
    return a.object_count > b.object_count;
  });
  if (picked.size() > top_k) picked.resize(top_k);
  return picked;
}

// ---------------------------------------------------------------------------
// Grounded scenes

namespace {

Rotation nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return Rotation::from_matrix(r);
}

Vec3 vec3_of(const json& j, const char* field) {
  const json& v = j.at(field);
  if (!v.is_array() || v.size() != 3) {
    throw Error(ErrorCode::ParseError, std::string(field) + " must have 3 numbers", field);
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

const std::vector<std::string>& fixed_structure_labels() {
  static const std::vector<std::string> labels{
      "bed",   "bookshelf", "cabinet", "ceiling", "counter", "couch",    "desk",
      "door",  "dresser",   "floor",   "fridge",  "refrigerator", "shelf", "sofa",
      "table", "wall",      "wardrobe", "window"};
  return labels;
}

inline constexpr double kMaxManipulableExtent = 1.2;
// A box counts as resting on another when its bottom is this close to the
// other's top.
inline constexpr double kSupportGap = 0.08;

std::string sanitize(const std::string& label) {
  std::string out;
  for (char c : label) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) out.push_back(static_cast<char>(std::tolower(u)));
    else if (!out.empty() && out.back() != '_') out.push_back('_');
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "object" : out;
}

Rgb sample_color(const RgbImage& image, const Obb& box, const CameraState& cam) {
  const PixelRect r = project_obb(box, cam).bbox;
  if (r.empty()) return {128, 128, 128};
  // Central half of the box footprint; avoids background at the corners.
  const Vec2 c = r.center();
  const double hw = (r.x1 - r.x0) / 4.0;
  const double hh = (r.y1 - r.y0) / 4.0;
  const int xa = std::clamp(static_cast<int>(std::floor(c.x() - hw)), 0, image.width - 1);
  const int xb = std::clamp(static_cast<int>(std::ceil(c.x() + hw)), xa + 1, image.width);
  const int ya = std::clamp(static_cast<int>(std::floor(c.y() - hh)), 0, image.height - 1);
  const int yb = std::clamp(static_cast<int>(std::ceil(c.y() + hh)), ya + 1, image.height);
  std::array<std::vector<std::uint8_t>, 3> ch;
  for (int y = ya; y < yb; ++y) {
    for (int x = xa; x < xb; ++x) {
      const Rgb p = image.at(x, y);
      for (int k = 0; k < 3; ++k) ch[k].push_back(p[k]);
    }
  }
  Rgb out{};
  for (int k = 0; k < 3; ++k) {
    auto mid = ch[k].begin() + static_cast<std::ptrdiff_t>(ch[k].size() / 2);
    std::nth_element(ch[k].begin(), mid, ch[k].end());
    out[k] = *mid;
  }
  return out;
}

}  // namespace

std::vector<Detection> detections_from_json(const json& j) {
  const json& list = j.is_object() && j.contains("detections") ? j.at("detections") : j;
  if (!list.is_array()) throw Error(ErrorCode::ParseError, "grounding must be a list of detections");
  std::vector<Detection> out;
  try {
    for (const json& d : list) {
      Detection det;
      det.label = d.at("label").get<std::string>();
      det.center = vec3_of(d, "center");
      det.size = vec3_of(d, "size");
      const json& r = d.at("rotation");
      if (!r.is_array() || r.size() != 3) {
        throw Error(ErrorCode::ParseError, "rotation must be 3x3", "rotation");
      }
      Mat3 m;
      for (int row = 0; row < 3; ++row) {
        if (!r[row].is_array() || r[row].size() != 3) {
          throw Error(ErrorCode::ParseError, "rotation must be 3x3", "rotation");
        }
        for (int col = 0; col < 3; ++col) m(row, col) = r[row][col].get<double>();
      }
      if (!m.allFinite()) throw Error(ErrorCode::ParseError, "rotation is not finite", "rotation");
      det.rotation = nearest_rotation(m);
      det.score = d.value("score", 1.0);
      out.push_back(std::move(det));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("grounding: ") + e.what());
  }
  return out;
}

Intrinsics intrinsics_from_json(const json& j) {
  Intrinsics k;
  try {
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("intrinsics: ") + e.what());
  }
  k.validate();
  return k;
}

GroundedFrame ground_frame(const std::string& frame_id, const std::vector<Detection>& detections,
                           const Intrinsics& intrinsics, double pitch, const RgbImage* image,
                           double min_score) {
  intrinsics.validate();
  GroundedFrame f;
  f.frame_id = frame_id;
  // World z up, camera heading along world +y.
  const Rotation cam_rot =
      CameraState::from_yaw_pitch(Vec3::Zero(), kPi / 2.0, pitch, intrinsics).rotation;
  const Mat3 m = cam_rot.matrix();

  struct Box {
    std::string label;
    Vec3 center;
    Vec3 size;
    Rotation rotation;
  };
  std::vector<Box> boxes;
  for (const Detection& d : detections) {
    if (d.score < min_score) continue;
    if (!(d.size.array() > 0.0).all() || !d.size.allFinite() || !d.center.allFinite()) {
      f.warnings.push_back("skipped '" + d.label + "': degenerate box");
      continue;
    }
    boxes.push_back({d.label, m.transpose() * d.center, d.size,
                     Rotation::from_matrix(m.transpose() * d.rotation.matrix())});
  }

  Scene& s = f.scene;
  double floor_z = 0.0;
  bool first = true;
  for (const Box& b : boxes) {
    const double bottom = b.center.z() - Obb{b.center, b.size / 2.0, b.rotation}.extent_along(Vec3::UnitZ());
    floor_z = first ? bottom : std::min(floor_z, bottom);
    first = false;
  }
  const Vec3 eye(0.0, 0.0, -floor_z);
  s.camera.rotation = cam_rot;
  s.camera.translation = -(m * eye);
  s.camera.intrinsics = intrinsics;

  std::map<std::string, int> label_counts;
  std::set<Rgb> used_colors;
  for (const Box& b : boxes) {
    ObjectState o;
    const std::string base = sanitize(b.label);
    o.id = fmt::format("{}_{}", base, ++label_counts[base]);
    o.category = b.label;
    o.center = b.center - Vec3(0.0, 0.0, floor_z);
    o.size = b.size;
    o.rotation = b.rotation;
    const auto& fixed = fixed_structure_labels();
    const double largest = b.size.maxCoeff();
    o.manipulable = std::find(fixed.begin(), fixed.end(), base) == fixed.end() &&
                    largest <= kMaxManipulableExtent;
    o.color = image ? sample_color(*image, o.obb(), s.camera) : Rgb{128, 128, 128};
    // Object colors double as identities and must be unique; nudge repeats
    // by one step, which no color word notices.
    while (used_colors.count(o.color)) {
      o.color[2] = static_cast<std::uint8_t>(o.color[2] + (o.color[2] < 255 ? 1 : -255));
    }
    used_colors.insert(o.color);
    o.support_id = std::string(kFloorId);
    s.objects.push_back(std::move(o));
  }

  // Supports: the largest box whose top is just below the object's bottom
  // and whose footprint contains the object's center.
  for (ObjectState& o : s.objects) {
    const double bottom = o.base_height();
    if (bottom < kSupportGap) continue;
    const ObjectState* best = nullptr;
    double best_area = 0.0;
    for (const ObjectState& other : s.objects) {
      if (other.id == o.id) continue;
      const double top = other.center.z() + other.half_height();
      if (std::abs(top - bottom) > kSupportGap) continue;
      Rect2 r{1e300, 1e300, -1e300, -1e300};
      for (const Vec2& p : object_footprint(other)) {
        r.min_x = std::min(r.min_x, p.x());
        r.min_y = std::min(r.min_y, p.y());
        r.max_x = std::max(r.max_x, p.x());
        r.max_y = std::max(r.max_y, p.y());
      }
      const bool inside = o.center.x() >= r.min_x && o.center.x() <= r.max_x &&
                          o.center.y() >= r.min_y && o.center.y() <= r.max_y;
      const double area = (r.max_x - r.min_x) * (r.max_y - r.min_y);
      if (inside && area > best_area) {
        best = &other;
        best_area = area;
      }
    }
    if (!best) continue;
    const std::string sid = best->id + "_top";
    if (!s.find_surface(sid)) {
      Surface surf;
      surf.id = sid;
      surf.height = best->center.z() + best->half_height();
      surf.owner = best->id;
      surf.rect = Rect2{1e300, 1e300, -1e300, -1e300};
      for (const Vec2& p : object_footprint(*best)) {
        surf.rect.min_x = std::min(surf.rect.min_x, p.x());
        surf.rect.min_y = std::min(surf.rect.min_y, p.y());
        surf.rect.max_x = std::max(surf.rect.max_x, p.x());
        surf.rect.max_y = std::max(surf.rect.max_y, p.y());
      }
      s.surfaces.push_back(surf);
    }
    o.support_id = sid;
  }

  // Floor: every footprint and the camera, with room to move.
  Rect2 fl{eye.x(), eye.y(), eye.x(), eye.y()};
  for (const ObjectState& o : s.objects) {
    for (const Vec2& p : object_footprint(o)) {
      fl.min_x = std::min(fl.min_x, p.x());
      fl.min_y = std::min(fl.min_y, p.y());
      fl.max_x = std::max(fl.max_x, p.x());
      fl.max_y = std::max(fl.max_y, p.y());
    }
  }
  constexpr double kFloorPad = 2.0;
  s.floor = Rect2{fl.min_x - kFloorPad, fl.min_y - kFloorPad, fl.max_x + kFloorPad,
                  fl.max_y + kFloorPad};

  s = canonicalize(s);
  const ValidationReport report = validate_scene(s, ValidationMode::Relaxed);
  f.warnings.insert(f.warnings.end(), report.warnings.begin(), report.warnings.end());
  for (const ObjectState& o : s.objects) f.object_count += o.manipulable;
  return f;
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

inline constexpr std::string_view kGroundingSuffix = ".grounding.json";

}  // namespace

GroundedFrame load_grounded_frame(const fs::path& dir, const std::string& frame_id,
                                  double min_score) {
  const fs::path image_path = dir / (frame_id + ".png");
  const RgbImage image = read_png(image_path);
  const auto detections =
      detections_from_json(read_json(dir / (frame_id + std::string(kGroundingSuffix))));
  fs::path kpath = dir / (frame_id + ".intrinsics.json");
  if (!fs::exists(kpath)) kpath = dir / "intrinsics.json";
  const json kj = read_json(kpath);
  const Intrinsics k = intrinsics_from_json(kj);
  const double pitch = deg_to_rad(kj.value("pitch_deg", 0.0));
  if (k.width != image.width || k.height != image.height) {
    throw Error(ErrorCode::DimensionMismatch,
                fmt::format("{}: image is {}x{}, intrinsics say {}x{}", frame_id, image.width,
                            image.height, k.width, k.height));
  }
  GroundedFrame f = ground_frame(frame_id, detections, k, pitch, &image, min_score);
  f.image = image_path;
  f.sharpness = sharpness_score(image);
  return f;
}

std::vector<std::string> list_grounded_frames(const fs::path& dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::ConfigError, "no directory " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > kGroundingSuffix.size() && name.ends_with(kGroundingSuffix)) {
      ids.push_back(name.substr(0, name.size() - kGroundingSuffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Review states

namespace {

const std::array<std::pair<ReviewState, std::string_view>, 6> kReviewNames{{
    {ReviewState::Pending, "pending"},
    {ReviewState::JudgePassed, "judge_passed"},
    {ReviewState::Dropped, "dropped"},
    {ReviewState::Accepted, "accepted"},
    {ReviewState::Rejected, "rejected"},
    {ReviewState::Edited, "edited"},
}};

}  // namespace

std::string_view to_string(ReviewState s) {
  for (const auto& [k, v] : kReviewNames) {
    if (k == s) return v;
  }
  return "?";
}

std::optional<ReviewState> parse_review_state(std::string_view s) {
  for (const auto& [k, v] : kReviewNames) {
    if (v == s) return k;
  }
  return std::nullopt;
}

bool transition_allowed(ReviewState from, ReviewState to) {
  const bool human = to == ReviewState::Accepted || to == ReviewState::Rejected ||
                     to == ReviewState::Edited;
  switch (from) {
    case ReviewState::Pending:
      return to == ReviewState::JudgePassed || to == ReviewState::Dropped || human;
    case ReviewState::JudgePassed: return human;
    default: return false;
  }
}

const std::string& RealSample::effective_caption() const {
  if (edited_caption) return *edited_caption;
  if (rewritten_caption) return *rewritten_caption;
  return caption;
}

void RealSample::transition(ReviewState to, std::string why) {
  if (!transition_allowed(state, to)) {
    throw Error(ErrorCode::InvalidTransition,
                fmt::format("{}: {} -> {}", sample_id, to_string(state), to_string(to)));
  }
  state = to;
  reason = std::move(why);
}

// ---------------------------------------------------------------------------
// Proposals

namespace {

struct Candidate {
  OpKind kind;
  std::string target;
  Direction direction = Direction::Left;
  double value = 0.0;  // distance (CM) or angle in degrees (OR)
};

// Portable Fisher-Yates; std::shuffle's draws are library specific.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<double> distance_grid(const SamplingConfig& cfg) {
  std::vector<double> out;
  for (int i = 0; i < 5; ++i) {
    const double d = cfg.distance_min + (cfg.distance_max - cfg.distance_min) * i / 4.0;
    const double r = std::round(d * 100.0) / 100.0;
    if (out.empty() || r != out.back()) out.push_back(r);
  }
  return out;
}

}  // namespace

std::vector<RealSample> propose_real_operations(const GroundedFrame& frame,
                                                const std::vector<OpKind>& kinds,
                                                std::uint64_t seed,
                                                const RealProposalConfig& config) {
  for (OpKind k : kinds) {
    if (k != OpKind::CM && k != OpKind::OR && k != OpKind::SR) {
      throw Error(ErrorCode::UnsupportedKind,
                  fmt::format("{} is not available for real images", to_string(k)));
    }
  }
  const Scene& scene = frame.scene;
  std::vector<RealSample> out;
  std::vector<std::string> targets;
  for (const ObjectState& o : scene.objects) {
    if (o.manipulable) targets.push_back(o.id);
  }
  if (targets.empty()) {
    throw Error(ErrorCode::NoFeasibleOperation, frame.frame_id + ": no manipulable detection");
  }

  std::mt19937_64 rng(derive_seed(seed, "real/" + frame.frame_id));
  for (OpKind kind : kinds) {
    std::vector<Candidate> cands;
    for (const std::string& id : targets) {
      switch (kind) {
        case OpKind::CM:
          for (Direction d : config.sampling.cm_directions) {
            for (double dist : distance_grid(config.sampling)) cands.push_back({kind, id, d, dist});
          }
          break;
        case OpKind::OR:
          for (double a : config.sampling.yaw_choices_deg) cands.push_back({kind, id, {}, a});
          break;
        default: cands.push_back({kind, id, {}, 0.0}); break;
      }
    }
    shuffle(cands, rng);

    int made = 0;
    for (const Candidate& c : cands) {
      if (made >= config.per_kind) break;
      const auto desc = describe(scene, c.target);
      if (!desc) continue;
      SpatialInstruction inst;
      inst.action.kind = kind;
      inst.target = *desc;
      try {
        switch (kind) {
          case OpKind::CM:
            inst.action.direction = c.direction;
            inst.action.distance = c.value;
            inst.transform = make_camera_relative_move(scene, c.target, c.direction, c.value);
            break;
          case OpKind::OR:
            inst.action.angle = deg_to_rad(c.value);
            inst.transform = make_rotation(scene, c.target, deg_to_rad(c.value));
            break;
          default:
            inst.transform = make_removal(scene, RemovalCriterion{c.target, {}, {}},
                                          config.feasibility.min_visible_fraction);
            break;
        }
      } catch (const Error&) {
        continue;
      }
      inst.transform = canonicalize(inst.transform);
      const FeasibilityReport rep = check_feasible(scene, inst.transform, config.feasibility);
      std::vector<std::string> warnings;
      bool ok = true;
      for (const FeasibilityCheck& chk : rep.checks) {
        if (chk.passed) continue;
        // Grounding boxes may interpenetrate: collisions are only reported.
        if (chk.name == "collision") {
          warnings.push_back("collision: " + chk.detail);
          continue;
        }
        ok = false;
        break;
      }
      if (!ok) continue;
      inst.caption = caption(inst);

      RealSample s;
      s.op_kind = kind;
      s.sample_id = fmt::format("{}-{}-{:05d}", frame.frame_id, to_string(kind), made);
      s.frame_id = frame.frame_id;
      s.image = frame.image.string();
      s.source_scene = scene;
      s.instruction = inst;
      s.dst_scene = canonicalize(ideal_destination(scene, inst.transform));
      s.caption = inst.caption;
      s.overlay = "overlays/" + s.sample_id + ".png";
      s.warnings = std::move(warnings);
      out.push_back(std::move(s));
      ++made;
    }
  }
  if (out.empty()) {
    throw Error(ErrorCode::NoFeasibleOperation, frame.frame_id + ": no candidate passed feasibility");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Overlays

namespace {

inline constexpr double kOverlayNear = 0.05;
inline constexpr int kDashOn = 6;
inline constexpr int kDashOff = 4;

struct Canvas {
  RgbImage& img;
  int x_offset;
  int panel_width;
  int thickness;

  void dot(int x, int y, Rgb c) {
    for (int dy = 0; dy < thickness; ++dy) {
      for (int dx = 0; dx < thickness; ++dx) {
        const int px = x + dx;
        const int py = y + dy;
        if (px >= 0 && px < panel_width && py >= 0 && py < img.height) {
          img.set(x_offset + px, py, c);
        }
      }
    }
  }
};

// Liang-Barsky clip of a segment to [0, w) x [0, h).
bool clip_segment(Vec2& a, Vec2& b, double w, double h) {
  double t0 = 0.0;
  double t1 = 1.0;
  const Vec2 d = b - a;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {a.x(), w - 1e-9 - a.x(), a.y(), h - 1e-9 - a.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) t0 = std::max(t0, t);
    else t1 = std::min(t1, t);
    if (t0 > t1) return false;
  }
  const Vec2 a0 = a;
  a = a0 + t0 * d;
  b = a0 + t1 * d;
  return true;
}

void draw_line(Canvas& c, Vec2 a, Vec2 b, Rgb color, bool dashed) {
  const double len = (b - a).norm();
  const int steps = std::max(1, static_cast<int>(std::ceil(len)));
  for (int i = 0; i <= steps; ++i) {
    if (dashed && (i % (kDashOn + kDashOff)) >= kDashOn) continue;
    const Vec2 p = a + (b - a) * (static_cast<double>(i) / steps);
    c.dot(static_cast<int>(std::floor(p.x())), static_cast<int>(std::floor(p.y())), color);
  }
}

// Draws the box's 12 edges; returns whether any edge landed in the panel.
bool draw_box(Canvas& c, const Obb& box, const CameraState& cam, Rgb color, bool dashed) {
  std::array<Vec3, 8> corners;
  for (int i = 0; i < 8; ++i) {
    const Vec3 s((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
    corners[i] = cam.to_camera(box.center + box.rotation * s.cwiseProduct(box.half_extents));
  }
  const Intrinsics& k = cam.intrinsics;
  auto pixel = [&](const Vec3& p) { return Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy); };
  bool any = false;
  for (int i = 0; i < 8; ++i) {
    for (int bit : {1, 2, 4}) {
      const int j = i | bit;
      if (j == i) continue;
      Vec3 p = corners[i];
      Vec3 q = corners[j];
      if (p.z() < kOverlayNear && q.z() < kOverlayNear) continue;
      // Clip to the near plane in camera space.
      if (p.z() < kOverlayNear) p = p + (q - p) * ((kOverlayNear - p.z()) / (q.z() - p.z()));
      if (q.z() < kOverlayNear) q = q + (p - q) * ((kOverlayNear - q.z()) / (p.z() - q.z()));
      Vec2 a = pixel(p);
      Vec2 b = pixel(q);
      if (!clip_segment(a, b, k.width, k.height)) continue;
      draw_line(c, a, b, color, dashed);
      any = true;
    }
  }
  return any;
}

}  // namespace

Overlay render_overlay(const RgbImage& image, const Obb& src, const std::optional<Obb>& dst,
                       const CameraState& camera) {
  CameraState cam = camera;
  if (cam.intrinsics.width != image.width || cam.intrinsics.height != image.height) {
    cam.intrinsics = cam.intrinsics.resized(image.width, image.height);
  }
  Overlay o;
  o.dashed = !dst.has_value();
  o.image = RgbImage(2 * image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const Rgb p = image.at(x, y);
      o.image.set(x, y, p);
      o.image.set(image.width + x, y, p);
    }
  }
  const int thickness = std::max(1, std::min(image.width, image.height) / 240);
  Canvas left{o.image, 0, image.width, thickness};
  Canvas right{o.image, image.width, image.width, thickness};
  const bool l = draw_box(left, src, cam, kOverlaySourceColor, false);
  const bool r = dst ? draw_box(right, *dst, cam, kOverlayTargetColor, false)
                     : draw_box(right, src, cam, kOverlayTargetColor, true);
  if (!l && !r) throw Error(ErrorCode::NothingVisible, "no box edge projects into the frame");
  return o;
}

Overlay render_sample_overlay(const RgbImage& image, const RealSample& s) {
  const std::string& id = s.instruction.transform.target_id;
  const ObjectState* src = s.source_scene.find(id);
  if (!src) throw Error(ErrorCode::UnknownTarget, "no object '" + id + "'");
  const ObjectState* dst = s.dst_scene.find(id);
  return render_overlay(image, src->obb(),
                        dst ? std::optional<Obb>(dst->obb()) : std::nullopt,
                        s.source_scene.camera);
}

// ---------------------------------------------------------------------------
// Judge gate

void judge_gate_real(RealSample& sample, const RgbImage& overlay, JudgeClient& judge) {
  if (sample.state != ReviewState::Pending) {
    throw Error(ErrorCode::InvalidTransition,
                sample.sample_id + " is " + std::string(to_string(sample.state)));
  }
  JudgeRequest req;
  req.task = JudgeTask::GateReal;
  req.request_id = sample.sample_id;
  req.images.push_back(encode_png(overlay));
  const std::string& target = sample.instruction.transform.target_id;
  const ObjectState* t = sample.source_scene.find(target);
  req.metadata = {{"caption", sample.caption},
                  {"op_kind", std::string(to_string(sample.op_kind))},
                  {"target_category", t ? t->category : std::string()},
                  {"instruction", instruction_to_json(sample.instruction)},
                  {"warnings", sample.warnings}};
  JudgeVerdict v;
  try {
    v = judge.submit(req);
  } catch (const Error& e) {
    // Malformed replies after every retry leave the gate as unreachable as
    // a dead endpoint does.
    if (e.code() != ErrorCode::SchemaViolation) throw;
    throw Error(ErrorCode::JudgeUnavailable, sample.sample_id + ": " + e.what());
  }
  if (v.decision == JudgeDecision::Accept) {
    if (v.rewritten_caption && *v.rewritten_caption != sample.caption) {
      sample.rewritten_caption = v.rewritten_caption;
    }
    sample.transition(ReviewState::JudgePassed, v.reason);
  } else {
    sample.transition(ReviewState::Dropped, v.reason);
  }
}

// ---------------------------------------------------------------------------
// Manifest

json real_sample_to_json(const RealSample& s) {
  auto opt = [](const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); };
  return {{"version", kRealManifestVersion},
          {"sample_id", s.sample_id},
          {"op_kind", std::string(to_string(s.op_kind))},
          {"frame_id", s.frame_id},
          {"image", s.image},
          {"source_scene", scene_to_json(s.source_scene)},
          {"instruction", instruction_to_json(s.instruction)},
          {"dst_scene", scene_to_json(s.dst_scene)},
          {"caption", s.caption},
          {"rewritten_caption", opt(s.rewritten_caption)},
          {"edited_caption", opt(s.edited_caption)},
          {"overlay", s.overlay},
          {"state", std::string(to_string(s.state))},
          {"reason", s.reason},
          {"warnings", s.warnings}};
}

RealSample real_sample_from_json(const json& j) {
  RealSample s;
  try {
    if (j.value("version", std::string()) != kRealManifestVersion) {
      throw Error(ErrorCode::ParseError, "unsupported real sample version", "version");
    }
    s.sample_id = j.at("sample_id").get<std::string>();
    const auto kind = parse_op_kind(j.at("op_kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::ParseError, "bad op_kind", "op_kind");
    s.op_kind = *kind;
    s.frame_id = j.at("frame_id").get<std::string>();
    s.image = j.at("image").get<std::string>();
    s.source_scene = scene_from_json(j.at("source_scene"), ValidationMode::Relaxed);
    s.instruction = instruction_from_json(j.at("instruction"));
    s.dst_scene = scene_from_json(j.at("dst_scene"), ValidationMode::Skip);
    s.caption = j.at("caption").get<std::string>();
    if (!j.at("rewritten_caption").is_null()) s.rewritten_caption = j.at("rewritten_caption").get<std::string>();
    if (!j.at("edited_caption").is_null()) s.edited_caption = j.at("edited_caption").get<std::string>();
    s.overlay = j.at("overlay").get<std::string>();
    const auto state = parse_review_state(j.at("state").get<std::string>());
    if (!state) throw Error(ErrorCode::ParseError, "bad review state", "state");
    s.state = *state;
    s.reason = j.value("reason", std::string());
    s.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("real sample: ") + e.what());
  }
  return s;
}

void write_real_manifest(const std::vector<RealSample>& samples, const fs::path& dir) {
  fs::create_directories(dir);
  std::string text;
  for (const RealSample& s : samples) text += real_sample_to_json(s).dump() + "\n";
  write_file_atomic(dir / kRealManifestFile, text);
}

std::vector<RealSample> read_real_manifest(const fs::path& dir) {
  const fs::path path = dir / kRealManifestFile;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "no real manifest at " + path.string());
  std::vector<RealSample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(real_sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, fmt::format("{}:{}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

EvalCase eval_case_from_real(const RealSample& s) {
  return {s.op_kind, s.source_scene, s.instruction.transform, s.dst_scene, s.instruction};
}

}  // namespace gsi
