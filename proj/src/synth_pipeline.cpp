#include "gsi/synth_pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "gsi/errors.hpp"
#include "gsi/visibility.hpp"

namespace gsi {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<SampleStatus, std::string_view>, 5> kStatusNames{{
    {SampleStatus::Validated, "validated"},
    {SampleStatus::FilteredInsignificant, "filtered_insignificant"},
    {SampleStatus::FilteredJudge, "filtered_judge"},
    {SampleStatus::FailedExecution, "failed_execution"},
    {SampleStatus::JudgeUnavailable, "judge_unavailable"},
}};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Platform-independent draws (the standard distributions are not).
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
  }
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[index(v.size())];
  }

 private:
  std::mt19937_64 rng_;
};

double round_cm(double meters) { return std::round(meters * 100.0) / 100.0; }

// Source view for one curated viewpoint.
struct ViewContext {
  std::size_t index = 0;
  Viewpoint viewpoint;
  std::string scene_id;
  Scene scene;
  std::vector<std::string> visible;              // all visible objects
  std::vector<std::string> visible_manipulable;  // subset
  std::vector<std::string> visible_receptacles;
};

struct EnvContext {
  const EnvSpec* env = nullptr;
  std::vector<ViewContext> views;
};

bool inside_receptacle(const Scene& scene, const ObjectState& o) {
  if (!o.support_id) return false;
  const ObjectState* s = scene.find(*o.support_id);
  return s && s->is_receptacle;
}

std::optional<SpatialInstruction> propose(OpKind kind, const ViewContext& view,
                                          const SamplingConfig& cfg, Stream& rng) {
  const Scene& scene = view.scene;
  SpatialInstruction s;
  s.action.kind = kind;
  if (kind == OpKind::PC) {
    static const std::vector<PerspectiveMode> kModes{
        PerspectiveMode::OrbitLeft, PerspectiveMode::OrbitRight, PerspectiveMode::ZoomIn,
        PerspectiveMode::ZoomOut};
    const PerspectiveMode mode = rng.pick(kModes);
    const bool orbit = mode == PerspectiveMode::OrbitLeft || mode == PerspectiveMode::OrbitRight;
    const double magnitude =
        orbit ? deg_to_rad(rng.pick(cfg.orbit_choices_deg)) : rng.pick(cfg.zoom_choices);
    s.action.mode = mode;
    s.action.magnitude = magnitude;
    s.transform = make_perspective_change(scene, mode, magnitude);
    s.caption = caption(s);
    return s;
  }
  if (view.visible_manipulable.empty()) return std::nullopt;
  const std::string target = rng.pick(view.visible_manipulable);
  const ObjectState& t = *scene.find(target);
  auto target_desc = describe(scene, target);

  switch (kind) {
    case OpKind::CM: {
      const Direction d = rng.pick(cfg.cm_directions);
      const double distance = round_cm(rng.uniform(cfg.distance_min, cfg.distance_max));
      s.action.direction = d;
      s.action.distance = distance;
      s.transform = make_camera_relative_move(scene, target, d, distance);
      break;
    }
    case OpKind::OP: {
      std::vector<std::string> refs;
      for (const auto& id : view.visible) {
        if (id != target) refs.push_back(id);
      }
      if (refs.empty()) return std::nullopt;
      const std::string reference = rng.pick(refs);
      const Relation r = rng.pick(cfg.relations);
      const double gap = round_cm(rng.uniform(cfg.gap_min, cfg.gap_max));
      s.reference = describe(scene, reference);
      if (!s.reference) return std::nullopt;
      s.action.relation = r;
      s.action.gap = gap;
      s.transform = make_object_relative_place(scene, target, reference, r, gap);
      break;
    }
    case OpKind::OR: {
      const double angle = deg_to_rad(rng.pick(cfg.yaw_choices_deg));
      s.action.angle = angle;
      s.transform = make_rotation(scene, target, angle);
      break;
    }
    case OpKind::RP: {
      if (view.visible_receptacles.empty()) return std::nullopt;
      const std::string receptacle = rng.pick(view.visible_receptacles);
      if (receptacle == target || t.is_receptacle || inside_receptacle(scene, t)) {
        return std::nullopt;
      }
      s.reference = describe(scene, receptacle);
      if (!s.reference) return std::nullopt;
      s.action.relation = Relation::Inside;
      s.transform = make_receptacle_place(scene, target, receptacle);
      break;
    }
    case OpKind::SR: {
      std::size_t same_category = 0;
      for (const auto& id : view.visible) same_category += scene.find(id)->category == t.category;
      if (same_category >= 2 && rng.uniform() < cfg.predicate_removal_share) {
        static const std::vector<RemovalPredicate> kPredicates{
            RemovalPredicate::Leftmost, RemovalPredicate::Rightmost, RemovalPredicate::Nearest,
            RemovalPredicate::Farthest};
        RemovalCriterion c;
        c.predicate = rng.pick(kPredicates);
        c.category = t.category;
        s.transform = make_removal(scene, c);
        target_desc = Descriptor{t.category, std::string(to_string(c.predicate))};
      } else {
        s.transform = make_removal(scene, RemovalCriterion{target, {}, {}});
      }
      break;
    }
    case OpKind::OS: {
      const double f = rng.pick(cfg.scale_choices);
      s.action.scale_factor = f;
      s.transform = make_scale(scene, target, f);
      break;
    }
    case OpKind::PC:
      break;
  }
  if (!target_desc) return std::nullopt;
  s.target = *target_desc;
  s.caption = caption(s);
  return s;
}

EnvContext build_env_context(const EnvSpec& env, std::uint64_t seed,
                             const GenerateOptions& options) {
  const PipelineConfig& cfg = options.config;
  EnvContext ctx;
  ctx.env = &env;
  const auto viewpoints = curate_viewpoints(env.scene, cfg.viewpoints_per_room,
                                            derive_seed(seed, env.name + "/viewpoints"),
                                            cfg.curation);
  const VisibilityOptions raster{cfg.feasibility.raster_width, cfg.feasibility.raster_height};
  for (std::size_t i = 0; i < viewpoints.size(); ++i) {
    ViewContext v;
    v.index = i;
    v.viewpoint = viewpoints[i];
    Scene s = env.scene;
    s.camera = viewpoint_camera(v.viewpoint, env.scene.camera.intrinsics);
    v.scene = canonicalize(s);
    // Content-addressed: the same view gets the same id under any seed.
    v.scene_id = env.name + ":" + sha256_hex(save_scene(v.scene)).substr(0, 12);
    if (options.exclude_scene_ids.count(v.scene_id)) continue;
    for (const auto& vis : visible_objects(v.scene, cfg.feasibility.min_visible_fraction, raster)) {
      const ObjectState& o = *v.scene.find(vis.id);
      v.visible.push_back(o.id);
      if (o.manipulable) v.visible_manipulable.push_back(o.id);
      if (o.is_receptacle) v.visible_receptacles.push_back(o.id);
    }
    ctx.views.push_back(std::move(v));
  }
  return ctx;
}

json pixel_rect_json(const Scene& scene, const std::string& id) {
  const ObjectState* o = scene.find(id);
  if (!o) return nullptr;
  const PixelRect r = project_obb(o->obb(), scene.camera).bbox;
  if (r.empty()) return nullptr;
  return json::array({format_real(r.x0), format_real(r.y0), format_real(r.x1), format_real(r.y1)});
}

json judge_metadata(const Sample& s) {
  const std::string& target = s.instruction.transform.target_id;
  return {{"caption", s.instruction.caption},
          {"op_kind", std::string(to_string(s.op_kind))},
          {"instruction", instruction_to_json(s.instruction)},
          {"target_box_source", pixel_rect_json(s.source_scene, target)},
          {"target_box_target", pixel_rect_json(s.actual_dst_scene, target)}};
}

struct KindResult {
  std::vector<Sample> samples;
  int validated = 0;
  int attempts = 0;
};

KindResult run_kind(const EnvContext& ctx, OpKind kind, int count, std::uint64_t seed,
                    const GenerateOptions& options) {
  const PipelineConfig& cfg = options.config;
  const std::string& env = ctx.env->name;
  KindResult out;
  if (count <= 0 || ctx.views.empty()) return out;
  Stream rng(derive_seed(seed, env + "/" + std::string(to_string(kind))));
  const int budget = std::max(cfg.min_attempts, cfg.attempts_per_sample * count);
  std::vector<int> failures(ctx.views.size(), 0);
  std::map<std::size_t, FrameBuffers> source_frames;  // by view position
  int next_index = 0;

  while (out.validated < count && out.attempts < budget) {
    const std::uint64_t candidate_index = static_cast<std::uint64_t>(out.attempts++);
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < ctx.views.size(); ++i) {
      if (failures[i] < cfg.max_failures_per_viewpoint) active.push_back(i);
    }
    if (active.empty()) break;
    const std::size_t view_pos = rng.pick(active);
    const ViewContext& view = ctx.views[view_pos];

    std::optional<SpatialInstruction> inst;
    try {
      inst = propose(kind, view, cfg.sampling, rng);
    } catch (const Error&) {
      continue;  // constructor precondition failed; draw again
    }
    if (!inst) continue;
    // Stored reals carry 9 significant digits; compute from the same values
    // a replay will read back.
    inst->transform = canonicalize(inst->transform);
    if (!check_feasible(view.scene, inst->transform, cfg.feasibility).feasible) continue;

    Sample s;
    s.sample_id = fmt::format("{}-{}-{:05d}", env, to_string(kind), next_index++);
    s.op_kind = kind;
    s.scene_id = view.scene_id;
    s.source_scene = view.scene;
    s.instruction = std::move(*inst);
    s.provenance = {env, view.index, view.viewpoint, seed, candidate_index};

    const ExecutionResult exec = execute_and_validate(view.scene, s.instruction.transform,
                                                      cfg.execution);
    s.ideal_dst_scene = exec.ideal_dst;
    s.actual_dst_scene = exec.actual_dst;
    if (!exec.success) {
      // Rolled back; the viewpoint is retired after repeated failures.
      s.status = SampleStatus::FailedExecution;
      s.note = exec.detail;
      ++failures[view_pos];
      out.samples.push_back(std::move(s));
      continue;
    }

    auto it = source_frames.find(view_pos);
    if (it == source_frames.end()) {
      it = source_frames.emplace(view_pos, render_for_pipeline(view.scene, cfg)).first;
    }
    const FrameBuffers& src = it->second;
    const FrameBuffers dst = render_for_pipeline(s.actual_dst_scene, cfg);
    s.pixel_change = pixel_change_fraction(src, dst);
    if (s.pixel_change < cfg.min_pixel_change) {
      s.status = SampleStatus::FilteredInsignificant;
      s.note = fmt::format("pixel change {:.5f}", s.pixel_change);
      out.samples.push_back(std::move(s));
      continue;
    }

    if (options.judge) {
      JudgeRequest req;
      req.task = JudgeTask::GateSynthetic;
      req.images = {encode_png(src.color), encode_png(dst.color)};
      req.metadata = judge_metadata(s);
      req.request_id = s.sample_id;
      try {
        s.judge = options.judge->submit(req);
      } catch (const Error& e) {
        s.status = SampleStatus::JudgeUnavailable;
        s.note = e.what();
        out.samples.push_back(std::move(s));
        continue;
      }
      if (s.judge->decision == JudgeDecision::Reject) {
        s.status = SampleStatus::FilteredJudge;
        s.note = s.judge->reason;
        out.samples.push_back(std::move(s));
        continue;
      }
    }

    s.status = SampleStatus::Validated;
    if (!options.out_dir.empty()) {
      s.image_dir = "images/" + s.sample_id;
      const auto dir = options.out_dir / s.image_dir;
      std::filesystem::create_directories(dir);
      write_frame(dir / "source", src);
      write_frame(dir / "target", dst);
    }
    ++out.validated;
    out.samples.push_back(std::move(s));
  }
  return out;
}

json viewpoint_to_json(const Viewpoint& v) {
  return {{"position", vec_to_json(v.position)},
          {"yaw", format_real(v.yaw)},
          {"pitch", format_real(v.pitch)},
          {"room_id", v.room_id},
          {"actionability", v.actionability}};
}

Viewpoint viewpoint_from_json(const json& j) {
  Viewpoint v;
  v.position = vec3_from_json(j.at("position"));
  v.yaw = real_from_json(j.at("yaw"));
  v.pitch = real_from_json(j.at("pitch"));
  v.room_id = j.at("room_id").get<int>();
  v.actionability = j.at("actionability").get<int>();
  return v;
}

json counts_to_json(const std::map<OpKind, int>& counts) {
  json j = json::object();
  for (const auto& [k, n] : counts) j[std::string(to_string(k))] = n;
  return j;
}

std::map<OpKind, int> counts_from_json(const json& j) {
  std::map<OpKind, int> out;
  for (const auto& [k, v] : j.items()) {
    const auto kind = parse_op_kind(k);
    if (!kind) throw Error(ErrorCode::ParseError, "unknown op kind '" + k + "'", "counts");
    out[*kind] = v.get<int>();
  }
  return out;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::ImageIo, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(SampleStatus s) {
  for (const auto& [v, name] : kStatusNames) {
    if (v == s) return name;
  }
  return "?";
}

std::optional<SampleStatus> parse_sample_status(std::string_view s) {
  for (const auto& [v, name] : kStatusNames) {
    if (name == s) return v;
  }
  return std::nullopt;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

std::set<std::string> Manifest::scene_ids() const {
  std::set<std::string> out;
  for (const Sample& s : samples) {
    if (s.status == SampleStatus::Validated) out.insert(s.scene_id);
  }
  return out;
}

const Sample* Manifest::find(std::string_view sample_id) const {
  for (const Sample& s : samples) {
    if (s.sample_id == sample_id) return &s;
  }
  return nullptr;
}

ExecutionResult execute_and_validate(const Scene& scene, const SceneTransform& t,
                                     const ExecutionTolerance& tol) {
  ExecutionResult r;
  r.ideal_dst = ideal_destination(scene, t);
  try {
    r.actual_dst = apply_transform(scene, t);
  } catch (const Error& e) {
    r.actual_dst = settle(r.ideal_dst);
    r.detail = e.what();
    return r;
  }
  switch (t.kind) {
    case OpKind::SR:
      r.success = r.actual_dst.find(t.target_id) == nullptr;
      if (!r.success) r.detail = "target still present";
      return r;
    case OpKind::PC:
      r.success = r.actual_dst.camera.rotation == r.ideal_dst.camera.rotation &&
                  r.actual_dst.camera.translation == r.ideal_dst.camera.translation;
      if (!r.success) r.detail = "camera mismatch";
      return r;
    default:
      break;
  }
  const ObjectState& actual = *r.actual_dst.find(t.target_id);
  const ObjectState& ideal = *r.ideal_dst.find(t.target_id);
  const double dc = (actual.center - ideal.center).norm();
  const double dr = rad_to_deg(geodesic_distance(actual.rotation, ideal.rotation));
  const double visible = project_obb(actual.obb(), r.actual_dst.camera).visible_fraction;
  if (dc > tol.center) {
    r.detail = fmt::format("settled {:.3f} m from the ideal center", dc);
  } else if (dr > tol.rotation_deg) {
    r.detail = fmt::format("settled {:.2f} deg from the ideal rotation", dr);
  } else if (visible < tol.min_visible_fraction) {
    r.detail = fmt::format("visible fraction {:.3f}", visible);
  } else {
    r.success = true;
  }
  return r;
}

EnvSpec load_env(const std::string& name, const std::filesystem::path& env_dir) {
  std::filesystem::path path = name;
  if (!(path.has_extension() && std::filesystem::is_regular_file(path))) {
    path = env_dir / (name + ".json");
  }
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::ConfigError, "environment file not found: " + path.string(), "env");
  }
  EnvSpec env;
  env.name = path.stem().string();
  env.scene = canonicalize(load_scene_file(path.string()));
  return env;
}

FrameBuffers render_for_pipeline(const Scene& scene, const PipelineConfig& config) {
  const int w = config.render_width > 0 ? config.render_width : scene.camera.intrinsics.width;
  const int h = config.render_height > 0 ? config.render_height : scene.camera.intrinsics.height;
  return render(scene, w, h);
}

Manifest generate_samples(const std::vector<EnvSpec>& envs,
                          const std::map<OpKind, int>& counts, std::uint64_t seed,
                          const GenerateOptions& options) {
  for (const auto& [k, n] : counts) {
    if (n < 0) throw Error(ErrorCode::ConfigError, "negative count for " + std::string(to_string(k)));
  }
  Manifest m;
  m.seed = seed;
  m.config = options.config_record;
  for (OpKind k : kAllOpKinds) {
    const auto it = counts.find(k);
    m.requested[k] = it == counts.end() ? 0 : it->second;
    m.achieved[k] = 0;
  }
  for (const EnvSpec& e : envs) m.envs.push_back(e.name);

  bool any_work = false;
  for (const auto& [k, n] : m.requested) any_work |= n > 0;

  std::vector<EnvContext> contexts;
  if (any_work) {
    for (const EnvSpec& e : envs) contexts.push_back(build_env_context(e, seed, options));
  }

  struct Item {
    std::size_t env;
    OpKind kind;
  };
  std::vector<Item> items;
  for (std::size_t e = 0; e < contexts.size(); ++e) {
    for (OpKind k : kAllOpKinds) {
      if (m.requested[k] > 0) items.push_back({e, k});
    }
  }

  // Work items run in parallel; results merge in (env, kind) order.
  std::vector<KindResult> results(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      results[i] = run_kind(contexts[items[i].env], items[i].kind, m.requested[items[i].kind],
                            seed, options);
    }
  };
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const int jobs = std::min<int>(options.config.jobs > 0 ? options.config.jobs : hw,
                                 static_cast<int>(std::max<std::size_t>(1, items.size())));
  std::exception_ptr failure;
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    std::mutex fail_mu;
    for (int j = 0; j < jobs; ++j) {
      pool.emplace_back([&] {
        try {
          worker();
        } catch (...) {
          std::lock_guard lock(fail_mu);
          if (!failure) failure = std::current_exception();
          next = items.size();
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<std::string> short_kinds;
  for (std::size_t i = 0; i < items.size(); ++i) {
    m.achieved[items[i].kind] += results[i].validated;
    if (results[i].validated < m.requested[items[i].kind]) {
      short_kinds.push_back(fmt::format("{}/{}: {} of {}", contexts[items[i].env].env->name,
                                        to_string(items[i].kind), results[i].validated,
                                        m.requested[items[i].kind]));
    }
    for (Sample& s : results[i].samples) m.samples.push_back(std::move(s));
  }

  if (!options.out_dir.empty()) write_manifest(m, options.out_dir);
  if (!short_kinds.empty()) {
    std::string msg = "candidate budget exhausted (";
    for (std::size_t i = 0; i < short_kinds.size(); ++i) {
      msg += (i ? "; " : "") + short_kinds[i];
    }
    throw Error(ErrorCode::BudgetExhausted, msg + ")");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

json sample_to_json(const Sample& s) {
  auto ref = [](const std::string& p) { return p.empty() ? json(nullptr) : json(p); };
  json j = {
      {"sample_id", s.sample_id},
      {"op_kind", std::string(to_string(s.op_kind))},
      {"scene_id", s.scene_id},
      {"status", std::string(to_string(s.status))},
      {"source_scene", scene_to_json(s.source_scene)},
      {"instruction", instruction_to_json(s.instruction)},
      {"ideal_dst_scene", scene_to_json(s.ideal_dst_scene)},
      {"actual_dst_scene", scene_to_json(s.actual_dst_scene)},
      {"provenance",
       {{"env", s.provenance.env},
        {"viewpoint_index", s.provenance.viewpoint_index},
        {"viewpoint", viewpoint_to_json(s.provenance.viewpoint)},
        {"seed", std::to_string(s.provenance.seed)},
        {"candidate_index", s.provenance.candidate_index}}},
      {"pixel_change", format_real(s.pixel_change)},
      {"judge", s.judge ? verdict_to_json(*s.judge) : json(nullptr)},
      {"note", s.note},
      {"image_dir", ref(s.image_dir)},
      {"source_image", ref(s.source_image())},
      {"target_image", ref(s.target_image())},
      {"source_masks", ref(s.source_masks())},
      {"target_masks", ref(s.target_masks())},
  };
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  const auto kind = parse_op_kind(j.at("op_kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::ParseError, "bad op_kind", "op_kind");
  s.op_kind = *kind;
  s.scene_id = j.at("scene_id").get<std::string>();
  const auto status = parse_sample_status(j.at("status").get<std::string>());
  if (!status) throw Error(ErrorCode::ParseError, "bad status", "status");
  s.status = *status;
  s.source_scene = scene_from_json(j.at("source_scene"));
  s.instruction = instruction_from_json(j.at("instruction"));
  s.ideal_dst_scene = scene_from_json(j.at("ideal_dst_scene"), ValidationMode::Skip);
  s.actual_dst_scene = scene_from_json(j.at("actual_dst_scene"), ValidationMode::Skip);
  const json& p = j.at("provenance");
  s.provenance.env = p.at("env").get<std::string>();
  s.provenance.viewpoint_index = p.at("viewpoint_index").get<std::size_t>();
  s.provenance.viewpoint = viewpoint_from_json(p.at("viewpoint"));
  s.provenance.seed = std::stoull(p.at("seed").get<std::string>());
  s.provenance.candidate_index = p.at("candidate_index").get<std::uint64_t>();
  s.pixel_change = real_from_json(j.at("pixel_change"));
  if (j.contains("judge") && !j.at("judge").is_null()) {
    s.judge = parse_verdict(j.at("judge").dump());
  }
  s.note = j.value("note", std::string());
  if (j.contains("image_dir") && !j.at("image_dir").is_null()) {
    s.image_dir = j.at("image_dir").get<std::string>();
  }
  return s;
}

json manifest_meta_to_json(const Manifest& m) {
  std::map<std::string, int> status_counts;
  for (const auto& [st, name] : kStatusNames) status_counts[std::string(name)] = 0;
  for (const Sample& s : m.samples) ++status_counts[std::string(to_string(s.status))];
  json scenes = json::array();
  for (const auto& id : m.scene_ids()) scenes.push_back(id);
  return {{"version", m.version},
          {"envs", m.envs},
          {"seed", std::to_string(m.seed)},
          {"counts_requested_per_env", counts_to_json(m.requested)},
          {"counts_validated", counts_to_json(m.achieved)},
          {"status_counts", status_counts},
          {"sample_count", m.samples.size()},
          {"scene_ids", scenes},
          {"config", m.config}};
}

void write_manifest(const Manifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string lines;
  for (const Sample& s : m.samples) lines += sample_to_json(s).dump() + "\n";
  write_file_atomic(dir / kManifestFile, lines);
  write_file_atomic(dir / kManifestMetaFile, manifest_meta_to_json(m).dump(2) + "\n");
}

Manifest read_manifest(const std::filesystem::path& dir) {
  const auto meta_path = dir / kManifestMetaFile;
  if (!std::filesystem::is_regular_file(meta_path)) {
    throw Error(ErrorCode::ConfigError, "manifest not found: " + meta_path.string(), "manifest");
  }
  Manifest m;
  json meta;
  try {
    meta = json::parse(read_text(meta_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, meta_path.string() + ": " + e.what());
  }
  m.version = meta.at("version").get<std::string>();
  if (m.version != kManifestVersion) {
    throw Error(ErrorCode::ParseError, "unsupported manifest version '" + m.version + "'", "version");
  }
  m.envs = meta.at("envs").get<std::vector<std::string>>();
  m.seed = std::stoull(meta.at("seed").get<std::string>());
  m.requested = counts_from_json(meta.at("counts_requested_per_env"));
  m.achieved = counts_from_json(meta.at("counts_validated"));
  m.config = meta.value("config", json::object());
  std::istringstream lines(read_text(dir / kManifestFile));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      m.samples.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, fmt::format("manifest line {}: {}", n, e.what()));
    }
  }
  return m;
}

ReplayReport replay_sample(const Sample& s, const PipelineConfig& config,
                           const std::filesystem::path* manifest_dir) {
  ReplayReport r;
  const SceneTransform& t = s.instruction.transform;
  r.feasible = check_feasible(s.source_scene, t, config.feasibility).feasible;
  const ExecutionResult exec = execute_and_validate(s.source_scene, t, config.execution);
  r.executed = exec.success;
  r.scenes_match = save_scene(exec.ideal_dst) == save_scene(s.ideal_dst_scene) &&
                   save_scene(exec.actual_dst) == save_scene(s.actual_dst_scene);
  const FrameBuffers src = render_for_pipeline(s.source_scene, config);
  const FrameBuffers dst = render_for_pipeline(exec.actual_dst, config);
  r.pixel_change = pixel_change_fraction(src, dst);
  r.significant = r.pixel_change >= config.min_pixel_change;
  if (manifest_dir && !s.image_dir.empty()) {
    const auto dir = *manifest_dir / s.image_dir;
    r.images_match = encode_png(src.color) == read_file(dir / "source_rgb.png") &&
                     encode_png(dst.color) == read_file(dir / "target_rgb.png") &&
                     read_instance_plane(dir / "target_iid.pgm") == dst.instance &&
                     read_instance_plane(dir / "source_iid.pgm") == src.instance;
  }
  return r;
}

}  // namespace gsi
