#include "gsi/config.hpp"

#include <fmt/format.h>

#include <set>

#include "gsi/errors.hpp"
#include "toml.hpp"

namespace gsi {
namespace fs = std::filesystem;

namespace {

// Reads one table, remembering which keys were consumed so that leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const toml::table* table, std::string path, const std::string& origin)
      : table_(table), path_(std::move(path)), origin_(origin) {}

  [[noreturn]] void fail(std::string_view key, std::string_view what) const {
    throw Error(ErrorCode::ConfigError,
                fmt::format("{}: {}: {}", origin_, qualified(key), what), qualified(key));
  }

  std::string qualified(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const toml::node* node(std::string_view key) {
    if (!table_) return nullptr;
    seen_.insert(std::string(key));
    return table_->get(key);
  }

  Section sub(std::string_view key) {
    const toml::node* n = node(key);
    if (n && !n->is_table()) fail(key, "expected a table");
    return Section(n ? n->as_table() : nullptr, qualified(key), origin_);
  }

  bool has(std::string_view key) const { return table_ && table_->contains(key); }

  void get(std::string_view key, bool& out) {
    if (const toml::node* n = node(key)) {
      const auto v = n->value<bool>();
      if (!n->is_boolean() || !v) fail(key, "expected a boolean");
      out = *v;
    }
  }

  void get(std::string_view key, double& out) {
    if (const toml::node* n = node(key)) out = number(key, *n);
  }

  template <class Int>
    requires std::is_integral_v<Int>
  void get(std::string_view key, Int& out) {
    if (const toml::node* n = node(key)) {
      if (!n->is_integer()) fail(key, "expected an integer");
      const std::int64_t v = *n->value<std::int64_t>();
      if constexpr (std::is_unsigned_v<Int>) {
        if (v < 0) fail(key, "expected a non-negative integer");
      }
      out = static_cast<Int>(v);
    }
  }

  void get(std::string_view key, std::string& out) {
    if (const toml::node* n = node(key)) {
      if (!n->is_string()) fail(key, "expected a string");
      out = *n->value<std::string>();
    }
  }

  void get(std::string_view key, std::vector<double>& out) {
    if (const toml::node* n = node(key)) {
      out.clear();
      for (const toml::node& e : array(key, *n)) out.push_back(number(key, e));
    }
  }

  void get(std::string_view key, std::vector<std::string>& out) {
    if (const toml::node* n = node(key)) {
      out.clear();
      for (const toml::node& e : array(key, *n)) {
        if (!e.is_string()) fail(key, "expected an array of strings");
        out.push_back(*e.value<std::string>());
      }
    }
  }

  template <class E, class Parse>
  void get_enums(std::string_view key, std::vector<E>& out, Parse parse) {
    if (!has(key)) return node(key), void();
    std::vector<std::string> names;
    get(key, names);
    out.clear();
    for (const std::string& s : names) {
      const auto v = parse(s);
      if (!v) fail(key, fmt::format("unknown value '{}'", s));
      out.push_back(*v);
    }
  }

  void get_range(std::string_view key, double& lo, double& hi) {
    if (!has(key)) return;
    std::vector<double> v;
    get(key, v);
    if (v.size() != 2 || v[0] > v[1]) fail(key, "expected [min, max]");
    lo = v[0];
    hi = v[1];
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!seen_.count(std::string(k.str()))) fail(k.str(), "unknown key");
    }
  }

  const toml::table* table() const { return table_; }

 private:
  double number(std::string_view key, const toml::node& n) const {
    if (n.is_floating_point()) return *n.value<double>();
    if (n.is_integer()) return static_cast<double>(*n.value<std::int64_t>());
    fail(key, "expected a number");
  }

  const toml::array& array(std::string_view key, const toml::node& n) const {
    if (!n.is_array()) fail(key, "expected an array");
    return *n.as_array();
  }

  const toml::table* table_;
  std::string path_;
  const std::string& origin_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void check(bool ok, Section& s, std::string_view key, std::string_view what) {
  if (!ok) s.fail(key, what);
}

}  // namespace

std::map<OpKind, int> parse_counts(std::string_view text) {
  std::map<OpKind, int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ConfigError, fmt::format("counts: '{}' is not KIND=N", item), "counts");
    }
    const auto kind = parse_op_kind(item.substr(0, eq));
    if (!kind) {
      throw Error(ErrorCode::ConfigError,
                  fmt::format("counts: unknown op kind '{}'", item.substr(0, eq)), "counts");
    }
    int n = 0;
    const std::string num(item.substr(eq + 1));
    std::size_t used = 0;
    try {
      n = std::stoi(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size() || n < 0) {
      throw Error(ErrorCode::ConfigError, fmt::format("counts: bad count '{}'", num), "counts");
    }
    out[*kind] = n;
  }
  return out;
}

namespace {

ForgeConfig parse_impl(std::string_view text, const fs::path& base_dir, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::ConfigError,
                fmt::format("{}: line {}: {}", origin, e.source().begin.line, e.description()));
  }
  ForgeConfig c;
  Section top(&root, "", origin);
  std::string schema;
  top.get("schema", schema);
  if (schema != kConfigSchema) {
    top.fail("schema", fmt::format("expected \"{}\"", kConfigSchema));
  }

  {
    Section g = top.sub("generate");
    g.get("envs", c.generate.envs);
    std::string env_dir = c.generate.env_dir.string();
    g.get("env_dir", env_dir);
    c.generate.env_dir = resolve(env_dir, base_dir);
    g.get("seed", c.generate.seed);
    PipelineConfig& p = c.pipeline;
    g.get("viewpoints_per_room", p.viewpoints_per_room);
    g.get("min_pixel_change", p.min_pixel_change);
    g.get("attempts_per_sample", p.attempts_per_sample);
    g.get("min_attempts", p.min_attempts);
    g.get("max_failures_per_viewpoint", p.max_failures_per_viewpoint);
    g.get("render_width", p.render_width);
    g.get("render_height", p.render_height);
    g.get("jobs", p.jobs);
    check(p.viewpoints_per_room >= 1, g, "viewpoints_per_room", "must be >= 1");
    check(p.attempts_per_sample >= 1, g, "attempts_per_sample", "must be >= 1");
    check(p.min_pixel_change >= 0.0 && p.min_pixel_change <= 1.0, g, "min_pixel_change",
          "must be in [0, 1]");
    check(p.jobs >= 0, g, "jobs", "must be >= 0");
    Section counts = g.sub("counts");
    if (counts.table()) {
      for (const auto& [k, v] : *counts.table()) {
        const auto kind = parse_op_kind(k.str());
        if (!kind) counts.fail(k.str(), "unknown op kind");
        int n = 0;
        counts.get(k.str(), n);
        check(n >= 0, counts, k.str(), "must be >= 0");
        c.generate.counts[*kind] = n;
      }
    }
    g.finish();
  }

  {
    Section j = top.sub("judge");
    JudgeConfig& jc = c.judge;
    j.get("enabled", jc.enabled);
    j.get("mock", jc.mock);
    j.get("endpoint", jc.endpoint);
    j.get("token_env", jc.token_env);
    std::string cache;
    j.get("cache_dir", cache);
    jc.cache_dir = resolve(cache, base_dir);
    j.get("attempts", jc.attempts);
    j.get("base_delay_ms", jc.base_delay_ms);
    j.get("max_in_flight", jc.max_in_flight);
    j.get("timeout_s", jc.timeout_s);
    check(jc.attempts >= 1, j, "attempts", "must be >= 1");
    check(jc.max_in_flight >= 1, j, "max_in_flight", "must be >= 1");
    check(jc.timeout_s >= 1, j, "timeout_s", "must be >= 1");
    j.finish();
  }

  {
    Section s = top.sub("sampling");
    SamplingConfig& sc = c.pipeline.sampling;
    s.get_enums("cm_directions", sc.cm_directions, parse_direction);
    s.get_range("distance", sc.distance_min, sc.distance_max);
    s.get("yaw_choices_deg", sc.yaw_choices_deg);
    s.get("scale_choices", sc.scale_choices);
    s.get_enums("relations", sc.relations, parse_relation);
    s.get_range("gap", sc.gap_min, sc.gap_max);
    s.get("orbit_choices_deg", sc.orbit_choices_deg);
    s.get("zoom_choices", sc.zoom_choices);
    s.get("predicate_removal_share", sc.predicate_removal_share);
    check(!sc.cm_directions.empty(), s, "cm_directions", "must not be empty");
    check(!sc.yaw_choices_deg.empty(), s, "yaw_choices_deg", "must not be empty");
    check(!sc.scale_choices.empty(), s, "scale_choices", "must not be empty");
    check(!sc.relations.empty(), s, "relations", "must not be empty");
    check(!sc.orbit_choices_deg.empty(), s, "orbit_choices_deg", "must not be empty");
    check(!sc.zoom_choices.empty(), s, "zoom_choices", "must not be empty");
    s.finish();
  }

  {
    Section f = top.sub("feasibility");
    FeasibilityConfig& fc = c.pipeline.feasibility;
    f.get("min_visible_fraction", fc.min_visible_fraction);
    f.get("max_occlusion", fc.max_occlusion);
    f.get("containment_margin", fc.containment_margin);
    f.get("min_translation", fc.min_translation);
    f.get("min_rotation_deg", fc.min_rotation_deg);
    f.get("min_scale_ratio", fc.min_scale_ratio);
    f.get("max_scale_ratio", fc.max_scale_ratio);
    f.get("raster_width", fc.raster_width);
    f.get("raster_height", fc.raster_height);
    check(fc.raster_width > 0 && fc.raster_height > 0, f, "raster_width", "must be positive");
    f.finish();
  }

  {
    Section u = top.sub("curation");
    CurationConfig& cc = c.pipeline.curation;
    u.get("grid_spacing", cc.grid_spacing);
    u.get("clearance", cc.clearance);
    u.get("eps", cc.eps);
    u.get("min_pts", cc.min_pts);
    u.get("eye_height", cc.eye_height);
    u.get("pitch_deg", cc.pitch_deg);
    u.get("yaw_bins", cc.yaw_bins);
    u.get("min_actionability", cc.min_actionability);
    u.get("min_visible_fraction", cc.min_visible_fraction);
    u.get("raster_width", cc.raster_width);
    u.get("raster_height", cc.raster_height);
    check(cc.grid_spacing > 0.0, u, "grid_spacing", "must be positive");
    check(cc.yaw_bins >= 1, u, "yaw_bins", "must be >= 1");
    u.finish();
  }

  {
    Section x = top.sub("execution");
    ExecutionTolerance& et = c.pipeline.execution;
    x.get("center", et.center);
    x.get("rotation_deg", et.rotation_deg);
    x.get("min_visible_fraction", et.min_visible_fraction);
    x.finish();
  }

  {
    Section e = top.sub("eval");
    EvalConfig& ec = c.eval;
    std::string profile = std::string(to_string(ec.gate.profile));
    e.get("profile", profile);
    const auto p = parse_eval_profile(profile);
    if (!p) e.fail("profile", "expected \"synthetic\" or \"real\"");
    ec.gate = *p == EvalProfile::Real ? GateThresholds::real() : GateThresholds::synthetic();
    e.get("min_masked_ssim", ec.gate.min_masked_ssim);
    e.get("max_masked_perceptual", ec.gate.max_masked_perceptual);
    e.get("mask_dilation", ec.mask_dilation);
    e.get("color_tolerance", ec.color_tolerance);
    e.get("perceptual_endpoint", c.perceptual_endpoint);
    check(ec.mask_dilation >= 0, e, "mask_dilation", "must be >= 0");
    check(ec.color_tolerance >= 0 && ec.color_tolerance <= 255, e, "color_tolerance",
          "must be in [0, 255]");
    Section t = e.sub("tolerances");
    ComplianceTolerances& ct = ec.tolerances;
    t.get("direction_cosine", ct.direction_cosine);
    t.get("magnitude_min", ct.magnitude_min);
    t.get("magnitude_max", ct.magnitude_max);
    t.get("rotation_deg", ct.rotation_deg);
    t.get("area_ratio_min", ct.area_ratio_min);
    t.get("area_ratio_max", ct.area_ratio_max);
    t.get("plausible_fraction", ct.plausible_fraction);
    t.get("bystander_min_pixels", ct.bystander_min_pixels);
    t.finish();
    e.finish();
  }

  {
    Section r = top.sub("real");
    RealConfig& rc = c.real;
    r.get("stride", rc.stride);
    r.get("top_k", rc.top_k);
    r.get_enums("kinds", rc.kinds, parse_op_kind);
    r.get("per_kind", rc.per_kind);
    r.get("min_grounding_score", rc.min_grounding_score);
    check(rc.stride >= 1, r, "stride", "must be >= 1");
    check(rc.per_kind >= 1, r, "per_kind", "must be >= 1");
    for (OpKind k : rc.kinds) {
      check(k == OpKind::CM || k == OpKind::OR || k == OpKind::SR, r, "kinds",
            "real samples support CM, OR and SR only");
    }
    r.finish();
  }

  top.finish();
  return c;
}

}  // namespace

ForgeConfig parse_config(std::string_view text, const fs::path& base_dir) {
  return parse_impl(text, base_dir, "<config>");
}

ForgeConfig load_config(const fs::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    throw Error(ErrorCode::ConfigError, fmt::format("cannot read config {}", path.string()));
  }
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  ForgeConfig c = parse_impl(
      std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), base,
      path.string());
  c.source = path;
  return c;
}

nlohmann::json config_to_json(const ForgeConfig& c) {
  using nlohmann::json;
  auto names = [](const auto& values) {
    json a = json::array();
    for (const auto& v : values) a.push_back(std::string(to_string(v)));
    return a;
  };
  json counts = json::object();
  for (const auto& [k, n] : c.generate.counts) counts[std::string(to_string(k))] = n;
  const PipelineConfig& p = c.pipeline;
  const SamplingConfig& s = p.sampling;
  const FeasibilityConfig& f = p.feasibility;
  const CurationConfig& u = p.curation;
  const EvalConfig& e = c.eval;
  const ComplianceTolerances& t = e.tolerances;
  return json{
      {"schema", kConfigSchema},
      {"generate",
       {{"envs", c.generate.envs},
        {"seed", c.generate.seed},
        {"counts", counts},
        {"viewpoints_per_room", p.viewpoints_per_room},
        {"min_pixel_change", p.min_pixel_change},
        {"attempts_per_sample", p.attempts_per_sample},
        {"min_attempts", p.min_attempts},
        {"max_failures_per_viewpoint", p.max_failures_per_viewpoint},
        {"render_width", p.render_width},
        {"render_height", p.render_height}}},
      {"judge",
       {{"enabled", c.judge.enabled},
        {"mock", c.judge.mock},
        {"attempts", c.judge.attempts},
        {"max_in_flight", c.judge.max_in_flight}}},
      {"sampling",
       {{"cm_directions", names(s.cm_directions)},
        {"distance", {s.distance_min, s.distance_max}},
        {"yaw_choices_deg", s.yaw_choices_deg},
        {"scale_choices", s.scale_choices},
        {"relations", names(s.relations)},
        {"gap", {s.gap_min, s.gap_max}},
        {"orbit_choices_deg", s.orbit_choices_deg},
        {"zoom_choices", s.zoom_choices},
        {"predicate_removal_share", s.predicate_removal_share}}},
      {"feasibility",
       {{"min_visible_fraction", f.min_visible_fraction},
        {"max_occlusion", f.max_occlusion},
        {"containment_margin", f.containment_margin},
        {"min_translation", f.min_translation},
        {"min_rotation_deg", f.min_rotation_deg},
        {"min_scale_ratio", f.min_scale_ratio},
        {"max_scale_ratio", f.max_scale_ratio},
        {"raster_width", f.raster_width},
        {"raster_height", f.raster_height}}},
      {"curation",
       {{"grid_spacing", u.grid_spacing},
        {"clearance", u.clearance},
        {"eps", u.eps},
        {"min_pts", u.min_pts},
        {"eye_height", u.eye_height},
        {"pitch_deg", u.pitch_deg},
        {"yaw_bins", u.yaw_bins},
        {"min_actionability", u.min_actionability},
        {"min_visible_fraction", u.min_visible_fraction},
        {"raster_width", u.raster_width},
        {"raster_height", u.raster_height}}},
      {"execution",
       {{"center", p.execution.center},
        {"rotation_deg", p.execution.rotation_deg},
        {"min_visible_fraction", p.execution.min_visible_fraction}}},
      {"eval",
       {{"profile", to_string(e.gate.profile)},
        {"min_masked_ssim", e.gate.min_masked_ssim},
        {"max_masked_perceptual", e.gate.max_masked_perceptual},
        {"mask_dilation", e.mask_dilation},
        {"color_tolerance", e.color_tolerance},
        {"tolerances",
         {{"direction_cosine", t.direction_cosine},
          {"magnitude_min", t.magnitude_min},
          {"magnitude_max", t.magnitude_max},
          {"rotation_deg", t.rotation_deg},
          {"area_ratio_min", t.area_ratio_min},
          {"area_ratio_max", t.area_ratio_max},
          {"plausible_fraction", t.plausible_fraction},
          {"bystander_min_pixels", t.bystander_min_pixels}}}}},
      {"real",
       {{"stride", c.real.stride},
        {"top_k", c.real.top_k},
        {"kinds", names(c.real.kinds)},
        {"per_kind", c.real.per_kind},
        {"min_grounding_score", c.real.min_grounding_score}}},
  };
}

}  // namespace gsi
