#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gsi/feasibility.hpp"
#include "gsi/judge.hpp"
#include "gsi/renderer.hpp"
#include "gsi/sampler.hpp"
#include "gsi/spatial_ops.hpp"

namespace gsi {

inline constexpr std::string_view kManifestVersion = "gsi-manifest/1";
inline constexpr std::string_view kManifestFile = "manifest.jsonl";
inline constexpr std::string_view kManifestMetaFile = "manifest.meta.json";

/// Parameter distributions for candidate operations.
struct SamplingConfig {
  std::vector<Direction> cm_directions{Direction::Left, Direction::Right};
  double distance_min = 0.10;
  double distance_max = 0.50;
  std::vector<double> yaw_choices_deg{-90.0, -45.0, 45.0, 90.0, 180.0};
  std::vector<double> scale_choices{0.5, 2.0};
  std::vector<Relation> relations{Relation::Left, Relation::Right, Relation::Front,
                                  Relation::Behind};
  double gap_min = 0.03;
  double gap_max = 0.15;
  std::vector<double> orbit_choices_deg{20.0, 30.0, 45.0};
  std::vector<double> zoom_choices{0.3, 0.5, 0.8};
  /// Share of SR candidates phrased with a spatial predicate when the target
  /// category repeats.
  double predicate_removal_share = 0.5;
};

/// State-match tolerances for execution success.
struct ExecutionTolerance {
  double center = 0.01;
  double rotation_deg = 1.0;
  double min_visible_fraction = 0.6;
};

struct PipelineConfig {
  SamplingConfig sampling;
  FeasibilityConfig feasibility;
  CurationConfig curation;
  ExecutionTolerance execution;
  std::size_t viewpoints_per_room = 4;
  double min_pixel_change = 0.005;
  /// Candidate budget per (env, kind): max(min_attempts, attempts_per_sample * count).
  int attempts_per_sample = 40;
  int min_attempts = 200;
  /// Failed executions after which a viewpoint is retired.
  int max_failures_per_viewpoint = 20;
  /// 0 uses the environment camera's image size.
  int render_width = 0;
  int render_height = 0;
  /// Worker threads; 0 = hardware concurrency.
  int jobs = 0;
};

enum class SampleStatus {
  Validated,
  FilteredInsignificant,
  FilteredJudge,
  FailedExecution,
  /// The quality gate could not be reached; never counted as kept.
  JudgeUnavailable,
};

std::string_view to_string(SampleStatus s);
std::optional<SampleStatus> parse_sample_status(std::string_view s);

struct Provenance {
  std::string env;
  std::size_t viewpoint_index = 0;
  Viewpoint viewpoint;
  std::uint64_t seed = 0;
  /// Position of the candidate in its (env, kind) stream.
  std::uint64_t candidate_index = 0;
};

struct Sample {
  std::string sample_id;
  OpKind op_kind = OpKind::CM;
  std::string scene_id;
  Scene source_scene;
  SpatialInstruction instruction;
  Scene ideal_dst_scene;
  Scene actual_dst_scene;
  Provenance provenance;
  SampleStatus status = SampleStatus::Validated;
  double pixel_change = 0.0;
  std::optional<JudgeVerdict> judge;
  std::string note;
  /// Image prefix relative to the manifest directory ("images/{id}"); empty
  /// when no frames were written.
  std::string image_dir;

  std::string source_image() const { return image_dir.empty() ? "" : image_dir + "/source_rgb.png"; }
  std::string target_image() const { return image_dir.empty() ? "" : image_dir + "/target_rgb.png"; }
  std::string source_masks() const { return image_dir.empty() ? "" : image_dir + "/source_iid.pgm"; }
  std::string target_masks() const { return image_dir.empty() ? "" : image_dir + "/target_iid.pgm"; }
};

struct Manifest {
  std::string version = std::string(kManifestVersion);
  std::vector<std::string> envs;
  std::uint64_t seed = 0;
  std::map<OpKind, int> requested;  // per env
  std::map<OpKind, int> achieved;   // validated, summed over envs
  std::vector<Sample> samples;
  nlohmann::json config = nlohmann::json::object();

  /// Scene ids of validated samples, sorted.
  std::set<std::string> scene_ids() const;
  const Sample* find(std::string_view sample_id) const;
};

struct ExecutionResult {
  Scene ideal_dst;
  Scene actual_dst;
  bool success = false;
  std::string detail;
};

/// Applies Φ with the analytic settle and compares the target's final state
/// with the ideal one.
ExecutionResult execute_and_validate(const Scene& scene, const SceneTransform& t,
                                     const ExecutionTolerance& tolerance = {});

struct EnvSpec {
  std::string name;
  Scene scene;
};

/// `{name}.json` under `env_dir`, or `name` itself when it is a path to an
/// existing file. Throws ConfigError naming the missing file.
EnvSpec load_env(const std::string& name, const std::filesystem::path& env_dir);

struct GenerateOptions {
  PipelineConfig config;
  /// Manifest and images are written here; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Optional quality gate.
  JudgeClient* judge = nullptr;
  /// Scene ids that must not appear (held-out split).
  std::set<std::string> exclude_scene_ids;
  /// Stored verbatim as the manifest's config record.
  nlohmann::json config_record = nlohmann::json::object();
};

/// Candidate loop over every (env, kind) pair. Throws BudgetExhausted after
/// writing the partial manifest when a kind falls short of its count.
Manifest generate_samples(const std::vector<EnvSpec>& envs,
                          const std::map<OpKind, int>& counts, std::uint64_t seed,
                          const GenerateOptions& options);

/// Renders a scene at the pipeline's output size.
FrameBuffers render_for_pipeline(const Scene& scene, const PipelineConfig& config);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);
nlohmann::json manifest_meta_to_json(const Manifest& m);

/// Atomically replaces manifest.jsonl and manifest.meta.json in `dir`.
void write_manifest(const Manifest& m, const std::filesystem::path& dir);
Manifest read_manifest(const std::filesystem::path& dir);

struct ReplayReport {
  bool feasible = false;
  bool executed = false;
  bool significant = false;
  /// Recomputed destination scenes serialize identically to the stored ones.
  bool scenes_match = false;
  /// Re-rendered frames match the stored files byte for byte (when checked).
  std::optional<bool> images_match;
  double pixel_change = 0.0;
  bool ok() const {
    return feasible && executed && significant && scenes_match && images_match.value_or(true);
  }
};

/// Re-runs feasibility, execution and the significance filter for a stored
/// sample. When `manifest_dir` is given the stored frames are compared too.
ReplayReport replay_sample(const Sample& s, const PipelineConfig& config,
                           const std::filesystem::path* manifest_dir = nullptr);

/// Deterministic stream seed for a tag (e.g. "tabletop-small/CM").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

}  // namespace gsi
