#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsi/eval.hpp"
#include "gsi/feasibility.hpp"
#include "gsi/image.hpp"
#include "gsi/judge.hpp"
#include "gsi/scene.hpp"
#include "gsi/spatial_ops.hpp"
#include "gsi/synth_pipeline.hpp"

namespace gsi {

// ---------------------------------------------------------------------------
// Frame selection

inline constexpr int kSharpnessCrop = 256;
/// Share of Nyquist above which spectral energy counts as detail.
inline constexpr double kSharpnessCutoff = 0.25;

/// Share of non-DC spectral energy of the center 256x256 luma crop above
/// 0.25 Nyquist (radial). 0 for constant images. Throws ImageTooSmall.
double sharpness_score(const RgbImage& image);

struct FrameCandidate {
  std::string frame_id;
  double sharpness = 0.0;
  int object_count = 0;
};

/// Every `stride`-th frame (positions 0, stride, ...), ranked by sharpness
/// then object count (both descending, ties keep order), first `top_k`.
std::vector<FrameCandidate> select_frames(const std::vector<FrameCandidate>& frames,
                                          int stride = 20, std::size_t top_k = SIZE_MAX);

// ---------------------------------------------------------------------------
// Grounded scenes

/// One detection in camera coordinates (+x right, +y down, +z forward).
struct Detection {
  std::string label;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  Rotation rotation;
  double score = 1.0;
};

std::vector<Detection> detections_from_json(const nlohmann::json& j);
Intrinsics intrinsics_from_json(const nlohmann::json& j);

struct GroundedFrame {
  std::string frame_id;
  std::filesystem::path image;
  Scene scene;
  double sharpness = 0.0;
  /// Manipulable detections.
  int object_count = 0;
  std::vector<std::string> warnings;
};

/// Builds a z-up scene from camera-frame detections: the camera sits above
/// the world origin heading along +y with the given pitch (negative looks
/// down), the floor is the lowest box bottom, and objects resting on a larger
/// box get that box's top as support. Colors are sampled from `image` when
/// given. Validation is relaxed: collisions and support gaps become warnings.
GroundedFrame ground_frame(const std::string& frame_id, const std::vector<Detection>& detections,
                           const Intrinsics& intrinsics, double pitch = 0.0,
                           const RgbImage* image = nullptr, double min_score = 0.0);

/// Reads `{id}.png`, `{id}.grounding.json` and `{id}.intrinsics.json` (or a
/// shared `intrinsics.json`) from `dir`. The intrinsics file may carry an
/// optional `pitch_deg`.
GroundedFrame load_grounded_frame(const std::filesystem::path& dir, const std::string& frame_id,
                                  double min_score = 0.0);

/// Frame ids with a grounding file in `dir`, sorted.
std::vector<std::string> list_grounded_frames(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Real samples and review

enum class ReviewState { Pending, JudgePassed, Dropped, Accepted, Rejected, Edited };
std::string_view to_string(ReviewState s);
std::optional<ReviewState> parse_review_state(std::string_view s);

/// Pending -> JudgePassed | Dropped; Pending | JudgePassed -> Accepted |
/// Rejected | Edited. Everything else throws InvalidTransition.
bool transition_allowed(ReviewState from, ReviewState to);

struct RealSample {
  std::string sample_id;
  OpKind op_kind = OpKind::CM;
  std::string frame_id;
  /// Source image path as given to the adapter.
  std::string image;
  Scene source_scene;
  SpatialInstruction instruction;
  Scene dst_scene;
  /// Template caption; never overwritten.
  std::string caption;
  std::optional<std::string> rewritten_caption;
  std::optional<std::string> edited_caption;
  /// Relative to the manifest directory ("overlays/{id}.png").
  std::string overlay;
  ReviewState state = ReviewState::Pending;
  /// Judge or reviewer reason for the latest transition.
  std::string reason;
  std::vector<std::string> warnings;

  /// Edited, else rewritten, else template caption.
  const std::string& effective_caption() const;
  /// Throws InvalidTransition.
  void transition(ReviewState to, std::string why = {});
};

struct RealProposalConfig {
  SamplingConfig sampling;
  FeasibilityConfig feasibility;
  int per_kind = 1;
};

/// Candidate CM / OR / SR operations on a grounded frame: spatial-ops
/// constructors plus feasibility with collisions downgraded to warnings and
/// no settling. Throws UnsupportedKind for other kinds, NoFeasibleOperation
/// when nothing survives.
std::vector<RealSample> propose_real_operations(const GroundedFrame& frame,
                                                const std::vector<OpKind>& kinds,
                                                std::uint64_t seed,
                                                const RealProposalConfig& config = {});

// ---------------------------------------------------------------------------
// Overlays

inline constexpr Rgb kOverlaySourceColor{0, 255, 0};
inline constexpr Rgb kOverlayTargetColor{255, 0, 0};

struct Overlay {
  RgbImage image;  // two panels side by side
  /// Right panel shows the source box dashed (removal).
  bool dashed = false;
};

/// Left panel: `image` with the source box wireframe (green); right panel:
/// the destination box (red), or the source box dashed when `dst` is empty.
/// Throws NothingVisible when no edge lands in front of the camera and inside
/// the frame.
Overlay render_overlay(const RgbImage& image, const Obb& src, const std::optional<Obb>& dst,
                       const CameraState& camera);

/// Overlay for a sample's target.
Overlay render_sample_overlay(const RgbImage& image, const RealSample& s);

// ---------------------------------------------------------------------------
// Judge gate

/// Sends the overlay and metadata as a gate_real request. Accept moves the
/// sample to JudgePassed (storing a rewritten caption separately), reject to
/// Dropped with the reason. Throws JudgeUnavailable (also for replies that
/// stayed malformed through every retry) and leaves the sample pending.
void judge_gate_real(RealSample& sample, const RgbImage& overlay, JudgeClient& judge);

// ---------------------------------------------------------------------------
// Manifest

inline constexpr std::string_view kRealManifestVersion = "gsi-real-manifest/1";
inline constexpr std::string_view kRealManifestFile = "real_manifest.jsonl";
inline constexpr std::string_view kReviewLogFile = "review.log.jsonl";

nlohmann::json real_sample_to_json(const RealSample& s);
RealSample real_sample_from_json(const nlohmann::json& j);

/// Atomically replaces `real_manifest.jsonl` in `dir`.
void write_real_manifest(const std::vector<RealSample>& samples, const std::filesystem::path& dir);
std::vector<RealSample> read_real_manifest(const std::filesystem::path& dir);

/// Ground-truth case for scoring an edit of a real sample.
EvalCase eval_case_from_real(const RealSample& s);

}  // namespace gsi
