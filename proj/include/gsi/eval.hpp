#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gsi/image.hpp"
#include "gsi/judge.hpp"
#include "gsi/synth_pipeline.hpp"

namespace gsi {

// ---------------------------------------------------------------------------
// Image similarity

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Structural similarity on BT.601 luma with an 11x11 Gaussian window
/// (sigma 1.5) over valid windows. Windows touching any excluded pixel
/// (mask = 1) are left out of the mean; 1.0 when none survive. Clamped to
/// [0, 1]. Throws DimensionMismatch.
double masked_ssim(const RgbImage& a, const RgbImage& b, const Mask& exclude);

/// Perceptual distance in [0, 1]: 0 for identical inputs, symmetric.
class PerceptualProvider {
 public:
  virtual ~PerceptualProvider() = default;
  virtual std::string name() const = 0;
  /// Throws ProviderUnavailable.
  virtual double distance(const RgbImage& a, const RgbImage& b, const Mask& exclude) = 0;
};

/// 1 - masked_ssim.
class SsimProxyProvider : public PerceptualProvider {
 public:
  std::string name() const override { return "ssim-proxy"; }
  double distance(const RgbImage& a, const RgbImage& b, const Mask& exclude) override;
};

/// POST {base_url}/score with base64 PNGs {image_a, image_b, mask};
/// expects {"distance": float in [0, 1]}.
class HttpPerceptualProvider : public PerceptualProvider {
 public:
  explicit HttpPerceptualProvider(std::string base_url,
                                  std::chrono::seconds timeout = std::chrono::seconds(60));
  std::string name() const override { return "http:" + base_url_; }
  double distance(const RgbImage& a, const RgbImage& b, const Mask& exclude) override;

 private:
  std::string base_url_;
  std::chrono::seconds timeout_;
};

// ---------------------------------------------------------------------------
// Locality gate and edit locality

enum class EvalProfile { Synthetic, Real };
std::string_view to_string(EvalProfile p);
std::optional<EvalProfile> parse_eval_profile(std::string_view s);

struct GateThresholds {
  double min_masked_ssim = 0.90;
  double max_masked_perceptual = 0.15;
  EvalProfile profile = EvalProfile::Synthetic;

  static GateThresholds synthetic() { return {0.90, 0.15, EvalProfile::Synthetic}; }
  static GateThresholds real() { return {0.75, 0.30, EvalProfile::Real}; }
};

struct GateResult {
  bool passed = false;
  double masked_ssim = 0.0;
  double perceptual = 0.0;
};

/// Inclusive at both thresholds.
GateResult locality_gate(const RgbImage& original, const RgbImage& edited, const Mask& target_mask,
                         const GateThresholds& thresholds, PerceptualProvider& provider);

/// 100 * (1 - perceptual distance).
double edit_locality_score(const RgbImage& original, const RgbImage& edited,
                           const Mask& target_mask, PerceptualProvider& provider);

/// Union of projected boxes of `ids` in both scenes, dilated by `dilation`
/// pixels. Sizes follow the source camera. An empty id list covers every
/// object (perspective changes).
Mask edit_region_mask(const Scene& src, const Scene& dst, const std::vector<std::string>& ids,
                      int width, int height, int dilation = 8);

// ---------------------------------------------------------------------------
// Palette state estimation

struct EstimatedObject {
  std::string id;
  bool present = false;
  std::size_t pixels = 0;
  Vec3 center = Vec3::Zero();
  Rotation rotation;
  double scale = 1.0;
  std::string support_id;
  /// Pose fitted against the image (false: kept from the source scene).
  bool refined = false;
  /// Pixels disagreeing with the fitted render.
  std::size_t residual = 0;
};

struct EstimatedState {
  std::map<std::string, EstimatedObject> objects;
  /// Set when the camera was fitted.
  std::optional<CameraState> camera;
  /// Fitted orbit angle (radians, about the source pivot) and dolly (meters).
  double orbit = 0.0;
  double dolly = 0.0;

  const EstimatedObject* find(std::string_view id) const;
};

struct EstimateOptions {
  /// Per-channel tolerance for palette matching, shades folded in.
  int color_tolerance = 24;
  /// Objects keep their world poses and the camera moves.
  bool fit_camera = false;
  /// Fit a uniform size factor for changed objects.
  bool fit_scale = false;
  /// Fewer matching pixels than this count as absent.
  std::size_t min_present_pixels = 4;
};

/// Recovers object presence and poses from a flat-shaded image of the
/// source scene's objects. Throws PaletteAmbiguous and DimensionMismatch.
EstimatedState estimate_state(const RgbImage& edited, const Scene& source,
                              const EstimateOptions& options = {});

// ---------------------------------------------------------------------------
// Metrics

struct ComplianceTolerances {
  double direction_cosine = 0.7;
  double magnitude_min = 0.5;
  double magnitude_max = 1.5;
  double rotation_deg = 30.0;
  double area_ratio_min = 0.6;
  double area_ratio_max = 1.6;
  /// OP/RP: the estimate must be this much closer to the ideal than the
  /// source position is.
  double plausible_fraction = 0.5;
  /// SR: non-targets with at least this many pixels in the ideal render must
  /// stay present.
  std::size_t bystander_min_pixels = 50;
};

/// What the metrics need from a sample.
struct EvalCase {
  OpKind kind = OpKind::CM;
  Scene source;
  SceneTransform transform;
  Scene ideal_dst;
  SpatialInstruction instruction;
};

EvalCase eval_case_from_sample(const Sample& s);

struct ComplianceResult {
  bool compliant = false;
  std::string detail;
};

ComplianceResult instruction_compliance(const EstimatedState& estimate, const EvalCase& c,
                                        const RgbImage& edited,
                                        const ComplianceTolerances& tol = {});

struct AccuracyBreakdown {
  double score = 0.0;
  double translation_error = 0.0;
  std::optional<double> rotation_error;  // normalized by pi
  std::optional<double> relative_error;
  std::string detail;
};

/// Throws EstimationUnavailable when the target cannot be located.
AccuracyBreakdown spatial_accuracy(const EstimatedState& estimate, const EvalCase& c);

/// Deterministic appearance check without a judge.
bool palette_appearance_consistent(const RgbImage& edited, const EvalCase& c,
                                   int color_tolerance = 24);

/// 100 / 0 from the judge; nullopt when the judge is unavailable.
std::optional<double> judge_appearance_consistency(const EvalCase& c, const RgbImage& source,
                                                   const RgbImage& edited, JudgeClient& judge);

// ---------------------------------------------------------------------------
// Per-sample evaluation and reports

struct EvalConfig {
  GateThresholds gate = GateThresholds::synthetic();
  ComplianceTolerances tolerances;
  int mask_dilation = 8;
  int color_tolerance = 24;
};

struct EvalResult {
  std::string sample_id;
  std::string dataset;
  OpKind op_kind = OpKind::CM;
  bool missing = false;
  bool gate_passed = false;
  double masked_ssim = 0.0;
  double perceptual = 0.0;
  double ic = 0.0;
  double sa = 0.0;
  double el = 0.0;
  /// nullopt when unscored (judge unavailable).
  std::optional<double> ac;
  std::string ac_source;  // "palette" or "judge"
  double translation_error_norm = 0.0;
  double rotation_error = 0.0;  // radians
  std::optional<double> relative_pose_error;
  std::vector<std::string> notes;
};

/// Scores one candidate image against a synthetic sample. `judge` switches
/// AC from the palette check to the judge.
EvalResult evaluate_sample(const Sample& sample, const RgbImage& source_image,
                           const RgbImage& edited, const EvalConfig& config,
                           PerceptualProvider& provider, JudgeClient* judge = nullptr);

/// Scores a candidate for an arbitrary case. A supplied `estimate` replaces
/// palette estimation (real images); AC then needs the judge.
EvalResult evaluate_case(const std::string& sample_id, const EvalCase& c,
                         const RgbImage& source_image, const RgbImage& edited,
                         const EvalConfig& config, PerceptualProvider& provider,
                         JudgeClient* judge = nullptr, const EstimatedState* estimate = nullptr);

/// "GSI-Syn" or "GSI-Real".
std::string_view dataset_label(EvalProfile p);

/// {"objects": [{id, present, center, rotation, scale}], "orbit"?, "dolly"?}
nlohmann::json estimated_state_to_json(const EstimatedState& s);
/// Throws ParseError.
EstimatedState estimated_state_from_json(const nlohmann::json& j);

/// A sample with no candidate image: zero on every metric.
EvalResult missing_result(const Sample& sample, const std::string& dataset);
EvalResult missing_result(const std::string& sample_id, OpKind kind, const std::string& dataset);

nlohmann::json eval_result_to_json(const EvalResult& r);
EvalResult eval_result_from_json(const nlohmann::json& j);

struct ReportRow {
  std::string dataset;
  std::string group;  // op kind or "overall"
  std::size_t samples = 0;
  double ic = 0.0;
  double sa = 0.0;
  double ac = 0.0;
  double el = 0.0;
  double avg = 0.0;
  std::size_t ac_scored = 0;
  std::size_t gate_passed = 0;
  std::size_t missing = 0;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<std::string> notes;
  const ReportRow* find(std::string_view dataset, std::string_view group) const;
};

/// Per (dataset, op kind) rows followed by each dataset's overall row. Avg
/// is the mean of IC, SA, AC, EL. Throws EmptyInput.
Report aggregate_report(const std::vector<EvalResult>& results);
nlohmann::json report_to_json(const Report& r);
std::string report_to_text(const Report& r);

}  // namespace gsi
