#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gsi/eval.hpp"
#include "gsi/synth_pipeline.hpp"

namespace gsi {

inline constexpr std::string_view kConfigSchema = "gsi-forge-config/1";

struct JudgeConfig {
  bool enabled = false;
  /// In-process mock instead of the HTTP service.
  bool mock = false;
  /// Empty falls back to GSI_JUDGE_URL.
  std::string endpoint;
  /// Environment variable holding the bearer token.
  std::string token_env = "GSI_JUDGE_TOKEN";
  /// Empty uses the default cache location.
  std::filesystem::path cache_dir;
  int attempts = 3;
  int base_delay_ms = 1000;
  int max_in_flight = 4;
  int timeout_s = 120;
};

struct GenerateConfig {
  std::vector<std::string> envs;
  std::filesystem::path env_dir = "envs";
  std::uint64_t seed = 0;
  /// Per environment.
  std::map<OpKind, int> counts;
};

struct RealConfig {
  int stride = 20;
  std::size_t top_k = 50;
  std::vector<OpKind> kinds{OpKind::CM, OpKind::OR, OpKind::SR};
  /// Candidates proposed per kind and frame.
  int per_kind = 1;
  /// Detections scoring below this are dropped on load.
  double min_grounding_score = 0.0;
};

struct ForgeConfig {
  GenerateConfig generate;
  PipelineConfig pipeline;
  JudgeConfig judge;
  EvalConfig eval;
  /// Empty uses the built-in SSIM proxy.
  std::string perceptual_endpoint;
  RealConfig real;
  /// File the config was read from; empty for defaults.
  std::filesystem::path source;
};

/// Throws ConfigError naming the file and the offending key. Unknown keys are
/// errors. Relative paths resolve against the file's directory.
ForgeConfig load_config(const std::filesystem::path& path);
ForgeConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});

/// Effective settings, recorded in manifest metadata.
nlohmann::json config_to_json(const ForgeConfig& c);

/// "CM=10,SR=5"; throws ConfigError.
std::map<OpKind, int> parse_counts(std::string_view text);

}  // namespace gsi
