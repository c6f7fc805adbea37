#include "gsi/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "CLI11.hpp"

#include "gsi/config.hpp"
#include "gsi/errors.hpp"
#include "gsi/eval.hpp"
#include "gsi/image.hpp"
#include "gsi/real_adapter.hpp"
#include "gsi/review.hpp"
#include "gsi/synth_pipeline.hpp"

namespace gsi::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::atomic<bool> g_shutdown{false};

extern "C" void on_signal(int) { g_shutdown.store(true); }

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
      return kExitConfig;
    case ErrorCode::BudgetExhausted:
      return kExitShortfall;
    case ErrorCode::PortInUse:
    case ErrorCode::ManifestLocked:
      return kExitService;
    default:
      return kExitError;
  }
}

int hardware_jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception
/// is rethrown after every worker stops.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const int workers = std::clamp<int>(jobs > 0 ? jobs : hardware_jobs(), 1,
                                      static_cast<int>(std::max<std::size_t>(n, 1)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

bool parse_switch(const std::string& value) {
  if (value == "on") return true;
  if (value == "off") return false;
  throw Error(ErrorCode::ConfigError, "--judge must be on or off, got " + value, "judge");
}

ForgeConfig load_or_default(const std::string& path) {
  if (path.empty()) return parse_config(fmt::format("schema = \"{}\"\n", kConfigSchema));
  return load_config(path);
}

/// Judge client from settings; nullptr when disabled.
std::unique_ptr<JudgeClient> make_judge(const JudgeConfig& jc) {
  if (!jc.enabled) return nullptr;
  JudgePolicy policy;
  policy.attempts = jc.attempts;
  policy.base_delay = std::chrono::milliseconds(jc.base_delay_ms);
  policy.max_in_flight = jc.max_in_flight;
  std::shared_ptr<JudgeTransport> transport;
  if (jc.mock) {
    transport = std::make_shared<MockJudge>();
    if (!jc.cache_dir.empty()) policy.cache_dir = jc.cache_dir;
  } else {
    std::string url = jc.endpoint;
    if (url.empty()) {
      if (const char* env = std::getenv("GSI_JUDGE_URL")) url = env;
    }
    if (url.empty()) {
      throw Error(ErrorCode::ConfigError,
                  "the judge is enabled but neither judge.endpoint nor GSI_JUDGE_URL is set",
                  "judge.endpoint");
    }
    std::string token;
    if (const char* t = std::getenv(jc.token_env.c_str())) token = t;
    transport = std::make_shared<HttpJudgeTransport>(url, token, std::chrono::seconds(jc.timeout_s));
    policy.cache_dir = jc.cache_dir.empty() ? default_judge_cache_dir() : jc.cache_dir;
  }
  return std::make_unique<JudgeClient>(std::move(transport), policy);
}

std::unique_ptr<PerceptualProvider> make_provider(const std::string& spec) {
  if (spec.empty() || spec == "ssim") return std::make_unique<SsimProxyProvider>();
  if (spec.starts_with("http://") || spec.starts_with("https://")) {
    return std::make_unique<HttpPerceptualProvider>(spec);
  }
  throw Error(ErrorCode::ConfigError, "--provider must be ssim or an http(s) URL, got " + spec,
              "provider");
}

std::vector<OpKind> parse_kind_list(const std::string& text) {
  std::vector<OpKind> kinds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    const auto k = parse_op_kind(item);
    if (!k) throw Error(ErrorCode::ConfigError, "unknown op kind '" + item + "'", "kinds");
    kinds.push_back(*k);
    pos = comma + 1;
  }
  return kinds;
}

void write_reports(const std::vector<EvalResult>& results, const fs::path& out_dir,
                   std::ostream& out) {
  const Report report = aggregate_report(results);
  const std::string text = report_to_text(report);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_file_atomic(out_dir / "report.txt", text);
  }
  out << text;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string config;
  std::vector<std::string> envs;
  std::string env_dir;
  std::string counts;
  double scale = 1.0;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string judge;
  std::optional<int> jobs;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  ForgeConfig cfg = load_or_default(a.config);
  if (!a.envs.empty()) cfg.generate.envs = a.envs;
  if (!a.env_dir.empty()) cfg.generate.env_dir = a.env_dir;
  if (!a.counts.empty()) cfg.generate.counts = parse_counts(a.counts);
  if (a.seed) cfg.generate.seed = *a.seed;
  if (!a.judge.empty()) cfg.judge.enabled = parse_switch(a.judge);
  if (a.jobs) cfg.pipeline.jobs = *a.jobs;
  if (!(a.scale > 0.0)) throw Error(ErrorCode::ConfigError, "--scale must be positive", "scale");
  if (a.scale != 1.0) {
    for (auto& [kind, n] : cfg.generate.counts) {
      n = std::max(1, static_cast<int>(std::lround(n * a.scale)));
    }
  }
  if (cfg.generate.envs.empty()) {
    throw Error(ErrorCode::ConfigError, "no environments: pass --env or set generate.envs",
                "generate.envs");
  }
  if (cfg.generate.counts.empty()) {
    throw Error(ErrorCode::ConfigError, "no counts: pass --counts or set [generate.counts]",
                "generate.counts");
  }

  std::vector<EnvSpec> envs;
  for (const std::string& name : cfg.generate.envs) {
    envs.push_back(load_env(name, cfg.generate.env_dir));
  }
  const auto judge = make_judge(cfg.judge);
  GenerateOptions options;
  options.config = cfg.pipeline;
  options.out_dir = a.out;
  options.judge = judge.get();
  options.config_record = config_to_json(cfg);

  const Manifest m = generate_samples(envs, cfg.generate.counts, cfg.generate.seed, options);
  std::size_t validated = 0;
  for (const Sample& s : m.samples) validated += s.status == SampleStatus::Validated;
  out << fmt::format("wrote {} validated samples ({} candidates recorded) to {}\n", validated,
                     m.samples.size(), a.out);
  for (const auto& [kind, n] : cfg.generate.counts) {
    const auto it = m.achieved.find(kind);
    out << fmt::format("  {}: {}/{}\n", to_string(kind), it == m.achieved.end() ? 0 : it->second,
                       n * static_cast<int>(envs.size()));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string manifest;
  std::string candidates;
  std::string out;
  std::string profile;
  std::string config;
  std::string judge;
  std::string provider;
  std::optional<int> jobs;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  ForgeConfig cfg = load_or_default(a.config);
  const fs::path mdir = a.manifest;
  const bool synthetic_manifest = fs::exists(mdir / kManifestFile);
  const bool real_manifest = fs::exists(mdir / kRealManifestFile);
  if (!synthetic_manifest && !real_manifest) {
    throw Error(ErrorCode::ConfigError, "no manifest in " + mdir.string(), "manifest");
  }
  EvalProfile profile = synthetic_manifest ? EvalProfile::Synthetic : EvalProfile::Real;
  if (!a.profile.empty()) {
    const auto p = parse_eval_profile(a.profile);
    if (!p) throw Error(ErrorCode::ConfigError, "--profile must be synthetic or real", "profile");
    profile = *p;
  }
  if (cfg.eval.gate.profile != profile) {
    cfg.eval.gate = profile == EvalProfile::Real ? GateThresholds::real() : GateThresholds::synthetic();
  }
  if (!a.judge.empty()) cfg.judge.enabled = parse_switch(a.judge);
  const auto provider = make_provider(a.provider.empty() ? cfg.perceptual_endpoint : a.provider);
  const auto judge = make_judge(cfg.judge);
  const int jobs = a.jobs.value_or(cfg.pipeline.jobs);
  const std::string dataset(dataset_label(profile));
  const fs::path cdir = a.candidates;

  // One task per scored sample; tasks produce a result each.
  struct Task {
    std::string id;
    OpKind kind;
    std::function<EvalResult()> score;
    bool present = false;
  };
  std::vector<Task> tasks;
  Manifest manifest;
  std::vector<RealSample> real;
  if (synthetic_manifest && (profile == EvalProfile::Synthetic || !real_manifest)) {
    manifest = read_manifest(mdir);
    for (const Sample& s : manifest.samples) {
      if (s.status != SampleStatus::Validated) continue;
      const fs::path cand = cdir / (s.sample_id + ".png");
      tasks.push_back({s.sample_id, s.op_kind,
                       [&, &s = s, cand] {
                         return evaluate_sample(s, read_png(mdir / s.source_image()),
                                                read_png(cand), cfg.eval, *provider, judge.get());
                       },
                       fs::exists(cand)});
    }
  } else {
    real = read_real_manifest(mdir);
    for (const RealSample& s : real) {
      if (s.state != ReviewState::Accepted && s.state != ReviewState::Edited) continue;
      const fs::path cand = cdir / (s.sample_id + ".png");
      const fs::path state = cdir / (s.sample_id + ".state.json");
      tasks.push_back({s.sample_id, s.op_kind,
                       [&, &s = s, cand, state] {
                         const auto bytes = read_file(state);
                         const EstimatedState est = estimated_state_from_json(
                             json::parse(std::string(bytes.begin(), bytes.end())));
                         const fs::path src = fs::path(s.image).is_absolute()
                                                  ? fs::path(s.image)
                                                  : mdir / s.image;
                         return evaluate_case(s.sample_id, eval_case_from_real(s), read_png(src),
                                              read_png(cand), cfg.eval, *provider, judge.get(),
                                              &est);
                       },
                       fs::exists(cand) && fs::exists(state)});
    }
  }
  if (tasks.empty()) {
    throw Error(ErrorCode::EmptyInput, "the manifest has no samples to evaluate");
  }
  std::size_t missing = 0;
  for (const Task& t : tasks) missing += !t.present;
  if (missing * 2 > tasks.size()) {
    err << fmt::format("{} of {} candidates are missing from {} (wrong directory?)\n", missing,
                       tasks.size(), cdir.string());
    return kExitShortfall;
  }

  std::vector<EvalResult> results(tasks.size());
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    if (!t.present) {
      results[i] = missing_result(t.id, t.kind, dataset);
      return;
    }
    try {
      results[i] = t.score();
    } catch (const Error& e) {
      // Unreadable candidates score zero like missing ones, with the reason.
      if (e.code() != ErrorCode::ImageIo && e.code() != ErrorCode::DimensionMismatch &&
          e.code() != ErrorCode::ParseError) {
        throw;
      }
      results[i] = missing_result(t.id, t.kind, dataset);
      results[i].notes.push_back(e.what());
    } catch (const json::exception& e) {
      results[i] = missing_result(t.id, t.kind, dataset);
      results[i].notes.push_back(std::string("state file: ") + e.what());
    }
    results[i].dataset = dataset;
  });

  const fs::path odir = a.out;
  fs::create_directories(odir);
  std::string lines;
  for (const EvalResult& r : results) lines += eval_result_to_json(r).dump() + "\n";
  write_file_atomic(odir / "results.jsonl", lines);
  if (missing > 0) err << fmt::format("{} candidates missing; scored 0\n", missing);
  write_reports(results, odir, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir,
               std::ostream& out) {
  std::vector<EvalResult> results;
  for (const std::string& path : inputs) {
    const auto bytes = read_file(path);
    const std::string text(bytes.begin(), bytes.end());
    std::size_t n = 0;
    for (std::size_t pos = 0; pos < text.size();) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      ++n;
      if (end > pos) {
        try {
          results.push_back(eval_result_from_json(json::parse(text.substr(pos, end - pos))));
        } catch (const json::exception& e) {
          throw Error(ErrorCode::ParseError, fmt::format("{}:{}: {}", path, n, e.what()));
        }
      }
      pos = end + 1;
    }
  }
  write_reports(results, out_dir, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export-candidates

int cmd_export_candidates(const std::string& manifest_dir, const std::string& out_dir,
                          const std::string& which, std::ostream& out) {
  if (which != "target" && which != "source") {
    throw Error(ErrorCode::ConfigError, "--which must be target or source", "which");
  }
  const fs::path mdir = manifest_dir;
  const Manifest m = read_manifest(mdir);
  fs::create_directories(out_dir);
  std::size_t n = 0;
  for (const Sample& s : m.samples) {
    if (s.status != SampleStatus::Validated) continue;
    const std::string rel = which == "target" ? s.target_image() : s.source_image();
    if (rel.empty()) throw Error(ErrorCode::ImageIo, s.sample_id + ": the manifest has no frames");
    fs::copy_file(mdir / rel, fs::path(out_dir) / (s.sample_id + ".png"),
                  fs::copy_options::overwrite_existing);
    ++n;
  }
  out << fmt::format("exported {} {} images to {}\n", n, which, out_dir);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export-queue

struct QueueArgs {
  std::string frames;
  std::string out;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string judge;
  std::optional<int> stride;
  std::optional<std::size_t> top_k;
  std::string kinds;
};

int cmd_export_queue(const QueueArgs& a, std::ostream& out, std::ostream& err) {
  ForgeConfig cfg = load_or_default(a.config);
  if (a.stride) cfg.real.stride = *a.stride;
  if (a.top_k) cfg.real.top_k = *a.top_k;
  if (!a.kinds.empty()) cfg.real.kinds = parse_kind_list(a.kinds);
  if (!a.judge.empty()) cfg.judge.enabled = parse_switch(a.judge);
  if (cfg.real.stride < 1) throw Error(ErrorCode::ConfigError, "--stride must be >= 1", "stride");
  const std::uint64_t seed = a.seed.value_or(cfg.generate.seed);

  const fs::path fdir = a.frames;
  const std::vector<std::string> ids = list_grounded_frames(fdir);
  std::map<std::string, GroundedFrame> frames;
  std::vector<FrameCandidate> candidates;
  for (const std::string& id : ids) {
    try {
      GroundedFrame f = load_grounded_frame(fdir, id, cfg.real.min_grounding_score);
      for (const std::string& w : f.warnings) err << fmt::format("{}: {}\n", id, w);
      candidates.push_back({id, f.sharpness, f.object_count});
      frames.emplace(id, std::move(f));
    } catch (const Error& e) {
      err << fmt::format("skipping frame {}: {}\n", id, e.what());
    }
  }
  const auto selected = select_frames(candidates, cfg.real.stride, cfg.real.top_k);

  const auto judge = make_judge(cfg.judge);
  const fs::path odir = a.out;
  fs::create_directories(odir / "overlays");
  RealProposalConfig pc{cfg.pipeline.sampling, cfg.pipeline.feasibility, cfg.real.per_kind};
  std::vector<RealSample> queue;
  std::size_t unjudged = 0;
  for (const FrameCandidate& fc : selected) {
    const GroundedFrame& f = frames.at(fc.frame_id);
    std::vector<RealSample> proposals;
    try {
      proposals = propose_real_operations(f, cfg.real.kinds, seed, pc);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoFeasibleOperation) throw;
      err << fmt::format("skipping frame {}: {}\n", f.frame_id, e.what());
      continue;
    }
    const RgbImage image = read_png(f.image);
    for (RealSample& s : proposals) {
      Overlay ov;
      try {
        ov = render_sample_overlay(image, s);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NothingVisible) throw;
        err << fmt::format("skipping {}: {}\n", s.sample_id, e.what());
        continue;
      }
      s.image = fs::absolute(f.image).lexically_normal().string();
      write_png(odir / s.overlay, ov.image);
      if (judge) {
        try {
          judge_gate_real(s, ov.image, *judge);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::JudgeUnavailable) throw;
          ++unjudged;
          s.warnings.push_back(std::string("judge gate: ") + e.what());
        }
      }
      queue.push_back(std::move(s));
    }
  }
  if (queue.empty()) {
    err << fmt::format("no reviewable samples from {} frames in {}\n", ids.size(), fdir.string());
    return kExitShortfall;
  }
  write_real_manifest(queue, odir);
  std::map<ReviewState, std::size_t> by_state;
  for (const RealSample& s : queue) ++by_state[s.state];
  out << fmt::format("queued {} samples from {} of {} frames to {}\n", queue.size(),
                     selected.size(), ids.size(), odir.string());
  for (const auto& [state, n] : by_state) out << fmt::format("  {}: {}\n", to_string(state), n);
  if (unjudged > 0) {
    err << fmt::format("{} samples left pending: the judge was unavailable\n", unjudged);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve-review

int cmd_serve_review(const std::string& manifest, const std::string& host, int port,
                     const std::string& ui_dir, std::ostream& out) {
  ReviewService service(manifest);
  ReviewServer server(service, host, port, ui_dir);
  g_shutdown.store(false);
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  out << fmt::format("serving review of {} on http://{}:{}/ ({} decisions replayed)\n", manifest,
                     host, server.port(), service.replayed())
      << std::flush;
  server.start();
  while (!g_shutdown.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  service.fold();
  out << "decisions folded into the manifest\n";
  return kExitOk;
}

}  // namespace

void request_shutdown() { g_shutdown.store(true); }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial image-editing benchmark forge", "gsi-forge"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic sample manifest");
  generate->add_option("--config", gen.config, "TOML config file");
  generate->add_option("--env", gen.envs, "Environment name or file (repeatable)");
  generate->add_option("--env-dir", gen.env_dir, "Directory with {env}.json files");
  generate->add_option("--counts", gen.counts, "Samples per kind and env, e.g. CM=10,SR=10");
  generate->add_option("--scale", gen.scale, "Multiply every count");
  generate->add_option("--seed", gen.seed, "Master seed");
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--judge", gen.judge, "Quality gate: on|off");
  generate->add_option("--jobs", gen.jobs, "Worker threads (default: CPU count)");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score edited images against a manifest");
  evaluate->add_option("--manifest", ev.manifest, "Manifest directory")->required();
  evaluate->add_option("--candidates", ev.candidates, "Directory of {sample_id}.png edits")
      ->required();
  evaluate->add_option("--out", ev.out, "Output directory for results and reports")->required();
  evaluate->add_option("--profile", ev.profile, "Gate profile: synthetic|real");
  evaluate->add_option("--config", ev.config, "TOML config file");
  evaluate->add_option("--judge", ev.judge, "Appearance judge: on|off");
  evaluate->add_option("--provider", ev.provider, "Perceptual provider: ssim or scorer URL");
  evaluate->add_option("--jobs", ev.jobs, "Worker threads (default: CPU count)");

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Aggregate results files into a report");
  report->add_option("--results", report_inputs, "results.jsonl (repeatable)")->required();
  report->add_option("--out", report_out, "Write report.json and report.txt here");

  std::string ec_manifest, ec_out, ec_which = "target";
  auto* export_cands =
      app.add_subcommand("export-candidates", "Copy manifest renders as evaluation candidates");
  export_cands->add_option("--manifest", ec_manifest, "Manifest directory")->required();
  export_cands->add_option("--out", ec_out, "Output directory")->required();
  export_cands->add_option("--which", ec_which, "target (ground truth) or source");

  QueueArgs q;
  auto* export_queue =
      app.add_subcommand("export-queue", "Build a review queue from grounded real frames");
  export_queue->add_option("--frames", q.frames, "Directory of grounded frames")->required();
  export_queue->add_option("--out", q.out, "Output directory")->required();
  export_queue->add_option("--config", q.config, "TOML config file");
  export_queue->add_option("--seed", q.seed, "Proposal seed");
  export_queue->add_option("--judge", q.judge, "Quality gate: on|off");
  export_queue->add_option("--stride", q.stride, "Keep every n-th frame");
  export_queue->add_option("--top-k", q.top_k, "Frames kept after ranking");
  export_queue->add_option("--kinds", q.kinds, "Op kinds, e.g. CM,OR,SR");

  std::string sr_manifest, sr_host = "127.0.0.1", sr_ui;
  int sr_port = 8080;
  auto* serve = app.add_subcommand("serve-review", "Serve the human review API");
  serve->add_option("--manifest", sr_manifest, "Real manifest directory")->required();
  serve->add_option("--host", sr_host, "Bind address");
  serve->add_option("--port", sr_port, "Port (0 picks a free one)");
  serve->add_option("--ui", sr_ui, "Static review UI bundle");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*generate) return cmd_generate(gen, out);
    if (*evaluate) return cmd_evaluate(ev, out, err);
    if (*report) return cmd_report(report_inputs, report_out, out);
    if (*export_cands) return cmd_export_candidates(ec_manifest, ec_out, ec_which, out);
    if (*export_queue) return cmd_export_queue(q, out, err);
    if (*serve) return cmd_serve_review(sr_manifest, sr_host, sr_port, sr_ui, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace gsi::cli
