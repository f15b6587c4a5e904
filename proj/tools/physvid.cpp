// physvid: precompute / train / generate / eval / dry-run.
//
// Exit status: 0 success, 1 invalid invocation or configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "physvid/binary_io.hpp"
#include "physvid/config.hpp"
#include "physvid/data.hpp"
#include "physvid/inference.hpp"
#include "physvid/metrics.hpp"
#include "physvid/training.hpp"

namespace fs = std::filesystem;
using namespace physvid;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

/// Raised for bad flag combinations found after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string preset = "toy";
  std::string config_path;
  std::int64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--preset", c.preset, "Named preset (toy, paper)")->check(CLI::IsMember(preset_names()));
  cmd->add_option("--config", c.config_path, "JSON config; keys override the preset")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--out", c.out, out_help);
}

Config resolve_config(const Common& c) {
  if (c.config_path.empty()) {
    Config cfg = preset(c.preset);
    validate(cfg);
    return cfg;
  }
  std::ifstream in(c.config_path);
  std::stringstream text;
  text << in.rdbuf();
  auto json = nlohmann::json::parse(text.str(), nullptr, false);
  if (json.is_discarded()) throw ConfigError("", "config file is not valid JSON: " + c.config_path);
  if (json.is_object() && !json.contains("preset")) json["preset"] = c.preset;
  return parse_config(json.dump());
}

void announce(const Config& cfg, std::int64_t seed) {
  std::cout << "config_fingerprint " << fingerprint_hex(cfg.model) << "\nseed " << seed << std::endl;
}

std::vector<TrainingSample> synthetic_set(std::int64_t first_seed, int count, const ModelConfig& model) {
  std::vector<TrainingSample> out;
  SampleStream stream(seed_range(first_seed, first_seed + count), model);
  while (auto s = stream.next()) out.push_back(std::move(*s));
  return out;
}

int run_precompute(const Common& c, int count) {
  const Config cfg = resolve_config(c);
  announce(cfg, c.seed);
  if (c.out.empty()) throw UsageError("precompute needs --out <shard file>");
  SampleStream stream(seed_range(c.seed, c.seed + count), cfg.model);
  const auto written = write_shard(stream, c.out, cfg.model);
  std::cout << "wrote " << written << " samples to " << c.out << std::endl;
  return kOk;
}

struct TrainFlags {
  int steps = -1;
  int clips = 64;
  std::string shard;
  std::string resume;
  std::string freeze = "paper";
  bool detach = false;
  double lr = -1;
  int batch = -1;
  int log_every = -1;
  int checkpoint_every = -1;
  bool quiet = false;
};

int run_train(const Common& c, const TrainFlags& f) {
  Config cfg = resolve_config(c);
  cfg.train.seed = c.seed;
  if (f.steps >= 0) cfg.train.max_steps = f.steps;
  if (f.lr > 0) cfg.train.learning_rate = f.lr;
  if (f.batch > 0) cfg.train.batch_size = f.batch;
  if (f.log_every > 0) cfg.train.log_every = f.log_every;
  if (f.checkpoint_every > 0) cfg.train.checkpoint_every = f.checkpoint_every;
  validate(cfg);
  announce(cfg, c.seed);
  if (c.out.empty()) throw UsageError("train needs --out <directory>");

  std::vector<TrainingSample> data =
      f.shard.empty() ? synthetic_set(0, f.clips, cfg.model) : read_shard(f.shard, cfg.model);
  TrainOptions opts;
  opts.freeze = parse_freeze_policy(f.freeze);
  opts.detach_physics = f.detach;
  opts.out_dir = c.out;
  if (!f.resume.empty()) opts.resume_from = fs::path(f.resume);
  if (!f.quiet)
    opts.on_log = [](const LossReport& r) {
      std::printf("step %5d  total %.6f  diffusion %.6f  physics %.6f  grad %.4f\n", r.step, r.total_loss,
                  r.diffusion_loss, r.physics_loss, r.grad_norm);
      std::fflush(stdout);
    };
  Trainer trainer(cfg, std::move(data), opts);
  fs::create_directories(c.out);
  save_config(cfg, fs::path(c.out) / "config.json");
  const TrainResult result = trainer.run();
  std::cout << "final checkpoint " << result.final_checkpoint->string() << std::endl;
  return kOk;
}

ModelStates load_states(const Common& c, const std::string& checkpoint, bool explicit_config) {
  if (checkpoint.empty())
    throw UsageError("a trained checkpoint is required: pass --checkpoint <file> (produce one with `physvid train`)");
  const Config stored = checkpoint_config(checkpoint);
  Config cfg = stored;
  if (explicit_config) {
    cfg = resolve_config(c);
    if (!(cfg.model == stored.model))
      throw io::FormatError("checkpoint fingerprint mismatch: checkpoint has " + fingerprint_hex(stored.model) +
                            ", requested config is " + fingerprint_hex(cfg.model));
  }
  const Checkpoint ckpt = load_checkpoint(checkpoint, cfg.model);
  ModelStates states = ModelStates::initialize(cfg, 0, ckpt.freeze);
  restore_parameters(ckpt, states);
  return states;
}

struct GenerateFlags {
  std::string checkpoint;
  std::string prompt;
  int steps = 0;
  std::string physics = "on";
};

int run_generate(const Common& c, const GenerateFlags& f, bool explicit_config) {
  if (f.checkpoint.empty())
    throw UsageError("generate needs --checkpoint <file> (produce one with `physvid train`, or use `dry-run`)");
  ModelStates states = load_states(c, f.checkpoint, explicit_config);
  announce(states.config, c.seed);
  if (c.out.empty()) throw UsageError("generate needs --out <directory>");
  const NoiseSchedule schedule = make_schedule(states.config.diffusion);
  GenerationRequest req{f.prompt, f.steps, c.seed, parse_physics_mode(f.physics)};
  if (req.num_steps > schedule.num_timesteps())
    throw ConfigError("--steps", "exceeds the schedule's " + std::to_string(schedule.num_timesteps()) + " timesteps");
  const GeneratedVideo video = generate(req, states.predictor, states.generator, schedule);
  write_video(video.frames, c.out);
  std::cout << "wrote " << video.frames.frames << " frames to " << c.out << std::endl;
  return kOk;
}

struct EvalFlags {
  std::string videos;
  std::string metrics = "flow,embed,tlpips";
  std::string report;
  bool ab = false;
  std::string checkpoint;
  std::vector<std::string> prompts;
  std::vector<std::int64_t> seeds;
  int steps = 0;
};

int run_eval(const Common& c, const EvalFlags& f, bool explicit_config) {
  const MetricSelection selection = MetricSelection::parse(f.metrics);
  const std::string report_path = !f.report.empty() ? f.report : c.out;
  if (report_path.empty()) throw UsageError("eval needs --report <file>");
  CorpusReport report;
  if (f.ab) {
    if (f.prompts.empty()) throw UsageError("A/B evaluation needs at least one --prompt");
    ModelStates states = load_states(c, f.checkpoint, explicit_config);
    announce(states.config, c.seed);
    const NoiseSchedule schedule = make_schedule(states.config.diffusion);
    std::vector<GenerationRequest> requests;
    const std::vector<std::int64_t> seeds = f.seeds.empty() ? std::vector<std::int64_t>{c.seed} : f.seeds;
    for (const auto& prompt : f.prompts)
      for (auto seed : seeds) requests.push_back({prompt, f.steps, seed, PhysicsMode::kOn});
    report = eval_corpus(ab_corpus(requests, states.predictor, states.generator, schedule), selection);
  } else {
    const Config cfg = resolve_config(c);
    announce(cfg, c.seed);
    if (f.videos.empty()) throw UsageError("eval needs --videos <dir> (or --ab with --checkpoint)");
    report = eval_corpus(corpus_from_directory(f.videos), selection);
  }
  report.write(report_path);
  int failed = 0;
  for (const auto& row : report.rows)
    if (!row.error.empty()) {
      ++failed;
      std::cerr << "failed: " << row.video_id << ": " << row.error << '\n';
    }
  std::cout << "evaluated " << report.rows.size() << " videos (" << failed << " failed), report " << report_path
            << std::endl;
  return kOk;
}

int run_dry_run(const Common& c, const std::string& prompt) {
  const Config cfg = resolve_config(c);
  announce(cfg, c.seed);
  const DryRunReport report = dry_run(prompt, cfg, static_cast<std::uint64_t>(c.seed));
  std::cout << report.to_text();
  return report.ok() ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-conditioned latent video diffusion at desk scale"};
  app.require_subcommand(1);

  Common pre_c, train_c, gen_c, eval_c, dry_c;
  int precompute_count = 64;
  TrainFlags train_f;
  GenerateFlags gen_f;
  EvalFlags eval_f;
  std::string dry_prompt = "a red ball falls and bounces on the floor";

  auto* pre = app.add_subcommand("precompute", "Stream synthetic clips into a latent/text/physics shard");
  add_common(pre, pre_c, "Shard file to write");
  pre->add_option("--count", precompute_count, "Number of clips (seeds seed .. seed+count-1)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  auto* train = app.add_subcommand("train", "Jointly train the predictor and the generator's temporal layers");
  add_common(train, train_c, "Output directory (losses.jsonl, checkpoints)");
  train->add_option("--steps", train_f.steps, "Optimizer steps (default from config)")->check(CLI::NonNegativeNumber);
  train->add_option("--clips", train_f.clips, "Synthetic clips when no --shard is given")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--shard", train_f.shard, "Precomputed shard")->check(CLI::ExistingFile);
  train->add_option("--resume", train_f.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--freeze", train_f.freeze, "Freeze policy")->check(CLI::IsMember({"paper", "all-trainable"}))
      ->capture_default_str();
  train->add_flag("--detach-physics", train_f.detach, "Stop the diffusion gradient at the predicted physics tokens");
  train->add_option("--lr", train_f.lr, "Learning rate override")->check(CLI::PositiveNumber);
  train->add_option("--batch", train_f.batch, "Batch size override")->check(CLI::PositiveNumber);
  train->add_option("--log-every", train_f.log_every, "Log interval override")->check(CLI::PositiveNumber);
  train->add_option("--checkpoint-every", train_f.checkpoint_every, "Checkpoint interval override")
      ->check(CLI::PositiveNumber);
  train->add_flag("--quiet", train_f.quiet, "Do not echo loss lines");

  auto* gen = app.add_subcommand("generate", "Sample a video from a trained checkpoint");
  add_common(gen, gen_c, "Output directory for frame_NNN.ppm");
  gen->add_option("--checkpoint", gen_f.checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  gen->add_option("--prompt", gen_f.prompt, "Caption")->required();
  gen->add_option("--steps", gen_f.steps, "Reverse steps (default: all timesteps)")->check(CLI::PositiveNumber);
  gen->add_option("--physics", gen_f.physics, "Physics conditioning")->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();

  auto* ev = app.add_subcommand("eval", "Temporal-consistency metrics over a video corpus");
  add_common(ev, eval_c, "Report path (same as --report)");
  ev->add_option("--videos", eval_f.videos, "Directory of frame_NNN.ppm video directories")->check(CLI::ExistingDirectory);
  ev->add_option("--metrics", eval_f.metrics, "Comma-separated subset of flow,embed,tlpips")->capture_default_str();
  ev->add_option("--report", eval_f.report, "JSONL report path");
  ev->add_flag("--ab", eval_f.ab, "Generate physics-on / physics-off pairs from a checkpoint and compare");
  ev->add_option("--checkpoint", eval_f.checkpoint, "Checkpoint for --ab")->check(CLI::ExistingFile);
  ev->add_option("--prompt", eval_f.prompts, "Prompt for --ab (repeatable)");
  ev->add_option("--seeds", eval_f.seeds, "Seeds for --ab (default: --seed)");
  ev->add_option("--steps", eval_f.steps, "Reverse steps for --ab")->check(CLI::PositiveNumber);

  auto* dry = app.add_subcommand("dry-run", "One checkpoint-free denoising step with shape and finiteness checks");
  add_common(dry, dry_c, "Unused");
  dry->add_option("--prompt", dry_prompt, "Caption")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  auto explicit_config = [](CLI::App* cmd) { return cmd->count("--preset") > 0 || cmd->count("--config") > 0; };
  try {
    if (pre->parsed()) return run_precompute(pre_c, precompute_count);
    if (train->parsed()) return run_train(train_c, train_f);
    if (gen->parsed()) return run_generate(gen_c, gen_f, explicit_config(gen));
    if (ev->parsed()) return run_eval(eval_c, eval_f, explicit_config(ev));
    if (dry->parsed()) return run_dry_run(dry_c, dry_prompt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
