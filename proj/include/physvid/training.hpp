#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "physvid/config.hpp"
#include "physvid/data.hpp"
#include "physvid/diffusion.hpp"
#include "physvid/generator.hpp"
#include "physvid/predictor.hpp"
#include "physvid/rng.hpp"

namespace physvid {

/// Predictor plus denoiser under one config, with the generator's freeze mask applied.
struct ModelStates {
  Config config;
  FreezePolicy freeze = FreezePolicy::kPaper;
  PhysicsPredictor predictor;
  VideoDenoiser generator;

  /// Parameters drawn from derive_seed(seed, "init"): predictor first, then generator.
  static ModelStates initialize(const Config& config, std::uint64_t seed, FreezePolicy freeze = FreezePolicy::kPaper);

  /// Every parameter, predictor first. Names are unique.
  nn::ParameterList parameters() const;
  /// Parameters the optimizer updates (requires_grad set).
  nn::ParameterList trainable() const;
  FreezeMask freeze_mask() const { return generator.apply_freeze(freeze); }
};

struct LossTerms {
  double total = 0;
  double diffusion = 0;
  double physics = 0;
};

struct JointLoss {
  ag::Tensor total;
  ag::Tensor diffusion;
  ag::Tensor physics;
};

/// diffusion = mean((eps - eps_hat)^2), physics = mean((p_hat - p_gt)^2),
/// total = diffusion + lambda * physics.
LossTerms joint_loss(const LatentVideo& eps, const LatentVideo& eps_hat, const PhysicsTokens& p_hat,
                     const PhysicsTokens& p_gt, double lambda);
JointLoss joint_loss(const ag::Tensor& eps, const ag::Tensor& eps_hat, const ag::Tensor& p_hat, const ag::Tensor& p_gt,
                     double lambda);

struct LossReport {
  int step = 0;
  double diffusion_loss = 0;
  double physics_loss = 0;
  double total_loss = 0;
  double grad_norm = 0;  // L2 norm over trainable parameters, before the update
  std::vector<double> gates;

  std::string to_json() const;
  static LossReport from_json(const std::string& line);
  bool operator==(const LossReport&) const = default;
};

struct AdamWOptions {
  double learning_rate = 2e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay Adam. Moments are keyed by parameter name.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  /// Updates every parameter in `params` from its accumulated gradient.
  void step(const nn::ParameterList& params);

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const AdamWOptions& options() const { return options_; }

 private:
  AdamWOptions options_;
  std::map<std::string, Moments> moments_;
  std::int64_t t_ = 0;
};

struct StepOptions {
  double lambda_phys = 0.1;
  /// Stop the diffusion loss gradient at p_hat.
  bool detach_physics = false;
  /// Sample every timestep from [t_min, t_max); t_max < 0 means T.
  int t_min = 0;
  int t_max = -1;
};

/// One optimizer step on a batch: per item t ~ U[t_min, t_max), eps ~ N(0, I),
/// z_t = q_sample(z0, t, eps); p_hat = predict(z_t), eps_hat = denoise(z_t, p_hat);
/// joint loss, backward, AdamW over trainable parameters.
LossReport train_step(std::span<const TrainingSample* const> batch, ModelStates& states, AdamW& optimizer,
                      const NoiseSchedule& schedule, const StepOptions& options, Rng& rng, int step);

/// Index of every item of step `step` (1-based) into a dataset of `size` samples:
/// a fresh permutation per epoch, derived only from (seed, epoch).
std::vector<std::size_t> batch_indices(std::uint64_t seed, int step, int batch_size, std::size_t size);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[4] = {'P', 'V', 'G', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
};

struct Checkpoint {
  int step = 0;
  std::string config_json;
  FreezePolicy freeze = FreezePolicy::kPaper;
  std::string rng_state;
  std::map<std::string, CheckpointTensor> parameters;
  std::map<std::string, AdamW::Moments> moments;
  std::int64_t optimizer_steps = 0;
};

/// Written to `path.tmp` then renamed over `path`.
void save_checkpoint(const std::filesystem::path& path, const ModelStates& states, const AdamW& optimizer, int step,
                     const Rng& rng);
/// Throws io::FormatError on magic/version/fingerprint problems, io::TruncatedError
/// when the file is shorter or longer than its recorded length.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);
/// Reads only the config stored in the checkpoint (no fingerprint check).
Config checkpoint_config(const std::filesystem::path& path);
/// Copies parameter values into `states` (names and shapes must match exactly).
void restore_parameters(const Checkpoint& checkpoint, ModelStates& states);
void restore_optimizer(const Checkpoint& checkpoint, AdamW& optimizer);

// ---------------------------------------------------------------------------
// Loop

struct TrainOptions {
  FreezePolicy freeze = FreezePolicy::kPaper;
  bool detach_physics = false;
  /// Where losses.jsonl and checkpoints go; empty keeps everything in memory.
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  /// Called for every logged report.
  std::function<void(const LossReport&)> on_log;
};

struct TrainResult {
  std::vector<LossReport> reports;  // one per logged step, including any before a resume
  std::optional<std::filesystem::path> final_checkpoint;
};

/// Runs from step 1 (or the resumed step + 1) to config.train.max_steps.
class Trainer {
 public:
  Trainer(const Config& config, std::vector<TrainingSample> data, TrainOptions options = {});

  LossReport step();
  TrainResult run();

  void save(const std::filesystem::path& path) const;
  int current_step() const { return step_; }
  ModelStates& states() { return states_; }
  const ModelStates& states() const { return states_; }
  const AdamW& optimizer() const { return optimizer_; }
  const Rng& rng() const { return rng_; }

 private:
  void resume(const std::filesystem::path& path);

  Config config_;
  std::vector<TrainingSample> data_;
  TrainOptions options_;
  ModelStates states_;
  AdamW optimizer_;
  NoiseSchedule schedule_;
  Rng rng_;
  int step_ = 0;
  std::vector<LossReport> history_;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int step);

}  // namespace physvid
