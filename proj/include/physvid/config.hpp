#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace physvid {

/// Raised when a configuration value breaks an invariant. `field()` names the
/// offending key using the dotted path of the config file ("diffusion.beta_start").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Shapes and widths of every network and tensor in the model.
struct ModelConfig {
  int latent_channels = 12;
  int latent_frames = 8;
  int latent_height = 8;
  int latent_width = 8;
  int text_len = 16;
  int text_dim = 64;
  int phys_tokens = 64;
  int phys_dim = 32;
  int hidden_dim = 64;
  int predictor_layers = 2;
  int predictor_heads = 4;
  int gen_spatial_blocks = 2;
  int gen_temporal_blocks = 2;
  int gen_heads = 4;
  int timestep_embed_dim = 64;
  // Pixel-to-latent spatial downsampling of the codec (2 for the toy codec, 8 for the
  // reference autoencoder).
  int vae_downsample = 2;

  int pixel_height() const { return latent_height * vae_downsample; }
  int pixel_width() const { return latent_width * vae_downsample; }
  int latent_size() const { return latent_channels * latent_frames * latent_height * latent_width; }

  bool operator==(const ModelConfig&) const = default;
};

enum class ScheduleKind { kLinear };

struct DiffusionConfig {
  int num_timesteps = 50;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  ScheduleKind schedule_kind = ScheduleKind::kLinear;

  bool operator==(const DiffusionConfig&) const = default;
};

struct TrainConfig {
  double lambda_phys = 0.1;
  double learning_rate = 2e-3;
  double weight_decay = 0.01;
  int batch_size = 4;
  int max_steps = 500;
  std::int64_t seed = 0;
  int checkpoint_every = 100;
  int log_every = 1;

  bool operator==(const TrainConfig&) const = default;
};

struct Config {
  ModelConfig model;
  DiffusionConfig diffusion;
  TrainConfig train;

  bool operator==(const Config&) const = default;
};

/// Named presets. "toy" is the desk-scale default; "paper" carries the reference
/// dimensions (4x16x32x32 latents, 226x4096 text, 2048x1408 physics tokens, d=512).
Config preset(std::string_view name);
std::vector<std::string> preset_names();

/// Throws ConfigError naming the first field that violates a hard invariant.
void validate(const Config& config);

/// Soft cross-field checks. Empty iff every constraint holds.
std::vector<std::string> validate_shapes(const ModelConfig& model);

/// Parses a JSON config. Keys absent from the file fall back to the preset named by
/// the optional top-level "preset" key (default "toy"). Unknown keys are errors.
Config parse_config(std::string_view json_text);
Config load_config(const std::filesystem::path& path);

std::string to_json(const Config& config);
void save_config(const Config& config, const std::filesystem::path& path);

/// Stable 64-bit hash of the model shapes; stamps shards and checkpoints.
std::uint64_t fingerprint(const ModelConfig& model);
std::string fingerprint_hex(const ModelConfig& model);

}  // namespace physvid
