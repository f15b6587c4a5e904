#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "physvid/diffusion.hpp"
#include "physvid/generator.hpp"
#include "physvid/metrics.hpp"
#include "physvid/predictor.hpp"
#include "physvid/video_io.hpp"

namespace physvid {

enum class PhysicsMode { kOn, kOff };
PhysicsMode parse_physics_mode(const std::string& name);
std::string to_string(PhysicsMode mode);

struct GenerationRequest {
  std::string prompt;
  /// Reverse steps, run from t = num_steps - 1 down to 0. Zero or negative means T.
  int num_steps = 0;
  std::int64_t seed = 0;
  PhysicsMode physics = PhysicsMode::kOn;
};

struct GeneratedVideo {
  VideoFrames frames;
  LatentVideo latents_final;
  /// L2 norm of p_hat at every reverse step; 0 where the predictor was not run.
  std::vector<double> per_step_physics_norm;
};

/// Reverse DDPM from z_T ~ N(0, I) (drawn from the request seed), decoded by the toy
/// codec. Physics-off never calls the predictor and skips physics cross-attention,
/// which equals running every gate at zero.
GeneratedVideo generate(const GenerationRequest& request, const PhysicsPredictor& predictor,
                        const VideoDenoiser& generator, const NoiseSchedule& schedule);

struct DryRunReport {
  std::vector<std::pair<std::string, std::string>> shapes;  // name -> "[a, b, ...]"
  std::vector<std::pair<std::string, bool>> finite;
  std::vector<std::string> failures;
  double wall_seconds = 0;
  int timestep = 0;

  bool ok() const { return failures.empty(); }
  std::string to_text() const;
};

/// Paired corpus for A/B evaluation: every request is generated twice, physics-on and
/// physics-off, with the same seed. Rows are generated lazily when evaluated.
std::vector<CorpusItem> ab_corpus(const std::vector<GenerationRequest>& requests, const PhysicsPredictor& predictor,
                                  const VideoDenoiser& generator, const NoiseSchedule& schedule);

/// One predict + denoise + ddpm_step at t = T - 1 from freshly initialized weights.
DryRunReport dry_run(const std::string& prompt, const Config& config, std::uint64_t seed);

}  // namespace physvid
