#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "physvid/config.hpp"
#include "physvid/types.hpp"

namespace physvid {

/// Per-timestep DDPM tables, indexed 0..T-1.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  // beta_t (1 - abar_{t-1}) / (1 - abar_t); zero at t = 0.
  std::vector<double> posterior_variances;

  int num_timesteps() const { return static_cast<int>(betas.size()); }
};

NoiseSchedule make_schedule(const DiffusionConfig& config);
/// Builds the tables from explicit betas, each in [0, 1).
NoiseSchedule schedule_from_betas(std::vector<double> betas);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
LatentVideo q_sample(const LatentVideo& z0, int t, const LatentVideo& eps, const NoiseSchedule& schedule);
void q_sample(std::span<const double> z0, int t, std::span<const double> eps, const NoiseSchedule& schedule,
              std::span<double> out);

/// One reverse step: posterior mean from the predicted noise, plus sqrt(posterior
/// variance) * noise when t > 0. `noise` is ignored at t = 0.
LatentVideo ddpm_step(const LatentVideo& z_t, const LatentVideo& eps_hat, int t, const NoiseSchedule& schedule,
                      const LatentVideo& noise);

/// Sinusoidal embedding: first half sin(t w_i), second half cos(t w_i) with
/// w_i = 10000^(-i / (dim / 2)).
std::vector<double> timestep_embedding(int t, int dim);

}  // namespace physvid
