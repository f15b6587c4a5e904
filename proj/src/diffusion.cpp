#include "physvid/diffusion.hpp"

#include <cmath>
#include <string>

namespace physvid {
namespace {

void check_timestep(int t, const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.num_timesteps())
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(schedule.num_timesteps()) + ")");
}

void check_shapes(const LatentVideo& a, const LatentVideo& b, const char* what) {
  if (!a.same_shape(b) || a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
}

}  // namespace

NoiseSchedule make_schedule(const DiffusionConfig& config) {
  validate(Config{ModelConfig{}, config, TrainConfig{}});
  const int steps = config.num_timesteps;
  std::vector<double> betas(steps);
  for (int t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
    betas[t] = config.beta_start + frac * (config.beta_end - config.beta_start);
  }
  return schedule_from_betas(std::move(betas));
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("schedule needs at least one timestep");
  NoiseSchedule s;
  const std::size_t steps = betas.size();
  s.alphas.resize(steps);
  s.alpha_bars.resize(steps);
  s.posterior_variances.resize(steps);
  double running = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    if (!(betas[t] >= 0.0 && betas[t] < 1.0)) throw std::invalid_argument("beta outside [0, 1)");
    s.alphas[t] = 1.0 - betas[t];
    running *= s.alphas[t];
    s.alpha_bars[t] = running;
    s.posterior_variances[t] =
        (t == 0 || s.alpha_bars[t] >= 1.0) ? 0.0 : betas[t] * (1.0 - s.alpha_bars[t - 1]) / (1.0 - s.alpha_bars[t]);
  }
  s.betas = std::move(betas);
  return s;
}

void q_sample(std::span<const double> z0, int t, std::span<const double> eps, const NoiseSchedule& schedule,
              std::span<double> out) {
  check_timestep(t, schedule);
  if (z0.size() != eps.size() || z0.size() != out.size()) throw std::invalid_argument("q_sample: size mismatch");
  const double signal = std::sqrt(schedule.alpha_bars[t]);
  const double noise = std::sqrt(1.0 - schedule.alpha_bars[t]);
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = signal * z0[i] + noise * eps[i];
}

LatentVideo q_sample(const LatentVideo& z0, int t, const LatentVideo& eps, const NoiseSchedule& schedule) {
  check_shapes(z0, eps, "q_sample");
  LatentVideo out = z0;
  q_sample(z0.data, t, eps.data, schedule, out.data);
  return out;
}

LatentVideo ddpm_step(const LatentVideo& z_t, const LatentVideo& eps_hat, int t, const NoiseSchedule& schedule,
                      const LatentVideo& noise) {
  check_timestep(t, schedule);
  check_shapes(z_t, eps_hat, "ddpm_step");
  if (t > 0) check_shapes(z_t, noise, "ddpm_step noise");
  const double beta = schedule.betas[t];
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alphas[t]);
  const double one_minus_abar = 1.0 - schedule.alpha_bars[t];
  const double eps_coef = one_minus_abar > 0.0 ? beta / std::sqrt(one_minus_abar) : 0.0;
  const double sigma = t > 0 ? std::sqrt(schedule.posterior_variances[t]) : 0.0;
  LatentVideo out = z_t;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = inv_sqrt_alpha * (z_t.data[i] - eps_coef * eps_hat.data[i]);
    if (t > 0) out.data[i] += sigma * noise.data[i];
  }
  return out;
}

std::vector<double> timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("timestep_embedding: dim must be even, got " + std::to_string(dim));
  const int half = dim / 2;
  std::vector<double> emb(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    const double angle = static_cast<double>(t) * freq;
    emb[i] = std::sin(angle);
    emb[half + i] = std::cos(angle);
  }
  return emb;
}

}  // namespace physvid
