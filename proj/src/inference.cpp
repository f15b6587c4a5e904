#include "physvid/inference.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "physvid/data.hpp"
#include "physvid/rng.hpp"

namespace physvid {
namespace {

constexpr std::uint64_t kSampleStream = 0x73616d706c65ULL;  // "sample"

LatentVideo normal_latent(const ModelConfig& m, Rng& rng) {
  LatentVideo z = LatentVideo::zeros(m);
  for (double& v : z.data) v = rng.normal();
  return z;
}

double l2(const std::vector<double>& values) {
  double sq = 0;
  for (double v : values) sq += v * v;
  return std::sqrt(sq);
}

bool finite(const std::vector<double>& values) { return ag::all_finite(values); }

}  // namespace

PhysicsMode parse_physics_mode(const std::string& name) {
  if (name == "on") return PhysicsMode::kOn;
  if (name == "off") return PhysicsMode::kOff;
  throw std::invalid_argument("physics mode must be 'on' or 'off', got '" + name + "'");
}

std::string to_string(PhysicsMode mode) { return mode == PhysicsMode::kOn ? "on" : "off"; }

GeneratedVideo generate(const GenerationRequest& request, const PhysicsPredictor& predictor,
                        const VideoDenoiser& generator, const NoiseSchedule& schedule) {
  const ModelConfig& m = generator.config();
  if (!(predictor.config() == m)) throw std::invalid_argument("generate: predictor and generator configs differ");
  const int steps = request.num_steps <= 0 ? schedule.num_timesteps() : request.num_steps;
  if (steps > schedule.num_timesteps())
    throw std::invalid_argument("num_steps=" + std::to_string(steps) + " exceeds the schedule's " +
                                std::to_string(schedule.num_timesteps()) + " timesteps");

  const TextEmbedding text = toy_text_embed(request.prompt, m);
  Rng rng(derive_seed(static_cast<std::uint64_t>(request.seed), kSampleStream));
  LatentVideo z = normal_latent(m, rng);

  GeneratedVideo out;
  out.per_step_physics_norm.reserve(steps);
  for (int t = steps - 1; t >= 0; --t) {
    const std::vector<double> emb = timestep_embedding(t, m.timestep_embed_dim);
    LatentVideo eps_hat;
    if (request.physics == PhysicsMode::kOn) {
      const PhysicsTokens p_hat = predictor.predict(z, text, emb);
      out.per_step_physics_norm.push_back(l2(p_hat.data));
      eps_hat = generator.denoise(z, emb, text, &p_hat);
    } else {
      out.per_step_physics_norm.push_back(0.0);
      eps_hat = generator.denoise(z, emb, text, nullptr);
    }
    LatentVideo noise = LatentVideo::zeros(m);
    if (t > 0) noise = normal_latent(m, rng);
    z = ddpm_step(z, eps_hat, t, schedule, noise);
    if (!finite(z.data)) throw std::runtime_error("non-finite latents after reverse step t=" + std::to_string(t));
  }
  out.latents_final = z;
  out.frames = to_frames(ToyCodec(m).decode(z));
  return out;
}

std::vector<CorpusItem> ab_corpus(const std::vector<GenerationRequest>& requests, const PhysicsPredictor& predictor,
                                  const VideoDenoiser& generator, const NoiseSchedule& schedule) {
  std::vector<CorpusItem> items;
  for (const GenerationRequest& base : requests) {
    for (PhysicsMode mode : {PhysicsMode::kOn, PhysicsMode::kOff}) {
      GenerationRequest req = base;
      req.physics = mode;
      CorpusItem item;
      item.video_id = "seed-" + std::to_string(req.seed) + "-physics-" + to_string(mode);
      item.seed = req.seed;
      item.arm = "physics-" + to_string(mode);
      item.load = [req, &predictor, &generator, &schedule] {
        return to_pixels(generate(req, predictor, generator, schedule).frames);
      };
      items.push_back(std::move(item));
    }
  }
  return items;
}

std::string DryRunReport::to_text() const {
  std::ostringstream s;
  s << "dry-run at t=" << timestep << '\n';
  for (const auto& [name, shape] : shapes) s << "  " << name << ' ' << shape << '\n';
  for (const auto& [name, ok] : finite) s << "  finite(" << name << ") " << (ok ? "yes" : "NO") << '\n';
  s << "  wall_time_s " << wall_seconds << '\n';
  for (const auto& f : failures) s << "  FAILED: " << f << '\n';
  s << (ok() ? "dry-run ok" : "dry-run failed") << '\n';
  return s.str();
}

DryRunReport dry_run(const std::string& prompt, const Config& config, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  validate(config);
  DryRunReport report;
  const ModelConfig& m = config.model;
  for (const auto& warning : validate_shapes(m)) report.failures.push_back(warning);
  if (!report.failures.empty()) return report;

  Rng init(derive_seed(seed, 0x696e6974ULL));
  PhysicsPredictor predictor(m, init);
  VideoDenoiser generator(m, init);
  const NoiseSchedule schedule = make_schedule(config.diffusion);
  const int t = schedule.num_timesteps() - 1;
  report.timestep = t;

  Rng rng(derive_seed(seed, kSampleStream));
  const LatentVideo z = normal_latent(m, rng);
  const TextEmbedding text = toy_text_embed(prompt, m);
  const std::vector<double> emb = timestep_embedding(t, m.timestep_embed_dim);
  const PhysicsTokens p_hat = predictor.predict(z, text, emb);
  const LatentVideo eps_hat = generator.denoise(z, emb, text, &p_hat);
  const LatentVideo noise = normal_latent(m, rng);
  const LatentVideo z_prev = ddpm_step(z, eps_hat, t, schedule, noise);

  report.shapes = {{"z_t", z.shape_string()},
                   {"c_text", text.shape_string()},
                   {"t_emb", "[" + std::to_string(emb.size()) + "]"},
                   {"p_hat", p_hat.shape_string()},
                   {"eps_hat", eps_hat.shape_string()},
                   {"z_prev", z_prev.shape_string()}};
  report.finite = {{"p_hat", finite(p_hat.data)}, {"eps_hat", finite(eps_hat.data)}, {"z_prev", finite(z_prev.data)}};
  if (p_hat.length != m.phys_tokens || p_hat.width != m.phys_dim) report.failures.push_back("p_hat shape");
  if (!eps_hat.matches(m)) report.failures.push_back("eps_hat shape");
  if (!z_prev.matches(m)) report.failures.push_back("z_prev shape");
  for (const auto& [name, ok] : report.finite)
    if (!ok) report.failures.push_back(name + " has non-finite values");
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace physvid
