#include "physvid/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace physvid {
namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;   // "init"
constexpr std::uint64_t kTrainStream = 0x747261696eULL;  // "train"
constexpr std::uint64_t kEpochStream = 0x65706f6368ULL;  // "epoch"

double finite_or_throw(double v, const char* term, int step) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string("non-finite ") + term + " at step " + std::to_string(step));
  return v;
}

}  // namespace

ModelStates ModelStates::initialize(const Config& config, std::uint64_t seed, FreezePolicy freeze) {
  validate(config);
  Rng rng(derive_seed(seed, kInitStream));
  ModelStates states{config, freeze, PhysicsPredictor(config.model, rng), VideoDenoiser(config.model, rng)};
  states.generator.set_trainable(states.generator.apply_freeze(freeze));
  return states;
}

nn::ParameterList ModelStates::parameters() const {
  nn::ParameterList out = predictor.parameters();
  nn::ParameterList gen = generator.parameters();
  out.insert(out.end(), gen.begin(), gen.end());
  return out;
}

nn::ParameterList ModelStates::trainable() const {
  nn::ParameterList out;
  for (auto& p : parameters())
    if (p.tensor.requires_grad()) out.push_back(p);
  return out;
}

LossTerms joint_loss(const LatentVideo& eps, const LatentVideo& eps_hat, const PhysicsTokens& p_hat,
                     const PhysicsTokens& p_gt, double lambda) {
  if (!eps.same_shape(eps_hat))
    throw ag::ShapeError("joint_loss: eps " + eps.shape_string() + " vs eps_hat " + eps_hat.shape_string());
  if (p_hat.length != p_gt.length || p_hat.width != p_gt.width)
    throw ag::ShapeError("joint_loss: p_hat " + p_hat.shape_string() + " vs p_gt " + p_gt.shape_string());
  ag::NoGradGuard guard;
  const JointLoss loss = joint_loss(ag::Tensor::constant(1, static_cast<int>(eps.size()), eps.data),
                                    ag::Tensor::constant(1, static_cast<int>(eps_hat.size()), eps_hat.data),
                                    token_tensor(p_hat), token_tensor(p_gt), lambda);
  return {loss.total.item(), loss.diffusion.item(), loss.physics.item()};
}

JointLoss joint_loss(const ag::Tensor& eps, const ag::Tensor& eps_hat, const ag::Tensor& p_hat, const ag::Tensor& p_gt,
                     double lambda) {
  JointLoss out;
  out.diffusion = ag::mse(eps_hat, eps);
  out.physics = ag::mse(p_hat, p_gt);
  out.total = ag::add(out.diffusion, ag::scale(out.physics, lambda));
  return out;
}

std::string LossReport::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["diffusion_loss"] = diffusion_loss;
  j["physics_loss"] = physics_loss;
  j["total_loss"] = total_loss;
  j["grad_norm"] = grad_norm;
  j["gates"] = gates;
  return j.dump();
}

LossReport LossReport::from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  LossReport r;
  r.step = j.at("step").get<int>();
  r.diffusion_loss = j.at("diffusion_loss").get<double>();
  r.physics_loss = j.at("physics_loss").get<double>();
  r.total_loss = j.at("total_loss").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.gates = j.at("gates").get<std::vector<double>>();
  return r;
}

void AdamW::step(const nn::ParameterList& params) {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& p : params) {
    ag::Tensor tensor = p.tensor;
    auto values = tensor.mutable_values();
    auto grad = tensor.grad();
    Moments& mom = moments_[p.name];
    if (mom.m.empty()) {
      mom.m.assign(values.size(), 0.0);
      mom.v.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      mom.m[i] = b1 * mom.m[i] + (1 - b1) * g;
      mom.v[i] = b2 * mom.v[i] + (1 - b2) * g * g;
      const double m_hat = mom.m[i] / correction1;
      const double v_hat = mom.v[i] / correction2;
      values[i] -= options_.learning_rate * (m_hat / (std::sqrt(v_hat) + options_.eps) + options_.weight_decay * values[i]);
    }
  }
}

LossReport train_step(std::span<const TrainingSample* const> batch, ModelStates& states, AdamW& optimizer,
                      const NoiseSchedule& schedule, const StepOptions& options, Rng& rng, int step) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const ModelConfig& m = states.config.model;
  const int b = static_cast<int>(batch.size());
  const int t_max = options.t_max < 0 ? schedule.num_timesteps() : options.t_max;
  if (options.t_min < 0 || options.t_min >= t_max || t_max > schedule.num_timesteps())
    throw std::invalid_argument("train_step: empty timestep range");

  const std::size_t latent = static_cast<std::size_t>(m.latent_size());
  std::vector<double> z_t(latent * b), eps(latent * b), t_emb, text, p_gt;
  t_emb.reserve(static_cast<std::size_t>(b) * m.timestep_embed_dim);
  std::vector<double> noise(latent);
  for (int i = 0; i < b; ++i) {
    const TrainingSample& s = *batch[i];
    if (!s.z0.matches(m) || s.c_text.length != m.text_len || s.c_text.width != m.text_dim ||
        s.p_gt.length != m.phys_tokens || s.p_gt.width != m.phys_dim)
      throw ag::ShapeError(s.sample_id + ": sample shapes do not match the model config");
    const int t = rng.uniform_int(options.t_min, t_max);
    for (double& v : noise) v = rng.normal();
    std::copy(noise.begin(), noise.end(), eps.begin() + static_cast<std::ptrdiff_t>(i * latent));
    q_sample(s.z0.data, t, noise, schedule, std::span<double>(z_t).subspan(i * latent, latent));
    const auto emb = timestep_embedding(t, m.timestep_embed_dim);
    t_emb.insert(t_emb.end(), emb.begin(), emb.end());
    text.insert(text.end(), s.c_text.data.begin(), s.c_text.data.end());
    p_gt.insert(p_gt.end(), s.p_gt.data.begin(), s.p_gt.data.end());
  }

  const int spatial = m.latent_frames * m.latent_height * m.latent_width;
  const ag::Tensor z = ag::Tensor::constant(b * m.latent_channels, spatial, std::move(z_t));
  const ag::Tensor temb = ag::Tensor::constant(b, m.timestep_embed_dim, std::move(t_emb));
  const ag::Tensor ctext = ag::Tensor::constant(b * m.text_len, m.text_dim, std::move(text));
  const ag::Tensor target = ag::Tensor::constant(b * m.phys_tokens, m.phys_dim, std::move(p_gt));
  const ag::Tensor eps_t = ag::Tensor::constant(b * m.latent_channels, spatial, std::move(eps));

  const nn::ParameterList params = states.trainable();
  for (const auto& p : params) {
    ag::Tensor t = p.tensor;
    t.zero_grad();
  }

  const ag::Tensor p_hat = states.predictor.predict(z, ctext, temb, b);
  const ag::Tensor p_in = options.detach_physics ? p_hat.detach() : p_hat;
  const ag::Tensor eps_hat = states.generator.denoise(z, temb, ctext, p_in, b);
  const JointLoss loss = joint_loss(eps_t, eps_hat, p_hat, target, options.lambda_phys);

  LossReport report;
  report.step = step;
  report.diffusion_loss = finite_or_throw(loss.diffusion.item(), "diffusion_loss", step);
  report.physics_loss = finite_or_throw(loss.physics.item(), "physics_loss", step);
  report.total_loss = finite_or_throw(loss.total.item(), "total_loss", step);

  ag::backward(loss.total);
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  report.grad_norm = finite_or_throw(std::sqrt(sq), "gradient norm", step);

  optimizer.step(params);
  report.gates = states.generator.gate_values();
  return report;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, int step, int batch_size, std::size_t size) {
  if (size == 0) throw std::invalid_argument("training set is empty");
  std::vector<std::size_t> out;
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> perm;
  for (int i = 0; i < batch_size; ++i) {
    const std::uint64_t global = static_cast<std::uint64_t>(step - 1) * batch_size + i;
    const std::uint64_t epoch = global / size;
    if (epoch != cached_epoch) {
      perm.resize(size);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(derive_seed(seed, kEpochStream), epoch));
      for (std::size_t k = size - 1; k > 0; --k) {
        const auto j = static_cast<std::size_t>(rng.next_u64() % (k + 1));
        std::swap(perm[k], perm[j]);
      }
      cached_epoch = epoch;
    }
    out.push_back(perm[global % size]);
  }
  return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int step) {
  char name[32];
  std::snprintf(name, sizeof(name), "ckpt_%06d.pvgk", step);
  return dir / name;
}

Trainer::Trainer(const Config& config, std::vector<TrainingSample> data, TrainOptions options)
    : config_(config),
      data_(std::move(data)),
      options_(std::move(options)),
      states_(ModelStates::initialize(config, static_cast<std::uint64_t>(config.train.seed), options_.freeze)),
      optimizer_(AdamWOptions{config.train.learning_rate, config.train.weight_decay}),
      schedule_(make_schedule(config.diffusion)),
      rng_(derive_seed(static_cast<std::uint64_t>(config.train.seed), kTrainStream)) {
  if (data_.empty()) throw std::invalid_argument("training set is empty");
  if (options_.resume_from) resume(*options_.resume_from);
}

void Trainer::resume(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path, config_.model);
  if (ckpt.freeze != options_.freeze)
    throw std::invalid_argument("checkpoint was trained with freeze policy " + to_string(ckpt.freeze));
  restore_parameters(ckpt, states_);
  restore_optimizer(ckpt, optimizer_);
  rng_.deserialize(ckpt.rng_state);
  step_ = ckpt.step;
  if (!options_.out_dir.empty()) {
    std::ifstream log(options_.out_dir / "losses.jsonl");
    std::string line;
    while (std::getline(log, line)) {
      if (line.empty()) continue;
      LossReport r = LossReport::from_json(line);
      if (r.step <= step_) history_.push_back(std::move(r));
    }
  }
}

LossReport Trainer::step() {
  const int next = step_ + 1;
  const auto idx = batch_indices(static_cast<std::uint64_t>(config_.train.seed), next, config_.train.batch_size,
                                 data_.size());
  std::vector<const TrainingSample*> batch;
  for (std::size_t i : idx) batch.push_back(&data_[i]);
  StepOptions opts;
  opts.lambda_phys = config_.train.lambda_phys;
  opts.detach_physics = options_.detach_physics;
  LossReport report = train_step(batch, states_, optimizer_, schedule_, opts, rng_, next);
  step_ = next;
  return report;
}

void Trainer::save(const std::filesystem::path& path) const {
  save_checkpoint(path, states_, optimizer_, step_, rng_);
}

TrainResult Trainer::run() {
  const bool to_disk = !options_.out_dir.empty();
  std::ofstream log;
  if (to_disk) {
    std::filesystem::create_directories(options_.out_dir);
    // Rewrite the log so it holds exactly the steps up to the resume point.
    log.open(options_.out_dir / "losses.jsonl", std::ios::trunc);
    for (const auto& r : history_) log << r.to_json() << '\n';
    log.flush();
  }
  TrainResult result;
  result.reports = history_;
  while (step_ < config_.train.max_steps) {
    LossReport report = step();
    if (step_ % config_.train.log_every == 0 || step_ == config_.train.max_steps) {
      if (to_disk) log << report.to_json() << '\n' << std::flush;
      if (options_.on_log) options_.on_log(report);
      result.reports.push_back(report);
      history_.push_back(std::move(report));
    }
    if (to_disk && step_ % config_.train.checkpoint_every == 0) save(checkpoint_path(options_.out_dir, step_));
  }
  if (to_disk) {
    const auto final_path = checkpoint_path(options_.out_dir, step_);
    if (!std::filesystem::exists(final_path)) save(final_path);
    result.final_checkpoint = final_path;
  }
  return result;
}

}  // namespace physvid
