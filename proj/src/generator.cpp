#include "physvid/generator.hpp"

#include <algorithm>
#include <stdexcept>

namespace physvid {

PhysicsCrossAttention::PhysicsCrossAttention(int width, int phys_dim, int heads, Rng& rng)
    : w_q(width, width, rng, false),
      w_k(phys_dim, width, rng, false),
      w_v(phys_dim, width, rng, false),
      w_out(width, width, rng),
      gate(nn::zero_parameter(1, 1)),
      heads(heads) {}

ag::Tensor PhysicsCrossAttention::operator()(const ag::Tensor& x, int frames, const ag::Tensor& p_hat,
                                             int tokens) const {
  if (p_hat.cols() != w_k.weight.rows())
    throw ag::ShapeError("physics cross-attention: token width " + std::to_string(p_hat.cols()) + ", expected " +
                         std::to_string(w_k.weight.rows()));
  if (x.cols() != w_q.weight.rows()) throw ag::ShapeError("physics cross-attention: hidden width mismatch");
  const ag::AttentionLayout layout{heads, frames, tokens};
  ag::Tensor attended = w_out(ag::attention(w_q(x), w_k(p_hat), w_v(p_hat), layout));
  return ag::add(x, ag::scale_by(attended, gate));
}

std::vector<double> PhysicsCrossAttention::weights(const ag::Tensor& x, int frames, const ag::Tensor& p_hat,
                                                   int tokens) const {
  ag::NoGradGuard no_grad;
  return ag::attention_weights(w_q(x), w_k(p_hat), {heads, frames, tokens});
}

void PhysicsCrossAttention::collect(const std::string& prefix, const std::string& group,
                                    nn::ParameterList& out) const {
  w_q.collect(prefix + ".w_q", group, out);
  w_k.collect(prefix + ".w_k", group, out);
  w_v.collect(prefix + ".w_v", group, out);
  w_out.collect(prefix + ".w_out", group, out);
  out.push_back({prefix + ".gate", group, gate});
}

FreezePolicy parse_freeze_policy(const std::string& name) {
  if (name == "paper") return FreezePolicy::kPaper;
  if (name == "all-trainable") return FreezePolicy::kAllTrainable;
  throw std::invalid_argument("unknown freeze policy '" + name + "' (expected paper or all-trainable)");
}

std::string to_string(FreezePolicy policy) { return policy == FreezePolicy::kPaper ? "paper" : "all-trainable"; }

VideoDenoiser::VideoDenoiser(const ModelConfig& model, Rng& rng) : model_(model) {
  if (model.latent_height % kPatch || model.latent_width % kPatch)
    throw std::invalid_argument("denoiser: latent height/width must be divisible by the patch size");
  const int d = model.hidden_dim;
  patch_embed_ = nn::Linear(model.latent_channels * kPatch * kPatch, d, rng);
  pos_spatial_ = nn::normal_parameter(tokens_per_frame(), d, 0.5, rng);
  pos_temporal_ = nn::normal_parameter(model.latent_frames, d, 0.5, rng);
  time_fc1_ = nn::Linear(model.timestep_embed_dim, d, rng);
  time_fc2_ = nn::Linear(d, d, rng);
  for (int i = 0; i < model.gen_spatial_blocks; ++i) {
    spatial_.push_back({nn::LayerNorm(d), nn::LayerNorm(d), nn::LayerNorm(d),
                        nn::Attention(d, d, d, model.gen_heads, rng),
                        nn::Attention(d, model.text_dim, d, model.gen_heads, rng),
                        nn::FeedForward(d, kFeedForwardMultiplier * d, rng)});
  }
  for (int i = 0; i < model.gen_temporal_blocks; ++i) {
    temporal_.push_back({nn::LayerNorm(d), nn::LayerNorm(d), nn::Attention(d, d, d, model.gen_heads, rng),
                         nn::FeedForward(d, kFeedForwardMultiplier * d, rng)});
    phys_.emplace_back(d, model.phys_dim, model.gen_heads, rng);
  }
  head_norm_ = nn::LayerNorm(d);
  head_ = nn::Linear(d, model.latent_channels * kPatch * kPatch, rng);
}

std::vector<int> VideoDenoiser::patch_index(int batch) const {
  const int c_n = model_.latent_channels, f_n = model_.latent_frames;
  const int h_n = model_.latent_height, w_n = model_.latent_width;
  const int hp = h_n / kPatch, wp = w_n / kPatch;
  const int width = c_n * kPatch * kPatch;
  const int positions = f_n * h_n * w_n;
  std::vector<int> index(static_cast<std::size_t>(batch) * f_n * hp * wp * width);
  std::size_t i = 0;
  for (int b = 0; b < batch; ++b)
    for (int f = 0; f < f_n; ++f)
      for (int y = 0; y < hp; ++y)
        for (int x = 0; x < wp; ++x)
          for (int c = 0; c < c_n; ++c)
            for (int dy = 0; dy < kPatch; ++dy)
              for (int dx = 0; dx < kPatch; ++dx)
                index[i++] = (b * c_n + c) * positions + (f * h_n + y * kPatch + dy) * w_n + x * kPatch + dx;
  return index;
}

std::vector<int> VideoDenoiser::unpatch_index(int batch) const {
  const int c_n = model_.latent_channels, f_n = model_.latent_frames;
  const int h_n = model_.latent_height, w_n = model_.latent_width;
  const int hp = h_n / kPatch, wp = w_n / kPatch;
  const int width = c_n * kPatch * kPatch;
  std::vector<int> index(static_cast<std::size_t>(batch) * c_n * f_n * h_n * w_n);
  std::size_t i = 0;
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < c_n; ++c)
      for (int f = 0; f < f_n; ++f)
        for (int y = 0; y < h_n; ++y)
          for (int x = 0; x < w_n; ++x) {
            const int row = ((b * f_n + f) * hp + y / kPatch) * wp + x / kPatch;
            const int col = (c * kPatch + y % kPatch) * kPatch + x % kPatch;
            index[i++] = row * width + col;
          }
  return index;
}

std::vector<int> VideoDenoiser::frame_to_location_order(int batch) const {
  const int f_n = model_.latent_frames, s_n = tokens_per_frame();
  std::vector<int> index(static_cast<std::size_t>(batch) * f_n * s_n);
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < s_n; ++s)
      for (int f = 0; f < f_n; ++f) index[(b * s_n + s) * f_n + f] = (b * f_n + f) * s_n + s;
  return index;
}

std::vector<int> VideoDenoiser::location_to_frame_order(int batch) const {
  const int f_n = model_.latent_frames, s_n = tokens_per_frame();
  std::vector<int> index(static_cast<std::size_t>(batch) * f_n * s_n);
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < s_n; ++s)
      for (int f = 0; f < f_n; ++f) index[(b * f_n + f) * s_n + s] = (b * s_n + s) * f_n + f;
  return index;
}

ag::Tensor VideoDenoiser::denoise(const ag::Tensor& z, const ag::Tensor& t_emb, const ag::Tensor& c_text,
                                  const ag::Tensor& p_hat, int batch) const {
  const ModelConfig& m = model_;
  const int f_n = m.latent_frames;
  const int s_n = tokens_per_frame();
  const int tokens = batch * f_n * s_n;
  if (z.rows() != batch * m.latent_channels || z.cols() != f_n * m.latent_height * m.latent_width)
    throw ag::ShapeError("denoise: latent batch has wrong shape");
  if (t_emb.rows() != batch || t_emb.cols() != m.timestep_embed_dim)
    throw ag::ShapeError("denoise: timestep embedding has wrong shape");
  if (c_text.rows() != batch * m.text_len || c_text.cols() != m.text_dim)
    throw ag::ShapeError("denoise: text embedding has wrong shape");
  if (p_hat.defined() && (p_hat.rows() != batch * m.phys_tokens || p_hat.cols() != m.phys_dim))
    throw ag::ShapeError("denoise: physics tokens have wrong shape");

  ag::Tensor x = patch_embed_(ag::gather(z, patch_index(batch), tokens, m.latent_channels * kPatch * kPatch));
  std::vector<int> spatial_rows(tokens), temporal_rows(tokens);
  for (int i = 0; i < tokens; ++i) {
    spatial_rows[i] = i % s_n;
    temporal_rows[i] = (i / s_n) % f_n;
  }
  x = ag::add(x, ag::gather_rows(pos_spatial_, std::move(spatial_rows)));
  x = ag::add(x, ag::gather_rows(pos_temporal_, std::move(temporal_rows)));
  const ag::Tensor time = time_fc2_(ag::gelu(time_fc1_(t_emb)));
  x = ag::add(x, ag::gather_rows(time, nn::repeat_each(batch, f_n * s_n)));

  const std::size_t depth = std::max(spatial_.size(), temporal_.size());
  const std::vector<int> to_locations = frame_to_location_order(batch);
  const std::vector<int> to_frames = location_to_frame_order(batch);
  for (std::size_t i = 0; i < depth; ++i) {
    if (i < spatial_.size()) {
      const SpatialBlock& blk = spatial_[i];
      x = ag::add(x, blk.self_attn.self(blk.norm1(x), s_n));
      x = ag::add(x, blk.text_attn.cross(blk.norm2(x), s_n, c_text, m.text_len));
      x = ag::add(x, blk.ffn(blk.norm3(x)));
    }
    if (i < temporal_.size()) {
      const TemporalBlock& blk = temporal_[i];
      ag::Tensor xt = ag::gather_rows(x, to_locations);
      xt = ag::add(xt, blk.self_attn.self(blk.norm1(xt), f_n));
      if (p_hat.defined()) xt = phys_[i](xt, f_n, p_hat, m.phys_tokens);
      xt = ag::add(xt, blk.ffn(blk.norm2(xt)));
      x = ag::gather_rows(xt, to_frames);
    }
  }

  ag::Tensor patches = head_(head_norm_(x));
  ag::Tensor eps = ag::gather(patches, unpatch_index(batch), z.rows(), z.cols());
  if (!ag::all_finite(eps.values())) throw std::runtime_error("denoise: non-finite activations in noise prediction");
  return eps;
}

LatentVideo VideoDenoiser::denoise(const LatentVideo& z_t, std::span<const double> t_emb, const TextEmbedding& c_text,
                                   const PhysicsTokens* p_hat) const {
  if (!z_t.matches(model_)) throw ag::ShapeError("denoise: latent " + z_t.shape_string() + " does not match config");
  ag::NoGradGuard no_grad;
  ag::Tensor physics;
  if (p_hat) physics = ag::Tensor::constant(p_hat->length, p_hat->width, p_hat->data);
  ag::Tensor eps =
      denoise(ag::Tensor::constant(z_t.channels, z_t.frames * z_t.height * z_t.width, z_t.data),
              ag::Tensor::constant(1, static_cast<int>(t_emb.size()), {t_emb.begin(), t_emb.end()}),
              ag::Tensor::constant(c_text.length, c_text.width, c_text.data), physics, 1);
  LatentVideo out = z_t;
  out.data.assign(eps.values().begin(), eps.values().end());
  return out;
}

nn::ParameterList VideoDenoiser::parameters() const {
  nn::ParameterList out;
  patch_embed_.collect("generator.patch_embed", "generator.patch_embed", out);
  out.push_back({"generator.pos_spatial", "generator.pos_embed", pos_spatial_});
  out.push_back({"generator.pos_temporal", "generator.pos_embed", pos_temporal_});
  time_fc1_.collect("generator.time_embed.fc1", "generator.time_embed", out);
  time_fc2_.collect("generator.time_embed.fc2", "generator.time_embed", out);
  for (std::size_t i = 0; i < spatial_.size(); ++i) {
    const std::string prefix = "generator.spatial." + std::to_string(i);
    const SpatialBlock& blk = spatial_[i];
    blk.norm1.collect(prefix + ".norm1", prefix, out);
    blk.self_attn.collect(prefix + ".self_attn", prefix, out);
    blk.norm2.collect(prefix + ".norm2", prefix, out);
    blk.text_attn.collect(prefix + ".text_attn", prefix, out);
    blk.norm3.collect(prefix + ".norm3", prefix, out);
    blk.ffn.collect(prefix + ".ffn", prefix, out);
  }
  for (std::size_t i = 0; i < temporal_.size(); ++i) {
    const std::string prefix = "generator.temporal." + std::to_string(i);
    const TemporalBlock& blk = temporal_[i];
    blk.norm1.collect(prefix + ".norm1", prefix + ".self_attn", out);
    blk.self_attn.collect(prefix + ".self_attn", prefix + ".self_attn", out);
    phys_[i].collect(prefix + ".physics_attn", prefix + ".physics_attn", out);
    blk.norm2.collect(prefix + ".norm2", prefix + ".ffn", out);
    blk.ffn.collect(prefix + ".ffn", prefix + ".ffn", out);
  }
  head_norm_.collect("generator.head.norm", "generator.head", out);
  head_.collect("generator.head.proj", "generator.head", out);
  return out;
}

FreezeMask VideoDenoiser::apply_freeze(FreezePolicy policy) const {
  FreezeMask mask;
  for (const auto& p : parameters()) {
    bool trainable = true;
    if (policy == FreezePolicy::kPaper) {
      const std::string& g = p.group;
      const bool stem = g == "generator.patch_embed" || g == "generator.pos_embed" || g == "generator.time_embed";
      const bool spatial = g.rfind("generator.spatial.", 0) == 0;
      trainable = !(stem || spatial);
    }
    mask[p.group] = trainable;
  }
  return mask;
}

void VideoDenoiser::set_trainable(const FreezeMask& mask) const {
  for (const auto& p : parameters()) {
    auto it = mask.find(p.group);
    if (it == mask.end()) throw std::invalid_argument("freeze mask lacks group " + p.group);
    ag::Tensor t = p.tensor;
    t.set_requires_grad(it->second);
  }
}

ParamCount VideoDenoiser::count_params(const FreezeMask& mask) const {
  ParamCount count;
  for (const auto& p : parameters()) {
    count.total += p.tensor.size();
    auto it = mask.find(p.group);
    if (it == mask.end()) throw std::invalid_argument("freeze mask lacks group " + p.group);
    if (it->second) count.trainable += p.tensor.size();
  }
  return count;
}

std::vector<double> VideoDenoiser::gate_values() const {
  std::vector<double> gates;
  for (const auto& block : phys_) gates.push_back(block.gate.item());
  return gates;
}

void VideoDenoiser::set_gates(double value) const {
  for (const auto& block : phys_) {
    ag::Tensor g = block.gate;
    g.mutable_values()[0] = value;
  }
}

}  // namespace physvid
