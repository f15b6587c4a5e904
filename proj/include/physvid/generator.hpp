#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "physvid/autograd.hpp"
#include "physvid/config.hpp"
#include "physvid/layers.hpp"
#include "physvid/types.hpp"

namespace physvid {

/// Gated residual cross-attention from frame tokens to physics tokens:
///   x' = x + gate * out(Attn(W_q x, W_k p, W_v p))
/// The gate is one raw scalar initialized to exactly zero.
struct PhysicsCrossAttention {
  nn::Linear w_q;    // d -> d, no bias
  nn::Linear w_k;    // Dp -> d, no bias
  nn::Linear w_v;    // Dp -> d, no bias
  nn::Linear w_out;  // d -> d
  ag::Tensor gate;   // [1, 1]
  int heads = 1;

  PhysicsCrossAttention() = default;
  PhysicsCrossAttention(int width, int phys_dim, int heads, Rng& rng);

  /// x: [G * frames, d] with G = batch * locations query groups; p_hat: [batch * N, Dp].
  ag::Tensor operator()(const ag::Tensor& x, int frames, const ag::Tensor& p_hat, int tokens) const;
  /// Softmax weights over the physics tokens, [G * heads * frames, N].
  std::vector<double> weights(const ag::Tensor& x, int frames, const ag::Tensor& p_hat, int tokens) const;
  void collect(const std::string& prefix, const std::string& group, nn::ParameterList& out) const;
};

enum class FreezePolicy { kPaper, kAllTrainable };
FreezePolicy parse_freeze_policy(const std::string& name);
std::string to_string(FreezePolicy policy);

/// Trainable flag per parameter group.
using FreezeMask = std::map<std::string, bool>;

struct ParamCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
};

/// Factorized spatial/temporal transformer predicting the diffusion noise.
///
/// Latents are cut into 2x2 spatial patches per frame. Spatial blocks attend over the
/// patches of one frame and cross-attend to the caption; temporal blocks attend over
/// the frames of one patch location and then cross-attend to the physics tokens
/// through a gated residual. Blocks alternate spatial, temporal, spatial, ...
class VideoDenoiser {
 public:
  static constexpr int kPatch = 2;
  static constexpr int kFeedForwardMultiplier = 4;

  VideoDenoiser(const ModelConfig& model, Rng& rng);

  /// z: [B*C, F*H*W], t_emb: [B, E], c_text: [B*L, Dt], p_hat: [B*N, Dp] or undefined.
  /// An undefined p_hat skips physics cross-attention (every gate treated as zero).
  ag::Tensor denoise(const ag::Tensor& z, const ag::Tensor& t_emb, const ag::Tensor& c_text, const ag::Tensor& p_hat,
                     int batch) const;
  LatentVideo denoise(const LatentVideo& z_t, std::span<const double> t_emb, const TextEmbedding& c_text,
                      const PhysicsTokens* p_hat) const;

  nn::ParameterList parameters() const;
  FreezeMask apply_freeze(FreezePolicy policy) const;
  /// Sets requires_grad on every parameter from its group's flag.
  void set_trainable(const FreezeMask& mask) const;
  ParamCount count_params(const FreezeMask& mask) const;

  std::vector<double> gate_values() const;
  void set_gates(double value) const;
  const std::vector<PhysicsCrossAttention>& physics_attention() const { return phys_; }

  int tokens_per_frame() const { return (model_.latent_height / kPatch) * (model_.latent_width / kPatch); }
  const ModelConfig& config() const { return model_; }

 private:
  struct SpatialBlock {
    nn::LayerNorm norm1, norm2, norm3;
    nn::Attention self_attn, text_attn;
    nn::FeedForward ffn;
  };
  struct TemporalBlock {
    nn::LayerNorm norm1, norm2;
    nn::Attention self_attn;
    nn::FeedForward ffn;
  };

  std::vector<int> patch_index(int batch) const;
  std::vector<int> unpatch_index(int batch) const;
  std::vector<int> frame_to_location_order(int batch) const;
  std::vector<int> location_to_frame_order(int batch) const;

  ModelConfig model_;
  nn::Linear patch_embed_;
  ag::Tensor pos_spatial_;
  ag::Tensor pos_temporal_;
  nn::Linear time_fc1_, time_fc2_;
  std::vector<SpatialBlock> spatial_;
  std::vector<TemporalBlock> temporal_;
  std::vector<PhysicsCrossAttention> phys_;
  nn::LayerNorm head_norm_;
  nn::Linear head_;
};

}  // namespace physvid
