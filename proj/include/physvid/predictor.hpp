#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "physvid/autograd.hpp"
#include "physvid/config.hpp"
#include "physvid/layers.hpp"
#include "physvid/types.hpp"

namespace physvid {

/// Regresses physics tokens from a noisy latent, its caption embedding and the
/// diffusion timestep embedding:
///
///   1. a two-layer 3D conv encoder halves frames, height and width and lifts the
///      latent channels to the hidden width d;
///   2. the flattened visual tokens, the projected text tokens and one projected
///      timestep token are concatenated as [visual; text; time] and run through a
///      self-attention encoder;
///   3. a bank of N learnable queries cross-attends to that sequence through a
///      decoder without query self-attention, then projects d -> Dp.
///
/// Batched graph entry points take latents as [B * C, F * H * W], text as
/// [B * L, Dt] and timestep embeddings as [B, E].
class PhysicsPredictor {
 public:
  static constexpr int kDecoderBlocks = 2;
  static constexpr int kFeedForwardMultiplier = 4;

  PhysicsPredictor(const ModelConfig& model, Rng& rng);
  PhysicsPredictor(PhysicsPredictor&&) = default;
  PhysicsPredictor& operator=(PhysicsPredictor&&) = default;

  /// -> [B * d, (F/2)(H/2)(W/2)] channel-major feature map.
  ag::Tensor encode_latent(const ag::Tensor& z, int batch) const;
  /// -> [B * M, d] with M = (F/2)(H/2)(W/2) + L + 1, per-sample contiguous.
  ag::Tensor fuse(const ag::Tensor& h_vis, const ag::Tensor& c_text, const ag::Tensor& t_emb, int batch) const;
  /// -> [B * N, Dp].
  ag::Tensor decode_physics(const ag::Tensor& h_fused, int batch) const;
  ag::Tensor predict(const ag::Tensor& z, const ag::Tensor& c_text, const ag::Tensor& t_emb, int batch) const;

  PhysicsTokens predict(const LatentVideo& z_t, const TextEmbedding& c_text, std::span<const double> t_emb) const;

  nn::ParameterList parameters() const;
  const ModelConfig& config() const { return model_; }
  int fused_length() const { return visual_tokens() + model_.text_len + 1; }
  int visual_tokens() const {
    return (model_.latent_frames / 2) * (model_.latent_height / 2) * (model_.latent_width / 2);
  }

  /// Number of predict() calls since construction.
  std::uint64_t call_count() const { return calls_->load(); }

  ag::Tensor query_bank() const { return queries_; }
  const nn::Linear& output_projection() const { return out_proj_; }

 private:
  struct EncoderBlock {
    nn::LayerNorm norm1, norm2;
    nn::Attention attn;
    nn::FeedForward ffn;
  };
  struct DecoderBlock {
    nn::LayerNorm norm_q, norm2;
    nn::Attention cross;
    nn::FeedForward ffn;
  };

  void check_latent(const ag::Tensor& z, int batch) const;

  ModelConfig model_;
  ag::Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  ag::Tensor visual_pos_;
  nn::Linear text_proj_, time_proj_;
  std::vector<EncoderBlock> encoder_;
  nn::LayerNorm encoder_norm_;
  ag::Tensor queries_;
  std::vector<DecoderBlock> decoder_;
  nn::LayerNorm out_norm_;
  nn::Linear out_proj_;
  std::unique_ptr<std::atomic<std::uint64_t>> calls_ = std::make_unique<std::atomic<std::uint64_t>>(0);
};

/// Flattens a single latent into the batched graph layout [C, F*H*W].
ag::Tensor latent_tensor(const LatentVideo& z);
ag::Tensor latent_batch(std::span<const LatentVideo* const> items);
template <typename Tag>
ag::Tensor token_tensor(const TokenSequence<Tag>& tokens) {
  return ag::Tensor::constant(tokens.length, tokens.width, tokens.data);
}

}  // namespace physvid
