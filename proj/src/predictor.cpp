#include "physvid/predictor.hpp"

#include <cmath>
#include <string>

namespace physvid {

namespace {
constexpr const char* kEncoderGroup = "predictor.conv_encoder";
constexpr const char* kFusionGroup = "predictor.fusion";
constexpr const char* kQueryGroup = "predictor.query_bank";
constexpr const char* kDecoderGroup = "predictor.decoder";
constexpr const char* kOutputGroup = "predictor.output_projection";
}  // namespace

PhysicsPredictor::PhysicsPredictor(const ModelConfig& model, Rng& rng) : model_(model) {
  const int d = model.hidden_dim;
  const int c = model.latent_channels;
  conv1_w_ = nn::normal_parameter(d, c * 27, 1.0 / std::sqrt(c * 27.0), rng);
  conv1_b_ = nn::zero_parameter(1, d);
  conv2_w_ = nn::normal_parameter(d, d * 27, 1.0 / std::sqrt(d * 27.0), rng);
  conv2_b_ = nn::zero_parameter(1, d);
  visual_pos_ = nn::normal_parameter(visual_tokens(), d, 1.0, rng);
  text_proj_ = nn::Linear(model.text_dim, d, rng);
  time_proj_ = nn::Linear(model.timestep_embed_dim, d, rng);
  for (int i = 0; i < model.predictor_layers; ++i) {
    encoder_.push_back({nn::LayerNorm(d), nn::LayerNorm(d), nn::Attention(d, d, d, model.predictor_heads, rng),
                        nn::FeedForward(d, kFeedForwardMultiplier * d, rng)});
  }
  encoder_norm_ = nn::LayerNorm(d);
  queries_ = nn::normal_parameter(model.phys_tokens, d, 1.0, rng);
  for (int i = 0; i < kDecoderBlocks; ++i) {
    decoder_.push_back({nn::LayerNorm(d), nn::LayerNorm(d), nn::Attention(d, d, d, model.predictor_heads, rng),
                        nn::FeedForward(d, kFeedForwardMultiplier * d, rng)});
  }
  out_norm_ = nn::LayerNorm(d);
  out_proj_ = nn::Linear(d, model.phys_dim, rng);
}

void PhysicsPredictor::check_latent(const ag::Tensor& z, int batch) const {
  const ModelConfig& m = model_;
  if (m.latent_frames % 2 || m.latent_height % 2 || m.latent_width % 2)
    throw std::invalid_argument("predictor: latent frames/height/width must be even, got " +
                                std::to_string(m.latent_frames) + "x" + std::to_string(m.latent_height) + "x" +
                                std::to_string(m.latent_width));
  if (z.rows() != batch * m.latent_channels || z.cols() != m.latent_frames * m.latent_height * m.latent_width)
    throw ag::ShapeError("predictor: latent batch has wrong shape");
}

ag::Tensor PhysicsPredictor::encode_latent(const ag::Tensor& z, int batch) const {
  check_latent(z, batch);
  const ModelConfig& m = model_;
  ag::Conv3dGeometry down{batch, m.latent_channels, m.latent_frames, m.latent_height, m.latent_width, 3, 2, 1};
  ag::Tensor h = ag::gelu(ag::conv3d(z, conv1_w_, conv1_b_, down));
  ag::Conv3dGeometry same{batch, m.hidden_dim, down.out_frames(), down.out_height(), down.out_width(), 3, 1, 1};
  return ag::conv3d(h, conv2_w_, conv2_b_, same);
}

ag::Tensor PhysicsPredictor::fuse(const ag::Tensor& h_vis, const ag::Tensor& c_text, const ag::Tensor& t_emb,
                                  int batch) const {
  const int d = model_.hidden_dim;
  const int p = visual_tokens();
  const int l = model_.text_len;
  if (h_vis.rows() != batch * d || h_vis.cols() != p) throw ag::ShapeError("fuse: visual features have wrong shape");
  if (c_text.rows() != batch * l || c_text.cols() != model_.text_dim)
    throw ag::ShapeError("fuse: text embedding has wrong shape");
  if (t_emb.rows() != batch || t_emb.cols() != model_.timestep_embed_dim)
    throw ag::ShapeError("fuse: timestep embedding width " + std::to_string(t_emb.cols()) + ", expected " +
                         std::to_string(model_.timestep_embed_dim));

  // [B*d, P] channel-major -> [B*P, d] token-major
  std::vector<int> to_tokens(static_cast<std::size_t>(batch) * p * d);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < p; ++i)
      for (int c = 0; c < d; ++c)
        to_tokens[(static_cast<std::size_t>(b) * p + i) * d + c] = (b * d + c) * p + i;
  ag::Tensor visual = ag::gather(h_vis, std::move(to_tokens), batch * p, d);
  visual = ag::add(visual, ag::gather_rows(visual_pos_, nn::tile(p, batch)));

  ag::Tensor all = ag::concat_rows({visual, text_proj_(c_text), time_proj_(t_emb)});
  const int m = fused_length();
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(batch) * m);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < p; ++i) order.push_back(b * p + i);
    for (int i = 0; i < l; ++i) order.push_back(batch * p + b * l + i);
    order.push_back(batch * (p + l) + b);
  }
  ag::Tensor x = ag::gather_rows(all, std::move(order));

  for (const auto& block : encoder_) {
    x = ag::add(x, block.attn.self(block.norm1(x), m));
    x = ag::add(x, block.ffn(block.norm2(x)));
  }
  return encoder_norm_(x);
}

ag::Tensor PhysicsPredictor::decode_physics(const ag::Tensor& h_fused, int batch) const {
  const int m = fused_length();
  if (h_fused.cols() != model_.hidden_dim || h_fused.rows() != batch * m)
    throw ag::ShapeError("decode_physics: fused sequence has wrong shape");
  const int n = model_.phys_tokens;
  ag::Tensor q = ag::gather_rows(queries_, nn::tile(n, batch));
  for (const auto& block : decoder_) {
    q = ag::add(q, block.cross.cross(block.norm_q(q), n, h_fused, m));
    q = ag::add(q, block.ffn(block.norm2(q)));
  }
  return out_proj_(out_norm_(q));
}

ag::Tensor PhysicsPredictor::predict(const ag::Tensor& z, const ag::Tensor& c_text, const ag::Tensor& t_emb,
                                     int batch) const {
  calls_->fetch_add(1);
  return decode_physics(fuse(encode_latent(z, batch), c_text, t_emb, batch), batch);
}

PhysicsTokens PhysicsPredictor::predict(const LatentVideo& z_t, const TextEmbedding& c_text,
                                        std::span<const double> t_emb) const {
  if (!z_t.matches(model_)) throw ag::ShapeError("predict: latent " + z_t.shape_string() + " does not match config");
  ag::NoGradGuard no_grad;
  ag::Tensor out = predict(latent_tensor(z_t), token_tensor(c_text),
                           ag::Tensor::constant(1, static_cast<int>(t_emb.size()), {t_emb.begin(), t_emb.end()}), 1);
  return {out.rows(), out.cols(), {out.values().begin(), out.values().end()}};
}

nn::ParameterList PhysicsPredictor::parameters() const {
  nn::ParameterList out;
  out.push_back({"predictor.conv1.weight", kEncoderGroup, conv1_w_});
  out.push_back({"predictor.conv1.bias", kEncoderGroup, conv1_b_});
  out.push_back({"predictor.conv2.weight", kEncoderGroup, conv2_w_});
  out.push_back({"predictor.conv2.bias", kEncoderGroup, conv2_b_});
  out.push_back({"predictor.visual_pos", kFusionGroup, visual_pos_});
  text_proj_.collect("predictor.text_proj", kFusionGroup, out);
  time_proj_.collect("predictor.time_proj", kFusionGroup, out);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string prefix = "predictor.encoder." + std::to_string(i);
    encoder_[i].norm1.collect(prefix + ".norm1", kFusionGroup, out);
    encoder_[i].attn.collect(prefix + ".attn", kFusionGroup, out);
    encoder_[i].norm2.collect(prefix + ".norm2", kFusionGroup, out);
    encoder_[i].ffn.collect(prefix + ".ffn", kFusionGroup, out);
  }
  encoder_norm_.collect("predictor.encoder_norm", kFusionGroup, out);
  out.push_back({"predictor.queries", kQueryGroup, queries_});
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const std::string prefix = "predictor.decoder." + std::to_string(i);
    decoder_[i].norm_q.collect(prefix + ".norm_q", kDecoderGroup, out);
    decoder_[i].cross.collect(prefix + ".cross", kDecoderGroup, out);
    decoder_[i].norm2.collect(prefix + ".norm2", kDecoderGroup, out);
    decoder_[i].ffn.collect(prefix + ".ffn", kDecoderGroup, out);
  }
  out_norm_.collect("predictor.out_norm", kOutputGroup, out);
  out_proj_.collect("predictor.out_proj", kOutputGroup, out);
  return out;
}

ag::Tensor latent_tensor(const LatentVideo& z) {
  return ag::Tensor::constant(z.channels, z.frames * z.height * z.width, z.data);
}

ag::Tensor latent_batch(std::span<const LatentVideo* const> items) {
  if (items.empty()) throw std::invalid_argument("latent_batch: empty batch");
  const LatentVideo& first = *items.front();
  std::vector<double> values;
  values.reserve(first.size() * items.size());
  for (const LatentVideo* z : items) {
    if (!z->same_shape(first)) throw ag::ShapeError("latent_batch: mixed shapes");
    values.insert(values.end(), z->data.begin(), z->data.end());
  }
  return ag::Tensor::constant(static_cast<int>(items.size()) * first.channels, first.frames * first.height * first.width,
                              std::move(values));
}

}  // namespace physvid
