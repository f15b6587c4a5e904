#include "physvid/layers.hpp"

#include <cmath>

namespace physvid::nn {

ag::Tensor normal_parameter(int rows, int cols, double stddev, Rng& rng) {
  std::vector<double> values(static_cast<std::size_t>(rows) * cols);
  for (auto& v : values) v = stddev * rng.normal();
  return ag::Tensor::parameter(rows, cols, std::move(values));
}

ag::Tensor zero_parameter(int rows, int cols) { return constant_parameter(rows, cols, 0.0); }

ag::Tensor constant_parameter(int rows, int cols, double value) {
  return ag::Tensor::parameter(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, value));
}

Linear::Linear(int in, int out, Rng& rng, bool with_bias)
    : weight(normal_parameter(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {
  if (with_bias) bias = zero_parameter(1, out);
}

void Linear::collect(const std::string& prefix, const std::string& group, ParameterList& out) const {
  out.push_back({prefix + ".weight", group, weight});
  if (bias.defined()) out.push_back({prefix + ".bias", group, bias});
}

LayerNorm::LayerNorm(int width) : gamma(constant_parameter(1, width, 1.0)), beta(zero_parameter(1, width)) {}

void LayerNorm::collect(const std::string& prefix, const std::string& group, ParameterList& out) const {
  out.push_back({prefix + ".gamma", group, gamma});
  out.push_back({prefix + ".beta", group, beta});
}

Attention::Attention(int query_dim, int context_dim, int width, int heads, Rng& rng, bool qkv_bias)
    : to_q(query_dim, width, rng, qkv_bias),
      to_k(context_dim, width, rng, qkv_bias),
      to_v(context_dim, width, rng, qkv_bias),
      to_out(width, query_dim, rng),
      heads(heads) {}

ag::Tensor Attention::self(const ag::Tensor& x, int group) const { return cross(x, group, x, group); }

ag::Tensor Attention::cross(const ag::Tensor& x, int query_group, const ag::Tensor& context, int key_group) const {
  const ag::AttentionLayout layout{heads, query_group, key_group};
  return to_out(ag::attention(to_q(x), to_k(context), to_v(context), layout));
}

void Attention::collect(const std::string& prefix, const std::string& group, ParameterList& out) const {
  to_q.collect(prefix + ".to_q", group, out);
  to_k.collect(prefix + ".to_k", group, out);
  to_v.collect(prefix + ".to_v", group, out);
  to_out.collect(prefix + ".to_out", group, out);
}

FeedForward::FeedForward(int width, int hidden, Rng& rng) : fc1(width, hidden, rng), fc2(hidden, width, rng) {}

void FeedForward::collect(const std::string& prefix, const std::string& group, ParameterList& out) const {
  fc1.collect(prefix + ".fc1", group, out);
  fc2.collect(prefix + ".fc2", group, out);
}

std::vector<int> repeat_each(int count, int times) {
  std::vector<int> index;
  index.reserve(static_cast<std::size_t>(count) * times);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < times; ++j) index.push_back(i);
  return index;
}

std::vector<int> tile(int count, int times) {
  std::vector<int> index;
  index.reserve(static_cast<std::size_t>(count) * times);
  for (int j = 0; j < times; ++j)
    for (int i = 0; i < count; ++i) index.push_back(i);
  return index;
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.size();
  return total;
}

}  // namespace physvid::nn
