#pragma once

#include <string>
#include <vector>

#include "physvid/autograd.hpp"
#include "physvid/rng.hpp"

namespace physvid::nn {

/// A trainable tensor with its checkpoint name and freeze group.
struct NamedParameter {
  std::string name;
  std::string group;
  ag::Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

/// N(0, stddev^2) initialized parameter.
ag::Tensor normal_parameter(int rows, int cols, double stddev, Rng& rng);
ag::Tensor zero_parameter(int rows, int cols);
ag::Tensor constant_parameter(int rows, int cols, double value);

struct Linear {
  ag::Tensor weight;  // [in, out]
  ag::Tensor bias;    // [1, out], undefined when bias-free

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool with_bias = true);
  ag::Tensor operator()(const ag::Tensor& x) const { return ag::linear(x, weight, bias); }
  void collect(const std::string& prefix, const std::string& group, ParameterList& out) const;
};

struct LayerNorm {
  ag::Tensor gamma;
  ag::Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(int width);
  ag::Tensor operator()(const ag::Tensor& x) const { return ag::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, const std::string& group, ParameterList& out) const;
};

/// Multi-head attention with separate query and key/value sources.
struct Attention {
  Linear to_q, to_k, to_v, to_out;
  int heads = 1;

  Attention() = default;
  Attention(int query_dim, int context_dim, int width, int heads, Rng& rng, bool qkv_bias = true);
  /// Self-attention within groups of `group` rows.
  ag::Tensor self(const ag::Tensor& x, int group) const;
  ag::Tensor cross(const ag::Tensor& x, int query_group, const ag::Tensor& context, int key_group) const;
  void collect(const std::string& prefix, const std::string& group, ParameterList& out) const;
};

struct FeedForward {
  Linear fc1, fc2;

  FeedForward() = default;
  FeedForward(int width, int hidden, Rng& rng);
  ag::Tensor operator()(const ag::Tensor& x) const { return fc2(ag::gelu(fc1(x))); }
  void collect(const std::string& prefix, const std::string& group, ParameterList& out) const;
};

/// Row index vector repeating each of `count` rows `times` times in place
/// ([0,0,..,1,1,..]).
std::vector<int> repeat_each(int count, int times);
/// Row index vector tiling `count` rows `times` times ([0,1,..,0,1,..]).
std::vector<int> tile(int count, int times);

std::size_t parameter_count(const ParameterList& params);

}  // namespace physvid::nn
