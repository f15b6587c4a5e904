#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
// Every tensor is 2-D; higher-rank data (latent videos, conv feature maps) is laid
// out as [batch * channels, positions] and reshaped through index gathers.

namespace physvid::ag {

/// Cache-line aligned storage. Vectorized kernels peel differently depending on the
/// start address, which changes summation order; a fixed alignment keeps repeated
/// evaluations bitwise identical.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};
using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node {
  int rows = 0;
  int cols = 0;
  Buffer value;
  Buffer grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols);
  static Tensor constant(int rows, int cols, std::vector<double> values);
  /// Leaf that accumulates gradients.
  static Tensor parameter(int rows, int cols, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Direct write access; only valid on leaves (parameters, constants).
  std::span<double> mutable_values() { return node_->value; }
  double at(int row, int col) const { return node_->value[static_cast<std::size_t>(row) * cols() + col]; }
  double item() const;

  /// Empty span when no gradient has reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  /// Same values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Runs reverse accumulation from a 1x1 tensor, seeding d(loss) = 1.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[m, in] * weight[in, out] + bias[1, out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a * s for a 1x1 tensor s.
Tensor scale_by(const Tensor& a, const Tensor& s);
/// tanh approximation.
Tensor gelu(const Tensor& x);
/// Row-wise normalization with affine gamma[1, n], beta[1, n].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// out row i = x row index[i].
Tensor gather_rows(const Tensor& x, std::vector<int> index);
/// out element i = x element index[i] (flat row-major); result is [rows, cols].
Tensor gather(const Tensor& x, std::vector<int> index, int rows, int cols);
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Grouped scaled dot-product attention. q has rows in groups of `query_group`; k and v
/// in groups of `key_group`. With Gq query groups and Gk key groups (Gq a multiple of
/// Gk), query group g attends to key group g / (Gq / Gk). Widths split into `heads`.
struct AttentionLayout {
  int heads = 1;
  int query_group = 1;
  int key_group = 1;
};
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout);
/// Softmax weights for inspection: [Gq * heads * query_group, key_group].
std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const AttentionLayout& layout);

struct Conv3dGeometry {
  int batch = 1;
  int in_channels = 1;
  int frames = 1;
  int height = 1;
  int width = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  int out_frames() const { return (frames + 2 * padding - kernel) / stride + 1; }
  int out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};
/// x[batch * in_channels, F*H*W], weight[out_channels, in_channels * k^3], bias[1, out_channels]
/// -> [batch * out_channels, Fo*Ho*Wo].
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dGeometry& geometry);

/// Mean of squared differences over all elements, as a 1x1 tensor.
Tensor mse(const Tensor& a, const Tensor& b);
Tensor mean_square(const Tensor& a);

bool all_finite(std::span<const double> values);

}  // namespace physvid::ag
