#include "physvid/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace physvid::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

ConstMatMap view(const Node& n) { return ConstMatMap(n.value.data(), n.rows, n.cols); }
MatMap grad_view(Node& n) {
  n.ensure_grad();
  return MatMap(n.grad.data(), n.rows, n.cols);
}

std::string dims(const Tensor& t) { return "[" + std::to_string(t.rows()) + ", " + std::to_string(t.cols()) + "]"; }

// Builds an op result; the graph edge is kept only if a parent needs gradients.
Tensor make_result(int rows, int cols, Buffer value, std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool needs = std::any_of(parents.begin(), parents.end(),
                                   [](const auto& p) { return p && p->requires_grad; });
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
}

}  // namespace

Tensor Tensor::zeros(int rows, int cols) {
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::constant(int rows, int cols, std::vector<double> values) {
  if (values.size() != static_cast<std::size_t>(rows) * cols)
    throw ShapeError("tensor: value count does not match shape");
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value.assign(values.begin(), values.end());
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(int rows, int cols, std::vector<double> values) {
  Tensor t = constant(rows, cols, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor is " + dims(*this));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->rows = rows();
  node->cols = cols();
  node->value = node_->value;
  return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be 1x1, got " + dims(loss));
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + dims(a) + " x " + dims(b));
  Buffer out(static_cast<std::size_t>(a.rows()) * b.cols());
  MatMap(out.data(), a.rows(), b.cols()).noalias() = view(*a.node()) * view(*b.node());
  return make_result(a.rows(), b.cols(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    ConstMatMap g(self.grad.data(), self.rows, self.cols);
    if (pa.requires_grad) grad_view(pa).noalias() += g * view(pb).transpose();
    if (pb.requires_grad) grad_view(pb).noalias() += view(pa).transpose() * g;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.cols() != weight.rows()) throw ShapeError("linear: input " + dims(x) + " vs weight " + dims(weight));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rows() != 1 || bias.cols() != weight.cols()))
    throw ShapeError("linear: bias " + dims(bias) + " vs weight " + dims(weight));
  Buffer out(static_cast<std::size_t>(x.rows()) * weight.cols());
  MatMap y(out.data(), x.rows(), weight.cols());
  y.noalias() = view(*x.node()) * view(*weight.node());
  if (has_bias) y.rowwise() += view(*bias.node()).row(0);
  std::vector<std::shared_ptr<Node>> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_result(x.rows(), weight.cols(), std::move(out), std::move(parents), [](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    ConstMatMap g(self.grad.data(), self.rows, self.cols);
    if (px.requires_grad) grad_view(px).noalias() += g * view(pw).transpose();
    if (pw.requires_grad) grad_view(pw).noalias() += view(px).transpose() * g;
    if (self.parents.size() > 2 && self.parents[2]->requires_grad)
      grad_view(*self.parents[2]).row(0) += g.colwise().sum();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.rows(), a.cols(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result(a.rows(), a.cols(), std::move(out), {a.node()}, [factor](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * factor;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("scale_by: scalar expected, got " + dims(s));
  const double factor = s.item();
  Buffer out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result(a.rows(), a.cols(), std::move(out), {a.node(), s.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& ps = *self.parents[1];
    const double factor = ps.value[0];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * factor;
    }
    if (ps.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.value[i];
      ps.ensure_grad();
      ps.grad[0] += acc;
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  Buffer out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  return make_result(x.rows(), x.cols(), std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = p.value[i];
      const double inner = kC * (v + kA * v * v * v);
      const double th = std::tanh(inner);
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
      p.grad[i] += self.grad[i] * d;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
    throw ShapeError("layer_norm: affine params must be [1, " + std::to_string(n) + "]");
  const int m = x.rows();
  Buffer normalized(x.size());
  Buffer inv_std(m);
  Buffer out(x.size());
  const auto xv = x.values();
  const auto g = gamma.values();
  const auto b = beta.values();
  for (int r = 0; r < m; ++r) {
    const double* row = xv.data() + static_cast<std::size_t>(r) * n;
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += row[c];
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < n; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * n + c;
      normalized[i] = (row[c] - mean) * inv_std[r];
      out[i] = normalized[i] * g[c] + b[c];
    }
  }
  return make_result(m, n, std::move(out), {x.node(), gamma.node(), beta.node()},
                     [normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const int m = self.rows;
                       const int n = self.cols;
                       if (pg.requires_grad) pg.ensure_grad();
                       if (pb.requires_grad) pb.ensure_grad();
                       if (px.requires_grad) px.ensure_grad();
                       Buffer dxhat(n);
                       for (int r = 0; r < m; ++r) {
                         const std::size_t base = static_cast<std::size_t>(r) * n;
                         double mean_d = 0.0;
                         double mean_dx = 0.0;
                         for (int c = 0; c < n; ++c) {
                           const double gy = self.grad[base + c];
                           if (pg.requires_grad) pg.grad[c] += gy * normalized[base + c];
                           if (pb.requires_grad) pb.grad[c] += gy;
                           dxhat[c] = gy * pg.value[c];
                           mean_d += dxhat[c];
                           mean_dx += dxhat[c] * normalized[base + c];
                         }
                         if (!px.requires_grad) continue;
                         mean_d /= n;
                         mean_dx /= n;
                         for (int c = 0; c < n; ++c)
                           px.grad[base + c] += inv_std[r] * (dxhat[c] - mean_d - normalized[base + c] * mean_dx);
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::vector<int> index) {
  const int n = x.cols();
  const int m = static_cast<int>(index.size());
  Buffer out(static_cast<std::size_t>(m) * n);
  const auto xv = x.values();
  for (int r = 0; r < m; ++r) {
    if (index[r] < 0 || index[r] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.data() + static_cast<std::size_t>(index[r]) * n, n, out.data() + static_cast<std::size_t>(r) * n);
  }
  return make_result(m, n, std::move(out), {x.node()}, [index = std::move(index)](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    const int n = self.cols;
    for (std::size_t r = 0; r < index.size(); ++r) {
      double* dst = p.grad.data() + static_cast<std::size_t>(index[r]) * n;
      const double* src = self.grad.data() + r * n;
      for (int c = 0; c < n; ++c) dst[c] += src[c];
    }
  });
}

Tensor gather(const Tensor& x, std::vector<int> index, int rows, int cols) {
  if (index.size() != static_cast<std::size_t>(rows) * cols) throw ShapeError("gather: index count vs shape");
  Buffer out(index.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= xv.size()) throw ShapeError("gather: index out of range");
    out[i] = xv[index[i]];
  }
  return make_result(rows, cols, std::move(out), {x.node()}, [index = std::move(index)](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) p.grad[index[i]] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int n = parts.front().cols();
  int m = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: width mismatch");
    m += p.rows();
    parents.push_back(p.node());
  }
  Buffer out;
  out.reserve(static_cast<std::size_t>(m) * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result(m, n, std::move(out), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self.grad[offset + i];
      }
      offset += p->value.size();
    }
  });
}

namespace {

struct AttentionPlan {
  int query_groups;
  int key_groups;
  int ratio;
  int head_dim;
  double scale;
};

AttentionPlan plan_attention(const Tensor& q, const Tensor& k, const AttentionLayout& l) {
  if (l.heads < 1 || l.query_group < 1 || l.key_group < 1) throw ShapeError("attention: bad layout");
  if (q.cols() != k.cols()) throw ShapeError("attention: q/k widths " + dims(q) + " vs " + dims(k));
  if (q.cols() % l.heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (q.rows() % l.query_group != 0 || k.rows() % l.key_group != 0)
    throw ShapeError("attention: rows not divisible by group size");
  AttentionPlan p{};
  p.query_groups = q.rows() / l.query_group;
  p.key_groups = k.rows() / l.key_group;
  if (p.key_groups < 1 || p.query_groups % p.key_groups != 0)
    throw ShapeError("attention: query groups must be a multiple of key groups");
  p.ratio = p.query_groups / p.key_groups;
  p.head_dim = q.cols() / l.heads;
  p.scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim));
  return p;
}

void softmax_rows(Eigen::Ref<RowMat> s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

}  // namespace

namespace {

Buffer attention_probs(const Tensor& q, const Tensor& k, const AttentionLayout& layout) {
  const AttentionPlan plan = plan_attention(q, k, layout);
  const int sq = layout.query_group;
  const int sk = layout.key_group;
  const int width = q.cols();
  Buffer weights(static_cast<std::size_t>(plan.query_groups) * layout.heads * sq * sk);
  for (int g = 0; g < plan.query_groups; ++g) {
    const int kg = g / plan.ratio;
    for (int h = 0; h < layout.heads; ++h) {
      ConstStrided qm(q.values().data() + static_cast<std::size_t>(g) * sq * width + h * plan.head_dim, sq,
                      plan.head_dim, Eigen::OuterStride<>(width));
      ConstStrided km(k.values().data() + static_cast<std::size_t>(kg) * sk * width + h * plan.head_dim, sk,
                      plan.head_dim, Eigen::OuterStride<>(width));
      MatMap p(weights.data() + (static_cast<std::size_t>(g) * layout.heads + h) * sq * sk, sq, sk);
      p.noalias() = (qm * km.transpose()) * plan.scale;
      softmax_rows(p);
    }
  }
  return weights;
}

}  // namespace

std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const AttentionLayout& layout) {
  const Buffer probs = attention_probs(q, k, layout);
  return {probs.begin(), probs.end()};
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout) {
  require_same_shape(k, v, "attention(k, v)");
  const AttentionPlan plan = plan_attention(q, k, layout);
  Buffer probs = attention_probs(q, k, layout);
  const int sq = layout.query_group;
  const int sk = layout.key_group;
  const int width = q.cols();
  Buffer out(q.size());
  for (int g = 0; g < plan.query_groups; ++g) {
    const int kg = g / plan.ratio;
    for (int h = 0; h < layout.heads; ++h) {
      ConstMatMap p(probs.data() + (static_cast<std::size_t>(g) * layout.heads + h) * sq * sk, sq, sk);
      ConstStrided vm(v.values().data() + static_cast<std::size_t>(kg) * sk * width + h * plan.head_dim, sk,
                      plan.head_dim, Eigen::OuterStride<>(width));
      Strided om(out.data() + static_cast<std::size_t>(g) * sq * width + h * plan.head_dim, sq, plan.head_dim,
                 Eigen::OuterStride<>(width));
      om.noalias() = p * vm;
    }
  }
  return make_result(
      q.rows(), q.cols(), std::move(out), {q.node(), k.node(), v.node()},
      [plan, layout, probs = std::move(probs)](Node& self) {
        Node& pq = *self.parents[0];
        Node& pk = *self.parents[1];
        Node& pv = *self.parents[2];
        const int sq = layout.query_group;
        const int sk = layout.key_group;
        const int width = self.cols;
        const int hd = plan.head_dim;
        for (Node* p : {&pq, &pk, &pv})
          if (p->requires_grad) p->ensure_grad();
        RowMat dp(sq, sk);
        for (int g = 0; g < plan.query_groups; ++g) {
          const int kg = g / plan.ratio;
          const std::size_t qoff = static_cast<std::size_t>(g) * sq * width;
          const std::size_t koff = static_cast<std::size_t>(kg) * sk * width;
          for (int h = 0; h < layout.heads; ++h) {
            ConstMatMap p(probs.data() + (static_cast<std::size_t>(g) * layout.heads + h) * sq * sk, sq, sk);
            ConstStrided dout(self.grad.data() + qoff + h * hd, sq, hd, Eigen::OuterStride<>(width));
            ConstStrided vm(pv.value.data() + koff + h * hd, sk, hd, Eigen::OuterStride<>(width));
            if (pv.requires_grad) {
              Strided dv(pv.grad.data() + koff + h * hd, sk, hd, Eigen::OuterStride<>(width));
              dv.noalias() += p.transpose() * dout;
            }
            if (!pq.requires_grad && !pk.requires_grad) continue;
            dp.noalias() = dout * vm.transpose();
            // d(scores) = P o (dP - rowsum(dP o P))
            for (int r = 0; r < sq; ++r) {
              const double dot = (dp.row(r).array() * p.row(r).array()).sum();
              dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)) * plan.scale;
            }
            if (pq.requires_grad) {
              ConstStrided km(pk.value.data() + koff + h * hd, sk, hd, Eigen::OuterStride<>(width));
              Strided dq(pq.grad.data() + qoff + h * hd, sq, hd, Eigen::OuterStride<>(width));
              dq.noalias() += dp * km;
            }
            if (pk.requires_grad) {
              ConstStrided qm(pq.value.data() + qoff + h * hd, sq, hd, Eigen::OuterStride<>(width));
              Strided dk(pk.grad.data() + koff + h * hd, sk, hd, Eigen::OuterStride<>(width));
              dk.noalias() += dp.transpose() * qm;
            }
          }
        }
      });
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dGeometry& g) {
  const int k3 = g.kernel * g.kernel * g.kernel;
  const int in_positions = g.frames * g.height * g.width;
  if (x.rows() != g.batch * g.in_channels || x.cols() != in_positions)
    throw ShapeError("conv3d: input " + dims(x) + " does not match geometry");
  if (weight.cols() != g.in_channels * k3) throw ShapeError("conv3d: weight " + dims(weight) + " vs geometry");
  const int out_channels = weight.rows();
  if (bias.defined() && (bias.rows() != 1 || bias.cols() != out_channels)) throw ShapeError("conv3d: bias shape");
  const int fo = g.out_frames(), ho = g.out_height(), wo = g.out_width();
  if (fo < 1 || ho < 1 || wo < 1) throw ShapeError("conv3d: empty output");
  const int out_positions = fo * ho * wo;

  // Per-channel im2col offsets, -1 for padding.
  std::vector<int> offsets(static_cast<std::size_t>(k3) * out_positions);
  for (int kf = 0; kf < g.kernel; ++kf)
    for (int kh = 0; kh < g.kernel; ++kh)
      for (int kw = 0; kw < g.kernel; ++kw) {
        const int kidx = (kf * g.kernel + kh) * g.kernel + kw;
        for (int f = 0; f < fo; ++f)
          for (int h = 0; h < ho; ++h)
            for (int w = 0; w < wo; ++w) {
              const int sf = f * g.stride - g.padding + kf;
              const int sh = h * g.stride - g.padding + kh;
              const int sw = w * g.stride - g.padding + kw;
              const bool inside = sf >= 0 && sf < g.frames && sh >= 0 && sh < g.height && sw >= 0 && sw < g.width;
              offsets[static_cast<std::size_t>(kidx) * out_positions + (f * ho + h) * wo + w] =
                  inside ? (sf * g.height + sh) * g.width + sw : -1;
            }
      }

  const int col_rows = g.in_channels * k3;
  Buffer columns(static_cast<std::size_t>(g.batch) * col_rows * out_positions, 0.0);
  Buffer out(static_cast<std::size_t>(g.batch) * out_channels * out_positions);
  const auto xv = x.values();
  for (int b = 0; b < g.batch; ++b) {
    double* cols = columns.data() + static_cast<std::size_t>(b) * col_rows * out_positions;
    for (int ci = 0; ci < g.in_channels; ++ci) {
      const double* src = xv.data() + (static_cast<std::size_t>(b) * g.in_channels + ci) * in_positions;
      for (int kidx = 0; kidx < k3; ++kidx) {
        const int* off = offsets.data() + static_cast<std::size_t>(kidx) * out_positions;
        double* dst = cols + (static_cast<std::size_t>(ci) * k3 + kidx) * out_positions;
        for (int p = 0; p < out_positions; ++p) dst[p] = off[p] >= 0 ? src[off[p]] : 0.0;
      }
    }
    MatMap y(out.data() + static_cast<std::size_t>(b) * out_channels * out_positions, out_channels, out_positions);
    y.noalias() = view(*weight.node()) * ConstMatMap(cols, col_rows, out_positions);
    if (bias.defined()) y.colwise() += view(*bias.node()).row(0).transpose();
  }

  std::vector<std::shared_ptr<Node>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result(
      g.batch * out_channels, out_positions, std::move(out), std::move(parents),
      [g, k3, col_rows, out_positions, in_positions, out_channels, offsets = std::move(offsets),
       columns = std::move(columns)](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        RowMat dcols(col_rows, out_positions);
        for (int b = 0; b < g.batch; ++b) {
          ConstMatMap dy(self.grad.data() + static_cast<std::size_t>(b) * out_channels * out_positions, out_channels,
                         out_positions);
          ConstMatMap cols(columns.data() + static_cast<std::size_t>(b) * col_rows * out_positions, col_rows,
                           out_positions);
          if (pw.requires_grad) grad_view(pw).noalias() += dy * cols.transpose();
          if (pb && pb->requires_grad) grad_view(*pb).row(0) += dy.rowwise().sum().transpose();
          if (!px.requires_grad) continue;
          dcols.noalias() = view(pw).transpose() * dy;
          px.ensure_grad();
          for (int ci = 0; ci < g.in_channels; ++ci) {
            double* dst = px.grad.data() + (static_cast<std::size_t>(b) * g.in_channels + ci) * in_positions;
            for (int kidx = 0; kidx < k3; ++kidx) {
              const int* off = offsets.data() + static_cast<std::size_t>(kidx) * out_positions;
              const double* src = dcols.data() + (static_cast<std::size_t>(ci) * k3 + kidx) * out_positions;
              for (int p = 0; p < out_positions; ++p)
                if (off[p] >= 0) dst[off[p]] += src[p];
            }
          }
        }
      });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const auto av = a.values();
  const auto bv = b.values();
  const double n = static_cast<double>(av.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  return make_result(1, 1, {acc / n}, {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const double scale = 2.0 * self.grad[0] / static_cast<double>(pa.value.size());
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t i = 0; i < pa.value.size(); ++i) {
      const double d = scale * (pa.value[i] - pb.value[i]);
      if (pa.requires_grad) pa.grad[i] += d;
      if (pb.requires_grad) pb.grad[i] -= d;
    }
  });
}

Tensor mean_square(const Tensor& a) { return mse(a, Tensor::zeros(a.rows(), a.cols())); }

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace physvid::ag
