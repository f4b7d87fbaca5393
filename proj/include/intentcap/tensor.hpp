#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "intentcap/error.hpp"
#include "intentcap/rng.hpp"

namespace intentcap {

namespace detail {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backprop;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

}  // namespace detail

// Dense f64 tensor with optional reverse-mode gradient tracking. A Tensor is a
// cheap handle onto a shared graph node; values are treated as immutable after
// construction except for grad accumulation (mutable_values exists for leaf
// initialization and finite-difference probing). One graph is single-threaded;
// independent graphs may live on independent threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    return from_data(std::move(shape), {});
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    const auto n = detail::shape_numel(shape);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value.assign(n, v);
    return Tensor(std::move(node));
  }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data) {
    const auto n = detail::shape_numel(shape);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    if (data.empty()) {
      node->value.assign(n, 0.0);
    } else {
      if (data.size() != n)
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + detail::shape_str(node->shape));
      node->value = std::move(data);
    }
    return Tensor(std::move(node));
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  static Tensor random_uniform(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.node_->value) x = rng.uniform(lo, hi);
    return t;
  }

  static Tensor random_normal(std::vector<std::size_t> shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.node_->value) x = stddev * rng.normal();
    return t;
  }

  // Low-level hook for defining new differentiable ops outside this header
  // (roi_align lives with the adapter). `backprop` must accumulate into the
  // parents' grads and must not capture the result node.
  static Tensor make_op(std::vector<std::size_t> shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backprop) {
    if (value.size() != detail::shape_numel(shape))
      throw DimensionError("op value length does not match declared shape");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) {
      needs = needs || p.requires_grad();
      node->parents.push_back(p.node_);
    }
    node->requires_grad = needs;
    if (needs) node->backprop = std::move(backprop);
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t size() const { return node_->numel(); }

  std::span<const double> values() const { return node_->value; }
  // Leaf mutation only (initialization, finite-difference probing); mutating a
  // non-leaf invalidates nothing but means the graph no longer reflects it.
  std::span<double> mutable_values() { return node_->value; }

  double item() const {
    if (size() != 1) throw DimensionError("item() requires a single-element tensor");
    return node_->value[0];
  }

  double at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != rank()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0, i = 0;
    for (auto v : idx) flat = flat * node_->shape[i++] + v;
    return node_->value[flat];
  }

  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  // Backpropagates from this scalar through the recorded graph.
  void backward() const {
    if (size() != 1) throw DimensionError("backward() requires a scalar loss");
    std::vector<detail::Node*> order;
    topo_order(order);
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = *it;
      if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"shape", node_->shape}, {"data", node_->value}};
  }

  static Tensor from_json(const nlohmann::json& j) {
    return from_data(j.at("shape").get<std::vector<std::size_t>>(),
                     j.at("data").get<std::vector<double>>());
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  void topo_order(std::vector<detail::Node*>& order) const {
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    seen.insert(node_.get());
    stack.emplace_back(node_.get(), 0);
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) {
          p->ensure_grad();
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void accumulate(const std::shared_ptr<Node>& p, std::size_t i, double v) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  p->grad[i] += v;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  const auto n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] + b.values()[i];
  auto pa = a.node(), pb = b.node();
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      detail::accumulate(pa, i, self.grad[i]);
      detail::accumulate(pb, i, self.grad[i]);
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  const auto n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] - b.values()[i];
  auto pa = a.node(), pb = b.node();
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      detail::accumulate(pa, i, self.grad[i]);
      detail::accumulate(pb, i, -self.grad[i]);
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  const auto n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] * b.values()[i];
  auto pa = a.node(), pb = b.node();
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      detail::accumulate(pa, i, self.grad[i] * pb->value[i]);
      detail::accumulate(pb, i, self.grad[i] * pa->value[i]);
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  const auto n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = c * a.values()[i];
  auto pa = a.node();
  return Tensor::make_op(a.shape(), std::move(out), {a}, [pa, c](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      detail::accumulate(pa, i, c * self.grad[i]);
  });
}

// Standard 2-D matrix product; backward is dA = dC*B^T, dB = A^T*dC.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: operands must be rank-2");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree " + detail::shape_str(a.shape()) +
                         " vs " + detail::shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += av[i * k + l] * bv[l * n + j];
      out[i * n + j] = acc;
    }
  auto pa = a.node(), pb = b.node();
  return Tensor::make_op({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](detail::Node& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * pb->value[l * n + j];
          pa->grad[i * k + l] += acc;
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += pa->value[i * k + l] * self.grad[i * n + j];
          pb->grad[l * n + j] += acc;
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: rank-2 only");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  auto pa = a.node();
  return Tensor::make_op({n, m}, std::move(out), {a}, [pa, m, n](detail::Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j * m + i];
  });
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  if (detail::shape_numel(shape) != a.size())
    throw DimensionError("reshape: element count mismatch");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto pa = a.node();
  return Tensor::make_op(std::move(shape), std::move(out), {a}, [pa](detail::Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) detail::accumulate(pa, i, self.grad[i]);
  });
}

// Columns [c0, c1) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  if (a.rank() != 2) throw DimensionError("slice_cols: rank-2 only");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (c0 > c1 || c1 > n) throw DimensionError("slice_cols: range out of bounds");
  const std::size_t w = c1 - c0;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.values()[i * n + c0 + j];
  auto pa = a.node();
  return Tensor::make_op({m, w}, std::move(out), {a}, [pa, m, n, w, c0](detail::Node& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) pa->grad[i * n + c0 + j] += self.grad[i * w + j];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty input");
  const std::size_t m = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) throw DimensionError("concat_cols: row mismatch");
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    widths.push_back(w);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p.values()[i * w + j];
    off += w;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor::make_op(
      {m, total}, std::move(out), parts, [nodes, widths, m, total](detail::Node& self) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
          const std::size_t w = widths[pi];
          if (nodes[pi]->requires_grad) {
            nodes[pi]->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < w; ++j)
                nodes[pi]->grad[i * w + j] += self.grad[i * total + off + j];
          }
          off += w;
        }
      });
}

// Selects entry i along axis 0, dropping that axis.
inline Tensor frame_at(const Tensor& x, std::size_t i) {
  if (x.rank() < 1) throw DimensionError("frame_at: rank >= 1 required");
  if (i >= x.dim(0)) throw DimensionError("frame_at: index out of range");
  std::vector<std::size_t> shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t stride = detail::shape_numel(shape);
  std::vector<double> out(x.values().begin() + i * stride,
                          x.values().begin() + (i + 1) * stride);
  auto px = x.node();
  return Tensor::make_op(std::move(shape), std::move(out), {x}, [px, i, stride](detail::Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t j = 0; j < stride; ++j) px->grad[i * stride + j] += self.grad[j];
  });
}

// Stacks same-shape tensors along a new leading axis.
inline Tensor stack_frames(const std::vector<Tensor>& frames) {
  if (frames.empty()) throw DimensionError("stack_frames: empty input");
  const auto inner = frames[0].shape();
  const std::size_t stride = detail::shape_numel(inner);
  std::vector<double> out;
  out.reserve(stride * frames.size());
  for (const auto& f : frames) {
    if (f.shape() != inner) throw DimensionError("stack_frames: shape mismatch");
    out.insert(out.end(), f.values().begin(), f.values().end());
  }
  std::vector<std::size_t> shape{frames.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& f : frames) nodes.push_back(f.node());
  return Tensor::make_op(std::move(shape), std::move(out), frames,
                         [nodes, stride](detail::Node& self) {
                           for (std::size_t fi = 0; fi < nodes.size(); ++fi) {
                             if (!nodes[fi]->requires_grad) continue;
                             nodes[fi]->ensure_grad();
                             for (std::size_t j = 0; j < stride; ++j)
                               nodes[fi]->grad[j] += self.grad[fi * stride + j];
                           }
                         });
}

namespace detail {

// Iterates all 1-D lanes along `axis` of a row-major tensor:
// fn(base_offset, stride, len).
template <typename Fn>
void for_each_lane(const std::vector<std::size_t>& shape, std::size_t axis, Fn&& fn) {
  const std::size_t len = shape[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) fn(o * len * inner + in, inner, len);
}

}  // namespace detail

// Max-stabilized softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  detail::for_each_lane(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    double mx = xv[base];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xv[base + i * stride]);
    double sum = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(xv[base + i * stride] - mx);
      out[base + i * stride] = e;
      sum += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i * stride] /= sum;
  });
  auto px = x.node();
  auto shape = x.shape();
  std::vector<double> saved = out;
  return Tensor::make_op(shape, std::move(out), {x},
                         [px, shape, axis, s = std::move(saved)](detail::Node& self) {
                           if (!px->requires_grad) return;
                           px->ensure_grad();
                           detail::for_each_lane(
                               shape, axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < len; ++i)
                                   dot += self.grad[base + i * stride] * s[base + i * stride];
                                 for (std::size_t i = 0; i < len; ++i) {
                                   const std::size_t k = base + i * stride;
                                   px->grad[k] += s[k] * (self.grad[k] - dot);
                                 }
                               });
                         });
}

// Zero-mean unit-variance normalization over `axis` (population statistics)
// followed by the learned affine (gamma, beta indexed along that axis).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                         std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("layer_norm: axis out of range");
  const std::size_t len = x.dim(axis);
  if (len == 0) throw DimensionError("layer_norm: zero-length normalized dimension");
  if (gamma.size() != len || beta.size() != len)
    throw DimensionError("layer_norm: gamma/beta must match the normalized dimension");
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  std::vector<double> out(x.size());
  const std::size_t lanes = x.size() / len;
  std::vector<double> mu(lanes), inv(lanes);
  const auto xv = x.values();
  const auto gv = gamma.values(), bv = beta.values();
  std::size_t lane = 0;
  detail::for_each_lane(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t n) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += xv[base + i * stride];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = xv[base + i * stride] - m;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    mu[lane] = m;
    inv[lane] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = base + i * stride;
      out[k] = gv[i] * ((xv[k] - m) * is) + bv[i];
    }
    ++lane;
  });
  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  auto shape = x.shape();
  return Tensor::make_op(
      shape, std::move(out), {x, gamma, beta},
      [px, pg, pb, shape, axis, mu = std::move(mu), inv = std::move(inv)](detail::Node& self) {
        std::size_t lane = 0;
        detail::for_each_lane(shape, axis, [&](std::size_t base, std::size_t stride, std::size_t n) {
          const double m = mu[lane], is = inv[lane];
          ++lane;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = base + i * stride;
            const double xhat = (px->value[k] - m) * is;
            const double dxhat = self.grad[k] * pg->value[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            if (pg->requires_grad) {
              pg->ensure_grad();
              pg->grad[i] += self.grad[k] * xhat;
            }
            if (pb->requires_grad) {
              pb->ensure_grad();
              pb->grad[i] += self.grad[k];
            }
          }
          if (px->requires_grad) {
            px->ensure_grad();
            const double nd = static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t k = base + i * stride;
              const double xhat = (px->value[k] - m) * is;
              const double dxhat = self.grad[k] * pg->value[i];
              px->grad[k] += is * (dxhat - sum_dxhat / nd - xhat * sum_dxhat_xhat / nd);
            }
          }
        });
      });
}

// tanh-approximation GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kCubic = 0.044715;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kAlpha * (v + kCubic * v * v * v)));
  }
  auto px = x.node();
  return Tensor::make_op(x.shape(), std::move(out), {x}, [px](detail::Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = px->value[i];
      const double u = kAlpha * (v + kCubic * v * v * v);
      const double t = std::tanh(u);
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kAlpha * (1.0 + 3.0 * kCubic * v * v);
      px->grad[i] += self.grad[i] * d;
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  auto px = x.node();
  return Tensor::make_op({1}, {acc}, {x}, [px](detail::Node& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (auto& g : px->grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// Per-pixel linear map over the channel axis of [N, c_in, h, w]; equivalent to
// a matmul over flattened spatial positions (and kept accumulation-order
// identical to that formulation).
inline Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4) throw DimensionError("conv1x1: input must be [N,c,h,w]");
  if (weight.rank() != 2) throw DimensionError("conv1x1: weight must be [c_out,c_in]");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight.dim(0);
  if (weight.dim(1) != ci)
    throw DimensionError("conv1x1: weight channel dimension " + std::to_string(weight.dim(1)) +
                         " does not match input channels " + std::to_string(ci));
  if (bias.size() != co) throw DimensionError("conv1x1: bias must match output channels");
  const std::size_t hw = h * w;
  std::vector<double> out(n * co * hw);
  const auto xv = x.values(), wv = weight.values(), bv = bias.values();
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t oc = 0; oc < co; ++oc)
      for (std::size_t p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < ci; ++ic)
          acc += wv[oc * ci + ic] * xv[(ni * ci + ic) * hw + p];
        out[(ni * co + oc) * hw + p] = acc + bv[oc];
      }
  auto px = x.node(), pw = weight.node(), pb = bias.node();
  return Tensor::make_op(
      {n, co, h, w}, std::move(out), {x, weight, bias},
      [px, pw, pb, n, ci, co, hw](detail::Node& self) {
        if (px->requires_grad) {
          px->ensure_grad();
          for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t ic = 0; ic < ci; ++ic)
              for (std::size_t p = 0; p < hw; ++p) {
                double acc = 0.0;
                for (std::size_t oc = 0; oc < co; ++oc)
                  acc += self.grad[(ni * co + oc) * hw + p] * pw->value[oc * ci + ic];
                px->grad[(ni * ci + ic) * hw + p] += acc;
              }
        }
        if (pw->requires_grad) {
          pw->ensure_grad();
          for (std::size_t oc = 0; oc < co; ++oc)
            for (std::size_t ic = 0; ic < ci; ++ic) {
              double acc = 0.0;
              for (std::size_t ni = 0; ni < n; ++ni)
                for (std::size_t p = 0; p < hw; ++p)
                  acc += self.grad[(ni * co + oc) * hw + p] * px->value[(ni * ci + ic) * hw + p];
              pw->grad[oc * ci + ic] += acc;
            }
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t oc = 0; oc < co; ++oc) {
            double acc = 0.0;
            for (std::size_t ni = 0; ni < n; ++ni)
              for (std::size_t p = 0; p < hw; ++p) acc += self.grad[(ni * co + oc) * hw + p];
            pb->grad[oc] += acc;
          }
        }
      });
}

// x[L,d] + b[d] broadcast over rows.
inline Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.size() != x.dim(1))
    throw DimensionError("add_rowwise: expected [L,d] and [d]");
  const std::size_t m = x.dim(0), d = x.dim(1);
  std::vector<double> out(m * d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.values()[i * d + j] + b.values()[j];
  auto px = x.node(), pb = b.node();
  return Tensor::make_op({m, d}, std::move(out), {x, b}, [px, pb, m, d](detail::Node& self) {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < m * d; ++i) px->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) pb->grad[j] += self.grad[i * d + j];
    }
  });
}

// Per-head scaled dot-product attention over rank-2 token matrices. Heads are
// concatenated; the caller owns any output projection.
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   std::size_t heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw DimensionError("multi_head_attention: rank-2 inputs required");
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0)
    throw ConfigError("multi_head_attention: model dim " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0))
    throw DimensionError("multi_head_attention: k/v shapes inconsistent with q");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor attn = softmax(scale(matmul(qh, transpose(kh)), sc), 1);
    outs.push_back(matmul(attn, vh));
  }
  return concat_cols(outs);
}

// [d,h,w] -> [h*w, d] token view and back.
inline Tensor to_tokens(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("to_tokens: expected [d,h,w]");
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

inline Tensor from_tokens(const Tensor& t, std::size_t h, std::size_t w) {
  if (t.rank() != 2 || t.dim(0) != h * w) throw DimensionError("from_tokens: shape mismatch");
  return reshape(transpose(t), {t.dim(1), h, w});
}

// Frozen linear layer with a trainable low-rank update. lora_B starts all-zero
// so a fresh layer computes exactly the base mapping.
class LinearLoRA {
 public:
  LinearLoRA(std::size_t d_in, std::size_t d_out, std::size_t rank, double scale, Rng& rng)
      : d_in_(d_in), d_out_(d_out), rank_(rank), scale_(scale) {
    if (rank == 0 || rank > std::min(d_in, d_out))
      throw ConfigError("LinearLoRA: rank must be in [1, min(d_in, d_out)]");
    base_weight_ = Tensor::random_normal({d_out, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
    base_bias_ = Tensor::random_normal({d_out}, rng, 0.02);
    lora_a_ = Tensor::random_normal({rank, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
    lora_a_.set_requires_grad(true);
    lora_b_ = Tensor::zeros({d_out, rank});
    lora_b_.set_requires_grad(true);
  }

  Tensor forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != d_in_)
      throw DimensionError("LinearLoRA: input last dim must be " + std::to_string(d_in_));
    Tensor base = add_rowwise(matmul(x, transpose(base_weight_)), base_bias_);
    Tensor update = matmul(matmul(x, transpose(lora_a_)), transpose(lora_b_));
    return add(base, scale(update, scale_));
  }

  Tensor base_forward(const Tensor& x) const {
    return add_rowwise(matmul(x, transpose(base_weight_)), base_bias_);
  }

  Tensor& lora_a() { return lora_a_; }
  Tensor& lora_b() { return lora_b_; }
  const Tensor& base_weight() const { return base_weight_; }
  const Tensor& base_bias() const { return base_bias_; }
  std::size_t rank() const { return rank_; }
  double lora_scale() const { return scale_; }
  std::size_t trainable_param_count() const { return rank_ * d_in_ + d_out_ * rank_; }

 private:
  std::size_t d_in_, d_out_, rank_;
  double scale_;
  Tensor base_weight_, base_bias_, lora_a_, lora_b_;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_autodiff = 0.0;
  double worst_fd = 0.0;

  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Central-difference check of autodiff gradients for every entry of every
// parameter. Relative error uses denominator max(|a|, |fd|, 1e-8). `f` must
// rebuild its graph from the parameters' current values on each call.
// `order` selects the central stencil: 2 (two evaluations, O(step^2) error)
// or 4 (Richardson-extrapolated, four evaluations, O(step^4) error — needed
// when checking full networks whose curvature would otherwise drown small
// gradients in truncation error).
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  double step, int order = 2) {
  if (step <= 0.0) throw ConfigError("grad_check: step must be positive");
  if (order != 2 && order != 4) throw ConfigError("grad_check: stencil order must be 2 or 4");
  for (auto& p : params) p.zero_grad();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw EvalError("grad_check: objective is not finite");
  loss.backward();

  std::vector<std::vector<double>> autodiff;
  autodiff.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      autodiff.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      autodiff.emplace_back(p.size(), 0.0);
    }
    for (double g : autodiff.back())
      if (!std::isfinite(g)) throw EvalError("grad_check: autodiff gradient is not finite");
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].mutable_values();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      auto eval_at = [&](double offset) {
        data[i] = orig + offset;
        const double v = f().item();
        if (!std::isfinite(v))
          throw EvalError("grad_check: objective is not finite during probing");
        return v;
      };
      double fd;
      if (order == 2) {
        const double f_plus = eval_at(step);
        const double f_minus = eval_at(-step);
        fd = (f_plus - f_minus) / (2.0 * step);
      } else {
        const double f1 = eval_at(step), f_1 = eval_at(-step);
        const double f2 = eval_at(2.0 * step), f_2 = eval_at(-2.0 * step);
        fd = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * step);
      }
      data[i] = orig;
      const double ad = autodiff[pi][i];
      const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-8});
      const double rel = std::fabs(ad - fd) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pi;
        report.worst_index = i;
        report.worst_autodiff = ad;
        report.worst_fd = fd;
      }
    }
  }
  return report;
}

}  // namespace intentcap
