#include "vstpose/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace vstpose::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

Var make_result(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p && p->requires_grad; });
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents = std::move(parents);
  node.backward = std::move(backward);
  return out;
}

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw std::invalid_argument(std::string(op) + ": " + what);
}

void require_defined(const Var& v, const char* op) {
  if (!v.defined()) throw std::invalid_argument(std::string(op) + ": undefined input");
}

double erf_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double erf_gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Offsets into `src` (with `src_strides` per output axis) for every element of
// an output tensor of shape `out_shape`, in row-major order.
std::vector<std::size_t> gather_offsets(const Shape& out_shape,
                                        const std::vector<std::size_t>& src_strides) {
  const std::size_t n = shape_numel(out_shape);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(out_shape.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    offsets[i] = off;
    for (std::size_t ax = out_shape.size(); ax-- > 0;) {
      ++idx[ax];
      off += src_strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= src_strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offsets;
}

void im2col(const double* img, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            double* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          for (std::size_t x = 0; x < w; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
            const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                                sx < static_cast<std::ptrdiff_t>(w);
            row[y * w + x] = inside ? img[(c * h + static_cast<std::size_t>(sy)) * w +
                                          static_cast<std::size_t>(sx)]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
                double* img) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const auto sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            img[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] +=
                row[y * w + x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (!node_) throw std::logic_error("grad of undefined Var");
  if (node_->grad.shape() != node_->value.shape()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

void Var::backward() const {
  if (!node_) throw std::logic_error("backward on undefined Var");
  if (node_->value.numel() != 1) throw std::logic_error("backward requires a scalar output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward) n->grad = Tensor(n->value.shape(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var add(const Var& a, const Var& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require(a.shape() == b.shape(), "sub", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  require_defined(a, "scale");
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return make_result(std::move(out), {a.node()}, [factor](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

Var add_broadcast(const Var& a, const Var& b) {
  require_defined(a, "add_broadcast");
  require_defined(b, "add_broadcast");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(bs.size() <= as.size(), "add_broadcast", "operand rank exceeds input rank");
  // Strides of b expressed per output axis; broadcast axes get stride 0.
  const std::size_t lead = as.size() - bs.size();
  const auto bst = strides_of(bs);
  std::vector<std::size_t> per_axis(as.size(), 0);
  for (std::size_t i = 0; i < bs.size(); ++i) {
    const std::size_t ax = lead + i;
    require(bs[i] == as[ax] || bs[i] == 1, "add_broadcast",
            shape_str(bs) + " does not broadcast to " + shape_str(as));
    per_axis[ax] = bs[i] == 1 ? 0 : bst[i];
  }
  auto offsets = std::make_shared<std::vector<std::size_t>>(gather_offsets(as, per_axis));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[(*offsets)[i]];
  return make_result(std::move(out), {a.node(), b.node()}, [offsets](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[(*offsets)[i]] += self.grad[i];
    }
  });
}

Var gelu(const Var& x) {
  require_defined(x, "gelu");
  Tensor out = x.value();
  for (auto& v : out.data()) v = erf_gelu(v);
  return make_result(std::move(out), {x.node()}, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * erf_gelu_grad(p->value[i]);
  });
}

Var reshape(const Var& x, Shape shape) {
  require_defined(x, "reshape");
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var permute(const Var& x, const std::vector<std::size_t>& perm) {
  require_defined(x, "permute");
  const Shape& in = x.shape();
  require(perm.size() == in.size(), "permute", "permutation rank mismatch");
  std::vector<bool> seen(in.size(), false);
  Shape out_shape(in.size());
  const auto in_st = strides_of(in);
  std::vector<std::size_t> src_strides(in.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    require(perm[i] < in.size() && !seen[perm[i]], "permute", "invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = in[perm[i]];
    src_strides[i] = in_st[perm[i]];
  }
  auto offsets = std::make_shared<std::vector<std::size_t>>(gather_offsets(out_shape, src_strides));
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x.value()[(*offsets)[i]];
  return make_result(std::move(out), {x.node()}, [offsets](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[(*offsets)[i]] += self.grad[i];
  });
}

Var select(const Var& x, std::size_t axis, std::size_t index) {
  require_defined(x, "select");
  const Shape& in = x.shape();
  require(axis < in.size(), "select", "axis out of range");
  require(index < in[axis], "select", "index out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t n = in[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (i != axis) out_shape.push_back(in[i]);
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().ptr() + (o * n + index) * inner, inner, out.ptr() + o * inner);
  }
  return make_result(std::move(out), {x.node()}, [outer, inner, n, index](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = g.ptr() + (o * n + index) * inner;
      const double* src = self.grad.ptr() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  });
}

Var concat_last(const Var& a, const Var& b) {
  require_defined(a, "concat_last");
  require_defined(b, "concat_last");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(!as.empty() && as.size() == bs.size() &&
              std::equal(as.begin(), as.end() - 1, bs.begin()),
          "concat_last", shape_str(as) + " vs " + shape_str(bs));
  const std::size_t ea = as.back(), eb = bs.back();
  const std::size_t rows = ea ? a.value().numel() / ea : 0;
  Shape out_shape = as;
  out_shape.back() = ea + eb;
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().ptr() + r * ea, ea, out.ptr() + r * (ea + eb));
    std::copy_n(b.value().ptr() + r * eb, eb, out.ptr() + r * (ea + eb) + ea);
  }
  return make_result(std::move(out), {a.node(), b.node()}, [rows, ea, eb](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      const std::size_t e = k == 0 ? ea : eb;
      const std::size_t off = k == 0 ? 0 : ea;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < e; ++i) g[r * e + i] += self.grad[r * (ea + eb) + off + i];
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  const Shape& xs = x.shape();
  require(w.shape().size() == 2, "linear", "weight must be rank 2");
  require(!xs.empty() && xs.back() == w.dim(0), "linear",
          "input " + shape_str(xs) + " vs weight " + shape_str(w.shape()));
  const std::size_t in = w.dim(0), out_dim = w.dim(1);
  const std::size_t m = x.value().numel() / in;
  if (bias.defined()) {
    require(bias.shape() == Shape{out_dim}, "linear", "bias shape " + shape_str(bias.shape()));
  }
  Shape out_shape = xs;
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  MapMat y(out.ptr(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(out_dim));
  ConstMapMat xm(x.value().ptr(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(in));
  ConstMapMat wm(w.value().ptr(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out_dim));
  y.noalias() = xm * wm;
  if (bias.defined()) {
    ConstMapVec bv(bias.value().ptr(), static_cast<Eigen::Index>(out_dim));
    y.rowwise() += bv.transpose();
  }
  std::vector<NodePtr> parents{x.node(), w.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result(std::move(out), std::move(parents), [m, in, out_dim](Node& self) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto I = static_cast<Eigen::Index>(in);
    const auto O = static_cast<Eigen::Index>(out_dim);
    ConstMapMat dy(self.grad.ptr(), M, O);
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    if (px->requires_grad) {
      MapMat dx(px->grad_buffer().ptr(), M, I);
      ConstMapMat wm(pw->value.ptr(), I, O);
      dx.noalias() += dy * wm.transpose();
    }
    if (pw->requires_grad) {
      MapMat dw(pw->grad_buffer().ptr(), I, O);
      ConstMapMat xm(px->value.ptr(), M, I);
      dw.noalias() += xm.transpose() * dy;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      MapVec db(self.parents[2]->grad_buffer().ptr(), O);
      db += dy.colwise().sum().transpose();
    }
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(as.size() == 3 && bs.size() == 3 && as[0] == bs[0], "bmm",
          shape_str(as) + " vs " + shape_str(bs));
  const std::size_t g = as[0], n = as[1], k = as[2];
  const std::size_t m = transpose_b ? bs[1] : bs[2];
  require((transpose_b ? bs[2] : bs[1]) == k, "bmm", shape_str(as) + " vs " + shape_str(bs));
  Tensor out(Shape{g, n, m});
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k),
             M = static_cast<Eigen::Index>(m);
  for (std::size_t i = 0; i < g; ++i) {
    ConstMapMat am(a.value().ptr() + i * n * k, N, K);
    MapMat cm(out.ptr() + i * n * m, N, M);
    if (transpose_b) {
      ConstMapMat bm(b.value().ptr() + i * m * k, M, K);
      cm.noalias() = am * bm.transpose();
    } else {
      ConstMapMat bm(b.value().ptr() + i * k * m, K, M);
      cm.noalias() = am * bm;
    }
  }
  return make_result(std::move(out), {a.node(), b.node()}, [g, N, K, M, transpose_b](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const auto nk = static_cast<std::size_t>(N * K), km = static_cast<std::size_t>(K * M),
               nm = static_cast<std::size_t>(N * M);
    for (std::size_t i = 0; i < g; ++i) {
      ConstMapMat dc(self.grad.ptr() + i * nm, N, M);
      ConstMapMat am(pa->value.ptr() + i * nk, N, K);
      if (transpose_b) {
        ConstMapMat bm(pb->value.ptr() + i * km, M, K);
        if (pa->requires_grad) MapMat(pa->grad_buffer().ptr() + i * nk, N, K).noalias() += dc * bm;
        if (pb->requires_grad) {
          MapMat(pb->grad_buffer().ptr() + i * km, M, K).noalias() += dc.transpose() * am;
        }
      } else {
        ConstMapMat bm(pb->value.ptr() + i * km, K, M);
        if (pa->requires_grad) {
          MapMat(pa->grad_buffer().ptr() + i * nk, N, K).noalias() += dc * bm.transpose();
        }
        if (pb->requires_grad) {
          MapMat(pb->grad_buffer().ptr() + i * km, K, M).noalias() += am.transpose() * dc;
        }
      }
    }
  });
}

Var softmax(const Var& x) {
  require_defined(x, "softmax");
  require(!x.shape().empty(), "softmax", "scalar input");
  const std::size_t e = x.shape().back();
  const std::size_t rows = e ? x.value().numel() / e : 0;
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * e;
    const double mx = *std::max_element(row, row + e);
    double sum = 0.0;
    for (std::size_t i = 0; i < e; ++i) {
      row[i] = std::exp(row[i] - mx);
      sum += row[i];
    }
    for (std::size_t i = 0; i < e; ++i) row[i] /= sum;
  }
  return make_result(std::move(out), {x.node()}, [rows, e](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.ptr() + r * e;
      const double* dy = self.grad.ptr() + r * e;
      double dot = 0.0;
      for (std::size_t i = 0; i < e; ++i) dot += dy[i] * y[i];
      for (std::size_t i = 0; i < e; ++i) g[r * e + i] += y[i] * (dy[i] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t e = x.shape().empty() ? 0 : x.shape().back();
  require(e > 0, "layer_norm", "empty last axis");
  require(gamma.shape() == Shape{e} && beta.shape() == Shape{e}, "layer_norm",
          "affine parameters must have shape [" + std::to_string(e) + "]");
  const std::size_t rows = x.value().numel() / e;
  auto xhat = std::make_shared<Tensor>(x.shape());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.value().ptr() + r * e;
    double mean = 0.0;
    for (std::size_t i = 0; i < e; ++i) mean += in[i];
    mean /= static_cast<double>(e);
    double var = 0.0;
    for (std::size_t i = 0; i < e; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(e);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < e; ++i) {
      const double h = (in[i] - mean) * rs;
      (*xhat)[r * e + i] = h;
      out[r * e + i] = gamma.value()[i] * h + beta.value()[i];
    }
  }
  return make_result(std::move(out), {x.node(), gamma.node(), beta.node()},
                     [rows, e, xhat, rstd](Node& self) {
                       auto& px = self.parents[0];
                       auto& pg = self.parents[1];
                       auto& pb = self.parents[2];
                       const double inv_e = 1.0 / static_cast<double>(e);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = self.grad.ptr() + r * e;
                         const double* h = xhat->ptr() + r * e;
                         if (pg->requires_grad || pb->requires_grad) {
                           for (std::size_t i = 0; i < e; ++i) {
                             if (pg->requires_grad) pg->grad_buffer()[i] += dy[i] * h[i];
                             if (pb->requires_grad) pb->grad_buffer()[i] += dy[i];
                           }
                         }
                         if (!px->requires_grad) continue;
                         double mean_d = 0.0, mean_dh = 0.0;
                         for (std::size_t i = 0; i < e; ++i) {
                           const double d = dy[i] * pg->value[i];
                           mean_d += d;
                           mean_dh += d * h[i];
                         }
                         mean_d *= inv_e;
                         mean_dh *= inv_e;
                         double* dx = px->grad_buffer().ptr() + r * e;
                         for (std::size_t i = 0; i < e; ++i) {
                           const double d = dy[i] * pg->value[i];
                           dx[i] += (*rstd)[r] * (d - mean_d - h[i] * mean_dh);
                         }
                       }
                     });
}

Var mean_middle(const Var& x) {
  require_defined(x, "mean_middle");
  require(x.shape().size() == 3, "mean_middle", "expects [B, M, E], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), m = x.dim(1), e = x.dim(2);
  require(m > 0, "mean_middle", "empty middle axis");
  Tensor out(Shape{b, e});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double* src = x.value().ptr() + (i * m + j) * e;
      for (std::size_t k = 0; k < e; ++k) out[i * e + k] += src[k];
    }
  }
  for (auto& v : out.data()) v /= static_cast<double>(m);
  return make_result(std::move(out), {x.node()}, [b, m, e](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = 0; k < e; ++k) g[(i * m + j) * e + k] += self.grad[i * e + k] * inv;
      }
    }
  });
}

Var mean_squared_error(const Var& a, const Var& b) {
  require_defined(a, "mean_squared_error");
  require_defined(b, "mean_squared_error");
  require(a.shape() == b.shape(), "mean_squared_error",
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.value().numel();
  require(n > 0, "mean_squared_error", "empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  Tensor out(Shape{}, s / static_cast<double>(n));
  return make_result(std::move(out), {a.node(), b.node()}, [n](Node& self) {
    const double coef = 2.0 * self.grad[0] / static_cast<double>(n);
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (std::size_t i = 0; i < n; ++i) {
      const double d = coef * (pa->value[i] - pb->value[i]);
      if (pa->requires_grad) pa->grad_buffer()[i] += d;
      if (pb->requires_grad) pb->grad_buffer()[i] -= d;
    }
  });
}

Var mix2(const Var& a, const Var& c, const Var& w) {
  require_defined(a, "mix2");
  require_defined(c, "mix2");
  require_defined(w, "mix2");
  require(a.shape() == c.shape() && !a.shape().empty(), "mix2", "branch shape mismatch");
  const std::size_t b = a.dim(0);
  require(w.shape() == Shape{b, 2}, "mix2", "weights must be [B, 2], got " + shape_str(w.shape()));
  const std::size_t inner = a.value().numel() / b;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const double w0 = w.value()[i * 2], w1 = w.value()[i * 2 + 1];
    for (std::size_t k = 0; k < inner; ++k) {
      out[i * inner + k] = w0 * a.value()[i * inner + k] + w1 * c.value()[i * inner + k];
    }
  }
  return make_result(std::move(out), {a.node(), c.node(), w.node()}, [b, inner](Node& self) {
    auto& pa = self.parents[0];
    auto& pc = self.parents[1];
    auto& pw = self.parents[2];
    for (std::size_t i = 0; i < b; ++i) {
      const double w0 = pw->value[i * 2], w1 = pw->value[i * 2 + 1];
      double g0 = 0.0, g1 = 0.0;
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t idx = i * inner + k;
        const double dy = self.grad[idx];
        if (pa->requires_grad) pa->grad_buffer()[idx] += w0 * dy;
        if (pc->requires_grad) pc->grad_buffer()[idx] += w1 * dy;
        g0 += dy * pa->value[idx];
        g1 += dy * pc->value[idx];
      }
      if (pw->requires_grad) {
        pw->grad_buffer()[i * 2] += g0;
        pw->grad_buffer()[i * 2 + 1] += g1;
      }
    }
  });
}

Var conv2d_same(const Var& x, const Var& w, const Var& bias) {
  require_defined(x, "conv2d_same");
  require_defined(w, "conv2d_same");
  require_defined(bias, "conv2d_same");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 4, "conv2d_same", "input must be [N, C, H, W], got " + shape_str(xs));
  require(ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3] && ws[2] % 2 == 1, "conv2d_same",
          "weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  require(bias.shape() == Shape{ws[0]}, "conv2d_same", "bias shape " + shape_str(bias.shape()));
  const std::size_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3], cout = ws[0], k = ws[2];
  const std::size_t hw = h * wd, patch = cin * k * k;
  Tensor out(Shape{n, cout, h, wd});
  std::vector<double> cols(patch * hw);
  const auto P = static_cast<Eigen::Index>(patch), HW = static_cast<Eigen::Index>(hw),
             CO = static_cast<Eigen::Index>(cout);
  ConstMapMat wm(w.value().ptr(), CO, P);
  ConstMapVec bv(bias.value().ptr(), CO);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.value().ptr() + i * cin * hw, cin, h, wd, k, cols.data());
    MapMat om(out.ptr() + i * cout * hw, CO, HW);
    om.noalias() = wm * ConstMapMat(cols.data(), P, HW);
    om.colwise() += bv;
  }
  return make_result(
      std::move(out), {x.node(), w.node(), bias.node()},
      [n, cin, h, wd, k, cout, hw, patch, P, HW, CO](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        std::vector<double> cols(patch * hw);
        std::vector<double> dcols(patch * hw);
        ConstMapMat wm(pw->value.ptr(), CO, P);
        for (std::size_t i = 0; i < n; ++i) {
          ConstMapMat dy(self.grad.ptr() + i * cout * hw, CO, HW);
          if (pb->requires_grad) MapVec(pb->grad_buffer().ptr(), CO) += dy.rowwise().sum();
          if (pw->requires_grad) {
            im2col(px->value.ptr() + i * cin * hw, cin, h, wd, k, cols.data());
            MapMat(pw->grad_buffer().ptr(), CO, P).noalias() +=
                dy * ConstMapMat(cols.data(), P, HW).transpose();
          }
          if (px->requires_grad) {
            MapMat(dcols.data(), P, HW).noalias() = wm.transpose() * dy;
            col2im_add(dcols.data(), cin, h, wd, k, px->grad_buffer().ptr() + i * cin * hw);
          }
        }
      });
}

Var max_pool2x2(const Var& x) {
  require_defined(x, "max_pool2x2");
  const Shape& xs = x.shape();
  require(xs.size() == 4, "max_pool2x2", "input must be [N, C, H, W], got " + shape_str(xs));
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const std::size_t oh = h / 2, ow = w / 2;
  require(oh > 0 && ow > 0, "max_pool2x2", "spatial size too small: " + shape_str(xs));
  Tensor out(Shape{xs[0], xs[1], oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.value().ptr() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * y + dy) * w + 2 * xx + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = src[best];
        (*argmax)[o] = p * h * w + best;
      }
    }
  }
  return make_result(std::move(out), {x.node()}, [argmax](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[(*argmax)[i]] += self.grad[i];
  });
}

}  // namespace vstpose::ad
