#include "anonact/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace anonact {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace {
std::int64_t g_seq = 0;
thread_local bool g_grad_enabled = true;
}  // namespace

Tensor& VarNode::ensure_grad() {
  if (!grad_ready) {
    grad = Tensor(value.shape());
    grad_ready = true;
  }
  return grad;
}

void VarNode::accumulate(const Tensor& g) {
  ensure_grad().add_(g);
}

Var::Var(Tensor value, bool requires_grad) {
  node_ = std::make_shared<VarNode>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->seq = ++g_seq;
}

Var make_var(std::shared_ptr<VarNode> n) {
  Var v;
  v.node_ = std::move(n);
  return v;
}

void Var::zero_grad() {
  if (node_) {
    node_->grad_ready = false;
    node_->grad = Tensor();
  }
}

void Var::set_value(const Tensor& v) {
  if (!node_->value.same_shape(v)) throw std::invalid_argument("var: set_value shape mismatch");
  node_->value = v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(VarNode&)> backward_fn) {
  auto n = std::make_shared<VarNode>();
  n->value = std::move(value);
  n->seq = ++g_seq;
  bool track = g_grad_enabled;
  if (track) {
    bool any = false;
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) any = true;
    track = any;
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return make_var(std::move(n));
}

void backward(const Var& root) {
  if (!root.defined()) throw std::logic_error("backward: undefined var");
  if (root.value().numel() != 1) throw std::logic_error("backward: root must be scalar");
  auto root_node = root.node();
  if (!root_node->requires_grad) return;

  // collect reachable grad-requiring nodes, iteratively
  std::vector<VarNode*> order;
  std::unordered_set<VarNode*> seen;
  std::vector<VarNode*> stack{root_node.get()};
  seen.insert(root_node.get());
  while (!stack.empty()) {
    VarNode* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // creation order is topological: children always have larger seq
  std::sort(order.begin(), order.end(), [](VarNode* a, VarNode* b) { return a->seq > b->seq; });

  root_node->ensure_grad().fill(1.0);
  for (VarNode* n : order) {
    if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
  }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a.value();
  out.add_(b.value());
  return make_op(std::move(out), {a, b}, [a, b](VarNode& n) {
    if (a.requires_grad()) a.node()->accumulate(n.grad);
    if (b.requires_grad()) b.node()->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a.value();
  out.add_scaled_(b.value(), -1.0);
  return make_op(std::move(out), {a, b}, [a, b](VarNode& n) {
    if (a.requires_grad()) a.node()->accumulate(n.grad);
    if (b.requires_grad()) b.node()->ensure_grad().add_scaled_(n.grad, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](VarNode& n) {
    if (a.requires_grad()) {
      Tensor g = n.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= b.value()[i];
      a.node()->accumulate(g);
    }
    if (b.requires_grad()) {
      Tensor g = n.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= a.value()[i];
      b.node()->accumulate(g);
    }
  });
}

Var div_elem(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw std::invalid_argument("div: shape mismatch");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](VarNode& n) {
    if (a.requires_grad()) {
      Tensor g = n.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] /= b.value()[i];
      a.node()->accumulate(g);
    }
    if (b.requires_grad()) {
      Tensor g = n.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        const double bv = b.value()[i];
        g[i] *= -a.value()[i] / (bv * bv);
      }
      b.node()->accumulate(g);
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_op(std::move(out), {a}, [a, s](VarNode& n) {
    a.node()->ensure_grad().add_scaled_(n.grad, s);
  });
}

Var add_const(const Var& a, double c) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  return make_op(std::move(out), {a}, [a](VarNode& n) { a.node()->accumulate(n.grad); });
}

// ---- matmul ----

Var matmul(const Var& a, const Var& b) {
  const int m = a.value().dim(0), k = a.value().dim(1);
  const int k2 = b.value().dim(0), n = b.value().dim(1);
  if (k != k2) throw std::invalid_argument("matmul: inner extents differ");
  Tensor out({m, n});
  EMap(out.data(), m, n) = ECMap(a.value().data(), m, k) * ECMap(b.value().data(), k, n);
  return make_op(std::move(out), {a, b}, [a, b, m, k, n](VarNode& nd) {
    ECMap gy(nd.grad.data(), m, n);
    if (a.requires_grad()) {
      Tensor& ga = a.node()->ensure_grad();
      EMap(ga.data(), m, k) += gy * ECMap(b.value().data(), k, n).transpose();
    }
    if (b.requires_grad()) {
      Tensor& gb = b.node()->ensure_grad();
      EMap(gb.data(), k, n) += ECMap(a.value().data(), m, k).transpose() * gy;
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const int m = a.value().dim(0), k = a.value().dim(1);
  const int n = b.value().dim(0), k2 = b.value().dim(1);
  if (k != k2) throw std::invalid_argument("matmul_nt: inner extents differ");
  Tensor out({m, n});
  EMap(out.data(), m, n) = ECMap(a.value().data(), m, k) * ECMap(b.value().data(), n, k).transpose();
  return make_op(std::move(out), {a, b}, [a, b, m, k, n](VarNode& nd) {
    ECMap gy(nd.grad.data(), m, n);
    if (a.requires_grad()) {
      Tensor& ga = a.node()->ensure_grad();
      EMap(ga.data(), m, k) += gy * ECMap(b.value().data(), n, k);
    }
    if (b.requires_grad()) {
      Tensor& gb = b.node()->ensure_grad();
      EMap(gb.data(), n, k) += gy.transpose() * ECMap(a.value().data(), m, k);
    }
  });
}

// ---- nonlinearities / reductions ----

Var relu(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  return make_op(std::move(out), {a}, [a](VarNode& n) {
    Tensor g = n.grad;
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (a.value()[i] <= 0.0) g[i] = 0.0;
    a.node()->accumulate(g);
  });
}

Var tanh_op(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  auto out_copy = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {a}, [a, out_copy](VarNode& n) {
    Tensor g = n.grad;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double t = (*out_copy)[i];
      g[i] *= 1.0 - t * t;
    }
    a.node()->accumulate(g);
  });
}

Var abs_op(const Var& a) {
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
  return make_op(std::move(out), {a}, [a](VarNode& n) {
    Tensor g = n.grad;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double v = a.value()[i];
      g[i] *= (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    }
    a.node()->accumulate(g);
  });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
  return make_op(Tensor::scalar(s), {a}, [a](VarNode& n) {
    Tensor& g = a.node()->ensure_grad();
    const double gy = n.grad[0];
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += gy;
  });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  return scale(sum_all(a), inv);
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out = a.value().reshaped(shape);
  return make_op(std::move(out), {a}, [a](VarNode& n) {
    a.node()->ensure_grad().add_(n.grad.reshaped(a.value().shape()));
  });
}

Var select_rows(const Var& a, const std::vector<int>& idx) {
  const auto& shp = a.value().shape();
  if (shp.empty()) throw std::invalid_argument("select_rows: scalar input");
  std::int64_t row = 1;
  for (std::size_t i = 1; i < shp.size(); ++i) row *= shp[i];
  std::vector<int> oshape = shp;
  oshape[0] = static_cast<int>(idx.size());
  Tensor out(oshape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double* src = a.value().data() + idx[r] * row;
    std::copy(src, src + row, out.data() + static_cast<std::int64_t>(r) * row);
  }
  auto indices = idx;
  return make_op(std::move(out), {a}, [a, indices, row](VarNode& n) {
    Tensor& g = a.node()->ensure_grad();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const double* src = n.grad.data() + static_cast<std::int64_t>(r) * row;
      double* dst = g.data() + indices[r] * row;
      for (std::int64_t i = 0; i < row; ++i) dst[i] += src[i];
    }
  });
}

Var stack_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_rows: empty input");
  const auto& s0 = xs[0].value().shape();
  std::vector<int> oshape;
  oshape.push_back(static_cast<int>(xs.size()));
  for (int d : s0) oshape.push_back(d);
  const std::int64_t row = xs[0].value().numel();
  Tensor out(oshape);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!xs[i].value().same_shape(xs[0].value())) throw std::invalid_argument("stack_rows: ragged shapes");
    std::copy(xs[i].value().data(), xs[i].value().data() + row, out.data() + static_cast<std::int64_t>(i) * row);
  }
  return make_op(std::move(out), xs, [xs, row](VarNode& n) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!xs[i].requires_grad()) continue;
      Tensor& g = xs[i].node()->ensure_grad();
      const double* src = n.grad.data() + static_cast<std::int64_t>(i) * row;
      for (std::int64_t k = 0; k < row; ++k) g[k] += src[k];
    }
  });
}

// ---- conv2d via im2col + GEMM ----

namespace {

void im2col(const Tensor& x, int n, int ci, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow,
            std::vector<double>& col) {
  // col is [ci*kh*kw, oh*ow]
  const std::int64_t cols = static_cast<std::int64_t>(oh) * ow;
  std::int64_t r = 0;
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++r) {
        double* dst = col.data() + r * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = 0.0;
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[oy * ow + ox] = (ix < 0 || ix >= w) ? 0.0 : x.at(n, c, iy, ix);
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& col, int n, int ci, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, Tensor& gx) {
  const std::int64_t cols = static_cast<std::int64_t>(oh) * ow;
  std::int64_t r = 0;
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++r) {
        const double* src = col.data() + r * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            gx.at(n, c, iy, ix) += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const auto& xs = x.value().shape();
  const auto& ws = w.value().shape();
  if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: expects NCHW input and OIHW weight");
  const int n = xs[0], ci = xs[1], h = xs[2], wd = xs[3];
  const int co = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != ci) throw std::invalid_argument("conv2d: channel mismatch");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");

  const std::int64_t krows = static_cast<std::int64_t>(ci) * kh * kw;
  const std::int64_t cols = static_cast<std::int64_t>(oh) * ow;
  Tensor out({n, co, oh, ow});
  std::vector<double> col(static_cast<std::size_t>(krows * cols));
  for (int i = 0; i < n; ++i) {
    im2col(x.value(), i, ci, h, wd, kh, kw, stride, pad, oh, ow, col);
    EMap om(out.data() + static_cast<std::int64_t>(i) * co * cols, co, cols);
    om = ECMap(w.value().data(), co, krows) * ECMap(col.data(), krows, cols);
    for (int c = 0; c < co; ++c) {
      const double bc = b.value()[c];
      double* dst = out.data() + ((static_cast<std::int64_t>(i) * co + c) * cols);
      for (std::int64_t k = 0; k < cols; ++k) dst[k] += bc;
    }
  }

  return make_op(std::move(out), {x, w, b}, [x, w, b, n, ci, h, wd, co, kh, kw, stride, pad, oh, ow, krows,
                                             cols](VarNode& nd) {
    std::vector<double> col(static_cast<std::size_t>(krows * cols));
    std::vector<double> gcol(static_cast<std::size_t>(krows * cols));
    for (int i = 0; i < n; ++i) {
      ECMap gy(nd.grad.data() + static_cast<std::int64_t>(i) * co * cols, co, cols);
      if (w.requires_grad() || x.requires_grad()) im2col(x.value(), i, ci, h, wd, kh, kw, stride, pad, oh, ow, col);
      if (w.requires_grad()) {
        Tensor& gw = w.node()->ensure_grad();
        EMap(gw.data(), co, krows) += gy * ECMap(col.data(), krows, cols).transpose();
      }
      if (x.requires_grad()) {
        EMap(gcol.data(), krows, cols) = ECMap(w.value().data(), co, krows).transpose() * gy;
        col2im_add(gcol, i, ci, h, wd, kh, kw, stride, pad, oh, ow, x.node()->ensure_grad());
      }
      if (b.requires_grad()) {
        Tensor& gb = b.node()->ensure_grad();
        for (int c = 0; c < co; ++c) {
          const double* src = nd.grad.data() + ((static_cast<std::int64_t>(i) * co + c) * cols);
          double s = 0.0;
          for (std::int64_t k = 0; k < cols; ++k) s += src[k];
          gb[c] += s;
        }
      }
    }
  });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto& xs = x.value().shape();
  if (xs.size() != 4) throw std::invalid_argument("instance_norm: expects NCHW");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::int64_t sp = static_cast<std::int64_t>(h) * w;
  Tensor out(xs);
  // cache per-(n,c) mean and inverse stddev for backward
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * c);
  auto istd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = x.value().data() + (static_cast<std::int64_t>(i) * c + ch) * sp;
      double m = 0.0;
      for (std::int64_t k = 0; k < sp; ++k) m += src[k];
      m /= static_cast<double>(sp);
      double v = 0.0;
      for (std::int64_t k = 0; k < sp; ++k) {
        const double d = src[k] - m;
        v += d * d;
      }
      v /= static_cast<double>(sp);
      const double is = 1.0 / std::sqrt(v + eps);
      (*mean)[static_cast<std::size_t>(i) * c + ch] = m;
      (*istd)[static_cast<std::size_t>(i) * c + ch] = is;
      const double g = gamma.value()[ch], bb = beta.value()[ch];
      double* dst = out.data() + (static_cast<std::int64_t>(i) * c + ch) * sp;
      for (std::int64_t k = 0; k < sp; ++k) dst[k] = (src[k] - m) * is * g + bb;
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, mean, istd, n, c, sp](VarNode& nd) {
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const double m = (*mean)[static_cast<std::size_t>(i) * c + ch];
        const double is = (*istd)[static_cast<std::size_t>(i) * c + ch];
        const double g = gamma.value()[ch];
        const double* xv = x.value().data() + (static_cast<std::int64_t>(i) * c + ch) * sp;
        const double* gy = nd.grad.data() + (static_cast<std::int64_t>(i) * c + ch) * sp;
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::int64_t k = 0; k < sp; ++k) {
          const double xhat = (xv[k] - m) * is;
          sum_gy += gy[k];
          sum_gy_xhat += gy[k] * xhat;
        }
        if (gamma.requires_grad()) gamma.node()->ensure_grad()[ch] += sum_gy_xhat;
        if (beta.requires_grad()) beta.node()->ensure_grad()[ch] += sum_gy;
        if (x.requires_grad()) {
          double* gx = x.node()->ensure_grad().data() + (static_cast<std::int64_t>(i) * c + ch) * sp;
          const double inv_sp = 1.0 / static_cast<double>(sp);
          for (std::int64_t k = 0; k < sp; ++k) {
            const double xhat = (xv[k] - m) * is;
            gx[k] += g * is * (gy[k] - sum_gy * inv_sp - xhat * sum_gy_xhat * inv_sp);
          }
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul_nt(x, w);
  const int n = y.value().dim(0), o = y.value().dim(1);
  Tensor out = y.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) out.at(i, j) += b.value()[j];
  return make_op(std::move(out), {y, b}, [y, b, n, o](VarNode& nd) {
    if (y.requires_grad()) y.node()->accumulate(nd.grad);
    if (b.requires_grad()) {
      Tensor& gb = b.node()->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) gb[j] += nd.grad.at(i, j);
    }
  });
}

Var upsample_nearest2(const Var& x) {
  const auto& xs = x.value().shape();
  if (xs.size() != 4) throw std::invalid_argument("upsample_nearest2: expects NCHW");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  Tensor out({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) out.at(i, ch, y, xx) = x.value().at(i, ch, y / 2, xx / 2);
  return make_op(std::move(out), {x}, [x, n, c, h, w](VarNode& nd) {
    Tensor& gx = x.node()->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
          for (int xx = 0; xx < 2 * w; ++xx) gx.at(i, ch, y / 2, xx / 2) += nd.grad.at(i, ch, y, xx);
  });
}

Var l2norm_rows(const Var& x) {
  const int n = x.value().dim(0), k = x.value().dim(1);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      const double v = x.value().at(i, j);
      s += v * v;
    }
    out[i] = std::sqrt(s);
  }
  auto norms = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {x}, [x, norms, n, k](VarNode& nd) {
    Tensor& gx = x.node()->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double nv = std::max((*norms)[i], 1e-30);
      const double gy = nd.grad[i];
      for (int j = 0; j < k; ++j) gx.at(i, j) += gy * x.value().at(i, j) / nv;
    }
  });
}

Var normalize_rows(const Var& x) {
  const int n = x.value().dim(0), k = x.value().dim(1);
  Tensor out(x.value().shape());
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      const double v = x.value().at(i, j);
      s += v * v;
    }
    const double nv = std::max(std::sqrt(s), 1e-30);
    (*norms)[static_cast<std::size_t>(i)] = nv;
    for (int j = 0; j < k; ++j) out.at(i, j) = x.value().at(i, j) / nv;
  }
  auto unit = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {x}, [x, norms, unit, n, k](VarNode& nd) {
    Tensor& g = x.node()->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += nd.grad.at(i, j) * (*unit).at(i, j);
      const double inv = 1.0 / (*norms)[static_cast<std::size_t>(i)];
      for (int j = 0; j < k; ++j) g.at(i, j) += inv * (nd.grad.at(i, j) - (*unit).at(i, j) * dot);
    }
  });
}

Var gather_labels(const Var& s, const std::vector<int>& labels) {
  const int n = s.value().dim(0);
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("gather_labels: label count mismatch");
  Tensor out({n});
  for (int i = 0; i < n; ++i) out[i] = s.value().at(i, labels[i]);
  auto lab = labels;
  return make_op(std::move(out), {s}, [s, lab, n](VarNode& nd) {
    Tensor& g = s.node()->ensure_grad();
    for (int i = 0; i < n; ++i) g.at(i, lab[i]) += nd.grad[i];
  });
}

Var replace_labels(const Var& s, const std::vector<int>& labels, const Var& vals) {
  const int n = s.value().dim(0);
  Tensor out = s.value();
  for (int i = 0; i < n; ++i) out.at(i, labels[i]) = vals.value()[i];
  auto lab = labels;
  return make_op(std::move(out), {s, vals}, [s, vals, lab, n](VarNode& nd) {
    if (s.requires_grad()) {
      Tensor g = nd.grad;
      for (int i = 0; i < n; ++i) g.at(i, lab[i]) = 0.0;
      s.node()->accumulate(g);
    }
    if (vals.requires_grad()) {
      Tensor& gv = vals.node()->ensure_grad();
      for (int i = 0; i < n; ++i) gv[i] += nd.grad.at(i, lab[i]);
    }
  });
}

Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels) {
  const int n = logits.value().dim(0), c = logits.value().dim(1);
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("cross_entropy: label count mismatch");
  for (int i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= c) throw std::out_of_range("cross_entropy: label out of range");
  auto probs = std::make_shared<Tensor>(softmax_rows(logits.value()));
  double loss = 0.0;
  for (int i = 0; i < n; ++i) loss -= std::log(std::max((*probs).at(i, labels[i]), 1e-300));
  loss /= static_cast<double>(n);
  auto lab = labels;
  return make_op(Tensor::scalar(loss), {logits}, [logits, probs, lab, n, c](VarNode& nd) {
    Tensor& g = logits.node()->ensure_grad();
    const double gy = nd.grad[0] / static_cast<double>(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) g.at(i, j) += gy * ((*probs).at(i, j) - (j == lab[i] ? 1.0 : 0.0));
  });
}

Var bce_logits(const Var& logits, const Tensor& targets) {
  const std::int64_t n = logits.value().numel();
  if (targets.numel() != n) throw std::invalid_argument("bce_logits: target count mismatch");
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double z = logits.value()[i];
    const double t = targets[i];
    // stable: log(1+exp(-|z|)) + max(z,0) - z*t
    loss += std::log1p(std::exp(-std::fabs(z))) + std::max(z, 0.0) - z * t;
  }
  loss /= static_cast<double>(n);
  auto tgt = std::make_shared<Tensor>(targets);
  return make_op(Tensor::scalar(loss), {logits}, [logits, tgt, n](VarNode& nd) {
    Tensor& g = logits.node()->ensure_grad();
    const double gy = nd.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double z = logits.value()[i];
      const double sig = 1.0 / (1.0 + std::exp(-z));
      g[i] += gy * (sig - (*tgt)[i]);
    }
  });
}

Var smooth_l1_sum(const Var& pred, const Tensor& target, double beta) {
  const std::int64_t n = pred.value().numel();
  if (target.numel() != n) throw std::invalid_argument("smooth_l1: target count mismatch");
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target[i];
    const double a = std::fabs(d);
    loss += (a < beta) ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  auto tgt = std::make_shared<Tensor>(target);
  return make_op(Tensor::scalar(loss), {pred}, [pred, tgt, beta, n](VarNode& nd) {
    Tensor& g = pred.node()->ensure_grad();
    const double gy = nd.grad[0];
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = pred.value()[i] - (*tgt)[i];
      const double a = std::fabs(d);
      g[i] += gy * ((a < beta) ? d / beta : (d > 0.0 ? 1.0 : -1.0));
    }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (int i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - mx);
    for (int j = 0; j < c; ++j) out.at(i, j) = std::exp(logits.at(i, j) - mx) / z;
  }
  return out;
}

}  // namespace anonact
