#include "semflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

#include "semflow/errors.hpp"

namespace semflow::ad {

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->grad = Tensor(n->value.shape());
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->grad = Tensor(n->value.shape());
  n->parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (!p) throw ShapeError("make_node: empty parent Var");
    n->requires_grad = n->requires_grad || p.node()->requires_grad;
    n->parents.push_back(p.node());
  }
  // A node nothing differentiable feeds never fires its closure.
  if (n->requires_grad) n->backward = std::move(backward);
  return Var(std::move(n));
}

void axpy(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "axpy");
  double* d = dst.data();
  const double* s = src.data();
  const std::size_t n = dst.size();
  for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

void backward(const Var& root) {
  if (!root) throw ShapeError("backward: empty Var");
  if (!root.value().is_scalar()) throw ShapeError("backward: root must be a scalar");
  Node* r = root.node().get();
  if (!r->requires_grad) return;

  // Iterative DFS producing parents-before-children order; subgraphs with
  // requires_grad == false are pruned since nothing below them changes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next].get();
      ++next;
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(n->grad, n->parents);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const double* bv = b.value().data();
  double* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] += bv[i];
  return make_node(std::move(out), {a, b},
                   [](const Tensor& g, const std::vector<NodePtr>& ps) {
                     if (ps[0]->requires_grad) axpy(ps[0]->grad, g);
                     if (ps[1]->requires_grad) axpy(ps[1]->grad, g);
                   });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const double* bv = b.value().data();
  double* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] -= bv[i];
  return make_node(std::move(out), {a, b},
                   [](const Tensor& g, const std::vector<NodePtr>& ps) {
                     if (ps[0]->requires_grad) axpy(ps[0]->grad, g);
                     if (ps[1]->requires_grad) {
                       double* gb = ps[1]->grad.data();
                       const double* gv = g.data();
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= gv[i];
                     }
                   });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const double* bv = b.value().data();
  double* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] *= bv[i];
  return make_node(std::move(out), {a, b},
                   [](const Tensor& g, const std::vector<NodePtr>& ps) {
                     const double* gv = g.data();
                     const std::size_t n = g.size();
                     if (ps[0]->requires_grad) {
                       double* ga = ps[0]->grad.data();
                       const double* bv2 = ps[1]->value.data();
                       for (std::size_t i = 0; i < n; ++i) ga[i] += gv[i] * bv2[i];
                     }
                     if (ps[1]->requires_grad) {
                       double* gb = ps[1]->grad.data();
                       const double* av = ps[0]->value.data();
                       for (std::size_t i = 0; i < n; ++i) gb[i] += gv[i] * av[i];
                     }
                   });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "div");
  Tensor out = a.value();
  const double* bv = b.value().data();
  double* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] /= bv[i];
  return make_node(std::move(out), {a, b},
                   [](const Tensor& g, const std::vector<NodePtr>& ps) {
                     const double* gv = g.data();
                     const double* av = ps[0]->value.data();
                     const double* bv2 = ps[1]->value.data();
                     const std::size_t n = g.size();
                     if (ps[0]->requires_grad) {
                       double* ga = ps[0]->grad.data();
                       for (std::size_t i = 0; i < n; ++i) ga[i] += gv[i] / bv2[i];
                     }
                     if (ps[1]->requires_grad) {
                       double* gb = ps[1]->grad.data();
                       for (std::size_t i = 0; i < n; ++i)
                         gb[i] -= gv[i] * av[i] / (bv2[i] * bv2[i]);
                     }
                   });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.raw()) v *= s;
  return make_node(std::move(out), {a},
                   [s](const Tensor& g, const std::vector<NodePtr>& ps) {
                     double* ga = ps[0]->grad.data();
                     const double* gv = g.data();
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * gv[i];
                   });
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.raw()) v += c;
  return make_node(std::move(out), {a},
                   [](const Tensor& g, const std::vector<NodePtr>& ps) {
                     axpy(ps[0]->grad, g);
                   });
}

Var exp(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.raw()) v = std::exp(v);
  Tensor out_copy = out;
  return make_node(std::move(out), {a},
                   [out_copy](const Tensor& g, const std::vector<NodePtr>& ps) {
                     double* ga = ps[0]->grad.data();
                     const double* gv = g.data();
                     const double* ov = out_copy.data();
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += gv[i] * ov[i];
                   });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.raw())
    if (v < 0.0) v = 0.0;
  return make_node(std::move(out), {a},
                   [](const Tensor& g, const std::vector<NodePtr>& ps) {
                     double* ga = ps[0]->grad.data();
                     const double* gv = g.data();
                     const double* av = ps[0]->value.data();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (av[i] > 0.0) ga[i] += gv[i];
                   });
}

Var abs(const Var& a) { return add(relu(a), relu(scale(a, -1.0))); }

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: needs (m,k) x (k,n)");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += av.at2(i, t) * bv.at2(t, j);
      out.at2(i, j) = acc;
    }
  return make_node(std::move(out), {a, b},
                   [m, k, n](const Tensor& g, const std::vector<NodePtr>& ps) {
                     const Tensor& A = ps[0]->value;
                     const Tensor& B = ps[1]->value;
                     if (ps[0]->requires_grad) {
                       Tensor& ga = ps[0]->grad;
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t t = 0; t < k; ++t) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j) acc += g.at2(i, j) * B.at2(t, j);
                           ga.at2(i, t) += acc;
                         }
                     }
                     if (ps[1]->requires_grad) {
                       Tensor& gb = ps[1]->grad;
                       for (std::size_t t = 0; t < k; ++t)
                         for (std::size_t j = 0; j < n; ++j) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < m; ++i) acc += A.at2(i, t) * g.at2(i, j);
                           gb.at2(t, j) += acc;
                         }
                     }
                   });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().raw()) acc += v;
  return make_node(Tensor::scalar(acc), {a},
                   [](const Tensor& g, const std::vector<NodePtr>& ps) {
                     const double g0 = g[0];
                     for (double& v : ps[0]->grad.raw()) v += g0;
                   });
}

namespace {

// Row count over the leading axes; the rest of each row is one vector.
std::size_t lead_rows(const Tensor& t, std::size_t lead_dims, const char* what) {
  if (lead_dims > t.rank()) throw ShapeError(std::string(what) + ": lead_dims exceeds rank");
  std::size_t rows = 1;
  for (std::size_t i = 0; i < lead_dims; ++i) rows *= t.dim(i);
  return rows;
}

}  // namespace

Var l2_normalize_rows(const Var& a, std::size_t lead_dims) {
  const Tensor& av = a.value();
  const std::size_t rows = lead_rows(av, lead_dims, "l2_normalize_rows");
  const std::size_t cols = rows == 0 ? 0 : av.size() / rows;
  Tensor out = av;
  std::vector<double> norms(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = av.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += v[c] * v[c];
    const double n = std::sqrt(s);
    norms[r] = n;
    double* o = out.data() + r * cols;
    if (n == 0.0) {
      for (std::size_t c = 0; c < cols; ++c) o[c] = 0.0;
    } else {
      for (std::size_t c = 0; c < cols; ++c) o[c] /= n;
    }
  }
  Tensor out_copy = out;
  return make_node(
      std::move(out), {a},
      [rows, cols, norms, out_copy](const Tensor& g, const std::vector<NodePtr>& ps) {
        // d(v/|v|) = (g - (g.o) o) / |v|; zero rows stay zero.
        double* ga = ps[0]->grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double n = norms[r];
          if (n == 0.0) continue;
          const double* gv = g.data() + r * cols;
          const double* o = out_copy.data() + r * cols;
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += gv[c] * o[c];
          double* gr = ga + r * cols;
          for (std::size_t c = 0; c < cols; ++c) gr[c] += (gv[c] - dot * o[c]) / n;
        }
      });
}

Var softmax_rows(const Var& a, std::size_t lead_dims) {
  const Tensor& av = a.value();
  const std::size_t rows = lead_rows(av, lead_dims, "softmax_rows");
  const std::size_t cols = rows == 0 ? 0 : av.size() / rows;
  if (cols == 0) throw ShapeError("softmax_rows: empty rows");
  Tensor out = av;
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * cols;
    double m = o[0];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, o[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(o[c] - m);
      s += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= s;
  }
  Tensor out_copy = out;
  return make_node(std::move(out), {a},
                   [rows, cols, out_copy](const Tensor& g, const std::vector<NodePtr>& ps) {
                     double* ga = ps[0]->grad.data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* gv = g.data() + r * cols;
                       const double* o = out_copy.data() + r * cols;
                       double dot = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) dot += gv[c] * o[c];
                       double* gr = ga + r * cols;
                       for (std::size_t c = 0; c < cols; ++c) gr[c] += o[c] * (gv[c] - dot);
                     }
                   });
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 3) throw ShapeError("conv2d: input must be (h,w,cin)");
  if (kv.rank() != 4) throw ShapeError("conv2d: kernel must be (kh,kw,cin,cout)");
  if (kv.dim(0) % 2 == 0 || kv.dim(1) % 2 == 0)
    throw ShapeError("conv2d: kernel sides must be odd");
  if (kv.dim(2) != xv.dim(2)) throw ShapeError("conv2d: kernel cin mismatch");
  if (bv.rank() != 1 || bv.dim(0) != kv.dim(3)) throw ShapeError("conv2d: bias/cout mismatch");

  const std::size_t h = xv.dim(0), w = xv.dim(1), cin = xv.dim(2);
  const std::size_t kh = kv.dim(0), kw = kv.dim(1), cout = kv.dim(3);
  const long ry = static_cast<long>(kh) / 2, rx = static_cast<long>(kw) / 2;

  Tensor out({h, w, cout});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = bv[co];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - ry;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long sx = static_cast<long>(xx) + static_cast<long>(kx) - rx;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              acc += xv.at3(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), ci) *
                     kv.at4(ky, kx, ci, co);
          }
        }
        out.at3(y, xx, co) = acc;
      }

  return make_node(
      std::move(out), {x, kernel, bias},
      [h, w, cin, kh, kw, cout, ry, rx](const Tensor& g, const std::vector<NodePtr>& ps) {
        const Tensor& X = ps[0]->value;
        const Tensor& K = ps[1]->value;
        const bool need_x = ps[0]->requires_grad;
        const bool need_k = ps[1]->requires_grad;
        const bool need_b = ps[2]->requires_grad;
        Tensor& gx = ps[0]->grad;
        Tensor& gk = ps[1]->grad;
        Tensor& gb = ps[2]->grad;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx)
            for (std::size_t co = 0; co < cout; ++co) {
              const double go = g.at3(y, xx, co);
              if (go == 0.0) continue;
              if (need_b) gb[co] += go;
              if (!need_x && !need_k) continue;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const long sy = static_cast<long>(y) + static_cast<long>(ky) - ry;
                if (sy < 0 || sy >= static_cast<long>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const long sx = static_cast<long>(xx) + static_cast<long>(kx) - rx;
                  if (sx < 0 || sx >= static_cast<long>(w)) continue;
                  const std::size_t usy = static_cast<std::size_t>(sy);
                  const std::size_t usx = static_cast<std::size_t>(sx);
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    if (need_x) gx.at3(usy, usx, ci) += go * K.at4(ky, kx, ci, co);
                    if (need_k) gk.at4(ky, kx, ci, co) += go * X.at3(usy, usx, ci);
                  }
                }
              }
            }
      });
}

Var stop_gradient(const Var& a) { return Var::constant(a.value()); }

Var reshape(const Var& a, std::vector<std::size_t> shape) {
  Tensor out(shape);
  if (out.size() != a.value().size()) throw ShapeError("reshape: element count changed");
  out.raw() = a.value().raw();
  return make_node(std::move(out), {a},
                   [](const Tensor& g, const std::vector<NodePtr>& ps) {
                     double* ga = ps[0]->grad.data();
                     const double* gv = g.data();
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += gv[i];
                   });
}

Var slice_last(const Var& a, std::size_t index) {
  const Tensor& av = a.value();
  if (av.rank() < 1) throw ShapeError("slice_last: rank 0 input");
  const std::size_t c = av.dim(av.rank() - 1);
  if (index >= c) throw ShapeError("slice_last: channel out of range");
  std::vector<std::size_t> oshape(av.shape().begin(), av.shape().end() - 1);
  Tensor out(oshape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i * c + index];
  return make_node(std::move(out), {a},
                   [c, index](const Tensor& g, const std::vector<NodePtr>& ps) {
                     double* ga = ps[0]->grad.data();
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i * c + index] += g[i];
                   });
}

Var stack_last2(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "stack_last2");
  std::vector<std::size_t> oshape = a.value().shape();
  oshape.push_back(2);
  Tensor out(oshape);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  const std::size_t n = a.value().size();
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = av[i];
    out[2 * i + 1] = bv[i];
  }
  return make_node(std::move(out), {a, b},
                   [n](const Tensor& g, const std::vector<NodePtr>& ps) {
                     if (ps[0]->requires_grad) {
                       double* ga = ps[0]->grad.data();
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[2 * i];
                     }
                     if (ps[1]->requires_grad) {
                       double* gb = ps[1]->grad.data();
                       for (std::size_t i = 0; i < n; ++i) gb[i] += g[2 * i + 1];
                     }
                   });
}

Var diff_x(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("diff_x: input must be (h,w)");
  const std::size_t h = av.dim(0), w = av.dim(1);
  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) out.at2(y, x) = av.at2(y, x + 1) - av.at2(y, x);
  return make_node(std::move(out), {a},
                   [h, w](const Tensor& g, const std::vector<NodePtr>& ps) {
                     Tensor& ga = ps[0]->grad;
                     for (std::size_t y = 0; y < h; ++y)
                       for (std::size_t x = 0; x + 1 < w; ++x) {
                         const double gv = g.at2(y, x);
                         ga.at2(y, x + 1) += gv;
                         ga.at2(y, x) -= gv;
                       }
                   });
}

Var diff_y(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("diff_y: input must be (h,w)");
  const std::size_t h = av.dim(0), w = av.dim(1);
  Tensor out({h, w});
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out.at2(y, x) = av.at2(y + 1, x) - av.at2(y, x);
  return make_node(std::move(out), {a},
                   [h, w](const Tensor& g, const std::vector<NodePtr>& ps) {
                     Tensor& ga = ps[0]->grad;
                     for (std::size_t y = 0; y + 1 < h; ++y)
                       for (std::size_t x = 0; x < w; ++x) {
                         const double gv = g.at2(y, x);
                         ga.at2(y + 1, x) += gv;
                         ga.at2(y, x) -= gv;
                       }
                   });
}

}  // namespace semflow::ad
