#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "ocwm/nn/tensor.hpp"
#include "ocwm/util/rng.hpp"

namespace ocwm::nn {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
EMap<T> emap(Tensor<T>& t, long rows, long cols) {
  return EMap<T>(t.data(), rows, cols);
}
template <typename T>
ECMap<T> emap(const Tensor<T>& t, long rows, long cols) {
  return ECMap<T>(t.data(), rows, cols);
}

// Reverse-mode tape. Ops evaluate eagerly and push a backward closure when
// any input requires gradients; backward() replays closures in reverse
// creation order. One Graph per sample, reused across ops of that sample.
template <typename T>
class Graph {
 public:
  using Var = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void set_train_mode(bool on) { train_mode_ = on; }
  bool train_mode() const { return train_mode_; }
  void set_rng(util::Rng* rng) { rng_ = rng; }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  Var input(Tensor<T> v, bool needs_grad = false) {
    return push(std::move(v), needs_grad, nullptr);
  }
  Var constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  const Tensor<T>& value(Var v) const { return nodes_[v].val; }
  const Tensor<T>& grad(Var v) const { return nodes_[v].grad; }
  bool needs_grad(Var v) const { return nodes_[v].needs_grad; }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor<T> out = value(a).clone();
    const Tensor<T>& vb = value(b);
    for (long i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return binary(std::move(out), a, b, [this](Var a2, Var b2, Var o) {
      const Tensor<T>& g = grad_of(o);
      accum(a2, g);
      accum(b2, g);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor<T> out = value(a).clone();
    const Tensor<T>& vb = value(b);
    for (long i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return binary(std::move(out), a, b, [this](Var a2, Var b2, Var o) {
      const Tensor<T>& g = grad_of(o);
      accum(a2, g);
      accum_scaled(b2, g, T(-1));
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor<T> out = value(a).clone();
    const Tensor<T>& vb = value(b);
    for (long i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return binary(std::move(out), a, b, [this](Var a2, Var b2, Var o) {
      const Tensor<T>& g = grad_of(o);
      const Tensor<T>& va = value(a2);
      const Tensor<T>& vb2 = value(b2);
      if (nodes_[a2].needs_grad) {
        Tensor<T>& ga = grad_ref(a2);
        for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
      }
      if (nodes_[b2].needs_grad) {
        Tensor<T>& gb = grad_ref(b2);
        for (long i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }

  Var scale(Var a, T c) {
    Tensor<T> out = value(a).clone();
    for (long i = 0; i < out.numel(); ++i) out[i] *= c;
    return unary(std::move(out), a, [this, c](Var a2, Var o) {
      accum_scaled(a2, grad_of(o), c);
    });
  }

  // m: [N,D], row: [D] or [1,D]; adds row to every row of m.
  Var add_rowvec(Var m, Var row) {
    const Tensor<T>& vm = value(m);
    const Tensor<T>& vr = value(row);
    int n = vm.dim(0), d = vm.dim(1);
    if (vr.numel() != d) throw DimensionError("add_rowvec: row width mismatch");
    Tensor<T> out = vm.clone();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) out[static_cast<long>(i) * d + j] += vr[j];
    return binary(std::move(out), m, row, [this](Var m2, Var r2, Var o) {
      const Tensor<T>& g = grad_of(o);
      accum(m2, g);
      if (nodes_[r2].needs_grad) {
        Tensor<T>& gr = grad_ref(r2);
        int n2 = g.dim(0), d2 = g.dim(1);
        for (int i = 0; i < n2; ++i)
          for (int j = 0; j < d2; ++j) gr[j] += g[static_cast<long>(i) * d2 + j];
      }
    });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
      throw DimensionError("matmul: " + va.shape_str() + " x " + vb.shape_str());
    int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    Tensor<T> out({m, n});
    emap(out, m, n).noalias() = emap(va, m, k) * emap(vb, k, n);
    return binary(std::move(out), a, b, [this, m, k, n](Var a2, Var b2, Var o) {
      const Tensor<T>& g = grad_of(o);
      if (nodes_[a2].needs_grad)
        emap(grad_ref(a2), m, k).noalias() +=
            emap(g, m, n) * emap(value(b2), k, n).transpose();
      if (nodes_[b2].needs_grad)
        emap(grad_ref(b2), k, n).noalias() +=
            emap(value(a2), m, k).transpose() * emap(g, m, n);
    });
  }

  // A [m,k] x B^T where B is [n,k]; avoids materializing transposes.
  Var matmul_nt(Var a, Var b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(1))
      throw DimensionError("matmul_nt: " + va.shape_str() + " x " + vb.shape_str());
    int m = va.dim(0), k = va.dim(1), n = vb.dim(0);
    Tensor<T> out({m, n});
    emap(out, m, n).noalias() = emap(va, m, k) * emap(vb, n, k).transpose();
    return binary(std::move(out), a, b, [this, m, k, n](Var a2, Var b2, Var o) {
      const Tensor<T>& g = grad_of(o);
      if (nodes_[a2].needs_grad)
        emap(grad_ref(a2), m, k).noalias() += emap(g, m, n) * emap(value(b2), n, k);
      if (nodes_[b2].needs_grad)
        emap(grad_ref(b2), n, k).noalias() +=
            emap(g, m, n).transpose() * emap(value(a2), m, k);
    });
  }

  Var transpose(Var a) {
    const Tensor<T>& va = value(a);
    if (va.ndim() != 2) throw DimensionError("transpose: need 2D");
    int m = va.dim(0), n = va.dim(1);
    Tensor<T> out({n, m});
    emap(out, n, m).noalias() = emap(va, m, n).transpose();
    return unary(std::move(out), a, [this, m, n](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      emap(grad_ref(a2), m, n).noalias() += emap(g, n, m).transpose();
    });
  }

  // ---- activations ----

  Var relu(Var a) {
    Tensor<T> out = value(a).clone();
    for (long i = 0; i < out.numel(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
    return unary(std::move(out), a, [this](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      const Tensor<T>& va = value(a2);
      Tensor<T>& ga = grad_ref(a2);
      for (long i = 0; i < g.numel(); ++i)
        if (va[i] > T(0)) ga[i] += g[i];
    });
  }

  Var sigmoid(Var a) {
    Tensor<T> out = value(a).clone();
    for (long i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
    return unary(std::move(out), a, [this](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      const Tensor<T>& y = value(o);
      Tensor<T>& ga = grad_ref(a2);
      for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }

  Var tanh_(Var a) {
    Tensor<T> out = value(a).clone();
    for (long i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return unary(std::move(out), a, [this](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      const Tensor<T>& y = value(o);
      Tensor<T>& ga = grad_ref(a2);
      for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }

  // Softmax over the last axis of a 2D tensor. -inf logits get weight zero;
  // a row must keep at least one finite entry.
  Var softmax_rows(Var a) {
    const Tensor<T>& va = value(a);
    if (va.ndim() != 2) throw DimensionError("softmax_rows: need 2D");
    int n = va.dim(0), d = va.dim(1);
    Tensor<T> out({n, d});
    for (int i = 0; i < n; ++i) {
      const T* x = va.data() + static_cast<long>(i) * d;
      T* y = out.data() + static_cast<long>(i) * d;
      T m = x[0];
      for (int j = 1; j < d; ++j) m = std::max(m, x[j]);
      T s = T(0);
      for (int j = 0; j < d; ++j) {
        y[j] = std::exp(x[j] - m);
        s += y[j];
      }
      for (int j = 0; j < d; ++j) y[j] /= s;
    }
    return unary(std::move(out), a, [this, n, d](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      const Tensor<T>& y = value(o);
      Tensor<T>& ga = grad_ref(a2);
      for (int i = 0; i < n; ++i) {
        const T* gy = g.data() + static_cast<long>(i) * d;
        const T* yy = y.data() + static_cast<long>(i) * d;
        T* gx = ga.data() + static_cast<long>(i) * d;
        T dot = T(0);
        for (int j = 0; j < d; ++j) dot += gy[j] * yy[j];
        for (int j = 0; j < d; ++j) gx[j] += yy[j] * (gy[j] - dot);
      }
    });
  }

  // y_ij = a_ij / (sum_j a_ij + eps); the renormalization step of slot attention.
  Var l1norm_rows(Var a, T eps) {
    const Tensor<T>& va = value(a);
    if (va.ndim() != 2) throw DimensionError("l1norm_rows: need 2D");
    int n = va.dim(0), d = va.dim(1);
    Tensor<T> out({n, d});
    std::vector<T> sums(n);
    for (int i = 0; i < n; ++i) {
      const T* x = va.data() + static_cast<long>(i) * d;
      T s = T(0);
      for (int j = 0; j < d; ++j) s += x[j];
      s += eps;
      sums[i] = s;
      T* y = out.data() + static_cast<long>(i) * d;
      for (int j = 0; j < d; ++j) y[j] = x[j] / s;
    }
    return unary(std::move(out), a, [this, n, d, sums](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      const Tensor<T>& y = value(o);
      Tensor<T>& ga = grad_ref(a2);
      for (int i = 0; i < n; ++i) {
        const T* gy = g.data() + static_cast<long>(i) * d;
        const T* yy = y.data() + static_cast<long>(i) * d;
        T* gx = ga.data() + static_cast<long>(i) * d;
        T dot = T(0);
        for (int j = 0; j < d; ++j) dot += gy[j] * yy[j];
        for (int j = 0; j < d; ++j) gx[j] += (gy[j] - dot) / sums[i];
      }
    });
  }

  // Per-row layer normalization with affine parameters gamma/beta of width D.
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const Tensor<T>& vx = value(x);
    if (vx.ndim() != 2) throw DimensionError("layer_norm: need 2D");
    int n = vx.dim(0), d = vx.dim(1);
    const Tensor<T>& vg = value(gamma);
    const Tensor<T>& vb = value(beta);
    if (vg.numel() != d || vb.numel() != d)
      throw DimensionError("layer_norm: affine width mismatch");
    Tensor<T> out({n, d});
    auto xhat = std::make_shared<Tensor<T>>(std::vector<int>{n, d});
    auto rstd = std::make_shared<std::vector<T>>(n);
    for (int i = 0; i < n; ++i) {
      const T* xi = vx.data() + static_cast<long>(i) * d;
      T mu = T(0);
      for (int j = 0; j < d; ++j) mu += xi[j];
      mu /= T(d);
      T var = T(0);
      for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
      var /= T(d);
      T rs = T(1) / std::sqrt(var + eps);
      (*rstd)[i] = rs;
      T* xh = xhat->data() + static_cast<long>(i) * d;
      T* y = out.data() + static_cast<long>(i) * d;
      for (int j = 0; j < d; ++j) {
        xh[j] = (xi[j] - mu) * rs;
        y[j] = vg[j] * xh[j] + vb[j];
      }
    }
    Var o = push(std::move(out), any_grad({x, gamma, beta}), nullptr);
    if (nodes_[o].needs_grad)
      nodes_[o].back = [this, x, gamma, beta, o, n, d, xhat, rstd] {
        const Tensor<T>& g = grad_of(o);
        const Tensor<T>& vg = value(gamma);
        for (int i = 0; i < n; ++i) {
          const T* gy = g.data() + static_cast<long>(i) * d;
          const T* xh = xhat->data() + static_cast<long>(i) * d;
          if (nodes_[gamma].needs_grad) {
            Tensor<T>& gg = grad_ref(gamma);
            for (int j = 0; j < d; ++j) gg[j] += gy[j] * xh[j];
          }
          if (nodes_[beta].needs_grad) {
            Tensor<T>& gb = grad_ref(beta);
            for (int j = 0; j < d; ++j) gb[j] += gy[j];
          }
          if (nodes_[x].needs_grad) {
            T rs = (*rstd)[i];
            T sum_dxh = T(0), sum_dxh_xh = T(0);
            for (int j = 0; j < d; ++j) {
              T dxh = gy[j] * vg[j];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * xh[j];
            }
            Tensor<T>& gx = grad_ref(x);
            T* gxi = gx.data() + static_cast<long>(i) * d;
            for (int j = 0; j < d; ++j) {
              T dxh = gy[j] * vg[j];
              gxi[j] += rs * (dxh - (sum_dxh + xh[j] * sum_dxh_xh) / T(d));
            }
          }
        }
      };
    return o;
  }

  // ---- shape ops ----

  Var reshape(Var a, std::vector<int> shape) {
    Tensor<T> out = value(a).reshaped(shape);  // shares the buffer
    return unary(std::move(out), a, [this](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      Tensor<T>& ga = grad_ref(a2);
      for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  // Rows [start, start+len) of a 2D tensor (copies).
  Var narrow_rows(Var a, int start, int len) {
    const Tensor<T>& va = value(a);
    if (va.ndim() != 2) throw DimensionError("narrow_rows: need 2D");
    int d = va.dim(1);
    if (start < 0 || start + len > va.dim(0)) throw DimensionError("narrow_rows: range");
    Tensor<T> out({len, d});
    std::copy_n(va.data() + static_cast<long>(start) * d, static_cast<long>(len) * d,
                out.data());
    return unary(std::move(out), a, [this, start, len, d](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      Tensor<T>& ga = grad_ref(a2);
      T* dst = ga.data() + static_cast<long>(start) * d;
      for (long i = 0; i < static_cast<long>(len) * d; ++i) dst[i] += g[i];
    });
  }

  Var narrow_cols(Var a, int start, int len) {
    const Tensor<T>& va = value(a);
    if (va.ndim() != 2) throw DimensionError("narrow_cols: need 2D");
    int n = va.dim(0), d = va.dim(1);
    if (start < 0 || start + len > d) throw DimensionError("narrow_cols: range");
    Tensor<T> out({n, len});
    for (int i = 0; i < n; ++i)
      std::copy_n(va.data() + static_cast<long>(i) * d + start, len,
                  out.data() + static_cast<long>(i) * len);
    return unary(std::move(out), a, [this, start, len, n, d](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      Tensor<T>& ga = grad_ref(a2);
      for (int i = 0; i < n; ++i) {
        const T* src = g.data() + static_cast<long>(i) * len;
        T* dst = ga.data() + static_cast<long>(i) * d + start;
        for (int j = 0; j < len; ++j) dst[j] += src[j];
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: empty");
    int d = value(parts[0]).dim(1), n = 0;
    for (Var p : parts) {
      if (value(p).ndim() != 2 || value(p).dim(1) != d)
        throw DimensionError("concat_rows: width mismatch");
      n += value(p).dim(0);
    }
    Tensor<T> out({n, d});
    long off = 0;
    for (Var p : parts) {
      const Tensor<T>& vp = value(p);
      std::copy_n(vp.data(), vp.numel(), out.data() + off);
      off += vp.numel();
    }
    bool ng = false;
    for (Var p : parts) ng = ng || nodes_[p].needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
      std::vector<Var> ps = parts;
      nodes_[o].back = [this, ps, o] {
        const Tensor<T>& g = grad_of(o);
        long off2 = 0;
        for (Var p : ps) {
          long n2 = value(p).numel();
          if (nodes_[p].needs_grad) {
            Tensor<T>& gp = grad_ref(p);
            const T* src = g.data() + off2;
            for (long i = 0; i < n2; ++i) gp[i] += src[i];
          }
          off2 += n2;
        }
      };
    }
    return o;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: empty");
    int n = value(parts[0]).dim(0), d = 0;
    for (Var p : parts) {
      if (value(p).ndim() != 2 || value(p).dim(0) != n)
        throw DimensionError("concat_cols: height mismatch");
      d += value(p).dim(1);
    }
    Tensor<T> out({n, d});
    int coff = 0;
    for (Var p : parts) {
      const Tensor<T>& vp = value(p);
      int pd = vp.dim(1);
      for (int i = 0; i < n; ++i)
        std::copy_n(vp.data() + static_cast<long>(i) * pd, pd,
                    out.data() + static_cast<long>(i) * d + coff);
      coff += pd;
    }
    bool ng = false;
    for (Var p : parts) ng = ng || nodes_[p].needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
      std::vector<Var> ps = parts;
      nodes_[o].back = [this, ps, o, n, d] {
        const Tensor<T>& g = grad_of(o);
        int coff2 = 0;
        for (Var p : ps) {
          int pd = value(p).dim(1);
          if (nodes_[p].needs_grad) {
            Tensor<T>& gp = grad_ref(p);
            for (int i = 0; i < n; ++i) {
              const T* src = g.data() + static_cast<long>(i) * d + coff2;
              T* dst = gp.data() + static_cast<long>(i) * pd;
              for (int j = 0; j < pd; ++j) dst[j] += src[j];
            }
          }
          coff2 += pd;
        }
      };
    }
    return o;
  }

  // ---- reductions ----

  Var sum_all(Var a) {
    const Tensor<T>& va = value(a);
    T s = T(0);
    for (long i = 0; i < va.numel(); ++i) s += va[i];
    Tensor<T> out({1});
    out[0] = s;
    return unary(std::move(out), a, [this](Var a2, Var o) {
      T g = grad_of(o)[0];
      Tensor<T>& ga = grad_ref(a2);
      for (long i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
  }

  Var mean_all(Var a) { return scale(sum_all(a), T(1) / T(value(a).numel())); }

  Var sum_sq(Var a) {
    const Tensor<T>& va = value(a);
    T s = T(0);
    for (long i = 0; i < va.numel(); ++i) s += va[i] * va[i];
    Tensor<T> out({1});
    out[0] = s;
    return unary(std::move(out), a, [this](Var a2, Var o) {
      T g = grad_of(o)[0];
      const Tensor<T>& va2 = value(a2);
      Tensor<T>& ga = grad_ref(a2);
      for (long i = 0; i < ga.numel(); ++i) ga[i] += T(2) * g * va2[i];
    });
  }

  // Mean over rows of [N,D] -> [1,D].
  Var mean_rows(Var a) {
    const Tensor<T>& va = value(a);
    if (va.ndim() != 2) throw DimensionError("mean_rows: need 2D");
    int n = va.dim(0), d = va.dim(1);
    Tensor<T> out({1, d});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) out[j] += va[static_cast<long>(i) * d + j];
    for (int j = 0; j < d; ++j) out[j] /= T(n);
    return unary(std::move(out), a, [this, n, d](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      Tensor<T>& ga = grad_ref(a2);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) ga[static_cast<long>(i) * d + j] += g[j] / T(n);
    });
  }

  // ---- regularization ----

  Var dropout(Var a, T p) {
    if (!train_mode_ || p <= T(0)) return a;
    if (!rng_) throw NumericError("dropout: graph has no rng");
    const Tensor<T>& va = value(a);
    Tensor<T> out = va.clone();
    auto mask = std::make_shared<std::vector<T>>(va.numel());
    T keep = T(1) - p;
    for (long i = 0; i < va.numel(); ++i) {
      (*mask)[i] = rng_->uniform() < static_cast<double>(p) ? T(0) : T(1) / keep;
      out[i] *= (*mask)[i];
    }
    return unary(std::move(out), a, [this, mask](Var a2, Var o) {
      const Tensor<T>& g = grad_of(o);
      Tensor<T>& ga = grad_ref(a2);
      for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * (*mask)[i];
    });
  }

  // ---- embeddings ----

  Var embedding(Var table, const std::vector<int>& ids) {
    const Tensor<T>& vt = value(table);
    if (vt.ndim() != 2) throw DimensionError("embedding: table must be 2D");
    int v = vt.dim(0), e = vt.dim(1);
    Tensor<T> out({static_cast<int>(ids.size()), e});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= v) throw DimensionError("embedding: id out of range");
      std::copy_n(vt.data() + static_cast<long>(ids[i]) * e, e,
                  out.data() + static_cast<long>(i) * e);
    }
    return unary(std::move(out), table, [this, ids, e](Var t2, Var o) {
      const Tensor<T>& g = grad_of(o);
      Tensor<T>& gt = grad_ref(t2);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const T* src = g.data() + static_cast<long>(i) * e;
        T* dst = gt.data() + static_cast<long>(ids[i]) * e;
        for (int j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  }

  // ---- convolutions ----

  // x: [Cin,H,W], w: [Cout,Cin,k,k], b: [Cout]. Output [Cout,H',W'].
  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    if (vx.ndim() != 3 || vw.ndim() != 4 || vx.dim(0) != vw.dim(1))
      throw DimensionError("conv2d: input " + vx.shape_str() + " weight " + vw.shape_str());
    int cin = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
    int cout = vw.dim(0), k = vw.dim(2);
    int ho = (h + 2 * pad - k) / stride + 1;
    int wo = (wd + 2 * pad - k) / stride + 1;
    auto cols = std::make_shared<Tensor<T>>(std::vector<int>{cin * k * k, ho * wo});
    im2col(vx, *cols, k, stride, pad, ho, wo);
    Tensor<T> out({cout, ho, wo});
    emap(out, cout, static_cast<long>(ho) * wo).noalias() =
        emap(vw, cout, static_cast<long>(cin) * k * k) *
        emap(*cols, static_cast<long>(cin) * k * k, static_cast<long>(ho) * wo);
    const Tensor<T>& vb = value(b);
    for (int c = 0; c < cout; ++c) {
      T* o = out.data() + static_cast<long>(c) * ho * wo;
      for (long i = 0; i < static_cast<long>(ho) * wo; ++i) o[i] += vb[c];
    }
    Var o = push(std::move(out), any_grad({x, w, b}), nullptr);
    if (nodes_[o].needs_grad)
      nodes_[o].back = [this, x, w, b, o, cols, cin, h, wd, cout, k, stride, pad, ho, wo] {
        const Tensor<T>& g = grad_of(o);
        long kk = static_cast<long>(cin) * k * k, hw = static_cast<long>(ho) * wo;
        if (nodes_[b].needs_grad) {
          Tensor<T>& gb = grad_ref(b);
          for (int c = 0; c < cout; ++c) {
            const T* gc = g.data() + c * hw;
            T s = T(0);
            for (long i = 0; i < hw; ++i) s += gc[i];
            gb[c] += s;
          }
        }
        if (nodes_[w].needs_grad)
          emap(grad_ref(w), cout, kk).noalias() += emap(g, cout, hw) * emap(*cols, kk, hw).transpose();
        if (nodes_[x].needs_grad) {
          Tensor<T> dcols({static_cast<int>(kk), static_cast<int>(hw)});
          emap(dcols, kk, hw).noalias() =
              emap(value(w), cout, kk).transpose() * emap(g, cout, hw);
          col2im_add(dcols, grad_ref(x), k, stride, pad, ho, wo, cin, h, wd);
        }
      };
    return o;
  }

  // x: [Cin,H,W], w: [Cin,Cout,k,k]. Output [Cout,(H-1)s-2p+k+op, ...].
  Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad, int out_pad) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    if (vx.ndim() != 3 || vw.ndim() != 4 || vx.dim(0) != vw.dim(0))
      throw DimensionError("conv_transpose2d: input " + vx.shape_str() + " weight " +
                           vw.shape_str());
    int cin = vx.dim(0), h = vx.dim(1), wd = vx.dim(2);
    int cout = vw.dim(1), k = vw.dim(2);
    int ho = (h - 1) * stride - 2 * pad + k + out_pad;
    int wo = (wd - 1) * stride - 2 * pad + k + out_pad;
    long kk = static_cast<long>(cout) * k * k, hw = static_cast<long>(h) * wd;
    Tensor<T> cols({static_cast<int>(kk), static_cast<int>(hw)});
    emap(cols, kk, hw).noalias() =
        emap(vw, cin, kk).transpose() * emap(vx, cin, hw);
    Tensor<T> out({cout, ho, wo});
    col2im_add(cols, out, k, stride, pad, h, wd, cout, ho, wo);
    const Tensor<T>& vb = value(b);
    for (int c = 0; c < cout; ++c) {
      T* o = out.data() + static_cast<long>(c) * ho * wo;
      for (long i = 0; i < static_cast<long>(ho) * wo; ++i) o[i] += vb[c];
    }
    Var o = push(std::move(out), any_grad({x, w, b}), nullptr);
    if (nodes_[o].needs_grad)
      nodes_[o].back = [this, x, w, b, o, cin, h, wd, cout, k, stride, pad, ho, wo] {
        const Tensor<T>& g = grad_of(o);
        long kk2 = static_cast<long>(cout) * k * k, hw2 = static_cast<long>(h) * wd;
        if (nodes_[b].needs_grad) {
          Tensor<T>& gb = grad_ref(b);
          for (int c = 0; c < cout; ++c) {
            const T* gc = g.data() + static_cast<long>(c) * ho * wo;
            T s = T(0);
            for (long i = 0; i < static_cast<long>(ho) * wo; ++i) s += gc[i];
            gb[c] += s;
          }
        }
        // dcols[(c_out,ky,kx),(i,j)] = g[c_out, i*s-p+ky, j*s-p+kx]
        Tensor<T> dcols({static_cast<int>(kk2), static_cast<int>(hw2)});
        im2col(g, dcols, k, stride, pad, h, wd);
        if (nodes_[x].needs_grad)
          emap(grad_ref(x), cin, hw2).noalias() += emap(value(w), cin, kk2) * emap(dcols, kk2, hw2);
        if (nodes_[w].needs_grad)
          emap(grad_ref(w), cin, kk2).noalias() +=
              emap(value(x), cin, hw2) * emap(dcols, kk2, hw2).transpose();
      };
    return o;
  }

  // ---- backward ----

  void backward(Var loss) {
    if (value(loss).numel() != 1) throw DimensionError("backward: loss must be scalar");
    if (!nodes_[loss].needs_grad)
      throw NumericError("backward: loss does not depend on any trainable input");
    grad_ref(loss)[0] = T(1);
    for (int i = loss; i >= 0; --i)
      if (nodes_[i].back && !nodes_[i].grad.empty()) nodes_[i].back();
  }

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // lazily allocated
    bool needs_grad = false;
    std::function<void()> back;
  };

  Var push(Tensor<T> val, bool needs_grad, std::function<void()> back) {
    nodes_.push_back(Node{std::move(val), Tensor<T>(), needs_grad, std::move(back)});
    return static_cast<Var>(nodes_.size() - 1);
  }

  bool any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (nodes_[v].needs_grad) return true;
    return false;
  }

  // grad of node o; zero tensor if never touched (node produced no gradient).
  const Tensor<T>& grad_of(Var o) {
    if (nodes_[o].grad.empty()) nodes_[o].grad = Tensor<T>(nodes_[o].val.shape());
    return nodes_[o].grad;
  }

  Tensor<T>& grad_ref(Var v) {
    if (nodes_[v].grad.empty()) nodes_[v].grad = Tensor<T>(nodes_[v].val.shape());
    return nodes_[v].grad;
  }

  void accum(Var v, const Tensor<T>& g) {
    if (!nodes_[v].needs_grad) return;
    Tensor<T>& gv = grad_ref(v);
    for (long i = 0; i < g.numel(); ++i) gv[i] += g[i];
  }

  void accum_scaled(Var v, const Tensor<T>& g, T c) {
    if (!nodes_[v].needs_grad) return;
    Tensor<T>& gv = grad_ref(v);
    for (long i = 0; i < g.numel(); ++i) gv[i] += c * g[i];
  }

  template <typename F>
  Var unary(Tensor<T> out, Var a, F&& back) {
    Var o = push(std::move(out), nodes_[a].needs_grad, nullptr);
    if (nodes_[o].needs_grad)
      nodes_[o].back = [this, a, o, back = std::forward<F>(back)] { back(a, o); };
    return o;
  }

  template <typename F>
  Var binary(Tensor<T> out, Var a, Var b, F&& back) {
    Var o = push(std::move(out), any_grad({a, b}), nullptr);
    if (nodes_[o].needs_grad)
      nodes_[o].back = [this, a, b, o, back = std::forward<F>(back)] { back(a, b, o); };
    return o;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!nodes_[a].val.same_shape(nodes_[b].val))
      throw DimensionError(std::string(op) + ": shape mismatch " +
                           nodes_[a].val.shape_str() + " vs " + nodes_[b].val.shape_str());
  }

  // cols[(c,ky,kx),(y,x)] = img[c, y*stride-pad+ky, x*stride-pad+kx] (0 outside).
  static void im2col(const Tensor<T>& img, Tensor<T>& cols, int k, int stride, int pad,
                     int hc, int wc) {
    int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    T* dst = cols.data();
    for (int ci = 0; ci < c; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* src = img.data() + static_cast<long>(ci) * h * w;
          for (int y = 0; y < hc; ++y) {
            int iy = y * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              for (int x = 0; x < wc; ++x) *dst++ = T(0);
              continue;
            }
            for (int x = 0; x < wc; ++x) {
              int ix = x * stride - pad + kx;
              *dst++ = (ix < 0 || ix >= w) ? T(0) : src[static_cast<long>(iy) * w + ix];
            }
          }
        }
  }

  // img[c, y*stride-pad+ky, x*stride-pad+kx] += cols[(c,ky,kx),(y,x)].
  static void col2im_add(const Tensor<T>& cols, Tensor<T>& img, int k, int stride, int pad,
                         int hc, int wc, int c, int h, int w) {
    const T* src = cols.data();
    for (int ci = 0; ci < c; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* dst = img.data() + static_cast<long>(ci) * h * w;
          for (int y = 0; y < hc; ++y) {
            int iy = y * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              src += wc;
              continue;
            }
            for (int x = 0; x < wc; ++x) {
              int ix = x * stride - pad + kx;
              if (ix >= 0 && ix < w) dst[static_cast<long>(iy) * w + ix] += src[x];
            }
            src += wc;
          }
        }
  }

  std::vector<Node> nodes_;
  bool train_mode_ = false;
  util::Rng* rng_ = nullptr;
};

}  // namespace ocwm::nn
