#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ocwm/nn/param_store.hpp"

namespace ocwm::nn {

template <typename T>
Tensor<T> xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, util::Rng& rng) {
  T s = static_cast<T>(std::sqrt(6.0 / (fan_in + fan_out)));
  return Tensor<T>::uniform(std::move(shape), rng, -s, s);
}

// pe[pos, 2i] = sin(pos / 10000^(2i/dim)), pe[pos, 2i+1] = cos(...)
template <typename T>
Tensor<T> sinusoidal_positional_encoding(int length, int dim) {
  Tensor<T> pe({length, dim});
  for (int p = 0; p < length; ++p)
    for (int i = 0; i < dim; i += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
      pe[static_cast<long>(p) * dim + i] = static_cast<T>(std::sin(p * freq));
      if (i + 1 < dim)
        pe[static_cast<long>(p) * dim + i + 1] = static_cast<T>(std::cos(p * freq));
    }
  return pe;
}

template <typename T>
struct Dense {
  std::string name;
  int in = 0, out = 0;

  void init(ParamStore<T>& ps, util::Rng& rng) const {
    ps.create(name + ".W", xavier_uniform<T>({in, out}, in, out, rng));
    ps.create(name + ".b", Tensor<T>({out}));
  }

  typename Graph<T>::Var operator()(GraphParams<T>& p, typename Graph<T>::Var x) const {
    Graph<T>& g = p.graph();
    return g.add_rowvec(g.matmul(x, p(name + ".W")), p(name + ".b"));
  }
};

template <typename T>
struct Conv2d {
  std::string name;
  int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;

  void init(ParamStore<T>& ps, util::Rng& rng) const {
    int fan_in = cin * k * k;
    T s = static_cast<T>(std::sqrt(1.0 / fan_in));
    ps.create(name + ".W", Tensor<T>::uniform({cout, cin, k, k}, rng, -s, s));
    ps.create(name + ".b", Tensor<T>({cout}));
  }

  typename Graph<T>::Var operator()(GraphParams<T>& p, typename Graph<T>::Var x) const {
    return p.graph().conv2d(x, p(name + ".W"), p(name + ".b"), stride, pad);
  }
};

template <typename T>
struct ConvTranspose2d {
  std::string name;
  int cin = 0, cout = 0, k = 5, stride = 2, pad = 2, out_pad = 1;

  void init(ParamStore<T>& ps, util::Rng& rng) const {
    int fan_in = cin * k * k;
    T s = static_cast<T>(std::sqrt(1.0 / fan_in));
    ps.create(name + ".W", Tensor<T>::uniform({cin, cout, k, k}, rng, -s, s));
    ps.create(name + ".b", Tensor<T>({cout}));
  }

  typename Graph<T>::Var operator()(GraphParams<T>& p, typename Graph<T>::Var x) const {
    return p.graph().conv_transpose2d(x, p(name + ".W"), p(name + ".b"), stride, pad, out_pad);
  }
};

template <typename T>
struct LayerNorm {
  std::string name;
  int dim = 0;

  void init(ParamStore<T>& ps, util::Rng&) const {
    ps.create(name + ".g", Tensor<T>::full({dim}, T(1)));
    ps.create(name + ".b", Tensor<T>({dim}));
  }

  typename Graph<T>::Var operator()(GraphParams<T>& p, typename Graph<T>::Var x) const {
    return p.graph().layer_norm(x, p(name + ".g"), p(name + ".b"));
  }
};

template <typename T>
struct Embedding {
  std::string name;
  int vocab = 0, width = 0;

  void init(ParamStore<T>& ps, util::Rng& rng) const {
    ps.create(name + ".table", Tensor<T>::randn({vocab, width}, rng, T(0.02)));
  }

  typename Graph<T>::Var operator()(GraphParams<T>& p, const std::vector<int>& ids) const {
    return p.graph().embedding(p(name + ".table"), ids);
  }
};

// Boolean mask -> additive logits mask (true = attend).
template <typename T>
Tensor<T> additive_mask(const std::vector<std::vector<bool>>& allow) {
  int nq = static_cast<int>(allow.size());
  int nk = static_cast<int>(allow[0].size());
  Tensor<T> m({nq, nk});
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < nk; ++j)
      m[static_cast<long>(i) * nk + j] =
          allow[i][j] ? T(0) : -std::numeric_limits<T>::infinity();
  return m;
}

// Multi-head attention with shared projections; softmax(QK^T/sqrt(dh))V per
// head, concatenated, output-projected. Optional additive mask [Nq,Nk].
template <typename T>
struct MultiHeadAttention {
  std::string name;
  int dim = 0, heads = 1;

  void init(ParamStore<T>& ps, util::Rng& rng) const {
    for (const char* w : {"q", "k", "v", "o"}) {
      ps.create(name + "." + w + ".W", xavier_uniform<T>({dim, dim}, dim, dim, rng));
      ps.create(name + "." + w + ".b", Tensor<T>({dim}));
    }
  }

  typename Graph<T>::Var operator()(GraphParams<T>& p, typename Graph<T>::Var q,
                                    typename Graph<T>::Var k, typename Graph<T>::Var v,
                                    std::optional<typename Graph<T>::Var> mask = {}) const {
    Graph<T>& g = p.graph();
    if (dim % heads != 0) throw DimensionError("mha: dim not divisible by heads");
    int dh = dim / heads;
    auto proj = [&](const char* w, typename Graph<T>::Var x) {
      return g.add_rowvec(g.matmul(x, p(name + "." + w + ".W")), p(name + "." + w + ".b"));
    };
    typename Graph<T>::Var qp = proj("q", q), kp = proj("k", k), vp = proj("v", v);
    T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<typename Graph<T>::Var> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      typename Graph<T>::Var qh = g.narrow_cols(qp, h * dh, dh);
      typename Graph<T>::Var kh = g.narrow_cols(kp, h * dh, dh);
      typename Graph<T>::Var vh = g.narrow_cols(vp, h * dh, dh);
      typename Graph<T>::Var logits = g.scale(g.matmul_nt(qh, kh), sc);
      if (mask) logits = g.add(logits, *mask);
      outs.push_back(g.matmul(g.softmax_rows(logits), vh));
    }
    return proj("o", g.concat_cols(outs));
  }
};

// PyTorch gate conventions; weights packed (r,z,n) resp. (i,f,g,o).
template <typename T>
struct GruCell {
  std::string name;
  int in = 0, hidden = 0;

  void init(ParamStore<T>& ps, util::Rng& rng) const {
    T s = static_cast<T>(std::sqrt(1.0 / hidden));
    ps.create(name + ".Wx", Tensor<T>::uniform({in, 3 * hidden}, rng, -s, s));
    ps.create(name + ".Wh", Tensor<T>::uniform({hidden, 3 * hidden}, rng, -s, s));
    ps.create(name + ".bx", Tensor<T>({3 * hidden}));
    ps.create(name + ".bh", Tensor<T>({3 * hidden}));
  }

  // x: [N,in], h: [N,hidden] -> h': [N,hidden]
  typename Graph<T>::Var operator()(GraphParams<T>& p, typename Graph<T>::Var x,
                                    typename Graph<T>::Var h) const {
    Graph<T>& g = p.graph();
    typename Graph<T>::Var gx = g.add_rowvec(g.matmul(x, p(name + ".Wx")), p(name + ".bx"));
    typename Graph<T>::Var gh = g.add_rowvec(g.matmul(h, p(name + ".Wh")), p(name + ".bh"));
    int H = hidden;
    typename Graph<T>::Var r =
        g.sigmoid(g.add(g.narrow_cols(gx, 0, H), g.narrow_cols(gh, 0, H)));
    typename Graph<T>::Var z =
        g.sigmoid(g.add(g.narrow_cols(gx, H, H), g.narrow_cols(gh, H, H)));
    typename Graph<T>::Var n =
        g.tanh_(g.add(g.narrow_cols(gx, 2 * H, H), g.mul(r, g.narrow_cols(gh, 2 * H, H))));
    // h' = (1-z)*n + z*h = n - z*n + z*h
    return g.add(g.sub(n, g.mul(z, n)), g.mul(z, h));
  }
};

template <typename T>
struct LstmCell {
  std::string name;
  int in = 0, hidden = 0;

  void init(ParamStore<T>& ps, util::Rng& rng) const {
    T s = static_cast<T>(std::sqrt(1.0 / hidden));
    ps.create(name + ".Wx", Tensor<T>::uniform({in, 4 * hidden}, rng, -s, s));
    ps.create(name + ".Wh", Tensor<T>::uniform({hidden, 4 * hidden}, rng, -s, s));
    ps.create(name + ".b", Tensor<T>({4 * hidden}));
  }

  struct State {
    typename Graph<T>::Var h, c;
  };

  State operator()(GraphParams<T>& p, typename Graph<T>::Var x, State s) const {
    Graph<T>& g = p.graph();
    typename Graph<T>::Var gates = g.add(
        g.add_rowvec(g.matmul(x, p(name + ".Wx")), p(name + ".b")), g.matmul(s.h, p(name + ".Wh")));
    int H = hidden;
    typename Graph<T>::Var i = g.sigmoid(g.narrow_cols(gates, 0, H));
    typename Graph<T>::Var f = g.sigmoid(g.narrow_cols(gates, H, H));
    typename Graph<T>::Var gg = g.tanh_(g.narrow_cols(gates, 2 * H, H));
    typename Graph<T>::Var o = g.sigmoid(g.narrow_cols(gates, 3 * H, H));
    typename Graph<T>::Var c = g.add(g.mul(f, s.c), g.mul(i, gg));
    return State{g.mul(o, g.tanh_(c)), c};
  }
};

}  // namespace ocwm::nn
