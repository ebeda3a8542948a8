#pragma once

// Finite-difference checks for every layer, shared by the unit tests and the
// acceptance suite. All run in double precision on small randomized shapes.

#include <functional>
#include <string>
#include <vector>

#include "ocwm/nn/grad_check.hpp"
#include "ocwm/nn/layers.hpp"

namespace ocwm::testing {

using nn::Graph;
using nn::GraphParams;
using nn::ParamStore;
using nn::Tensor;
using GD = Graph<double>;

struct LayerCheck {
  std::string name;
  // builds params + returns the loss-builder for one seed
  std::function<double(std::uint64_t seed)> run;  // returns max rel error
};

inline std::vector<LayerCheck> layer_checks() {
  std::vector<LayerCheck> checks;

  auto add = [&](const std::string& name,
                 std::function<double(std::uint64_t)> fn) {
    checks.push_back({name, std::move(fn)});
  };

  add("dense", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::Dense<double> d{"d", 4, 3};
    d.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({5, 4}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(g.relu(d(p, g.constant(x))));
    });
  });

  add("conv2d_5x5_s1", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::Conv2d<double> c{"c", 2, 3, 5, 1, 2};
    c.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({2, 6, 6}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(c(p, g.constant(x)));
    });
  });

  add("conv2d_5x5_s2", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::Conv2d<double> c{"c", 2, 3, 5, 2, 2};
    c.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({2, 8, 8}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(c(p, g.constant(x)));
    });
  });

  add("conv2d_1x1", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::Conv2d<double> c{"c", 3, 4, 1, 1, 0};
    c.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({3, 5, 5}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(g.relu(c(p, g.constant(x))));
    });
  });

  add("conv_transpose2d_5x5_s2", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::ConvTranspose2d<double> c{"c", 3, 2, 5, 2, 2, 1};
    c.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({3, 4, 4}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(c(p, g.constant(x)));
    });
  });

  add("layer_norm", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::Dense<double> d{"d", 4, 6};
    nn::LayerNorm<double> ln{"ln", 6};
    d.init(ps, rng);
    ln.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({3, 4}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(ln(p, d(p, g.constant(x))));
    });
  });

  add("softmax", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::Dense<double> d{"d", 4, 5};
    d.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({3, 4}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(g.softmax_rows(d(p, g.constant(x))));
    });
  });

  add("mha", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::MultiHeadAttention<double> mha{"a", 8, 2};
    mha.init(ps, rng);
    Tensor<double> q = Tensor<double>::randn({3, 8}, rng);
    Tensor<double> kv = Tensor<double>::randn({4, 8}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      GD::Var k = g.constant(kv);
      return g.sum_sq(mha(p, g.constant(q), k, k));
    });
  });

  add("mha_masked", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::MultiHeadAttention<double> mha{"a", 8, 2};
    mha.init(ps, rng);
    Tensor<double> q = Tensor<double>::randn({3, 8}, rng);
    std::vector<std::vector<bool>> allow = {
        {true, false, true}, {false, true, true}, {true, true, true}};
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      GD::Var x = g.constant(q);
      GD::Var m = g.constant(nn::additive_mask<double>(allow));
      return g.sum_sq(mha(p, x, x, x, m));
    });
  });

  add("gru_cell", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::GruCell<double> gru{"g", 5, 4};
    gru.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({3, 5}, rng);
    Tensor<double> h = Tensor<double>::randn({3, 4}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(gru(p, g.constant(x), g.constant(h)));
    });
  });

  add("lstm_cell", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::LstmCell<double> lstm{"l", 5, 4};
    lstm.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({3, 5}, rng);
    Tensor<double> h = Tensor<double>::randn({3, 4}, rng);
    Tensor<double> c = Tensor<double>::randn({3, 4}, rng);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      auto s = lstm(p, g.constant(x), {g.constant(h), g.constant(c)});
      return g.sum_sq(g.add(s.h, s.c));
    });
  });

  add("embedding", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::Embedding<double> emb{"e", 7, 4};
    emb.init(ps, rng);
    std::vector<int> ids = {2, 5, 2, 0};
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(g.mean_rows(emb(p, ids)));
    });
  });

  add("positional_encoding_add", [](std::uint64_t seed) {
    util::Rng rng(seed);
    ParamStore<double> ps;
    nn::Dense<double> d{"d", 6, 6};
    d.init(ps, rng);
    Tensor<double> x = Tensor<double>::randn({4, 6}, rng);
    Tensor<double> pe = nn::sinusoidal_positional_encoding<double>(4, 6);
    return nn::grad_check<double>(ps, [&](GD& g, GraphParams<double>& p) {
      return g.sum_sq(g.add(d(p, g.constant(x)), g.constant(pe)));
    });
  });

  return checks;
}

}  // namespace ocwm::testing
