#pragma once

#include <cmath>
#include <functional>
#include <map>

#include "ocwm/nn/param_store.hpp"

namespace ocwm::nn {

// Central finite differences against the tape's analytic gradients, maximized
// over every element of every parameter the function touched.
// fn builds a fresh forward pass and returns the scalar loss node.
// Elements where |analytic - numeric| < abs_floor are counted as matching:
// below that the difference is central-difference rounding noise, which the
// relative formula would otherwise amplify for structurally-zero gradients
// (e.g. the key bias of softmax attention).
template <typename T>
double grad_check(ParamStore<T>& store,
                  const std::function<typename Graph<T>::Var(Graph<T>&, GraphParams<T>&)>& fn,
                  T eps = T(1e-5), double abs_floor = 1e-9) {
  Graph<T> g;
  GraphParams<T> gp(g, store);
  typename Graph<T>::Var loss = fn(g, gp);
  if (!g.value(loss).all_finite()) throw NumericError("grad_check: non-finite loss");
  g.backward(loss);
  std::map<std::string, Tensor<T>> analytic;
  gp.accumulate_grads(analytic);

  auto eval = [&]() -> T {
    Graph<T> g2;
    GraphParams<T> gp2(g2, store);
    typename Graph<T>::Var l = fn(g2, gp2);
    T v = g2.value(l)[0];
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("grad_check: non-finite value");
    return v;
  };

  double max_rel = 0.0;
  for (auto& [name, ga] : analytic) {
    Tensor<T>& p = store.get(name);
    for (long i = 0; i < p.numel(); ++i) {
      T keep = p[i];
      p[i] = keep + eps;
      T fp = eval();
      p[i] = keep - eps;
      T fm = eval();
      p[i] = keep;
      double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) /
                       (2.0 * static_cast<double>(eps));
      double a = static_cast<double>(ga[i]);
      if (std::abs(a - numeric) < abs_floor) continue;
      double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace ocwm::nn
