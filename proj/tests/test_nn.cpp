#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "nn_checks.hpp"
#include "ocwm/nn/grad_check.hpp"
#include "ocwm/nn/layers.hpp"

using namespace ocwm;
using nn::Graph;
using nn::GraphParams;
using nn::ParamStore;
using nn::Tensor;
using GF = Graph<float>;
using GD = Graph<double>;

TEST_CASE("softmax of equal logits is uniform") {
  GF g;
  int n = 7;
  GF::Var x = g.constant(Tensor<float>::full({2, n}, 3.25f));
  GF::Var y = g.softmax_rows(x);
  for (long i = 0; i < 2 * n; ++i) CHECK(g.value(y)[i] == doctest::Approx(1.0 / n).epsilon(1e-6));
}

TEST_CASE("single-head attention over one token passes the value through projections") {
  util::Rng rng(3);
  ParamStore<float> ps;
  nn::MultiHeadAttention<float> mha{"a", 6, 1};
  mha.init(ps, rng);
  Tensor<float> tok = Tensor<float>::randn({1, 6}, rng);
  GF g;
  GraphParams<float> p(g, ps);
  GF::Var x = g.constant(tok);
  GF::Var out = mha(p, x, x, x);
  // softmax over a single key is 1, so out = Wo(Wv x + bv) + bo
  GF::Var vproj = g.add_rowvec(g.matmul(x, p("a.v.W")), p("a.v.b"));
  GF::Var expect = g.add_rowvec(g.matmul(vproj, p("a.o.W")), p("a.o.b"));
  for (int j = 0; j < 6; ++j)
    CHECK(g.value(out)[j] == doctest::Approx(g.value(expect)[j]).epsilon(1e-5));
}

TEST_CASE("conv2d 5x5 stride 2 pad 2 maps 64x64 to 32x32") {
  util::Rng rng(0);
  ParamStore<float> ps;
  nn::Conv2d<float> c{"c", 3, 4, 5, 2, 2};
  c.init(ps, rng);
  GF g;
  GraphParams<float> p(g, ps);
  GF::Var y = c(p, g.constant(Tensor<float>::randn({3, 64, 64}, rng)));
  CHECK(g.value(y).shape() == std::vector<int>{4, 32, 32});
}

TEST_CASE("shape mismatch raises a dimension error naming the operand") {
  GF g;
  GF::Var a = g.constant(Tensor<float>({2, 3}));
  GF::Var b = g.constant(Tensor<float>({3, 3}));
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("add"), DimensionError);
  CHECK_THROWS_AS(g.matmul(a, g.constant(Tensor<float>({2, 2}))), DimensionError);
}

TEST_CASE("grad_check on sum of squares is exact to rounding") {
  util::Rng rng(1);
  ParamStore<double> ps;
  ps.create("w", Tensor<double>::randn({4, 3}, rng));
  double err = nn::grad_check<double>(ps, [](GD& g, GraphParams<double>& p) {
    return g.sum_sq(p("w"));
  });
  CHECK(err < 1e-8);
}

TEST_CASE("every layer passes finite differences at 1e-6, 10 seeds") {
  for (const auto& chk : testing::layer_checks()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed)
      worst = std::max(worst, chk.run(seed));
    INFO(chk.name);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("layer_norm output is standardized before the affine map") {
  util::Rng rng(5);
  ParamStore<float> ps;
  nn::LayerNorm<float> ln{"ln", 32};
  ln.init(ps, rng);  // gamma=1, beta=0
  GF g;
  GraphParams<float> p(g, ps);
  GF::Var y = ln(p, g.constant(Tensor<float>::randn({6, 32}, rng, 3.0f)));
  const Tensor<float>& v = g.value(y);
  for (int i = 0; i < 6; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 32; ++j) mu += v.at(i, j);
    mu /= 32;
    for (int j = 0; j < 32; ++j) var += (v.at(i, j) - mu) * (v.at(i, j) - mu);
    var /= 32;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("attention output is invariant to key/value pair permutation") {
  util::Rng rng(9);
  ParamStore<float> ps;
  nn::MultiHeadAttention<float> mha{"a", 8, 2};
  mha.init(ps, rng);
  Tensor<float> q = Tensor<float>::randn({3, 8}, rng);
  Tensor<float> kv = Tensor<float>::randn({5, 8}, rng);
  std::vector<int> perm = {3, 0, 4, 1, 2};
  Tensor<float> kvp({5, 8});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j) kvp.at(i, j) = kv.at(perm[i], j);

  GF g;
  GraphParams<float> p(g, ps);
  GF::Var kv1 = g.constant(kv);
  GF::Var out1 = mha(p, g.constant(q), kv1, kv1);
  GF::Var kv2 = g.constant(kvp);
  GF::Var out2 = mha(p, g.constant(q), kv2, kv2);
  for (long i = 0; i < 24; ++i)
    CHECK(g.value(out1)[i] == doctest::Approx(g.value(out2)[i]).epsilon(1e-5));
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  long total = 1000;
  double warm = 0.1, base = 2e-4;
  CHECK(nn::cosine_schedule(100, total, warm, base) == doctest::Approx(base));
  CHECK(nn::cosine_schedule(1000, total, warm, base) == doctest::Approx(0.0));
  CHECK(nn::cosine_schedule(1500, total, warm, base) == doctest::Approx(0.0));
  // halfway through the cosine segment
  CHECK(nn::cosine_schedule(550, total, warm, base) == doctest::Approx(base / 2));
  CHECK(nn::cosine_schedule(0, total, warm, base) == doctest::Approx(0.0));
  CHECK_THROWS_AS(nn::cosine_schedule(1, 0, warm, base), DimensionError);
}

TEST_CASE("adam converges on a quadratic") {
  ParamStore<float> ps;
  util::Rng rng(2);
  ps.create("w", Tensor<float>::randn({8}, rng));
  for (int it = 0; it < 400; ++it) {
    Graph<float> g;
    GraphParams<float> p(g, ps);
    GF::Var loss = g.sum_sq(p("w"));
    g.backward(loss);
    std::map<std::string, Tensor<float>> grads;
    p.accumulate_grads(grads);
    ps.adam_step(grads, 0.05f);
  }
  for (long i = 0; i < 8; ++i) CHECK(std::abs(ps.get("w")[i]) < 1e-2);
}

TEST_CASE("checkpoint round-trips parameters and optimizer state bit-exactly") {
  util::Rng rng(11);
  ParamStore<float> ps;
  ps.create("a.W", Tensor<float>::randn({3, 4}, rng));
  ps.create("b", Tensor<float>::randn({5}, rng));
  // generate nontrivial optimizer state
  for (int it = 0; it < 3; ++it) {
    Graph<float> g;
    GraphParams<float> p(g, ps);
    GF::Var loss = g.add(g.sum_sq(p("a.W")), g.sum_sq(p("b")));
    g.backward(loss);
    std::map<std::string, Tensor<float>> grads;
    p.accumulate_grads(grads);
    ps.adam_step(grads, 1e-3f);
  }
  auto path = std::filesystem::temp_directory_path() / "ocwm_test_ckpt.bin";
  nlohmann::json meta = {{"kind", "unit-test"}};
  ps.save(path, meta);
  nlohmann::json meta2;
  ParamStore<float> ps2 = ParamStore<float>::load(path, &meta2);
  CHECK(meta2.at("kind") == "unit-test");
  CHECK(ps2.step() == ps.step());
  for (const auto& name : ps.names()) {
    const Tensor<float>& a = ps.get(name);
    const Tensor<float>& b = ps2.get(name);
    REQUIRE(a.same_shape(b));
    for (long i = 0; i < a.numel(); ++i) {
      CHECK(std::memcmp(&a[i], &b[i], sizeof(float)) == 0);
    }
  }
  // one more identical step on both stores stays bit-identical (m/v restored)
  auto step_once = [](ParamStore<float>& s) {
    Graph<float> g;
    GraphParams<float> p(g, s);
    GF::Var loss = g.add(g.sum_sq(p("a.W")), g.sum_sq(p("b")));
    g.backward(loss);
    std::map<std::string, Tensor<float>> grads;
    p.accumulate_grads(grads);
    s.adam_step(grads, 1e-3f);
  };
  step_once(ps);
  step_once(ps2);
  for (const auto& name : ps.names())
    for (long i = 0; i < ps.get(name).numel(); ++i)
      CHECK(std::memcmp(&ps.get(name)[i], &ps2.get(name)[i], sizeof(float)) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("dropout is identity in eval mode and rescales in train mode") {
  util::Rng rng(7);
  GF g;
  g.set_train_mode(false);
  GF::Var x = g.constant(Tensor<float>::full({4, 4}, 1.0f));
  CHECK(g.dropout(x, 0.5f) == x);

  GF g2;
  util::Rng drng(13);
  g2.set_train_mode(true);
  g2.set_rng(&drng);
  GF::Var x2 = g2.constant(Tensor<float>::full({1, 4000}, 1.0f));
  GF::Var y = g2.dropout(x2, 0.25f);
  double mean = 0;
  for (long i = 0; i < 4000; ++i) mean += g2.value(y)[i];
  mean /= 4000;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("reshape shares data and routes gradients") {
  ParamStore<double> ps;
  util::Rng rng(21);
  ps.create("w", Tensor<double>::randn({2, 6}, rng));
  double err = nn::grad_check<double>(ps, [](GD& g, GraphParams<double>& p) {
    GD::Var r = g.reshape(p("w"), {3, 4});
    return g.sum_sq(g.matmul(r, g.transpose(r)));
  });
  CHECK(err < 1e-7);
}
