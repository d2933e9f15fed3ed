#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "fd_check.hpp"
#include "trajcast/graph.hpp"
#include "trajcast/ops.hpp"
#include "trajcast/optim.hpp"
#include "trajcast/param_tree.hpp"
#include "trajcast/rng.hpp"

using namespace trajcast;
using trajcast::testing::fd_check_root;

namespace {
Tensor<double> randn(std::vector<int> shape, Rng& rng, double sd = 1.0) {
  return Tensor<double>::normal(std::move(shape), rng, 0.0, sd);
}
}  // namespace

TEST_CASE("matmul identity and shapes") {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto b = g.constant(Tensor<double>({2, 1}, {3, 4}));
  auto y = matmul(a, b);
  CHECK(y.val().shape == std::vector<int>{2, 1});
  CHECK(y.val().data[0] == doctest::Approx(3.0));
  CHECK(y.val().data[1] == doctest::Approx(4.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph<double> g;
  auto a = g.constant(Tensor<double>::zeros({2, 3}));
  auto b = g.constant(Tensor<double>::zeros({2, 3}));
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("[2,3]"), DimensionError);
}

TEST_CASE("gradient of sum(a*b) wrt a equals ones*b^T") {
  Rng rng(7);
  Tensor<double> at = randn({3, 2}, rng);
  Tensor<double> bt = randn({2, 4}, rng);
  at.requires_grad = true;
  Graph<double> g;
  auto a = g.leaf(at);
  auto b = g.constant(bt);
  auto y = sum(matmul(a, b));
  g.backward(y);
  // d/da sum(a b) = ones(3,4) * b^T
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 2; ++k) {
      double expect = 0.0;
      for (int j = 0; j < 4; ++j) expect += bt.at({k, j});
      CHECK(g.grad(a.id).at({i, k}) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("matmul backward matches finite differences (5x4 * 4x3)") {
  Rng rng(11);
  auto rep = fd_check_root(
      [](Graph<double>&, std::vector<Var<double>>& in) {
        return sum(mul(matmul(in[0], in[1]), in[2]));
      },
      {randn({5, 4}, rng), randn({4, 3}, rng), randn({5, 3}, rng)});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("softmax basics") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>({3}, {0, 0, 0}));
  auto y = softmax(x, 0);
  for (double v : y.val().data) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto big = g.constant(Tensor<double>({2}, {1000, 0}));
  auto yb = softmax(big, 0);
  CHECK(yb.val().data[0] == doctest::Approx(1.0));
  CHECK(yb.val().data[1] < 1e-300);
  CHECK(yb.val().all_finite());
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(3);
  auto rep = fd_check_root(
      [](Graph<double>&, std::vector<Var<double>>& in) {
        return sum(mul(softmax(in[0], 1), in[1]));
      },
      {randn({3, 5}, rng), randn({3, 5}, rng)});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("elementwise suite values") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>({1}, {0.0}));
  CHECK(sigmoid(x).val().data[0] == doctest::Approx(0.5));

  auto v = g.constant(Tensor<double>({2}, {1, 2}));
  Tensor<double> mask({2}, {0, 1});
  auto mf = masked_fill(v, mask, -1e9);
  CHECK(mf.val().data[0] == doctest::Approx(1.0));
  CHECK(mf.val().data[1] == doctest::Approx(-1e9));

  auto sp = softplus(g.constant(Tensor<double>({1}, {-1e6})));
  CHECK(sp.val().data[0] == doctest::Approx(0.0));
}

TEST_CASE("masked_fill blocks gradient at masked positions") {
  Tensor<double> xt({2}, {1, 2});
  xt.requires_grad = true;
  Graph<double> g;
  auto x = g.leaf(xt);
  Tensor<double> mask({2}, {0, 1});
  auto y = sum(masked_fill(x, mask, -5.0));
  g.backward(y);
  CHECK(g.grad(x.id).data[0] == doctest::Approx(1.0));
  CHECK(g.grad(x.id).data[1] == doctest::Approx(0.0));
}

TEST_CASE("every differentiable op matches finite differences") {
  Rng rng(17);
  using V = std::vector<Var<double>>;
  struct Case {
    const char* name;
    std::function<Var<double>(Graph<double>&, V&)> build;
    std::vector<Tensor<double>> inputs;
  };
  Rng r2(23);
  auto w = [&](std::vector<int> s) { return randn(std::move(s), r2); };
  std::vector<Case> cases;
  cases.push_back({"add_bcast", [](Graph<double>&, V& in) {
                     return sum(mul(add(in[0], in[1]), in[2]));
                   },
                   {w({2, 3, 4}), w({1, 1, 4}), w({2, 3, 4})}});
  cases.push_back({"sub", [](Graph<double>&, V& in) {
                     return sum(mul(sub(in[0], in[1]), in[2]));
                   },
                   {w({3, 4}), w({3, 4}), w({3, 4})}});
  cases.push_back({"mul_bcast", [](Graph<double>&, V& in) {
                     return sum(mul(mul(in[0], in[1]), in[2]));
                   },
                   {w({2, 3}), w({2, 1}), w({2, 3})}});
  cases.push_back({"div", [](Graph<double>&, V& in) {
                     return sum(mul(div(in[0], add_scalar(sigmoid(in[1]), 0.5)), in[2]));
                   },
                   {w({3, 3}), w({3, 3}), w({3, 3})}});
  cases.push_back({"sigmoid", [](Graph<double>&, V& in) {
                     return sum(mul(sigmoid(in[0]), in[1]));
                   },
                   {w({4, 2}), w({4, 2})}});
  cases.push_back({"tanh", [](Graph<double>&, V& in) {
                     return sum(mul(tanh_op(in[0]), in[1]));
                   },
                   {w({4}), w({4})}});
  cases.push_back({"relu", [](Graph<double>&, V& in) {
                     return sum(mul(relu(in[0]), in[1]));
                   },
                   {w({4, 4}), w({4, 4})}});
  cases.push_back({"exp", [](Graph<double>&, V& in) {
                     return sum(mul(exp_op(in[0]), in[1]));
                   },
                   {w({3}), w({3})}});
  cases.push_back({"log", [](Graph<double>&, V& in) {
                     return sum(mul(log_op(add_scalar(sigmoid(in[0]), 1.0)), in[1]));
                   },
                   {w({3}), w({3})}});
  cases.push_back({"softplus", [](Graph<double>&, V& in) {
                     return sum(mul(softplus(in[0]), in[1]));
                   },
                   {w({5}), w({5})}});
  cases.push_back({"abs", [](Graph<double>&, V& in) {
                     return sum(mul(abs_op(in[0]), in[1]));
                   },
                   {w({6}), w({6})}});
  cases.push_back({"clamp_min", [](Graph<double>&, V& in) {
                     return sum(mul(clamp_min(in[0], 0.25), in[1]));
                   },
                   {w({6}), w({6})}});
  cases.push_back({"scale_addscalar", [](Graph<double>&, V& in) {
                     return sum(mul(add_scalar(scale(in[0], 1.7), 0.3), in[1]));
                   },
                   {w({3, 2}), w({3, 2})}});
  cases.push_back({"matmul_batched", [](Graph<double>&, V& in) {
                     return sum(mul(matmul(in[0], in[1]), in[2]));
                   },
                   {w({2, 3, 4}), w({2, 4, 2}), w({2, 3, 2})}});
  cases.push_back({"matmul_bcast_w", [](Graph<double>&, V& in) {
                     return sum(mul(matmul(in[0], in[1]), in[2]));
                   },
                   {w({2, 3, 4}), w({4, 2}), w({2, 3, 2})}});
  cases.push_back({"transpose", [](Graph<double>&, V& in) {
                     return sum(mul(transpose(in[0]), in[1]));
                   },
                   {w({3, 4}), w({4, 3})}});
  cases.push_back({"permute4", [](Graph<double>&, V& in) {
                     return sum(mul(permute(in[0], {0, 2, 1, 3}), in[1]));
                   },
                   {w({2, 3, 4, 2}), w({2, 4, 3, 2})}});
  cases.push_back({"reshape", [](Graph<double>&, V& in) {
                     return sum(mul(reshape(in[0], {6, 2}), in[1]));
                   },
                   {w({3, 4}), w({6, 2})}});
  cases.push_back({"expand", [](Graph<double>&, V& in) {
                     return sum(mul(expand(in[0], {3, 4, 2}), in[1]));
                   },
                   {w({1, 4, 2}), w({3, 4, 2})}});
  cases.push_back({"concat", [](Graph<double>&, V& in) {
                     return sum(mul(concat<double>({in[0], in[1]}, 1), in[2]));
                   },
                   {w({2, 3}), w({2, 2}), w({2, 5})}});
  cases.push_back({"slice", [](Graph<double>&, V& in) {
                     return sum(mul(slice(in[0], 1, 1, 2), in[1]));
                   },
                   {w({3, 4}), w({3, 2})}});
  cases.push_back({"softmax_axis0", [](Graph<double>&, V& in) {
                     return sum(mul(softmax(in[0], 0), in[1]));
                   },
                   {w({4, 3}), w({4, 3})}});
  cases.push_back({"layer_norm", [](Graph<double>&, V& in) {
                     return sum(mul(layer_norm(in[0], in[1], in[2]), in[3]));
                   },
                   {w({3, 6}), w({6}), w({6}), w({3, 6})}});
  cases.push_back({"masked_fill", [](Graph<double>&, V& in) {
                     Tensor<double> m({2, 3}, {0, 1, 0, 1, 0, 0});
                     return sum(mul(masked_fill(in[0], m, 2.5), in[1]));
                   },
                   {w({2, 3}), w({2, 3})}});
  cases.push_back({"gather_timestep", [](Graph<double>&, V& in) {
                     return sum(mul(gather_timestep(in[0], {2, 0}), in[1]));
                   },
                   {w({2, 3, 4}), w({2, 4})}});
  cases.push_back({"mean", [](Graph<double>&, V& in) {
                     return mean(mul(in[0], in[1]));
                   },
                   {w({3, 5}), w({3, 5})}});

  for (auto& c : cases) {
    CAPTURE(c.name);
    auto rep = fd_check_root(c.build, c.inputs);
    INFO(c.name << " worst at " << rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(rep.max_rel_err < 1e-6);  // ops should be much tighter than the gate
  }
}

TEST_CASE("fan-out accumulates gradients additively (y = x + x)") {
  Tensor<double> xt({1}, {3.0});
  xt.requires_grad = true;
  Graph<double> g;
  auto x = g.leaf(xt);
  auto y = add(x, x);
  g.backward(sum(y));
  CHECK(g.grad(x.id).data[0] == doctest::Approx(2.0));
}

TEST_CASE("non-finite op output raises NumericError") {
  Graph<double> g;
  auto x = g.constant(Tensor<double>({1}, {1000.0}));
  CHECK_THROWS_AS((void)exp_op(x), NumericError);
}

TEST_CASE("dropout train-mode mask and inverted scaling") {
  Tensor<double> xt = Tensor<double>::full({10000}, 1.0);
  xt.requires_grad = true;
  Graph<double> g;
  auto x = g.leaf(xt);
  Rng rng(5);
  auto y = dropout(x, 0.1, rng);
  double mean_kept = 0.0;
  int zeros = 0;
  for (double v : y.val().data) {
    if (v == 0.0) ++zeros;
    else {
      CHECK(v == doctest::Approx(1.0 / 0.9));
      mean_kept += v;
    }
  }
  CHECK(zeros > 800);
  CHECK(zeros < 1200);
  // expectation preserved
  CHECK(mean_kept / 10000.0 == doctest::Approx(1.0).epsilon(0.02));
  g.backward(sum(y));
  // gradient mirrors the same mask
  int gz = 0;
  for (double v : g.grad(x.id).data) if (v == 0.0) ++gz;
  CHECK(gz == zeros);
}

TEST_CASE("determinism: identical seed and op sequence is bit-identical") {
  auto run = [] {
    Rng rng(99);
    Graph<float> g;
    auto a = g.constant(Tensor<float>::normal({16, 16}, rng, 0, 1));
    auto b = g.constant(Tensor<float>::normal({16, 16}, rng, 0, 1));
    return sum(mul(softmax(matmul(a, b), 1), a)).val().data[0];
  };
  const float r1 = run(), r2 = run();
  CHECK(std::memcmp(&r1, &r2, sizeof(float)) == 0);
}

TEST_CASE("adamw: zero gradient, zero decay leaves params unchanged") {
  ParamTree<double> p;
  p.insert("w", Tensor<double>({2}, {1.0, -2.0}));
  auto grads = p.zeros_like();
  AdamW<double> opt(p, {.beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0});
  opt.step(p, grads, 0.1);
  CHECK(p.at("w").data[0] == doctest::Approx(1.0));
  CHECK(p.at("w").data[1] == doctest::Approx(-2.0));
}

TEST_CASE("adamw: first-step bias-corrected ratio moves p by ~lr") {
  // hand-evaluated: m_hat = g, v_hat = g^2, update = lr * g/(|g|+eps) = lr
  ParamTree<double> p;
  p.insert("w", Tensor<double>({1}, {1.0}));
  ParamTree<double> grads;
  grads.insert("w", Tensor<double>({1}, {1.0}));
  AdamW<double> opt(p, {.beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0});
  opt.step(p, grads, 0.1);
  CHECK(p.at("w").data[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: decoupled weight decay shrinks weights when g = 0") {
  ParamTree<double> p;
  p.insert("w", Tensor<double>({1}, {2.0}));
  auto grads = p.zeros_like();
  AdamW<double> opt(p, {.beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 1e-4});
  opt.step(p, grads, 0.3);
  CHECK(p.at("w").data[0] == doctest::Approx(2.0 * (1.0 - 0.3 * 1e-4)).epsilon(1e-12));
}

TEST_CASE("adamw: missing gradient raises ConsistencyError") {
  ParamTree<double> p;
  p.insert("w", Tensor<double>({1}, {1.0}));
  ParamTree<double> grads;  // empty
  AdamW<double> opt(p);
  CHECK_THROWS_AS(opt.step(p, grads, 0.1), ConsistencyError);
}

TEST_CASE("cosine_lr endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 3e-4, 0.0) == doctest::Approx(3e-4));
  CHECK(cosine_lr(100, 100, 3e-4, 1e-5) == doctest::Approx(1e-5));
  CHECK(cosine_lr(50, 100, 3e-4, 1e-5) == doctest::Approx((3e-4 + 1e-5) / 2.0));
  // monotone nonincreasing
  double prev = 1.0;
  for (int s = 0; s <= 100; ++s) {
    double lr = cosine_lr(s, 100, 3e-4, 0.0);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
  CHECK_THROWS_AS(cosine_lr(0, 0, 3e-4, 0.0), ConfigError);
}

TEST_CASE("param tree: duplicate names rejected, iteration lexicographic") {
  ParamTree<float> p;
  p.insert("b.x", Tensor<float>::zeros({1}));
  p.insert("a.y", Tensor<float>::zeros({1}));
  CHECK_THROWS_AS(p.insert("a.y", Tensor<float>::zeros({1})), ConsistencyError);
  std::vector<std::string> names;
  for (const auto& [k, v] : p) names.push_back(k);
  CHECK(names == std::vector<std::string>{"a.y", "b.x"});
}

TEST_CASE("checkpoint round-trips bit-exactly and validates blob length") {
  namespace fs = std::filesystem;
  Rng rng(41);
  ParamTree<float> p;
  p.insert("enc.w", Tensor<float>::normal({3, 5}, rng, 0, 1));
  p.insert("dec.b", Tensor<float>::normal({7}, rng, 0, 1));
  const std::string stem = (fs::temp_directory_path() / "tc_ckpt_test").string();
  save_checkpoint(stem, p);
  auto q = load_checkpoint<float>(stem);
  REQUIRE(q.size() == 2);
  CHECK(std::memcmp(q.at("enc.w").data.data(), p.at("enc.w").data.data(),
                    sizeof(float) * 15) == 0);
  CHECK(q.at("dec.b").shape == std::vector<int>{7});

  // truncate blob -> length validation fails
  {
    std::ofstream bf(stem + ".bin", std::ios::binary | std::ios::trunc);
    bf << "xx";
  }
  CHECK_THROWS_AS((void)load_checkpoint<float>(stem), Error);

  // wrong dtype
  save_checkpoint(stem, p);
  CHECK_THROWS_AS((void)load_checkpoint<double>(stem), ConsistencyError);
  fs::remove(stem + ".manifest");
  fs::remove(stem + ".bin");
}
