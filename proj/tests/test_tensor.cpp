#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mint/core/ops.hpp"
#include "mint/core/tensor.hpp"
#include "testutil.hpp"

using namespace mint;
using testutil::dvec;

namespace {

struct TapeGuard {
  TapeGuard() { GradTape::active().reset(); }
  ~TapeGuard() { GradTape::active().reset(); }
};

Tensor from_vec(Shape shape, const std::vector<float>& v, bool rg = false) {
  return Tensor(std::move(shape), v, rg);
}

}  // namespace

TEST_CASE("matmul basics") {
  TapeGuard guard;

  SECTION("identity times arbitrary 3x3") {
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng = make_rng(7, RngStream::kAnalysis);
    Tensor m = Tensor::randn({3, 3}, rng);
    Tensor out = matmul(eye, m);
    for (int i = 0; i < 9; ++i) REQUIRE(out.data()[i] == m.data()[i]);
  }

  SECTION("hand arithmetic 2x2 times 2x1") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {0, 1});
    Tensor out = matmul(a, b);
    REQUIRE(out.at(0, 0) == 2.0f);
    REQUIRE(out.at(1, 0) == 4.0f);
  }

  SECTION("shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    REQUIRE_THROWS_WITH(matmul(a, b),
                        Catch::Matchers::ContainsSubstring("[2x3]") &&
                            Catch::Matchers::ContainsSubstring("[4x2]"));
  }

  SECTION("grad of sum(a*b) wrt a equals ones*b^T") {
    Rng rng = make_rng(11, RngStream::kAnalysis);
    auto av = testutil::normal_vec(rng, 5 * 7);
    auto bv = testutil::normal_vec(rng, 7 * 3);
    Tensor a = from_vec({5, 7}, av, true);
    Tensor b = from_vec({7, 3}, bv);
    backward(sum(matmul(a, b)));

    // closed form: d sum(AB) / dA = 1 * B^T
    for (int i = 0; i < 5; ++i)
      for (int p = 0; p < 7; ++p) {
        double expect = 0.0;
        for (int j = 0; j < 3; ++j) expect += bv[static_cast<std::size_t>(p) * 3 + j];
        REQUIRE_THAT(a.grad()[static_cast<std::size_t>(i) * 7 + p],
                     Catch::Matchers::WithinRel(expect, 1e-4));
      }

    auto fd = testutil::fd_gradient(
        [&](const dvec& x) {
          dvec prod = testutil::ref::matmul(x, 5, 7, testutil::to_double(bv), 3);
          double s = 0.0;
          for (double v : prod) s += v;
          return s;
        },
        testutil::to_double(av));
    REQUIRE(testutil::max_rel_err(a.grad(), fd) <= 1e-4);
  }
}

TEST_CASE("finite differences validate every primitive over 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TapeGuard guard;
    Rng rng = make_rng(seed, RngStream::kAnalysis);
    CAPTURE(seed);

    SECTION("matmul both operands, seed " + std::to_string(seed)) {
      auto av = testutil::normal_vec(rng, 5 * 7);
      auto bv = testutil::normal_vec(rng, 7 * 3);
      auto wv = testutil::normal_vec(rng, 5 * 3);
      Tensor a = from_vec({5, 7}, av, true);
      Tensor b = from_vec({7, 3}, bv, true);
      Tensor w = from_vec({5, 3}, wv);
      backward(sum(mul(matmul(a, b), w)));

      auto loss_a = [&](const dvec& x) {
        dvec prod = testutil::ref::matmul(x, 5, 7, testutil::to_double(bv), 3);
        double s = 0.0;
        for (std::size_t i = 0; i < prod.size(); ++i) s += prod[i] * wv[i];
        return s;
      };
      auto loss_b = [&](const dvec& x) {
        dvec prod = testutil::ref::matmul(testutil::to_double(av), 5, 7, x, 3);
        double s = 0.0;
        for (std::size_t i = 0; i < prod.size(); ++i) s += prod[i] * wv[i];
        return s;
      };
      REQUIRE(testutil::max_rel_err(a.grad(), testutil::fd_gradient(loss_a, testutil::to_double(av))) <= 1e-4);
      REQUIRE(testutil::max_rel_err(b.grad(), testutil::fd_gradient(loss_b, testutil::to_double(bv))) <= 1e-4);
    }

    SECTION("elementwise add sub mul scale, seed " + std::to_string(seed)) {
      auto av = testutil::normal_vec(rng, 4 * 6);
      auto bv = testutil::normal_vec(rng, 4 * 6);
      auto wv = testutil::normal_vec(rng, 4 * 6);
      Tensor a = from_vec({4, 6}, av, true);
      Tensor b = from_vec({4, 6}, bv, true);
      Tensor w = from_vec({4, 6}, wv);
      backward(sum(mul(scale(add(mul(a, b), sub(a, b)), 0.7f), w)));

      auto loss = [&](const dvec& x, bool wrt_a) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          double ai = wrt_a ? x[i] : av[i];
          double bi = wrt_a ? bv[i] : x[i];
          s += 0.7 * (ai * bi + ai - bi) * wv[i];
        }
        return s;
      };
      auto fd_a = testutil::fd_gradient([&](const dvec& x) { return loss(x, true); },
                                        testutil::to_double(av));
      auto fd_b = testutil::fd_gradient([&](const dvec& x) { return loss(x, false); },
                                        testutil::to_double(bv));
      REQUIRE(testutil::max_rel_err(a.grad(), fd_a) <= 1e-4);
      REQUIRE(testutil::max_rel_err(b.grad(), fd_b) <= 1e-4);
    }

    SECTION("add_bias and transpose, seed " + std::to_string(seed)) {
      auto xv = testutil::normal_vec(rng, 4 * 6);
      auto bv = testutil::normal_vec(rng, 6);
      auto wv = testutil::normal_vec(rng, 6 * 4);
      Tensor x = from_vec({4, 6}, xv, true);
      Tensor b = from_vec({6}, bv, true);
      Tensor w = from_vec({6, 4}, wv);
      backward(sum(mul(transpose(add_bias(x, b)), w)));

      auto loss = [&](const dvec& xin, const dvec& bin) {
        double s = 0.0;
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 6; ++j)
            s += (xin[static_cast<std::size_t>(i) * 6 + j] + bin[static_cast<std::size_t>(j)]) *
                 wv[static_cast<std::size_t>(j) * 4 + i];
        return s;
      };
      auto fd_x = testutil::fd_gradient(
          [&](const dvec& v) { return loss(v, testutil::to_double(bv)); }, testutil::to_double(xv));
      auto fd_b = testutil::fd_gradient(
          [&](const dvec& v) { return loss(testutil::to_double(xv), v); }, testutil::to_double(bv));
      REQUIRE(testutil::max_rel_err(x.grad(), fd_x) <= 1e-4);
      REQUIRE(testutil::max_rel_err(b.grad(), fd_b) <= 1e-4);
    }

    SECTION("relu and gelu, seed " + std::to_string(seed)) {
      auto xv = testutil::normal_vec(rng, 4 * 6);
      testutil::nudge_from_zero(xv);
      auto wv = testutil::normal_vec(rng, 4 * 6);
      Tensor xr = from_vec({4, 6}, xv, true);
      Tensor xg = from_vec({4, 6}, xv, true);
      Tensor w = from_vec({4, 6}, wv);
      backward(sum(mul(relu(xr), w)));
      GradTape::active().reset();
      backward(sum(mul(gelu(xg), w)));

      auto fd_r = testutil::fd_gradient(
          [&](const dvec& v) {
            double s = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) s += testutil::ref::relu(v[i]) * wv[i];
            return s;
          },
          testutil::to_double(xv));
      auto fd_g = testutil::fd_gradient(
          [&](const dvec& v) {
            double s = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) s += testutil::ref::gelu(v[i]) * wv[i];
            return s;
          },
          testutil::to_double(xv));
      REQUIRE(testutil::max_rel_err(xr.grad(), fd_r) <= 1e-4);
      REQUIRE(testutil::max_rel_err(xg.grad(), fd_g) <= 1e-4);
    }

    SECTION("softmax rows, seed " + std::to_string(seed)) {
      auto xv = testutil::normal_vec(rng, 5 * 9);
      auto wv = testutil::normal_vec(rng, 5 * 9);
      Tensor x = from_vec({5, 9}, xv, true);
      Tensor w = from_vec({5, 9}, wv);
      backward(sum(mul(softmax(x, 1), w)));

      auto fd = testutil::fd_gradient(
          [&](const dvec& v) {
            dvec p = testutil::ref::softmax_rows(v, 5, 9);
            double s = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * wv[i];
            return s;
          },
          testutil::to_double(xv));
      REQUIRE(testutil::max_rel_err(x.grad(), fd) <= 1e-4);
    }

    SECTION("cross entropy, seed " + std::to_string(seed)) {
      auto xv = testutil::normal_vec(rng, 6 * 11);
      std::vector<int> targets(6);
      for (auto& t : targets) t = static_cast<int>(rng.below(11));
      Tensor x = from_vec({6, 11}, xv, true);
      backward(cross_entropy(x, targets));

      auto fd = testutil::fd_gradient(
          [&](const dvec& v) { return testutil::ref::cross_entropy(v, 6, 11, targets); },
          testutil::to_double(xv));
      REQUIRE(testutil::max_rel_err(x.grad(), fd) <= 1e-4);
    }

    SECTION("reductions sum mean l2_norm, seed " + std::to_string(seed)) {
      auto xv = testutil::normal_vec(rng, 3 * 5);
      for (const char* which : {"sum", "mean", "l2"}) {
        GradTape::active().reset();
        Tensor x = from_vec({3, 5}, xv, true);
        Tensor loss = which == std::string("sum")    ? sum(x)
                      : which == std::string("mean") ? mean(x)
                                                     : l2_norm(x);
        backward(loss);
        auto fd = testutil::fd_gradient(
            [&](const dvec& v) {
              double s = 0.0;
              if (which == std::string("l2")) {
                for (double e : v) s += e * e;
                return std::sqrt(s);
              }
              for (double e : v) s += e;
              return which == std::string("mean") ? s / static_cast<double>(v.size()) : s;
            },
            testutil::to_double(xv));
        CAPTURE(which);
        REQUIRE(testutil::max_rel_err(x.grad(), fd) <= 1e-4);
      }
    }

    SECTION("gather_rows with repeated ids, seed " + std::to_string(seed)) {
      auto tv = testutil::normal_vec(rng, 7 * 4);
      std::vector<int> ids = {3, 0, 3, 6, 1};
      auto wv = testutil::normal_vec(rng, 5 * 4);
      Tensor table = from_vec({7, 4}, tv, true);
      Tensor w = from_vec({5, 4}, wv);
      backward(sum(mul(gather_rows(table, ids), w)));

      auto fd = testutil::fd_gradient(
          [&](const dvec& v) {
            double s = 0.0;
            for (std::size_t i = 0; i < ids.size(); ++i)
              for (int j = 0; j < 4; ++j)
                s += v[static_cast<std::size_t>(ids[i]) * 4 + j] * wv[i * 4 + j];
            return s;
          },
          testutil::to_double(tv));
      REQUIRE(testutil::max_rel_err(table.grad(), fd) <= 1e-4);
    }

    SECTION("layer_norm all grads, seed " + std::to_string(seed)) {
      auto xv = testutil::normal_vec(rng, 4 * 8);
      auto gv = testutil::normal_vec(rng, 8);
      auto bv = testutil::normal_vec(rng, 8);
      auto wv = testutil::normal_vec(rng, 4 * 8);
      Tensor x = from_vec({4, 8}, xv, true);
      Tensor gamma = from_vec({8}, gv, true);
      Tensor beta = from_vec({8}, bv, true);
      Tensor w = from_vec({4, 8}, wv);
      backward(sum(mul(layer_norm(x, gamma, beta), w)));

      auto loss = [&](const dvec& xin, const dvec& gin, const dvec& bin) {
        dvec out = testutil::ref::layer_norm(xin, 4, 8, gin, bin);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * wv[i];
        return s;
      };
      auto xd = testutil::to_double(xv);
      auto gd = testutil::to_double(gv);
      auto bd = testutil::to_double(bv);
      REQUIRE(testutil::max_rel_err(
                  x.grad(), testutil::fd_gradient([&](const dvec& v) { return loss(v, gd, bd); }, xd)) <= 1e-4);
      REQUIRE(testutil::max_rel_err(
                  gamma.grad(), testutil::fd_gradient([&](const dvec& v) { return loss(xd, v, bd); }, gd)) <= 1e-4);
      REQUIRE(testutil::max_rel_err(
                  beta.grad(), testutil::fd_gradient([&](const dvec& v) { return loss(xd, gd, v); }, bd)) <= 1e-4);
    }

    SECTION("causal attention q k v grads, seed " + std::to_string(seed)) {
      const int batch = 2, seq = 5, heads = 2, d_head = 3;
      const std::size_t n = static_cast<std::size_t>(batch) * seq * heads * d_head;
      auto qv = testutil::normal_vec(rng, n);
      auto kv = testutil::normal_vec(rng, n);
      auto vv = testutil::normal_vec(rng, n);
      auto wv = testutil::normal_vec(rng, n);
      Tensor q = from_vec({batch * seq, heads * d_head}, qv, true);
      Tensor k = from_vec({batch * seq, heads * d_head}, kv, true);
      Tensor v = from_vec({batch * seq, heads * d_head}, vv, true);
      Tensor w = from_vec({batch * seq, heads * d_head}, wv);
      auto attn = causal_attention(q, k, v, batch, seq, heads, d_head);
      backward(sum(mul(attn.out, w)));

      auto loss = [&](const dvec& qin, const dvec& kin, const dvec& vin) {
        dvec out = testutil::ref::causal_attention(qin, kin, vin, batch, seq, heads, d_head);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * wv[i];
        return s;
      };
      auto qd = testutil::to_double(qv);
      auto kd = testutil::to_double(kv);
      auto vd = testutil::to_double(vv);
      REQUIRE(testutil::max_rel_err(
                  q.grad(), testutil::fd_gradient([&](const dvec& x) { return loss(x, kd, vd); }, qd)) <= 1e-4);
      REQUIRE(testutil::max_rel_err(
                  k.grad(), testutil::fd_gradient([&](const dvec& x) { return loss(qd, x, vd); }, kd)) <= 1e-4);
      REQUIRE(testutil::max_rel_err(
                  v.grad(), testutil::fd_gradient([&](const dvec& x) { return loss(qd, kd, x); }, vd)) <= 1e-4);
    }
  }
}

TEST_CASE("softmax values and stability") {
  TapeGuard guard;

  SECTION("uniform logits give uniform probabilities") {
    Tensor x({3}, {0, 0, 0});
    Tensor p = softmax(x);
    for (int i = 0; i < 3; ++i)
      REQUIRE_THAT(p.at(i), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-7));
  }

  SECTION("extreme logit does not overflow") {
    Tensor x({2}, {1000.0f, 0.0f});
    Tensor p = softmax(x);
    REQUIRE(p.all_finite());
    REQUIRE_THAT(p.at(0), Catch::Matchers::WithinAbs(1.0, 1e-6));
    REQUIRE_THAT(p.at(1), Catch::Matchers::WithinAbs(0.0, 1e-6));
  }

  SECTION("matches 64-bit oracle to 1e-6") {
    Tensor x({3}, {1, 2, 3});
    Tensor p = softmax(x);
    dvec expect = testutil::ref::softmax_rows({1, 2, 3}, 1, 3);
    for (int i = 0; i < 3; ++i)
      REQUIRE_THAT(p.at(i), Catch::Matchers::WithinAbs(expect[static_cast<std::size_t>(i)], 1e-6));
  }

  SECTION("rows sum to one for magnitudes up to 1e4") {
    Rng rng = make_rng(3, RngStream::kAnalysis);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<float> xv(16);
      for (auto& v : xv) v = rng.uniform(-1e4f, 1e4f);
      Tensor p = softmax(from_vec({4, 4}, xv), 1);
      for (int i = 0; i < 4; ++i) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) {
          REQUIRE(p.at(i, j) >= 0.0f);
          s += p.at(i, j);
        }
        REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
      }
    }
  }

  SECTION("axis 0 normalizes columns") {
    Tensor x({2, 2}, {0, 5, 0, -5});
    Tensor p = softmax(x, 0);
    REQUIRE_THAT(p.at(0, 0) + p.at(1, 0), Catch::Matchers::WithinAbs(1.0, 1e-6));
    REQUIRE_THAT(p.at(0, 1) + p.at(1, 1), Catch::Matchers::WithinAbs(1.0, 1e-6));
    REQUIRE(p.at(0, 1) > 0.99f);
  }
}

TEST_CASE("elementwise and loss values") {
  TapeGuard guard;

  SECTION("relu endpoints") {
    Tensor x({2}, {-2.0f, 3.0f});
    Tensor y = relu(x);
    REQUIRE(y.at(0) == 0.0f);
    REQUIRE(y.at(1) == 3.0f);
  }

  SECTION("cross entropy of uniform logits is ln V") {
    for (int v : {2, 7, 113}) {
      Tensor logits = Tensor::zeros({3, v});
      Tensor loss = cross_entropy(logits, {0, static_cast<int>(v / 2), v - 1});
      REQUIRE_THAT(loss.item(), Catch::Matchers::WithinRel(std::log(static_cast<double>(v)), 1e-6));
    }
  }

  SECTION("cross entropy rejects out-of-vocabulary targets") {
    Tensor logits = Tensor::zeros({2, 5});
    REQUIRE_THROWS_AS(cross_entropy(logits, {1, 5}), InputError);
    REQUIRE_THROWS_AS(cross_entropy(logits, {-1, 2}), InputError);
  }

  SECTION("gelu known values") {
    Tensor x({3}, {0.0f, 1.0f, -1.0f});
    Tensor y = gelu(x);
    REQUIRE_THAT(y.at(0), Catch::Matchers::WithinAbs(0.0, 1e-7));
    REQUIRE_THAT(y.at(1), Catch::Matchers::WithinAbs(0.8413447460685429, 1e-6));
    REQUIRE_THAT(y.at(2), Catch::Matchers::WithinAbs(-0.15865525393145707, 1e-6));
  }
}

TEST_CASE("backward contract") {
  SECTION("x squared at 3 gives gradient 6") {
    GradTape::active().reset();
    Tensor x = Tensor::scalar(3.0f, true);
    backward(mul(x, x));
    REQUIRE(x.grad()[0] == 6.0f);
  }

  SECTION("non-scalar loss is a contract error") {
    GradTape::active().reset();
    Tensor x = from_vec({2}, {1, 2}, true);
    Tensor y = scale(x, 2.0f);
    REQUIRE_THROWS_AS(backward(y), ContractError);
  }

  SECTION("second backward without reset is a contract error") {
    GradTape::active().reset();
    Tensor x = Tensor::scalar(2.0f, true);
    Tensor loss = mul(x, x);
    backward(loss);
    REQUIRE_THROWS_AS(backward(loss), ContractError);
  }

  SECTION("backward on an empty tape is a contract error") {
    GradTape::active().reset();
    Tensor x = Tensor::scalar(2.0f, true);
    REQUIRE_THROWS_AS(backward(x), ContractError);
  }

  SECTION("no-grad guard suspends recording") {
    GradTape::active().reset();
    Tensor x = Tensor::scalar(2.0f, true);
    {
      GradTape::NoGrad guard;
      Tensor y = mul(x, x);
      REQUIRE_FALSE(y.requires_grad());
    }
    REQUIRE(GradTape::active().size() == 0);
  }

  SECTION("gradient accumulates across reuse of one tensor") {
    GradTape::active().reset();
    Tensor x = Tensor::scalar(5.0f, true);
    backward(add(mul(x, x), mul(x, x)));
    REQUIRE(x.grad()[0] == 20.0f);
  }
}

TEST_CASE("reshape aliases storage and routes gradients") {
  GradTape::active().reset();
  Rng rng = make_rng(2, RngStream::kAnalysis);
  auto xv = testutil::normal_vec(rng, 12);
  Tensor x = from_vec({3, 4}, xv, true);
  Tensor y = reshape(x, {4, 3});
  REQUIRE(y.data().data() == x.data().data());
  REQUIRE_THROWS_AS(reshape(x, {5, 3}), ShapeError);

  Tensor w = from_vec({4, 3}, testutil::normal_vec(rng, 12));
  backward(sum(mul(y, w)));
  for (int i = 0; i < 12; ++i) REQUIRE(x.grad()[i] == w.data()[i]);
}

TEST_CASE("tensor invariants") {
  SECTION("construction rejects shape and data mismatch") {
    REQUIRE_THROWS_AS(Tensor({2, 3}, {1, 2, 3}), ShapeError);
    REQUIRE_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
    REQUIRE_THROWS_AS(Tensor::zeros({-1}), ShapeError);
  }

  SECTION("operations keep values finite") {
    GradTape::active().reset();
    Rng rng = make_rng(4, RngStream::kAnalysis);
    Tensor a = Tensor::randn({8, 8}, rng, 10.0f, true);
    Tensor b = Tensor::randn({8, 8}, rng, 10.0f);
    Tensor out = softmax(matmul(gelu(a), b), 1);
    REQUIRE(out.all_finite());
    backward(mean(out));
    for (float g : a.grad()) REQUIRE(std::isfinite(g));
  }

  SECTION("item and grad contracts") {
    Tensor x = Tensor::zeros({2, 2});
    REQUIRE_THROWS_AS(x.item(), ContractError);
    REQUIRE_THROWS_AS(x.grad(), ContractError);
  }
}

TEST_CASE("causal attention pattern properties") {
  GradTape::active().reset();
  const int batch = 2, seq = 6, heads = 3, d_head = 4;
  Rng rng = make_rng(9, RngStream::kAnalysis);
  const std::size_t n = static_cast<std::size_t>(batch) * seq * heads * d_head;
  Tensor q = from_vec({batch * seq, heads * d_head}, testutil::normal_vec(rng, n));
  Tensor k = from_vec({batch * seq, heads * d_head}, testutil::normal_vec(rng, n));
  Tensor v = from_vec({batch * seq, heads * d_head}, testutil::normal_vec(rng, n));
  auto attn = causal_attention(q, k, v, batch, seq, heads, d_head);

  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < seq; ++i) {
        double row = 0.0;
        for (int j = 0; j < seq; ++j) {
          float p = attn.prob(b, h, i, j);
          if (j > i) REQUIRE(p == 0.0f);
          row += p;
        }
        REQUIRE_THAT(row, Catch::Matchers::WithinAbs(1.0, 1e-5));
      }

  SECTION("single position attends to itself with probability one") {
    auto one = causal_attention(q, k, v, batch * seq, 1, heads, d_head);
    for (int b = 0; b < batch * seq; ++b)
      for (int h = 0; h < heads; ++h) REQUIRE(one.prob(b, h, 0, 0) == 1.0f);
  }
}

TEST_CASE("argmax rows breaks ties toward the lowest index") {
  Tensor x({2, 3}, {1, 3, 3, 0, -1, -2});
  auto ids = argmax_rows(x);
  REQUIRE(ids == std::vector<int>{1, 0});
}
