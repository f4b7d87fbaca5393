#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "intentcap/tensor.hpp"

using namespace intentcap;

namespace {

Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
  return Tensor::from_data({r, c}, std::move(v));
}

// Plain-loop reference for per-head attention, independent of the tape ops.
std::vector<double> naive_mha(const std::vector<double>& q, const std::vector<double>& k,
                              const std::vector<double>& v, std::size_t lq, std::size_t lk,
                              std::size_t d, std::size_t heads) {
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> out(lq * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      std::vector<double> scores(lk);
      double mx = -1e300;
      for (std::size_t j = 0; j < lk; ++j) {
        double dot = 0.0;
        for (std::size_t e = 0; e < dh; ++e)
          dot += q[i * d + h * dh + e] * k[j * d + h * dh + e];
        scores[j] = dot * sc;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < lk; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (std::size_t j = 0; j < lk; ++j) scores[j] /= z;
      for (std::size_t e = 0; e < dh; ++e) {
        double acc = 0.0;
        for (std::size_t j = 0; j < lk; ++j) acc += scores[j] * v[j * d + h * dh + e];
        out[i * d + h * dh + e] = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("matmul basics") {
  Tensor eye = matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor m = matrix(3, 2, {1, 2, 3, 4, 5, 6});
  Tensor r = matmul(eye, m);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.values()[i] == m.values()[i]);

  Tensor a = matrix(2, 2, {1, 2, 3, 4});
  Tensor z = matrix(2, 1, {0, 0});
  Tensor az = matmul(a, z);
  CHECK(az.values()[0] == 0.0);
  CHECK(az.values()[1] == 0.0);

  CHECK_THROWS_AS(matmul(matrix(2, 3, {1, 2, 3, 4, 5, 6}), matrix(2, 2, {1, 2, 3, 4})),
                  DimensionError);
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(11);
  Tensor a = Tensor::random_uniform({4, 5}, rng);
  Tensor b = Tensor::random_uniform({5, 3}, rng);
  Tensor w = Tensor::random_uniform({4, 3}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto f = [&] { return sum(mul(matmul(a, b), w)); };
  auto report = grad_check(f, {a, b}, 1e-4);
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("layer_norm values") {
  SECTION("constant input normalizes to zero") {
    Tensor x = Tensor::full({2, 4}, 3.25);
    Tensor g = Tensor::full({4}, 1.0);
    Tensor b = Tensor::zeros({4});
    Tensor y = layer_norm(x, g, b, 1e-5, 1);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SECTION("two-point symmetry") {
    Tensor x = matrix(1, 2, {1, 3});
    Tensor g = Tensor::full({2}, 1.0);
    Tensor b = Tensor::zeros({2});
    Tensor y = layer_norm(x, g, b, 1e-12, 1);
    CHECK(y.values()[0] == Approx(-1.0).epsilon(1e-6));
    CHECK(y.values()[1] == Approx(1.0).epsilon(1e-6));
  }
  SECTION("output mean over the normalized axis is ~0") {
    Rng rng(5);
    Tensor x = Tensor::random_uniform({3, 7}, rng, -4.0, 4.0);
    Tensor g = Tensor::full({7}, 1.0);
    Tensor b = Tensor::zeros({7});
    Tensor y = layer_norm(x, g, b, 1e-9, 1);
    for (std::size_t i = 0; i < 3; ++i) {
      double m = 0.0;
      for (std::size_t j = 0; j < 7; ++j) m += y.values()[i * 7 + j];
      CHECK(std::fabs(m / 7.0) <= 1e-9);
    }
  }
  SECTION("channel axis of a 4-D map") {
    Rng rng(6);
    Tensor x = Tensor::random_uniform({2, 3, 2, 2}, rng);
    Tensor g = Tensor::full({3}, 1.0);
    Tensor b = Tensor::zeros({3});
    Tensor y = layer_norm(x, g, b, 1e-9, 1);
    // mean over channels at frame 0, pixel (0,0)
    double m = 0.0;
    for (std::size_t c = 0; c < 3; ++c) m += y.at({0, c, 0, 0});
    CHECK(std::fabs(m / 3.0) <= 1e-9);
  }
  CHECK_THROWS_AS(layer_norm(matrix(1, 2, {1, 2}), Tensor::full({3}, 1.0), Tensor::zeros({3}),
                             1e-5, 1),
                  DimensionError);
}

TEST_CASE("layer_norm gradients") {
  Rng rng(7);
  Tensor x = Tensor::random_uniform({2, 5}, rng);
  Tensor g = Tensor::random_uniform({5}, rng, 0.5, 1.5);
  Tensor b = Tensor::random_uniform({5}, rng, -0.1, 0.1);
  Tensor w = Tensor::random_uniform({2, 5}, rng);
  x.set_requires_grad(true);
  g.set_requires_grad(true);
  b.set_requires_grad(true);
  auto f = [&] { return sum(mul(layer_norm(x, g, b, 1e-5, 1), w)); };
  auto report = grad_check(f, {x, g, b}, 1e-4);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("softmax values and stability") {
  Tensor u = softmax(matrix(1, 3, {0, 0, 0}), 1);
  for (double v : u.values()) CHECK(v == Approx(1.0 / 3.0).margin(1e-15));

  Tensor s = softmax(matrix(1, 2, {1000, 0}), 1);
  CHECK(std::fabs(s.values()[0] - 1.0) <= 1e-12);
  CHECK(std::fabs(s.values()[1]) <= 1e-12);

  Rng rng(9);
  Tensor x = Tensor::random_uniform({4, 6}, rng, -5.0, 5.0);
  Tensor y = softmax(x, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      total += y.values()[i * 6 + j];
      CHECK(y.values()[i * 6 + j] > 0.0);
    }
    CHECK(std::fabs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax gradients") {
  Rng rng(10);
  Tensor x = Tensor::random_uniform({3, 4}, rng);
  Tensor w = Tensor::random_uniform({3, 4}, rng);
  x.set_requires_grad(true);
  auto f = [&] { return sum(mul(softmax(x, 1), w)); };
  CHECK(grad_check(f, {x}, 1e-4).max_rel_err <= 1e-5);
}

TEST_CASE("conv1x1 identity, zero, and matmul oracle") {
  Rng rng(12);
  Tensor x = Tensor::random_uniform({2, 3, 2, 2}, rng);

  Tensor eye = matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b0 = Tensor::zeros({3});
  Tensor same = conv1x1(x, eye, b0);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.values()[i] == x.values()[i]);

  Tensor wz = Tensor::zeros({3, 3});
  Tensor zeroed = conv1x1(x, wz, b0);
  for (double v : zeroed.values()) CHECK(v == 0.0);

  // reshape -> matmul -> reshape oracle, plain loops, bias added after the
  // channel accumulation; must agree bit-for-bit.
  Tensor w = Tensor::random_uniform({4, 3}, rng);
  Tensor b = Tensor::random_uniform({4}, rng);
  Tensor y = conv1x1(x, w, b);
  const std::size_t hw = 4;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t oc = 0; oc < 4; ++oc)
      for (std::size_t p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < 3; ++ic)
          acc += w.values()[oc * 3 + ic] * x.values()[(n * 3 + ic) * hw + p];
        const double expected = acc + b.values()[oc];
        CHECK(y.values()[(n * 4 + oc) * hw + p] == expected);
      }

  CHECK_THROWS_AS(conv1x1(x, matrix(4, 2, {1, 2, 3, 4, 5, 6, 7, 8}), Tensor::zeros({4})),
                  DimensionError);
}

TEST_CASE("conv1x1 gradients") {
  Rng rng(13);
  Tensor x = Tensor::random_uniform({2, 3, 2, 2}, rng);
  Tensor w = Tensor::random_uniform({2, 3}, rng);
  Tensor b = Tensor::random_uniform({2}, rng);
  Tensor probe = Tensor::random_uniform({2, 2, 2, 2}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  auto f = [&] { return sum(mul(conv1x1(x, w, b), probe)); };
  CHECK(grad_check(f, {x, w, b}, 1e-4).max_rel_err <= 1e-5);
}

TEST_CASE("gelu") {
  Tensor z = gelu(Tensor::scalar(0.0));
  CHECK(z.item() == 0.0);

  Tensor big = gelu(Tensor::scalar(10.0));
  CHECK(std::fabs(big.item() - 10.0) <= 1e-6);

  Tensor x = Tensor::scalar(0.5).set_requires_grad(true);
  auto f = [&] { return sum(gelu(x)); };
  CHECK(grad_check(f, {x}, 1e-4).max_rel_err <= 1e-6);
}

TEST_CASE("multi_head_attention") {
  SECTION("single key returns v row for every query") {
    Rng rng(14);
    Tensor q = Tensor::random_uniform({3, 4}, rng);
    Tensor k = Tensor::random_uniform({1, 4}, rng);
    Tensor v = Tensor::random_uniform({1, 4}, rng);
    Tensor out = multi_head_attention(q, k, v, 2);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(out.values()[i * 4 + j] == Approx(v.values()[j]).margin(1e-15));
  }
  SECTION("identical keys give the mean of values") {
    Tensor q = matrix(1, 2, {0.3, -0.7});
    Tensor k = matrix(3, 2, {1, 2, 1, 2, 1, 2});
    Tensor v = matrix(3, 2, {0, 3, 6, 9, 3, 0});
    Tensor out = multi_head_attention(q, k, v, 1);
    CHECK(out.values()[0] == Approx(3.0).margin(1e-12));
    CHECK(out.values()[1] == Approx(4.0).margin(1e-12));
  }
  SECTION("matches the per-head loop oracle") {
    Rng rng(15);
    Tensor q = Tensor::random_uniform({3, 4}, rng);
    Tensor k = Tensor::random_uniform({2, 4}, rng);
    Tensor v = Tensor::random_uniform({2, 4}, rng);
    Tensor out = multi_head_attention(q, k, v, 2);
    auto expect = naive_mha({q.values().begin(), q.values().end()},
                            {k.values().begin(), k.values().end()},
                            {v.values().begin(), v.values().end()}, 3, 2, 4, 2);
    for (std::size_t i = 0; i < expect.size(); ++i)
      CHECK(out.values()[i] == Approx(expect[i]).margin(1e-12));
  }
  SECTION("head divisibility enforced") {
    Rng rng(16);
    Tensor q = Tensor::random_uniform({2, 6}, rng);
    CHECK_THROWS_AS(multi_head_attention(q, q, q, 4), ConfigError);
  }
  SECTION("gradients flow through q, k, v") {
    Rng rng(17);
    Tensor q = Tensor::random_uniform({3, 4}, rng);
    Tensor k = Tensor::random_uniform({2, 4}, rng);
    Tensor v = Tensor::random_uniform({2, 4}, rng);
    Tensor w = Tensor::random_uniform({3, 4}, rng);
    for (Tensor* t : {&q, &k, &v}) t->set_requires_grad(true);
    auto f = [&] { return sum(mul(multi_head_attention(q, k, v, 2), w)); };
    CHECK(grad_check(f, {q, k, v}, 1e-4).max_rel_err <= 1e-5);
  }
}

TEST_CASE("reshape, transpose, slicing round trips") {
  Rng rng(18);
  Tensor x = Tensor::random_uniform({3, 4}, rng);
  x.set_requires_grad(true);
  Tensor probe = Tensor::random_uniform({3, 4}, rng);
  auto f = [&] {
    Tensor t = transpose(transpose(x));
    Tensor left = slice_cols(t, 0, 2);
    Tensor right = slice_cols(t, 2, 4);
    return sum(mul(concat_cols({left, right}), probe));
  };
  CHECK(grad_check(f, {x}, 1e-4).max_rel_err <= 1e-6);

  Tensor r = reshape(x, {4, 3});
  CHECK(r.dim(0) == 4);
  CHECK(r.values()[0] == x.values()[0]);
  CHECK_THROWS_AS(reshape(x, {5, 3}), DimensionError);
}

TEST_CASE("frame_at and stack_frames invert each other") {
  Rng rng(19);
  Tensor x = Tensor::random_uniform({3, 2, 2, 2}, rng);
  x.set_requires_grad(true);
  Tensor probe = Tensor::random_uniform({3, 2, 2, 2}, rng);
  auto f = [&] {
    std::vector<Tensor> frames;
    for (std::size_t i = 0; i < 3; ++i) frames.push_back(frame_at(x, i));
    return sum(mul(stack_frames(frames), probe));
  };
  CHECK(grad_check(f, {x}, 1e-4).max_rel_err <= 1e-6);
  Tensor f1 = frame_at(x, 1);
  CHECK(f1.shape() == std::vector<std::size_t>{2, 2, 2});
  CHECK(f1.values()[0] == x.values()[8]);
}

TEST_CASE("token views") {
  Rng rng(20);
  Tensor x = Tensor::random_uniform({3, 2, 2}, rng);
  Tensor t = to_tokens(x);
  CHECK(t.shape() == std::vector<std::size_t>{4, 3});
  CHECK(t.at({2, 1}) == x.at({1, 1, 0}));
  Tensor back = from_tokens(t, 2, 2);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.values()[i] == x.values()[i]);
}

TEST_CASE("LinearLoRA contract") {
  Rng rng(21);
  LinearLoRA layer(6, 4, 3, 1.0, rng);
  SECTION("zero-init B means exact base behaviour") {
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = Tensor::random_uniform({5, 6}, rng);
      Tensor out = layer.forward(x);
      Tensor base = layer.base_forward(x);
      for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.values()[i] == base.values()[i]);
    }
  }
  SECTION("nonzero update changes the output") {
    LinearLoRA full(4, 4, 4, 1.0, rng);
    auto bvals = full.lora_b().mutable_values();
    for (auto& v : bvals) v = rng.uniform(-0.5, 0.5);
    Tensor x = Tensor::random_uniform({3, 4}, rng);
    Tensor out = full.forward(x);
    Tensor base = full.base_forward(x);
    bool differs = false;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out.values()[i] != base.values()[i]) differs = true;
    CHECK(differs);
  }
  SECTION("only A and B receive gradients") {
    auto bvals = layer.lora_b().mutable_values();
    for (auto& v : bvals) v = rng.uniform(-0.5, 0.5);
    Tensor x = Tensor::random_uniform({2, 6}, rng);
    auto f = [&] { return sum(layer.forward(x)); };
    auto report = grad_check(f, {layer.lora_a(), layer.lora_b()}, 1e-4);
    CHECK(report.max_rel_err <= 1e-5);
    CHECK_FALSE(layer.base_weight().has_grad());
    CHECK_FALSE(layer.base_bias().has_grad());
  }
  CHECK_THROWS_AS(LinearLoRA(4, 4, 5, 1.0, rng), ConfigError);
}

TEST_CASE("grad_check harness") {
  SECTION("analytic quadratic") {
    Rng rng(22);
    Tensor x = Tensor::random_uniform({6}, rng);
    x.set_requires_grad(true);
    auto f = [&] { return sum(mul(x, x)); };
    auto report = grad_check(f, {x}, 1e-4);
    CHECK(report.max_rel_err <= 1e-8);
    x.zero_grad();
    Tensor loss = f();
    loss.backward();
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(x.grad()[i] == Approx(2.0 * x.values()[i]).margin(1e-12));
  }
  SECTION("constant objective") {
    Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
    Tensor c = Tensor::scalar(5.0);
    auto f = [&] { return add(sum(mul(x, Tensor::zeros({1}))), c); };
    auto report = grad_check(f, {x}, 1e-4);
    CHECK(report.max_rel_err == 0.0);
  }
  SECTION("non-finite objective raises") {
    Tensor x = Tensor::scalar(1e308).set_requires_grad(true);
    auto f = [&] { return sum(mul(mul(x, x), x)); };
    CHECK_THROWS_AS(grad_check(f, {x}, 1e-4), EvalError);
  }
}

TEST_CASE("autodiff soundness across the exported op set") {
  Rng rng(23);
  Tensor x = Tensor::random_uniform({3, 4}, rng);
  Tensor y = Tensor::random_uniform({4, 3}, rng);
  Tensor g = Tensor::random_uniform({4}, rng, 0.5, 1.5);
  Tensor b = Tensor::random_uniform({4}, rng, -0.2, 0.2);
  Tensor img = Tensor::random_uniform({1, 3, 2, 2}, rng);
  Tensor cw = Tensor::random_uniform({3, 3}, rng);
  Tensor cb = Tensor::random_uniform({3}, rng);
  for (Tensor* t : {&x, &y, &g, &b, &img, &cw, &cb}) t->set_requires_grad(true);
  auto f = [&] {
    Tensor mm = gelu(matmul(x, y));                      // [3,3]
    Tensor ln = layer_norm(add_rowwise(x, b), g, b, 1e-5, 1);
    Tensor sm = softmax(ln, 1);
    Tensor conv = conv1x1(img, cw, cb);
    Tensor flat = reshape(conv, {3, 4});
    Tensor joined = concat_cols({mm, sm, flat, sub(sm, flat), mul(sm, flat), scale(flat, 0.7)});
    return sum(joined);
  };
  auto report = grad_check(f, {x, y, g, b, img, cw, cb}, 1e-4);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("finite gradients after backward on the path") {
  Rng rng(24);
  Tensor x = Tensor::random_uniform({2, 3}, rng);
  Tensor y = Tensor::random_uniform({3, 2}, rng);
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Tensor loss = sum(gelu(matmul(x, y)));
  loss.backward();
  REQUIRE(x.has_grad());
  REQUIRE(y.has_grad());
  for (double v : x.grad()) CHECK(std::isfinite(v));
  for (double v : y.grad()) CHECK(std::isfinite(v));
}

TEST_CASE("tensor json dump round trip") {
  Tensor t = Tensor::from_data({2, 2}, {1.5, -2.0, 0.25, 4.0});
  Tensor back = Tensor::from_json(t.to_json());
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.values()[i] == t.values()[i]);
}
