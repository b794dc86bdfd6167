#include <doctest.h>

#include <cmath>

#include "pvmdnn/tensor.hpp"
#include "test_util.hpp"

using namespace pvmdnn;
using testutil::dot;
using testutil::fd_grad;
using testutil::fill_random;
using testutil::rel_l2;

TEST_CASE("conv_valid shape formulas for the published stack") {
  // 64(w) x 48(h) image -> 5x5 stride 1 -> 60x44
  MapStack img(1, 48, 64);
  Kernel4 k1(4, 1, 5, 5, 1, 1);
  MapStack out1 = conv_valid(img, k1);
  CHECK(out1.maps == 4);
  CHECK(out1.height == 44);
  CHECK(out1.width == 60);

  // 4 maps 60x44 -> 4x4 stride 2 -> 29x21
  Kernel4 k2(8, 4, 4, 4, 2, 2);
  MapStack out2 = conv_valid(out1, k2);
  CHECK(out2.height == 21);
  CHECK(out2.width == 29);

  // 8 maps 29x21 -> 5x5 stride 2 -> 13x9
  Kernel4 k3(12, 8, 5, 5, 2, 2);
  MapStack out3 = conv_valid(out2, k3);
  CHECK(out3.height == 9);
  CHECK(out3.width == 13);
}

TEST_CASE("conv_transposed shape formulas reverse the stack") {
  // 8 maps 29x21 -> transposed 4x4 stride 2 -> 60x44
  MapStack mid(8, 21, 29);
  Kernel4 k(8, 4, 4, 4, 2, 2);
  MapStack up = conv_transposed(mid, k);
  CHECK(up.maps == 4);
  CHECK(up.height == 44);
  CHECK(up.width == 60);

  // 12 maps 13x9 -> transposed 5x5 stride 2 -> 29x21
  MapStack slow(12, 9, 13);
  Kernel4 k2(12, 8, 5, 5, 2, 2);
  MapStack up2 = conv_transposed(slow, k2);
  CHECK(up2.maps == 8);
  CHECK(up2.height == 21);
  CHECK(up2.width == 29);
}

TEST_CASE("all-zero kernel annihilates any input") {
  Rng rng(11);
  MapStack in(2, 7, 9);
  fill_random(rng, in.data);
  Kernel4 k(3, 2, 3, 3, 1, 1);
  std::vector<double> bias(3, 0.0);
  MapStack out = conv_valid(in, k, bias);
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("conv_valid computes strided receptive-field dot products plus bias") {
  // 1 map 3x3, 2x2 kernel stride 1: verify one output by hand.
  MapStack in(1, 3, 3);
  for (int i = 0; i < 9; ++i) in.data[i] = i + 1;
  Kernel4 k(1, 1, 2, 2, 1, 1);
  k.data = {1.0, -1.0, 0.5, 2.0};
  std::vector<double> bias{0.25};
  MapStack out = conv_valid(in, k, bias);
  CHECK(out.height == 2);
  CHECK(out.width == 2);
  // top-left field: 1,2,4,5
  CHECK(out.at(0, 0, 0) == doctest::Approx(1 - 2 + 0.5 * 4 + 2 * 5 + 0.25).epsilon(1e-15));
  // bottom-right field: 5,6,8,9
  CHECK(out.at(0, 1, 1) == doctest::Approx(5 - 6 + 0.5 * 8 + 2 * 9 + 0.25).epsilon(1e-15));
}

TEST_CASE("conv_transposed is the exact adjoint of conv_valid") {
  // <conv_valid(x,k), y> == <x, conv_transposed(y,k)> on randomized shapes.
  Rng rng(1234);
  for (int trial = 0; trial < 100; ++trial) {
    const int in_maps = 1 + static_cast<int>(rng.next_u64() % 3);
    const int out_maps = 1 + static_cast<int>(rng.next_u64() % 3);
    const int kh = 1 + static_cast<int>(rng.next_u64() % 4);
    const int kw = 1 + static_cast<int>(rng.next_u64() % 4);
    const int sy = 1 + static_cast<int>(rng.next_u64() % 2);
    const int sx = 1 + static_cast<int>(rng.next_u64() % 2);
    // input extents chosen so the strided formula divides exactly, as every
    // validated network configuration requires
    const int oh = 2 + static_cast<int>(rng.next_u64() % 6);
    const int ow = 2 + static_cast<int>(rng.next_u64() % 6);
    const int h = sy * (oh - 1) + kh;
    const int w = sx * (ow - 1) + kw;

    MapStack x(in_maps, h, w);
    Kernel4 k(out_maps, in_maps, kh, kw, sy, sx);
    fill_random(rng, x.data);
    fill_random(rng, k.data);

    MapStack cx = conv_valid(x, k);
    MapStack y(cx.maps, cx.height, cx.width);
    fill_random(rng, y.data);
    MapStack ty = conv_transposed(y, k);

    const double ip1 = dot(cx.data, y.data);
    const double ip2 = dot(x.data, ty.data);
    CHECK(std::abs(ip1 - ip2) < 1e-10 * std::max({1.0, std::abs(ip1), std::abs(ip2)}));
  }
}

TEST_CASE("conv_backward: zero upstream gradient gives zero gradients") {
  Rng rng(5);
  MapStack in(2, 6, 6);
  Kernel4 k(2, 2, 3, 3, 1, 1);
  fill_random(rng, in.data);
  fill_random(rng, k.data);
  MapStack gout(2, 4, 4);
  ConvGrads g = conv_backward(in, k, gout);
  for (double v : g.input.data) CHECK(v == 0.0);
  for (double v : g.kernel.data) CHECK(v == 0.0);
  for (double v : g.bias) CHECK(v == 0.0);
}

TEST_CASE("conv_backward: 1x1 kernel on a single pixel is a scalar product") {
  MapStack in(1, 1, 1);
  in.data[0] = 3.5;
  Kernel4 k(1, 1, 1, 1, 1, 1);
  k.data[0] = -2.0;
  MapStack gout(1, 1, 1);
  gout.data[0] = 0.25;
  ConvGrads g = conv_backward(in, k, gout);
  CHECK(g.kernel.data[0] == doctest::Approx(3.5 * 0.25).epsilon(1e-15));
  CHECK(g.input.data[0] == doctest::Approx(-2.0 * 0.25).epsilon(1e-15));
  CHECK(g.bias[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("conv_backward matches central finite differences") {
  Rng rng(77);
  MapStack in(2, 7, 6);
  Kernel4 k(3, 2, 3, 2, 2, 1);
  std::vector<double> bias(3, 0.0);
  fill_random(rng, in.data);
  fill_random(rng, k.data);
  fill_random(rng, bias);
  MapStack gout = conv_valid(in, k, bias);  // right shape
  fill_random(rng, gout.data);

  ConvGrads g = conv_backward(in, k, gout);
  const double eps = 1e-5;
  auto scalar = [&]() { return dot(conv_valid(in, k, bias).data, gout.data); };

  const auto fd_in = fd_grad(in.data, eps, scalar);
  const auto fd_k = fd_grad(k.data, eps, scalar);
  const auto fd_b = fd_grad(bias, eps, scalar);
  CHECK(rel_l2(g.input.data, fd_in) < 1e-6);
  CHECK(rel_l2(g.kernel.data, fd_k) < 1e-6);
  CHECK(rel_l2(g.bias, fd_b) < 1e-6);
  // grad_input equals conv_transposed(grad_out, k) with no bias.
  MapStack ti = conv_transposed(gout, k);
  CHECK(rel_l2(g.input.data, ti.data) < 1e-15);
}

TEST_CASE("zero_pad and crop are mutual inverses and adjoints") {
  Rng rng(9);
  MapStack in(2, 5, 4);
  fill_random(rng, in.data);
  MapStack padded = zero_pad(in, 0, 1, 0, 1);
  CHECK(padded.height == 6);
  CHECK(padded.width == 5);
  MapStack back = crop(padded, 0, 1, 0, 1);
  CHECK(rel_l2(back.data, in.data) == 0.0);

  // <pad(x), y> == <x, crop(y)>
  MapStack y(2, 6, 5);
  fill_random(rng, y.data);
  const double ip1 = dot(padded.data, y.data);
  MapStack cy = crop(y, 0, 1, 0, 1);
  const double ip2 = dot(in.data, cy.data);
  CHECK(ip1 == doctest::Approx(ip2).epsilon(1e-14));
}

TEST_CASE("affine identity and published shape") {
  DenseWeights eye(4, 4);
  for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  std::vector<double> x{1.0, -2.0, 3.0, 0.5};
  auto y = affine(eye, x);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == x[i]);

  // 10x20 weights on a 20-vector -> 10-vector
  DenseWeights w(10, 20);
  std::vector<double> v(20, 0.1);
  CHECK(affine(w, v).size() == 10);
}

TEST_CASE("affine_backward matches central finite differences") {
  Rng rng(21);
  DenseWeights w(5, 7);
  std::vector<double> x(7, 0.0), bias(5, 0.0), gout(5, 0.0);
  fill_random(rng, w.data);
  fill_random(rng, x);
  fill_random(rng, bias);
  fill_random(rng, gout);

  AffineGrads g = affine_backward(w, x, gout);
  const double eps = 1e-6;
  auto scalar = [&]() { return dot(affine(w, x, bias), gout); };
  CHECK(rel_l2(g.input, fd_grad(x, eps, scalar)) < 1e-8);
  CHECK(rel_l2(g.weights.data, fd_grad(w.data, eps, scalar)) < 1e-8);
  CHECK(rel_l2(g.bias, fd_grad(bias, eps, scalar)) < 1e-8);
}

TEST_CASE("activation values and symmetry") {
  CHECK(scaled_tanh(0.0) == 0.0);
  CHECK(out_tanh(0.0) == 0.0);
  // scaled_tanh(1.5) = 1.7159 * tanh(1.0)
  CHECK(scaled_tanh(1.5) == doctest::Approx(1.7159 * std::tanh(1.0)).epsilon(1e-15));
  CHECK(scaled_tanh(1.5) == doctest::Approx(1.3068).epsilon(1e-3));

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const double u = rng.next_uniform(-4.0, 4.0);
    CHECK(scaled_tanh(-u) == doctest::Approx(-scaled_tanh(u)).epsilon(1e-15));
    CHECK(out_tanh(-u) == doctest::Approx(-out_tanh(u)).epsilon(1e-15));
    // derivative identities
    CHECK(scaled_tanh_prime(u) ==
          doctest::Approx(scaled_tanh_prime_from_act(scaled_tanh(u))).epsilon(1e-12));
  }
}

TEST_CASE("grouped softmax: uniform, sums, shift invariance") {
  std::vector<double> zeros(10, 0.0);
  auto p = softmax_groups(zeros, 10);
  for (double v : p) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));

  Rng rng(17);
  std::vector<double> u(20, 0.0);
  fill_random(rng, u, 3.0);
  auto q = softmax_groups(u, 10);
  for (int g = 0; g < 2; ++g) {
    double sum = 0.0;
    for (int i = 0; i < 10; ++i) sum += q[g * 10 + i];
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  std::vector<double> shifted = u;
  for (int i = 0; i < 10; ++i) shifted[i] += 7.5;  // shift one group only
  auto qs = softmax_groups(shifted, 10);
  for (int i = 0; i < 20; ++i) CHECK(qs[i] == doctest::Approx(q[i]).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_groups(u, 0), ConfigError);
  CHECK_THROWS_AS(softmax_groups(u, 3), ConfigError);  // 20 not divisible by 3
}

TEST_CASE("softmax backward matches finite differences through the groups") {
  Rng rng(29);
  std::vector<double> u(20, 0.0), dy(20, 0.0);
  fill_random(rng, u, 2.0);
  fill_random(rng, dy);
  auto y = softmax_groups(u, 10);
  std::vector<double> du(20, 0.0);
  softmax_groups_backward(y, dy, 10, du);

  auto scalar = [&]() { return dot(softmax_groups(u, 10), dy); };
  CHECK(rel_l2(du, fd_grad(u, 1e-6, scalar)) < 1e-8);
}

TEST_CASE("losses: trivial values") {
  std::vector<double> a{0.3, -0.7, 0.1};
  CHECK(sse_loss(a, a) == 0.0);
  CHECK(kl_loss(a, a).value == 0.0);  // target == pred, elementwise log(1)

  std::vector<double> zero{0.0}, one{1.0};
  CHECK(sse_loss(zero, one) == 1.0);
}

TEST_CASE("kl against a brute-force sum, non-negativity, clamping") {
  // uniform(10) vs a smoothed one-hot
  std::vector<double> uniform(10, 0.1);
  std::vector<double> onehot(10, 0.01 / 9.0);
  onehot[4] = 0.99;

  double brute = 0.0;
  for (int i = 0; i < 10; ++i) brute += uniform[i] * std::log(uniform[i] / onehot[i]);
  CHECK(kl_loss(uniform, onehot).value == doctest::Approx(brute).epsilon(1e-12));
  CHECK(kl_loss(uniform, onehot).value > 0.0);

  // kl >= 0 with equality iff equal (grouped distributions)
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> u1(10, 0.0), u2(10, 0.0);
    fill_random(rng, u1, 2.0);
    fill_random(rng, u2, 2.0);
    auto p1 = softmax_groups(u1, 10);
    auto p2 = softmax_groups(u2, 10);
    CHECK(kl_loss(p1, p2).value >= 0.0);
  }

  // pred 0 where target > 0: clamped at the floor and flagged
  std::vector<double> t{0.5, 0.5};
  std::vector<double> p{1.0, 0.0};
  const KlResult r = kl_loss(t, p);
  CHECK(r.clamped);
  CHECK(r.value == doctest::Approx(0.5 * std::log(0.5 / 1.0) +
                                   0.5 * std::log(0.5 / 1e-15)).epsilon(1e-12));
  // 0 log(0/y) == 0: a zero-target entry contributes nothing
  std::vector<double> t2{0.0, 1.0};
  std::vector<double> p2{0.5, 0.5};
  CHECK(kl_loss(t2, p2).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(53);
  std::vector<double> pred(12, 0.0), target(12, 0.0);
  fill_random(rng, pred);
  fill_random(rng, target);

  std::vector<double> g(12, 0.0);
  sse_grad_acc(g, pred, target, 1.0);
  auto fd = fd_grad(pred, 1e-6, [&]() { return sse_loss(pred, target); });
  CHECK(rel_l2(g, fd) < 1e-8);

  std::vector<double> up(10, 0.0), ut(10, 0.0);
  fill_random(rng, up, 2.0);
  fill_random(rng, ut, 2.0);
  auto probs = softmax_groups(up, 10);
  auto tprobs = softmax_groups(ut, 10);
  std::vector<double> gk(10, 0.0);
  kl_grad_acc(gk, tprobs, probs, 1.0);
  auto fdk = fd_grad(probs, 1e-8, [&]() { return kl_loss(tprobs, probs).value; });
  CHECK(rel_l2(gk, fdk) < 1e-6);
}

TEST_CASE("dimension mismatches are configuration errors") {
  MapStack in(2, 6, 6);
  Kernel4 k(3, 1, 3, 3, 1, 1);  // expects 1 input map
  CHECK_THROWS_AS(conv_valid(in, k), ConfigError);
  Kernel4 kt(1, 3, 3, 3, 1, 1);  // transposed expects 1 input map
  CHECK_THROWS_AS(conv_transposed(in, kt), ConfigError);
  DenseWeights w(3, 4);
  std::vector<double> x(5, 0.0);
  CHECK_THROWS_AS(affine(w, x), ConfigError);
  std::vector<double> a(3, 0.0), b(4, 0.0);
  CHECK_THROWS_AS(sse_loss(a, b), ConfigError);
  CHECK_THROWS_AS(kl_loss(a, b), ConfigError);
}
