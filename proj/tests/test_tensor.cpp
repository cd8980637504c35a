#include <gtest/gtest.h>

#include <cmath>
#include <array>
#include <functional>
#include <unordered_map>
#include <vector>

#include "test_util.hpp"
#include "urcsa/conv.hpp"
#include "urcsa/gradcheck.hpp"
#include "urcsa/ops.hpp"

using namespace urcsa;
using test::random_tensor;

namespace {

// Naive oracles.
std::vector<double> matmul_oracle(const TensorD& a, const TensorD& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

std::vector<double> conv_oracle(const TensorD& x, const TensorD& w, const TensorD& bias, std::size_t stride,
                                std::size_t pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = bias.defined() ? bias[o] : 0.0;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
              const long ix = static_cast<long>(xx * stride + dx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              acc += x[(c * h + iy) * wd + ix] * w[((o * cin + c) * k + dy) * k + dx];
            }
        out[(o * oh + y) * ow + xx] = acc;
      }
  return out;
}

double check_op(const std::function<TensorD(const TensorD&)>& f, const TensorD& x) {
  Rng rng(99);
  // Random projection so that every output element matters.
  TensorD probe = x.clone();
  TensorD out = f(probe);
  TensorD weights = random_tensor(out.shape(), rng, -1.0, 1.0);
  return grad_check<double>([&](const TensorD& v) { return sum(mul(f(v), weights)); }, x);
}

const std::vector<Shape> kShapes = {{2, 3, 4}, {1, 5, 5}, {3, 4, 7}};

}  // namespace

TEST(Tensor, ShapeDataInvariant) {
  TensorD t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(TensorD(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Elementwise, Examples) {
  TensorD a({2}, std::vector<double>{1, 2}), b({2}, std::vector<double>{3, 4});
  test::expect_values(elementwise(OpKind::add, a, b), {4, 6});
  test::expect_values(elementwise(OpKind::sigmoid, TensorD({1}, 0.0)), {0.5});
  test::expect_values(elementwise(OpKind::leaky_relu, TensorD({1}, -1.0), {}, 0.2), {-0.2});
  test::expect_values(elementwise(OpKind::sub, a, b), {-2, -2});
  test::expect_values(elementwise(OpKind::mul, a, b), {3, 8});
  test::expect_values(elementwise(OpKind::scalar_mul, a, {}, 3.0), {3, 6});
}

TEST(Elementwise, ScalarBroadcastOnly) {
  TensorD a({2, 2}, 1.0);
  EXPECT_NO_THROW(add(a, TensorD::scalar(2.0)));
  EXPECT_THROW(add(a, TensorD({2}, 1.0)), DimensionError);
  EXPECT_THROW(mul(TensorD({3}, 1.0), TensorD({2}, 1.0)), DimensionError);
}

TEST(Elementwise, SigmoidRangeAndStability) {
  TensorD x({4}, std::vector<double>{-800, -5, 5, 800});
  const TensorD y = sigmoid(x);
  for (double v : y.data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const TensorD z = sigmoid(TensorD({2}, std::vector<double>{-5, 5}));
  EXPECT_GT(z[0], 0.0);
  EXPECT_LT(z[1], 1.0);
}

TEST(Elementwise, GradientsOnThreeShapes) {
  for (const auto& s : kShapes) {
    Rng rng(1);
    const TensorD x = random_tensor(s, rng, -1.0, 1.0);
    const TensorD y = random_tensor(s, rng, 0.5, 1.5);
    EXPECT_LT(check_op([&](const TensorD& v) { return add(v, y); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return sub(y, v); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return mul(v, y); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return div(v, y); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return div(y, add_scalar(square(v), 1.0)); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return scalar_mul(v, -2.5); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return sigmoid(v); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return leaky_relu(v, 0.2); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return sqrt(add_scalar(square(v), 0.1)); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return smooth_l1(scalar_mul(v, 2.0)); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return abs(v); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return mul(v, TensorD::scalar(0.7)); }, x), 1e-5);
  }
}

TEST(Matmul, Examples) {
  TensorD eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  TensorD b({2, 2}, std::vector<double>{5, 6, 7, 8});
  test::expect_values(matmul(eye, b), {5, 6, 7, 8});
  TensorD a({2, 2}, std::vector<double>{1, 2, 3, 4});
  test::expect_values(matmul(a, b), {19, 22, 43, 50});
  Rng rng(2);
  const TensorD z = matmul(TensorD({1, 4}, 0.0), random_tensor({4, 3}, rng));
  test::expect_values(z, {0, 0, 0});
  EXPECT_THROW(matmul(TensorD({2, 3}, 1.0), TensorD({2, 3}, 1.0)), DimensionError);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(3);
  for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 2}, {17, 9, 33}, {64, 70, 65}}) {
    const TensorD a = random_tensor({m, k}, rng, -1, 1), b = random_tensor({k, n}, rng, -1, 1);
    const TensorD c = matmul(a, b);
    const auto ref = matmul_oracle(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
  }
}

TEST(Matmul, Gradients) {
  Rng rng(4);
  for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{{2, 3, 4}, {5, 1, 2}, {4, 6, 3}}) {
    const TensorD a = random_tensor({m, k}, rng, -1, 1), b = random_tensor({k, n}, rng, -1, 1);
    EXPECT_LT(check_op([&](const TensorD& v) { return matmul(v, b); }, a), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return matmul(a, v); }, b), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return transpose2d(v); }, a), 1e-5);
  }
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(5);
  const TensorD x = random_tensor({1, 4, 5}, rng);
  const TensorD y = conv2d(x, TensorD({1, 1, 1, 1}, 1.0), TensorD({1}, 0.0), 1, 0);
  test::expect_values(y, std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Conv2d, OnesKernelOnConstant) {
  const double c = 0.7;
  const TensorD y = conv2d(TensorD({1, 5, 6}, c), TensorD({1, 1, 3, 3}, 1.0), TensorD(), 1, 1);
  EXPECT_NEAR(y.at(0, 2, 2), 9 * c, 1e-12);
  EXPECT_NEAR(y.at(0, 0, 0), 4 * c, 1e-12);
  EXPECT_NEAR(y.at(0, 4, 5), 4 * c, 1e-12);
  EXPECT_NEAR(y.at(0, 0, 3), 6 * c, 1e-12);
}

TEST(Conv2d, StrideTwoShape) {
  const TensorD y = conv2d(TensorD({2, 4, 4}, 1.0), TensorD({3, 2, 3, 3}, 1.0), TensorD(), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{3, 2, 2}));
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
  EXPECT_THROW(conv2d(TensorD({1, 1, 1}, 1.0), TensorD({1, 1, 3, 3}, 1.0), TensorD(), 1, 0), DimensionError);
  EXPECT_THROW(conv2d(TensorD({2, 4, 4}, 1.0), TensorD({1, 3, 3, 3}, 1.0), TensorD(), 1, 1), DimensionError);
}

TEST(Conv2d, MatchesSlidingWindowOracle) {
  Rng rng(6);
  for (std::size_t k : {1, 3})
    for (std::size_t stride : {1, 2})
      for (const auto& s : kShapes) {
        const std::size_t pad = (k - 1) / 2;
        const TensorD x = random_tensor(s, rng, -1, 1);
        const TensorD w = random_tensor({4, s[0], k, k}, rng, -1, 1);
        const TensorD b = random_tensor({4}, rng, -1, 1);
        const TensorD y = conv2d(x, w, b, stride, pad);
        EXPECT_EQ(y.dim(1), conv_output_size(s[1], k, stride, pad));
        const auto ref = conv_oracle(x, w, b, stride, pad);
        ASSERT_EQ(ref.size(), y.numel());
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
      }
}

TEST(Conv2d, Gradients) {
  Rng rng(7);
  for (std::size_t k : {1, 3})
    for (std::size_t stride : {1, 2})
      for (const auto& s : kShapes) {
        const std::size_t pad = (k - 1) / 2;
        const TensorD x = random_tensor(s, rng, -1, 1);
        const TensorD w = random_tensor({2, s[0], k, k}, rng, -1, 1);
        const TensorD b = random_tensor({2}, rng, -1, 1);
        EXPECT_LT(check_op([&](const TensorD& v) { return conv2d(v, w, b, stride, pad); }, x), 1e-5);
        EXPECT_LT(check_op([&](const TensorD& v) { return conv2d(x, v, b, stride, pad); }, w), 1e-5);
        EXPECT_LT(check_op([&](const TensorD& v) { return conv2d(x, w, v, stride, pad); }, b), 1e-5);
      }
}

TEST(Conv2d, ShapeSweep) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = 4 + rng.index(30), w = 4 + rng.index(30);
    for (std::size_t stride : {1, 2}) {
      const TensorD y = conv2d(TensorD({1, h, w}, 1.0), TensorD({1, 1, 3, 3}, 1.0), TensorD(), stride, 1);
      EXPECT_EQ(y.dim(1), (h + 2 - 3) / stride + 1);
      EXPECT_EQ(y.dim(2), (w + 2 - 3) / stride + 1);
    }
  }
}

TEST(Reduce, Examples) {
  TensorD x({2, 2}, std::vector<double>{1, 2, 3, 4});
  const TensorD m = reduce(x, 1, ReduceKind::mean);
  EXPECT_EQ(m.shape(), (Shape{2, 1}));
  test::expect_values(m, {1.5, 3.5});
  test::expect_values(reduce(TensorD({3, 2}, 2.5), 0, ReduceKind::max), {2.5, 2.5});
  Rng rng(9);
  const TensorD r = random_tensor({3, 1, 4}, rng);
  test::expect_values(reduce(r, 1, ReduceKind::mean), std::vector<double>(r.data().begin(), r.data().end()));
  test::expect_values(reduce(r, 1, ReduceKind::max), std::vector<double>(r.data().begin(), r.data().end()));
  EXPECT_THROW(reduce(TensorD({2, 0}, 0.0), 1, ReduceKind::mean), DimensionError);
  EXPECT_THROW(reduce(x, 2, ReduceKind::mean), DimensionError);
}

TEST(Reduce, MaxTiesRouteToFirst) {
  TensorD x({1, 4}, std::vector<double>{1, 3, 3, 2}, true);
  backward(sum(reduce(x, 1, ReduceKind::max)));
  test::expect_values(x.grad(), {0, 1, 0, 0});
}

TEST(Reduce, MeanSpreadsOneOverN) {
  TensorD x({2, 4}, 1.0, true);
  backward(sum(reduce(x, 1, ReduceKind::mean)));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Reduce, Gradients) {
  for (const auto& s : kShapes) {
    Rng rng(10);
    const TensorD x = random_tensor(s, rng, -1, 1);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      EXPECT_LT(check_op([&](const TensorD& v) { return reduce(v, axis, ReduceKind::mean); }, x), 1e-5);
      EXPECT_LT(check_op([&](const TensorD& v) { return reduce(v, axis, ReduceKind::max); }, x), 1e-5);
    }
  }
}

TEST(Softmax, Examples) {
  test::expect_values(softmax_last(TensorD({1, 4}, 3.0)), {0.25, 0.25, 0.25, 0.25});
  const TensorD big = softmax_last(TensorD({1, 2}, std::vector<double>{1000, 0}));
  // long double oracle for exp(-1000) / (1 + exp(-1000))
  const long double tail = std::exp(-1000.0L) / (1.0L + std::exp(-1000.0L));
  EXPECT_NEAR(big[0], static_cast<double>(1.0L - tail), 1e-15);
  EXPECT_NEAR(big[1], static_cast<double>(tail), 1e-300);
  EXPECT_TRUE(std::isfinite(big[0]));
  test::expect_values(softmax_last(TensorD({3, 1}, std::vector<double>{5, -2, 1e4})), {1, 1, 1});
}

TEST(Softmax, MatchesHighPrecisionOracle) {
  Rng rng(11);
  const TensorD x = random_tensor({5, 7}, rng, -30, 30);
  const TensorD y = softmax_last(x);
  for (std::size_t r = 0; r < 5; ++r) {
    long double total = 0;
    for (std::size_t k = 0; k < 7; ++k) total += std::exp(static_cast<long double>(x[r * 7 + k]));
    for (std::size_t k = 0; k < 7; ++k)
      EXPECT_NEAR(y[r * 7 + k], static_cast<double>(std::exp(static_cast<long double>(x[r * 7 + k])) / total),
                  1e-14);
  }
}

TEST(Softmax, RowsSumToOneUpToLargeMagnitudes) {
  Rng rng(12);
  for (double mag : {1.0, 100.0, 1e4}) {
    const TensorD y = softmax_last(random_tensor({9, 13}, rng, -mag, mag));
    for (std::size_t r = 0; r < 9; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < 13; ++k) {
        EXPECT_GE(y[r * 13 + k], 0.0);
        s += y[r * 13 + k];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, Gradients) {
  for (const auto& s : std::vector<Shape>{{3, 4}, {1, 6}, {5, 2}}) {
    Rng rng(13);
    EXPECT_LT(check_op([](const TensorD& v) { return softmax_last(v); }, random_tensor(s, rng, -2, 2)), 1e-5);
  }
}

TEST(Maxpool, Examples) {
  test::expect_values(maxpool2d(TensorD({1, 4, 6}, 0.3)), std::vector<double>(6, 0.3));
  test::expect_values(maxpool2d(TensorD({1, 2, 2}, std::vector<double>{1, 2, 3, 4})), {4});
  EXPECT_EQ(maxpool2d(TensorD({2, 5, 5}, 0.0)).shape(), (Shape{2, 2, 2}));
  EXPECT_THROW(maxpool2d(TensorD({1, 1, 4}, 0.0)), DimensionError);
}

TEST(Maxpool, Gradients) {
  for (const auto& s : std::vector<Shape>{{2, 4, 4}, {1, 5, 7}, {3, 6, 3}}) {
    Rng rng(14);
    EXPECT_LT(check_op([](const TensorD& v) { return maxpool2d(v); }, random_tensor(s, rng, -1, 1)), 1e-5);
  }
}

TEST(Upsample, Examples) {
  test::expect_values(upsample2x(TensorD({1, 1, 1}, 1.0)), {1, 1, 1, 1});
  test::expect_values(maxpool2d(upsample2x(TensorD({2, 3, 2}, 0.4))), std::vector<double>(12, 0.4));
  Rng rng(15);
  const TensorD x = random_tensor({3, 5, 4}, rng);
  const TensorD y = upsample2x(x);
  EXPECT_EQ(y.shape(), (Shape{3, 10, 8}));
  EXPECT_NEAR(sum(y).item(), 4 * sum(x).item(), 1e-12);
}

TEST(Upsample, Gradients) {
  for (const auto& s : kShapes) {
    Rng rng(16);
    EXPECT_LT(check_op([](const TensorD& v) { return upsample2x(v); }, random_tensor(s, rng, -1, 1)), 1e-5);
  }
  TensorD x({1, 2, 2}, 0.0, true);
  backward(sum(upsample2x(x)));
  test::expect_values(x.grad(), {4, 4, 4, 4});
}

TEST(Concat, Examples) {
  Rng rng(17);
  const TensorD a = random_tensor({3, 2, 2}, rng), b = random_tensor({3, 2, 2}, rng);
  EXPECT_TRUE(concat_channels(a, TensorD()).shares_storage(a));
  const TensorD c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{6, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c[3 * 4 + i], b[i]);
  test::expect_values(slice_channels(c, 0, 3), std::vector<double>(a.data().begin(), a.data().end()));
  test::expect_values(slice_channels(c, 3, 3), std::vector<double>(b.data().begin(), b.data().end()));
  EXPECT_THROW(concat_channels(a, TensorD({1, 2, 3}, 0.0)), DimensionError);
}

TEST(Concat, ShapeSweepRoundTrip) {
  Rng rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 4 + rng.index(30), w = 4 + rng.index(30);
    const std::size_t c1 = 1 + rng.index(3), c2 = 1 + rng.index(3);
    const TensorD a = random_tensor({c1, h, w}, rng), b = random_tensor({c2, h, w}, rng);
    const TensorD c = concat_channels(a, b);
    ASSERT_EQ(c.shape(), (Shape{c1 + c2, h, w}));
    EXPECT_EQ(slice_channels(c, 0, c1).data().size(), a.numel());
    const TensorD back = slice_channels(c, c1, c2);
    for (std::size_t i = 0; i < b.numel(); ++i) ASSERT_EQ(back[i], b[i]);
    EXPECT_EQ(upsample2x(a).shape(), (Shape{c1, 2 * h, 2 * w}));
  }
}

TEST(Concat, Gradients) {
  for (const auto& s : kShapes) {
    Rng rng(19);
    const TensorD a = random_tensor(s, rng, -1, 1);
    const TensorD b = random_tensor({2, s[1], s[2]}, rng, -1, 1);
    EXPECT_LT(check_op([&](const TensorD& v) { return concat_channels(v, b); }, a), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return concat_channels(a, v); }, b), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return slice_channels(v, s[0] - 1, 1); }, a), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return crop2d(v, 1, 1, s[1] - 1, s[2] - 2); }, a), 1e-5);
  }
}

TEST(ChannelOps, Gradients) {
  Rng rng(20);
  for (auto [c, h, w] : std::vector<std::array<std::size_t, 3>>{{2, 3, 4}, {1, 1, 5}, {3, 4, 1}}) {
    const TensorD rows = random_tensor({c, h}, rng, -1, 1), cols = random_tensor({c, w}, rng, -1, 1);
    EXPECT_LT(check_op([&](const TensorD& v) { return channel_outer(v, cols); }, rows), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return channel_outer(rows, v); }, cols), 1e-5);
    const TensorD x = random_tensor({c, h, w}, rng, -1, 1), s = random_tensor({c}, rng, -1, 1);
    EXPECT_LT(check_op([&](const TensorD& v) { return channel_scale(v, s); }, x), 1e-5);
    EXPECT_LT(check_op([&](const TensorD& v) { return channel_scale(x, v); }, s), 1e-5);
    const std::vector<double> wts(c, 0.3);
    EXPECT_LT(check_op([&](const TensorD& v) { return weighted_channel_sum(v, std::span<const double>(wts)); }, x),
              1e-5);
  }
}

TEST(ChannelOps, OuterProductValues) {
  TensorD rows({1, 2}, std::vector<double>{1, 2}), cols({1, 3}, std::vector<double>{3, 4, 5});
  test::expect_values(channel_outer(rows, cols), {3, 4, 5, 6, 8, 10});
}

TEST(Separable, Gradients) {
  const std::vector<double> k{0.25, 0.5, 0.25};
  for (const auto& s : kShapes) {
    Rng rng(21);
    EXPECT_LT(check_op([&](const TensorD& v) { return separable_filter_valid(v, std::span<const double>(k)); },
                       random_tensor(s, rng, -1, 1)),
              1e-5);
  }
}

TEST(Backward, Examples) {
  Rng rng(22);
  TensorD x = random_tensor({2, 3}, rng, -1, 1, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  TensorD y = random_tensor({4}, rng, -1, 1, true);
  backward(sum(mul(y, y)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.grad()[i], 2 * y[i], 1e-15);

  TensorD used({2}, 1.0, true), unused({2}, 1.0, true);
  backward(sum(used));
  EXPECT_TRUE(used.has_grad());
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarLossRejected) {
  TensorD x({2}, 1.0, true);
  EXPECT_THROW(backward(scalar_mul(x, 2.0)), UsageError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  TensorD x({3}, std::vector<double>{1, 2, 3}, true);
  const TensorD loss = sum(square(x));
  backward(loss);
  backward(loss);
  test::expect_values(x.grad(), {4, 8, 12});
  x.zero_grad();
  backward(loss);
  test::expect_values(x.grad(), {2, 4, 6});
}

TEST(Backward, DiamondGraphReverseTopologicalOrder) {
  TensorD x({1}, 3.0, true);
  const TensorD a = square(x);           // x^2
  const TensorD b = mul(a, x);           // x^3
  const TensorD loss = sum(add(a, b));   // x^2 + x^3
  const auto graph = Graph<double>::trace(loss);
  // Every node appears after all of its inputs.
  std::unordered_map<const detail::TensorImpl<double>*, std::size_t> pos;
  for (std::size_t i = 0; i < graph.order.size(); ++i) pos[graph.order[i]] = i;
  for (auto* node : graph.order) {
    for (const auto& p : node->parents) {
      if (pos.count(p.get())) {
        EXPECT_LT(pos[p.get()], pos[node]);
      }
    }
  }
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3 + 3 * 9);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  TensorD x({2}, 1.0, true);
  TensorD y;
  {
    NoGradGuard guard;
    y = sum(x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(23);
  EXPECT_LT(grad_check<double>([](const TensorD& v) { return sum(v); }, random_tensor({3, 4, 5}, rng)), 1e-10);
}

TEST(GradCheck, DetectsWrongGradient) {
  // An op whose backward is deliberately scaled wrong must be flagged.
  const auto bad = [](const TensorD& v) {
    std::vector<double> d(v.data().begin(), v.data().end());
    for (auto& e : d) e = e * e;
    return sum(detail::make_result<double>(v.shape(), std::move(d), {v.impl()}, "bad_square",
                                           [](detail::TensorImpl<double>& self) {
                                             auto& g = self.parents[0]->ensure_grad();
                                             for (std::size_t i = 0; i < g.size(); ++i)
                                               g[i] += self.grad[i] * 3.0 * self.parents[0]->data[i];
                                           }));
  };
  Rng rng(24);
  EXPECT_GT(grad_check<double>(bad, random_tensor({4}, rng, 0.5, 1.0)), 0.1);
}

TEST(GradCheck, KinkStraddlingSamplesAreSkipped) {
  // Entry 0 sits 5e-5 from the ReLU kink, inside the 1e-4 step.
  TensorD x(Shape{3}, std::vector<double>{5e-5, 0.5, -0.7});
  const auto f = [&] { return sum(leaky_relu(x, 0.2)); };
  const GradCheckResult skip = grad_check_tensors<double>(f, {x});
  EXPECT_EQ(skip.skipped, 1u);
  EXPECT_EQ(skip.checked, 2u);
  EXPECT_LT(skip.max_rel_error, 1e-10);
  GradCheckOptions raw;
  raw.skip_kinks = false;
  const GradCheckResult naive = grad_check_tensors<double>(f, {x}, raw);
  EXPECT_EQ(naive.skipped, 0u);
  EXPECT_GT(naive.max_rel_error, 0.1);
  // Max winners count as branches too.
  TensorD m(Shape{2, 1}, std::vector<double>{0.30, 0.30005});
  EXPECT_EQ(grad_check_tensors<double>([&] { return sum(reduce(m, 0, ReduceKind::max)); }, {m}).skipped, 2u);
  EXPECT_FALSE(detail::branch_trace().active);
}

TEST(Determinism, ForwardBitIdentical) {
  Rng r1(25), r2(25);
  const TensorD x1 = random_tensor({2, 6, 6}, r1), x2 = random_tensor({2, 6, 6}, r2);
  const TensorD w = TensorD({3, 2, 3, 3}, 0.1);
  const TensorD y1 = softmax_last(conv2d(x1, w, TensorD(), 1, 1));
  const TensorD y2 = softmax_last(conv2d(x2, w, TensorD(), 1, 1));
  for (std::size_t i = 0; i < y1.numel(); ++i) ASSERT_EQ(y1[i], y2[i]);
}

TEST(Finite, ForwardOpsStayFinite) {
  Rng rng(26);
  const TensorD x = random_tensor({2, 5, 5}, rng, -50, 50);
  for (const TensorD& y : {sigmoid(x), leaky_relu(x, 0.2), softmax_last(x), maxpool2d(x), upsample2x(x),
                           abs(x), smooth_l1(x)}) {
    for (double v : y.data()) ASSERT_TRUE(std::isfinite(v));
  }
}
