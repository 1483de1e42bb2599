#include <gtest/gtest.h>

#include <functional>

#include "nowcast/conv.hpp"
#include "nowcast/ops.hpp"
#include "oracles.hpp"

using namespace nowcast;
using nowcast::testing::as_double;
using nowcast::testing::gradient_error;
using nowcast::testing::max_rel_err;
using nowcast::testing::naive_conv2d;
using nowcast::testing::random_tensor;

namespace {

using TapeD = Tape<double>;
TapeD* const kNoTape = nullptr;

Tensor<double> tensor_of(Shape s, std::vector<double> v, bool grad = false) {
  return Tensor<double>(s, std::move(v), grad);
}

}  // namespace

TEST(Conv2d, OnesKernelCountsCoveredCells) {
  auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto y = ops::conv2d(kNoTape, x, w, Tensor<double>{}, {.stride = 1, .padding = 1});
  EXPECT_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 2, 2), 4.0);
  EXPECT_EQ(y.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, DiracKernelIsIdentity) {
  Rng rng(3);
  auto x = random_tensor<float>({2, 1, 5, 7}, rng);
  Tensor<float> w({1, 1, 3, 3});
  w.mutable_data()[4] = 1.0f;
  auto y = ops::conv2d(static_cast<Tape<float>*>(nullptr), x, w, Tensor<float>{}, {.padding = 1});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, GroupedMatchesLoopOracle) {
  Rng rng(11);
  auto x = random_tensor<double>({2, 4, 7, 7}, rng);
  auto w = random_tensor<double>({6, 2, 3, 3}, rng);
  auto b = random_tensor<double>({1, 6, 1, 1}, rng);
  auto y = ops::conv2d(kNoTape, x, w, b, {.stride = 1, .padding = 1, .groups = 2});
  auto ref = naive_conv2d(x, w, as_double<double>(b.data()), 1, 1, 2);
  ASSERT_EQ(y.shape(), ref.shape());
  EXPECT_LE(max_rel_err(as_double<double>(y.data()), ref.data()), 1e-6);
}

TEST(Conv2d, AllAlgorithmsAgreeWithOracle) {
  using kernels::ConvAlgorithm;
  struct Case {
    Shape x, w;
    std::size_t stride, pad, groups;
  };
  const std::vector<Case> cases = {
      {{2, 3, 9, 8}, {5, 3, 3, 3}, 1, 1, 1},  {{1, 4, 8, 8}, {4, 1, 3, 3}, 1, 1, 4},
      {{1, 6, 7, 5}, {4, 6, 1, 1}, 1, 0, 1},  {{2, 4, 9, 9}, {6, 2, 3, 3}, 2, 1, 2},
      {{1, 2, 12, 12}, {1, 2, 7, 7}, 1, 3, 1}, {{1, 3, 6, 6}, {3, 3, 5, 5}, 1, 0, 1},
  };
  Rng rng(5);
  for (const auto& c : cases) {
    auto x = random_tensor<float>(c.x, rng);
    auto w = random_tensor<float>(c.w, rng);
    auto b = random_tensor<float>({1, c.w.n, 1, 1}, rng);
    const auto g = kernels::ConvGeometry::make(c.x, c.w, c.stride, c.pad, c.groups);
    const auto ref = naive_conv2d(x, w, as_double<float>(b.data()), c.stride, c.pad, c.groups);
    for (auto algo : {ConvAlgorithm::direct, ConvAlgorithm::im2col, ConvAlgorithm::shifted,
                      ConvAlgorithm::automatic}) {
      if (algo == ConvAlgorithm::shifted && c.stride != 1) continue;
      std::vector<float> out(g.output_shape().numel());
      kernels::conv2d_forward<float>(g, x.data(), w.data(), b.data(), out, algo);
      EXPECT_LE(nowcast::testing::norm_rel_err(as_double<float>(out), ref.data()), 1e-5)
          << "algorithm " << static_cast<int>(algo) << " on " << c.x.str();
    }
  }
}

TEST(Conv2d, DoublePrecisionMatchesOracleElementwise) {
  using kernels::ConvAlgorithm;
  Rng rng(6);
  const Shape xs{2, 6, 9, 9}, ws{6, 3, 3, 3};
  auto x = random_tensor<double>(xs, rng);
  auto w = random_tensor<double>(ws, rng);
  const auto ref = naive_conv2d(x, w, {}, 1, 1, 2);
  const auto g = kernels::ConvGeometry::make(xs, ws, 1, 1, 2);
  for (auto algo : {ConvAlgorithm::direct, ConvAlgorithm::im2col, ConvAlgorithm::shifted}) {
    std::vector<double> out(g.output_shape().numel());
    kernels::conv2d_forward<double>(g, x.data(), w.data(), {}, out, algo);
    EXPECT_LE(max_rel_err(out, ref.data()), 1e-10);
  }
}

TEST(Conv2d, BackwardAlgorithmsAgree) {
  using kernels::ConvAlgorithm;
  Rng rng(8);
  const Shape xs{2, 4, 8, 8}, ws{6, 2, 3, 3};
  const auto g = kernels::ConvGeometry::make(xs, ws, 1, 1, 2);
  auto x = random_tensor<double>(xs, rng);
  auto w = random_tensor<double>(ws, rng);
  auto go = random_tensor<double>(g.output_shape(), rng);
  std::vector<double> gi_ref(xs.numel()), gw_ref(ws.numel());
  kernels::conv2d_backward_input<double>(g, go.data(), w.data(), gi_ref, ConvAlgorithm::direct);
  kernels::conv2d_backward_weight<double>(g, go.data(), x.data(), gw_ref, ConvAlgorithm::direct);
  for (auto algo : {ConvAlgorithm::im2col, ConvAlgorithm::shifted}) {
    std::vector<double> gi(xs.numel()), gw(ws.numel());
    kernels::conv2d_backward_input<double>(g, go.data(), w.data(), gi, algo);
    kernels::conv2d_backward_weight<double>(g, go.data(), x.data(), gw, algo);
    EXPECT_LE(max_rel_err(gi, gi_ref), 1e-12);
    EXPECT_LE(max_rel_err(gw, gw_ref), 1e-12);
  }
}

TEST(Conv2d, RejectsBadGeometry) {
  EXPECT_THROW(kernels::ConvGeometry::make({1, 3, 8, 8}, {4, 2, 3, 3}, 1, 1, 2), DimensionError);
  EXPECT_THROW(kernels::ConvGeometry::make({1, 2, 2, 2}, {1, 2, 5, 5}, 1, 0, 1), DimensionError);
}

TEST(Conv2d, DepthwiseThenPointwiseMatchesTwoStageOracle) {
  Rng rng(21);
  auto x = random_tensor<double>({1, 3, 8, 8}, rng);
  auto dw = random_tensor<double>({3, 1, 3, 3}, rng);
  auto pw = random_tensor<double>({5, 3, 1, 1}, rng);
  auto y = ops::conv2d(kNoTape, ops::conv2d(kNoTape, x, dw, {}, {.padding = 1, .groups = 3}), pw, {});
  auto ref = naive_conv2d(naive_conv2d(x, dw, {}, 1, 1, 3), pw, {}, 1, 0, 1);
  EXPECT_LE(max_rel_err(as_double<double>(y.data()), ref.data()), 1e-6);
}

TEST(Conv2d, ThreadCountDoesNotChangeBits) {
  Rng rng(2);
  auto x = random_tensor<float>({2, 8, 16, 16}, rng);
  auto w = random_tensor<float>({8, 8, 3, 3}, rng);
  Tape<float>* none = nullptr;
  set_num_threads(1);
  auto a = ops::conv2d(none, x, w, {}, {.padding = 1});
  set_num_threads(4);
  auto b = ops::conv2d(none, x, w, {}, {.padding = 1});
  set_num_threads(0);
  ASSERT_TRUE(std::ranges::equal(a.data(), b.data()));
}

TEST(BatchNorm, TrainModeNormalisesPerChannel) {
  Rng rng(4);
  auto x = random_tensor<double>({3, 2, 4, 4}, rng, -3.0, 5.0);
  auto gamma = Tensor<double>::full({1, 2, 1, 1}, 1.0);
  Tensor<double> beta({1, 2, 1, 1}), rm({1, 2, 1, 1});
  auto rv = Tensor<double>::full({1, 2, 1, 1}, 1.0);
  auto y = ops::batch_norm(kNoTape, x, gamma, beta, rm, rv);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) mean += y.at(n, c, i / 4, i % 4);
    mean /= 48;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) sq += std::pow(y.at(n, c, i / 4, i % 4) - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(sq / 48, 1.0, 1e-4);
  }
  EXPECT_NE(rm.data()[0], 0.0);  // running stats updated in place
}

TEST(BatchNorm, ZeroGammaGivesBetaAndNoInputGradient) {
  Rng rng(6);
  auto x = random_tensor<double>({2, 2, 3, 3}, rng, -1.0, 1.0, true);
  Tensor<double> gamma({1, 2, 1, 1}, true);
  auto beta = tensor_of({1, 2, 1, 1}, {0.25, -0.5}, true);
  Tensor<double> rm({1, 2, 1, 1});
  auto rv = Tensor<double>::full({1, 2, 1, 1}, 1.0);
  TapeD tape;
  auto y = ops::batch_norm(&tape, x, gamma, beta, rm, rv);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const std::size_t c = (i / 9) % 2;
    EXPECT_EQ(y.data()[i], beta.data()[c]);
  }
  tape.backward(ops::sum(&tape, y));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(BatchNorm, ChannelMismatchThrows) {
  Tensor<double> x({1, 3, 2, 2});
  Tensor<double> p({1, 2, 1, 1});
  EXPECT_THROW(ops::batch_norm(kNoTape, x, p, p, p, p), DimensionError);
}

TEST(BatchNorm, TrainModeGradientMatchesFiniteDifferences) {
  Rng rng(10);
  auto x = random_tensor<double>({3, 2, 4, 4}, rng, -1.0, 1.0, true);
  auto gamma = random_tensor<double>({1, 2, 1, 1}, rng, 0.5, 1.5, true);
  auto beta = random_tensor<double>({1, 2, 1, 1}, rng, -0.5, 0.5, true);
  Tensor<double> rm({1, 2, 1, 1});
  auto rv = Tensor<double>::full({1, 2, 1, 1}, 1.0);
  const double err = gradient_error(
      {x, gamma, beta}, [&](TapeD* t) { return ops::batch_norm(t, x, gamma, beta, rm, rv); }, 10);
  EXPECT_LE(err, 1e-4);
}

TEST(Elementwise, Examples) {
  auto r = ops::relu(kNoTape, tensor_of({1, 3, 1, 1}, {-1, 0, 2}));
  EXPECT_EQ(as_double<double>(r.data()), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(ops::sigmoid(kNoTape, Tensor<double>({1, 1, 1, 1})).item(), 0.5);

  Rng rng(1);
  auto a = random_tensor<float>({1, 3, 8, 8}, rng);
  auto b = random_tensor<float>({1, 5, 8, 8}, rng);
  Tape<float>* none = nullptr;
  auto c = ops::concat_channels(none, a, b);
  ASSERT_EQ(c.shape(), (Shape{1, 8, 8, 8}));
  auto a2 = ops::slice_channels(none, c, 0, 3);
  auto b2 = ops::slice_channels(none, c, 3, 5);
  EXPECT_TRUE(std::ranges::equal(a2.data(), a.data()));
  EXPECT_TRUE(std::ranges::equal(b2.data(), b.data()));
}

TEST(Elementwise, ShapeMismatchThrows) {
  Tensor<double> a({1, 2, 4, 4}), b({1, 2, 4, 3}), g({1, 3, 1, 1});
  EXPECT_THROW(ops::add(kNoTape, a, b), DimensionError);
  EXPECT_THROW(ops::concat_channels(kNoTape, a, b), DimensionError);
  EXPECT_THROW(ops::mul_broadcast(kNoTape, a, g), DimensionError);
}

TEST(MaxPool, Examples) {
  auto y = ops::max_pool2(kNoTape, tensor_of({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(y.item(), 4.0);
  auto c = ops::max_pool2(kNoTape, Tensor<double>::full({2, 3, 6, 4}, 1.5));
  EXPECT_EQ(c.shape(), (Shape{2, 3, 3, 2}));
  for (double v : c.data()) EXPECT_EQ(v, 1.5);
  EXPECT_THROW(ops::max_pool2(kNoTape, Tensor<double>({1, 1, 3, 4})), DimensionError);
}

TEST(MaxPool, WindowScanOracleAndGradientRouting) {
  Rng rng(12);
  auto x = random_tensor<double>({1, 1, 4, 4}, rng, -1.0, 1.0, true);
  TapeD tape;
  auto y = ops::max_pool2(&tape, x);
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox) {
      double m = -1e300;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x.at(0, 0, 2 * oy + dy, 2 * ox + dx));
      EXPECT_EQ(y.at(0, 0, oy, ox), m);
    }
  auto up = tensor_of({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  tape.backward(ops::masked_sum(&tape, y, up));
  std::size_t nonzero = 0;
  double total = 0;
  for (double g : x.grad()) {
    nonzero += g != 0;
    total += g;
  }
  EXPECT_EQ(nonzero, 4u);
  EXPECT_EQ(total, 10.0);
}

TEST(MaxPool, TiesRouteToFirstElement) {
  auto x = Tensor<double>::full({1, 1, 2, 2}, 7.0, true);
  TapeD tape;
  tape.backward(ops::sum(&tape, ops::max_pool2(&tape, x)));
  EXPECT_EQ(as_double<double>(x.grad()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Upsample, Examples) {
  auto c = ops::upsample_bilinear2(kNoTape, Tensor<double>::full({1, 2, 3, 5}, 2.5));
  EXPECT_EQ(c.shape(), (Shape{1, 2, 6, 10}));
  for (double v : c.data()) EXPECT_EQ(v, 2.5);
  auto one = ops::upsample_bilinear2(kNoTape, Tensor<double>::full({1, 1, 1, 1}, 3.0));
  EXPECT_EQ(as_double<double>(one.data()), (std::vector<double>(4, 3.0)));
  auto ramp = ops::upsample_bilinear2(kNoTape, tensor_of({1, 1, 1, 2}, {0, 1}));
  EXPECT_EQ(as_double<double>(ramp.data()), (std::vector<double>{0, 0.25, 0.75, 1, 0, 0.25, 0.75, 1}));
}

TEST(Upsample, MatchesHalfPixelOracle) {
  Rng rng(13);
  auto x = random_tensor<double>({2, 3, 5, 4}, rng);
  auto y = ops::upsample_bilinear2(kNoTape, x);
  auto ref = nowcast::testing::naive_upsample2(x);
  EXPECT_LE(max_rel_err(as_double<double>(y.data()), ref.data()), 1e-12);
}

TEST(Upsample, PoolThenUpsampleKeepsConstants) {
  auto x = Tensor<double>::full({1, 2, 8, 8}, -0.75);
  auto y = ops::upsample_bilinear2(kNoTape, ops::max_pool2(kNoTape, x));
  EXPECT_TRUE(std::ranges::equal(y.data(), x.data()));
}

TEST(GlobalPool, Examples) {
  using ops::PoolKind;
  using ops::PoolOver;
  auto c = ops::global_pool(kNoTape, Tensor<double>::full({1, 2, 3, 3}, 4.0), PoolKind::avg, PoolOver::space);
  EXPECT_EQ(c.shape(), (Shape{1, 2, 1, 1}));
  EXPECT_EQ(c.data()[0], 4.0);
  auto m = ops::global_pool(kNoTape, tensor_of({1, 2, 1, 2}, {1, 2, 3, 0}), PoolKind::max, PoolOver::channels);
  EXPECT_EQ(as_double<double>(m.data()), (std::vector<double>{3, 2}));

  Rng rng(14);
  auto x = random_tensor<double>({2, 3, 4, 4}, rng);
  auto avg = ops::global_pool(kNoTape, x, PoolKind::avg, PoolOver::space);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double s = 0;
      for (std::size_t i = 0; i < 16; ++i) s += x.at(n, ch, i / 4, i % 4);
      EXPECT_NEAR(avg.at(n, ch, 0, 0), s / 16, 1e-7);
    }
}

TEST(Backward, Examples) {
  Rng rng(15);
  auto x = random_tensor<double>({2, 3, 4, 5}, rng, 0.1, 1.0, true);
  TapeD tape;
  tape.backward(ops::sum(&tape, x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  x.zero_grad();
  TapeD tape2;
  tape2.backward(ops::sum(&tape2, ops::relu(&tape2, ops::scale(&tape2, x, -1.0))));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarLossIsUsageError) {
  auto x = Tensor<double>::full({1, 2, 2, 2}, 1.0, true);
  TapeD tape;
  auto y = ops::relu(&tape, x);
  EXPECT_THROW(tape.backward(y), UsageError);
}

TEST(Backward, SecondCallAccumulatesLeafGradients) {
  auto x = Tensor<double>::full({1, 1, 2, 2}, 1.0, true);
  TapeD tape;
  auto loss = ops::sum(&tape, ops::scale(&tape, x, 3.0));
  tape.backward(loss);
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_EQ(g, 6.0);
}

TEST(Backward, VisitsEveryRecordedOpOnce) {
  Rng rng(16);
  auto x = random_tensor<double>({1, 2, 4, 4}, rng, -1.0, 1.0, true);
  auto w = random_tensor<double>({2, 2, 3, 3}, rng, -1.0, 1.0, true);
  TapeD tape;
  auto h = ops::relu(&tape, ops::conv2d(&tape, x, w, {}, {.padding = 1}));
  auto loss = ops::sum(&tape, ops::max_pool2(&tape, ops::add(&tape, h, x)));
  EXPECT_EQ(tape.size(), 5u);
  tape.backward(loss);
  EXPECT_EQ(tape.last_visit_count(), tape.size());
}

TEST(Backward, UntrackedInputsRecordNothing) {
  Tensor<double> x({1, 1, 2, 2});
  TapeD tape;
  ops::relu(&tape, x);
  EXPECT_EQ(tape.size(), 0u);
}

// Every differentiable op against central differences on ten seeds.
class OpGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradient, ElementwiseAndShapeOps) {
  const std::uint64_t seed = GetParam();
  Rng rng(seed);
  auto a = random_tensor<double>({2, 3, 4, 4}, rng, -1.0, 1.0, true);
  auto b = random_tensor<double>({2, 3, 4, 4}, rng, -1.0, 1.0, true);
  auto gate_c = random_tensor<double>({2, 3, 1, 1}, rng, -1.0, 1.0, true);
  auto gate_s = random_tensor<double>({2, 1, 4, 4}, rng, -1.0, 1.0, true);
  // keep relu and max inputs away from their kinks
  for (auto& v : a.mutable_data()) v += v > 0 ? 0.05 : -0.05;

  EXPECT_LE(gradient_error({a}, [&](TapeD* t) { return ops::relu(t, a); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a}, [&](TapeD* t) { return ops::sigmoid(t, a); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a, b}, [&](TapeD* t) { return ops::add(t, a, b); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a, gate_c}, [&](TapeD* t) { return ops::mul_broadcast(t, a, gate_c); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a, gate_s}, [&](TapeD* t) { return ops::mul_broadcast(t, a, gate_s); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a, b}, [&](TapeD* t) { return ops::concat_channels(t, a, b); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a}, [&](TapeD* t) { return ops::slice_channels(t, a, 1, 2); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a}, [&](TapeD* t) { return ops::max_pool2(t, a); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a}, [&](TapeD* t) { return ops::upsample_bilinear2(t, a); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a}, [&](TapeD* t) { return ops::scale(t, a, 2.5); }, seed), 1e-4);
  EXPECT_LE(gradient_error({a, b}, [&](TapeD* t) { return ops::mse(t, a, b); }, seed), 1e-4);
  for (auto kind : {ops::PoolKind::avg, ops::PoolKind::max})
    for (auto over : {ops::PoolOver::space, ops::PoolOver::channels})
      EXPECT_LE(gradient_error({a}, [&](TapeD* t) { return ops::global_pool(t, a, kind, over); }, seed), 1e-4);
}

TEST_P(OpGradient, ConvolutionAndBatchNorm) {
  const std::uint64_t seed = GetParam();
  Rng rng(seed + 50);
  auto x = random_tensor<double>({2, 4, 7, 7}, rng, -1.0, 1.0, true);
  auto w = random_tensor<double>({6, 2, 3, 3}, rng, -1.0, 1.0, true);
  auto bias = random_tensor<double>({1, 6, 1, 1}, rng, -1.0, 1.0, true);
  auto dw = random_tensor<double>({4, 1, 3, 3}, rng, -1.0, 1.0, true);
  EXPECT_LE(gradient_error({x, w, bias}, [&](TapeD* t) {
              return ops::conv2d(t, x, w, bias, {.stride = 1, .padding = 1, .groups = 2});
            }, seed), 1e-4);
  EXPECT_LE(gradient_error({x, w}, [&](TapeD* t) {
              return ops::conv2d(t, x, w, {}, {.stride = 2, .padding = 1, .groups = 2});
            }, seed), 1e-4);
  EXPECT_LE(gradient_error({x, dw}, [&](TapeD* t) {
              return ops::conv2d(t, x, dw, {}, {.padding = 1, .groups = 4});
            }, seed), 1e-4);

  auto gamma = random_tensor<double>({1, 4, 1, 1}, rng, 0.5, 1.5, true);
  auto beta = random_tensor<double>({1, 4, 1, 1}, rng, -0.5, 0.5, true);
  Tensor<double> rm({1, 4, 1, 1});
  auto rv = Tensor<double>::full({1, 4, 1, 1}, 1.0);
  EXPECT_LE(gradient_error({x, gamma, beta}, [&](TapeD* t) {
              return ops::batch_norm(t, x, gamma, beta, rm, rv);
            }, seed), 1e-3);
  EXPECT_LE(gradient_error({x, gamma, beta}, [&](TapeD* t) {
              return ops::batch_norm(t, x, gamma, beta, rm, rv, {.mode = ops::BatchNormMode::eval});
            }, seed), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, OpGradient, ::testing::Range<std::uint64_t>(0, 10));

TEST(Resize, MatchesUpsampleForDoubling) {
  Rng rng(17);
  auto x = random_tensor<double>({1, 2, 3, 4}, rng);
  auto a = ops::resize_bilinear(x, 6, 8);
  auto b = ops::upsample_bilinear2(kNoTape, x);
  EXPECT_LE(max_rel_err(as_double<double>(a.data()), as_double<double>(b.data())), 1e-12);
}

TEST(TensorBasics, RejectsBadConstruction) {
  EXPECT_THROW(Tensor<float>(Shape{1, 0, 2, 2}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), DimensionError);
  EXPECT_THROW(Tensor<double>(Shape{1, 1, 1, 1}, std::vector<double>{std::nan("")}), NumericError);
}
