#include <gtest/gtest.h>

#include <cmath>

#include "metapi/layers.hpp"
#include "oracles.hpp"

using namespace metapi;
using oracle::probe_loss;
using oracle::random_batch;

namespace {

// Input values exposed as a parameter so grad_check also covers the
// gradient a layer hands back to its input.
struct InputParam {
  Param<double> p;
  std::vector<std::size_t> lengths;
  std::size_t frames;

  InputParam(const SeqBatch<double>& x)
      : p("input", {x.frames() * x.batch(), x.dim()}), lengths(x.lengths()), frames(x.frames()) {
    p.value.mat() = x.mat();
  }
  SeqBatch<double> batch() const {
    SeqBatch<double> x(frames, p.value.cols(), lengths);
    x.mat() = p.value.mat();
    x.zero_padding();
    return x;
  }
  void accumulate(const SeqBatch<double>& dx) { p.grad.mat() += dx.mat(); }
};

template <class Layer>
void expect_layer_gradients(Layer& layer, const SeqBatch<double>& x, std::size_t out_dim,
                            std::uint64_t seed) {
  Rng rng(seed);
  InputParam in(x);
  ParameterSet<double> ps;
  layer.collect(ps);
  ps.add(in.p);
  const auto weights = random_batch<double>(rng, x.lengths(), out_dim);
  auto f = [&](bool grad) {
    auto y = layer.forward(in.batch());
    const double loss = probe_loss(y, weights);
    if (grad) in.accumulate(layer.backward(weights));
    return loss;
  };
  auto report = grad_check(ps, f, 1e-5, 1e-4);
  EXPECT_TRUE(report.passed) << report.describe();
}

}  // namespace

TEST(Dense, ZeroWeightsGiveBias) {
  Dense<double> d("d", 3, 2);
  d.bias.value[0] = 1.5;
  d.bias.value[1] = -2.0;
  Rng rng(1);
  auto x = random_batch<double>(rng, {4, 2}, 3);
  auto y = d.forward(x);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < x.lengths()[b]; ++t) {
      EXPECT_EQ(y.frame(t, b)(0), 1.5);
      EXPECT_EQ(y.frame(t, b)(1), -2.0);
    }
    for (std::size_t t = x.lengths()[b]; t < y.frames(); ++t) EXPECT_EQ(y.frame(t, b).squaredNorm(), 0.0);
  }
}

TEST(Dense, IdentityWeightsPassThrough) {
  Dense<double> d("d", 3, 3);
  d.weight.value.mat().setIdentity();
  Rng rng(2);
  auto x = random_batch<double>(rng, {3, 1}, 3);
  EXPECT_EQ(d.forward(x).mat(), x.mat());
}

TEST(Dense, WidthMismatchIsAnError) {
  Dense<double> d("d", 3, 2);
  Rng rng(2);
  EXPECT_THROW(d.forward(random_batch<double>(rng, {3}, 4)), DimensionError);
}

TEST(Dense, GradCheck) {
  Dense<double> d("d", 4, 3);
  d.init(Rng(3));
  Rng rng(4);
  expect_layer_gradients(d, random_batch<double>(rng, {3, 2}, 4), 3, 5);
}

TEST(Lstm, ZeroInputZeroParamsGiveZeroOutput) {
  Lstm<double> l("l", 3, 4);
  SeqBatch<double> x(5, 3, {5, 3});
  auto y = l.forward(x);
  EXPECT_EQ(y.mat().squaredNorm(), 0.0);
}

TEST(Lstm, ForgetBiasInitializedToOne) {
  Lstm<double> l("l", 3, 4);
  l.init(Rng(1));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(l.b.value[j], 0.0);          // input gate
    EXPECT_EQ(l.b.value[4 + j], 1.0);      // forget gate
    EXPECT_EQ(l.b.value[8 + j], 0.0);      // output gate
    EXPECT_EQ(l.b.value[12 + j], 0.0);     // candidate
  }
}

TEST(Lstm, SingleFrameWithSaturatedGates) {
  // one input, one cell; gates packed as [input, forget, output, candidate]
  Lstm<double> l("l", 1, 1);
  l.w.value.mat() << 100.0, 0.0, 100.0, 0.5;
  SeqBatch<double> x(1, 1, {1});
  x.frame(0, 0)(0) = 1.0;
  auto y = l.forward(x);
  // i = o = sigmoid(100) == 1 in double, c = i * tanh(0.5), h = o * tanh(c)
  EXPECT_NEAR(y.frame(0, 0)(0), std::tanh(std::tanh(0.5)), 1e-12);
}

TEST(Lstm, TwoFramesByHand) {
  Lstm<double> l("l", 1, 1);
  l.w.value.mat() << 0.3, -0.2, 0.7, 0.9;
  l.u.value.mat() << 0.5, 0.4, -0.6, 0.2;
  l.b.value.mat() << 0.1, 1.0, 0.0, -0.1;
  SeqBatch<double> x(2, 1, {2});
  x.frame(0, 0)(0) = 1.0;
  x.frame(1, 0)(0) = -0.5;
  auto sig = [](double v) { return 1 / (1 + std::exp(-v)); };
  double h = 0, c = 0;
  std::vector<double> expected;
  for (double xv : {1.0, -0.5}) {
    const double i = sig(0.3 * xv + 0.5 * h + 0.1);
    const double f = sig(-0.2 * xv + 0.4 * h + 1.0);
    const double o = sig(0.7 * xv - 0.6 * h);
    const double g = std::tanh(0.9 * xv + 0.2 * h - 0.1);
    c = f * c + i * g;
    h = o * std::tanh(c);
    expected.push_back(h);
  }
  auto y = l.forward(x);
  EXPECT_NEAR(y.frame(0, 0)(0), expected[0], 1e-12);
  EXPECT_NEAR(y.frame(1, 0)(0), expected[1], 1e-12);
}

TEST(Lstm, ReverseEqualsForwardOnReversedSequences) {
  Lstm<double> fwd("l", 3, 4, false), bwd("l", 3, 4, true);
  fwd.init(Rng(7));
  bwd.init(Rng(7));
  Rng rng(8);
  auto x = random_batch<double>(rng, {5, 3, 1}, 3);
  SeqBatch<double> xr = x;
  for (std::size_t b = 0; b < x.batch(); ++b) {
    const auto L = x.lengths()[b];
    for (std::size_t t = 0; t < L; ++t) xr.frame(t, b) = x.frame(L - 1 - t, b);
  }
  auto yb = bwd.forward(x);
  auto yf = fwd.forward(xr);
  for (std::size_t b = 0; b < x.batch(); ++b) {
    const auto L = x.lengths()[b];
    for (std::size_t t = 0; t < L; ++t) {
      EXPECT_NEAR((yb.frame(t, b) - yf.frame(L - 1 - t, b)).norm(), 0.0, 1e-14);
    }
    for (std::size_t t = L; t < x.frames(); ++t) EXPECT_EQ(yb.frame(t, b).squaredNorm(), 0.0);
  }
}

TEST(Lstm, StepMatchesForward) {
  Lstm<double> l("l", 3, 4);
  l.init(Rng(2));
  Rng rng(3);
  auto x = random_batch<double>(rng, {4}, 3);
  auto y = l.forward(x);
  Mat<double> h = Mat<double>::Zero(1, 4), c = Mat<double>::Zero(1, 4);
  for (std::size_t t = 0; t < 4; ++t) {
    Mat<double> pre = x.frame(t, 0) * l.w.value.mat();
    l.step(pre, h, c);
    EXPECT_NEAR((h - y.frame(t, 0)).norm(), 0.0, 1e-13);
  }
}

TEST(Lstm, GradCheckFiveFrames) {
  for (bool reverse : {false, true}) {
    Lstm<double> l("l", 3, 4, reverse);
    l.init(Rng(1));
    Rng rng(1);
    expect_layer_gradients(l, random_batch<double>(rng, {5}, 3), 4, 1);
  }
}

TEST(Lstm, GradCheckPaddedBatch) {
  Lstm<double> l("l", 2, 3, true);
  l.init(Rng(5));
  Rng rng(6);
  expect_layer_gradients(l, random_batch<double>(rng, {4, 2, 3}, 2), 3, 7);
}

TEST(Lstm, LengthBeyondFramesIsAnError) {
  EXPECT_THROW(SeqBatch<double>(3, 2, {4}), DimensionError);
}

TEST(Merge, PairwiseMaxIsIdempotent) {
  Rng rng(1);
  auto x = random_batch<double>(rng, {3, 2}, 4);
  EXPECT_EQ(merge_directions(x, x, Merge::pairwise_max).mat(), x.mat());
}

TEST(Merge, PairwiseSumByHand) {
  SeqBatch<double> a(1, 2, {1}), b(1, 2, {1});
  a.frame(0, 0) << 1, -2;
  b.frame(0, 0) << 3, 4;
  auto y = merge_directions(a, b, Merge::pairwise_sum);
  EXPECT_EQ(y.frame(0, 0)(0), 4);
  EXPECT_EQ(y.frame(0, 0)(1), 2);
}

TEST(Merge, ConcatDoublesWidth) {
  Rng rng(1);
  auto a = random_batch<double>(rng, {2}, 5);
  auto b = random_batch<double>(rng, {2}, 5);
  auto y = merge_directions(a, b, Merge::concat);
  EXPECT_EQ(y.dim(), 10u);
  EXPECT_EQ(y.frame(1, 0).head(5), a.frame(1, 0));
  EXPECT_EQ(y.frame(1, 0).tail(5), b.frame(1, 0));
}

TEST(Merge, ShapeMismatchIsAnError) {
  Rng rng(1);
  auto a = random_batch<double>(rng, {2}, 5);
  auto b = random_batch<double>(rng, {2}, 4);
  EXPECT_THROW(merge_directions(a, b, Merge::pairwise_sum), DimensionError);
  EXPECT_THROW(merge_from_string("mean"), DimensionError);
}

TEST(Merge, Properties) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_batch<double>(rng, {3, 2}, 4);
    auto b = random_batch<double>(rng, {3, 2}, 4);
    auto mx = merge_directions(a, b, Merge::pairwise_max);
    EXPECT_TRUE((mx.mat().array() >= a.mat().array()).all());
    EXPECT_TRUE((mx.mat().array() >= b.mat().array()).all());
    EXPECT_EQ(merge_directions(a, b, Merge::pairwise_sum).mat(),
              merge_directions(b, a, Merge::pairwise_sum).mat());
  }
}

TEST(BiLstm, GradCheckEveryMerge) {
  for (auto merge : {Merge::concat, Merge::pairwise_max, Merge::pairwise_sum}) {
    BiLstm<double> l("bi", 3, 4, merge);
    l.init(Rng(2));
    Rng rng(3);
    expect_layer_gradients(l, random_batch<double>(rng, {4, 3}, 3), l.out_dim(), 4);
  }
}

TEST(BiLstm, OutputWidth) {
  EXPECT_EQ(BiLstm<double>("a", 3, 5, Merge::concat).out_dim(), 10u);
  EXPECT_EQ(BiLstm<double>("a", 3, 5, Merge::pairwise_max).out_dim(), 5u);
}

TEST(BiLstmStack, GradCheckTwoLayers) {
  BiLstmStack<double> s("stack", 3, 4, 2, Merge::pairwise_max);
  s.init(Rng(4));
  Rng rng(5);
  InputParam in(random_batch<double>(rng, {5, 3}, 3));
  ParameterSet<double> ps;
  s.collect(ps);
  ps.add(in.p);
  auto w = random_batch<double>(rng, {5, 3}, 4);
  auto report = grad_check(ps, [&](bool grad) {
    auto y = s.forward(in.batch());
    if (grad) in.accumulate(s.backward(w));
    return probe_loss(y, w);
  });
  EXPECT_TRUE(report.passed) << report.describe();
}

TEST(BiLstmStack, NoCrossBatchLeakage) {
  BiLstmStack<double> s("stack", 3, 4, 2, Merge::pairwise_max);
  s.init(Rng(1));
  Rng rng(2);
  auto x = random_batch<double>(rng, {5, 2, 4}, 3);
  auto y = s.forward(x);
  const std::vector<std::size_t> perm{2, 0, 1};
  SeqBatch<double> xp(x.frames(), 3, {4, 5, 2});
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t t = 0; t < x.frames(); ++t) xp.frame(t, b) = x.frame(t, perm[b]);
  }
  auto yp = s.forward(xp);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t t = 0; t < x.frames(); ++t) EXPECT_EQ(yp.frame(t, b), y.frame(t, perm[b]));
  }
  // a sequence alone gives the same outputs as inside the batch
  const Mat<double> third = x.sequence(2);
  auto solo = s.forward(SeqBatch<double>::pack({&third}));
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR((solo.frame(t, 0) - y.frame(t, 2)).norm(), 0.0, 1e-12);
}

TEST(Modulate, OnesAreAnIdentityIncludingGradients) {
  Rng rng(1);
  auto acts = random_batch<double>(rng, {3, 2}, 4);
  auto ones = SeqBatch<double>::like(acts, 4);
  ones.mat().setOnes();
  ones.zero_padding();
  EXPECT_EQ(modulate(acts, ones).mat(), acts.mat());
  auto dout = random_batch<double>(rng, {3, 2}, 4);
  SeqBatch<double> dacts, dcodes;
  modulate_backward(acts, ones, dout, &dacts, &dcodes);
  EXPECT_EQ(dacts.mat(), dout.mat());
}

TEST(Modulate, ZerosAnnihilate) {
  Rng rng(2);
  auto acts = random_batch<double>(rng, {3}, 4);
  auto zeros = SeqBatch<double>::like(acts, 4);
  EXPECT_EQ(modulate(acts, zeros).mat().squaredNorm(), 0.0);
  auto dout = SeqBatch<double>::like(acts, 4);
  dout.mat().setOnes();
  SeqBatch<double> dacts, dcodes;
  modulate_backward(acts, zeros, dout, &dacts, &dcodes);
  EXPECT_EQ(dacts.mat().squaredNorm(), 0.0);
  EXPECT_EQ(dcodes.mat(), acts.mat());
}

TEST(Modulate, ShapeMismatchIsAnError) {
  Rng rng(2);
  auto acts = random_batch<double>(rng, {3}, 4);
  EXPECT_THROW(modulate(acts, random_batch<double>(rng, {3}, 5)), DimensionError);
  EXPECT_THROW(modulate(acts, random_batch<double>(rng, {2}, 4)), DimensionError);
}

TEST(Modulate, GradCheckThroughBothProducers) {
  Dense<double> act("act", 3, 4), code("code", 3, 4);
  act.init(Rng(1));
  code.init(Rng(2));
  Rng rng(3);
  auto x = random_batch<double>(rng, {3, 2}, 3);
  auto w = random_batch<double>(rng, {3, 2}, 4);
  ParameterSet<double> ps;
  act.collect(ps);
  code.collect(ps);
  auto report = grad_check(ps, [&](bool grad) {
    auto a = act.forward(x);
    auto c = code.forward(x);
    auto y = modulate(a, c);
    if (grad) {
      SeqBatch<double> da, dc;
      modulate_backward(a, c, w, &da, &dc);
      act.backward(da);
      code.backward(dc);
    }
    return probe_loss(y, w);
  });
  EXPECT_TRUE(report.passed) << report.describe();
}

TEST(Dropout, RateZeroAndEvaluationAreIdentity) {
  Rng rng(1);
  auto x = random_batch<double>(rng, {4, 2}, 3);
  Dropout<double> off(0.0);
  EXPECT_EQ(off.forward(x, true, &rng).mat(), x.mat());
  Dropout<double> d(0.2);
  EXPECT_EQ(d.forward(x, false, nullptr).mat(), x.mat());
}

TEST(Dropout, RateOutOfRange) {
  EXPECT_THROW(Dropout<double>(1.0), std::invalid_argument);
  EXPECT_THROW(Dropout<double>(-0.1), std::invalid_argument);
}

TEST(Dropout, ZeroFractionAndMean) {
  Rng rng(5);
  SeqBatch<double> x(1000, 100, {1000});
  x.mat().setOnes();
  Dropout<double> d(0.2);
  auto y = d.forward(x, true, &rng);
  const double n = static_cast<double>(y.mat().size());
  const double zeros = static_cast<double>((y.mat().array() == 0.0).count());
  EXPECT_NEAR(zeros / n, 0.2, 0.01);
  // survivors are scaled by 1/0.8, so the mean is 1 up to 3 standard errors
  const double sd = std::sqrt(0.2 / 0.8) / std::sqrt(n);
  EXPECT_NEAR(y.mat().mean(), 1.0, 3 * sd);
  EXPECT_TRUE(((y.mat().array() == 0.0) || (y.mat().array() == 1.25)).all());
}

TEST(Dropout, BackwardUsesTheSameMask) {
  Rng rng(6);
  auto x = random_batch<double>(rng, {6}, 5);
  Dropout<double> d(0.5);
  auto y = d.forward(x, true, &rng);
  auto g = d.backward(x);
  EXPECT_EQ(g.mat(), y.mat());
}
