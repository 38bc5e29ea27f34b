#include <gtest/gtest.h>

#include <cmath>

#include "metapi/ctc.hpp"
#include "oracles.hpp"

using namespace metapi;
using oracle::random_log_posteriors;

namespace {

// All label sequences over units 1..C-1 of length <= max_len.
std::vector<LabelSeq> all_labelings(std::size_t C, std::size_t max_len) {
  std::vector<LabelSeq> out{{}};
  std::vector<LabelSeq> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<LabelSeq> next;
    for (const auto& s : frontier) {
      for (int u = 1; u < static_cast<int>(C); ++u) {
        auto t = s;
        t.push_back(u);
        next.push_back(t);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

// Forbids one unit, uniform over the rest.
class ForbiddingLm : public IncrementalLm {
 public:
  ForbiddingLm(std::size_t units, int banned) : units_(units), banned_(banned) {}
  LmState initial() const override {
    LmState s;
    s.next_log_probs.assign(units_, -std::log(static_cast<double>(units_ - 1)));
    s.next_log_probs[static_cast<std::size_t>(banned_)] = -INFINITY;
    return s;
  }
  LmState advance(const LmState&, int) const override { return initial(); }

 private:
  std::size_t units_;
  int banned_;
};

Mat<double> posteriors_from_argmax(const std::vector<int>& path, std::size_t C) {
  Mat<double> lp = Mat<double>::Constant(static_cast<Eigen::Index>(path.size()), static_cast<Eigen::Index>(C), std::log(0.1));
  for (std::size_t t = 0; t < path.size(); ++t) lp(static_cast<Eigen::Index>(t), path[t]) = std::log(0.9);
  return lp;
}

}  // namespace

TEST(CtcLoss, SingleFrameSinglePath) {
  Mat<double> lp(1, 2);
  lp << std::log(0.1), std::log(0.9);
  const LabelSeq target{1};
  EXPECT_NEAR(ctc_loss(lp, target).loss, -std::log(0.9), 1e-12);
}

TEST(CtcLoss, UniformThreeFramesMatchesEnumeration) {
  Mat<double> lp = Mat<double>::Constant(3, 3, -std::log(3.0));
  const LabelSeq target{1, 2};
  // paths collapsing to [a,b]: ab-, a-b, -ab, aab, abb -> 5 of 27
  EXPECT_NEAR(oracle::ctc_neg_log_prob(lp, target), -std::log(5.0 / 27.0), 1e-12);
  EXPECT_NEAR(ctc_loss(lp, target).loss, -std::log(5.0 / 27.0), 1e-12);
}

TEST(CtcLoss, MatchesBruteForceOnAllTinyInstances) {
  Rng rng(1);
  for (std::size_t T = 1; T <= 4; ++T) {
    for (std::size_t C = 2; C <= 3; ++C) {
      for (int trial = 0; trial < 5; ++trial) {
        const auto lp = random_log_posteriors(rng, T, C);
        for (const auto& target : all_labelings(C, T)) {
          if (ctc_min_frames(target) > T) {
            EXPECT_THROW(ctc_loss(lp, target), AlignmentError);
            continue;
          }
          EXPECT_NEAR(ctc_loss(lp, target).loss, oracle::ctc_neg_log_prob(lp, target), 1e-9);
        }
      }
    }
  }
}

TEST(CtcLoss, FeasibleLabelingsSumToOne) {
  Rng rng(2);
  for (std::size_t T = 1; T <= 4; ++T) {
    for (std::size_t C = 2; C <= 3; ++C) {
      const auto lp = random_log_posteriors(rng, T, C);
      double total = 0;
      for (const auto& target : all_labelings(C, T)) {
        if (ctc_min_frames(target) <= T) total += std::exp(-ctc_loss(lp, target).loss);
      }
      EXPECT_NEAR(total, 1.0, 1e-9) << "T=" << T << " C=" << C;
    }
  }
}

TEST(CtcLoss, EmptyTargetIsTheAllBlankPath) {
  Rng rng(3);
  const auto lp = random_log_posteriors(rng, 4, 3);
  EXPECT_NEAR(ctc_loss(lp, LabelSeq{}).loss, -lp.col(0).sum(), 1e-12);
}

TEST(CtcLoss, InfeasibleAndInvalidTargets) {
  Mat<double> lp = Mat<double>::Constant(2, 3, -std::log(3.0));
  EXPECT_THROW(ctc_loss(lp, LabelSeq{1, 1}), AlignmentError);   // repeat needs a blank between
  EXPECT_THROW(ctc_loss(lp, LabelSeq{1, 2, 1}), AlignmentError);
  EXPECT_NO_THROW(ctc_loss(lp, LabelSeq{1, 2}));
  EXPECT_THROW(ctc_loss(lp, LabelSeq{3}), DimensionError);
  EXPECT_THROW(ctc_loss(lp, LabelSeq{0}), DimensionError);
  EXPECT_EQ(ctc_min_frames(LabelSeq{1, 1, 2, 2}), 6u);
  EXPECT_EQ(ctc_min_frames(LabelSeq{}), 0u);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const auto lp = random_log_posteriors(rng, 6, 4);
  const LabelSeq target{1, 3, 3};
  const auto res = ctc_loss(lp, target);
  const double eps = 1e-5;
  for (Eigen::Index i = 0; i < lp.size(); ++i) {
    Mat<double> up = lp, down = lp;
    up.data()[i] += eps;
    down.data()[i] -= eps;
    const double numeric = (ctc_loss(up, target).loss - ctc_loss(down, target).loss) / (2 * eps);
    const double a = res.grad.data()[i];
    EXPECT_LE(std::abs(a - numeric) / std::max(1.0, std::abs(a)), 1e-4);
  }
}

TEST(CtcLoss, PermutationCovariant) {
  Rng rng(5);
  const auto lp = random_log_posteriors(rng, 5, 4);
  const std::vector<int> perm{0, 3, 1, 2};  // blank stays put
  Mat<double> permuted(lp.rows(), lp.cols());
  for (int c = 0; c < 4; ++c) permuted.col(perm[c]) = lp.col(c);
  const LabelSeq target{1, 2, 2};
  LabelSeq relabeled;
  for (int u : target) relabeled.push_back(perm[static_cast<std::size_t>(u)]);
  EXPECT_NEAR(ctc_loss(lp, target).loss, ctc_loss(permuted, relabeled).loss, 1e-12);
}

TEST(Collapse, Examples) {
  EXPECT_EQ(collapse(std::vector<int>{1, 1, 1}), (LabelSeq{1}));
  EXPECT_EQ(collapse(std::vector<int>{1, 0, 1}), (LabelSeq{1, 1}));
  EXPECT_EQ(collapse(std::vector<int>{}), (LabelSeq{}));
}

TEST(Collapse, IdentityOnBlankFreeRepeatFreeInput) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> seq;
    for (std::size_t n = rng.below(10); seq.size() < n;) {
      const int u = 1 + static_cast<int>(rng.below(3));
      if (seq.empty() || seq.back() != u) seq.push_back(u);
    }
    EXPECT_EQ(collapse(seq), seq);
  }
}

TEST(GreedyDecode, HandExamples) {
  // a=1, b=2
  EXPECT_EQ(greedy_decode(posteriors_from_argmax({1, 1, 0, 1, 2}, 3)), (LabelSeq{1, 1, 2}));
  EXPECT_EQ(greedy_decode(posteriors_from_argmax({0, 0, 0}, 3)), (LabelSeq{}));
  EXPECT_EQ(greedy_decode(posteriors_from_argmax({0, 2, 2, 0, 2}, 3)), (LabelSeq{2, 2}));
}

TEST(GreedyDecode, TiesGoToLowestId) {
  Mat<double> lp = Mat<double>::Constant(2, 3, std::log(1.0 / 3));
  EXPECT_EQ(best_path(lp), (LabelSeq{0, 0}));
}

TEST(GreedyDecode, EqualsCollapseOfArgmax) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto lp = random_log_posteriors(rng, 1 + rng.below(12), 2 + rng.below(5));
    std::vector<int> argmax;
    for (Eigen::Index t = 0; t < lp.rows(); ++t) {
      Eigen::Index best = 0;
      lp.row(t).maxCoeff(&best);
      argmax.push_back(static_cast<int>(best));
    }
    ASSERT_EQ(greedy_decode(lp), oracle::collapse(argmax));
  }
}

TEST(BeamDecode, WidthOneIsGreedy) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const auto lp = random_log_posteriors(rng, 1 + rng.below(15), 2 + rng.below(5));
    ASSERT_EQ(beam_decode(lp, nullptr, {1, 0.0}), greedy_decode(lp));
  }
}

TEST(BeamDecode, ExhaustiveBeamFindsMostProbableLabeling) {
  Rng rng(9);
  for (std::size_t T = 1; T <= 4; ++T) {
    for (std::size_t C = 2; C <= 3; ++C) {
      for (int trial = 0; trial < 20; ++trial) {
        const auto lp = random_log_posteriors(rng, T, C);
        const auto probs = oracle::labeling_probs(lp);
        auto best = std::max_element(probs.begin(), probs.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
        const auto got = beam_decode_scored(lp, nullptr, {1000, 0.0});
        EXPECT_EQ(got.labels, best->first);
        EXPECT_NEAR(got.ctc_log_prob, std::log(best->second), 1e-9);
      }
    }
  }
}

TEST(BeamDecode, UnprunedScoreBoundsEveryNarrowerBeam) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto lp = random_log_posteriors(rng, 6, 4, 1.0);
    const double exhaustive = beam_decode_scored(lp, nullptr, {100000, 0.0}).score;
    for (int beam : {1, 2, 4, 8, 16, 64}) {
      const auto got = beam_decode_scored(lp, nullptr, {beam, 0.0});
      EXPECT_LE(got.score, exhaustive + 1e-12) << "beam " << beam;
      // the reported score is the exact probability of the returned labeling
      EXPECT_NEAR(got.ctc_log_prob, -ctc_loss(lp, got.labels).loss, 1e-12);
    }
  }
}

TEST(BeamDecode, ScoreUsuallyImprovesWithWidth) {
  // Pruned prefix search is not monotone in width on every input; count
  // how often a wider beam does worse on flat posteriors.
  Rng rng(12);
  int worse = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto lp = random_log_posteriors(rng, 8, 4, 1.0);
    double prev = -INFINITY;
    for (int beam : {1, 2, 4, 8, 16, 64}) {
      const double s = beam_decode_scored(lp, nullptr, {beam, 0.0}).score;
      worse += s < prev - 1e-12;
      ++total;
      prev = std::max(prev, s);
    }
  }
  EXPECT_LT(worse, total / 20) << worse << " of " << total;
}

TEST(BeamDecode, ForbiddenUnitNeverAppears) {
  Rng rng(11);
  ForbiddingLm lm(3, 2);
  for (int trial = 0; trial < 100; ++trial) {
    // make unit 2 acoustically the most likely
    Mat<double> lp = random_log_posteriors(rng, 6, 3);
    lp.col(2).array() += 3.0;
    for (Eigen::Index t = 0; t < lp.rows(); ++t) {
      const double m = lp.row(t).maxCoeff();
      lp.row(t).array() -= m + std::log((lp.row(t).array() - m).exp().sum());
    }
    const auto out = beam_decode(lp, &lm, {8, 1.0});
    EXPECT_EQ(std::count(out.begin(), out.end(), 2), 0);
  }
}

TEST(BeamDecode, ArgumentErrors) {
  Mat<double> lp = Mat<double>::Constant(2, 3, std::log(1.0 / 3));
  EXPECT_THROW(beam_decode(lp, nullptr, {0, 0.0}), std::invalid_argument);
  EXPECT_THROW(beam_decode(lp, nullptr, {4, 0.5}), std::invalid_argument);
  ForbiddingLm small(2, 1);
  EXPECT_THROW(beam_decode(lp, &small, {4, 0.5}), DimensionError);
}
