#include <gtest/gtest.h>

#include <numeric>

#include "fixtures.hpp"
#include "metapi/lang_codes.hpp"
#include "oracles.hpp"

using namespace metapi;

namespace {

struct TwoLanguages : ::testing::Test {
  static void SetUpTestSuite() {
    corpus = new Corpus(build_corpus(fixture::tiny_spec(2, 40, 10)));
    LidConfig cfg;
    cfg.train.epochs = 6;
    lid = new LfvExtractor<double>(
        train_lid<double>(fixture::pick(*corpus, "train"), fixture::pick(*corpus, "test"), 2, cfg, &report));
  }
  static void TearDownTestSuite() {
    delete lid;
    delete corpus;
  }
  static Corpus* corpus;
  static LfvExtractor<double>* lid;
  static LidReport report;
};
Corpus* TwoLanguages::corpus = nullptr;
LfvExtractor<double>* TwoLanguages::lid = nullptr;
LidReport TwoLanguages::report;

SeqBatch<double> one_sequence(const Mat<float>& m) {
  Mat<double> d = m.cast<double>();
  return SeqBatch<double>::pack({&d});
}

}  // namespace

TEST(StackLfv, TilesEveryFrame) {
  Rng rng(1);
  auto lfv = oracle::random_batch<double>(rng, {3, 2}, 8);
  auto s = stack_lfv(lfv, 64);
  ASSERT_EQ(s.dim(), 64u);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < s.frames(); ++t) {
      for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(s.frame(t, b).segment(static_cast<Eigen::Index>(8 * k), 8), lfv.frame(t, b));
      }
    }
  }
}

TEST(StackLfv, SingleTileIsIdentity) {
  Rng rng(2);
  auto lfv = oracle::random_batch<double>(rng, {4}, 8);
  EXPECT_EQ(stack_lfv(lfv, 8).tensor(), lfv.tensor());
}

TEST(StackLfv, WidthMustBeMultiple) {
  Rng rng(3);
  auto lfv = oracle::random_batch<double>(rng, {2}, 4);
  EXPECT_THROW(stack_lfv(lfv, 10), DimensionError);
}

TEST(StackLfv, AveragingTilesRecoversInput) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(6), k = 1 + rng.below(5);
    auto lfv = oracle::random_batch<double>(rng, {1 + rng.below(5), 1 + rng.below(5)}, d);
    auto s = stack_lfv(lfv, d * k);
    for (std::size_t r = 0; r < static_cast<std::size_t>(lfv.mat().rows()); ++r) {
      Eigen::RowVectorXd avg = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(d));
      for (std::size_t j = 0; j < k; ++j) avg += s.mat().row(static_cast<Eigen::Index>(r)).segment(static_cast<Eigen::Index>(j * d), static_cast<Eigen::Index>(d));
      avg /= static_cast<double>(k);
      EXPECT_LT((avg - lfv.mat().row(static_cast<Eigen::Index>(r))).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST_F(TwoLanguages, SeparableLanguagesAreIdentified) {
  EXPECT_GE(report.heldout_accuracy, 0.9);
  EXPECT_DOUBLE_EQ(report.chance, 0.5);
  EXPECT_TRUE(lid->trained);
  EXPECT_TRUE(lid->has_head());
}

TEST_F(TwoLanguages, LfvShapeAndStatelessness) {
  const auto& u = corpus->utterances.front();
  auto z = extract_lfv(*lid, one_sequence(u.features));
  EXPECT_EQ(z.dim(), 8u);
  EXPECT_EQ(z.frames(), u.frames());

  Mat<float> same(5, u.features.cols());
  for (int r = 0; r < 5; ++r) same.row(r) = u.features.row(0);
  auto zs = extract_lfv(*lid, same);
  for (int r = 1; r < 5; ++r) EXPECT_EQ(zs.row(r), zs.row(0));
}

TEST_F(TwoLanguages, PermutingFramesPermutesLfvs) {
  const auto& f = corpus->utterances[3].features;
  std::vector<int> perm(static_cast<std::size_t>(f.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(5);
  rng.shuffle(perm);
  Mat<float> shuffled(f.rows(), f.cols());
  for (std::size_t r = 0; r < perm.size(); ++r) shuffled.row(static_cast<Eigen::Index>(r)) = f.row(perm[r]);
  auto a = extract_lfv(*lid, f);
  auto b = extract_lfv(*lid, shuffled);
  for (std::size_t r = 0; r < perm.size(); ++r) EXPECT_EQ(b.row(static_cast<Eigen::Index>(r)), a.row(perm[r]));
}

TEST_F(TwoLanguages, LfvClassMeansSeparateAlongDiscriminant) {
  std::vector<Eigen::MatrixXd> z(2);
  for (int l = 0; l < 2; ++l) {
    std::vector<Mat<float>> parts;
    Eigen::Index rows = 0;
    for (const auto& u : fixture::pick(*corpus, "test", l)) {
      parts.push_back(extract_lfv(*lid, u.features));
      rows += parts.back().rows();
    }
    z[l].resize(rows, 8);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      z[l].middleRows(at, p.rows()) = p.cast<double>();
      at += p.rows();
    }
  }
  const Eigen::RowVectorXd m0 = z[0].colwise().mean(), m1 = z[1].colwise().mean();
  const Eigen::MatrixXd c0 = z[0].rowwise() - m0, c1 = z[1].rowwise() - m1;
  Eigen::MatrixXd sw = (c0.transpose() * c0 + c1.transpose() * c1) / double(z[0].rows() + z[1].rows() - 2);
  sw += 1e-9 * Eigen::MatrixXd::Identity(8, 8);
  const Eigen::VectorXd w = sw.ldlt().solve((m1 - m0).transpose());
  const Eigen::VectorXd p0 = z[0] * w, p1 = z[1] * w;
  auto var = [](const Eigen::VectorXd& p) { return (p.array() - p.mean()).square().sum(); };
  const double pooled = std::sqrt((var(p0) + var(p1)) / double(p0.size() + p1.size() - 2));
  EXPECT_GE(std::abs(p1.mean() - p0.mean()), 2 * pooled);
}

TEST_F(TwoLanguages, HeadCanBeDiscarded) {
  auto copy = *lid;
  copy.discard_head();
  const auto& u = corpus->utterances.front();
  EXPECT_THROW(copy.forward(one_sequence(u.features)), DependencyError);
  EXPECT_EQ(extract_lfv(copy, u.features), extract_lfv(*lid, u.features));
}

TEST(Lid, FourLanguagesBeatChance) {
  auto corpus = build_corpus(fixture::tiny_spec(4, 30, 10, 7));
  LidConfig cfg;
  cfg.train.epochs = 3;
  cfg.train.seed = 7;
  LidReport report;
  train_lid<double>(fixture::pick(corpus, "train"), fixture::pick(corpus, "test"), 4, cfg, &report);
  EXPECT_GT(report.heldout_accuracy, 0.25);
}

TEST(Lid, SingleLanguageIsAnError) {
  auto corpus = build_corpus(fixture::tiny_spec(2, 10, 2));
  EXPECT_THROW(train_lid<double>(fixture::pick(corpus, "train", 0), {}, 2, LidConfig{}), ConfigError);
}

TEST(Lid, ZeroLearningRateLeavesParameters) {
  auto corpus = build_corpus(fixture::tiny_spec(2, 10, 2));
  LidConfig cfg;
  cfg.train.epochs = 2;
  cfg.train.lr = 0;
  auto lid = train_lid<double>(fixture::pick(corpus, "train"), fixture::pick(corpus, "test"), 2, cfg);
  LfvExtractor<double> fresh(20, cfg.hidden, cfg.bottleneck, cfg.post, 2);
  fresh.init(Rng(cfg.train.seed).substream("lid-init"));
  ParameterSet<double> a, b;
  lid.collect(a);
  fresh.collect(b);
  EXPECT_EQ(fixture::snapshot(a), fixture::snapshot(b));
}

TEST(Lid, UntrainedExtractorIsRefused) {
  LfvExtractor<double> lid(20, 16, 4, 16, 2);
  lid.init(Rng(1));
  EXPECT_THROW(extract_lfv(lid, Mat<float>::Zero(3, 20).eval()), DependencyError);
}

TEST(Lid, BottleneckMustBeNarrow) {
  EXPECT_THROW(LfvExtractor<double>(20, 8, 8, 16, 2), ConfigError);
}

class Nlc : public TwoLanguages {
 protected:
  NlcConfig config(std::size_t epochs, double lr = 0.05) const {
    NlcConfig c;
    c.hidden = 16;
    c.width = 32;
    c.train.epochs = epochs;
    c.train.lr = lr;
    return c;
  }
  NlcNet<double> fresh() const {
    NlcNet<double> n(20, 8, 16, 32);
    n.init(Rng(3));
    return n;
  }
};

TEST_F(Nlc, BeatsMeanPredictorAndImprovesOnInit) {
  auto train = nlc_examples(*lid, fixture::pick(*corpus, "train"));
  auto test = nlc_examples(*lid, fixture::pick(*corpus, "test"));
  auto nlc = fresh();
  NlcReport r;
  pretrain_nlc(nlc, train, test, config(6), &r);
  EXPECT_LT(r.heldout_mse, r.mean_predictor_mse);
  EXPECT_LT(r.epochs.front().train_loss, r.initial_train_mse);
  EXPECT_NEAR(r.heldout_mse, nlc_mse(nlc, test), 1e-12);

  const auto& u = corpus->utterances.front();
  auto f = one_sequence(u.features);
  auto z = extract_lfv(*lid, f);
  auto codes = emit_nlc(nlc, f, z);
  EXPECT_EQ(codes.frames(), u.frames());
  EXPECT_EQ(codes.dim(), 32u);
  const double mse = (codes.mat() - stack_lfv(z, 32).mat()).squaredNorm() / double(codes.mat().size());
  EXPECT_LT(mse, r.mean_predictor_mse);
}

TEST_F(Nlc, ZeroTargetsAreLearned) {
  auto train = nlc_examples(*lid, fixture::pick(*corpus, "train"));
  for (auto& e : train) e.lfv.setZero();
  auto nlc = fresh();
  NlcReport r;
  pretrain_nlc(nlc, train, train, config(30, 0.2), &r);
  EXPECT_LT(r.heldout_mse, 1e-3);
}

TEST_F(Nlc, ZeroLearningRateKeepsMse) {
  auto train = nlc_examples(*lid, fixture::pick(*corpus, "train"));
  auto nlc = fresh();
  NlcReport r;
  pretrain_nlc(nlc, train, train, config(2, 0.0), &r);
  EXPECT_EQ(r.heldout_mse, r.initial_heldout_mse);
}

TEST_F(Nlc, WidthMismatchIsAnError) {
  auto train = nlc_examples(*lid, fixture::pick(*corpus, "train"));
  auto nlc = fresh();
  auto c = config(1);
  c.width = 40;
  EXPECT_THROW(pretrain_nlc(nlc, train, train, c), DimensionError);

  const auto& u = corpus->utterances.front();
  auto f = one_sequence(u.features);
  auto z = stack_lfv(extract_lfv(*lid, f), 16);
  EXPECT_THROW(emit_nlc(nlc, f, z), DimensionError);
}
