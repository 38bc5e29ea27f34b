#include "metapi/lang_codes.hpp"

#include <numeric>
#include <set>

#include "metapi/ops.hpp"
#include "metapi/optimizer.hpp"

namespace metapi {

namespace {

template <class T>
Mat<T> affine(const Dense<T>& d, const Mat<T>& x) {
  Mat<T> y = x * d.weight.value.mat();
  y.rowwise() += d.bias.value.mat().row(0);
  return y;
}

// Frames of several utterances as one padded-free sequence.
template <class T>
SeqBatch<T> frame_sequence(const Mat<T>& rows) {
  SeqBatch<T> x(static_cast<std::size_t>(rows.rows()), static_cast<std::size_t>(rows.cols()),
                {static_cast<std::size_t>(rows.rows())});
  x.mat() = rows;
  return x;
}

}  // namespace

// ---------------------------------------------------------------- LID

template <class T>
LfvExtractor<T>::LfvExtractor(std::size_t feat_dim, std::size_t hidden, std::size_t bottleneck,
                              std::size_t post_dim, std::size_t languages)
    : h1("lid.h1", feat_dim, hidden),
      h2("lid.h2", hidden, hidden),
      bn("lid.bottleneck", hidden, bottleneck),
      post("lid.post", bottleneck, post_dim),
      out("lid.out", post_dim, languages),
      languages_(languages),
      post_dim_(post_dim) {
  if (bottleneck >= hidden || bottleneck >= post_dim) {
    throw ConfigError("LID bottleneck must be narrower than its neighbouring layers");
  }
}

template <class T>
void LfvExtractor<T>::init(const Rng& rng) {
  h1.init(rng);
  h2.init(rng);
  bn.init(rng);
  post.init(rng);
  out.init(rng);
  trained = false;
}

template <class T>
SeqBatch<T> LfvExtractor<T>::forward(const SeqBatch<T>& x) {
  if (!has_head_) throw DependencyError("lid", "LID head was discarded; only LFVs are available");
  auto z = abn_.forward(bn.forward(a2_.forward(h2.forward(a1_.forward(h1.forward(x))))));
  auto logits = out.forward(apost_.forward(post.forward(z)));
  SeqBatch<T> lp = SeqBatch<T>::like(logits, logits.dim());
  lp.mat() = log_softmax_rows(logits.mat());
  log_probs_ = lp.mat();
  return lp;
}

template <class T>
void LfvExtractor<T>::backward(const SeqBatch<T>& dlogp) {
  SeqBatch<T> dz = SeqBatch<T>::like(dlogp, dlogp.dim());
  dz.mat() = log_softmax_backward(log_probs_, Mat<T>(dlogp.mat()));
  auto d = post.backward(apost_.backward(out.backward(dz)));
  h1.backward(a1_.backward(h2.backward(a2_.backward(bn.backward(abn_.backward(d))))));
}

template <class T>
SeqBatch<T> LfvExtractor<T>::bottleneck(const SeqBatch<T>& x) const {
  if (x.dim() != feat_dim()) {
    throw DimensionError("LFV extractor expects width " + std::to_string(feat_dim()) + ", got " +
                         std::to_string(x.dim()));
  }
  Mat<T> a = affine(h1, Mat<T>(x.mat())).array().tanh();
  a = affine(h2, a).array().tanh();
  Mat<T> z = affine(bn, a);
  z.array() = (T(1) + (-z.array()).exp()).inverse();
  SeqBatch<T> y = SeqBatch<T>::like(x, lfv_dim());
  y.mat() = z;
  y.zero_padding();
  return y;
}

template <class T>
void LfvExtractor<T>::collect(ParameterSet<T>& ps) {
  h1.collect(ps);
  h2.collect(ps);
  bn.collect(ps);
  if (has_head_) {
    post.collect(ps);
    out.collect(ps);
  }
}

template <class T>
void LfvExtractor<T>::discard_head() {
  has_head_ = false;
  post = Dense<T>();
  out = Dense<T>();
}

template <class T>
double lid_frame_accuracy(LfvExtractor<T>& lid, const std::vector<Utterance>& utts) {
  std::size_t correct = 0, total = 0;
  for (const auto& u : utts) {
    auto lp = lid.forward(frame_sequence<T>(u.features.template cast<T>()));
    for (std::size_t t = 0; t < lp.frames(); ++t) {
      Eigen::Index best;
      lp.frame(t, 0).maxCoeff(&best);
      correct += best == u.language;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

template <class T>
LfvExtractor<T> train_lid(const std::vector<Utterance>& train, const std::vector<Utterance>& heldout,
                          std::size_t languages, const LidConfig& config, LidReport* report,
                          const EpochCallback& on_epoch,
                          const CheckpointHook<LfvExtractor<T>>& checkpoint) {
  std::set<int> present;
  for (const auto& u : train) present.insert(u.language);
  if (present.size() < 2) {
    throw ConfigError("LID training needs at least two languages, found " +
                      std::to_string(present.size()));
  }
  if (train.empty()) throw ConfigError("LID training set is empty");
  for (int l : present) {
    if (l < 0 || static_cast<std::size_t>(l) >= languages) {
      throw DimensionError("language id " + std::to_string(l) + " outside [0, " +
                           std::to_string(languages) + ")");
    }
  }
  const std::size_t D = static_cast<std::size_t>(train.front().features.cols());
  LfvExtractor<T> lid(D, config.hidden, config.bottleneck, config.post, languages);
  const Rng root(config.train.seed);
  lid.init(root.substream("lid-init"));

  ParameterSet<T> ps;
  lid.collect(ps);
  NesterovSgd<T> opt(ps, config.train.lr, config.train.momentum);
  PlateauDecay schedule(config.train.lr, config.train.patience, config.train.lr_decay);

  LidReport local;
  local.chance = 1.0 / static_cast<double>(languages);
  local.initial_accuracy = lid_frame_accuracy(lid, heldout);

  for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
    Rng rng = root.substream("lid-epoch").substream(epoch);
    std::vector<std::pair<std::size_t, Eigen::Index>> picks;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto n = static_cast<std::size_t>(train[i].features.rows());
      for (std::size_t k = 0; k < std::min(n, config.frames_per_utt); ++k) {
        picks.emplace_back(i, static_cast<Eigen::Index>(rng.below(n)));
      }
    }
    rng.shuffle(picks);
    double loss_sum = 0;
    for (std::size_t s = 0; s < picks.size(); s += config.batch_frames) {
      const std::size_t n = std::min(config.batch_frames, picks.size() - s);
      Mat<T> x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(D));
      std::vector<int> y(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto& [ui, row] = picks[s + k];
        x.row(static_cast<Eigen::Index>(k)) = train[ui].features.row(row).template cast<T>();
        y[k] = train[ui].language;
      }
      ps.zero_grad();
      auto lp = lid.forward(frame_sequence(x));
      SeqBatch<T> d = SeqBatch<T>::like(lp, lp.dim());
      d.mat().setZero();
      for (std::size_t k = 0; k < n; ++k) {
        loss_sum -= static_cast<double>(lp.frame(k, 0)(y[k]));
        d.frame(k, 0)(y[k]) = T(-1) / static_cast<T>(n);
      }
      lid.backward(d);
      clip_grad_norm(ps, config.train.clip_norm);
      opt.step();
    }
    // held-out cross-entropy drives the schedule
    double ce = 0;
    std::size_t frames = 0;
    for (const auto& u : heldout) {
      auto lp = lid.forward(frame_sequence<T>(u.features.template cast<T>()));
      for (std::size_t t = 0; t < lp.frames(); ++t) ce -= static_cast<double>(lp.frame(t, 0)(u.language));
      frames += lp.frames();
    }
    EpochMetrics m;
    m.stage = "lid";
    m.epoch = epoch;
    m.train_loss = picks.empty() ? 0.0 : loss_sum / static_cast<double>(picks.size());
    m.heldout_loss = frames ? ce / static_cast<double>(frames) : kNotApplicable;
    m.heldout_accuracy = lid_frame_accuracy(lid, heldout);
    m.lr = opt.lr();
    if (frames) m.improved = schedule.observe(m.heldout_loss);
    local.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    lid.trained = true;
    if (checkpoint) checkpoint(lid, m);
    opt.set_lr(schedule.lr());
  }
  local.heldout_accuracy = lid_frame_accuracy(lid, heldout);
  lid.trained = true;
  if (report) *report = local;
  return lid;
}

template <class T>
SeqBatch<T> extract_lfv(const LfvExtractor<T>& lid, const SeqBatch<T>& features) {
  if (!lid.trained) throw DependencyError("lid", "LFV extraction needs a trained LID network");
  return lid.bottleneck(features);
}

template <class T>
Mat<float> extract_lfv(const LfvExtractor<T>& lid, const Mat<float>& features) {
  auto z = extract_lfv(lid, frame_sequence<T>(features.template cast<T>()));
  return z.mat().template cast<float>();
}

template <class T>
SeqBatch<T> stack_lfv(const SeqBatch<T>& lfv, std::size_t width) {
  const std::size_t d = lfv.dim();
  if (d == 0 || width % d != 0) {
    throw DimensionError("cannot stack LFVs of width " + std::to_string(d) + " to " +
                         std::to_string(width) + ": not a multiple");
  }
  SeqBatch<T> out = SeqBatch<T>::like(lfv, width);
  const auto k = static_cast<Eigen::Index>(width / d);
  const auto di = static_cast<Eigen::Index>(d);
  for (Eigen::Index j = 0; j < k; ++j) out.mat().middleCols(j * di, di) = lfv.mat();
  return out;
}

// ---------------------------------------------------------------- NLC

template <class T>
NlcNet<T>::NlcNet(std::size_t feat_dim, std::size_t lfv_dim, std::size_t hidden, std::size_t width)
    : rnn("nlc.rnn", feat_dim + lfv_dim, hidden, 2, Merge::pairwise_sum),
      out("nlc.out", hidden, width),
      feat_dim_(feat_dim),
      lfv_dim_(lfv_dim) {}

template <class T>
void NlcNet<T>::init(const Rng& rng) {
  rnn.init(rng);
  out.init(rng);
}

template <class T>
SeqBatch<T> NlcNet<T>::forward(const SeqBatch<T>& features, const SeqBatch<T>& lfv) {
  if (!features.same_layout(lfv)) {
    throw DimensionError("NLC: feature and LFV sequences differ in frames or lengths");
  }
  if (features.dim() != feat_dim_ || lfv.dim() != lfv_dim_) {
    throw DimensionError("NLC: expected widths " + std::to_string(feat_dim_) + "+" +
                         std::to_string(lfv_dim_) + ", got " + std::to_string(features.dim()) +
                         "+" + std::to_string(lfv.dim()));
  }
  SeqBatch<T> x = SeqBatch<T>::like(features, feat_dim_ + lfv_dim_);
  x.mat().leftCols(static_cast<Eigen::Index>(feat_dim_)) = features.mat();
  x.mat().rightCols(static_cast<Eigen::Index>(lfv_dim_)) = lfv.mat();
  return out.forward(rnn.forward(x));
}

template <class T>
void NlcNet<T>::backward(const SeqBatch<T>& dcodes) {
  rnn.backward(out.backward(dcodes));
}

template <class T>
void NlcNet<T>::collect(ParameterSet<T>& ps) {
  rnn.collect(ps);
  out.collect(ps);
}

template <class T>
std::vector<NlcExample> nlc_examples(const LfvExtractor<T>& lid, const std::vector<Utterance>& utts) {
  std::vector<NlcExample> out;
  out.reserve(utts.size());
  for (const auto& u : utts) out.push_back({u.features, extract_lfv(lid, u.features)});
  return out;
}

namespace {

template <class T>
std::pair<SeqBatch<T>, SeqBatch<T>> pack_examples(const std::vector<NlcExample>& data,
                                                  const std::vector<std::size_t>& members) {
  std::vector<Mat<T>> f, z;
  for (auto m : members) {
    f.push_back(data[m].features.template cast<T>());
    z.push_back(data[m].lfv.template cast<T>());
  }
  std::vector<const Mat<T>*> pf, pz;
  for (std::size_t i = 0; i < f.size(); ++i) {
    pf.push_back(&f[i]);
    pz.push_back(&z[i]);
  }
  return {SeqBatch<T>::pack(pf), SeqBatch<T>::pack(pz)};
}

std::size_t valid_frames(const std::vector<std::size_t>& lengths) {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

}  // namespace

template <class T>
double nlc_mse(NlcNet<T>& nlc, const std::vector<NlcExample>& data, std::size_t batch_size) {
  std::vector<std::size_t> lens;
  for (const auto& e : data) lens.push_back(static_cast<std::size_t>(e.features.rows()));
  double sse = 0;
  std::size_t count = 0;
  for (const auto& members : sort_and_batch(lens, batch_size, BatchOrder::ascending_length)) {
    auto [f, z] = pack_examples<T>(data, members);
    auto y = nlc.forward(f, z);
    auto target = stack_lfv(z, nlc.width());
    sse += (y.mat() - target.mat()).template cast<double>().squaredNorm();
    count += valid_frames(f.lengths()) * nlc.width();
  }
  return count ? sse / static_cast<double>(count) : 0.0;
}

template <class T>
void pretrain_nlc(NlcNet<T>& nlc, const std::vector<NlcExample>& train,
                  const std::vector<NlcExample>& heldout, const NlcConfig& config,
                  NlcReport* report, const EpochCallback& on_epoch) {
  if (train.empty()) throw ConfigError("NLC pretraining set is empty");
  if (nlc.width() != config.width) {
    throw DimensionError("NLC output width " + std::to_string(nlc.width()) +
                         " differs from configured width " + std::to_string(config.width));
  }
  if (nlc.width() % nlc.lfv_dim() != 0) {
    throw DimensionError("NLC width must be a multiple of the LFV width");
  }
  const std::size_t bs = config.train.batch_size;
  NlcReport local;

  // constant predictor: per-unit mean of the stacked training targets
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(nlc.lfv_dim()));
  double frames = 0;
  for (const auto& e : train) {
    mean += e.lfv.colwise().sum().cast<double>();
    frames += static_cast<double>(e.lfv.rows());
  }
  mean /= std::max(1.0, frames);
  {
    double sse = 0, n = 0;
    for (const auto& e : heldout) {
      sse += (e.lfv.cast<double>().rowwise() - mean).squaredNorm();
      n += static_cast<double>(e.lfv.size());
    }
    local.mean_predictor_mse = n > 0 ? sse / n : 0.0;
  }

  ParameterSet<T> ps;
  nlc.collect(ps);
  NesterovSgd<T> opt(ps, config.train.lr, config.train.momentum);
  PlateauDecay schedule(config.train.lr, config.train.patience, config.train.lr_decay);
  local.initial_train_mse = nlc_mse(nlc, train, bs);
  local.initial_heldout_mse = heldout.empty() ? 0.0 : nlc_mse(nlc, heldout, bs);

  std::vector<std::size_t> lens;
  for (const auto& e : train) lens.push_back(static_cast<std::size_t>(e.features.rows()));
  const Rng root(config.train.seed);
  for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
    const auto order = epoch == 1 ? BatchOrder::ascending_length : BatchOrder::shuffled;
    const auto batches = sort_and_batch(lens, bs, order, root.substream("nlc-shuffle").substream(epoch).bits());
    double sse = 0;
    std::size_t count = 0;
    for (const auto& members : batches) {
      auto [f, z] = pack_examples<T>(train, members);
      ps.zero_grad();
      auto y = nlc.forward(f, z);
      auto target = stack_lfv(z, nlc.width());
      const std::size_t n = valid_frames(f.lengths()) * nlc.width();
      SeqBatch<T> dy = SeqBatch<T>::like(y, y.dim());
      dy.mat() = y.mat() - target.mat();
      sse += dy.mat().template cast<double>().squaredNorm();
      count += n;
      dy.mat() *= T(2) / static_cast<T>(n);
      nlc.backward(dy);
      clip_grad_norm(ps, config.train.clip_norm);
      opt.step();
    }
    EpochMetrics m;
    m.stage = "nlc";
    m.epoch = epoch;
    m.train_loss = sse / static_cast<double>(count);
    m.heldout_loss = heldout.empty() ? kNotApplicable : nlc_mse(nlc, heldout, bs);
    m.lr = opt.lr();
    m.improved = schedule.observe(heldout.empty() ? m.train_loss : m.heldout_loss);
    local.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    opt.set_lr(schedule.lr());
  }
  local.heldout_mse = heldout.empty() ? 0.0 : nlc_mse(nlc, heldout, bs);
  if (report) *report = local;
}

template <class T>
SeqBatch<T> emit_nlc(NlcNet<T>& nlc, const SeqBatch<T>& features, const SeqBatch<T>& lfv) {
  return nlc.forward(features, lfv);
}

#define METAPI_LANG_CODES(T)                                                                      \
  template class LfvExtractor<T>;                                                                 \
  template class NlcNet<T>;                                                                       \
  template LfvExtractor<T> train_lid(const std::vector<Utterance>&, const std::vector<Utterance>&, \
                                     std::size_t, const LidConfig&, LidReport*,                   \
                                     const EpochCallback&, const CheckpointHook<LfvExtractor<T>>&); \
  template double lid_frame_accuracy(LfvExtractor<T>&, const std::vector<Utterance>&);            \
  template SeqBatch<T> extract_lfv(const LfvExtractor<T>&, const SeqBatch<T>&);                   \
  template Mat<float> extract_lfv(const LfvExtractor<T>&, const Mat<float>&);                     \
  template SeqBatch<T> stack_lfv(const SeqBatch<T>&, std::size_t);                                \
  template std::vector<NlcExample> nlc_examples(const LfvExtractor<T>&,                           \
                                                const std::vector<Utterance>&);                   \
  template double nlc_mse(NlcNet<T>&, const std::vector<NlcExample>&, std::size_t);               \
  template void pretrain_nlc(NlcNet<T>&, const std::vector<NlcExample>&,                          \
                             const std::vector<NlcExample>&, const NlcConfig&, NlcReport*,        \
                             const EpochCallback&);                                               \
  template SeqBatch<T> emit_nlc(NlcNet<T>&, const SeqBatch<T>&, const SeqBatch<T>&);

METAPI_LANG_CODES(float)
METAPI_LANG_CODES(double)

}  // namespace metapi
