#include "metapi/char_lm.hpp"

#include <cmath>

#include "metapi/corpus.hpp"
#include "metapi/ops.hpp"
#include "metapi/optimizer.hpp"

namespace metapi {

CharLm::CharLm(std::size_t units, std::size_t hidden)
    : rnn("lm.rnn", units, hidden), head("lm.head", hidden, units) {
  if (units < 2) throw DimensionError("character LM needs at least two units");
}

void CharLm::init(const Rng& rng) {
  rnn.init(rng);
  head.weight.value.set_zero();
  head.bias.value.set_zero();
}

void CharLm::check_unit(int unit) const {
  if (unit < 0 || static_cast<std::size_t>(unit) >= units()) {
    throw DimensionError("unit " + std::to_string(unit) + " outside LM inventory of size " +
                         std::to_string(units()));
  }
}

LmState CharLm::from_hidden(Mat<double> h, Mat<double> c) const {
  LmState s;
  Mat<double> logits = h * head.weight.value.mat();
  logits.row(0) += head.bias.value.mat().row(0);
  Mat<double> lp = log_softmax_rows(logits);
  s.next_log_probs.assign(lp.data(), lp.data() + lp.cols());
  s.h = std::move(h);
  s.c = std::move(c);
  return s;
}

LmState CharLm::initial() const {
  Mat<double> h = Mat<double>::Zero(1, static_cast<Eigen::Index>(hidden()));
  Mat<double> c = h;
  rnn.step(rnn.w.value.mat().row(kBlank), h, c);
  return from_hidden(std::move(h), std::move(c));
}

LmState CharLm::advance(const LmState& state, int unit) const {
  check_unit(unit);
  Mat<double> h = state.h, c = state.c;
  rnn.step(rnn.w.value.mat().row(unit), h, c);
  return from_hidden(std::move(h), std::move(c));
}

double CharLm::batch_nll(const std::vector<LabelSeq>& seqs, bool with_grad, std::size_t* tokens) {
  std::vector<std::size_t> lens;
  std::size_t frames = 1;
  for (const auto& s : seqs) {
    for (int u : s) check_unit(u);
    lens.push_back(s.size());
    frames = std::max(frames, s.size());
  }
  // inputs are the sequences shifted right behind the start symbol
  SeqBatch<double> x(frames, units(), lens);
  x.mat().setZero();
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    for (std::size_t t = 0; t < seqs[b].size(); ++t) {
      x.frame(t, b)(t == 0 ? kBlank : seqs[b][t - 1]) = 1.0;
    }
  }
  auto logits = head.forward(rnn.forward(x));
  const Mat<double> lp = log_softmax_rows(logits.mat());
  double nll = 0;
  std::size_t n = 0;
  Mat<double> dlp = Mat<double>::Zero(lp.rows(), lp.cols());
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    for (std::size_t t = 0; t < seqs[b].size(); ++t) {
      const auto row = static_cast<Eigen::Index>(t * seqs.size() + b);
      nll -= lp(row, seqs[b][t]);
      dlp(row, seqs[b][t]) = -1.0;
      ++n;
    }
  }
  if (tokens) *tokens = n;
  if (with_grad && n > 0) {
    SeqBatch<double> dz = SeqBatch<double>::like(logits, logits.dim());
    dz.mat() = log_softmax_backward(lp, Mat<double>(dlp / static_cast<double>(n)));
    dz.zero_padding();
    rnn.backward(head.backward(dz));
  }
  return nll;
}

void CharLm::collect(ParameterSet<double>& ps) {
  rnn.collect(ps);
  head.collect(ps);
}

namespace {

std::vector<std::vector<std::size_t>> lm_batches(const std::vector<LabelSeq>& seqs,
                                                 std::size_t batch_size, BatchOrder order,
                                                 std::uint64_t seed) {
  std::vector<std::size_t> lens;
  for (const auto& s : seqs) lens.push_back(s.size());
  return sort_and_batch(lens, batch_size, order, seed);
}

std::vector<LabelSeq> gather(const std::vector<LabelSeq>& seqs, const std::vector<std::size_t>& idx) {
  std::vector<LabelSeq> out;
  for (auto i : idx) out.push_back(seqs[i]);
  return out;
}

}  // namespace

double perplexity(CharLm& lm, const std::vector<LabelSeq>& seqs) {
  double nll = 0;
  std::size_t tokens = 0;
  for (const auto& idx : lm_batches(seqs, 64, BatchOrder::ascending_length, 0)) {
    std::size_t n = 0;
    nll += lm.batch_nll(gather(seqs, idx), false, &n);
    tokens += n;
  }
  return tokens ? std::exp(nll / static_cast<double>(tokens)) : 1.0;
}

CharLm train_lm(const std::vector<LabelSeq>& train, const std::vector<LabelSeq>& heldout,
                std::size_t units, const CharLmConfig& config, LmReport* report,
                const EpochCallback& on_epoch, const CheckpointHook<CharLm>& checkpoint) {
  std::size_t tokens = 0;
  for (const auto& s : train) tokens += s.size();
  if (tokens == 0) throw ConfigError("LM training needs at least one non-empty transcript");
  CharLm lm(units, config.hidden);
  const Rng root(config.train.seed);
  lm.init(root.substream("lm-init"));
  ParameterSet<double> ps;
  lm.collect(ps);
  NesterovSgd<double> opt(ps, config.train.lr, config.train.momentum);
  PlateauDecay schedule(config.train.lr, config.train.patience, config.train.lr_decay);
  const auto& eval_set = heldout.empty() ? train : heldout;

  LmReport local;
  local.initial_perplexity = perplexity(lm, eval_set);
  for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
    const auto order = epoch == 1 ? BatchOrder::ascending_length : BatchOrder::shuffled;
    double nll = 0;
    std::size_t n_total = 0;
    for (const auto& idx : lm_batches(train, config.train.batch_size, order,
                                      root.substream("lm-shuffle").substream(epoch).bits())) {
      ps.zero_grad();
      std::size_t n = 0;
      nll += lm.batch_nll(gather(train, idx), true, &n);
      n_total += n;
      if (n == 0) continue;
      clip_grad_norm(ps, config.train.clip_norm);
      opt.step();
    }
    EpochMetrics m;
    m.stage = "lm";
    m.epoch = epoch;
    m.train_loss = nll / static_cast<double>(n_total);
    m.heldout_loss = std::log(perplexity(lm, eval_set));
    m.lr = opt.lr();
    m.improved = schedule.observe(m.heldout_loss);
    opt.set_lr(schedule.lr());
    local.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    if (checkpoint) checkpoint(lm, m);
  }
  local.heldout_perplexity = perplexity(lm, eval_set);
  if (report) *report = local;
  return lm;
}

double lm_logprob(const CharLm& lm, const LabelSeq& prefix) {
  if (prefix.empty()) return 0.0;
  double total = 0;
  LmState s = lm.initial();
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (prefix[i] < 0 || static_cast<std::size_t>(prefix[i]) >= lm.units()) {
      throw DimensionError("unit " + std::to_string(prefix[i]) + " outside LM inventory");
    }
    total += s.next_log_probs.at(static_cast<std::size_t>(prefix[i]));
    if (i + 1 < prefix.size()) s = lm.advance(s, prefix[i]);
  }
  return total;
}

}  // namespace metapi
