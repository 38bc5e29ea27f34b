#pragma once

#include <vector>

#include "metapi/ctc.hpp"
#include "metapi/layers.hpp"
#include "metapi/training.hpp"

namespace metapi {

struct CharLmConfig {
  std::size_t hidden = 64;
  TrainConfig train{.epochs = 10, .lr = 0.1, .momentum = 0.9, .dropout = 0.0, .batch_size = 32};
};

// Left-to-right LSTM over one-hot units with a softmax over the whole
// inventory. The blank id doubles as the start symbol; no end symbol is
// modelled. The output layer starts at zero, so an untrained model is
// exactly uniform.
class CharLm : public IncrementalLm {
 public:
  CharLm() = default;
  CharLm(std::size_t units, std::size_t hidden);

  void init(const Rng& rng);

  LmState initial() const override;
  LmState advance(const LmState& state, int unit) const override;

  // Summed next-unit NLL of the sequences under teacher forcing; with_grad
  // accumulates d(sum / tokens)/d(params).
  double batch_nll(const std::vector<LabelSeq>& seqs, bool with_grad, std::size_t* tokens = nullptr);

  void collect(ParameterSet<double>& ps);

  std::size_t units() const { return head.out_dim(); }
  std::size_t hidden() const { return rnn.hidden(); }

  Lstm<double> rnn;
  Dense<double> head;

 private:
  LmState from_hidden(Mat<double> h, Mat<double> c) const;
  void check_unit(int unit) const;
};

struct LmReport {
  std::vector<EpochMetrics> epochs;
  double initial_perplexity = 0;
  double heldout_perplexity = 0;
};

// Throws ConfigError on an empty training set.
CharLm train_lm(const std::vector<LabelSeq>& train, const std::vector<LabelSeq>& heldout,
                std::size_t units, const CharLmConfig& config, LmReport* report = nullptr,
                const EpochCallback& on_epoch = {},
                const CheckpointHook<CharLm>& checkpoint = {});

// Sum of log p(u_t | u_<t) by incremental evaluation; 0 for an empty prefix.
double lm_logprob(const CharLm& lm, const LabelSeq& prefix);

// exp(mean next-unit NLL) over all units of the sequences.
double perplexity(CharLm& lm, const std::vector<LabelSeq>& seqs);

}  // namespace metapi
