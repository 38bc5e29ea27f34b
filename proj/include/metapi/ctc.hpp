#pragma once

#include <limits>
#include <span>
#include <vector>

#include "metapi/tensor.hpp"

namespace metapi {

// Blank occupies column 0 of every posterior matrix.
inline constexpr int kBlank = 0;

using LabelSeq = std::vector<int>;

struct CtcResult {
  double loss = 0;
  // d(loss)/d(log_posteriors) treating every entry as a free input.
  Mat<double> grad;
};

// Negative log-probability of `target` under frame log-posteriors
// (T x C, blank in column 0), by forward-backward over the blank-interleaved
// label lattice. Throws AlignmentError when T frames cannot hold the target
// (L labels plus one separating blank per adjacent repeat).
CtcResult ctc_loss(const Mat<double>& log_posteriors, std::span<const int> target);

// Frames needed to emit `target`.
std::size_t ctc_min_frames(std::span<const int> target);

// Merges adjacent repeats, then removes blanks.
LabelSeq collapse(std::span<const int> path);

// Per-frame argmax path, lowest id on ties.
LabelSeq best_path(const Mat<double>& log_posteriors);

inline LabelSeq greedy_decode(const Mat<double>& log_posteriors) {
  return collapse(best_path(log_posteriors));
}

// Recurrent state of a left-to-right unit LM, with the log-distribution
// over the next unit already evaluated.
struct LmState {
  Mat<double> h;
  Mat<double> c;
  std::vector<double> next_log_probs;
};

class IncrementalLm {
 public:
  virtual ~IncrementalLm() = default;
  virtual LmState initial() const = 0;
  virtual LmState advance(const LmState& state, int unit) const = 0;
};

struct BeamOptions {
  int beam = 16;
  double lm_weight = 0.5;
};

// Prefix beam search with shallow LM fusion. Hypotheses are (prefix, ends in
// blank) states with merged alignment mass; they are ranked by
// log p_ctc(state) + lm_weight * log p_lm(prefix) and the best `beam` states
// survive each frame. Beam width 1 therefore follows the best path, and an
// unpruned beam yields the exact most probable labeling. `lm` may be null
// when lm_weight is 0.
LabelSeq beam_decode(const Mat<double>& log_posteriors, const IncrementalLm* lm,
                     const BeamOptions& options);

struct ScoredLabeling {
  LabelSeq labels;
  double ctc_log_prob = -std::numeric_limits<double>::infinity();
  double lm_log_prob = 0;
  double score = -std::numeric_limits<double>::infinity();
};

ScoredLabeling beam_decode_scored(const Mat<double>& log_posteriors, const IncrementalLm* lm,
                                  const BeamOptions& options);

}  // namespace metapi
