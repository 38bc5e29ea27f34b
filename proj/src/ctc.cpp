#include "metapi/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>

#include "metapi/ops.hpp"

namespace metapi {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++n;
  }
  return n;
}

CtcResult ctc_loss(const Mat<double>& lp, std::span<const int> target) {
  const auto frames = static_cast<std::size_t>(lp.rows());
  const auto classes = static_cast<int>(lp.cols());
  check_finite(lp, "ctc_loss log-posteriors");
  for (int u : target) {
    if (u <= kBlank || u >= classes) {
      throw DimensionError("ctc_loss: target unit " + std::to_string(u) + " outside 1.." +
                           std::to_string(classes - 1));
    }
  }
  const std::size_t need = ctc_min_frames(target);
  if (frames == 0 || frames < need) {
    throw AlignmentError("ctc_loss: " + std::to_string(frames) + " frames cannot align a " +
                         std::to_string(target.size()) + "-unit target (needs " +
                         std::to_string(need) + ")");
  }

  const std::size_t S = 2 * target.size() + 1;
  auto label = [&](std::size_t s) { return s % 2 == 0 ? kBlank : target[s / 2]; };
  // skip transition s-2 -> s allowed for non-blank labels differing from s-2
  auto can_skip = [&](std::size_t s) { return s >= 2 && s % 2 == 1 && label(s) != label(s - 2); };

  Mat<double> alpha = Mat<double>::Constant(frames, S, kNegInf);
  Mat<double> beta = Mat<double>::Constant(frames, S, kNegInf);

  alpha(0, 0) = lp(0, kBlank);
  if (S > 1) alpha(0, 1) = lp(0, label(1));
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add_exp(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add_exp(a, alpha(t - 1, s - 2));
      if (a != kNegInf) alpha(t, s) = a + lp(t, label(s));
    }
  }

  const std::size_t last = frames - 1;
  beta(last, S - 1) = lp(last, label(S - 1));
  if (S > 1) beta(last, S - 2) = lp(last, label(S - 2));
  for (std::size_t t = last; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = log_add_exp(b, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = log_add_exp(b, beta(t + 1, s + 2));
      if (b != kNegInf) beta(t, s) = b + lp(t, label(s));
    }
  }

  double log_z = alpha(last, S - 1);
  if (S > 1) log_z = log_add_exp(log_z, alpha(last, S - 2));
  if (!std::isfinite(log_z)) throw NumericError("ctc_loss: target has zero probability");

  CtcResult out;
  out.loss = -log_z;
  out.grad = Mat<double>::Zero(frames, classes);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      const double ab = alpha(t, s) + beta(t, s);
      if (ab == kNegInf) continue;
      const int k = label(s);
      out.grad(t, k) -= std::exp(ab - lp(t, k) - log_z);
    }
  }
  return out;
}

LabelSeq collapse(std::span<const int> path) {
  LabelSeq out;
  int prev = -1;
  for (int u : path) {
    if (u != prev && u != kBlank) out.push_back(u);
    prev = u;
  }
  return out;
}

LabelSeq best_path(const Mat<double>& lp) {
  LabelSeq path(static_cast<std::size_t>(lp.rows()));
  for (Eigen::Index t = 0; t < lp.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < lp.cols(); ++k) {
      if (lp(t, k) > lp(t, best)) best = k;
    }
    path[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return path;
}

namespace {

struct HypKey {
  LabelSeq prefix;
  bool ends_blank;
  auto operator<=>(const HypKey&) const = default;
};

struct Hyp {
  double ctc = kNegInf;
  // Lowest unit emitted at the current frame among merged alignments; breaks
  // score ties the same way best_path does.
  int frame_unit = 0;
};

struct LmNode {
  LmState state;
  double log_prob = 0;
};

class LmCache {
 public:
  LmCache(const IncrementalLm* lm) : lm_(lm) {
    if (lm_) nodes_[{}] = LmNode{lm_->initial(), 0.0};
  }

  // log p_lm(prefix + unit) = log p_lm(prefix) + increment
  double extended(const LabelSeq& prefix, int unit) const {
    if (!lm_) return 0;
    const LmNode& n = nodes_.at(prefix);
    const auto& next = n.state.next_log_probs;
    if (unit < 0 || static_cast<std::size_t>(unit) >= next.size()) {
      throw DimensionError("beam_decode: unit " + std::to_string(unit) + " outside LM inventory");
    }
    return n.log_prob + next[static_cast<std::size_t>(unit)];
  }

  double of(const LabelSeq& prefix) const { return lm_ ? nodes_.at(prefix).log_prob : 0.0; }

  void ensure(const LabelSeq& prefix) {
    if (!lm_ || nodes_.count(prefix)) return;
    LabelSeq parent(prefix.begin(), prefix.end() - 1);
    ensure(parent);
    const LmNode& p = nodes_.at(parent);
    const int unit = prefix.back();
    LmNode n{lm_->advance(p.state, unit),
             p.log_prob + p.state.next_log_probs[static_cast<std::size_t>(unit)]};
    nodes_.emplace(prefix, std::move(n));
  }

 private:
  const IncrementalLm* lm_;
  std::map<LabelSeq, LmNode> nodes_;
};

}  // namespace

ScoredLabeling beam_decode_scored(const Mat<double>& lp, const IncrementalLm* lm,
                                  const BeamOptions& options) {
  if (options.beam < 1) throw std::invalid_argument("beam_decode: beam must be >= 1");
  if (options.lm_weight != 0.0 && !lm) {
    throw std::invalid_argument("beam_decode: lm_weight > 0 requires a language model");
  }
  check_finite(lp, "beam_decode log-posteriors");
  const IncrementalLm* active_lm = options.lm_weight != 0.0 ? lm : nullptr;
  const double weight = options.lm_weight;
  LmCache cache(active_lm);

  std::map<HypKey, Hyp> beam;
  beam[{LabelSeq{}, true}] = Hyp{0.0, 0};

  const int classes = static_cast<int>(lp.cols());
  for (Eigen::Index t = 0; t < lp.rows(); ++t) {
    std::map<HypKey, Hyp> next;
    std::map<HypKey, double> lm_score;
    auto add = [&](HypKey key, double mass, int unit, double lm_lp) {
      auto [it, fresh] = next.try_emplace(std::move(key));
      if (fresh) {
        it->second = Hyp{mass, unit};
        lm_score[it->first] = lm_lp;
      } else {
        it->second.ctc = log_add_exp(it->second.ctc, mass);
        it->second.frame_unit = std::min(it->second.frame_unit, unit);
      }
    };
    for (const auto& [key, hyp] : beam) {
      const double base_lm = cache.of(key.prefix);
      add(HypKey{key.prefix, true}, hyp.ctc + lp(t, kBlank), kBlank, base_lm);
      for (int c = 1; c < classes; ++c) {
        const double mass = hyp.ctc + lp(t, c);
        const bool repeat = !key.prefix.empty() && key.prefix.back() == c;
        if (repeat && !key.ends_blank) {
          add(HypKey{key.prefix, false}, mass, c, base_lm);
          continue;
        }
        const double ext_lm = cache.extended(key.prefix, c);
        if (weight != 0.0 && ext_lm == kNegInf) continue;
        LabelSeq longer = key.prefix;
        longer.push_back(c);
        add(HypKey{std::move(longer), false}, mass, c, ext_lm);
      }
    }

    struct Ranked {
      double score;
      int unit;
      const HypKey* key;
    };
    std::vector<Ranked> ranked;
    ranked.reserve(next.size());
    for (const auto& [key, hyp] : next) {
      const double s = hyp.ctc + weight * lm_score[key];
      if (s == kNegInf) continue;
      ranked.push_back({s, hyp.frame_unit, &key});
    }
    const std::size_t keep = std::min(ranked.size(), static_cast<std::size_t>(options.beam));
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                      ranked.end(), [](const Ranked& a, const Ranked& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.unit != b.unit) return a.unit < b.unit;
                        return *a.key < *b.key;
                      });
    std::map<HypKey, Hyp> pruned;
    for (std::size_t i = 0; i < keep; ++i) {
      const HypKey& k = *ranked[i].key;
      cache.ensure(k.prefix);
      pruned.emplace(k, next.at(k));
    }
    beam = std::move(pruned);
  }

  // Surviving prefixes are rescored with their exact CTC probability; the
  // beam only holds the alignment mass that escaped pruning.
  std::set<LabelSeq> finals;
  for (const auto& [key, hyp] : beam) finals.insert(key.prefix);
  ScoredLabeling best;
  for (const auto& prefix : finals) {
    const double ctc = -ctc_loss(lp, prefix).loss;
    const double lm_lp = cache.of(prefix);
    const double s = ctc + weight * lm_lp;
    // map order makes the first of equal scores the lexicographically smallest
    if (s > best.score) best = ScoredLabeling{prefix, ctc, lm_lp, s};
  }
  return best;
}

LabelSeq beam_decode(const Mat<double>& lp, const IncrementalLm* lm, const BeamOptions& options) {
  return beam_decode_scored(lp, lm, options).labels;
}

}  // namespace metapi
