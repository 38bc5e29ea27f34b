#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace metapi {

struct ErrorReport {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  // (S+I+D)/N; an empty reference scores 0 when the hypothesis is empty too
  // and the raw error count otherwise.
  double rate() const {
    if (ref_length == 0) return static_cast<double>(errors());
    return static_cast<double>(errors()) / static_cast<double>(ref_length);
  }
  ErrorReport& operator+=(const ErrorReport& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    ref_length += o.ref_length;
    return *this;
  }
  bool operator==(const ErrorReport&) const = default;
};

// Levenshtein alignment. Among minimal alignments the backtrace prefers a
// substitution, then an insertion, then a deletion at every step, so the
// S/I/D split is deterministic.
template <class U>
ErrorReport edit_distance(std::span<const U> ref, std::span<const U> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i, j - 1) + 1, at(i - 1, j) + 1});
    }
  }
  ErrorReport r;
  r.ref_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++r.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++r.insertions;
      --j;
    } else {
      ++r.deletions;
      --i;
    }
  }
  return r;
}

template <class U>
ErrorReport edit_distance(const std::vector<U>& ref, const std::vector<U>& hyp) {
  return edit_distance(std::span<const U>(ref), std::span<const U>(hyp));
}

enum class ScoreLevel { character, word };

using UnitString = std::vector<std::string>;

// Splits on the word-boundary unit; empty words (leading, trailing or doubled
// boundaries) are dropped.
std::vector<UnitString> split_words(const UnitString& units, const std::string& word_boundary);

// Per-utterance error counts at the requested level.
ErrorReport score_utterance(const UnitString& ref, const UnitString& hyp, ScoreLevel level,
                            const std::string& word_boundary);

// Corpus-level report: counts pooled over utterances before dividing.
ErrorReport score(const std::vector<UnitString>& refs, const std::vector<UnitString>& hyps,
                  ScoreLevel level, const std::string& word_boundary);

}  // namespace metapi
