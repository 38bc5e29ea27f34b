#include "metapi/metrics.hpp"

namespace metapi {

std::vector<UnitString> split_words(const UnitString& units, const std::string& word_boundary) {
  std::vector<UnitString> words;
  UnitString cur;
  for (const auto& u : units) {
    if (u == word_boundary) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(u);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

ErrorReport score_utterance(const UnitString& ref, const UnitString& hyp, ScoreLevel level,
                            const std::string& word_boundary) {
  if (level == ScoreLevel::character) return edit_distance(ref, hyp);
  return edit_distance(split_words(ref, word_boundary), split_words(hyp, word_boundary));
}

ErrorReport score(const std::vector<UnitString>& refs, const std::vector<UnitString>& hyps,
                  ScoreLevel level, const std::string& word_boundary) {
  if (refs.size() != hyps.size()) {
    throw std::invalid_argument("score: " + std::to_string(refs.size()) + " references but " +
                                std::to_string(hyps.size()) + " hypotheses");
  }
  ErrorReport total;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    total += score_utterance(refs[i], hyps[i], level, word_boundary);
  }
  return total;
}

}  // namespace metapi
