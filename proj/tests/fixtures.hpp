#pragma once

#include <vector>

#include "metapi/corpus.hpp"
#include "metapi/param.hpp"

namespace fixture {

// Small corpus that trains in seconds.
inline metapi::CorpusSpec tiny_spec(std::size_t languages = 2, std::size_t train = 40,
                                    std::size_t test = 10, std::uint64_t seed = 11) {
  metapi::CorpusSpec s;
  s.languages = languages;
  s.train_per_language = train;
  s.test_per_language = test;
  s.min_symbols = 6;
  s.max_symbols = 10;
  s.min_frames = 20;
  s.seed = seed;
  return s;
}

inline std::vector<metapi::Utterance> pick(const metapi::Corpus& c, const std::string& split,
                                           int language = -1) {
  std::vector<metapi::Utterance> out;
  for (auto i : c.select(split, language)) out.push_back(c.utterances[i]);
  return out;
}

template <class T>
std::vector<std::vector<T>> snapshot(const metapi::ParameterSet<T>& ps) {
  std::vector<std::vector<T>> out;
  for (const auto* p : ps) out.emplace_back(p->value.storage().begin(), p->value.storage().end());
  return out;
}

}  // namespace fixture

#include "metapi/superstructure.hpp"

namespace fixture {

// Randomly initialized superstructure small enough for coordinate-wise
// gradient checks. The LID network is marked trained without training.
inline metapi::Superstructure<double> toy_superstructure(metapi::CodeMode mode, std::uint64_t seed = 5,
                                                         std::size_t subnets = 2,
                                                         std::size_t sub_hidden = 3) {
  using namespace metapi;
  const metapi::Rng root(seed);
  const std::size_t feat = 6;
  LfvExtractor<double> lid(feat, 8, 4, 8, 2);
  lid.init(root.substream("lid"));
  lid.trained = true;
  NlcNet<double> nlc(feat, 4, 6, 8);
  nlc.init(root.substream("nlc"));
  std::vector<Subnet<double>> subs;
  for (std::size_t i = 0; i < subnets; ++i) {
    Subnet<double> s;
    s.language = static_cast<int>(i);
    s.inventory = UnitInventory({"a", "b", "c"});
    CtcModelSpec spec;
    spec.name = "sub" + std::to_string(i);
    spec.feat_dim = feat;
    spec.hidden = sub_hidden;
    spec.units = s.inventory.size();
    s.model = CtcModel<double>(spec);
    s.model.init(root.substream("sub").substream(i));
    subs.push_back(std::move(s));
  }
  MainSpec main;
  main.width = 8;
  main.dropout = 0;
  return assemble(std::move(subs), std::move(lid), std::move(nlc), UnitInventory({"a", "b", "c"}), main,
                  root.substream("main"), mode);
}

// Scales every weight matrix (biases untouched). At the default init the toy
// stack's activations shrink to ~1e-4 by Part 2, where direction outputs of
// a max merge nearly tie and finite differences straddle the kink.
inline void widen_weights(metapi::Superstructure<double>& s, double factor = 4.0) {
  metapi::ParameterSet<double> all;
  s.collect_all(all);
  for (auto* p : all) {
    const auto& n = p->name;
    if (n.size() < 2 || n.compare(n.size() - 2, 2, ".b") != 0) p->value.mat() *= factor;
  }
}

}  // namespace fixture
