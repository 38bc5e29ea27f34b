#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "metapi/char_lm.hpp"
#include "metapi/corpus.hpp"
#include "metapi/lang_codes.hpp"
#include "metapi/superstructure.hpp"

namespace metapi {

// Every tunable of the pipeline. Text form is one `key = value` per line,
// `#` starts a comment; unknown keys are rejected.
struct Config {
  std::uint64_t seed = 11;
  // training seeds of the paired reproduction runs
  std::vector<std::uint64_t> seeds{1, 2, 3};
  CorpusSpec corpus;
  int target_language = 0;

  std::size_t lfv_dim = 8;
  std::size_t lid_hidden = 64;
  std::size_t lid_epochs = 8;
  std::size_t width = 64;
  std::size_t nlc_hidden = 64;
  std::size_t nlc_epochs = 6;
  std::size_t subnet_hidden = 16;
  std::size_t subnet_epochs = 10;
  std::size_t baseline_epochs = 10;
  std::size_t joint_epochs = 10;
  std::size_t lm_hidden = 64;
  std::size_t lm_epochs = 10;

  double lr = 0.05;
  double momentum = 0.9;
  double dropout = 0.2;
  std::size_t batch_size = 16;
  double clip_norm = 5.0;
  std::size_t patience = 2;
  double lr_decay = 0.5;

  int beam = 16;
  double lm_weight = 0.5;

  static Config parse(const std::string& text, const std::string& origin = "<config>");
  static Config load(const std::filesystem::path& path);

  // Throws ConfigError for an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Fully resolved config in the parseable text form.
  std::string dump() const;

  // Consistency checks across keys (divisibility, ranges).
  void validate() const;

  TrainConfig train(std::size_t epochs, std::uint64_t seed_value, double dropout_rate) const;
  LidConfig lid(std::uint64_t seed_value) const;
  NlcConfig nlc(std::uint64_t seed_value) const;
  SubnetConfig subnet(std::uint64_t seed_value, std::size_t hidden) const;
  CharLmConfig lm(std::uint64_t seed_value) const;
  MainSpec main() const;
};

}  // namespace metapi
