#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "metapi/config.hpp"
#include "metapi/model_io.hpp"

namespace metapi {

// Line-delimited metrics sink. Appends to `path` when given and echoes to
// `echo` when given.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path, std::ostream* echo = nullptr);

  void write(const EpochMetrics& m);
  void write_line(const std::string& line);
  EpochCallback callback() {
    return [this](const EpochMetrics& m) { write(m); };
  }
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::optional<std::ofstream> file_;
  std::ostream* echo_ = nullptr;
  std::vector<std::string> lines_;
};

std::vector<Utterance> subset(const Corpus& corpus, const std::string& split, int language = -1);

// Default assembly: the target language's grapheme subnet followed by
// phone subnets of every other language.
std::vector<std::pair<int, TargetKind>> default_assembly(const Config& cfg);

// The precision of the production pipeline.
using Real = float;

struct SeedModels {
  std::uint64_t seed = 0;
  LfvExtractor<Real> lid;
  LidReport lid_report;
  NlcNet<Real> nlc;
  NlcReport nlc_report;
  std::vector<Subnet<Real>> subnets;
  std::vector<CtcTrainReport> subnet_reports;
};

// Pretraining for one seed: LID, NLC and the preset subnets at `subnet_hidden`.
SeedModels pretrain_all(const Config& cfg, const Corpus& corpus, std::uint64_t seed,
                        std::size_t subnet_hidden, MetricsLog* log);

// Main-sized CTC model on raw features of the target language.
Subnet<Real> train_baseline(const Config& cfg, const Corpus& corpus, std::uint64_t seed,
                            CtcTrainReport* report, MetricsLog* log);

Superstructure<Real> build_superstructure(const Config& cfg, const Corpus& corpus,
                                          const SeedModels& models, CodeMode mode,
                                          std::uint64_t seed);

struct SetupRow {
  std::string label;  // human-readable row label
  std::string setup;  // baseline | no_adaptation | stacked_lfv_modulation | nlc_modulation
  std::vector<double> cer;  // per seed, held-out target language
  std::vector<double> wer;  // per seed, beam search with LM fusion
  double median_cer = 0;
  double median_wer = 0;
};

struct SubnetRow {
  int language = 0;
  TargetKind kind = TargetKind::phones;
  std::size_t hidden = 0;
  std::vector<double> untrained_cer;  // per seed
  std::vector<double> cer;
};

struct ReproduceResult {
  std::uint64_t corpus_hash = 0;
  std::vector<SetupRow> setups;
  std::vector<SubnetRow> subnets;
  bool no_adaptation_worse_than_nlc = false;
  bool nlc_not_worse_than_baseline = false;
  bool subnets_halve_untrained_cer = false;
  bool wider_subnets_not_worse = false;
  bool passed() const {
    return no_adaptation_worse_than_nlc && nlc_not_worse_than_baseline &&
           subnets_halve_untrained_cer && wider_subnets_not_worse;
  }
  std::string table() const;
};

// Full paired-seed experiment: per seed, pretraining, the monolingual
// baseline, the three joint setups from one shared initialization, and a
// second subnet width. Checks the result orderings over seed medians.
ReproduceResult reproduce(const Config& cfg, const Corpus& corpus, MetricsLog* log,
                          std::ostream* progress = nullptr);

double median(std::vector<double> v);

// Hypotheses per utterance: greedy when beam options are absent.
std::vector<UnitString> decode_all(const std::vector<Mat<double>>& log_posteriors,
                                   const UnitInventory& inventory, const IncrementalLm* lm,
                                   const BeamOptions* beam);

CharLm train_lm_stage(const Config& cfg, const Corpus& corpus, const UnitInventory& inventory,
                      std::uint64_t seed, LmReport* report, MetricsLog* log);

}  // namespace metapi
