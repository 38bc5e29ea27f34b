#include "metapi/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ostream>

namespace metapi {

namespace fs = std::filesystem;

MetricsLog::MetricsLog(const fs::path& path, std::ostream* echo) : echo_(echo) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  file_.emplace(path, std::ios::app);
  if (!*file_) throw FormatError("cannot open metrics log " + path.string());
}

void MetricsLog::write(const EpochMetrics& m) { write_line(to_json_line(m)); }

void MetricsLog::write_line(const std::string& line) {
  lines_.push_back(line);
  if (file_) *file_ << line << '\n' << std::flush;
  if (echo_) *echo_ << line << '\n' << std::flush;
}

std::vector<Utterance> subset(const Corpus& corpus, const std::string& split, int language) {
  std::vector<Utterance> out;
  for (auto i : corpus.select(split, language)) out.push_back(corpus.utterances[i]);
  return out;
}

std::vector<std::pair<int, TargetKind>> default_assembly(const Config& cfg) {
  std::vector<std::pair<int, TargetKind>> out{{cfg.target_language, TargetKind::graphemes}};
  for (std::size_t l = 0; l < cfg.corpus.languages; ++l) {
    if (static_cast<int>(l) != cfg.target_language) out.emplace_back(static_cast<int>(l), TargetKind::phones);
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNotApplicable;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

EpochCallback sink(MetricsLog* log) { return log ? log->callback() : EpochCallback{}; }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

const SynthLanguage& language_of(const Corpus& corpus, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= corpus.languages.size()) {
    throw ConfigError("language " + std::to_string(id) + " is not part of the corpus");
  }
  return corpus.languages[static_cast<std::size_t>(id)];
}

}  // namespace

SeedModels pretrain_all(const Config& cfg, const Corpus& corpus, std::uint64_t seed,
                        std::size_t subnet_hidden, MetricsLog* log) {
  const auto train = subset(corpus, "train");
  const auto test = subset(corpus, "test");
  SeedModels m;
  m.seed = seed;
  m.lid = train_lid<Real>(train, test, corpus.languages.size(), cfg.lid(seed), &m.lid_report, sink(log));

  const auto ex_train = nlc_examples(m.lid, train);
  const auto ex_test = nlc_examples(m.lid, test);
  m.nlc = NlcNet<Real>(corpus.spec.feat_dim, cfg.lfv_dim, cfg.nlc_hidden, cfg.width);
  m.nlc.init(Rng(seed).substream("nlc-init"));
  pretrain_nlc(m.nlc, ex_train, ex_test, cfg.nlc(seed), &m.nlc_report, sink(log));

  for (const auto& [lang, kind] : default_assembly(cfg)) {
    CtcTrainReport r;
    m.subnets.push_back(train_subnet<Real>(subset(corpus, "train", lang), subset(corpus, "test", lang),
                                           language_of(corpus, lang), kind, corpus.phone_set,
                                           cfg.subnet(seed, subnet_hidden), &r, sink(log)));
    m.subnet_reports.push_back(r);
  }
  return m;
}

Subnet<Real> train_baseline(const Config& cfg, const Corpus& corpus, std::uint64_t seed,
                            CtcTrainReport* report, MetricsLog* log) {
  const auto& lang = language_of(corpus, cfg.target_language);
  Subnet<Real> b;
  b.language = lang.id;
  b.kind = TargetKind::graphemes;
  b.inventory = build_inventory({lang}, InventoryMode::per_language);
  CtcModelSpec spec;
  spec.name = "baseline";
  spec.feat_dim = corpus.spec.feat_dim;
  spec.hidden = cfg.width;
  spec.layers = cfg.main().part1_layers + cfg.main().part2_layers;
  spec.merge = Merge::pairwise_max;
  spec.units = b.inventory.size();
  spec.dropout = cfg.dropout;
  b.model = CtcModel<Real>(spec);
  b.model.init(Rng(seed).substream("baseline-init"));
  auto r = train_ctc<Real>(b.model, "baseline", subset(corpus, "train", lang.id),
                           subset(corpus, "test", lang.id), TargetKind::graphemes, b.inventory,
                           cfg.train(cfg.baseline_epochs, seed, cfg.dropout), sink(log));
  if (report) *report = r;
  return b;
}

Superstructure<Real> build_superstructure(const Config& cfg, const Corpus& corpus,
                                          const SeedModels& models, CodeMode mode,
                                          std::uint64_t seed) {
  return assemble(models.subnets, models.lid, models.nlc,
                  build_inventory(corpus.languages, InventoryMode::joint_graphemes), cfg.main(),
                  Rng(seed).substream("main-init"), mode);
}

std::vector<UnitString> decode_all(const std::vector<Mat<double>>& log_posteriors,
                                   const UnitInventory& inventory, const IncrementalLm* lm,
                                   const BeamOptions* beam) {
  std::vector<UnitString> out;
  out.reserve(log_posteriors.size());
  for (const auto& lp : log_posteriors) {
    out.push_back(inventory.decode(beam ? beam_decode(lp, lm, *beam) : greedy_decode(lp)));
  }
  return out;
}

CharLm train_lm_stage(const Config& cfg, const Corpus& corpus, const UnitInventory& inventory,
                      std::uint64_t seed, LmReport* report, MetricsLog* log) {
  std::vector<LabelSeq> train, test;
  for (const auto& u : subset(corpus, "train", cfg.target_language)) train.push_back(inventory.encode(u.graphemes));
  for (const auto& u : subset(corpus, "test", cfg.target_language)) test.push_back(inventory.encode(u.graphemes));
  return train_lm(train, test, inventory.size(), cfg.lm(seed), report, sink(log));
}

namespace {

std::vector<UnitString> references(const std::vector<Utterance>& utts) {
  std::vector<UnitString> r;
  for (const auto& u : utts) r.push_back(u.graphemes);
  return r;
}

struct Scores {
  double cer = 0;
  double wer = 0;
};

template <class Model>
Scores score_model(Model& model, const std::vector<Utterance>& test, const UnitInventory& inventory,
                   CharLm& lm, const Config& cfg) {
  const auto lps = log_posteriors<Real>(model, test);
  const auto refs = references(test);
  const auto& wb = UnitInventory::kWordBoundary;
  Scores s;
  s.cer = score(refs, decode_all(lps, inventory, nullptr, nullptr), ScoreLevel::character, wb).rate();
  const BeamOptions beam{cfg.beam, cfg.lm_weight};
  s.wer = score(refs, decode_all(lps, inventory, &lm, &beam), ScoreLevel::word, wb).rate();
  return s;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

ReproduceResult reproduce(const Config& cfg, const Corpus& corpus, MetricsLog* log,
                          std::ostream* progress) {
  cfg.validate();
  ReproduceResult res;
  res.corpus_hash = corpus_hash(corpus);
  res.setups = {{"monolingual baseline", "baseline", {}, {}, 0, 0},
                {"no adaptation", to_string(CodeMode::no_adaptation), {}, {}, 0, 0},
                {"stacked LFV modulation", to_string(CodeMode::stacked_lfv_modulation), {}, {}, 0, 0},
                {"NLC modulation", to_string(CodeMode::nlc_modulation), {}, {}, 0, 0}};
  const auto assembly = default_assembly(cfg);
  const std::size_t narrow = cfg.subnet_hidden;
  const std::size_t wide = cfg.width / 2;
  for (const auto& [lang, kind] : assembly) {
    res.subnets.push_back({lang, kind, narrow, {}, {}});
    res.subnets.push_back({lang, kind, wide, {}, {}});
  }

  const auto train = subset(corpus, "train");
  const auto test = subset(corpus, "test");
  const auto target_test = subset(corpus, "test", cfg.target_language);
  const auto joint_inv = build_inventory(corpus.languages, InventoryMode::joint_graphemes);
  const auto target_inv = build_inventory({language_of(corpus, cfg.target_language)},
                                          InventoryMode::per_language);
  auto note = [&](const std::string& s) {
    if (progress) *progress << s << std::endl;
  };

  for (const auto seed : cfg.seeds) {
    auto t0 = Clock::now();
    SeedModels models = pretrain_all(cfg, corpus, seed, narrow, log);
    note("seed " + std::to_string(seed) + ": pretraining done in " + fixed(seconds_since(t0), 1) +
         " s (LID accuracy " + fixed(models.lid_report.heldout_accuracy) + ", NLC MSE " +
         fixed(models.nlc_report.heldout_mse, 5) + " vs mean predictor " +
         fixed(models.nlc_report.mean_predictor_mse, 5) + ")");
    for (std::size_t i = 0; i < assembly.size(); ++i) {
      auto& row = res.subnets[2 * i];
      row.untrained_cer.push_back(models.subnet_reports[i].initial_cer);
      row.cer.push_back(models.subnet_reports[i].final_cer);
    }
    t0 = Clock::now();
    for (std::size_t i = 0; i < assembly.size(); ++i) {
      const auto [lang, kind] = assembly[i];
      CtcTrainReport r;
      train_subnet<Real>(subset(corpus, "train", lang), subset(corpus, "test", lang),
                         language_of(corpus, lang), kind, corpus.phone_set, cfg.subnet(seed, wide),
                         &r, sink(log));
      auto& row = res.subnets[2 * i + 1];
      row.untrained_cer.push_back(r.initial_cer);
      row.cer.push_back(r.final_cer);
    }
    note("seed " + std::to_string(seed) + ": wide subnets done in " + fixed(seconds_since(t0), 1) + " s");

    LmReport lm_rep;
    CharLm joint_lm = train_lm_stage(cfg, corpus, joint_inv, seed, &lm_rep, log);
    CharLm target_lm = train_lm_stage(cfg, corpus, target_inv, seed, nullptr, log);

    t0 = Clock::now();
    auto baseline = train_baseline(cfg, corpus, seed, nullptr, log);
    const auto b = score_model(baseline.model, target_test, target_inv, target_lm, cfg);
    res.setups[0].cer.push_back(b.cer);
    res.setups[0].wer.push_back(b.wer);
    note("seed " + std::to_string(seed) + ": baseline CER " + fixed(b.cer) + " in " +
         fixed(seconds_since(t0), 1) + " s");

    const CodeMode modes[] = {CodeMode::no_adaptation, CodeMode::stacked_lfv_modulation,
                              CodeMode::nlc_modulation};
    for (std::size_t k = 0; k < 3; ++k) {
      t0 = Clock::now();
      auto s = build_superstructure(cfg, corpus, models, modes[k], seed);
      train_joint(s, train, test, cfg.train(cfg.joint_epochs, seed, cfg.dropout), sink(log),
                  &target_test);
      const auto sc = score_model(s, target_test, joint_inv, joint_lm, cfg);
      res.setups[k + 1].cer.push_back(sc.cer);
      res.setups[k + 1].wer.push_back(sc.wer);
      note("seed " + std::to_string(seed) + ": " + to_string(modes[k]) + " CER " + fixed(sc.cer) +
           " in " + fixed(seconds_since(t0), 1) + " s");
    }
  }

  for (auto& row : res.setups) {
    row.median_cer = median(row.cer);
    row.median_wer = median(row.wer);
  }
  const double base = res.setups[0].median_cer;
  const double none = res.setups[1].median_cer;
  const double nlc = res.setups[3].median_cer;
  res.no_adaptation_worse_than_nlc = none > nlc;
  res.nlc_not_worse_than_baseline = nlc <= base;

  res.subnets_halve_untrained_cer = true;
  double narrow_sum = 0, wide_sum = 0;
  std::vector<double> narrow_mean(cfg.seeds.size(), 0.0), wide_mean(cfg.seeds.size(), 0.0);
  for (const auto& row : res.subnets) {
    for (std::size_t k = 0; k < row.cer.size(); ++k) {
      if (!(row.cer[k] < 0.5 * row.untrained_cer[k])) res.subnets_halve_untrained_cer = false;
      (row.hidden == narrow ? narrow_mean : wide_mean)[k] += row.cer[k] / static_cast<double>(assembly.size());
    }
  }
  narrow_sum = median(narrow_mean);
  wide_sum = median(wide_mean);
  res.wider_subnets_not_worse = wide_sum <= narrow_sum;
  return res;
}

std::string ReproduceResult::table() const {
  std::string out = "corpus hash " + std::to_string(corpus_hash) + "\n";
  out += "setup                        median CER  median WER  CER per seed\n";
  for (const auto& r : setups) {
    std::string line = r.label;
    line.resize(29, ' ');
    line += fixed(r.median_cer) + "      " + fixed(r.median_wer) + "      ";
    for (double c : r.cer) line += fixed(c) + " ";
    out += line + "\n";
  }
  out += "subnet                       hidden  median CER  median untrained CER\n";
  for (const auto& r : subnets) {
    std::string line = subnet_name(r.language, r.kind);
    line.resize(29, ' ');
    line += std::to_string(r.hidden);
    line.resize(37, ' ');
    line += fixed(median(r.cer)) + "      " + fixed(median(r.untrained_cer));
    out += line + "\n";
  }
  auto mark = [](bool b) { return b ? "PASS" : "FAIL"; };
  out += std::string("CER(no adaptation) > CER(NLC modulation): ") + mark(no_adaptation_worse_than_nlc) + "\n";
  out += std::string("CER(NLC modulation) <= CER(baseline): ") + mark(nlc_not_worse_than_baseline) + "\n";
  out += std::string("every subnet below half its untrained CER: ") + mark(subnets_halve_untrained_cer) + "\n";
  out += std::string("wide subnets not worse than narrow: ") + mark(wider_subnets_not_worse) + "\n";
  return out;
}

}  // namespace metapi
