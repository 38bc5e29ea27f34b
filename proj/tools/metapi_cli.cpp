// metapi: corpus generation, staged training, decoding, scoring and the
// paired-seed reproduction run.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "metapi/pipeline.hpp"

namespace fs = std::filesystem;
using namespace metapi;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitDependency = 2;
constexpr int kExitAcceptance = 3;

struct Globals {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string data_root;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> width;
  std::optional<double> lm_weight;
  std::optional<int> beam;
  std::optional<std::size_t> min_frames;
  std::optional<std::size_t> max_transcript;
};

struct Paths {
  fs::path root;
  fs::path corpus() const { return root / "corpus"; }
  fs::path models() const { return root / "models"; }
  fs::path logs() const { return root / "logs"; }
  fs::path best(const std::string& name) const { return models() / (name + ".best.mpnn"); }
  fs::path last(const std::string& name) const { return models() / (name + ".last.mpnn"); }
  fs::path log(const std::string& name) const { return logs() / (name + ".jsonl"); }
};

Config resolve(const Globals& g) {
  Config c = g.config_file.empty() ? Config{} : Config::load(g.config_file);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) c.seed = *g.seed;
  if (g.width) c.width = *g.width;
  if (g.lm_weight) c.lm_weight = *g.lm_weight;
  if (g.beam) c.beam = *g.beam;
  if (g.min_frames) c.corpus.min_frames = *g.min_frames;
  if (g.max_transcript) c.corpus.max_transcript = *g.max_transcript;
  c.validate();
  return c;
}

Paths paths(const Globals& g) {
  if (!g.data_root.empty()) return {g.data_root};
  if (const char* env = std::getenv("METAPI_DATA_ROOT"); env && *env) return {env};
  return {"metapi-data"};
}

// Prints the resolved config to stderr and keeps a copy next to the logs.
void log_config(const Config& c, const Paths& p, const std::string& command) {
  fs::create_directories(p.logs());
  std::ofstream(p.logs() / (command + ".config")) << c.dump();
  std::cerr << "# resolved config (" << command << ")\n" << c.dump() << std::flush;
}

// Fresh metrics log so that reruns with the same seed produce the same file.
std::unique_ptr<MetricsLog> open_log(const Paths& p, const std::string& name) {
  fs::create_directories(p.logs());
  fs::remove(p.log(name));
  return std::make_unique<MetricsLog>(p.log(name), &std::cerr);
}

Corpus need_corpus(const Paths& p, const std::string& stage) {
  if (!fs::exists(p.corpus() / "manifest.tsv")) {
    throw DependencyError("corpus", "stage '" + stage + "' needs the corpus under " +
                                        p.corpus().string() + "; run gen-corpus first");
  }
  return read_corpus(p.corpus());
}

fs::path need_model(const Paths& p, const std::string& name, const std::string& stage,
                    const std::string& missing) {
  for (const auto& path : {p.best(name), p.last(name)}) {
    if (fs::exists(path)) return path;
  }
  throw DependencyError(missing, "stage '" + stage + "' needs " + p.best(name).string() +
                                     "; run 'train --stage " + missing + "' first");
}

// Saves `last` every epoch and `best` whenever held-out loss improved.
template <class M, class Save>
auto checkpointer(const Paths& p, const std::string& name, Save save) {
  fs::create_directories(p.models());
  return [=](M& model, const EpochMetrics& m) {
    save(p.last(name), model);
    if (m.improved || m.epoch == 1) save(p.best(name), model);
  };
}

void print_json(const json& j) { std::cout << j.dump() << std::endl; }

json ctc_summary(const std::string& name, const CtcTrainReport& r) {
  return {{"model", name}, {"epochs", r.epochs.size()}, {"untrained_cer", r.initial_cer},
          {"cer", r.final_cer}, {"heldout_loss", r.final_heldout_loss}, {"skipped", r.skipped}};
}

// --- gen-corpus

int cmd_gen_corpus(const Globals& g, const std::string& out_dir) {
  const Config cfg = resolve(g);
  const Paths p = paths(g);
  log_config(cfg, p, "gen-corpus");
  const fs::path out = out_dir.empty() ? p.corpus() : fs::path(out_dir);
  const Corpus corpus = build_corpus(cfg.corpus);
  write_corpus(out, corpus);
  const auto& f = corpus.filter_report;
  print_json({{"corpus", out.string()},
              {"utterances", corpus.utterances.size()},
              {"train", corpus.select("train").size()},
              {"test", corpus.select("test").size()},
              {"kept", f.kept},
              {"dropped", f.dropped()},
              {"too_short", f.too_short},
              {"too_long", f.too_long},
              {"empty", f.empty},
              {"hash", corpus_hash(corpus)}});
  return 0;
}

// --- train

std::vector<Subnet<Real>> load_assembly_subnets(const Config& cfg, const Paths& p,
                                                const std::string& stage) {
  std::vector<Subnet<Real>> subnets;
  for (const auto& [lang, kind] : default_assembly(cfg)) {
    subnets.push_back(load_ctc_model<Real>(need_model(p, subnet_name(lang, kind), stage, "subnet")));
  }
  return subnets;
}

std::string lm_name(const std::string& inventory) { return "lm." + inventory; }

UnitInventory lm_inventory(const Corpus& corpus, const Config& cfg, const std::string& which) {
  if (which == "joint") return build_inventory(corpus.languages, InventoryMode::joint_graphemes);
  if (which == "language") {
    return build_inventory({corpus.languages.at(static_cast<std::size_t>(cfg.target_language))},
                           InventoryMode::per_language);
  }
  throw ConfigError("--inventory must be 'joint' or 'language', got '" + which + "'");
}

struct TrainArgs {
  std::string stage;
  std::string mode = "nlc_modulation";
  int language = -1;
  std::string target;
  std::string inventory = "joint";
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const Config cfg = resolve(g);
  const Paths p = paths(g);
  log_config(cfg, p, "train." + a.stage);
  const auto seed = cfg.seed;

  if (a.stage == "lid") {
    const Corpus corpus = need_corpus(p, a.stage);
    auto log = open_log(p, "lid");
    LidReport r;
    auto lid = train_lid<Real>(subset(corpus, "train"), subset(corpus, "test"), corpus.languages.size(),
                               cfg.lid(seed), &r, log->callback(),
                               checkpointer<LfvExtractor<Real>>(p, "lid", [](const fs::path& f, auto& m) {
                                 save_lid(f, m);
                               }));
    print_json({{"model", "lid"}, {"heldout_accuracy", r.heldout_accuracy},
                {"initial_accuracy", r.initial_accuracy}, {"chance", r.chance}});
    return 0;
  }
  if (a.stage == "nlc") {
    const Corpus corpus = need_corpus(p, a.stage);
    const auto lid = load_lid<Real>(need_model(p, "lid", a.stage, "lid"));
    auto log = open_log(p, "nlc");
    NlcNet<Real> nlc(corpus.spec.feat_dim, cfg.lfv_dim, cfg.nlc_hidden, cfg.width);
    nlc.init(Rng(seed).substream("nlc-init"));
    auto save = checkpointer<NlcNet<Real>>(p, "nlc", [](const fs::path& f, auto& m) { save_nlc(f, m); });
    NlcReport r;
    pretrain_nlc(nlc, nlc_examples(lid, subset(corpus, "train")), nlc_examples(lid, subset(corpus, "test")),
                 cfg.nlc(seed), &r, [&](const EpochMetrics& m) {
                   log->write(m);
                   save(nlc, m);
                 });
    print_json({{"model", "nlc"}, {"heldout_mse", r.heldout_mse},
                {"mean_predictor_mse", r.mean_predictor_mse}, {"initial_heldout_mse", r.initial_heldout_mse}});
    return 0;
  }
  if (a.stage == "subnet") {
    const Corpus corpus = need_corpus(p, a.stage);
    std::vector<std::pair<int, TargetKind>> todo;
    if (a.language >= 0) {
      todo.emplace_back(a.language, target_kind_from_string(a.target.empty() ? "phones" : a.target));
    } else {
      if (!a.target.empty()) throw ConfigError("--target needs --language");
      todo = default_assembly(cfg);
    }
    for (const auto& [lang, kind] : todo) {
      if (lang >= static_cast<int>(corpus.languages.size())) {
        throw ConfigError("language " + std::to_string(lang) + " is not part of the corpus");
      }
      const auto name = subnet_name(lang, kind);
      auto log = open_log(p, name);
      CtcTrainReport r;
      train_subnet<Real>(subset(corpus, "train", lang), subset(corpus, "test", lang),
                         corpus.languages[static_cast<std::size_t>(lang)], kind, corpus.phone_set,
                         cfg.subnet(seed, cfg.subnet_hidden), &r, log->callback(),
                         checkpointer<Subnet<Real>>(p, name, [](const fs::path& f, auto& m) {
                           save_ctc_model(f, m);
                         }));
      print_json(ctc_summary(name, r));
    }
    return 0;
  }
  if (a.stage == "lm") {
    const Corpus corpus = need_corpus(p, a.stage);
    const auto name = lm_name(a.inventory);
    auto log = open_log(p, name);
    const auto inventory = lm_inventory(corpus, cfg, a.inventory);
    std::vector<LabelSeq> train, test;
    for (const auto& u : subset(corpus, "train", cfg.target_language)) train.push_back(inventory.encode(u.graphemes));
    for (const auto& u : subset(corpus, "test", cfg.target_language)) test.push_back(inventory.encode(u.graphemes));
    LmReport r;
    train_lm(train, test, inventory.size(), cfg.lm(seed), &r, log->callback(),
             checkpointer<CharLm>(p, name, [](const fs::path& f, auto& m) { save_lm(f, m); }));
    print_json({{"model", name}, {"initial_perplexity", r.initial_perplexity},
                {"heldout_perplexity", r.heldout_perplexity}});
    return 0;
  }
  if (a.stage == "baseline") {
    const Corpus corpus = need_corpus(p, a.stage);
    auto log = open_log(p, "baseline");
    // The baseline trainer owns its model, so checkpoints come from the final state.
    CtcTrainReport r;
    auto b = train_baseline(cfg, corpus, seed, &r, log.get());
    fs::create_directories(p.models());
    save_ctc_model(p.last("baseline"), b, "baseline");
    save_ctc_model(p.best("baseline"), b, "baseline");
    print_json(ctc_summary("baseline", r));
    return 0;
  }
  if (a.stage == "joint") {
    const CodeMode mode = code_mode_from_string(a.mode);
    auto subnets = load_assembly_subnets(cfg, p, a.stage);
    auto nlc = load_nlc<Real>(need_model(p, "nlc", a.stage, "nlc"));
    auto lid = load_lid<Real>(need_model(p, "lid", a.stage, "lid"));
    const Corpus corpus = need_corpus(p, a.stage);
    const auto name = "joint." + to_string(mode);
    auto log = open_log(p, name);
    auto s = assemble(std::move(subnets), std::move(lid), std::move(nlc),
                      build_inventory(corpus.languages, InventoryMode::joint_graphemes), cfg.main(),
                      Rng(seed).substream("main-init"), mode);
    auto save = checkpointer<Superstructure<Real>>(p, name, [](const fs::path& f, auto& m) {
      save_superstructure(f, m);
    });
    const auto target_test = subset(corpus, "test", cfg.target_language);
    auto r = train_joint(s, subset(corpus, "train"), subset(corpus, "test"),
                         cfg.train(cfg.joint_epochs, seed, cfg.dropout),
                         [&](const EpochMetrics& m) {
                           log->write(m);
                           save(s, m);
                         },
                         &target_test);
    print_json(ctc_summary(name, r));
    return 0;
  }
  throw ConfigError("unknown stage '" + a.stage + "'");
}

// --- decode

struct DecodeArgs {
  std::string model;
  std::string split = "test";
  std::string mode = "greedy";
  std::string lm;
  int language = -1;
  std::string out;
};

fs::path model_path(const Paths& p, const std::string& ref) {
  if (ref.ends_with(".mpnn")) return ref;
  return need_model(p, ref, "decode", ref.starts_with("joint") ? "joint" : ref.starts_with("lm") ? "lm" : ref);
}

int cmd_decode(const Globals& g, const DecodeArgs& a) {
  const Config cfg = resolve(g);
  const Paths p = paths(g);
  log_config(cfg, p, "decode");
  if (a.mode != "greedy" && a.mode != "beam") throw ConfigError("--mode must be greedy or beam");
  const Corpus corpus = need_corpus(p, "decode");
  const fs::path mpath = model_path(p, a.model);
  const std::string kind = peek_model_kind(mpath);

  std::optional<CharLm> lm;
  if (!a.lm.empty()) lm = load_lm(model_path(p, a.lm));
  if (a.mode == "beam" && cfg.lm_weight > 0 && !lm) {
    throw DependencyError("lm", "beam decoding with lm_weight " + std::to_string(cfg.lm_weight) +
                                    " needs --lm; train one with 'train --stage lm'");
  }

  std::vector<Mat<double>> lps;
  UnitInventory inventory;
  std::vector<Utterance> utts;
  if (kind == "superstructure") {
    auto s = load_superstructure<Real>(mpath);
    utts = subset(corpus, a.split, a.language);
    inventory = s.joint;
    lps = log_posteriors<Real>(s, utts);
  } else if (kind == "subnet" || kind == "baseline") {
    auto m = load_ctc_model<Real>(mpath, kind);
    if (!m.model.has_head()) throw FormatError(mpath.string() + " has no output layer to decode with");
    if (a.language >= 0 && a.language != m.language) {
      throw ConfigError("model " + a.model + " is for language " + std::to_string(m.language));
    }
    utts = subset(corpus, a.split, m.language);
    inventory = m.inventory;
    lps = log_posteriors<Real>(m.model, utts);
  } else {
    throw FormatError(mpath.string() + " holds a '" + kind + "' model, which does not decode speech");
  }
  if (utts.empty()) throw ConfigError("no utterances in split '" + a.split + "'");
  if (lm && lm->units() != inventory.size()) {
    throw FormatError("inventory mismatch: LM has " + std::to_string(lm->units()) + " units, model has " +
                      std::to_string(inventory.size()));
  }
  const BeamOptions beam{cfg.beam, cfg.lm_weight};
  const auto hyps = decode_all(lps, inventory, lm ? &*lm : nullptr, a.mode == "beam" ? &beam : nullptr);

  fs::path out = a.out;
  if (out.empty()) out = p.root / "hyps" / (fs::path(mpath).stem().string() + "." + a.split + "." + a.mode + ".txt");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out, std::ios::binary);
  if (!os) throw FormatError("cannot write " + out.string());
  for (std::size_t i = 0; i < utts.size(); ++i) os << utts[i].id << '\t' << join_units(hyps[i]) << '\n';
  print_json({{"hypotheses", out.string()}, {"utterances", utts.size()}, {"mode", a.mode}});
  return 0;
}

// --- eval

std::vector<std::pair<std::string, UnitString>> read_transcripts(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  std::vector<std::pair<std::string, UnitString>> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    out.emplace_back(line.substr(0, tab), tab == std::string::npos ? UnitString{} : split_units(line.substr(tab + 1)));
  }
  return out;
}

json report_json(const std::string& id, const ErrorReport& r) {
  return {{"id", id}, {"substitutions", r.substitutions}, {"insertions", r.insertions},
          {"deletions", r.deletions}, {"ref_length", r.ref_length}, {"rate", r.rate()}};
}

struct EvalArgs {
  std::string hyps;
  std::string refs;
  std::string level = "character";
  std::string target = "graphemes";
  std::string out;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const Paths p = paths(g);
  ScoreLevel level;
  if (a.level == "character" || a.level == "char") level = ScoreLevel::character;
  else if (a.level == "word") level = ScoreLevel::word;
  else throw ConfigError("--level must be character or word");

  const auto hyps = read_transcripts(a.hyps);
  std::map<std::string, UnitString> refs;
  if (!a.refs.empty()) {
    for (auto& [id, units] : read_transcripts(a.refs)) refs[id] = units;
  } else {
    const Corpus corpus = need_corpus(p, "eval");
    const bool phones = target_kind_from_string(a.target) == TargetKind::phones;
    for (const auto& u : corpus.utterances) refs[u.id] = phones ? u.phones : u.graphemes;
  }

  std::vector<std::string> offenders;
  std::set<std::string> seen;
  for (const auto& [id, units] : hyps) {
    if (!refs.count(id) || !seen.insert(id).second) offenders.push_back(id);
  }
  if (!a.refs.empty()) {
    for (const auto& [id, units] : refs) {
      if (!seen.count(id)) offenders.push_back(id);
    }
  }
  if (!offenders.empty()) {
    std::string list;
    for (std::size_t i = 0; i < offenders.size() && i < 20; ++i) list += (i ? ", " : "") + offenders[i];
    if (offenders.size() > 20) list += ", ...";
    throw FormatError("utterance ids of hypotheses and references do not match (" +
                      std::to_string(offenders.size()) + " offenders): " + list);
  }

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw FormatError("cannot write " + a.out);
  }
  auto emit = [&](const json& j) {
    print_json(j);
    if (file.is_open()) file << j.dump() << '\n';
  };
  ErrorReport total;
  for (const auto& [id, hyp] : hyps) {
    const auto r = score_utterance(refs[id], hyp, level, UnitInventory::kWordBoundary);
    emit(report_json(id, r));
    total += r;
  }
  auto t = report_json("<total>", total);
  t["level"] = a.level == "char" ? "character" : a.level;
  t["utterances"] = hyps.size();
  emit(t);
  return 0;
}

// --- reproduce

int cmd_reproduce(const Globals& g, const std::string& summary_out) {
  const Config cfg = resolve(g);
  const Paths p = paths(g);
  log_config(cfg, p, "reproduce");
  const Corpus corpus = build_corpus(cfg.corpus);
  auto log = open_log(p, "reproduce");
  const auto res = reproduce(cfg, corpus, log.get(), &std::cerr);
  if (corpus_hash(corpus) != res.corpus_hash) throw std::logic_error("corpus changed during the run");

  std::cout << res.table() << std::flush;
  json j;
  j["corpus_hash"] = res.corpus_hash;
  for (const auto& r : res.setups) {
    j["setups"].push_back({{"label", r.label}, {"setup", r.setup}, {"cer", r.cer}, {"wer", r.wer},
                           {"median_cer", r.median_cer}, {"median_wer", r.median_wer}});
  }
  for (const auto& r : res.subnets) {
    j["subnets"].push_back({{"name", subnet_name(r.language, r.kind)}, {"hidden", r.hidden},
                            {"untrained_cer", r.untrained_cer}, {"cer", r.cer}});
  }
  j["orderings"] = {{"no_adaptation_worse_than_nlc", res.no_adaptation_worse_than_nlc},
                    {"nlc_not_worse_than_baseline", res.nlc_not_worse_than_baseline},
                    {"subnets_halve_untrained_cer", res.subnets_halve_untrained_cer},
                    {"wider_subnets_not_worse", res.wider_subnets_not_worse}};
  const fs::path out = summary_out.empty() ? p.root / "reproduce.json" : fs::path(summary_out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << j.dump(2) << '\n';
  return res.passed() ? 0 : kExitAcceptance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual CTC acoustic modeling with modulated superstructures"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "override a config key (key=value), repeatable");
  app.add_option("--data-root", g.data_root, "artifact directory (default: $METAPI_DATA_ROOT)");
  app.add_option("--seed", g.seed, "training seed");
  app.add_option("--width", g.width, "main network width");
  app.add_option("--lm-weight", g.lm_weight, "shallow fusion weight");
  app.add_option("--beam", g.beam, "beam width");
  app.add_option("--min-frames", g.min_frames, "drop utterances with fewer frames");
  app.add_option("--max-transcript", g.max_transcript, "drop utterances with longer transcripts");

  std::string corpus_out;
  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  gen->add_option("--out", corpus_out, "output directory (default: <data-root>/corpus)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train one pipeline stage");
  train->add_option("--stage", ta.stage, "stage to train")
      ->required()
      ->check(CLI::IsMember({"lid", "nlc", "subnet", "lm", "baseline", "joint"}));
  train->add_option("--mode", ta.mode, "joint code mode")
      ->check(CLI::IsMember({"no_adaptation", "stacked_lfv_modulation", "nlc_modulation"}));
  train->add_option("--language", ta.language, "subnet language (default: the assembly preset)");
  train->add_option("--target", ta.target, "subnet targets: graphemes or phones");
  train->add_option("--inventory", ta.inventory, "LM units: joint or language")
      ->check(CLI::IsMember({"joint", "language"}));

  DecodeArgs da;
  auto* decode = app.add_subcommand("decode", "write hypotheses for a corpus split");
  decode->add_option("--model", da.model, "model name under <data-root>/models or a .mpnn path")->required();
  decode->add_option("--split", da.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  decode->add_option("--mode", da.mode, "greedy or beam")->check(CLI::IsMember({"greedy", "beam"}));
  decode->add_option("--lm", da.lm, "LM name or .mpnn path for shallow fusion");
  decode->add_option("--language", da.language, "restrict to one language");
  decode->add_option("--out", da.out, "hypothesis file");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score hypotheses against references");
  eval->add_option("--hyps", ea.hyps, "hypothesis file (id<TAB>units)")->required()->check(CLI::ExistingFile);
  eval->add_option("--refs", ea.refs, "reference file (default: corpus transcripts)")->check(CLI::ExistingFile);
  eval->add_option("--level", ea.level, "character or word")
      ->check(CLI::IsMember({"character", "char", "word"}));
  eval->add_option("--target", ea.target, "corpus references: graphemes or phones")
      ->check(CLI::IsMember({"graphemes", "phones"}));
  eval->add_option("--out", ea.out, "also write the report here");

  std::string summary_out;
  auto* repro = app.add_subcommand("reproduce", "paired-seed comparison of all setups");
  repro->add_option("--out", summary_out, "summary JSON (default: <data-root>/reproduce.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_corpus(g, corpus_out);
    if (*train) return cmd_train(g, ta);
    if (*decode) return cmd_decode(g, da);
    if (*eval) return cmd_eval(g, ea);
    if (*repro) return cmd_reproduce(g, summary_out);
  } catch (const DependencyError& e) {
    std::cerr << "error: missing dependency '" << e.missing() << "': " << e.what() << '\n';
    return kExitDependency;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
