#include "metapi/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "metapi/error.hpp"

namespace metapi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class U>
U parse_int(const std::string& key, const std::string& v) {
  U out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a valid integer");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a finite number");
  }
  return out;
}

std::string real_text(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Entry {
  std::function<void(Config&, const std::string&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <class U>
Entry integer(U Config::*field) {
  return {[field](Config& c, const std::string& k, const std::string& v) {
            c.*field = parse_int<U>(k, v);
          },
          [field](const Config& c) { return std::to_string(c.*field); }};
}

template <class U>
Entry corpus_integer(U CorpusSpec::*field) {
  return {[field](Config& c, const std::string& k, const std::string& v) {
            c.corpus.*field = parse_int<U>(k, v);
          },
          [field](const Config& c) { return std::to_string(c.corpus.*field); }};
}

Entry real(double Config::*field) {
  return {[field](Config& c, const std::string& k, const std::string& v) {
            c.*field = parse_real(k, v);
          },
          [field](const Config& c) { return real_text(c.*field); }};
}

Entry corpus_real(double CorpusSpec::*field) {
  return {[field](Config& c, const std::string& k, const std::string& v) {
            c.corpus.*field = parse_real(k, v);
          },
          [field](const Config& c) { return real_text(c.corpus.*field); }};
}

const std::map<std::string, Entry>& table() {
  static const std::map<std::string, Entry> t = [] {
    std::map<std::string, Entry> t;
    t["seed"] = integer(&Config::seed);
    t["seeds"] = {[](Config& c, const std::string& k, const std::string& v) {
                    c.seeds.clear();
                    std::stringstream ss(v);
                    std::string item;
                    while (std::getline(ss, item, ',')) c.seeds.push_back(parse_int<std::uint64_t>(k, trim(item)));
                    if (c.seeds.empty()) throw ConfigError("config key 'seeds' needs at least one seed");
                  },
                  [](const Config& c) {
                    std::string s;
                    for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
                    return s;
                  }};
    t["target_language"] = integer(&Config::target_language);
    t["corpus.seed"] = corpus_integer(&CorpusSpec::seed);
    t["corpus.languages"] = corpus_integer(&CorpusSpec::languages);
    t["corpus.train_per_language"] = corpus_integer(&CorpusSpec::train_per_language);
    t["corpus.test_per_language"] = corpus_integer(&CorpusSpec::test_per_language);
    t["corpus.feat_dim"] = corpus_integer(&CorpusSpec::feat_dim);
    t["corpus.phones"] = corpus_integer(&CorpusSpec::phones);
    t["corpus.shared_letters"] = corpus_integer(&CorpusSpec::shared_letters);
    t["corpus.private_letters"] = corpus_integer(&CorpusSpec::private_letters);
    t["corpus.min_symbols"] = corpus_integer(&CorpusSpec::min_symbols);
    t["corpus.max_symbols"] = corpus_integer(&CorpusSpec::max_symbols);
    t["corpus.min_duration"] = corpus_integer(&CorpusSpec::min_duration);
    t["corpus.max_duration"] = corpus_integer(&CorpusSpec::max_duration);
    t["corpus.noise_sigma"] = corpus_real(&CorpusSpec::noise_sigma);
    t["corpus.coloring_scale"] = corpus_real(&CorpusSpec::coloring_scale);
    t["corpus.language_offset"] = corpus_real(&CorpusSpec::language_offset);
    t["corpus.boundary_weight"] = corpus_real(&CorpusSpec::boundary_weight);
    t["corpus.bigram_sharpness"] = corpus_real(&CorpusSpec::bigram_sharpness);
    t["min_frames"] = corpus_integer(&CorpusSpec::min_frames);
    t["max_transcript"] = corpus_integer(&CorpusSpec::max_transcript);
    t["lfv_dim"] = integer(&Config::lfv_dim);
    t["lid_hidden"] = integer(&Config::lid_hidden);
    t["lid_epochs"] = integer(&Config::lid_epochs);
    t["width"] = integer(&Config::width);
    t["nlc_hidden"] = integer(&Config::nlc_hidden);
    t["nlc_epochs"] = integer(&Config::nlc_epochs);
    t["subnet_hidden"] = integer(&Config::subnet_hidden);
    t["subnet_epochs"] = integer(&Config::subnet_epochs);
    t["baseline_epochs"] = integer(&Config::baseline_epochs);
    t["joint_epochs"] = integer(&Config::joint_epochs);
    t["lm_hidden"] = integer(&Config::lm_hidden);
    t["lm_epochs"] = integer(&Config::lm_epochs);
    t["lr"] = real(&Config::lr);
    t["momentum"] = real(&Config::momentum);
    t["dropout"] = real(&Config::dropout);
    t["batch_size"] = integer(&Config::batch_size);
    t["clip_norm"] = real(&Config::clip_norm);
    t["patience"] = integer(&Config::patience);
    t["lr_decay"] = real(&Config::lr_decay);
    t["beam"] = integer(&Config::beam);
    t["lm_weight"] = real(&Config::lm_weight);
    return t;
  }();
  return t;
}

}  // namespace

const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> k;
    for (const auto& [name, e] : table()) k.push_back(name);
    return k;
  }();
  return k;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = table().find(key);
  if (it == table().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, trim(value));
}

std::string Config::get(const std::string& key) const {
  auto it = table().find(key);
  if (it == table().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [name, e] : table()) out += name + " = " + e.get(*this) + "\n";
  return out;
}

void Config::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (lfv_dim == 0 || width % lfv_dim != 0) {
    fail("width (" + std::to_string(width) + ") must be a positive multiple of lfv_dim (" +
         std::to_string(lfv_dim) + ")");
  }
  if (lfv_dim >= lid_hidden) fail("lfv_dim must be smaller than lid_hidden");
  if (corpus.languages < 2) fail("corpus.languages must be at least 2");
  if (target_language < 0 || static_cast<std::size_t>(target_language) >= corpus.languages) {
    fail("target_language must name one of the corpus languages");
  }
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (beam < 1) fail("beam must be >= 1");
  if (lr < 0) fail("lr must be non-negative");
  if (momentum < 0 || momentum >= 1) fail("momentum must lie in [0, 1)");
  if (subnet_hidden == 0 || width == 0 || nlc_hidden == 0 || lm_hidden == 0) fail("layer sizes must be positive");
  if (seeds.empty()) fail("seeds must list at least one seed");
}

TrainConfig Config::train(std::size_t epochs, std::uint64_t seed_value, double dropout_rate) const {
  TrainConfig t;
  t.epochs = epochs;
  t.lr = lr;
  t.momentum = momentum;
  t.dropout = dropout_rate;
  t.batch_size = batch_size;
  t.clip_norm = clip_norm;
  t.patience = patience;
  t.lr_decay = lr_decay;
  t.seed = seed_value;
  return t;
}

LidConfig Config::lid(std::uint64_t seed_value) const {
  LidConfig c;
  c.hidden = lid_hidden;
  c.post = lid_hidden;
  c.bottleneck = lfv_dim;
  c.train = train(lid_epochs, seed_value, 0.0);
  return c;
}

NlcConfig Config::nlc(std::uint64_t seed_value) const {
  NlcConfig c;
  c.hidden = nlc_hidden;
  c.width = width;
  c.train = train(nlc_epochs, seed_value, 0.0);
  return c;
}

SubnetConfig Config::subnet(std::uint64_t seed_value, std::size_t hidden) const {
  SubnetConfig c;
  c.hidden = hidden;
  c.train = train(subnet_epochs, seed_value, 0.0);
  return c;
}

CharLmConfig Config::lm(std::uint64_t seed_value) const {
  CharLmConfig c;
  c.hidden = lm_hidden;
  c.train = train(lm_epochs, seed_value, 0.0);
  c.train.batch_size = std::max<std::size_t>(batch_size, 32);
  return c;
}

MainSpec Config::main() const {
  MainSpec m;
  m.width = width;
  m.dropout = dropout;
  return m;
}

}  // namespace metapi
