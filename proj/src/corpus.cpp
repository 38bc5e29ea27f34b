#include "metapi/corpus.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "metapi/error.hpp"

namespace metapi {

namespace fs = std::filesystem;
using nlohmann::json;

int PhoneSet::index(const std::string& phone) const {
  if (phone == UnitInventory::kWordBoundary) return static_cast<int>(pause_row());
  auto it = std::find(names.begin(), names.end(), phone);
  if (it == names.end()) throw DimensionError("unknown phone '" + phone + "'");
  return static_cast<int>(it - names.begin());
}

UnitString SynthLanguage::phone_units(const PhoneSet& phones) const {
  std::set<std::string> used;
  for (int p : grapheme_phone) used.insert(phones.names[static_cast<std::size_t>(p)]);
  return {used.begin(), used.end()};
}

std::vector<std::size_t> Corpus::select(const std::string& split, int language) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    if ((split.empty() || u.split == split) && (language < 0 || u.language == language)) {
      out.push_back(i);
    }
  }
  return out;
}

PhoneSet make_phone_set(const CorpusSpec& spec, const Rng& root) {
  Rng rng = root.substream("phone-prototypes");
  PhoneSet ps;
  for (std::size_t p = 0; p < spec.phones; ++p) {
    ps.names.push_back((p < 10 ? "p0" : "p") + std::to_string(p));
  }
  ps.prototypes.resize(static_cast<Eigen::Index>(spec.phones + 1),
                       static_cast<Eigen::Index>(spec.feat_dim));
  for (Eigen::Index r = 0; r < ps.prototypes.rows(); ++r) {
    for (Eigen::Index c = 0; c < ps.prototypes.cols(); ++c) ps.prototypes(r, c) = rng.normal();
  }
  return ps;
}

namespace {

double condition_number(const Mat<double>& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  return s(0) / s(s.size() - 1);
}

std::string letter(std::size_t i) {
  if (i >= 26) throw ConfigError("synthetic corpus ran out of letters (26 max)");
  return std::string(1, static_cast<char>('a' + i));
}

}  // namespace

SynthLanguage make_language(int id, const CorpusSpec& spec, const PhoneSet& phones,
                            const Rng& root) {
  if (spec.shared_letters + spec.private_letters == 0) {
    throw ConfigError("language " + std::to_string(id) + " has an empty alphabet");
  }
  if (spec.languages > spec.feat_dim) {
    throw ConfigError("need feat_dim >= languages for orthogonal language offsets");
  }
  Rng rng = root.substream("language/" + std::to_string(id));
  const auto D = static_cast<Eigen::Index>(spec.feat_dim);
  SynthLanguage lang;
  lang.id = id;
  lang.name = "L" + std::to_string(id);

  for (std::size_t i = 0; i < spec.shared_letters; ++i) lang.alphabet.push_back(letter(i));
  for (std::size_t i = 0; i < spec.private_letters; ++i) {
    lang.alphabet.push_back(
        letter(spec.shared_letters + static_cast<std::size_t>(id) * spec.private_letters + i));
  }

  std::vector<int> perm(phones.names.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  for (std::size_t i = 0; i < lang.alphabet.size(); ++i) {
    lang.grapheme_phone.push_back(perm[i % perm.size()]);
  }

  do {
    Mat<double> g(D, D);
    for (Eigen::Index r = 0; r < D; ++r) {
      for (Eigen::Index c = 0; c < D; ++c) g(r, c) = rng.normal();
    }
    lang.coloring = Mat<double>::Identity(D, D) + spec.coloring_scale / std::sqrt(double(D)) * g;
  } while (condition_number(lang.coloring) > 10.0);

  // One orthonormal basis shared by all languages, so offsets are mutually
  // orthogonal.
  Rng basis_rng = root.substream("offset-basis");
  Eigen::MatrixXd g(D, D);
  for (Eigen::Index r = 0; r < D; ++r) {
    for (Eigen::Index c = 0; c < D; ++c) g(r, c) = basis_rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  lang.offset = spec.language_offset * q.col(id);

  const std::size_t A = lang.alphabet.size();
  lang.bigram = Mat<double>::Zero(static_cast<Eigen::Index>(A + 1),
                                  static_cast<Eigen::Index>(A + 1));
  for (std::size_t r = 0; r <= A; ++r) {
    double letters = 0;
    for (std::size_t c = 0; c < A; ++c) {
      const double w = std::exp(spec.bigram_sharpness * rng.normal());
      lang.bigram(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = w;
      letters += w;
    }
    if (r < A) {
      lang.bigram(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(A)) =
          letters * spec.boundary_weight / (1.0 - spec.boundary_weight);
    }
  }
  return lang;
}

std::vector<Utterance> generate(const SynthLanguage& lang, const PhoneSet& phones,
                                std::size_t n, const CorpusSpec& spec, Rng& rng,
                                std::size_t first_index) {
  if (lang.alphabet.empty()) throw ConfigError(lang.name + ": empty alphabet");
  if (spec.min_symbols == 0 || spec.max_symbols < spec.min_symbols) {
    throw ConfigError("transcript length bounds are invalid");
  }
  if (spec.min_duration == 0 || spec.max_duration < spec.min_duration) {
    throw ConfigError("phone duration bounds are invalid");
  }
  const std::size_t A = lang.alphabet.size();
  const auto D = static_cast<Eigen::Index>(spec.feat_dim);
  std::vector<Utterance> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Utterance u;
    char buf[16];
    std::snprintf(buf, sizeof buf, "_%05zu", first_index + k);
    u.id = lang.name + buf;
    u.language = lang.id;

    const std::size_t len =
        spec.min_symbols + rng.below(spec.max_symbols - spec.min_symbols + 1);
    std::size_t prev = A;
    std::vector<std::size_t> symbols;
    for (std::size_t pos = 0; pos < len; ++pos) {
      std::vector<double> w(A + 1);
      for (std::size_t c = 0; c <= A; ++c) {
        w[c] = lang.bigram(static_cast<Eigen::Index>(prev), static_cast<Eigen::Index>(c));
      }
      if (pos == 0 || pos + 1 == len || prev == A) w[A] = 0;
      prev = rng.categorical(w);
      symbols.push_back(prev);
    }

    std::vector<std::size_t> rows;
    for (std::size_t s : symbols) {
      if (s == A) {
        u.graphemes.push_back(UnitInventory::kWordBoundary);
        u.phones.push_back(UnitInventory::kWordBoundary);
        rows.push_back(phones.pause_row());
      } else {
        const auto p = static_cast<std::size_t>(lang.grapheme_phone[s]);
        u.graphemes.push_back(lang.alphabet[s]);
        u.phones.push_back(phones.names[p]);
        rows.push_back(p);
      }
    }

    std::size_t total = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      u.durations.push_back(spec.min_duration +
                            rng.below(spec.max_duration - spec.min_duration + 1));
      total += u.durations.back();
    }
    u.features.resize(static_cast<Eigen::Index>(total), D);
    Eigen::Index t = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Eigen::VectorXd clean =
          lang.coloring * phones.prototypes.row(static_cast<Eigen::Index>(rows[i])).transpose() +
          lang.offset;
      for (std::size_t f = 0; f < u.durations[i]; ++f, ++t) {
        for (Eigen::Index d = 0; d < D; ++d) {
          u.features(t, d) = static_cast<float>(clean(d) + spec.noise_sigma * rng.normal());
        }
      }
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<Utterance> filter(std::vector<Utterance> utts, std::size_t min_frames,
                              std::size_t max_transcript, FilterReport* report) {
  FilterReport local;
  std::vector<Utterance> kept;
  for (auto& u : utts) {
    if (u.graphemes.empty()) {
      ++local.empty;
    } else if (u.frames() < min_frames) {
      ++local.too_short;
    } else if (u.graphemes.size() > max_transcript) {
      ++local.too_long;
    } else {
      kept.push_back(std::move(u));
    }
  }
  local.kept = kept.size();
  if (report) {
    report->kept += local.kept;
    report->too_short += local.too_short;
    report->too_long += local.too_long;
    report->empty += local.empty;
  }
  return kept;
}

Corpus build_corpus(const CorpusSpec& spec) {
  if (spec.languages == 0) throw ConfigError("corpus needs at least one language");
  Corpus corpus;
  corpus.spec = spec;
  const Rng root(spec.seed);
  corpus.phone_set = make_phone_set(spec, root);
  const std::size_t quota = spec.train_per_language + spec.test_per_language;
  for (std::size_t l = 0; l < spec.languages; ++l) {
    const int id = static_cast<int>(l);
    corpus.languages.push_back(make_language(id, spec, corpus.phone_set, root));
    const SynthLanguage& lang = corpus.languages.back();
    Rng gen = root.substream("utterances/" + std::to_string(l));
    std::vector<Utterance> kept;
    std::size_t next_index = 0;
    std::size_t attempts = 0;
    while (kept.size() < quota) {
      auto batch = generate(lang, corpus.phone_set, 1, spec, gen, next_index++);
      auto survivors = filter(std::move(batch), spec.min_frames, spec.max_transcript,
                              &corpus.filter_report);
      for (auto& u : survivors) kept.push_back(std::move(u));
      if (++attempts > 100 * quota + 1000) {
        throw ConfigError("corpus filter rejects nearly every utterance of " + lang.name);
      }
    }
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng = root.substream("split/" + std::to_string(l));
    split_rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); ++i) {
      kept[order[i]].split = i < spec.test_per_language ? "test" : "train";
    }
    for (auto& u : kept) corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

UnitInventory build_inventory(const std::vector<SynthLanguage>& langs, InventoryMode mode,
                              const PhoneSet* phones) {
  if (langs.empty()) throw DimensionError("build_inventory: no languages");
  if (mode == InventoryMode::per_language && langs.size() != 1) {
    throw DimensionError("build_inventory: per_language mode takes exactly one language");
  }
  std::vector<std::string> units;
  for (const auto& l : langs) {
    if (mode == InventoryMode::global_phones) {
      if (!phones) throw DimensionError("build_inventory: global_phones needs the phone set");
      for (auto& p : l.phone_units(*phones)) units.push_back(p);
    } else {
      units.insert(units.end(), l.alphabet.begin(), l.alphabet.end());
    }
  }
  if (units.empty()) throw DimensionError("build_inventory: empty unit union");
  return UnitInventory(std::move(units));
}

std::vector<std::vector<std::size_t>> sort_and_batch(const std::vector<std::size_t>& frame_counts,
                                                     std::size_t batch_size, BatchOrder order,
                                                     std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("sort_and_batch: batch_size must be >= 1");
  std::vector<std::size_t> idx(frame_counts.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (order == BatchOrder::ascending_length) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return frame_counts[a] < frame_counts[b];
    });
  } else {
    Rng rng(seed);
    rng.shuffle(idx);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < idx.size(); i += batch_size) {
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, idx.size())));
  }
  return batches;
}

template <class T>
Batch<T> make_batch(const std::vector<Utterance>& utts, const std::vector<std::size_t>& members,
                    TargetKind kind, const UnitInventory& inventory) {
  std::vector<Mat<T>> feats;
  feats.reserve(members.size());
  Batch<T> batch;
  batch.members = members;
  for (std::size_t m : members) {
    const Utterance& u = utts.at(m);
    feats.push_back(u.features.template cast<T>());
    batch.targets.push_back(inventory.encode(kind == TargetKind::graphemes ? u.graphemes : u.phones));
  }
  std::vector<const Mat<T>*> ptrs;
  for (auto& f : feats) ptrs.push_back(&f);
  batch.features = SeqBatch<T>::pack(ptrs);
  return batch;
}

template Batch<float> make_batch(const std::vector<Utterance>&, const std::vector<std::size_t>&,
                                 TargetKind, const UnitInventory&);
template Batch<double> make_batch(const std::vector<Utterance>&, const std::vector<std::size_t>&,
                                  TargetKind, const UnitInventory&);

double linear_language_separability(const Corpus& corpus, std::size_t max_frames_per_utt) {
  const auto L = static_cast<Eigen::Index>(corpus.languages.size());
  const auto D = static_cast<Eigen::Index>(corpus.spec.feat_dim);
  auto frames_of = [&](const Utterance& u) {
    std::vector<Eigen::Index> rows;
    const std::size_t n = u.frames();
    const std::size_t take = std::min(n, max_frames_per_utt);
    for (std::size_t k = 0; k < take; ++k) rows.push_back(static_cast<Eigen::Index>(k * n / take));
    return rows;
  };

  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(L, D);
  std::vector<double> counts(static_cast<std::size_t>(L), 0.0);
  for (auto i : corpus.select("train")) {
    const auto& u = corpus.utterances[i];
    for (auto r : frames_of(u)) {
      means.row(u.language) += u.features.row(r).cast<double>();
      counts[static_cast<std::size_t>(u.language)] += 1;
    }
  }
  for (Eigen::Index l = 0; l < L; ++l) means.row(l) /= std::max(1.0, counts[static_cast<std::size_t>(l)]);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(D, D);
  double n = 0;
  for (auto i : corpus.select("train")) {
    const auto& u = corpus.utterances[i];
    for (auto r : frames_of(u)) {
      const Eigen::VectorXd d = u.features.row(r).cast<double>().transpose() - means.row(u.language).transpose();
      cov += d * d.transpose();
      n += 1;
    }
  }
  cov /= std::max(1.0, n - 1);
  cov += 1e-6 * Eigen::MatrixXd::Identity(D, D);
  const Eigen::MatrixXd w = cov.ldlt().solve(means.transpose());  // D x L
  Eigen::VectorXd bias(L);
  for (Eigen::Index l = 0; l < L; ++l) bias(l) = -0.5 * means.row(l).dot(w.col(l));

  std::size_t correct = 0, total = 0;
  for (auto i : corpus.select("test")) {
    const auto& u = corpus.utterances[i];
    for (Eigen::Index r = 0; r < u.features.rows(); ++r) {
      const Eigen::RowVectorXd s = u.features.row(r).cast<double>() * w + bias.transpose();
      Eigen::Index best;
      s.maxCoeff(&best);
      correct += best == u.language;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------- disk I/O

namespace {

constexpr std::array<char, 4> kFeatMagic{'M', 'P', 'C', 'F'};
constexpr std::uint16_t kFeatVersion = 1;

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(std::istream& is) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) throw FormatError("unexpected end of file");
    v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(c)) << (8 * i));
  }
  return v;
}

json matrix_json(const Mat<double>& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Mat<double> matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Mat<double> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json spec_json(const CorpusSpec& s) {
  return json{{"languages", s.languages},
              {"train_per_language", s.train_per_language},
              {"test_per_language", s.test_per_language},
              {"feat_dim", s.feat_dim},
              {"phones", s.phones},
              {"shared_letters", s.shared_letters},
              {"private_letters", s.private_letters},
              {"min_symbols", s.min_symbols},
              {"max_symbols", s.max_symbols},
              {"min_duration", s.min_duration},
              {"max_duration", s.max_duration},
              {"noise_sigma", s.noise_sigma},
              {"coloring_scale", s.coloring_scale},
              {"language_offset", s.language_offset},
              {"boundary_weight", s.boundary_weight},
              {"bigram_sharpness", s.bigram_sharpness},
              {"min_frames", s.min_frames},
              {"max_transcript", s.max_transcript},
              {"seed", s.seed}};
}

CorpusSpec spec_from_json(const json& j) {
  CorpusSpec s;
  s.languages = j.at("languages");
  s.train_per_language = j.at("train_per_language");
  s.test_per_language = j.at("test_per_language");
  s.feat_dim = j.at("feat_dim");
  s.phones = j.at("phones");
  s.shared_letters = j.at("shared_letters");
  s.private_letters = j.at("private_letters");
  s.min_symbols = j.at("min_symbols");
  s.max_symbols = j.at("max_symbols");
  s.min_duration = j.at("min_duration");
  s.max_duration = j.at("max_duration");
  s.noise_sigma = j.at("noise_sigma");
  s.coloring_scale = j.at("coloring_scale");
  s.language_offset = j.at("language_offset");
  s.boundary_weight = j.at("boundary_weight");
  s.bigram_sharpness = j.at("bigram_sharpness");
  s.min_frames = j.at("min_frames");
  s.max_transcript = j.at("max_transcript");
  s.seed = j.at("seed");
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << text << '\n';
}

std::string read_line(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  return line;
}

}  // namespace

void write_features(const fs::path& path, const Mat<float>& feats) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os.write(kFeatMagic.data(), 4);
  put_le<std::uint16_t>(os, kFeatVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(feats.rows()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(feats.cols()));
  for (Eigen::Index r = 0; r < feats.rows(); ++r) {
    for (Eigen::Index c = 0; c < feats.cols(); ++c) {
      put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(feats(r, c)));
    }
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

Mat<float> read_features(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kFeatMagic) throw FormatError(path.string() + ": not an MPCF feature file");
  const auto version = get_le<std::uint16_t>(is);
  if (version != kFeatVersion) {
    throw FormatError(path.string() + ": unsupported MPCF version " + std::to_string(version));
  }
  const auto T = get_le<std::uint32_t>(is);
  const auto D = get_le<std::uint32_t>(is);
  Mat<float> m(T, D);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = std::bit_cast<float>(get_le<std::uint32_t>(is));
    }
  }
  return m;
}

std::string join_units(const UnitString& units) {
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (i) out += ' ';
    out += units[i];
  }
  return out;
}

UnitString split_units(const std::string& text) {
  UnitString out;
  std::istringstream is(text);
  std::string u;
  while (is >> u) out.push_back(u);
  return out;
}

void write_corpus(const fs::path& dir, const Corpus& corpus) {
  std::error_code ec;
  fs::create_directories(dir / "feats", ec);
  fs::create_directories(dir / "text", ec);
  if (ec || !fs::is_directory(dir / "feats")) {
    throw FormatError("cannot create corpus directory " + dir.string());
  }
  json langs = json::array();
  for (const auto& l : corpus.languages) {
    langs.push_back(json{{"id", l.id},
                         {"name", l.name},
                         {"alphabet", l.alphabet},
                         {"grapheme_phone", l.grapheme_phone},
                         {"coloring", matrix_json(l.coloring)},
                         {"offset", std::vector<double>(l.offset.data(), l.offset.data() + l.offset.size())},
                         {"bigram", matrix_json(l.bigram)}});
  }
  json meta{{"spec", spec_json(corpus.spec)},
            {"phones", {{"names", corpus.phone_set.names},
                        {"prototypes", matrix_json(corpus.phone_set.prototypes)}}},
            {"languages", langs},
            {"filter", {{"kept", corpus.filter_report.kept},
                        {"too_short", corpus.filter_report.too_short},
                        {"too_long", corpus.filter_report.too_long},
                        {"empty", corpus.filter_report.empty}}}};
  write_text(dir / "languages.json", meta.dump(1));

  std::ofstream manifest(dir / "manifest.tsv", std::ios::binary);
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  for (const auto& u : corpus.utterances) {
    manifest << u.id << '\t' << corpus.languages[static_cast<std::size_t>(u.language)].name << '\t'
             << u.split << '\t' << u.frames() << '\t' << join_units(u.graphemes) << '\n';
    write_features(dir / "feats" / (u.id + ".mpcf"), u.features);
    write_text(dir / "text" / (u.id + ".txt"), join_units(u.graphemes));
    write_text(dir / "text" / (u.id + ".phn"), join_units(u.phones));
  }
}

Corpus read_corpus(const fs::path& dir) {
  std::ifstream meta_in(dir / "languages.json");
  if (!meta_in) throw FormatError("no corpus at " + dir.string() + " (languages.json missing)");
  const json meta = json::parse(meta_in);
  Corpus corpus;
  corpus.spec = spec_from_json(meta.at("spec"));
  corpus.phone_set.names = meta.at("phones").at("names").get<std::vector<std::string>>();
  corpus.phone_set.prototypes = matrix_from_json(meta.at("phones").at("prototypes"));
  std::map<std::string, int> by_name;
  for (const auto& jl : meta.at("languages")) {
    SynthLanguage l;
    l.id = jl.at("id");
    l.name = jl.at("name");
    l.alphabet = jl.at("alphabet").get<std::vector<std::string>>();
    l.grapheme_phone = jl.at("grapheme_phone").get<std::vector<int>>();
    l.coloring = matrix_from_json(jl.at("coloring"));
    const auto off = jl.at("offset").get<std::vector<double>>();
    l.offset = Eigen::Map<const Eigen::VectorXd>(off.data(), static_cast<Eigen::Index>(off.size()));
    l.bigram = matrix_from_json(jl.at("bigram"));
    by_name[l.name] = l.id;
    corpus.languages.push_back(std::move(l));
  }
  const auto& f = meta.at("filter");
  corpus.filter_report = {f.at("kept"), f.at("too_short"), f.at("too_long"), f.at("empty")};

  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw FormatError("manifest.tsv missing in " + dir.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int k = 0; k < 4; ++k) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) throw FormatError("manifest line " + std::to_string(lineno) + " is malformed");
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    fields.push_back(line.substr(start));
    Utterance u;
    u.id = fields[0];
    auto it = by_name.find(fields[1]);
    if (it == by_name.end()) throw FormatError("manifest names unknown language '" + fields[1] + "'");
    u.language = it->second;
    u.split = fields[2];
    u.features = read_features(dir / "feats" / (u.id + ".mpcf"));
    if (static_cast<std::size_t>(u.features.rows()) != std::stoull(fields[3])) {
      throw FormatError(u.id + ": manifest frame count disagrees with feature file");
    }
    u.graphemes = split_units(read_line(dir / "text" / (u.id + ".txt")));
    u.phones = split_units(read_line(dir / "text" / (u.id + ".phn")));
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

std::uint64_t corpus_hash(const Corpus& corpus) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& u : corpus.utterances) {
    feed(u.id.data(), u.id.size());
    feed(u.split.data(), u.split.size());
    feed(u.features.data(), sizeof(float) * static_cast<std::size_t>(u.features.size()));
    const std::string g = join_units(u.graphemes) + "/" + join_units(u.phones);
    feed(g.data(), g.size());
  }
  return h;
}

}  // namespace metapi
