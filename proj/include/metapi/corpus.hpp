#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metapi/inventory.hpp"
#include "metapi/rng.hpp"
#include "metapi/seq_batch.hpp"

namespace metapi {

// Knobs of the synthetic multilingual corpus. Defaults give the desk-scale
// corpus used by the reproduction pipeline.
struct CorpusSpec {
  std::size_t languages = 4;
  std::size_t train_per_language = 600;
  std::size_t test_per_language = 60;
  std::size_t feat_dim = 20;
  std::size_t phones = 12;
  std::size_t shared_letters = 6;
  std::size_t private_letters = 3;
  // transcript length in symbols, word boundaries included
  std::size_t min_symbols = 15;
  std::size_t max_symbols = 25;
  std::size_t min_duration = 3;
  std::size_t max_duration = 8;
  double noise_sigma = 0.5;
  double coloring_scale = 0.25;
  double language_offset = 3.0;
  double boundary_weight = 0.25;
  double bigram_sharpness = 1.5;
  std::size_t min_frames = 100;
  std::size_t max_transcript = 639;
  std::uint64_t seed = 11;
};

// Shared acoustic prototypes. Row `phones` is the pause emitted for word
// boundaries.
struct PhoneSet {
  std::vector<std::string> names;
  Mat<double> prototypes;

  std::size_t pause_row() const { return names.size(); }
  int index(const std::string& phone) const;
};

struct SynthLanguage {
  int id = 0;
  std::string name;
  std::vector<std::string> alphabet;
  // alphabet[i] is pronounced as phone_set.names[grapheme_phone[i]]
  std::vector<int> grapheme_phone;
  Mat<double> coloring;            // A, feat_dim x feat_dim
  Eigen::VectorXd offset;          // b
  // Row/column k < |alphabet| is a letter, k == |alphabet| is the word
  // boundary (as column) or utterance start (as row).
  Mat<double> bigram;

  UnitString phone_units(const PhoneSet& phones) const;
};

struct Utterance {
  std::string id;
  int language = 0;
  std::string split;  // "train" or "test"
  Mat<float> features;
  UnitString graphemes;
  UnitString phones;
  std::vector<std::size_t> durations;  // frames per phone; empty when loaded from disk

  std::size_t frames() const { return static_cast<std::size_t>(features.rows()); }
};

struct FilterReport {
  std::size_t kept = 0;
  std::size_t too_short = 0;
  std::size_t too_long = 0;
  std::size_t empty = 0;
  std::size_t dropped() const { return too_short + too_long + empty; }
};

struct Corpus {
  CorpusSpec spec;
  PhoneSet phone_set;
  std::vector<SynthLanguage> languages;
  std::vector<Utterance> utterances;
  FilterReport filter_report;

  std::vector<std::size_t> select(const std::string& split, int language = -1) const;
};

PhoneSet make_phone_set(const CorpusSpec& spec, const Rng& rng);
SynthLanguage make_language(int id, const CorpusSpec& spec, const PhoneSet& phones,
                            const Rng& rng);

// Draws n utterances: a grapheme string from the bigram process, mapped to
// phones, each phone held for min..max_duration frames of
// A*prototype + b + noise.
std::vector<Utterance> generate(const SynthLanguage& lang, const PhoneSet& phones,
                                std::size_t n, const CorpusSpec& spec, Rng& rng,
                                std::size_t first_index = 0);

// Keeps utterances with >= min_frames frames and a non-empty transcript of
// at most max_transcript symbols, preserving order.
std::vector<Utterance> filter(std::vector<Utterance> utts, std::size_t min_frames,
                              std::size_t max_transcript, FilterReport* report = nullptr);

// Full corpus: per-language generation until the train+test quota survives
// the filter, then a random per-language split.
Corpus build_corpus(const CorpusSpec& spec);

enum class InventoryMode { per_language, joint_graphemes, global_phones };

UnitInventory build_inventory(const std::vector<SynthLanguage>& langs, InventoryMode mode,
                              const PhoneSet* phones = nullptr);

enum class BatchOrder { ascending_length, shuffled };

// Batches of utterance indices. ascending_length sorts by frame count
// (stable, ties by position); shuffled permutes with the seed.
std::vector<std::vector<std::size_t>> sort_and_batch(const std::vector<std::size_t>& frame_counts,
                                                     std::size_t batch_size, BatchOrder order,
                                                     std::uint64_t seed = 0);

enum class TargetKind { graphemes, phones };

template <class T>
struct Batch {
  SeqBatch<T> features;
  std::vector<LabelSeq> targets;
  std::vector<std::size_t> members;
};

template <class T>
Batch<T> make_batch(const std::vector<Utterance>& utts, const std::vector<std::size_t>& members,
                    TargetKind kind, const UnitInventory& inventory);

// Accuracy of a pooled-covariance linear discriminant trained on single
// frames of the train split and scored on the test split.
double linear_language_separability(const Corpus& corpus, std::size_t max_frames_per_utt = 20);

// --- on-disk format

// MPCF feature file: "MPCF", u16 version, u32 T, u32 D, T*D little-endian f32.
void write_features(const std::filesystem::path& path, const Mat<float>& feats);
Mat<float> read_features(const std::filesystem::path& path);

std::string join_units(const UnitString& units);
UnitString split_units(const std::string& text);

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);

// Stable digest of all utterance ids, features and transcripts.
std::uint64_t corpus_hash(const Corpus& corpus);

}  // namespace metapi
