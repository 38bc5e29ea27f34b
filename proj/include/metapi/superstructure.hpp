#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metapi/corpus.hpp"
#include "metapi/lang_codes.hpp"
#include "metapi/layers.hpp"
#include "metapi/training.hpp"

namespace metapi {

struct CtcModelSpec {
  std::string name = "model";
  std::size_t feat_dim = 20;
  std::size_t hidden = 16;
  std::size_t layers = 3;
  Merge merge = Merge::pairwise_max;
  std::size_t units = 0;  // output width, blank included
  double dropout = 0.0;
};

// BiLSTM stack with a dense CTC output layer. Serves as a monolingual subnet
// (whose head is detached on integration) and as the monolingual baseline.
template <class T>
class CtcModel {
 public:
  CtcModel() = default;
  explicit CtcModel(const CtcModelSpec& spec);

  void init(const Rng& rng);

  SeqBatch<T> encode(const SeqBatch<T>& x, bool training = false, Rng* rng = nullptr);
  SeqBatch<T> encode_backward(const SeqBatch<T>& dh);

  SeqBatch<T> logits(const SeqBatch<T>& x, bool training = false, Rng* rng = nullptr);
  void backward(const SeqBatch<T>& dlogits);

  void collect(ParameterSet<T>& ps);
  void detach_head();
  bool has_head() const { return has_head_; }

  const CtcModelSpec& spec() const { return spec_; }
  std::size_t out_dim() const { return rnn.out_dim(); }

  BiLstmStack<T> rnn;
  Dense<T> head;

 private:
  CtcModelSpec spec_;
  bool has_head_ = true;
};

template <class T>
struct Subnet {
  int language = 0;
  TargetKind kind = TargetKind::phones;
  UnitInventory inventory;
  CtcModel<T> model;
};

std::string subnet_name(int language, TargetKind kind);
std::string to_string(TargetKind kind);
TargetKind target_kind_from_string(const std::string& s);

// --- CTC training loop shared by subnets, the baseline and joint training

struct CtcTrainReport {
  std::vector<EpochMetrics> epochs;
  double initial_cer = 0;
  double final_cer = 0;
  double final_heldout_loss = 0;
  std::size_t skipped = 0;
};

// Mean per-utterance CTC loss of a batch and its gradient w.r.t. the
// logits. Utterances with too few frames contribute nothing and are counted
// in `skipped`.
template <class T>
struct BatchCtc {
  double loss_sum = 0;
  std::size_t counted = 0;
  std::size_t skipped = 0;
  SeqBatch<T> dlogits;
};

template <class T>
BatchCtc<T> ctc_batch(const SeqBatch<T>& logits, const std::vector<LabelSeq>& targets,
                      bool with_grad);

// Per-utterance log-posteriors (double) in the order of `utts`.
template <class T, class Model>
std::vector<Mat<double>> log_posteriors(Model& model, const std::vector<Utterance>& utts,
                                        std::size_t batch_size = 16);

template <class T, class Model>
ErrorReport greedy_errors(Model& model, const std::vector<Utterance>& utts, TargetKind kind,
                          const UnitInventory& inventory, std::size_t batch_size = 16);

// Trains with mean-per-utterance CTC, Nesterov SGD and plateau lr decay.
// Epoch 1 visits batches in ascending length order, later epochs shuffle.
// `cer_set` (defaults to `heldout`) is decoded greedily after every epoch.
template <class T, class Model>
CtcTrainReport train_ctc(Model& model, const std::string& stage, const std::vector<Utterance>& train,
                         const std::vector<Utterance>& heldout, TargetKind kind,
                         const UnitInventory& inventory, const TrainConfig& config,
                         const EpochCallback& on_epoch = {},
                         const std::vector<Utterance>* cer_set = nullptr);

struct SubnetConfig {
  std::size_t hidden = 16;
  std::size_t layers = 3;
  TrainConfig train{.epochs = 10, .lr = 0.05, .momentum = 0.9, .dropout = 0.0};
};

// Monolingual CTC subnet. Throws when `train` mixes languages.
template <class T>
Subnet<T> train_subnet(const std::vector<Utterance>& train, const std::vector<Utterance>& heldout,
                       const SynthLanguage& language, TargetKind kind, const PhoneSet& phones,
                       const SubnetConfig& config, CtcTrainReport* report = nullptr,
                       const EpochCallback& on_epoch = {},
                       const CheckpointHook<Subnet<T>>& checkpoint = {});

// --- superstructure

enum class CodeMode { no_adaptation, stacked_lfv_modulation, nlc_modulation };

std::string to_string(CodeMode m);
CodeMode code_mode_from_string(const std::string& s);

struct MainSpec {
  std::size_t width = 64;
  std::size_t part1_layers = 2;
  std::size_t part2_layers = 2;
  double dropout = 0.2;
};

template <class T>
class MainNet {
 public:
  MainNet() = default;
  MainNet(std::size_t in_dim, std::size_t units, const MainSpec& spec);

  void init(const Rng& rng);
  void collect(ParameterSet<T>& ps);

  const MainSpec& spec() const { return spec_; }

  BiLstmStack<T> part1;
  BiLstmStack<T> part2;
  Dense<T> out;

 private:
  MainSpec spec_;
};

template <class T>
class Superstructure {
 public:
  std::vector<Subnet<T>> subnets;
  LfvExtractor<T> lid;  // frozen
  NlcNet<T> nlc;
  MainNet<T> main;
  UnitInventory joint;
  CodeMode mode = CodeMode::nlc_modulation;

  // Forward pass with LFVs computed by the frozen extractor.
  SeqBatch<T> logits(const SeqBatch<T>& features, bool training = false, Rng* rng = nullptr);

  // `codes`, when given, replaces the mode's coefficient source.
  SeqBatch<T> forward(const SeqBatch<T>& features, const SeqBatch<T>& lfv, bool training = false,
                      Rng* rng = nullptr, const SeqBatch<T>* codes = nullptr);
  void backward(const SeqBatch<T>& dlogits);

  // Trainable parameters under the current mode: subnet encoders, the NLC
  // net when it produces the codes, and the main net.
  void collect(ParameterSet<T>& ps);
  // Everything, the frozen LID layers included, for serialization.
  void collect_all(ParameterSet<T>& ps);

  std::size_t width() const { return main.spec().width; }

  // Values captured by the last forward/backward pass.
  const SeqBatch<T>& part1_output() const { return part1_out_; }
  const SeqBatch<T>& codes() const { return codes_; }
  const SeqBatch<T>& part2_input() const { return part2_in_; }
  const SeqBatch<T>& part1_output_grad() const { return dpart1_; }

 private:
  std::vector<std::size_t> subnet_offsets() const;

  bool codes_from_nlc_ = false;
  SeqBatch<T> part1_out_, codes_, part2_in_, dpart1_;
};

// Wires pretrained subnets (heads detached here) and the pretrained NLC
// path into a freshly initialized main network.
template <class T>
Superstructure<T> assemble(std::vector<Subnet<T>> subnets, LfvExtractor<T> lid, NlcNet<T> nlc,
                           UnitInventory joint, const MainSpec& spec, const Rng& rng,
                           CodeMode mode = CodeMode::nlc_modulation);

template <class T>
void ablate(Superstructure<T>& s, CodeMode mode) {
  s.mode = mode;
}

// Joint CTC fine-tuning over the joint grapheme inventory. Main-net dropout
// follows config.dropout.
template <class T>
CtcTrainReport train_joint(Superstructure<T>& s, const std::vector<Utterance>& train,
                           const std::vector<Utterance>& heldout, const TrainConfig& config,
                           const EpochCallback& on_epoch = {},
                           const std::vector<Utterance>* cer_set = nullptr);

}  // namespace metapi
