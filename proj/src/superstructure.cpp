#include "metapi/superstructure.hpp"

#include <numeric>

#include "metapi/ctc.hpp"
#include "metapi/ops.hpp"
#include "metapi/optimizer.hpp"

namespace metapi {

// ---------------------------------------------------------------- CtcModel

template <class T>
CtcModel<T>::CtcModel(const CtcModelSpec& spec)
    : rnn(spec.name + ".rnn", spec.feat_dim, spec.hidden, spec.layers, spec.merge, spec.dropout),
      spec_(spec) {
  if (spec.units < 2) throw DimensionError(spec.name + ": output needs blank plus at least one unit");
  head = Dense<T>(spec.name + ".head", rnn.out_dim(), spec.units);
}

template <class T>
void CtcModel<T>::init(const Rng& rng) {
  rnn.init(rng);
  if (has_head_) head.init(rng);
}

template <class T>
SeqBatch<T> CtcModel<T>::encode(const SeqBatch<T>& x, bool training, Rng* rng) {
  return rnn.forward(x, training, rng);
}

template <class T>
SeqBatch<T> CtcModel<T>::encode_backward(const SeqBatch<T>& dh) {
  return rnn.backward(dh);
}

template <class T>
SeqBatch<T> CtcModel<T>::logits(const SeqBatch<T>& x, bool training, Rng* rng) {
  if (!has_head_) throw DimensionError(spec_.name + ": output layer was detached");
  return head.forward(encode(x, training, rng));
}

template <class T>
void CtcModel<T>::backward(const SeqBatch<T>& dlogits) {
  encode_backward(head.backward(dlogits));
}

template <class T>
void CtcModel<T>::collect(ParameterSet<T>& ps) {
  rnn.collect(ps);
  if (has_head_) head.collect(ps);
}

template <class T>
void CtcModel<T>::detach_head() {
  has_head_ = false;
  head = Dense<T>();
}

std::string to_string(TargetKind kind) {
  return kind == TargetKind::graphemes ? "graphemes" : "phones";
}

TargetKind target_kind_from_string(const std::string& s) {
  if (s == "graphemes") return TargetKind::graphemes;
  if (s == "phones") return TargetKind::phones;
  throw ConfigError("unknown target kind '" + s + "' (graphemes, phones)");
}

std::string subnet_name(int language, TargetKind kind) {
  return "subnet.L" + std::to_string(language) + "." + to_string(kind);
}

// ---------------------------------------------------------------- CTC loop

template <class T>
BatchCtc<T> ctc_batch(const SeqBatch<T>& logits, const std::vector<LabelSeq>& targets,
                      bool with_grad) {
  if (targets.size() != logits.batch()) {
    throw DimensionError("ctc_batch: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.batch()) + " sequences");
  }
  BatchCtc<T> out;
  if (with_grad) {
    out.dlogits = SeqBatch<T>::like(logits, logits.dim());
    out.dlogits.mat().setZero();
  }
  std::vector<std::pair<std::size_t, Mat<double>>> grads;
  for (std::size_t b = 0; b < logits.batch(); ++b) {
    if (ctc_min_frames(targets[b]) > logits.lengths()[b]) {
      ++out.skipped;
      continue;
    }
    const Mat<double> lp = log_softmax_rows(logits.sequence(b).template cast<double>());
    auto r = ctc_loss(lp, targets[b]);
    out.loss_sum += r.loss;
    ++out.counted;
    if (with_grad) grads.emplace_back(b, log_softmax_backward(lp, r.grad));
  }
  if (with_grad && out.counted > 0) {
    const double scale = 1.0 / static_cast<double>(out.counted);
    for (auto& [b, g] : grads) {
      for (Eigen::Index t = 0; t < g.rows(); ++t) {
        out.dlogits.frame(static_cast<std::size_t>(t), b) = (scale * g.row(t)).template cast<T>();
      }
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> frame_counts(const std::vector<Utterance>& utts) {
  std::vector<std::size_t> n;
  n.reserve(utts.size());
  for (const auto& u : utts) n.push_back(u.frames());
  return n;
}

struct Evaluation {
  double loss = kNotApplicable;
  ErrorReport errors;
  std::size_t skipped = 0;
};

template <class T, class Model>
Evaluation evaluate(Model& model, const std::vector<Utterance>& utts, TargetKind kind,
                    const UnitInventory& inventory, std::size_t batch_size, bool want_errors) {
  Evaluation ev;
  if (utts.empty()) return ev;
  double loss = 0;
  std::size_t counted = 0;
  for (const auto& members :
       sort_and_batch(frame_counts(utts), batch_size, BatchOrder::ascending_length)) {
    auto batch = make_batch<T>(utts, members, kind, inventory);
    auto logits = model.logits(batch.features, false, nullptr);
    auto bc = ctc_batch(logits, batch.targets, false);
    loss += bc.loss_sum;
    counted += bc.counted;
    ev.skipped += bc.skipped;
    if (!want_errors) continue;
    for (std::size_t b = 0; b < members.size(); ++b) {
      const Mat<double> lp = logits.sequence(b).template cast<double>();
      const auto& u = utts[members[b]];
      const auto hyp = inventory.decode(greedy_decode(lp));
      ev.errors += score_utterance(kind == TargetKind::graphemes ? u.graphemes : u.phones, hyp,
                                   ScoreLevel::character, UnitInventory::kWordBoundary);
    }
  }
  ev.loss = counted ? loss / static_cast<double>(counted) : kNotApplicable;
  return ev;
}

}  // namespace

template <class T, class Model>
std::vector<Mat<double>> log_posteriors(Model& model, const std::vector<Utterance>& utts,
                                        std::size_t batch_size) {
  std::vector<Mat<double>> out(utts.size());
  const UnitInventory none;
  for (const auto& members :
       sort_and_batch(frame_counts(utts), batch_size, BatchOrder::ascending_length)) {
    std::vector<Mat<T>> feats;
    for (auto m : members) feats.push_back(utts[m].features.template cast<T>());
    std::vector<const Mat<T>*> ptrs;
    for (auto& f : feats) ptrs.push_back(&f);
    auto logits = model.logits(SeqBatch<T>::pack(ptrs), false, nullptr);
    for (std::size_t b = 0; b < members.size(); ++b) {
      out[members[b]] = log_softmax_rows(logits.sequence(b).template cast<double>());
    }
  }
  return out;
}

template <class T, class Model>
ErrorReport greedy_errors(Model& model, const std::vector<Utterance>& utts, TargetKind kind,
                          const UnitInventory& inventory, std::size_t batch_size) {
  return evaluate<T>(model, utts, kind, inventory, batch_size, true).errors;
}

template <class T, class Model>
CtcTrainReport train_ctc(Model& model, const std::string& stage, const std::vector<Utterance>& train,
                         const std::vector<Utterance>& heldout, TargetKind kind,
                         const UnitInventory& inventory, const TrainConfig& config,
                         const EpochCallback& on_epoch, const std::vector<Utterance>* cer_set) {
  if (train.empty()) throw ConfigError(stage + ": empty training set");
  if (config.batch_size == 0) throw ConfigError(stage + ": batch_size must be >= 1");
  const std::vector<Utterance>& cer_utts = cer_set ? *cer_set : heldout;
  const bool cer_is_heldout = cer_set == nullptr || cer_set == &heldout;

  ParameterSet<T> ps;
  model.collect(ps);
  NesterovSgd<T> opt(ps, config.lr, config.momentum);
  PlateauDecay schedule(config.lr, config.patience, config.lr_decay);
  const Rng root(config.seed);

  CtcTrainReport report;
  report.initial_cer =
      evaluate<T>(model, cer_utts, kind, inventory, config.batch_size, true).errors.rate();
  const auto lens = frame_counts(train);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch == 1 ? BatchOrder::ascending_length : BatchOrder::shuffled;
    const auto batches = sort_and_batch(lens, config.batch_size, order,
                                        root.substream(stage + "/shuffle").substream(epoch).bits());
    Rng drop_rng = root.substream(stage + "/dropout").substream(epoch);
    double loss = 0;
    std::size_t counted = 0, skipped = 0;
    for (const auto& members : batches) {
      auto batch = make_batch<T>(train, members, kind, inventory);
      ps.zero_grad();
      auto logits = model.logits(batch.features, true, &drop_rng);
      auto bc = ctc_batch(logits, batch.targets, true);
      loss += bc.loss_sum;
      counted += bc.counted;
      skipped += bc.skipped;
      if (bc.counted == 0) continue;
      model.backward(bc.dlogits);
      clip_grad_norm(ps, config.clip_norm);
      opt.step();
    }

    EpochMetrics m;
    m.stage = stage;
    m.epoch = epoch;
    m.train_loss = counted ? loss / static_cast<double>(counted) : kNotApplicable;
    m.lr = opt.lr();
    m.skipped = skipped;
    auto ev = evaluate<T>(model, heldout, kind, inventory, config.batch_size, cer_is_heldout);
    m.heldout_loss = ev.loss;
    m.heldout_cer = cer_is_heldout
                        ? ev.errors.rate()
                        : evaluate<T>(model, cer_utts, kind, inventory, config.batch_size, true)
                              .errors.rate();
    m.improved = schedule.observe(std::isfinite(ev.loss) ? ev.loss : m.train_loss);
    opt.set_lr(schedule.lr());
    report.skipped += skipped;
    report.final_cer = m.heldout_cer;
    report.final_heldout_loss = m.heldout_loss;
    report.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  if (config.epochs == 0) report.final_cer = report.initial_cer;
  return report;
}

template <class T>
Subnet<T> train_subnet(const std::vector<Utterance>& train, const std::vector<Utterance>& heldout,
                       const SynthLanguage& language, TargetKind kind, const PhoneSet& phones,
                       const SubnetConfig& config, CtcTrainReport* report,
                       const EpochCallback& on_epoch, const CheckpointHook<Subnet<T>>& checkpoint) {
  for (const auto* set : {&train, &heldout}) {
    for (const auto& u : *set) {
      if (u.language != language.id) {
        throw ConfigError("subnet for " + language.name + " got utterance " + u.id +
                          " of another language");
      }
    }
  }
  if (train.empty()) throw ConfigError("subnet for " + language.name + ": no training data");
  Subnet<T> s;
  s.language = language.id;
  s.kind = kind;
  s.inventory = kind == TargetKind::graphemes
                    ? build_inventory({language}, InventoryMode::per_language)
                    : UnitInventory(language.phone_units(phones));
  CtcModelSpec spec;
  spec.name = subnet_name(language.id, kind);
  spec.feat_dim = static_cast<std::size_t>(train.front().features.cols());
  spec.hidden = config.hidden;
  spec.layers = config.layers;
  spec.merge = Merge::pairwise_max;
  spec.units = s.inventory.size();
  spec.dropout = config.train.dropout;
  s.model = CtcModel<T>(spec);
  s.model.init(Rng(config.train.seed));
  auto r = train_ctc<T>(s.model, spec.name, train, heldout, kind, s.inventory, config.train,
                        [&](const EpochMetrics& m) {
                          if (on_epoch) on_epoch(m);
                          if (checkpoint) checkpoint(s, m);
                        });
  if (report) *report = r;
  return s;
}

// ---------------------------------------------------------------- main net

std::string to_string(CodeMode m) {
  switch (m) {
    case CodeMode::no_adaptation:
      return "no_adaptation";
    case CodeMode::stacked_lfv_modulation:
      return "stacked_lfv_modulation";
    case CodeMode::nlc_modulation:
      return "nlc_modulation";
  }
  return "?";
}

CodeMode code_mode_from_string(const std::string& s) {
  if (s == "no_adaptation") return CodeMode::no_adaptation;
  if (s == "stacked_lfv_modulation") return CodeMode::stacked_lfv_modulation;
  if (s == "nlc_modulation") return CodeMode::nlc_modulation;
  throw ConfigError("unknown ablation mode '" + s +
                    "' (no_adaptation, stacked_lfv_modulation, nlc_modulation)");
}

template <class T>
MainNet<T>::MainNet(std::size_t in_dim, std::size_t units, const MainSpec& spec)
    : part1("main.part1", in_dim, spec.width, spec.part1_layers, Merge::pairwise_max, spec.dropout),
      part2("main.part2", spec.width, spec.width, spec.part2_layers, Merge::pairwise_max,
            spec.dropout),
      out("main.out", spec.width, units),
      spec_(spec) {}

template <class T>
void MainNet<T>::init(const Rng& rng) {
  part1.init(rng);
  part2.init(rng);
  out.init(rng);
}

template <class T>
void MainNet<T>::collect(ParameterSet<T>& ps) {
  part1.collect(ps);
  part2.collect(ps);
  out.collect(ps);
}

// ---------------------------------------------------------------- superstructure

template <class T>
std::vector<std::size_t> Superstructure<T>::subnet_offsets() const {
  std::vector<std::size_t> off{0};
  for (const auto& s : subnets) off.push_back(off.back() + s.model.rnn.out_dim());
  return off;
}

template <class T>
SeqBatch<T> Superstructure<T>::logits(const SeqBatch<T>& features, bool training, Rng* rng) {
  if (mode == CodeMode::no_adaptation) return forward(features, features, training, rng);
  return forward(features, extract_lfv(lid, features), training, rng);
}

template <class T>
SeqBatch<T> Superstructure<T>::forward(const SeqBatch<T>& features, const SeqBatch<T>& lfv,
                                       bool training, Rng* rng, const SeqBatch<T>* codes) {
  if (!lfv.same_layout(features)) {
    throw DimensionError("superstructure: LFV and feature sequences differ in frame count");
  }
  const auto off = subnet_offsets();
  SeqBatch<T> x = SeqBatch<T>::like(features, off.back());
  for (std::size_t i = 0; i < subnets.size(); ++i) {
    auto h = subnets[i].model.encode(features, training, rng);
    x.mat().middleCols(static_cast<Eigen::Index>(off[i]), static_cast<Eigen::Index>(h.dim())) =
        h.mat();
  }
  part1_out_ = main.part1.forward(x, training, rng);

  codes_from_nlc_ = false;
  if (codes) {
    if (!codes->same_layout(part1_out_) || codes->dim() != width()) {
      throw DimensionError("superstructure: code override has the wrong shape");
    }
    codes_ = *codes;
  } else if (mode == CodeMode::no_adaptation) {
    codes_ = SeqBatch<T>::like(part1_out_, width());
    codes_.mat().setOnes();
    codes_.zero_padding();
  } else if (mode == CodeMode::stacked_lfv_modulation) {
    codes_ = stack_lfv(lfv, width());
  } else {
    codes_ = nlc.forward(features, lfv);
    codes_from_nlc_ = true;
  }
  part2_in_ = modulate(part1_out_, codes_);
  return main.out.forward(main.part2.forward(part2_in_, training, rng));
}

template <class T>
void Superstructure<T>::backward(const SeqBatch<T>& dlogits) {
  auto dm = main.part2.backward(main.out.backward(dlogits));
  SeqBatch<T> dcodes;
  modulate_backward(part1_out_, codes_, dm, &dpart1_, codes_from_nlc_ ? &dcodes : nullptr);
  if (codes_from_nlc_) nlc.backward(dcodes);
  auto dx = main.part1.backward(dpart1_);
  const auto off = subnet_offsets();
  for (std::size_t i = 0; i < subnets.size(); ++i) {
    SeqBatch<T> dh = SeqBatch<T>::like(dx, off[i + 1] - off[i]);
    dh.mat() = dx.mat().middleCols(static_cast<Eigen::Index>(off[i]),
                                   static_cast<Eigen::Index>(dh.dim()));
    subnets[i].model.encode_backward(dh);
  }
}

template <class T>
void Superstructure<T>::collect(ParameterSet<T>& ps) {
  for (auto& s : subnets) s.model.collect(ps);
  if (mode == CodeMode::nlc_modulation) nlc.collect(ps);
  main.collect(ps);
}

template <class T>
void Superstructure<T>::collect_all(ParameterSet<T>& ps) {
  lid.collect(ps);
  for (auto& s : subnets) s.model.collect(ps);
  nlc.collect(ps);
  main.collect(ps);
}

template <class T>
Superstructure<T> assemble(std::vector<Subnet<T>> subnets, LfvExtractor<T> lid, NlcNet<T> nlc,
                           UnitInventory joint, const MainSpec& spec, const Rng& rng,
                           CodeMode mode) {
  if (subnets.empty()) throw DimensionError("assemble: no subnets");
  if (!lid.trained) throw DependencyError("lid", "assemble needs a trained LID network");
  if (nlc.width() != spec.width) {
    throw DimensionError("assemble: NLC width " + std::to_string(nlc.width()) +
                         " differs from main width " + std::to_string(spec.width));
  }
  if (nlc.lfv_dim() != lid.lfv_dim() || nlc.feat_dim() != lid.feat_dim()) {
    throw DimensionError("assemble: NLC input widths do not match the LID network");
  }
  if (spec.width % lid.lfv_dim() != 0) {
    throw DimensionError("assemble: main width must be a multiple of the LFV width");
  }
  Superstructure<T> s;
  std::size_t in_dim = 0;
  for (auto& sub : subnets) {
    if (sub.model.spec().feat_dim != lid.feat_dim()) {
      throw DimensionError("assemble: " + sub.model.spec().name + " expects a different feature width");
    }
    sub.model.detach_head();
    in_dim += sub.model.out_dim();
  }
  lid.discard_head();
  s.subnets = std::move(subnets);
  s.lid = std::move(lid);
  s.nlc = std::move(nlc);
  s.joint = std::move(joint);
  s.main = MainNet<T>(in_dim, s.joint.size(), spec);
  s.main.init(rng);
  s.mode = mode;
  return s;
}

template <class T>
CtcTrainReport train_joint(Superstructure<T>& s, const std::vector<Utterance>& train,
                           const std::vector<Utterance>& heldout, const TrainConfig& config,
                           const EpochCallback& on_epoch, const std::vector<Utterance>* cer_set) {
  s.main.part1.set_dropout(config.dropout);
  s.main.part2.set_dropout(config.dropout);
  return train_ctc<T>(s, "joint." + to_string(s.mode), train, heldout, TargetKind::graphemes,
                      s.joint, config, on_epoch, cer_set);
}

#define METAPI_SUPERSTRUCTURE(T)                                                                  \
  template class CtcModel<T>;                                                                     \
  template class MainNet<T>;                                                                      \
  template class Superstructure<T>;                                                               \
  template BatchCtc<T> ctc_batch(const SeqBatch<T>&, const std::vector<LabelSeq>&, bool);         \
  template std::vector<Mat<double>> log_posteriors<T, CtcModel<T>>(                               \
      CtcModel<T>&, const std::vector<Utterance>&, std::size_t);                                  \
  template std::vector<Mat<double>> log_posteriors<T, Superstructure<T>>(                         \
      Superstructure<T>&, const std::vector<Utterance>&, std::size_t);                            \
  template ErrorReport greedy_errors<T, CtcModel<T>>(CtcModel<T>&, const std::vector<Utterance>&, \
                                                     TargetKind, const UnitInventory&,            \
                                                     std::size_t);                                \
  template ErrorReport greedy_errors<T, Superstructure<T>>(                                       \
      Superstructure<T>&, const std::vector<Utterance>&, TargetKind, const UnitInventory&,        \
      std::size_t);                                                                               \
  template CtcTrainReport train_ctc<T, CtcModel<T>>(                                              \
      CtcModel<T>&, const std::string&, const std::vector<Utterance>&,                            \
      const std::vector<Utterance>&, TargetKind, const UnitInventory&, const TrainConfig&,        \
      const EpochCallback&, const std::vector<Utterance>*);                                       \
  template Subnet<T> train_subnet(const std::vector<Utterance>&, const std::vector<Utterance>&,   \
                                  const SynthLanguage&, TargetKind, const PhoneSet&,              \
                                  const SubnetConfig&, CtcTrainReport*, const EpochCallback&,     \
                                  const CheckpointHook<Subnet<T>>&);                             \
  template Superstructure<T> assemble(std::vector<Subnet<T>>, LfvExtractor<T>, NlcNet<T>,         \
                                      UnitInventory, const MainSpec&, const Rng&, CodeMode);      \
  template CtcTrainReport train_joint(Superstructure<T>&, const std::vector<Utterance>&,          \
                                      const std::vector<Utterance>&, const TrainConfig&,          \
                                      const EpochCallback&, const std::vector<Utterance>*);

METAPI_SUPERSTRUCTURE(float)
METAPI_SUPERSTRUCTURE(double)

}  // namespace metapi
