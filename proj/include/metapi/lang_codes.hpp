#pragma once

#include <vector>

#include "metapi/corpus.hpp"
#include "metapi/layers.hpp"
#include "metapi/training.hpp"

namespace metapi {

struct LidConfig {
  std::size_t hidden = 64;
  std::size_t bottleneck = 8;
  std::size_t post = 64;
  // frames sampled per training utterance each epoch
  std::size_t frames_per_utt = 20;
  std::size_t batch_frames = 256;
  TrainConfig train{.epochs = 8, .lr = 0.05, .momentum = 0.9, .dropout = 0.0};
};

// Frame classifier features -> tanh -> tanh -> sigmoid bottleneck -> tanh ->
// softmax over languages. The bottleneck activations are the language
// feature vectors.
template <class T>
class LfvExtractor {
 public:
  LfvExtractor() = default;
  LfvExtractor(std::size_t feat_dim, std::size_t hidden, std::size_t bottleneck, std::size_t post,
               std::size_t languages);

  void init(const Rng& rng);

  // Log-softmax language posteriors; caches for backward.
  SeqBatch<T> forward(const SeqBatch<T>& x);
  void backward(const SeqBatch<T>& dlogp);

  // Bottleneck activations (training not required, see extract_lfv).
  SeqBatch<T> bottleneck(const SeqBatch<T>& x) const;

  void collect(ParameterSet<T>& ps);

  // Drops the post-bottleneck layers; forward() is unavailable afterwards.
  void discard_head();
  bool has_head() const { return has_head_; }

  std::size_t feat_dim() const { return h1.in_dim(); }
  std::size_t lfv_dim() const { return bn.out_dim(); }
  std::size_t languages() const { return languages_; }
  std::size_t post_dim() const { return post_dim_; }

  bool trained = false;
  Dense<T> h1, h2, bn, post, out;

 private:
  std::size_t languages_ = 0;
  std::size_t post_dim_ = 0;
  bool has_head_ = true;
  ActivationLayer<T> a1_{Activation::tanh}, a2_{Activation::tanh}, abn_{Activation::sigmoid},
      apost_{Activation::tanh};
  Mat<T> log_probs_;
};

struct LidReport {
  std::vector<EpochMetrics> epochs;
  double heldout_accuracy = 0;
  double initial_accuracy = 0;
  double chance = 0;
};

// Cross-entropy training on single frames of `train`; accuracy is measured
// on every frame of `heldout`.
template <class T>
LfvExtractor<T> train_lid(const std::vector<Utterance>& train, const std::vector<Utterance>& heldout,
                          std::size_t languages, const LidConfig& config,
                          LidReport* report = nullptr, const EpochCallback& on_epoch = {},
                          const CheckpointHook<LfvExtractor<T>>& checkpoint = {});

template <class T>
double lid_frame_accuracy(LfvExtractor<T>& lid, const std::vector<Utterance>& utts);

template <class T>
SeqBatch<T> extract_lfv(const LfvExtractor<T>& lid, const SeqBatch<T>& features);

template <class T>
Mat<float> extract_lfv(const LfvExtractor<T>& lid, const Mat<float>& features);

// Tiles each frame's vector width / dim times: tile k fills columns
// [k*dim, (k+1)*dim).
template <class T>
SeqBatch<T> stack_lfv(const SeqBatch<T>& lfv, std::size_t width);

// Two pairwise_sum BiLSTM layers over [features; lfv] followed by a linear
// map to the modulation width.
template <class T>
class NlcNet {
 public:
  NlcNet() = default;
  NlcNet(std::size_t feat_dim, std::size_t lfv_dim, std::size_t hidden, std::size_t width);

  void init(const Rng& rng);
  SeqBatch<T> forward(const SeqBatch<T>& features, const SeqBatch<T>& lfv);
  // Accumulates parameter gradients; input gradients are dropped since the
  // inputs are not trainable.
  void backward(const SeqBatch<T>& dcodes);
  void collect(ParameterSet<T>& ps);

  std::size_t feat_dim() const { return feat_dim_; }
  std::size_t lfv_dim() const { return lfv_dim_; }
  std::size_t hidden() const { return rnn.hidden(); }
  std::size_t width() const { return out.out_dim(); }

  BiLstmStack<T> rnn;
  Dense<T> out;

 private:
  std::size_t feat_dim_ = 0;
  std::size_t lfv_dim_ = 0;
};

struct NlcExample {
  Mat<float> features;
  Mat<float> lfv;
};

struct NlcConfig {
  std::size_t hidden = 64;
  std::size_t width = 64;
  TrainConfig train{.epochs = 6, .lr = 0.05, .momentum = 0.9, .dropout = 0.0};
};

struct NlcReport {
  std::vector<EpochMetrics> epochs;
  double initial_train_mse = 0;
  double initial_heldout_mse = 0;
  double heldout_mse = 0;
  // per-dimension train means used as a constant prediction on held-out data
  double mean_predictor_mse = 0;
};

template <class T>
std::vector<NlcExample> nlc_examples(const LfvExtractor<T>& lid, const std::vector<Utterance>& utts);

// Mean squared error (per frame and unit) between NLC output and the stacked
// LFVs.
template <class T>
double nlc_mse(NlcNet<T>& nlc, const std::vector<NlcExample>& data, std::size_t batch_size = 16);

// Regresses the stacked LFVs. Epoch 1 runs in ascending length order.
template <class T>
void pretrain_nlc(NlcNet<T>& nlc, const std::vector<NlcExample>& train,
                  const std::vector<NlcExample>& heldout, const NlcConfig& config,
                  NlcReport* report = nullptr, const EpochCallback& on_epoch = {});

template <class T>
SeqBatch<T> emit_nlc(NlcNet<T>& nlc, const SeqBatch<T>& features, const SeqBatch<T>& lfv);

}  // namespace metapi
