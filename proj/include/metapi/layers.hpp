#pragma once

#include <string>
#include <vector>

#include "metapi/param.hpp"
#include "metapi/rng.hpp"
#include "metapi/seq_batch.hpp"

namespace metapi {

enum class Merge { concat, pairwise_max, pairwise_sum };

std::string to_string(Merge m);
Merge merge_from_string(const std::string& s);

// Per-frame affine map. Padding frames stay zero.
template <class T>
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out);

  void init(const Rng& rng);
  SeqBatch<T> forward(const SeqBatch<T>& x);
  SeqBatch<T> backward(const SeqBatch<T>& dy);
  void collect(ParameterSet<T>& ps);

  std::size_t in_dim() const { return weight.value.shape()[0]; }
  std::size_t out_dim() const { return weight.value.shape()[1]; }

  Param<T> weight;
  Param<T> bias;

 private:
  SeqBatch<T> input_;
};

enum class Activation { identity, tanh, sigmoid };

// Pointwise nonlinearity with cached output for the backward pass.
template <class T>
class ActivationLayer {
 public:
  explicit ActivationLayer(Activation a = Activation::identity) : kind_(a) {}
  SeqBatch<T> forward(const SeqBatch<T>& x);
  SeqBatch<T> backward(const SeqBatch<T>& dy) const;

 private:
  Activation kind_;
  SeqBatch<T> output_;
};

// One direction of an LSTM. Gate blocks are packed column-wise in the order
// input, forget, output, cell candidate: W is [in x 4H], U is [H x 4H] and b
// is [4H]. A reverse layer starts at each sequence's last valid frame and
// writes outputs at the original frame indices.
template <class T>
class Lstm {
 public:
  Lstm() = default;
  Lstm(const std::string& name, std::size_t in, std::size_t hidden, bool reverse = false);

  // Uniform(+-1/sqrt(fan_in)) weights, zero biases except forget gate = 1.
  void init(const Rng& rng);

  SeqBatch<T> forward(const SeqBatch<T>& x);
  SeqBatch<T> backward(const SeqBatch<T>& dh);
  void collect(ParameterSet<T>& ps);

  // Single recurrence step on one row vector; used for incremental
  // evaluation. `pre` is the input projection x*W (without bias).
  void step(const Eigen::Ref<const Mat<T>>& pre, Mat<T>& h, Mat<T>& c) const;

  std::size_t in_dim() const { return w.value.shape()[0]; }
  std::size_t hidden() const { return u.value.shape()[0]; }
  bool reverse() const { return reverse_; }

  Param<T> w;
  Param<T> u;
  Param<T> b;

 private:
  bool reverse_ = false;
  SeqBatch<T> input_;
  Mat<T> gates_;  // post-activation, (frames*batch) x 4H
  Mat<T> cells_;
  Mat<T> cell_tanh_;
  SeqBatch<T> output_;
};

template <class T>
SeqBatch<T> merge_directions(const SeqBatch<T>& fwd, const SeqBatch<T>& bwd, Merge mode);

// Splits dout into the two direction gradients (overwrites dfwd/dbwd).
// pairwise_max routes to fwd when fwd >= bwd.
template <class T>
void merge_directions_backward(const SeqBatch<T>& fwd, const SeqBatch<T>& bwd, Merge mode,
                               const SeqBatch<T>& dout, SeqBatch<T>& dfwd, SeqBatch<T>& dbwd);

template <class T>
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(const std::string& name, std::size_t in, std::size_t hidden, Merge merge);

  void init(const Rng& rng);
  SeqBatch<T> forward(const SeqBatch<T>& x);
  SeqBatch<T> backward(const SeqBatch<T>& dy);
  void collect(ParameterSet<T>& ps);

  std::size_t out_dim() const {
    return merge_ == Merge::concat ? 2 * fwd.hidden() : fwd.hidden();
  }
  Merge merge() const { return merge_; }

  Lstm<T> fwd;
  Lstm<T> bwd;

 private:
  Merge merge_ = Merge::pairwise_max;
  SeqBatch<T> fwd_out_;
  SeqBatch<T> bwd_out_;
};

// Elementwise product of activations and coefficient codes.
template <class T>
SeqBatch<T> modulate(const SeqBatch<T>& acts, const SeqBatch<T>& codes);

template <class T>
void modulate_backward(const SeqBatch<T>& acts, const SeqBatch<T>& codes,
                       const SeqBatch<T>& dout, SeqBatch<T>* dacts, SeqBatch<T>* dcodes);

// Inverted dropout: survivors are scaled by 1/(1-rate) during training so
// evaluation is the identity.
template <class T>
class Dropout {
 public:
  explicit Dropout(double rate = 0.0);
  SeqBatch<T> forward(const SeqBatch<T>& x, bool training, Rng* rng);
  SeqBatch<T> backward(const SeqBatch<T>& dy) const;
  double rate() const { return rate_; }

 private:
  double rate_;
  bool active_ = false;
  Mat<T> mask_;
};

template <class T>
class BiLstmStack {
 public:
  BiLstmStack() = default;
  BiLstmStack(const std::string& name, std::size_t in, std::size_t hidden, std::size_t layers,
              Merge merge, double dropout = 0.0);

  void init(const Rng& rng);
  // Dropout, when configured, follows every layer and needs rng in training.
  SeqBatch<T> forward(const SeqBatch<T>& x, bool training = false, Rng* rng = nullptr);
  SeqBatch<T> backward(const SeqBatch<T>& dy);
  void collect(ParameterSet<T>& ps);

  std::size_t in_dim() const { return layers_.front().fwd.in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  std::size_t hidden() const { return layers_.front().fwd.hidden(); }
  std::size_t depth() const { return layers_.size(); }
  Merge merge() const { return layers_.front().merge(); }
  double dropout() const { return dropout_; }
  void set_dropout(double rate);

  std::vector<BiLstm<T>>& layers() { return layers_; }

 private:
  double dropout_ = 0.0;
  std::vector<BiLstm<T>> layers_;
  std::vector<Dropout<T>> drops_;
};

}  // namespace metapi
