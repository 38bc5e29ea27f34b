#pragma once

#include <algorithm>
#include <vector>

#include "metapi/tensor.hpp"

namespace metapi {

// Variable-length sequences packed frame-major: row t*batch + b of mat()
// holds frame t of sequence b. Frames at or past a sequence's length are
// padding and are kept at zero by every layer.
template <class T>
class SeqBatch {
 public:
  SeqBatch() = default;
  SeqBatch(std::size_t frames, std::size_t dim, std::vector<std::size_t> lengths)
      : lengths_(std::move(lengths)), values_({frames, lengths_.size(), dim}) {
    if (lengths_.empty()) throw DimensionError("SeqBatch needs at least one sequence");
    for (auto l : lengths_) {
      if (l > frames) {
        throw DimensionError("sequence length " + std::to_string(l) + " exceeds frame count " +
                             std::to_string(frames));
      }
    }
  }

  // Same frame count and lengths as `like`, new feature width.
  static SeqBatch like(const SeqBatch& like, std::size_t dim) {
    return SeqBatch(like.frames(), dim, like.lengths());
  }

  // Zero-pads each (length x dim) matrix to the longest one.
  static SeqBatch pack(const std::vector<const Mat<T>*>& seqs) {
    std::vector<std::size_t> lengths;
    std::size_t frames = 0;
    for (auto* s : seqs) {
      lengths.push_back(static_cast<std::size_t>(s->rows()));
      frames = std::max(frames, lengths.back());
    }
    if (seqs.empty()) throw DimensionError("SeqBatch::pack needs at least one sequence");
    const auto dim = static_cast<std::size_t>(seqs.front()->cols());
    SeqBatch out(std::max<std::size_t>(frames, 1), dim, lengths);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
      if (static_cast<std::size_t>(seqs[b]->cols()) != dim) {
        throw DimensionError("SeqBatch::pack: feature widths differ");
      }
      for (std::size_t t = 0; t < lengths[b]; ++t) out.frame(t, b) = seqs[b]->row(t);
    }
    return out;
  }

  std::size_t frames() const { return values_.shape()[0]; }
  std::size_t batch() const { return values_.shape()[1]; }
  std::size_t dim() const { return values_.shape()[2]; }
  const std::vector<std::size_t>& lengths() const { return lengths_; }
  bool valid(std::size_t t, std::size_t b) const { return t < lengths_[b]; }

  MatMap<T> mat() { return values_.mat(); }
  ConstMatMap<T> mat() const { return values_.mat(); }
  Tensor<T>& tensor() { return values_; }
  const Tensor<T>& tensor() const { return values_; }

  auto frame(std::size_t t, std::size_t b) { return mat().row(t * batch() + b); }
  auto frame(std::size_t t, std::size_t b) const { return mat().row(t * batch() + b); }

  // Valid frames of one sequence as a (length x dim) matrix.
  Mat<T> sequence(std::size_t b) const {
    Mat<T> out(lengths_[b], dim());
    for (std::size_t t = 0; t < lengths_[b]; ++t) out.row(t) = frame(t, b);
    return out;
  }

  void zero_padding() {
    for (std::size_t b = 0; b < batch(); ++b) {
      for (std::size_t t = lengths_[b]; t < frames(); ++t) frame(t, b).setZero();
    }
  }

  bool same_layout(const SeqBatch& o) const {
    return frames() == o.frames() && lengths_ == o.lengths_;
  }

 private:
  std::vector<std::size_t> lengths_;
  Tensor<T> values_;
};

}  // namespace metapi
