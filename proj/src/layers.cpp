#include "metapi/layers.hpp"

#include "metapi/ops.hpp"

namespace metapi {

std::string to_string(Merge m) {
  switch (m) {
    case Merge::concat:
      return "concat";
    case Merge::pairwise_max:
      return "pairwise_max";
    case Merge::pairwise_sum:
      return "pairwise_sum";
  }
  return "?";
}

Merge merge_from_string(const std::string& s) {
  if (s == "concat") return Merge::concat;
  if (s == "pairwise_max") return Merge::pairwise_max;
  if (s == "pairwise_sum") return Merge::pairwise_sum;
  throw DimensionError("unknown merge mode '" + s + "'");
}

namespace {

template <class M>
void sigmoid_inplace(M&& m) {
  using T = typename std::decay_t<M>::Scalar;
  m.array() = (T(1) + (-m.array()).exp()).inverse();
}

}  // namespace

// ---------------------------------------------------------------- Dense

template <class T>
Dense<T>::Dense(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".W", {in, out}), bias(name + ".b", {out}) {}

template <class T>
void Dense<T>::init(const Rng& rng) {
  weight.init_uniform(rng, in_dim());
  bias.value.set_zero();
}

template <class T>
SeqBatch<T> Dense<T>::forward(const SeqBatch<T>& x) {
  if (x.dim() != in_dim()) {
    throw DimensionError(weight.name + ": input width " + std::to_string(x.dim()) +
                         ", expected " + std::to_string(in_dim()));
  }
  input_ = x;
  SeqBatch<T> y = SeqBatch<T>::like(x, out_dim());
  auto ym = y.mat();
  ym.noalias() = x.mat() * weight.value.mat();
  ym.rowwise() += bias.value.mat().row(0);
  y.zero_padding();
  check_finite(ym, weight.name);
  return y;
}

template <class T>
SeqBatch<T> Dense<T>::backward(const SeqBatch<T>& dy) {
  if (!dy.same_layout(input_) || dy.dim() != out_dim()) {
    throw DimensionError(weight.name + ": gradient layout mismatch");
  }
  weight.grad.mat().noalias() += input_.mat().transpose() * dy.mat();
  bias.grad.mat().row(0) += dy.mat().colwise().sum();
  SeqBatch<T> dx = SeqBatch<T>::like(dy, in_dim());
  dx.mat().noalias() = dy.mat() * weight.value.mat().transpose();
  dx.zero_padding();
  return dx;
}

template <class T>
void Dense<T>::collect(ParameterSet<T>& ps) {
  ps.add(weight);
  ps.add(bias);
}

// ---------------------------------------------------------------- Activation

template <class T>
SeqBatch<T> ActivationLayer<T>::forward(const SeqBatch<T>& x) {
  output_ = x;
  auto m = output_.mat();
  switch (kind_) {
    case Activation::identity:
      break;
    case Activation::tanh:
      m.array() = m.array().tanh();
      break;
    case Activation::sigmoid:
      sigmoid_inplace(m);
      break;
  }
  output_.zero_padding();
  return output_;
}

template <class T>
SeqBatch<T> ActivationLayer<T>::backward(const SeqBatch<T>& dy) const {
  SeqBatch<T> dx = dy;
  auto y = output_.mat().array();
  switch (kind_) {
    case Activation::identity:
      break;
    case Activation::tanh:
      dx.mat().array() *= T(1) - y.square();
      break;
    case Activation::sigmoid:
      dx.mat().array() *= y * (T(1) - y);
      break;
  }
  dx.zero_padding();
  return dx;
}

// ---------------------------------------------------------------- Lstm

template <class T>
Lstm<T>::Lstm(const std::string& name, std::size_t in, std::size_t hidden, bool reverse)
    : w(name + ".W", {in, 4 * hidden}),
      u(name + ".U", {hidden, 4 * hidden}),
      b(name + ".b", {4 * hidden}),
      reverse_(reverse) {}

template <class T>
void Lstm<T>::init(const Rng& rng) {
  w.init_uniform(rng, in_dim());
  u.init_uniform(rng, hidden());
  const std::size_t H = hidden();
  auto bias = b.value.mat();
  bias.setZero();
  bias.row(0).segment(H, H).setOnes();
}

namespace {

// g holds pre-activations on entry and activations on exit.
template <class G, class C>
void lstm_cell(G&& g, const C& c_prev, Mat<typename std::decay_t<G>::Scalar>& c,
               Mat<typename std::decay_t<G>::Scalar>& tc) {
  const Eigen::Index H = g.cols() / 4;
  sigmoid_inplace(g.leftCols(3 * H));
  g.rightCols(H).array() = g.rightCols(H).array().tanh();
  c.array() = g.middleCols(H, H).array() * c_prev.array() +
              g.leftCols(H).array() * g.rightCols(H).array();
  tc.array() = c.array().tanh();
}

}  // namespace

template <class T>
SeqBatch<T> Lstm<T>::forward(const SeqBatch<T>& x) {
  if (x.dim() != in_dim()) {
    throw DimensionError(w.name + ": input width " + std::to_string(x.dim()) + ", expected " +
                         std::to_string(in_dim()));
  }
  input_ = x;
  const std::size_t frames = x.frames();
  const std::size_t B = x.batch();
  const std::size_t H = hidden();

  gates_.noalias() = x.mat() * w.value.mat();
  gates_.rowwise() += b.value.mat().row(0);
  cells_.setZero(frames * B, H);
  cell_tanh_.setZero(frames * B, H);
  output_ = SeqBatch<T>::like(x, H);
  auto out = output_.mat();

  Mat<T> c(B, H), tc(B, H);
  const auto& U = u.value.mat();
  for (std::size_t s = 0; s < frames; ++s) {
    const std::size_t t = reverse_ ? frames - 1 - s : s;
    const std::size_t tp = reverse_ ? t + 1 : t - 1;
    auto g = gates_.middleRows(t * B, B);
    if (s > 0) {
      g.noalias() += out.middleRows(tp * B, B) * U;
      lstm_cell(g, cells_.middleRows(tp * B, B), c, tc);
    } else {
      lstm_cell(g, Mat<T>::Zero(B, H), c, tc);
    }
    auto h = out.middleRows(t * B, B);
    h.array() = g.middleCols(2 * H, H).array() * tc.array();
    cells_.middleRows(t * B, B) = c;
    cell_tanh_.middleRows(t * B, B) = tc;
    for (std::size_t bi = 0; bi < B; ++bi) {
      if (!x.valid(t, bi)) {
        const std::size_t r = t * B + bi;
        gates_.row(r).setZero();
        cells_.row(r).setZero();
        cell_tanh_.row(r).setZero();
        out.row(r).setZero();
      }
    }
  }
  check_finite(out, w.name);
  return output_;
}

template <class T>
SeqBatch<T> Lstm<T>::backward(const SeqBatch<T>& dh_out) {
  if (!dh_out.same_layout(input_) || dh_out.dim() != hidden()) {
    throw DimensionError(w.name + ": gradient layout mismatch");
  }
  const std::size_t frames = input_.frames();
  const std::size_t B = input_.batch();
  const std::size_t H = hidden();
  const auto& U = u.value.mat();
  const auto out = output_.mat();

  Mat<T> dgates(frames * B, 4 * H);
  Mat<T> h_prev = Mat<T>::Zero(frames * B, H);
  Mat<T> dh_next = Mat<T>::Zero(B, H);
  Mat<T> dc_next = Mat<T>::Zero(B, H);
  Mat<T> dh(B, H), dc(B, H);

  for (std::size_t s = frames; s-- > 0;) {
    const std::size_t t = reverse_ ? frames - 1 - s : s;
    const std::size_t tp = reverse_ ? t + 1 : t - 1;
    const auto a = gates_.middleRows(t * B, B);
    const auto i = a.leftCols(H).array();
    const auto f = a.middleCols(H, H).array();
    const auto o = a.middleCols(2 * H, H).array();
    const auto g = a.rightCols(H).array();
    const auto tc = cell_tanh_.middleRows(t * B, B).array();

    dh = dh_out.mat().middleRows(t * B, B) + dh_next;
    dc.array() = dh.array() * o * (T(1) - tc.square()) + dc_next.array();

    auto dg = dgates.middleRows(t * B, B);
    if (s > 0) {
      const auto cp = cells_.middleRows(tp * B, B).array();
      dg.middleCols(H, H).array() = dc.array() * cp * f * (T(1) - f);
      h_prev.middleRows(t * B, B) = out.middleRows(tp * B, B);
    } else {
      dg.middleCols(H, H).setZero();
    }
    dg.leftCols(H).array() = dc.array() * g * i * (T(1) - i);
    dg.middleCols(2 * H, H).array() = dh.array() * tc * o * (T(1) - o);
    dg.rightCols(H).array() = dc.array() * i * (T(1) - g.square());
    dc_next.array() = dc.array() * f;

    for (std::size_t bi = 0; bi < B; ++bi) {
      if (!input_.valid(t, bi)) {
        dg.row(bi).setZero();
        dc_next.row(bi).setZero();
      }
    }
    dh_next.noalias() = dg * U.transpose();
  }

  w.grad.mat().noalias() += input_.mat().transpose() * dgates;
  u.grad.mat().noalias() += h_prev.transpose() * dgates;
  b.grad.mat().row(0) += dgates.colwise().sum();

  SeqBatch<T> dx = SeqBatch<T>::like(input_, in_dim());
  dx.mat().noalias() = dgates * w.value.mat().transpose();
  return dx;
}

template <class T>
void Lstm<T>::step(const Eigen::Ref<const Mat<T>>& pre, Mat<T>& h, Mat<T>& c) const {
  const std::size_t H = hidden();
  Mat<T> g = pre;
  g.rowwise() += b.value.mat().row(0);
  g.noalias() += h * u.value.mat();
  Mat<T> c_new(h.rows(), H), tc(h.rows(), H);
  lstm_cell(g, c, c_new, tc);
  h.array() = g.middleCols(2 * H, H).array() * tc.array();
  c = c_new;
}

template <class T>
void Lstm<T>::collect(ParameterSet<T>& ps) {
  ps.add(w);
  ps.add(u);
  ps.add(b);
}

// ---------------------------------------------------------------- merge

template <class T>
SeqBatch<T> merge_directions(const SeqBatch<T>& fwd, const SeqBatch<T>& bwd, Merge mode) {
  if (!fwd.same_layout(bwd) || fwd.dim() != bwd.dim()) {
    throw DimensionError("merge_directions: direction outputs differ in shape");
  }
  const std::size_t H = fwd.dim();
  SeqBatch<T> out = SeqBatch<T>::like(fwd, mode == Merge::concat ? 2 * H : H);
  switch (mode) {
    case Merge::concat:
      out.mat().leftCols(H) = fwd.mat();
      out.mat().rightCols(H) = bwd.mat();
      break;
    case Merge::pairwise_max:
      out.mat().array() = fwd.mat().array().max(bwd.mat().array());
      break;
    case Merge::pairwise_sum:
      out.mat() = fwd.mat() + bwd.mat();
      break;
  }
  return out;
}

template <class T>
void merge_directions_backward(const SeqBatch<T>& fwd, const SeqBatch<T>& bwd, Merge mode,
                               const SeqBatch<T>& dout, SeqBatch<T>& dfwd, SeqBatch<T>& dbwd) {
  const std::size_t H = fwd.dim();
  const std::size_t expect = mode == Merge::concat ? 2 * H : H;
  if (!dout.same_layout(fwd) || dout.dim() != expect) {
    throw DimensionError("merge_directions_backward: gradient width mismatch");
  }
  dfwd = SeqBatch<T>::like(fwd, H);
  dbwd = SeqBatch<T>::like(fwd, H);
  switch (mode) {
    case Merge::concat:
      dfwd.mat() = dout.mat().leftCols(H);
      dbwd.mat() = dout.mat().rightCols(H);
      break;
    case Merge::pairwise_max: {
      const auto first = (fwd.mat().array() >= bwd.mat().array()).template cast<T>();
      dfwd.mat().array() = dout.mat().array() * first;
      dbwd.mat().array() = dout.mat().array() * (T(1) - first);
      break;
    }
    case Merge::pairwise_sum:
      dfwd.mat() = dout.mat();
      dbwd.mat() = dout.mat();
      break;
  }
}

// ---------------------------------------------------------------- BiLstm

template <class T>
BiLstm<T>::BiLstm(const std::string& name, std::size_t in, std::size_t hidden, Merge merge)
    : fwd(name + ".fwd", in, hidden, false), bwd(name + ".bwd", in, hidden, true), merge_(merge) {}

template <class T>
void BiLstm<T>::init(const Rng& rng) {
  fwd.init(rng);
  bwd.init(rng);
}

template <class T>
SeqBatch<T> BiLstm<T>::forward(const SeqBatch<T>& x) {
  fwd_out_ = fwd.forward(x);
  bwd_out_ = bwd.forward(x);
  return merge_directions(fwd_out_, bwd_out_, merge_);
}

template <class T>
SeqBatch<T> BiLstm<T>::backward(const SeqBatch<T>& dy) {
  SeqBatch<T> df, db;
  merge_directions_backward(fwd_out_, bwd_out_, merge_, dy, df, db);
  SeqBatch<T> dx = fwd.backward(df);
  dx.mat() += bwd.backward(db).mat();
  return dx;
}

template <class T>
void BiLstm<T>::collect(ParameterSet<T>& ps) {
  fwd.collect(ps);
  bwd.collect(ps);
}

// ---------------------------------------------------------------- modulate

template <class T>
SeqBatch<T> modulate(const SeqBatch<T>& acts, const SeqBatch<T>& codes) {
  if (!acts.same_layout(codes) || acts.dim() != codes.dim()) {
    throw DimensionError("modulate: codes of width " + std::to_string(codes.dim()) +
                         " cannot modulate activations of width " + std::to_string(acts.dim()) +
                         " (or frame layouts differ)");
  }
  SeqBatch<T> out = acts;
  out.mat().array() *= codes.mat().array();
  return out;
}

template <class T>
void modulate_backward(const SeqBatch<T>& acts, const SeqBatch<T>& codes,
                       const SeqBatch<T>& dout, SeqBatch<T>* dacts, SeqBatch<T>* dcodes) {
  if (dacts) {
    *dacts = dout;
    dacts->mat().array() *= codes.mat().array();
  }
  if (dcodes) {
    *dcodes = dout;
    dcodes->mat().array() *= acts.mat().array();
  }
}

// ---------------------------------------------------------------- Dropout

template <class T>
Dropout<T>::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

template <class T>
SeqBatch<T> Dropout<T>::forward(const SeqBatch<T>& x, bool training, Rng* rng) {
  active_ = training && rate_ > 0.0;
  if (!active_) return x;
  if (!rng) throw std::invalid_argument("dropout in training mode needs an rng");
  const T keep_scale = T(1.0 / (1.0 - rate_));
  mask_.resize(x.mat().rows(), x.mat().cols());
  for (Eigen::Index r = 0; r < mask_.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask_.cols(); ++c) {
      mask_(r, c) = rng->uniform() < rate_ ? T(0) : keep_scale;
    }
  }
  SeqBatch<T> y = x;
  y.mat().array() *= mask_.array();
  return y;
}

template <class T>
SeqBatch<T> Dropout<T>::backward(const SeqBatch<T>& dy) const {
  if (!active_) return dy;
  SeqBatch<T> dx = dy;
  dx.mat().array() *= mask_.array();
  return dx;
}

// ---------------------------------------------------------------- stack

template <class T>
BiLstmStack<T>::BiLstmStack(const std::string& name, std::size_t in, std::size_t hidden,
                            std::size_t layers, Merge merge, double dropout) {
  if (layers == 0) throw DimensionError(name + ": a recurrent stack needs at least one layer");
  std::size_t width = in;
  for (std::size_t l = 0; l < layers; ++l) {
    layers_.emplace_back(name + ".l" + std::to_string(l), width, hidden, merge);
    width = layers_.back().out_dim();
  }
  set_dropout(dropout);
}

template <class T>
void BiLstmStack<T>::set_dropout(double rate) {
  dropout_ = rate;
  drops_.assign(layers_.size(), Dropout<T>(rate));
}

template <class T>
void BiLstmStack<T>::init(const Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

template <class T>
SeqBatch<T> BiLstmStack<T>::forward(const SeqBatch<T>& x, bool training, Rng* rng) {
  SeqBatch<T> h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l].forward(h);
    h = drops_[l].forward(h, training, rng);
  }
  return h;
}

template <class T>
SeqBatch<T> BiLstmStack<T>::backward(const SeqBatch<T>& dy) {
  SeqBatch<T> d = dy;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    d = drops_[l].backward(d);
    d = layers_[l].backward(d);
  }
  return d;
}

template <class T>
void BiLstmStack<T>::collect(ParameterSet<T>& ps) {
  for (auto& l : layers_) l.collect(ps);
}

#define METAPI_INSTANTIATE(T)                                                                \
  template class Dense<T>;                                                                  \
  template class ActivationLayer<T>;                                                        \
  template class Lstm<T>;                                                                   \
  template class BiLstm<T>;                                                                 \
  template class Dropout<T>;                                                                \
  template class BiLstmStack<T>;                                                            \
  template SeqBatch<T> merge_directions(const SeqBatch<T>&, const SeqBatch<T>&, Merge);     \
  template void merge_directions_backward(const SeqBatch<T>&, const SeqBatch<T>&, Merge,    \
                                          const SeqBatch<T>&, SeqBatch<T>&, SeqBatch<T>&);  \
  template SeqBatch<T> modulate(const SeqBatch<T>&, const SeqBatch<T>&);                    \
  template void modulate_backward(const SeqBatch<T>&, const SeqBatch<T>&, const SeqBatch<T>&, \
                                  SeqBatch<T>*, SeqBatch<T>*);

METAPI_INSTANTIATE(float)
METAPI_INSTANTIATE(double)

#undef METAPI_INSTANTIATE

}  // namespace metapi
