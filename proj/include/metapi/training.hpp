#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>

namespace metapi {

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 0.05;
  double momentum = 0.9;
  double dropout = 0.2;
  std::size_t batch_size = 16;
  // global gradient-norm ceiling per step; <= 0 disables
  double clip_norm = 5.0;
  // halve lr after this many epochs without held-out improvement
  std::size_t patience = 2;
  double lr_decay = 0.5;
  std::uint64_t seed = 11;
};

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

struct EpochMetrics {
  std::string stage;
  std::size_t epoch = 0;
  double train_loss = kNotApplicable;
  double heldout_loss = kNotApplicable;
  double heldout_cer = kNotApplicable;
  // stage-specific figure, e.g. LID frame accuracy
  double heldout_accuracy = kNotApplicable;
  double lr = 0;
  std::size_t skipped = 0;
  // best held-out loss so far
  bool improved = false;
};

// One JSON object per line; non-applicable fields are written as null.
std::string to_json_line(const EpochMetrics& m);

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Called after the epoch callback with the model being trained, e.g. to
// write checkpoints.
template <class M>
using CheckpointHook = std::function<void(M&, const EpochMetrics&)>;

// Reduce-on-plateau schedule keyed on held-out loss.
class PlateauDecay {
 public:
  PlateauDecay(double lr, std::size_t patience, double factor)
      : lr_(lr), patience_(patience), factor_(factor) {}

  // Returns true when this epoch is the best so far.
  bool observe(double heldout_loss) {
    if (heldout_loss < best_) {
      best_ = heldout_loss;
      stalled_ = 0;
      return true;
    }
    if (patience_ > 0 && ++stalled_ >= patience_) {
      lr_ *= factor_;
      stalled_ = 0;
    }
    return false;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  std::size_t stalled_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

}  // namespace metapi
