#include "metapi/training.hpp"

#include <json.hpp>

namespace metapi {

std::string to_json_line(const EpochMetrics& m) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"stage", m.stage},
                   {"epoch", m.epoch},
                   {"train_loss", num(m.train_loss)},
                   {"heldout_loss", num(m.heldout_loss)},
                   {"heldout_cer", num(m.heldout_cer)},
                   {"heldout_accuracy", num(m.heldout_accuracy)},
                   {"lr", m.lr},
                   {"skipped", m.skipped},
                   {"improved", m.improved}};
  return j.dump();
}

}  // namespace metapi
