#pragma once

#include <map>
#include <string>
#include <vector>

#include "metapi/ctc.hpp"
#include "metapi/metrics.hpp"

namespace metapi {

// Ordered unit set: blank at 0, word boundary at 1, then the remaining units
// in sorted order.
class UnitInventory {
 public:
  static inline const std::string kBlank = "<b>";
  static inline const std::string kWordBoundary = "|";
  static constexpr int kWordBoundaryId = 1;

  UnitInventory() : UnitInventory(std::vector<std::string>{}) {}
  explicit UnitInventory(std::vector<std::string> units);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int id) const;
  int id(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  LabelSeq encode(const UnitString& units) const;
  UnitString decode(const LabelSeq& ids) const;

  bool operator==(const UnitInventory& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
};

}  // namespace metapi
