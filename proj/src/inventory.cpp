#include "metapi/inventory.hpp"

#include <algorithm>
#include <set>

#include "metapi/error.hpp"

namespace metapi {

UnitInventory::UnitInventory(std::vector<std::string> units) {
  std::set<std::string> sorted;
  for (auto& u : units) {
    if (u == kBlank || u == kWordBoundary) continue;
    if (u.empty()) throw DimensionError("unit inventory: empty unit name");
    sorted.insert(std::move(u));
  }
  names_.push_back(kBlank);
  names_.push_back(kWordBoundary);
  names_.insert(names_.end(), sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < names_.size(); ++i) index_[names_[i]] = static_cast<int>(i);
}

const std::string& UnitInventory::name(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
    throw DimensionError("unit id " + std::to_string(id) + " outside inventory of size " +
                         std::to_string(names_.size()));
  }
  return names_[static_cast<std::size_t>(id)];
}

int UnitInventory::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DimensionError("unit '" + name + "' not in inventory");
  return it->second;
}

LabelSeq UnitInventory::encode(const UnitString& units) const {
  LabelSeq out;
  out.reserve(units.size());
  for (const auto& u : units) {
    const int i = id(u);
    if (i == metapi::kBlank) throw DimensionError("transcripts cannot contain the blank unit");
    out.push_back(i);
  }
  return out;
}

UnitString UnitInventory::decode(const LabelSeq& ids) const {
  UnitString out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(name(i));
  return out;
}

}  // namespace metapi
