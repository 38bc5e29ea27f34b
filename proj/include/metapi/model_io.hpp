#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "metapi/char_lm.hpp"
#include "metapi/superstructure.hpp"

namespace metapi {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

// Container layout (little-endian): "MPNN", u16 version, then length-prefixed
// kind tag and architecture JSON, u32 tensor count, and per tensor a
// length-prefixed name, u32 rank, u64 extents and f64 values.
struct ModelFile {
  static constexpr std::uint16_t kVersion = 1;

  std::string kind;
  std::string architecture;  // JSON text
  std::vector<NamedTensor> tensors;

  template <class T>
  void put(const ParameterSet<T>& ps);
  // Fills every parameter by name; missing names or shape changes throw.
  template <class T>
  void get(ParameterSet<T>& ps) const;
};

void save_model_file(const std::filesystem::path& path, const ModelFile& file);
// Refuses (FormatError) a wrong magic, version or kind tag.
ModelFile load_model_file(const std::filesystem::path& path, const std::string& expected_kind);
// Kind tag of a model file without loading its tensors.
std::string peek_model_kind(const std::filesystem::path& path);

template <class T>
void save_lid(const std::filesystem::path& path, LfvExtractor<T>& lid);
template <class T>
LfvExtractor<T> load_lid(const std::filesystem::path& path);

template <class T>
void save_nlc(const std::filesystem::path& path, NlcNet<T>& nlc);
template <class T>
NlcNet<T> load_nlc(const std::filesystem::path& path);

// Subnets use kind "subnet"; the monolingual baseline shares the layout under
// kind "baseline".
template <class T>
void save_ctc_model(const std::filesystem::path& path, Subnet<T>& model,
                    const std::string& kind = "subnet");
template <class T>
Subnet<T> load_ctc_model(const std::filesystem::path& path, const std::string& kind = "subnet");

void save_lm(const std::filesystem::path& path, CharLm& lm);
CharLm load_lm(const std::filesystem::path& path);

template <class T>
void save_superstructure(const std::filesystem::path& path, Superstructure<T>& s);
template <class T>
Superstructure<T> load_superstructure(const std::filesystem::path& path);

}  // namespace metapi
