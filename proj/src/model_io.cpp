#include "metapi/model_io.hpp"

#include <array>
#include <bit>
#include <fstream>

#include <json.hpp>

namespace metapi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic{'M', 'P', 'N', 'N'};

template <class U>
void put_le(std::ostream& os, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(std::istream& is, const fs::path& path) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) throw FormatError(path.string() + ": truncated model file");
    v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(c)) << (8 * i));
  }
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const fs::path& path) {
  const auto n = get_le<std::uint32_t>(is, path);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw FormatError(path.string() + ": truncated model file");
  return s;
}

// Reads magic, version and kind; leaves the stream at the architecture.
std::string read_header(std::istream& is, const fs::path& path) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kMagic) throw FormatError(path.string() + ": not an MPNN model file");
  const auto version = get_le<std::uint16_t>(is, path);
  if (version != ModelFile::kVersion) {
    throw FormatError(path.string() + ": model format version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(ModelFile::kVersion) + ")");
  }
  return get_string(is, path);
}

}  // namespace

template <class T>
void ModelFile::put(const ParameterSet<T>& ps) {
  for (const auto* p : ps) {
    NamedTensor t;
    t.name = p->name;
    t.shape = p->value.shape();
    t.data.assign(p->value.storage().begin(), p->value.storage().end());
    tensors.push_back(std::move(t));
  }
}

template <class T>
void ModelFile::get(ParameterSet<T>& ps) const {
  for (auto* p : ps) {
    const NamedTensor* found = nullptr;
    for (const auto& t : tensors) {
      if (t.name == p->name) found = &t;
    }
    if (!found) throw FormatError("model file has no tensor '" + p->name + "'");
    if (found->shape != p->value.shape()) {
      throw FormatError("tensor '" + p->name + "' has shape " + shape_string(found->shape) +
                        ", architecture expects " + shape_string(p->value.shape()));
    }
    auto& dst = p->value.storage();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(found->data[i]);
  }
}

template void ModelFile::put(const ParameterSet<float>&);
template void ModelFile::put(const ParameterSet<double>&);
template void ModelFile::get(ParameterSet<float>&) const;
template void ModelFile::get(ParameterSet<double>&) const;

void save_model_file(const fs::path& path, const ModelFile& file) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os.write(kMagic.data(), 4);
  put_le<std::uint16_t>(os, ModelFile::kVersion);
  put_string(os, file.kind);
  put_string(os, file.architecture);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    put_string(os, t.name);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) put_le<std::uint64_t>(os, e);
    for (double v : t.data) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

std::string peek_model_kind(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  return read_header(is, path);
}

ModelFile load_model_file(const fs::path& path, const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  ModelFile f;
  f.kind = read_header(is, path);
  if (f.kind != expected_kind) {
    throw FormatError(path.string() + " holds a '" + f.kind + "' model, expected '" +
                      expected_kind + "'");
  }
  f.architecture = get_string(is, path);
  const auto count = get_le<std::uint32_t>(is, path);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = get_string(is, path);
    const auto rank = get_le<std::uint32_t>(is, path);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(static_cast<std::size_t>(get_le<std::uint64_t>(is, path)));
      n *= t.shape.back();
    }
    t.data.resize(n);
    for (auto& v : t.data) v = std::bit_cast<double>(get_le<std::uint64_t>(is, path));
    f.tensors.push_back(std::move(t));
  }
  return f;
}

// ---------------------------------------------------------------- descriptors

namespace {

template <class T>
json lid_arch(const LfvExtractor<T>& lid) {
  return json{{"feat_dim", lid.feat_dim()},
              {"hidden", lid.h1.out_dim()},
              {"bottleneck", lid.lfv_dim()},
              {"post", lid.post_dim()},
              {"languages", lid.languages()},
              {"trained", lid.trained},
              {"has_head", lid.has_head()}};
}

template <class T>
LfvExtractor<T> lid_from_arch(const json& a) {
  LfvExtractor<T> lid(a.at("feat_dim"), a.at("hidden"), a.at("bottleneck"), a.at("post"),
                      a.at("languages"));
  lid.trained = a.at("trained");
  if (!a.at("has_head").get<bool>()) lid.discard_head();
  return lid;
}

template <class T>
json nlc_arch(const NlcNet<T>& n) {
  return json{{"feat_dim", n.feat_dim()},
              {"lfv_dim", n.lfv_dim()},
              {"hidden", n.hidden()},
              {"width", n.width()}};
}

template <class T>
NlcNet<T> nlc_from_arch(const json& a) {
  return NlcNet<T>(a.at("feat_dim"), a.at("lfv_dim"), a.at("hidden"), a.at("width"));
}

template <class T>
json subnet_arch(const Subnet<T>& s) {
  const auto& sp = s.model.spec();
  return json{{"language", s.language},
              {"target", to_string(s.kind)},
              {"inventory", s.inventory.names()},
              {"name", sp.name},
              {"feat_dim", sp.feat_dim},
              {"hidden", sp.hidden},
              {"layers", sp.layers},
              {"merge", to_string(sp.merge)},
              {"units", sp.units},
              {"dropout", sp.dropout},
              {"has_head", s.model.has_head()}};
}

template <class T>
Subnet<T> subnet_from_arch(const json& a) {
  Subnet<T> s;
  s.language = a.at("language");
  s.kind = target_kind_from_string(a.at("target"));
  s.inventory = UnitInventory(a.at("inventory").get<std::vector<std::string>>());
  CtcModelSpec sp;
  sp.name = a.at("name");
  sp.feat_dim = a.at("feat_dim");
  sp.hidden = a.at("hidden");
  sp.layers = a.at("layers");
  sp.merge = merge_from_string(a.at("merge"));
  sp.units = a.at("units");
  sp.dropout = a.at("dropout");
  s.model = CtcModel<T>(sp);
  if (!a.at("has_head").get<bool>()) s.model.detach_head();
  return s;
}

json parse_arch(const ModelFile& f) {
  try {
    return json::parse(f.architecture);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model architecture descriptor is not valid JSON: ") + e.what());
  }
}

template <class Fn>
auto guarded(const fs::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed architecture descriptor: " + e.what());
  }
}

}  // namespace

template <class T>
void save_lid(const fs::path& path, LfvExtractor<T>& lid) {
  ModelFile f;
  f.kind = "lid";
  f.architecture = lid_arch(lid).dump();
  ParameterSet<T> ps;
  lid.collect(ps);
  f.put(ps);
  save_model_file(path, f);
}

template <class T>
LfvExtractor<T> load_lid(const fs::path& path) {
  const auto f = load_model_file(path, "lid");
  auto lid = guarded(path, [&] { return lid_from_arch<T>(parse_arch(f)); });
  ParameterSet<T> ps;
  lid.collect(ps);
  f.get(ps);
  return lid;
}

template <class T>
void save_nlc(const fs::path& path, NlcNet<T>& nlc) {
  ModelFile f;
  f.kind = "nlc";
  f.architecture = nlc_arch(nlc).dump();
  ParameterSet<T> ps;
  nlc.collect(ps);
  f.put(ps);
  save_model_file(path, f);
}

template <class T>
NlcNet<T> load_nlc(const fs::path& path) {
  const auto f = load_model_file(path, "nlc");
  auto nlc = guarded(path, [&] { return nlc_from_arch<T>(parse_arch(f)); });
  ParameterSet<T> ps;
  nlc.collect(ps);
  f.get(ps);
  return nlc;
}

template <class T>
void save_ctc_model(const fs::path& path, Subnet<T>& model, const std::string& kind) {
  ModelFile f;
  f.kind = kind;
  f.architecture = subnet_arch(model).dump();
  ParameterSet<T> ps;
  model.model.collect(ps);
  f.put(ps);
  save_model_file(path, f);
}

template <class T>
Subnet<T> load_ctc_model(const fs::path& path, const std::string& kind) {
  const auto f = load_model_file(path, kind);
  auto s = guarded(path, [&] { return subnet_from_arch<T>(parse_arch(f)); });
  ParameterSet<T> ps;
  s.model.collect(ps);
  f.get(ps);
  return s;
}

void save_lm(const fs::path& path, CharLm& lm) {
  ModelFile f;
  f.kind = "lm";
  f.architecture = json{{"units", lm.units()}, {"hidden", lm.hidden()}}.dump();
  ParameterSet<double> ps;
  lm.collect(ps);
  f.put(ps);
  save_model_file(path, f);
}

CharLm load_lm(const fs::path& path) {
  const auto f = load_model_file(path, "lm");
  CharLm lm = guarded(path, [&] {
    const auto a = parse_arch(f);
    return CharLm(a.at("units"), a.at("hidden"));
  });
  ParameterSet<double> ps;
  lm.collect(ps);
  f.get(ps);
  return lm;
}

template <class T>
void save_superstructure(const fs::path& path, Superstructure<T>& s) {
  json subs = json::array();
  for (const auto& sub : s.subnets) subs.push_back(subnet_arch(sub));
  const auto& m = s.main.spec();
  json arch{{"mode", to_string(s.mode)},
            {"joint", s.joint.names()},
            {"main", {{"width", m.width},
                      {"part1_layers", m.part1_layers},
                      {"part2_layers", m.part2_layers},
                      {"dropout", m.dropout}}},
            {"lid", lid_arch(s.lid)},
            {"nlc", nlc_arch(s.nlc)},
            {"subnets", subs}};
  ModelFile f;
  f.kind = "superstructure";
  f.architecture = arch.dump();
  ParameterSet<T> ps;
  s.collect_all(ps);
  f.put(ps);
  save_model_file(path, f);
}

template <class T>
Superstructure<T> load_superstructure(const fs::path& path) {
  const auto f = load_model_file(path, "superstructure");
  Superstructure<T> s = guarded(path, [&] {
    const auto a = parse_arch(f);
    Superstructure<T> s;
    s.mode = code_mode_from_string(a.at("mode"));
    s.joint = UnitInventory(a.at("joint").get<std::vector<std::string>>());
    s.lid = lid_from_arch<T>(a.at("lid"));
    s.nlc = nlc_from_arch<T>(a.at("nlc"));
    std::size_t in_dim = 0;
    for (const auto& sa : a.at("subnets")) {
      s.subnets.push_back(subnet_from_arch<T>(sa));
      in_dim += s.subnets.back().model.out_dim();
    }
    MainSpec spec;
    spec.width = a.at("main").at("width");
    spec.part1_layers = a.at("main").at("part1_layers");
    spec.part2_layers = a.at("main").at("part2_layers");
    spec.dropout = a.at("main").at("dropout");
    s.main = MainNet<T>(in_dim, s.joint.size(), spec);
    return s;
  });
  ParameterSet<T> ps;
  s.collect_all(ps);
  f.get(ps);
  return s;
}

#define METAPI_MODEL_IO(T)                                                         \
  template void save_lid(const fs::path&, LfvExtractor<T>&);                       \
  template LfvExtractor<T> load_lid(const fs::path&);                              \
  template void save_nlc(const fs::path&, NlcNet<T>&);                             \
  template NlcNet<T> load_nlc(const fs::path&);                                    \
  template void save_ctc_model(const fs::path&, Subnet<T>&, const std::string&);   \
  template Subnet<T> load_ctc_model(const fs::path&, const std::string&);          \
  template void save_superstructure(const fs::path&, Superstructure<T>&);          \
  template Superstructure<T> load_superstructure(const fs::path&);

METAPI_MODEL_IO(float)
METAPI_MODEL_IO(double)

}  // namespace metapi
