#include <gtest/gtest.h>

#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "metapi/config.hpp"
#include "metapi/model_io.hpp"

namespace fs = std::filesystem;
using namespace metapi;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("metapi-cli-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kTiny =
    " --set corpus.languages=2 --set corpus.train_per_language=24 --set corpus.test_per_language=6"
    " --set corpus.min_symbols=6 --set corpus.max_symbols=10 --set min_frames=20"
    " --set subnet_hidden=6 --set subnet_epochs=1 --set baseline_epochs=1 --set lm_epochs=1"
    " --set lm_hidden=8 --set lid_epochs=1 --set lid_hidden=16 --set nlc_hidden=8 --set width=16";

Run cli(const fs::path& root, const std::string& args, bool tiny = true) {
  const fs::path out = root / "stdout.txt", err = root / "stderr.txt";
  const std::string cmd = std::string("\"") + METAPI_CLI_PATH + "\" --data-root \"" + root.string() + "\"" +
                          (tiny ? kTiny : "") + " " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json last_json_line(const std::string& text) {
  std::istringstream is(text);
  std::string line, last;
  while (std::getline(is, line)) {
    if (!line.empty()) last = line;
  }
  return json::parse(last);
}

}  // namespace

TEST(Config, ParsesKeyValueText) {
  auto c = Config::parse("# comment\nseed = 4\n\ncorpus.noise_sigma = 0.75  # trailing\nwidth=32\n");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_DOUBLE_EQ(c.corpus.noise_sigma, 0.75);
  EXPECT_EQ(c.width, 32u);
}

TEST(Config, UnknownKeyIsRejected) {
  EXPECT_THROW(Config::parse("no_such_key = 1\n"), ConfigError);
  Config c;
  EXPECT_THROW(c.set("widht", "8"), ConfigError);
  EXPECT_THROW(c.set("width", "eight"), ConfigError);
}

TEST(Config, DumpRoundTrips) {
  Config c;
  c.set("corpus.noise_sigma", "0.3");
  c.set("seeds", "4,5");
  c.lr = 0.0123456789;
  const auto text = c.dump();
  const auto back = Config::parse(text);
  EXPECT_EQ(back.dump(), text);
  for (const auto& k : Config::keys()) EXPECT_EQ(back.get(k), c.get(k)) << k;
}

TEST(ModelFile, RoundTripIsBitExact) {
  const auto dir = scratch_dir("modelfile");
  ModelFile f;
  f.kind = "subnet";
  f.architecture = R"({"hidden":3})";
  f.tensors.push_back({"w", {2, 3}, {0.1, -2.5e-300, 3.0, 1.0 / 3.0, -0.0, 7e300}});
  f.tensors.push_back({"b", {1}, {42.0}});
  save_model_file(dir / "m.mpnn", f);
  auto g = load_model_file(dir / "m.mpnn", "subnet");
  EXPECT_EQ(g.kind, f.kind);
  EXPECT_EQ(g.architecture, f.architecture);
  ASSERT_EQ(g.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(g.tensors[i].name, f.tensors[i].name);
    EXPECT_EQ(g.tensors[i].shape, f.tensors[i].shape);
    ASSERT_EQ(g.tensors[i].data.size(), f.tensors[i].data.size());
    EXPECT_EQ(std::memcmp(g.tensors[i].data.data(), f.tensors[i].data.data(), 8 * f.tensors[i].data.size()), 0);
  }
  EXPECT_EQ(peek_model_kind(dir / "m.mpnn"), "subnet");
  EXPECT_THROW(load_model_file(dir / "m.mpnn", "lid"), FormatError);
  fs::remove_all(dir);
}

TEST(Cli, UsageErrorsExitWithOne) {
  const auto dir = scratch_dir("usage");
  EXPECT_EQ(cli(dir, "", false).code, 1);
  EXPECT_EQ(cli(dir, "frobnicate", false).code, 1);
  EXPECT_EQ(cli(dir, "train --stage nonsense", false).code, 1);
  auto r = cli(dir, "--set no_such_key=1 gen-corpus", false);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no_such_key"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, MissingStagesAreNamed) {
  const auto dir = scratch_dir("deps");
  auto r = cli(dir, "train --stage joint");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("subnet"), std::string::npos) << r.err;
  r = cli(dir, "train --stage lid");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("corpus"), std::string::npos) << r.err;
  ASSERT_EQ(cli(dir, "gen-corpus").code, 0);
  r = cli(dir, "train --stage nlc");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("lid"), std::string::npos) << r.err;
  fs::remove_all(dir);
}

TEST(Cli, GenCorpusIsDeterministicAndReportsDrops) {
  const auto a = scratch_dir("gen-a"), b = scratch_dir("gen-b");
  auto ra = cli(a, "gen-corpus");
  auto rb = cli(b, "gen-corpus");
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(rb.code, 0) << rb.err;
  const auto ja = last_json_line(ra.out), jb = last_json_line(rb.out);
  EXPECT_EQ(ja["hash"], jb["hash"]);
  EXPECT_EQ(ja["kept"].get<std::size_t>() + ja["dropped"].get<std::size_t>(), 2u * (24 + 6));
  EXPECT_EQ(ja["dropped"].get<std::size_t>(),
            ja["too_short"].get<std::size_t>() + ja["too_long"].get<std::size_t>() + ja["empty"].get<std::size_t>());
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a / "corpus")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto other = b / "corpus" / fs::relative(e.path(), a / "corpus");
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path();
  }
  EXPECT_GT(files, 1u);

  // a stricter length filter drops more
  auto rc = cli(b, "--min-frames 60 gen-corpus --out \"" + (b / "strict").string() + "\"");
  ASSERT_EQ(rc.code, 0) << rc.err;
  EXPECT_GT(last_json_line(rc.out)["too_short"].get<std::size_t>(), ja["too_short"].get<std::size_t>());
  fs::remove_all(a);
  fs::remove_all(b);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root = new fs::path(scratch_dir("pipeline"));
    ASSERT_EQ(cli(*root, "gen-corpus").code, 0);
    auto r = cli(*root, "train --stage subnet --language 0 --target graphemes");
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli(*root, "train --stage lm --inventory language");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root);
    delete root;
  }
  static fs::path* root;
};
fs::path* CliPipeline::root = nullptr;

TEST_F(CliPipeline, CheckpointsAndLogsAreWritten) {
  EXPECT_TRUE(fs::exists(*root / "models" / "subnet.L0.graphemes.best.mpnn"));
  EXPECT_TRUE(fs::exists(*root / "models" / "subnet.L0.graphemes.last.mpnn"));
  EXPECT_TRUE(fs::exists(*root / "logs" / "subnet.L0.graphemes.jsonl"));
  EXPECT_EQ(peek_model_kind(*root / "models" / "lm.language.best.mpnn"), "lm");
  const auto cfg = Config::load(*root / "logs" / "train.subnet.config");
  EXPECT_EQ(cfg.corpus.train_per_language, 24u);
}

TEST_F(CliPipeline, SameSeedGivesIdenticalMetricsLog) {
  const auto log = *root / "logs" / "subnet.L0.graphemes.jsonl";
  const auto first = slurp(log);
  ASSERT_FALSE(first.empty());
  ASSERT_EQ(cli(*root, "train --stage subnet --language 0 --target graphemes").code, 0);
  EXPECT_EQ(slurp(log), first);
}

TEST_F(CliPipeline, UnitBeamWithoutLmMatchesGreedy) {
  const auto greedy = *root / "greedy.txt", beam = *root / "beam.txt";
  auto r = cli(*root, "decode --model subnet.L0.graphemes --out \"" + greedy.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli(*root, "--beam 1 --lm-weight 0 decode --model subnet.L0.graphemes --mode beam --out \"" +
                     beam.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(slurp(greedy).empty());
  EXPECT_EQ(slurp(greedy), slurp(beam));
}

TEST_F(CliPipeline, FusionWithoutLmIsRefused) {
  auto r = cli(*root, "--lm-weight 0.5 decode --model subnet.L0.graphemes --mode beam");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("lm"), std::string::npos);
  r = cli(*root, "--lm-weight 0.5 --beam 4 decode --model subnet.L0.graphemes --mode beam --lm lm.language");
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(CliPipeline, WrongModelKindIsRefused) {
  auto r = cli(*root, "decode --model \"" + (*root / "models" / "lm.language.best.mpnn").string() + "\"");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("lm"), std::string::npos);
}

TEST_F(CliPipeline, EvalTotalsArePooled) {
  const auto hyps = *root / "eval-hyps.txt";
  ASSERT_EQ(cli(*root, "decode --model subnet.L0.graphemes --out \"" + hyps.string() + "\"").code, 0);
  auto r = cli(*root, "eval --hyps \"" + hyps.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::string line;
  std::size_t s = 0, i = 0, d = 0, n = 0, utts = 0;
  json total;
  while (std::getline(is, line)) {
    auto j = json::parse(line);
    if (j["id"] == "<total>") {
      total = j;
      break;
    }
    s += j["substitutions"].get<std::size_t>();
    i += j["insertions"].get<std::size_t>();
    d += j["deletions"].get<std::size_t>();
    n += j["ref_length"].get<std::size_t>();
    ++utts;
  }
  ASSERT_FALSE(total.is_null());
  EXPECT_EQ(total["substitutions"].get<std::size_t>(), s);
  EXPECT_EQ(total["insertions"].get<std::size_t>(), i);
  EXPECT_EQ(total["deletions"].get<std::size_t>(), d);
  EXPECT_EQ(total["ref_length"].get<std::size_t>(), n);
  EXPECT_EQ(total["utterances"].get<std::size_t>(), utts);
  EXPECT_NEAR(total["rate"].get<double>(), double(s + i + d) / double(n), 1e-12);
}

TEST_F(CliPipeline, EvalAgainstItselfIsZero) {
  const auto hyps = *root / "self.txt";
  std::ofstream(hyps) << "u1\ta b | c\nu2\td\n";
  auto r = cli(*root, "eval --hyps \"" + hyps.string() + "\" --refs \"" + hyps.string() + "\" --level word");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(last_json_line(r.out)["rate"].get<double>(), 0.0);
}

TEST_F(CliPipeline, EvalListsMismatchedIds) {
  const auto hyps = *root / "h.txt", refs = *root / "r.txt";
  std::ofstream(hyps) << "u1\ta\nstray\tb\n";
  std::ofstream(refs) << "u1\ta\nmissing\tb\n";
  auto r = cli(*root, "eval --hyps \"" + hyps.string() + "\" --refs \"" + refs.string() + "\"");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("stray"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("missing"), std::string::npos) << r.err;
}
