#include "npcfg/checkpoint.hpp"
#include "npcfg/cli.hpp"
#include "npcfg/diagnostics.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace npcfg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "npcfg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("npcfg_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

// S -> X c | a b, X -> a b: every sentence has exactly one derivation.
Grammar unambiguous_generator() {
  Grammar g;
  g.symbols = SymbolTable{2, 3};
  g.vocab = Vocabulary({"a", "b", "c"});
  const double z = kLogZero<double>;
  const auto& s = g.symbols;
  g.root = Eigen::Vector2d(0.0, z);
  g.binary = Eigen::MatrixXd::Constant(2, s.num_child_pairs(), z);
  g.binary(0, s.pair_index(1, 4)) = std::log(0.5);
  g.binary(0, s.pair_index(2, 3)) = std::log(0.5);
  g.binary(1, s.pair_index(2, 3)) = 0.0;
  g.unary = Eigen::MatrixXd::Constant(3, 4, z);
  for (int t = 0; t < 3; ++t) g.unary(t, t + 1) = 0.0;
  return g;
}

}  // namespace

TEST_CASE("config precedence: defaults, file, environment, overrides") {
  const auto dir = temp_dir("config");
  {
    std::ofstream f(dir / "c.json");
    f << R"({"embed_dim": 32, "depth": 3, "max_epochs": 7, "mode": "baseline"})";
  }
  std::map<std::string, std::string> env{{"NPCFG_DEPTH", "4"}, {"NPCFG_MAX_EPOCHS", "9"}};
  auto lookup = [&](const std::string& k) -> std::optional<std::string> {
    auto it = env.find(k);
    if (it == env.end()) return std::nullopt;
    return it->second;
  };
  const ExperimentConfig c = load_experiment_config(dir / "c.json", {"max_epochs=11", "seeds=1,2,3,4"}, lookup);
  CHECK(c.model().embed_dim == 32);
  CHECK(c.model().depth == 4);
  CHECK(c.model().mode == Mode::Baseline);
  CHECK(c.train().max_epochs == 11);
  CHECK(c.train().patience == 5);
  CHECK(c.seeds() == std::vector<uint64_t>{1, 2, 3, 4});
  CHECK(c.model().symbols.num_preterminals == 60);
  CHECK_THROWS_AS(load_experiment_config(std::nullopt, {"no_such_key=1"}, lookup), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(std::nullopt, {"missing_equals"}, lookup), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(dir / "absent.json", {}, lookup), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(std::nullopt, {"preterminals=0"}, lookup), ConfigError);
  CHECK(parse_override_value("3") == 3);
  CHECK(parse_override_value("0.5") == 0.5);
  CHECK(parse_override_value("crnp") == "crnp");
  CHECK(parse_override_value("1,2") == nlohmann::json::array({1, 2}));
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  CHECK(cli({"train", "--set", "nonterminals=0"}).code == kExitConfig);
  CHECK(cli({"train", "--set", "bogus=1"}).code == kExitConfig);
  CHECK(cli({"train"}).code == kExitConfig);
  const auto dir = temp_dir("exit");
  CHECK(cli({"train", "--set", "manifest=" + (dir / "none.json").string()}).code == kExitData);
  CHECK(cli({"diagnose", "--checkpoint", (dir / "none.ckpt").string()}).code == kExitData);
  std::ostringstream err;
  CHECK(report_error(std::make_exception_ptr(NumericError("nan")), err) == kExitNumeric);
  CHECK(report_error(std::make_exception_ptr(DataError("x")), err) == kExitData);
  fs::remove_all(dir);
}

TEST_CASE("synth, train, eval, decode and diagnose") {
  const auto dir = temp_dir("pipeline");
  const auto data = dir / "data";
  Run r = cli({"synth", "--output", data.string(), "--train-size", "24", "--dev-size", "6", "--test-size", "5",
               "--max-len", "6", "--seed", "4"});
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"generator.ckpt", "train.txt", "dev.txt", "test.txt", "manifest.json"})
    CHECK(fs::exists(data / f));
  CHECK(count_lines(data / "train.txt") == 24);
  // Same seed, same corpus.
  REQUIRE(cli({"synth", "--output", (dir / "again").string(), "--train-size", "24", "--dev-size", "6", "--test-size",
               "5", "--max-len", "6", "--seed", "4"})
              .code == kExitOk);
  CHECK(slurp(data / "train.txt") == slurp(dir / "again" / "train.txt"));

  const auto runs = dir / "runs";
  r = cli({"train", "--set", "manifest=" + (data / "manifest.json").string(), "--set", "output_dir=" + runs.string(),
           "--set", "nonterminals=2", "--set", "embed_dim=8", "--set", "depth=1", "--set", "max_epochs=1", "--set",
           "seeds=0,1,2,3", "--set", "focusing=\"gold\""});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(fs::exists(runs / "experiment.json"));
  for (int s = 0; s < 4; ++s) {
    const auto run = runs / ("seed-" + std::to_string(s));
    for (const char* f : {"experiment.json", "config.json", "run_log.jsonl", "best.ckpt", "last.ckpt",
                          "diagnostics/report.json"})
      CHECK(fs::exists(run / f));
  }
  // The per-seed snapshot alone reproduces the run.
  const auto snapshot = runs / "seed-1" / "experiment.json";
  REQUIRE(cli({"train", "-c", snapshot.string(), "--set", "output_dir=" + (dir / "rerun").string()}).code == kExitOk);
  CHECK(slurp(dir / "rerun" / "seed-1" / "run_log.jsonl") == slurp(runs / "seed-1" / "run_log.jsonl"));

  const auto best0 = (runs / "seed-0" / "best.ckpt").string();
  const auto best1 = (runs / "seed-1" / "best.ckpt").string();
  const auto csv = dir / "eval.csv";
  r = cli({"eval", "--checkpoint", best0, "--checkpoint", best1, "--manifest", (data / "manifest.json").string(),
           "--split", "test", "--decoder", "both", "--csv", csv.string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(count_lines(csv) == 1 + 5 * 2 * 2);
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["summary"].contains("mbr"));
  CHECK(summary["summary"].contains("viterbi"));
  CHECK(summary["results"].size() == 4);

  {
    std::ofstream in(dir / "sentences.txt");
    in << "the dog sees a cat\nalone\n";
  }
  r = cli({"decode", "--checkpoint", best0, "--input", (dir / "sentences.txt").string(), "--decoder", "mbr"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.rfind("(X (", 0) == 0);
  CHECK(r.out.find("(T cat)") != std::string::npos);
  CHECK(r.out.back() == '\n');

  const auto d1 = dir / "diag1", d2 = dir / "diag2";
  REQUIRE(cli({"diagnose", "--checkpoint", best0, "--output", d1.string()}).code == kExitOk);
  REQUIRE(cli({"diagnose", "--checkpoint", best0, "--output", d2.string()}).code == kExitOk);
  for (const char* f : {"report.json", "jsd_histogram_binary.csv", "jsd_histogram_unary.csv", "pairwise_binary.csv",
                        "pairwise_unary.csv"})
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  // Histogram CSV counts add up to the number of unary pairs: |P| = 4 gives 6.
  long total = 0;
  {
    std::ifstream in(d1 / "jsd_histogram_unary.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) total += std::stol(line.substr(line.rfind(',') + 1));
  }
  CHECK(total == 6);
  const auto report = nlohmann::json::parse(slurp(d1 / "report.json"));
  for (const char* k : {"binary", "unary", "gpj_unary", "local_ppl", "global_ppl", "mean_entropy", "zero_ratio", "children_cosine_mean", "scale_stats"})
    CHECK(report.contains(k));
  fs::remove_all(dir);
}

TEST_CASE("eval of an unambiguous generator on its own samples") {
  const auto dir = temp_dir("generator");
  write_file(dir / "gen.ckpt", serialize_grammar(unambiguous_generator()));
  REQUIRE(cli({"synth", "--output", (dir / "data").string(), "--generator", (dir / "gen.ckpt").string(),
               "--train-size", "10", "--dev-size", "10", "--test-size", "20", "--seed", "1"})
              .code == kExitOk);
  const Run r = cli({"eval", "--checkpoint", (dir / "gen.ckpt").string(), "--manifest",
                     (dir / "data" / "manifest.json").string(), "--split", "test", "--decoder", "viterbi", "--csv",
                     (dir / "eval.csv").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(count_lines(dir / "eval.csv") == 21);
  CHECK(nlohmann::json::parse(r.out)["summary"]["viterbi"]["mean"] == 1.0);

  // A checkpoint whose vocabulary does not cover the split is rejected.
  Grammar other = unambiguous_generator();
  other.vocab = Vocabulary({"x", "y", "z"});
  write_file(dir / "other.ckpt", serialize_grammar(other));
  CHECK(cli({"eval", "--checkpoint", (dir / "other.ckpt").string(), "--manifest",
             (dir / "data" / "manifest.json").string(), "--split", "test", "--csv", (dir / "e2.csv").string()})
            .code == kExitData);
  fs::remove_all(dir);
}
