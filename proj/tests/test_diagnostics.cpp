#include "npcfg/diagnostics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace npcfg;

namespace {

Eigen::RowVectorXd row(std::initializer_list<double> v) {
  Eigen::RowVectorXd r(Eigen::Index(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

}  // namespace

TEST_CASE("kl and jsd on hand-computed inputs") {
  const auto p = row({0.5, 0.5}), q = row({1.0, 0.0});
  CHECK(kl(q, p) == doctest::Approx(std::log(2.0)));
  CHECK(std::isinf(kl(p, q)));
  // M = (0.75, 0.25): 0.5 KL(P||M) + 0.5 KL(Q||M).
  const double expect = 0.5 * (0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25)) + 0.5 * std::log(1 / 0.75);
  CHECK(jsd(p, q) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(jsd(p, p) == 0.0);
  CHECK(jsd(row({1, 0}), row({0, 1})) == doctest::Approx(kLn2).epsilon(1e-15));
  CHECK_THROWS_AS(jsd(row({1}), row({0.5, 0.5})), std::invalid_argument);
}

TEST_CASE("jsd is symmetric and bounded") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 200; ++t) {
    const auto a = oracle::random_distribution(rng, 7), b = oracle::random_distribution(rng, 7);
    const Eigen::Map<const Eigen::RowVectorXd> p(a.data(), 7), q(b.data(), 7);
    const double d = jsd(p, q);
    CHECK(d == jsd(q, p));
    CHECK(d >= 0);
    CHECK(d <= kLn2);
    CHECK(std::abs(d - oracle::jsd_direct(a, b)) < 1e-10);
  }
}

TEST_CASE("gpj") {
  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(3, 4, 0.25);
  CHECK(gpj(same) == 0.0);
  Eigen::MatrixXd two(2, 3);
  two << 0.2, 0.3, 0.5, 0.6, 0.3, 0.1;
  CHECK(gpj(two) == doctest::Approx(jsd(two.row(0), two.row(1))).epsilon(1e-15));
  Eigen::MatrixXd three(3, 3);
  three << 0.2, 0.3, 0.5, 0.6, 0.3, 0.1, 0.1, 0.1, 0.8;
  const double expect = std::cbrt(jsd(three.row(0), three.row(1)) * jsd(three.row(0), three.row(2)) *
                                  jsd(three.row(1), three.row(2)));
  CHECK(gpj(three) == doctest::Approx(expect).epsilon(1e-14));
  const Eigen::MatrixXd onehot = Eigen::MatrixXd::Identity(4, 4);
  CHECK(gpj(onehot) == doctest::Approx(kLn2).epsilon(1e-14));
  CHECK_THROWS_AS(gpj(Eigen::MatrixXd::Ones(1, 3)), std::invalid_argument);
  // Row order does not matter.
  Eigen::MatrixXd permuted(3, 3);
  permuted << three.row(2), three.row(0), three.row(1);
  CHECK(gpj(permuted) == doctest::Approx(gpj(three)).epsilon(1e-14));
}

TEST_CASE("perplexities") {
  CHECK(local_ppl(Eigen::MatrixXd::Constant(3, 5, 0.2)) == doctest::Approx(5.0));
  CHECK(local_ppl(Eigen::MatrixXd::Identity(3, 3)) == 1.0);
  CHECK(global_ppl(Eigen::MatrixXd::Identity(2, 2)) == doctest::Approx(2.0));
  std::mt19937_64 rng(32);
  for (int t = 0; t < 50; ++t) {
    std::vector<oracle::Dist> rows;
    for (int r = 0; r < 5; ++r) rows.push_back(oracle::random_distribution(rng, 6));
    const Eigen::MatrixXd m = oracle::to_matrix(rows);
    const double l = local_ppl(m), g = global_ppl(m);
    CHECK(std::abs(l - oracle::local_ppl_direct(rows)) < 1e-10);
    CHECK(std::abs(g - oracle::global_ppl_direct(rows)) < 1e-10);
    CHECK(l >= 1.0);
    CHECK(l <= 6.0 + 1e-12);
    CHECK(g >= 1.0);
    CHECK(g <= 6.0 + 1e-12);
  }
}

TEST_CASE("overlap ratio") {
  const auto p = row({0.4, 0.3, 0.2, 0.05, 0.05, 0.0});
  const auto q = row({0.0, 0.05, 0.3, 0.4, 0.2, 0.05});
  // A = {0, 1, 2}, B = {2, 3, 4}: one shared out of five.
  CHECK(top_mass_support(p, 0.9) == std::vector<int>{0, 1, 2});
  CHECK(overlap_ratio(p, q) == doctest::Approx(0.2));
  CHECK(overlap_ratio(p, p) == 1.0);
  CHECK(overlap_ratio(row({1, 0}), row({0, 1})) == 0.0);
  // Ties resolved by index.
  CHECK(top_mass_support(row({0.25, 0.25, 0.25, 0.25}), 0.5) == std::vector<int>{0, 1});
  std::mt19937_64 rng(33);
  for (int t = 0; t < 200; ++t) {
    const auto a = oracle::random_distribution(rng, 8), b = oracle::random_distribution(rng, 8);
    const Eigen::Map<const Eigen::RowVectorXd> x(a.data(), 8), y(b.data(), 8);
    CHECK(overlap_ratio(x, y) == doctest::Approx(oracle::overlap_direct(a, b)).epsilon(1e-15));
  }
}

TEST_CASE("zero ratio, cosine and scale statistics") {
  CHECK(zero_ratio(Eigen::MatrixXd::Zero(3, 4)) == 1.0);
  CHECK(zero_ratio(Eigen::MatrixXd::Constant(3, 4, 0.1)) == 0.0);
  Eigen::MatrixXd half = Eigen::MatrixXd::Ones(2, 4);
  half.row(1).setZero();
  CHECK(zero_ratio(half) == 0.5);

  CHECK(children_cosine_mean(Eigen::MatrixXd::Ones(3, 2)).mean == doctest::Approx(1.0));
  CHECK(children_cosine_mean(Eigen::MatrixXd::Identity(3, 3)).mean == doctest::Approx(0.0));
  Eigen::MatrixXd with_zero = Eigen::MatrixXd::Identity(3, 3);
  with_zero.row(2).setZero();
  const CosineSummary cs = children_cosine_mean(with_zero);
  CHECK(cs.excluded_rows == 1);
  CHECK(cs.mean == 0.0);
  std::mt19937_64 rng(34);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd u(5, 4);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = n(rng);
  double total = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) total += u.row(i).dot(u.row(j)) / (u.row(i).norm() * u.row(j).norm());
  CHECK(children_cosine_mean(u).mean == doctest::Approx(total / 10).epsilon(1e-13));

  Eigen::MatrixXd scaled(3, 2);
  scaled << 1, 0, 0, 2, 3, 0;
  const ScaleStats s = scale_stats(scaled);
  CHECK(s.min == 1.0);
  CHECK(s.mean == doctest::Approx(2.0));
  CHECK(s.max == 3.0);
}

TEST_CASE("histogram binning") {
  const Histogram h = make_histogram({0.0, 0.1, kLn2, 0.3}, 14, 0.0, kLn2);
  CHECK(h.edges.size() == 15);
  CHECK(h.total() == 4);
  CHECK(h.counts[0] == 1);
  CHECK(h.counts[2] == 1);
  CHECK(h.counts[6] == 1);
  CHECK(h.counts.back() == 1);
}

TEST_CASE("family diagnostics on constructed grammars") {
  const FamilyDiagnostics distinct = diagnose_family(Eigen::MatrixXd::Identity(4, 6));
  CHECK(*distinct.gpj == doctest::Approx(kLn2));
  for (double r : distinct.overlap_ratios) CHECK(r == 0.0);
  CHECK(distinct.jsd_histogram.total() == 6);
  CHECK(distinct.collapsed_pairs == 0);

  const FamilyDiagnostics shared = diagnose_family(Eigen::MatrixXd::Constant(5, 4, 0.25));
  CHECK(*shared.gpj == 0.0);
  CHECK(shared.jsd_histogram.counts[0] == 10);
  CHECK(shared.collapsed_pairs == 10);
  CHECK(shared.local_ppl == doctest::Approx(4.0));

  DiagnosticsOptions sub;
  sub.max_pairs = 3;
  sub.pair_seed = 7;
  const FamilyDiagnostics sampled = diagnose_family(Eigen::MatrixXd::Identity(6, 6), sub);
  CHECK(sampled.pairs.size() == 3);
  CHECK(sampled.jsd_histogram.total() == 3);
  CHECK(diagnose_family(Eigen::MatrixXd::Identity(6, 6), sub).pairs == sampled.pairs);
}

TEST_CASE("full report on a parameter set") {
  ModelConfig c;
  c.symbols = SymbolTable{3, 6};
  c.embed_dim = 8;
  std::vector<std::string> words{"a", "b", "c", "d"};
  for (Mode mode : {Mode::Baseline, Mode::Crnp}) {
    c.mode = mode;
    const ParameterSet p = init_parameters(c, Vocabulary(words), 1);
    const DiagnosticsReport r = diagnose(p);
    CHECK(r.binary.distributions == 3);
    CHECK(r.unary.distributions == 6);
    CHECK(r.binary.jsd_histogram.total() == 3);
    CHECK(r.unary.jsd_histogram.total() == 15);
    CHECK(*r.unary.gpj > 0);
    CHECK(*r.unary.gpj < kLn2);
    CHECK(r.zero_ratio_unary.has_value());
    CHECK(r.zero_ratio_binary.has_value() == (mode == Mode::Crnp));
    CHECK(r.scale_children.has_value());

    const auto dir = std::filesystem::temp_directory_path() / "npcfg_test_report";
    std::filesystem::remove_all(dir);
    write_report(dir, r);
    for (const char* f : {"report.json", "jsd_histogram_binary.csv", "jsd_histogram_unary.csv", "pairwise_binary.csv",
                          "pairwise_unary.csv"})
      CHECK(std::filesystem::exists(dir / f));
    std::ifstream in(dir / "report.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j == r.to_json());
    std::filesystem::remove_all(dir);
  }
}
