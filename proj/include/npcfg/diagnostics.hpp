#pragma once

#include "npcfg/parameterization.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace npcfg {

inline const double kLn2 = std::log(2.0);
inline constexpr double kZeroTolerance = 1e-12;

/// KL(P || Q) in nats with 0 ln(0/q) = 0; +inf when Q vanishes under P.
template <typename DerivedP, typename DerivedQ>
double kl(const Eigen::DenseBase<DerivedP>& p, const Eigen::DenseBase<DerivedQ>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl: supports differ");
  double total = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p.derived().coeff(i);
    if (pi <= 0) continue;
    const double qi = q.derived().coeff(i);
    if (qi <= 0) return std::numeric_limits<double>::infinity();
    total += pi * std::log(pi / qi);
  }
  return total;
}

/// Jensen-Shannon divergence in nats, clamped to [0, ln 2].
template <typename DerivedP, typename DerivedQ>
double jsd(const Eigen::DenseBase<DerivedP>& p, const Eigen::DenseBase<DerivedQ>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("jsd: supports differ");
  double total = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p.derived().coeff(i);
    const double qi = q.derived().coeff(i);
    const double mi = 0.5 * (pi + qi);
    // Summing both terms first keeps jsd(p, q) == jsd(q, p) bitwise.
    const double a = pi > 0 ? 0.5 * pi * std::log(pi / mi) : 0.0;
    const double b = qi > 0 ? 0.5 * qi * std::log(qi / mi) : 0.0;
    total += a + b;
  }
  return std::clamp(total, 0.0, kLn2);
}

/// Natural-log entropy of one distribution.
template <typename Derived>
double entropy(const Eigen::DenseBase<Derived>& p) {
  double h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p.derived().coeff(i);
    if (pi > 0) h -= pi * std::log(pi);
  }
  return h;
}

/// All unordered row pairs (i < j) in lexicographic order.
std::vector<std::pair<int, int>> all_pairs(int rows);

/// Geometric mean of pairwise JSD over the rows of a distribution set,
/// computed as exp(mean log JSD). Zero when any pair is identical.
template <typename Derived>
double gpj(const Eigen::MatrixBase<Derived>& rows, const std::vector<std::pair<int, int>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("gpj needs at least two distributions");
  double log_sum = 0;
  for (auto [i, j] : pairs) {
    const double d = jsd(rows.row(i), rows.row(j));
    if (d <= 0) return 0.0;
    log_sum += std::log(d);
  }
  return std::exp(log_sum / double(pairs.size()));
}

template <typename Derived>
double gpj(const Eigen::MatrixBase<Derived>& rows) {
  if (rows.rows() < 2) throw std::invalid_argument("gpj needs at least two distributions");
  return gpj(rows, all_pairs(int(rows.rows())));
}

/// Mean over rows of exp(entropy).
template <typename Derived>
double local_ppl(const Eigen::MatrixBase<Derived>& rows) {
  if (rows.rows() == 0) throw std::invalid_argument("local_ppl: empty distribution set");
  double total = 0;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) total += std::exp(entropy(rows.row(r)));
  return total / double(rows.rows());
}

/// exp(entropy) of the mean distribution.
template <typename Derived>
double global_ppl(const Eigen::MatrixBase<Derived>& rows) {
  if (rows.rows() == 0) throw std::invalid_argument("global_ppl: empty distribution set");
  const Eigen::RowVectorXd mean = rows.colwise().sum() / double(rows.rows());
  return std::exp(entropy(mean));
}

/// Smallest prefix of the support sorted by descending probability (ties
/// by index) whose cumulative mass reaches `mass`.
template <typename Derived>
std::vector<int> top_mass_support(const Eigen::DenseBase<Derived>& p, double mass) {
  std::vector<int> order(std::size_t(p.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return p.derived().coeff(a) > p.derived().coeff(b); });
  std::vector<int> support;
  double cumulative = 0;
  for (int i : order) {
    if (cumulative >= mass - kZeroTolerance) break;
    support.push_back(i);
    cumulative += p.derived().coeff(i);
  }
  std::sort(support.begin(), support.end());
  return support;
}

/// |A intersect B| / |A union B| for the top-mass supports of P and Q.
template <typename DerivedP, typename DerivedQ>
double overlap_ratio(const Eigen::DenseBase<DerivedP>& p, const Eigen::DenseBase<DerivedQ>& q, double mass = 0.9) {
  if (p.size() != q.size()) throw std::invalid_argument("overlap_ratio: supports differ");
  const auto a = top_mass_support(p, mass);
  const auto b = top_mass_support(q, mass);
  std::vector<int> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  return uni.empty() ? 1.0 : double(inter.size()) / double(uni.size());
}

/// Fraction of entries with magnitude at most 1e-12.
template <typename Derived>
double zero_ratio(const Eigen::DenseBase<Derived>& x) {
  if (x.size() == 0) return 0.0;
  Eigen::Index zeros = 0;
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) zeros += std::abs(x.derived().coeff(r, c)) <= kZeroTolerance;
  return double(zeros) / double(x.size());
}

struct CosineSummary {
  double mean = 0;
  int excluded_rows = 0;  // rows with zero norm
};

/// Mean cosine similarity over unordered pairs of nonzero rows.
template <typename Derived>
CosineSummary children_cosine_mean(const Eigen::MatrixBase<Derived>& u) {
  std::vector<Eigen::RowVectorXd> unit;
  CosineSummary out;
  for (Eigen::Index r = 0; r < u.rows(); ++r) {
    const double norm = u.row(r).norm();
    if (norm <= kZeroTolerance) {
      ++out.excluded_rows;
      continue;
    }
    unit.push_back(u.row(r) / norm);
  }
  if (unit.size() < 2) throw std::invalid_argument("children_cosine_mean needs two rows with nonzero norm");
  double total = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < unit.size(); ++i) {
    for (std::size_t j = i + 1; j < unit.size(); ++j) {
      total += unit[i].dot(unit[j]);
      ++pairs;
    }
  }
  out.mean = total / double(pairs);
  return out;
}

struct ScaleStats {
  double min = 0, mean = 0, max = 0;
};

/// Summary of Euclidean row norms.
template <typename Derived>
ScaleStats scale_stats(const Eigen::MatrixBase<Derived>& vectors) {
  if (vectors.rows() == 0) throw std::invalid_argument("scale_stats: no vectors");
  const Eigen::VectorXd norms = vectors.rowwise().norm();
  return {norms.minCoeff(), norms.mean(), norms.maxCoeff()};
}

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<long> counts;

  long total() const { return std::accumulate(counts.begin(), counts.end(), 0L); }
};

/// Equal-width bins over [lo, hi]; values at hi land in the last bin.
Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi);

struct DiagnosticsOptions {
  int histogram_bins = 14;
  double overlap_mass = 0.9;
  double collapse_threshold = 0.05;  // report summaries only
  int max_pairs = 0;                 // 0 = every pair
  uint64_t pair_seed = 0;
};

/// Metrics over one rule family (each row one parent's distribution).
struct FamilyDiagnostics {
  int distributions = 0;
  int support = 0;
  std::optional<double> gpj;  // needs two rows
  double local_ppl = 0;
  double global_ppl = 0;
  double mean_entropy = 0;
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> pair_jsd;
  std::vector<double> overlap_ratios;
  Histogram jsd_histogram;
  int collapsed_pairs = 0;
};

FamilyDiagnostics diagnose_family(const Eigen::MatrixXd& probabilities, const DiagnosticsOptions& options = {});

struct DiagnosticsReport {
  FamilyDiagnostics binary;
  FamilyDiagnostics unary;
  double root_entropy = 0;
  // Zero ratio of post-activation values per network; empty when the
  // network has no activation (baseline binary) or is absent.
  std::optional<double> zero_ratio_root, zero_ratio_binary, zero_ratio_unary;
  std::optional<double> children_cosine_binary, children_cosine_unary;
  std::optional<ScaleStats> scale_root_parent, scale_binary_parent, scale_unary_parent;
  std::optional<ScaleStats> scale_children, scale_terminals;

  nlohmann::json to_json() const;
};

/// Grammar-only metrics; network fields stay empty.
DiagnosticsReport diagnose_grammar(const Grammar& g, const DiagnosticsOptions& options = {});
/// Computes the grammar once and fills every field.
DiagnosticsReport diagnose(const ParameterSet& p, const DiagnosticsOptions& options = {});

/// Zero ratio over every post-activation tensor of a network trace.
std::optional<double> network_zero_ratio(const Mlp& mlp, const MlpTrace& trace);

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h);
void write_pairwise_csv(const std::filesystem::path& path, const FamilyDiagnostics& family);
/// report.json plus histogram and pairwise CSVs for both rule families.
void write_report(const std::filesystem::path& dir, const DiagnosticsReport& report);

}  // namespace npcfg
