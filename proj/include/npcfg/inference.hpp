#pragma once

#include "npcfg/grammar.hpp"

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <vector>

namespace npcfg {

class UnsupportedLengthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when the sentence (or its mask) admits no derivation and a
/// quantity conditioned on the sentence is requested.
class ZeroLikelihoodError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Allowed spans for constrained inference. Width-1 spans and the whole
/// sentence are always allowed.
class SpanMask {
 public:
  /// Everything allowed.
  explicit SpanMask(int length);
  /// Allowed spans are the union of the given span sets.
  static SpanMask from_span_sets(int length, std::span<const SpanSet> sets);
  static SpanMask from_trees(std::span<const ParseTree> trees);

  int length() const { return length_; }
  bool allowed(int start, int end) const;
  void allow(int start, int end);
  void disallow(int start, int end);
  void disallow_all();
  bool allows_everything() const;

 private:
  int length_;
  std::vector<char> allowed_;
};

/// Probability tables rearranged for the chart loops. Each binary block is
/// |N| x (|left range| * |right range|), column index b * |right| + c.
struct ChartGrammar {
  explicit ChartGrammar(const Grammar& g);

  const Grammar* grammar;
  int num_nt, num_pt;
  Eigen::MatrixXd prob_nn, prob_np, prob_pn, prob_pp;
  Eigen::MatrixXd log_nn, log_np, log_pn, log_pp;
};

/// Log-space inside (and optionally outside) scores. Rows of the
/// nonterminal tables are span ids start * (n + 1) + end; preterminal
/// tables are indexed by position.
struct Chart {
  int length = 0;
  std::vector<int> sentence;
  Eigen::MatrixXd inside_nt;   // (n+1)^2 x |N|
  Eigen::MatrixXd inside_pt;   // n x |P|
  Eigen::MatrixXd outside_nt;  // empty until an outside pass runs
  Eigen::MatrixXd outside_pt;
  double log_likelihood = 0;

  int span_id(int start, int end) const { return start * (length + 1) + end; }
  auto inside(int start, int end) const { return inside_nt.row(span_id(start, end)); }
};

Chart compute_inside(const ChartGrammar& cg, std::span<const int> sentence, const SpanMask* mask = nullptr);

double inside_logprob(const Grammar& g, std::span<const int> sentence);
double constrained_inside(const Grammar& g, std::span<const int> sentence, const SpanMask& mask);

/// Expected usage count of every rule under the posterior over (masked)
/// derivations. Equals d log p / d log pi elementwise.
struct RuleCounts {
  Eigen::VectorXd root;
  Eigen::MatrixXd binary;
  Eigen::MatrixXd unary;
  double log_likelihood = 0;

  static RuleCounts zeros(const SymbolTable& s, int vocab_size);
  RuleCounts& operator+=(const RuleCounts& other);
  RuleCounts& operator*=(double scale);
};

/// Fills chart.outside_* and returns rule counts; throws ZeroLikelihoodError
/// when the (masked) likelihood is zero.
RuleCounts inside_outside(const ChartGrammar& cg, std::span<const int> sentence,
                          const SpanMask* mask, Chart* chart_out = nullptr);

RuleCounts expected_rule_counts(const Grammar& g, std::span<const int> sentence, const SpanMask& mask);
RuleCounts expected_rule_counts(const Grammar& g, std::span<const int> sentence);

/// Posterior that (start, end) is a constituent, for width >= 2 spans;
/// (n+1) x (n+1), zero elsewhere.
Eigen::MatrixXd span_posteriors(const Grammar& g, std::span<const int> sentence);
Eigen::MatrixXd span_posteriors(const Chart& chart);

/// Bracketing maximizing the summed span posteriors. Ties prefer the
/// smaller left-child width.
ParseTree mbr_decode(const Eigen::MatrixXd& posteriors, std::span<const int> sentence);
ParseTree mbr_decode(const Grammar& g, std::span<const int> sentence);

struct ViterbiResult {
  ParseTree tree;
  double log_prob = 0;
};

/// Max-probability labeled derivation. Ties prefer the lowest left child
/// symbol, then the lowest right child symbol, then the smaller left width;
/// the root and preterminals prefer the lowest symbol index.
ViterbiResult viterbi_decode(const Grammar& g, std::span<const int> sentence);

}  // namespace npcfg
