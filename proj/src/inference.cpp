#include "npcfg/inference.hpp"

#include "npcfg/numeric.hpp"

#include <functional>
#include <string>

namespace npcfg {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
constexpr double kNegInf = kLogZero<double>;

void check_sentence(const Grammar& g, std::span<const int> sentence) {
  if (sentence.size() < 2)
    throw UnsupportedLengthError("sentences shorter than 2 words cannot be derived (length " +
                                 std::to_string(sentence.size()) + ")");
  for (int w : sentence) {
    if (w < 0 || w >= g.vocab.size())
      throw std::out_of_range("word index " + std::to_string(w) + " outside the vocabulary");
  }
}

// Extracts the (left range) x (right range) sub-block of the binary table.
Eigen::MatrixXd binary_block(const Grammar& g, bool left_nt, bool right_nt) {
  const int n = g.symbols.num_nonterminals;
  const int m = g.symbols.num_children();
  const int left_off = left_nt ? 0 : n;
  const int right_off = right_nt ? 0 : n;
  const int left_size = left_nt ? n : g.symbols.num_preterminals;
  const int right_size = right_nt ? n : g.symbols.num_preterminals;
  Eigen::MatrixXd out(n, left_size * right_size);
  for (int b = 0; b < left_size; ++b) {
    for (int c = 0; c < right_size; ++c) {
      out.col(b * right_size + c) = g.binary.col((left_off + b) * m + right_off + c);
    }
  }
  return out;
}

}  // namespace

SpanMask::SpanMask(int length)
    : length_(length), allowed_(std::size_t((length + 1) * (length + 1)), 1) {}

SpanMask SpanMask::from_span_sets(int length, std::span<const SpanSet> sets) {
  SpanMask mask(length);
  mask.disallow_all();
  for (const auto& set : sets) {
    for (const auto& s : set) {
      if (s.start < 0 || s.end > length || s.start >= s.end)
        throw std::out_of_range("span outside the sentence");
      mask.allow(s.start, s.end);
    }
  }
  return mask;
}

SpanMask SpanMask::from_trees(std::span<const ParseTree> trees) {
  if (trees.empty()) throw std::invalid_argument("SpanMask::from_trees needs at least one tree");
  const int length = trees.front().length();
  std::vector<SpanSet> sets;
  for (const auto& t : trees) {
    if (t.length() != length) throw std::invalid_argument("focus trees disagree on sentence length");
    sets.push_back(tree_to_spans(t, true));
  }
  return from_span_sets(length, sets);
}

bool SpanMask::allowed(int start, int end) const {
  if (end - start <= 1) return true;
  if (start == 0 && end == length_) return true;
  return allowed_[std::size_t(start * (length_ + 1) + end)] != 0;
}

void SpanMask::allow(int start, int end) { allowed_[std::size_t(start * (length_ + 1) + end)] = 1; }

void SpanMask::disallow(int start, int end) { allowed_[std::size_t(start * (length_ + 1) + end)] = 0; }

void SpanMask::disallow_all() { std::fill(allowed_.begin(), allowed_.end(), 0); }

bool SpanMask::allows_everything() const {
  for (int i = 0; i < length_; ++i) {
    for (int j = i + 2; j <= length_; ++j) {
      if (!allowed(i, j)) return false;
    }
  }
  return true;
}

ChartGrammar::ChartGrammar(const Grammar& g)
    : grammar(&g),
      num_nt(g.symbols.num_nonterminals),
      num_pt(g.symbols.num_preterminals),
      log_nn(binary_block(g, true, true)),
      log_np(binary_block(g, true, false)),
      log_pn(binary_block(g, false, true)),
      log_pp(binary_block(g, false, false)) {
  prob_nn = log_nn.array().exp().matrix();
  prob_np = log_np.array().exp().matrix();
  prob_pn = log_pn.array().exp().matrix();
  prob_pp = log_pp.array().exp().matrix();
}

namespace {

struct ChartView {
  const ChartGrammar& cg;

  const Eigen::MatrixXd& prob(bool left_nt, bool right_nt) const {
    if (left_nt) return right_nt ? cg.prob_nn : cg.prob_np;
    return right_nt ? cg.prob_pn : cg.prob_pp;
  }
  const Eigen::MatrixXd& logp(bool left_nt, bool right_nt) const {
    if (left_nt) return right_nt ? cg.log_nn : cg.log_np;
    return right_nt ? cg.log_pn : cg.log_pp;
  }
};

// Child score row for span (start, end): preterminal table at width 1.
template <typename Table>
auto child_row(Table& nt, Table& pt, int n, int start, int end) {
  using Row = decltype(nt.row(0));
  return end - start == 1 ? Row(pt.row(start)) : Row(nt.row(start * (n + 1) + end));
}

}  // namespace

Chart compute_inside(const ChartGrammar& cg, std::span<const int> sentence, const SpanMask* mask) {
  const Grammar& g = *cg.grammar;
  check_sentence(g, sentence);
  const int n = static_cast<int>(sentence.size());
  if (mask && mask->length() != n) throw std::invalid_argument("span mask length differs from sentence");
  const ChartView view{cg};

  Chart chart;
  chart.length = n;
  chart.sentence.assign(sentence.begin(), sentence.end());
  chart.inside_nt = Eigen::MatrixXd::Constant((n + 1) * (n + 1), cg.num_nt, kNegInf);
  chart.inside_pt.resize(n, cg.num_pt);
  for (int i = 0; i < n; ++i) chart.inside_pt.row(i) = g.unary.col(sentence[std::size_t(i)]).transpose();

  Eigen::VectorXd acc(cg.num_nt);
  Eigen::VectorXd l, r;
  RowMajorMatrix outer;
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      if (mask && !mask->allowed(i, j)) continue;
      acc.setZero();
      double acc_scale = kNegInf;
      for (int k = i + 1; k < j; ++k) {
        const auto left = child_row(chart.inside_nt, chart.inside_pt, n, i, k);
        const auto right = child_row(chart.inside_nt, chart.inside_pt, n, k, j);
        const double sl = left.maxCoeff();
        const double sr = right.maxCoeff();
        if (sl == kNegInf || sr == kNegInf) continue;
        l = (left.array() - sl).exp().transpose();
        r = (right.array() - sr).exp().transpose();
        outer.noalias() = l * r.transpose();
        const Eigen::Map<const Eigen::VectorXd> flat(outer.data(), outer.size());
        const double offset = sl + sr;
        const auto& prob = view.prob(k - i > 1, j - k > 1);
        if (offset > acc_scale) {
          if (acc_scale != kNegInf) acc *= std::exp(acc_scale - offset);
          acc_scale = offset;
          acc.noalias() += prob * flat;
        } else {
          acc.noalias() += std::exp(offset - acc_scale) * (prob * flat);
        }
      }
      if (acc_scale == kNegInf) continue;
      chart.inside_nt.row(chart.span_id(i, j)) = (acc.array().log() + acc_scale).transpose();
    }
  }
  chart.log_likelihood = log_sum_exp((g.root + chart.inside(0, n).transpose()).eval());
  return chart;
}

double inside_logprob(const Grammar& g, std::span<const int> sentence) {
  return compute_inside(ChartGrammar(g), sentence, nullptr).log_likelihood;
}

double constrained_inside(const Grammar& g, std::span<const int> sentence, const SpanMask& mask) {
  return compute_inside(ChartGrammar(g), sentence, &mask).log_likelihood;
}

RuleCounts RuleCounts::zeros(const SymbolTable& s, int vocab_size) {
  RuleCounts c;
  c.root = Eigen::VectorXd::Zero(s.num_nonterminals);
  c.binary = Eigen::MatrixXd::Zero(s.num_nonterminals, s.num_child_pairs());
  c.unary = Eigen::MatrixXd::Zero(s.num_preterminals, vocab_size);
  return c;
}

RuleCounts& RuleCounts::operator+=(const RuleCounts& other) {
  root += other.root;
  binary += other.binary;
  unary += other.unary;
  log_likelihood += other.log_likelihood;
  return *this;
}

RuleCounts& RuleCounts::operator*=(double scale) {
  root *= scale;
  binary *= scale;
  unary *= scale;
  log_likelihood *= scale;
  return *this;
}

RuleCounts inside_outside(const ChartGrammar& cg, std::span<const int> sentence, const SpanMask* mask,
                          Chart* chart_out) {
  const Grammar& g = *cg.grammar;
  Chart chart = compute_inside(cg, sentence, mask);
  const int n = chart.length;
  const double log_z = chart.log_likelihood;
  if (!(log_z > kNegInf)) throw ZeroLikelihoodError("sentence has zero probability under the (masked) grammar");
  const ChartView view{cg};
  const int nt = cg.num_nt;
  const int pt = cg.num_pt;

  chart.outside_nt = Eigen::MatrixXd::Constant((n + 1) * (n + 1), nt, kNegInf);
  chart.outside_pt = Eigen::MatrixXd::Constant(n, pt, kNegInf);
  chart.outside_nt.row(chart.span_id(0, n)) = g.root.transpose();

  // Accumulators for a * vec(l r^T), one per child-category block; the
  // elementwise product with the rule probabilities is applied at the end.
  Eigen::MatrixXd w_nn = Eigen::MatrixXd::Zero(nt, nt * nt);
  Eigen::MatrixXd w_np = Eigen::MatrixXd::Zero(nt, nt * pt);
  Eigen::MatrixXd w_pn = Eigen::MatrixXd::Zero(nt, pt * nt);
  Eigen::MatrixXd w_pp = Eigen::MatrixXd::Zero(nt, pt * pt);
  auto weights = [&](bool left_nt, bool right_nt) -> Eigen::MatrixXd& {
    if (left_nt) return right_nt ? w_nn : w_np;
    return right_nt ? w_pn : w_pp;
  };

  Eigen::VectorXd a, l, r, left_vals, right_vals;
  Eigen::RowVectorXd t;
  RowMajorMatrix outer;
  for (int w = n; w >= 2; --w) {
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      if (mask && !mask->allowed(i, j)) continue;
      const auto out_row = chart.outside_nt.row(chart.span_id(i, j));
      const double so = out_row.maxCoeff();
      if (so == kNegInf || chart.inside(i, j).maxCoeff() == kNegInf) continue;
      a = (out_row.array() - so).exp().transpose();
      for (int k = i + 1; k < j; ++k) {
        const bool left_nt = k - i > 1;
        const bool right_nt = j - k > 1;
        const auto left = child_row(chart.inside_nt, chart.inside_pt, n, i, k);
        const auto right = child_row(chart.inside_nt, chart.inside_pt, n, k, j);
        const double sl = left.maxCoeff();
        const double sr = right.maxCoeff();
        if (sl == kNegInf || sr == kNegInf) continue;
        l = (left.array() - sl).exp().transpose();
        r = (right.array() - sr).exp().transpose();
        const auto& prob = view.prob(left_nt, right_nt);
        t.noalias() = a.transpose() * prob;
        const Eigen::Map<const RowMajorMatrix> tm(t.data(), l.size(), r.size());
        left_vals.noalias() = tm * r;
        right_vals.noalias() = tm.transpose() * l;

        auto out_left = child_row(chart.outside_nt, chart.outside_pt, n, i, k);
        auto out_right = child_row(chart.outside_nt, chart.outside_pt, n, k, j);
        for (Eigen::Index b = 0; b < l.size(); ++b)
          out_left(b) = log_add(out_left(b), so + sr + std::log(left_vals(b)));
        for (Eigen::Index c = 0; c < r.size(); ++c)
          out_right(c) = log_add(out_right(c), so + sl + std::log(right_vals(c)));

        outer.noalias() = l * r.transpose();
        const Eigen::Map<const Eigen::RowVectorXd> flat(outer.data(), outer.size());
        weights(left_nt, right_nt).noalias() += std::exp(so + sl + sr - log_z) * (a * flat);
      }
    }
  }

  RuleCounts counts = RuleCounts::zeros(g.symbols, g.vocab.size());
  counts.log_likelihood = log_z;
  counts.root = (g.root + chart.inside(0, n).transpose() - Eigen::VectorXd::Constant(nt, log_z))
                    .array()
                    .exp()
                    .matrix();
  const int m = g.symbols.num_children();
  auto scatter = [&](bool left_nt, bool right_nt) {
    const Eigen::MatrixXd block = weights(left_nt, right_nt).cwiseProduct(view.prob(left_nt, right_nt));
    const int left_off = left_nt ? 0 : nt;
    const int right_off = right_nt ? 0 : nt;
    const int right_size = right_nt ? nt : pt;
    for (Eigen::Index col = 0; col < block.cols(); ++col) {
      const int b = int(col) / right_size;
      const int c = int(col) % right_size;
      counts.binary.col((left_off + b) * m + right_off + c) = block.col(col);
    }
  };
  scatter(true, true);
  scatter(true, false);
  scatter(false, true);
  scatter(false, false);
  for (int i = 0; i < n; ++i) {
    counts.unary.col(sentence[std::size_t(i)]) +=
        (chart.outside_pt.row(i) + chart.inside_pt.row(i)).array().unaryExpr([&](double v) {
          return std::exp(v - log_z);
        }).matrix().transpose();
  }
  if (chart_out) *chart_out = std::move(chart);
  return counts;
}

RuleCounts expected_rule_counts(const Grammar& g, std::span<const int> sentence, const SpanMask& mask) {
  return inside_outside(ChartGrammar(g), sentence, &mask);
}

RuleCounts expected_rule_counts(const Grammar& g, std::span<const int> sentence) {
  return inside_outside(ChartGrammar(g), sentence, nullptr);
}

Eigen::MatrixXd span_posteriors(const Chart& chart) {
  if (chart.outside_nt.size() == 0) throw std::logic_error("span_posteriors needs an outside pass");
  const int n = chart.length;
  Eigen::MatrixXd post = Eigen::MatrixXd::Zero(n + 1, n + 1);
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int id = chart.span_id(i, i + w);
      const double lp = log_sum_exp((chart.inside_nt.row(id) + chart.outside_nt.row(id)).eval());
      post(i, i + w) = lp == kNegInf ? 0.0 : std::exp(lp - chart.log_likelihood);
    }
  }
  return post;
}

Eigen::MatrixXd span_posteriors(const Grammar& g, std::span<const int> sentence) {
  Chart chart;
  inside_outside(ChartGrammar(g), sentence, nullptr, &chart);
  return span_posteriors(chart);
}

ParseTree mbr_decode(const Eigen::MatrixXd& posteriors, std::span<const int> sentence) {
  const int n = static_cast<int>(sentence.size());
  if (n < 2) throw UnsupportedLengthError("MBR decoding needs at least 2 words");
  if (posteriors.rows() != n + 1 || posteriors.cols() != n + 1)
    throw std::invalid_argument("posterior matrix does not match sentence length");
  Eigen::MatrixXd best = Eigen::MatrixXd::Zero(n + 1, n + 1);
  Eigen::MatrixXi split = Eigen::MatrixXi::Constant(n + 1, n + 1, -1);
  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      double best_sum = -1.0;
      for (int k = i + 1; k < j; ++k) {
        const double s = best(i, k) + best(k, j);
        if (s > best_sum) {
          best_sum = s;
          split(i, j) = k;
        }
      }
      best(i, j) = posteriors(i, j) + best_sum;
    }
  }
  ParseTree tree;
  std::function<int(int, int)> build = [&](int i, int j) -> int {
    if (j - i == 1) return tree.add_leaf(i, sentence[std::size_t(i)]);
    const int k = split(i, j);
    const int left = build(i, k);
    const int right = build(k, j);
    return tree.add_internal(left, right);
  };
  tree.set_root(build(0, n));
  return tree;
}

ParseTree mbr_decode(const Grammar& g, std::span<const int> sentence) {
  return mbr_decode(span_posteriors(g, sentence), sentence);
}

ViterbiResult viterbi_decode(const Grammar& g, std::span<const int> sentence) {
  check_sentence(g, sentence);
  const ChartGrammar cg(g);
  const ChartView view{cg};
  const int n = static_cast<int>(sentence.size());
  const int nt = cg.num_nt;
  const int pt = cg.num_pt;

  Eigen::MatrixXd score_nt = Eigen::MatrixXd::Constant((n + 1) * (n + 1), nt, kNegInf);
  Eigen::MatrixXd score_pt(n, pt);
  for (int i = 0; i < n; ++i) score_pt.row(i) = g.unary.col(sentence[std::size_t(i)]).transpose();
  struct Back {
    int split = -1, left = -1, right = -1;  // child symbols in the combined index space
  };
  std::vector<Back> back(std::size_t((n + 1) * (n + 1) * nt));
  auto back_at = [&](int i, int j, int a) -> Back& {
    return back[std::size_t((i * (n + 1) + j) * nt + a)];
  };

  for (int w = 2; w <= n; ++w) {
    for (int i = 0; i + w <= n; ++i) {
      const int j = i + w;
      auto cell = score_nt.row(i * (n + 1) + j);
      for (int k = i + 1; k < j; ++k) {
        const bool left_nt = k - i > 1;
        const bool right_nt = j - k > 1;
        const auto left = child_row(score_nt, score_pt, n, i, k);
        const auto right = child_row(score_nt, score_pt, n, k, j);
        const auto& logp = view.logp(left_nt, right_nt);
        const int left_off = left_nt ? 0 : nt;
        const int right_off = right_nt ? 0 : nt;
        const Eigen::Index rs = right.size();
        for (int a = 0; a < nt; ++a) {
          Back& bp = back_at(i, j, a);
          for (Eigen::Index b = 0; b < left.size(); ++b) {
            if (left(b) == kNegInf) continue;
            for (Eigen::Index c = 0; c < rs; ++c) {
              const double s = logp(a, b * rs + c) + left(b) + right(c);
              if (s == kNegInf) continue;
              const int gb = left_off + int(b);
              const int gc = right_off + int(c);
              const bool better = s > cell(a) ||
                                  (s == cell(a) && (gb < bp.left || (gb == bp.left && gc < bp.right)));
              if (better) {
                cell(a) = s;
                bp = {k, gb, gc};
              }
            }
          }
        }
      }
    }
  }

  const auto top = score_nt.row(n);  // span (0, n)
  int best_root = -1;
  double best = kNegInf;
  for (int a = 0; a < nt; ++a) {
    const double s = g.root(a) + top(a);
    if (s > best) {
      best = s;
      best_root = a;
    }
  }
  if (best_root < 0) throw ZeroLikelihoodError("sentence has no derivation");

  ViterbiResult result;
  result.log_prob = best;
  ParseTree& tree = result.tree;
  std::function<int(int, int, int)> build = [&](int i, int j, int symbol) -> int {
    if (j - i == 1) return tree.add_leaf(i, sentence[std::size_t(i)], symbol - nt);
    const Back& bp = back_at(i, j, symbol);
    const int left = build(i, bp.split, bp.left);
    const int right = build(bp.split, j, bp.right);
    return tree.add_internal(left, right, symbol);
  };
  tree.set_root(build(0, n, best_root));
  return result;
}

}  // namespace npcfg
