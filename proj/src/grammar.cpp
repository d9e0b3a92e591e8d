#include "npcfg/grammar.hpp"

#include "npcfg/numeric.hpp"

#include <cstring>
#include <functional>
#include <sstream>

namespace npcfg {

void SymbolTable::validate() const {
  if (num_nonterminals < 1) throw std::invalid_argument("number of nonterminals must be positive");
  if (num_preterminals < 1) throw std::invalid_argument("number of preterminals must be positive");
}

SymbolTable SymbolTable::with_default_ratio(int num_nonterminals) {
  return SymbolTable{num_nonterminals, 2 * num_nonterminals};
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  words_.emplace_back(kUnk);
  index_.emplace(std::string(kUnk), kUnkId);
  for (const auto& w : words) {
    if (index_.contains(w)) continue;
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.contains(std::string(word));
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Grammar Grammar::uniform(const SymbolTable& symbols, const Vocabulary& vocab) {
  symbols.validate();
  Grammar g;
  g.symbols = symbols;
  g.vocab = vocab;
  const int n = symbols.num_nonterminals;
  const int m2 = symbols.num_child_pairs();
  g.root = Eigen::VectorXd::Constant(n, -std::log(double(n)));
  g.binary = Eigen::MatrixXd::Constant(n, m2, -std::log(double(m2)));
  g.unary = Eigen::MatrixXd::Constant(symbols.num_preterminals, vocab.size(),
                                      -std::log(double(vocab.size())));
  return g;
}

namespace {

// Bitwise comparison so that -inf entries and signed zeros compare exactly.
bool bit_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

bool Grammar::operator==(const Grammar& other) const {
  return symbols == other.symbols && vocab == other.vocab &&
         bit_equal(root, other.root) && bit_equal(binary, other.binary) &&
         bit_equal(unary, other.unary);
}

std::string_view to_string(RuleFamily family) {
  switch (family) {
    case RuleFamily::Root: return "root";
    case RuleFamily::Binary: return "binary";
    case RuleFamily::Unary: return "unary";
  }
  return "?";
}

ValidationReport validate_grammar(const Grammar& g, double tolerance) {
  const auto& s = g.symbols;
  auto shape_error = [](const std::string& what, Eigen::Index r, Eigen::Index c, Eigen::Index er,
                        Eigen::Index ec) {
    std::ostringstream os;
    os << what << " has shape " << r << "x" << c << ", expected " << er << "x" << ec;
    throw GrammarShapeError(os.str());
  };
  if (s.num_nonterminals < 1 || s.num_preterminals < 1)
    throw GrammarShapeError("symbol table must have at least one nonterminal and preterminal");
  if (g.root.size() != s.num_nonterminals)
    shape_error("root", g.root.size(), 1, s.num_nonterminals, 1);
  if (g.binary.rows() != s.num_nonterminals || g.binary.cols() != s.num_child_pairs())
    shape_error("binary", g.binary.rows(), g.binary.cols(), s.num_nonterminals, s.num_child_pairs());
  if (g.unary.rows() != s.num_preterminals || g.unary.cols() != g.vocab.size())
    shape_error("unary", g.unary.rows(), g.unary.cols(), s.num_preterminals, g.vocab.size());

  ValidationReport report;
  auto check_row = [&](RuleFamily family, int parent, const auto& row) {
    const double mass = log_sum_exp(row);
    if (!(std::abs(mass) <= tolerance)) report.normalization.push_back({family, parent, mass});
    for (Eigen::Index c = 0; c < row.size(); ++c) {
      if (row(c) > 0) report.positive_entries.push_back({family, parent, int(c), row(c)});
    }
  };
  check_row(RuleFamily::Root, 0, g.root.transpose());
  for (int a = 0; a < s.num_nonterminals; ++a) check_row(RuleFamily::Binary, a, g.binary.row(a));
  for (int t = 0; t < s.num_preterminals; ++t) check_row(RuleFamily::Unary, t, g.unary.row(t));
  return report;
}

int ParseTree::add_leaf(int position, int word, int label, std::string tag) {
  Node n;
  n.label = label;
  n.start = position;
  n.end = position + 1;
  n.word = word;
  n.tag = std::move(tag);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int ParseTree::add_internal(int left, int right, int label, std::string tag) {
  const Node& l = node(left);
  const Node& r = node(right);
  if (l.end != r.start) throw std::logic_error("ParseTree: children are not adjacent");
  Node n;
  n.label = label;
  n.start = l.start;
  n.end = r.end;
  n.left = left;
  n.right = right;
  n.tag = std::move(tag);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void ParseTree::set_root(int id) {
  (void)node(id);
  root_ = id;
}

int ParseTree::length() const {
  return empty() ? 0 : node(root_).end - node(root_).start;
}

std::vector<int> ParseTree::leaves() const {
  std::vector<int> out;
  if (empty()) return out;
  std::function<void(int)> visit = [&](int id) {
    const Node& n = node(id);
    if (n.is_leaf()) {
      out.push_back(n.word);
      return;
    }
    visit(n.left);
    visit(n.right);
  };
  visit(root_);
  return out;
}

void ParseTree::check_well_formed() const {
  if (empty()) throw std::logic_error("ParseTree: no root");
  if (node(root_).start != 0) throw std::logic_error("ParseTree: root does not start at 0");
  int next = 0;
  std::function<void(int)> visit = [&](int id) {
    const Node& n = node(id);
    if (n.start >= n.end) throw std::logic_error("ParseTree: empty span");
    if (n.is_leaf()) {
      if (n.right >= 0 || n.end - n.start != 1 || n.start != next)
        throw std::logic_error("ParseTree: malformed leaf");
      ++next;
      return;
    }
    if (n.right < 0) throw std::logic_error("ParseTree: unary internal node");
    const Node& l = node(n.left);
    const Node& r = node(n.right);
    if (l.start != n.start || l.end != r.start || r.end != n.end)
      throw std::logic_error("ParseTree: child spans do not partition parent");
    visit(n.left);
    visit(n.right);
  };
  visit(root_);
  if (next != length()) throw std::logic_error("ParseTree: leaves do not cover the sentence");
}

SpanSet tree_to_spans(const ParseTree& tree, bool include_whole) {
  SpanSet spans;
  const int len = tree.length();
  for (const auto& n : tree.nodes()) {
    if (n.is_leaf() || n.end - n.start < 2) continue;
    if (!include_whole && n.start == 0 && n.end == len) continue;
    spans.insert({n.start, n.end});
  }
  return spans;
}

bool is_laminar(const SpanSet& spans) {
  for (auto a = spans.begin(); a != spans.end(); ++a) {
    for (auto b = std::next(a); b != spans.end(); ++b) {
      const bool disjoint = a->end <= b->start || b->end <= a->start;
      const bool nested = (a->start <= b->start && b->end <= a->end) ||
                          (b->start <= a->start && a->end <= b->end);
      if (!disjoint && !nested) return false;
    }
  }
  return true;
}

std::string to_bracketed(const ParseTree& tree, const TreePrintOptions& options) {
  std::ostringstream os;
  std::function<void(int)> visit = [&](int id) {
    const auto& n = tree.node(id);
    std::string label = n.tag;
    if (label.empty()) {
      if (n.is_leaf()) {
        label = n.label >= 0 ? "T-" + std::to_string(n.label) : "T";
      } else {
        label = n.label >= 0 ? "NT-" + std::to_string(n.label) : "X";
      }
    }
    os << '(' << label << ' ';
    if (n.is_leaf()) {
      if (options.tokens && n.start < int(options.tokens->size())) {
        os << (*options.tokens)[std::size_t(n.start)];
      } else if (options.vocab && n.word >= 0 && n.word < options.vocab->size()) {
        os << options.vocab->word(n.word);
      } else {
        os << n.word;
      }
    } else {
      visit(n.left);
      os << ' ';
      visit(n.right);
    }
    os << ')';
  };
  if (!tree.empty()) visit(tree.root());
  return os.str();
}

}  // namespace npcfg
