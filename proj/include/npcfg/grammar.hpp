#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace npcfg {

/// Nonterminals occupy child indices [0, N), preterminals [N, N + P).
struct SymbolTable {
  int num_nonterminals = 1;
  int num_preterminals = 2;

  int num_children() const { return num_nonterminals + num_preterminals; }
  int num_child_pairs() const { return num_children() * num_children(); }
  bool is_nonterminal(int child) const { return child < num_nonterminals; }
  int pair_index(int left, int right) const { return left * num_children() + right; }

  /// Throws std::invalid_argument unless both counts are positive.
  void validate() const;
  /// Default configuration: twice as many preterminals as nonterminals.
  static SymbolTable with_default_ratio(int num_nonterminals);

  bool operator==(const SymbolTable&) const = default;
};

class Vocabulary {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr int kUnkId = 0;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(words_.size()); }
  /// Returns kUnkId for out-of-vocabulary words.
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Log-space rule probabilities. Binary rows are indexed by
/// SymbolTable::pair_index(left, right).
struct Grammar {
  SymbolTable symbols;
  Vocabulary vocab;
  Eigen::VectorXd root;    // |N|
  Eigen::MatrixXd binary;  // |N| x (|N|+|P|)^2
  Eigen::MatrixXd unary;   // |P| x |V|

  /// Uniform distributions everywhere.
  static Grammar uniform(const SymbolTable& symbols, const Vocabulary& vocab);

  bool operator==(const Grammar& other) const;
};

class GrammarShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class RuleFamily { Root, Binary, Unary };
std::string_view to_string(RuleFamily family);

struct NormalizationIssue {
  RuleFamily family;
  int parent;         // 0 for the root distribution
  double log_mass;    // logsumexp of the row; 0 when normalized
};

struct PositiveEntry {
  RuleFamily family;
  int parent;
  int column;
  double value;
};

struct ValidationReport {
  std::vector<NormalizationIssue> normalization;
  std::vector<PositiveEntry> positive_entries;

  bool ok() const { return normalization.empty() && positive_entries.empty(); }
};

inline constexpr double kNormalizationTolerance = 1e-6;

/// Throws GrammarShapeError on tensor shape mismatch; normalization
/// problems are reported, not thrown.
ValidationReport validate_grammar(const Grammar& g, double tolerance = kNormalizationTolerance);

struct Span {
  int start = 0;
  int end = 0;

  int width() const { return end - start; }
  auto operator<=>(const Span&) const = default;
};

using SpanSet = std::set<Span>;

/// Binary constituency tree stored as a node arena. Leaves carry a word
/// index and (optionally) a preterminal label; internal nodes carry a
/// nonterminal label or -1 when unlabeled. `tag` holds textual labels for
/// trees read from treebanks.
class ParseTree {
 public:
  struct Node {
    int label = -1;
    int start = 0;
    int end = 0;
    int left = -1;
    int right = -1;
    int word = -1;
    std::string tag;

    bool is_leaf() const { return left < 0; }
  };

  ParseTree() = default;

  int add_leaf(int position, int word, int label = -1, std::string tag = {});
  int add_internal(int left, int right, int label = -1, std::string tag = {});
  void set_root(int node);

  int root() const { return root_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<Node>& nodes() const { return nodes_; }
  int length() const;
  bool empty() const { return root_ < 0; }

  /// Word indices of the leaves, left to right.
  std::vector<int> leaves() const;
  /// Throws std::logic_error if the tree is not a well-formed binary tree
  /// whose leaves cover 0..length-1.
  void check_well_formed() const;

 private:
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Spans of internal nodes with width >= 2; the whole-sentence span is kept
/// only when include_whole is set.
SpanSet tree_to_spans(const ParseTree& tree, bool include_whole);

/// True when every pair of spans is nested or disjoint.
bool is_laminar(const SpanSet& spans);

/// Labels used when printing: nonterminals "NT-i", preterminals "T-i".
struct TreePrintOptions {
  const Vocabulary* vocab = nullptr;
  const std::vector<std::string>* tokens = nullptr;
};

/// Bracketed rendering, e.g. "(NT-0 (T-1 w) (T-2 v))".
std::string to_bracketed(const ParseTree& tree, const TreePrintOptions& options = {});

}  // namespace npcfg
