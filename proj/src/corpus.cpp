#include "npcfg/corpus.hpp"

#include "npcfg/numeric.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <unordered_map>

namespace npcfg {

ParseError::ParseError(const std::string& what, int line)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::vector<std::string> Constituent::tokens() const {
  std::vector<std::string> out;
  std::function<void(const Constituent&)> visit = [&](const Constituent& c) {
    if (c.is_leaf()) {
      out.push_back(c.word);
      return;
    }
    for (const auto& child : c.children) visit(child);
  };
  visit(*this);
  return out;
}

std::vector<std::string> Constituent::tags() const {
  std::vector<std::string> out;
  std::function<void(const Constituent&)> visit = [&](const Constituent& c) {
    if (c.is_leaf()) {
      out.push_back(c.label);
      return;
    }
    for (const auto& child : c.children) visit(child);
  };
  visit(*this);
  return out;
}

namespace {

class SExprReader {
 public:
  SExprReader(std::string_view text, int line) : text_(text), line_(line) {}

  Constituent read_tree() {
    skip_space();
    if (!consume('(')) fail("expected '('");
    Constituent tree = read_node_body();
    skip_space();
    if (pos_ != text_.size()) fail("trailing characters after tree");
    return tree;
  }

 private:
  // Called just after '('.
  Constituent read_node_body() {
    skip_space();
    Constituent node;
    if (peek() != '(' && peek() != ')') node.label = read_atom();
    std::vector<Constituent> children;
    std::vector<std::string> bare;
    for (;;) {
      skip_space();
      if (pos_ >= text_.size()) fail("unbalanced parentheses");
      if (consume(')')) break;
      if (consume('(')) {
        children.push_back(read_node_body());
      } else {
        Constituent leaf;
        leaf.word = read_atom();
        children.push_back(std::move(leaf));
        bare.push_back(children.back().word);
      }
    }
    // "(TAG word)" is a preterminal leaf.
    if (children.size() == 1 && bare.size() == 1) {
      node.word = children.front().word;
      if (node.label.empty()) fail("leaf without a tag");
      return node;
    }
    if (children.empty()) fail("empty constituent");
    node.children = std::move(children);
    return node;
  }

  std::string read_atom() {
    const std::size_t begin = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '(' &&
           text_[pos_] != ')')
      ++pos_;
    if (pos_ == begin) fail("expected a label or token");
    return std::string(text_.substr(begin, pos_ - begin));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  bool consume(char c) {
    if (peek() != c) return false;
    ++pos_;
    return true;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(what + " at column " + std::to_string(pos_ + 1), line_);
  }

  std::string_view text_;
  int line_;
  std::size_t pos_ = 0;
};

}  // namespace

Constituent parse_bracketed(std::string_view text, int line) {
  Constituent tree = SExprReader(text, line).read_tree();
  // PTB wraps each tree in an unlabeled root: "( (S ...))".
  while (tree.label.empty() && tree.children.size() == 1 && !tree.children.front().is_leaf()) {
    Constituent inner = std::move(tree.children.front());
    tree = std::move(inner);
  }
  return tree;
}

std::string to_bracketed(const Constituent& tree) {
  std::ostringstream os;
  std::function<void(const Constituent&)> visit = [&](const Constituent& c) {
    os << '(' << c.label;
    if (c.is_leaf()) {
      os << ' ' << c.word;
    } else {
      for (const auto& child : c.children) {
        os << ' ';
        visit(child);
      }
    }
    os << ')';
  };
  visit(tree);
  return os.str();
}

std::optional<Constituent> preprocess(const Constituent& tree, const PreprocessOptions& options) {
  std::function<std::optional<Constituent>(const Constituent&)> clean =
      [&](const Constituent& c) -> std::optional<Constituent> {
    if (c.is_leaf()) {
      if (options.punctuation_tags.contains(c.label)) return std::nullopt;
      return c;
    }
    Constituent out;
    out.label = c.label;
    for (const auto& child : c.children) {
      if (auto kept = clean(child)) out.children.push_back(std::move(*kept));
    }
    if (out.children.empty()) return std::nullopt;
    if (out.children.size() == 1) return std::move(out.children.front());
    return out;
  };
  auto cleaned = clean(tree);
  if (!cleaned || cleaned->tokens().size() < 2) return std::nullopt;
  return cleaned;
}

SpanSet constituent_spans(const Constituent& tree) {
  SpanSet spans;
  std::function<int(const Constituent&, int)> visit = [&](const Constituent& c, int start) -> int {
    if (c.is_leaf()) return start + 1;
    int end = start;
    for (const auto& child : c.children) end = visit(child, end);
    if (end - start >= 2) spans.insert({start, end});
    return end;
  };
  visit(tree, 0);
  return spans;
}

SpanSet nontrivial_spans(const SpanSet& spans, int length) {
  SpanSet out;
  for (const auto& s : spans) {
    if (s.width() >= 2 && !(s.start == 0 && s.end == length)) out.insert(s);
  }
  return out;
}

ParseTree right_binarize(const Constituent& tree, const Vocabulary& vocab) {
  ParseTree out;
  int position = 0;
  std::function<int(const Constituent&)> build = [&](const Constituent& c) -> int {
    if (c.is_leaf()) return out.add_leaf(position++, vocab.id(c.word), -1, c.label);
    std::vector<int> kids;
    for (const auto& child : c.children) kids.push_back(build(child));
    if (kids.size() == 1) return kids.front();
    int right = kids.back();
    for (std::size_t i = kids.size() - 1; i-- > 1;) right = out.add_internal(kids[i], right, -1, c.label + "'");
    return out.add_internal(kids.front(), right, -1, c.label);
  };
  out.set_root(build(tree));
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& sentences, int cutoff) {
  std::unordered_map<std::string, int> counts;
  std::vector<std::string> order;
  for (const auto& s : sentences) {
    for (const auto& w : s) {
      if (w == Vocabulary::kUnk) continue;
      auto [it, inserted] = counts.try_emplace(w, 0);
      if (inserted) order.push_back(w);
      ++it->second;
    }
  }
  // Stable sort keeps first-occurrence order among equal counts.
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) { return counts[a] > counts[b]; });
  if (cutoff >= 0 && order.size() > std::size_t(cutoff)) order.resize(std::size_t(cutoff));
  return Vocabulary(order);
}

namespace {

int count_matches(const SpanSet& pred, const SpanSet& gold) {
  int match = 0;
  for (const auto& s : pred) match += gold.contains(s) ? 1 : 0;
  return match;
}

}  // namespace

double sentence_f1(const SpanSet& pred, const SpanSet& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  const int match = count_matches(pred, gold);
  if (match == 0) return 0.0;
  const double precision = double(match) / double(pred.size());
  const double recall = double(match) / double(gold.size());
  return 2 * precision * recall / (precision + recall);
}

double corpus_f1(const std::vector<SpanSet>& preds, const std::vector<SpanSet>& golds, F1Averaging averaging) {
  if (preds.size() != golds.size()) throw std::invalid_argument("corpus_f1: prediction and gold counts differ");
  if (preds.empty()) throw std::invalid_argument("corpus_f1: empty corpus");
  if (averaging == F1Averaging::Sentence) {
    double total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) total += sentence_f1(preds[i], golds[i]);
    return total / double(preds.size());
  }
  long match = 0, npred = 0, ngold = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    match += count_matches(preds[i], golds[i]);
    npred += long(preds[i].size());
    ngold += long(golds[i].size());
  }
  if (npred == 0 && ngold == 0) return 1.0;
  if (match == 0) return 0.0;
  const double precision = double(match) / double(npred);
  const double recall = double(match) / double(ngold);
  return 2 * precision * recall / (precision + recall);
}

void Corpus::validate() const {
  const std::size_t n = sentences.size();
  if (tokens.size() != n || gold_spans.size() != n) throw DataError("corpus lists have different lengths");
  if (!gold_trees.empty() && gold_trees.size() != n) throw DataError("gold tree count differs from sentence count");
  if (!focus_trees.empty() && focus_trees.size() != n) throw DataError("focus tree count differs from sentence count");
  for (std::size_t i = 0; i < n; ++i) {
    if (sentences[i].size() < 2)
      throw DataError("sentence " + std::to_string(i) + " has fewer than 2 words");
  }
}

std::vector<Constituent> read_treebank(const std::filesystem::path& path, const PreprocessOptions& options,
                                       TreebankStats* stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open treebank " + path.string());
  std::vector<Constituent> trees;
  TreebankStats local;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++local.lines;
    auto cleaned = preprocess(parse_bracketed(line, line_no), options);
    if (!cleaned) {
      ++local.rejected;
      continue;
    }
    trees.push_back(std::move(*cleaned));
  }
  if (stats) *stats = local;
  return trees;
}

Corpus make_corpus(const std::vector<Constituent>& trees, const Vocabulary& vocab) {
  Corpus corpus;
  for (const auto& t : trees) {
    auto toks = t.tokens();
    const int len = static_cast<int>(toks.size());
    corpus.sentences.push_back(vocab.encode(toks));
    corpus.tokens.push_back(std::move(toks));
    corpus.gold_spans.push_back(nontrivial_spans(constituent_spans(t), len));
    corpus.gold_trees.push_back(right_binarize(t, vocab));
  }
  corpus.validate();
  return corpus;
}

double unk_rate(const Corpus& corpus) {
  long total = 0, unk = 0;
  for (const auto& s : corpus.sentences) {
    total += long(s.size());
    unk += std::count(s.begin(), s.end(), Vocabulary::kUnkId);
  }
  return total == 0 ? 0.0 : double(unk) / double(total);
}

void load_focus_trees(const std::vector<std::filesystem::path>& paths, Corpus& corpus,
                      const PreprocessOptions& options) {
  std::vector<std::vector<ParseTree>> focus(corpus.size());
  for (std::size_t k = 0; k < paths.size(); ++k) {
    std::ifstream in(paths[k]);
    if (!in) throw DataError("cannot open focus tree file " + std::to_string(k) + " (" + paths[k].string() + ")");
    std::string line;
    std::size_t s = 0;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (s >= corpus.size())
        throw DataError("focus tree file " + std::to_string(k) + " has more trees than the corpus has sentences");
      auto tree = preprocess(parse_bracketed(line, line_no), options);
      if (!tree || tree->tokens() != corpus.tokens[s])
        throw DataError("focus tree token mismatch at sentence " + std::to_string(s) + " in file " +
                        std::to_string(k) + " (" + paths[k].string() + ")");
      // Word ids are irrelevant for masks; reuse the corpus encoding.
      ParseTree binary = right_binarize(*tree, Vocabulary());
      focus[s].push_back(std::move(binary));
      ++s;
    }
    if (s != corpus.size())
      throw DataError("focus tree file " + std::to_string(k) + " ends at sentence " + std::to_string(s) +
                      " but the corpus has " + std::to_string(corpus.size()));
  }
  corpus.focus_trees = std::move(focus);
}

Corpus sample_corpus(const Grammar& g, int count, int max_len, uint64_t seed) {
  if (count < 0) throw std::invalid_argument("sample count must be nonnegative");
  if (max_len < 2) throw std::invalid_argument("max_len must be at least 2");
  const int nt = g.symbols.num_nonterminals;
  auto make_dist = [](const auto& logp) {
    std::vector<double> w(std::size_t(logp.size()));
    for (Eigen::Index i = 0; i < logp.size(); ++i) w[std::size_t(i)] = std::exp(logp(i));
    return std::discrete_distribution<int>(w.begin(), w.end());
  };
  auto root_dist = make_dist(g.root);
  std::vector<std::discrete_distribution<int>> binary_dist, unary_dist;
  for (int a = 0; a < nt; ++a) binary_dist.push_back(make_dist(g.binary.row(a)));
  for (int t = 0; t < g.symbols.num_preterminals; ++t) unary_dist.push_back(make_dist(g.unary.row(t)));

  std::mt19937_64 rng(seed);
  Corpus corpus;
  const long max_attempts = 100L * std::max(count, 1);
  long attempts = 0;
  struct TooLong {};
  while (int(corpus.size()) < count) {
    if (++attempts > max_attempts)
      throw DegenerateGeneratorError("generator rejected more than 99% of samples (max_len " +
                                     std::to_string(max_len) + ")");
    ParseTree tree;
    int position = 0, internal = 0;
    std::function<int(int)> expand = [&](int symbol) -> int {
      // A tree over at most max_len words has at most max_len - 1 internal nodes.
      if (g.symbols.is_nonterminal(symbol) && ++internal >= max_len) throw TooLong{};
      if (!g.symbols.is_nonterminal(symbol)) {
        if (position >= max_len) throw TooLong{};
        const int t = symbol - nt;
        return tree.add_leaf(position++, unary_dist[std::size_t(t)](rng), t);
      }
      const int pair = binary_dist[std::size_t(symbol)](rng);
      const int left = expand(pair / g.symbols.num_children());
      const int right = expand(pair % g.symbols.num_children());
      return tree.add_internal(left, right, symbol);
    };
    try {
      tree.set_root(expand(root_dist(rng)));
    } catch (const TooLong&) {
      continue;
    }
    auto words = tree.leaves();
    std::vector<std::string> toks;
    for (int w : words) toks.push_back(g.vocab.word(w));
    corpus.gold_spans.push_back(tree_to_spans(tree, false));
    corpus.sentences.push_back(std::move(words));
    corpus.tokens.push_back(std::move(toks));
    corpus.gold_trees.push_back(std::move(tree));
  }
  return corpus;
}

Grammar toy_generator() {
  // Nonterminals: S NP VP NBAR PP SBAR. Preterminals: Det N V Adj Prep Adv
  // Comp Vthat Pron Aux Conj Name.
  enum { S, NP, VP, NBAR, PP, SBAR };
  enum { Det = 6, N, V, Adj, Prep, Adv, Comp, Vthat, Pron, Aux, Conj, Name };
  const std::vector<std::vector<std::string>> lexicon = {
      {"the", "a", "every", "this", "some"},
      {"dog", "cat", "bird", "child", "river"},
      {"sees", "likes", "finds", "chases", "follows"},
      {"big", "small", "red", "old", "quiet"},
      {"near", "under", "with", "behind", "above"},
      {"quickly", "slowly", "often", "rarely", "again"},
      {"that", "whether", "because", "if", "while"},
      {"thinks", "says", "knows", "hopes", "believes"},
      {"she", "he", "they", "we", "it"},
      {"will", "can", "must", "should", "may"},
      {"and", "or", "but", "yet", "so"},
      {"alice", "bob", "carol", "dave", "erin"},
  };
  std::vector<std::string> words;
  for (const auto& group : lexicon) words.insert(words.end(), group.begin(), group.end());

  Grammar g;
  g.symbols = SymbolTable{6, 12};
  g.vocab = Vocabulary(words);
  const int m = g.symbols.num_children();
  g.root = Eigen::VectorXd::Constant(6, kLogZero<double>);
  g.root(S) = 0.0;
  g.binary = Eigen::MatrixXd::Constant(6, m * m, kLogZero<double>);
  auto rule = [&](int a, int b, int c, double p) { g.binary(a, b * m + c) = std::log(p); };
  rule(S, NP, VP, 0.5);
  rule(S, Pron, VP, 0.25);
  rule(S, Name, VP, 0.15);
  rule(S, Conj, S, 0.1);
  rule(NP, Det, N, 0.55);
  rule(NP, Det, NBAR, 0.25);
  rule(NP, NP, PP, 0.2);
  rule(VP, V, NP, 0.35);
  rule(VP, V, Pron, 0.1);
  rule(VP, V, Name, 0.1);
  rule(VP, VP, PP, 0.15);
  rule(VP, Vthat, SBAR, 0.1);
  rule(VP, Aux, VP, 0.1);
  rule(VP, V, Adv, 0.1);
  rule(NBAR, Adj, N, 0.7);
  rule(NBAR, Adj, NBAR, 0.3);
  rule(PP, Prep, NP, 0.7);
  rule(PP, Prep, Name, 0.3);
  rule(SBAR, Comp, S, 1.0);
  g.unary = Eigen::MatrixXd::Constant(12, g.vocab.size(), kLogZero<double>);
  for (int t = 0; t < 12; ++t) {
    for (const auto& w : lexicon[std::size_t(t)]) g.unary(t, g.vocab.id(w)) = std::log(0.2);
  }
  return g;
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  CorpusManifest m;
  try {
    m.train = resolve(j.at("train").get<std::string>());
    m.dev = resolve(j.at("dev").get<std::string>());
    if (j.contains("test")) m.test = resolve(j.at("test").get<std::string>());
    for (const auto& f : j.value("focus_trees", nlohmann::json::array())) m.focus_trees.push_back(resolve(f));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void CorpusManifest::save(const std::filesystem::path& path) const {
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return p.empty() ? std::string() : std::filesystem::proximate(p, base.empty() ? "." : base).generic_string();
  };
  nlohmann::json j;
  j["train"] = rel(train);
  j["dev"] = rel(dev);
  j["test"] = rel(test);
  j["focus_trees"] = nlohmann::json::array();
  for (const auto& f : focus_trees) j["focus_trees"].push_back(rel(f));
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

void write_treebank(const std::filesystem::path& path, const Corpus& corpus, const Vocabulary& vocab) {
  if (!corpus.has_gold_trees()) throw DataError("corpus has no trees to write");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write treebank " + path.string());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    TreePrintOptions opts{&vocab, &corpus.tokens[i]};
    out << to_bracketed(corpus.gold_trees[i], opts) << '\n';
  }
}

}  // namespace npcfg
