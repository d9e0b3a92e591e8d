#pragma once

#include "npcfg/grammar.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace npcfg {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line);
  int line() const { return line_; }

 private:
  int line_;
};

/// Data problems: misaligned focus files, unreadable treebanks, vocabulary
/// mismatches.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateGeneratorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// n-ary constituency tree as read from a treebank. A leaf is a
/// preterminal: label holds its tag and word the token.
struct Constituent {
  std::string label;
  std::string word;
  std::vector<Constituent> children;

  bool is_leaf() const { return children.empty(); }
  std::vector<std::string> tokens() const;
  std::vector<std::string> tags() const;
};

/// Parses one S-expression tree, e.g. "(S (A w1) (B (A w2) (A w3)))" or the
/// PTB wrapper form "( (S ...))". Bare tokens become untagged leaves.
Constituent parse_bracketed(std::string_view text, int line = 1);

std::string to_bracketed(const Constituent& tree);

struct PreprocessOptions {
  std::set<std::string> punctuation_tags{"``", "''", ",", ".", ":", "-LRB-", "-RRB-", "-NONE-"};
};

/// Removes punctuation leaves and empty constituents and collapses unary
/// chains. Returns nullopt when fewer than 2 tokens remain.
std::optional<Constituent> preprocess(const Constituent& tree, const PreprocessOptions& options = {});

/// Spans of every constituent of width >= 2, including the whole sentence.
SpanSet constituent_spans(const Constituent& tree);

/// Drops width-1 spans and the whole-sentence span.
SpanSet nontrivial_spans(const SpanSet& spans, int length);

/// Right-binarized copy; intermediate nodes get the parent label with a
/// trailing apostrophe. Leaves carry word ids from vocab.
ParseTree right_binarize(const Constituent& tree, const Vocabulary& vocab);

/// The `cutoff` most frequent words, ties broken by first occurrence.
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& sentences, int cutoff = 10000);

/// Unlabeled F1 between two span sets that already exclude trivial spans;
/// both empty gives 1.
double sentence_f1(const SpanSet& pred, const SpanSet& gold);

enum class F1Averaging { Sentence, Micro };

/// Sentence-level mean of per-sentence F1, or micro F1 over pooled counts.
double corpus_f1(const std::vector<SpanSet>& preds, const std::vector<SpanSet>& golds,
                 F1Averaging averaging = F1Averaging::Sentence);

struct Corpus {
  std::vector<std::vector<std::string>> tokens;
  std::vector<std::vector<int>> sentences;
  std::vector<SpanSet> gold_spans;                  // nontrivial spans of the original trees
  std::vector<ParseTree> gold_trees;                // binary, for focusing; may be empty
  std::vector<std::vector<ParseTree>> focus_trees;  // K per sentence; may be empty

  std::size_t size() const { return sentences.size(); }
  bool has_gold_trees() const { return !gold_trees.empty(); }
  /// Throws DataError when parallel lists disagree or a sentence is shorter
  /// than 2 words.
  void validate() const;
};

struct TreebankStats {
  int lines = 0;
  int rejected = 0;
};

/// One tree per nonblank line, preprocessed; rejected trees are dropped.
std::vector<Constituent> read_treebank(const std::filesystem::path& path, const PreprocessOptions& options = {},
                                       TreebankStats* stats = nullptr);

Corpus make_corpus(const std::vector<Constituent>& trees, const Vocabulary& vocab);

/// Fraction of tokens that map to <unk>.
double unk_rate(const Corpus& corpus);

/// Attaches K focus trees per sentence, one file per tree source. Each file
/// holds one tree per corpus sentence, token-aligned after preprocessing.
void load_focus_trees(const std::vector<std::filesystem::path>& paths, Corpus& corpus,
                      const PreprocessOptions& options = {});

/// Ancestral sampling. Derivations longer than max_len are rejected; more
/// than 100 attempts per requested sentence raises DegenerateGeneratorError.
Corpus sample_corpus(const Grammar& generator, int count, int max_len, uint64_t seed);

/// Hand-built generator with 6 nonterminals, 12 preterminals and an
/// unambiguous lexicon of 60 words.
Grammar toy_generator();

/// Train/dev/test treebank paths plus optional focus-tree files for the
/// training split. Relative paths resolve against the manifest directory.
struct CorpusManifest {
  std::filesystem::path train, dev, test;
  std::vector<std::filesystem::path> focus_trees;

  static CorpusManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

void write_treebank(const std::filesystem::path& path, const Corpus& corpus, const Vocabulary& vocab);

}  // namespace npcfg
