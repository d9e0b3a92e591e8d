#include "npcfg/cli.hpp"

#include "npcfg/checkpoint.hpp"
#include "npcfg/corpus.hpp"
#include "npcfg/diagnostics.hpp"
#include "npcfg/inference.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace npcfg {

namespace {

const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys{"mode", "nonterminals", "preterminals", "embed_dim", "depth",
                                             "block_order"};
  return keys;
}

const std::vector<std::string>& run_keys() {
  static const std::vector<std::string> keys{"manifest", "output_dir", "seeds", "vocab_cutoff"};
  return keys;
}

bool contains(const std::vector<std::string>& keys, const std::string& k) {
  return std::find(keys.begin(), keys.end(), k) != keys.end();
}

template <typename T>
T get_as(const nlohmann::json& values, const std::string& key) {
  try {
    return values.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::json ExperimentConfig::defaults() {
  nlohmann::json j = TrainConfig{}.to_json();
  j.erase("seed");
  j["workers"] = std::max(1, int(std::thread::hardware_concurrency()));
  j["mode"] = "crnp";
  j["nonterminals"] = 30;
  j["preterminals"] = nullptr;  // twice the nonterminals
  j["embed_dim"] = 256;
  j["depth"] = 2;
  j["block_order"] = "norm_then_act";
  j["manifest"] = nullptr;
  j["output_dir"] = "runs";
  j["seeds"] = {0};
  j["vocab_cutoff"] = 10000;
  return j;
}

ModelConfig ExperimentConfig::model() const {
  ModelConfig m;
  try {
    m.mode = mode_from_string(get_as<std::string>(values, "mode"));
    m.order = block_order_from_string(get_as<std::string>(values, "block_order"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  m.symbols.num_nonterminals = get_as<int>(values, "nonterminals");
  m.symbols.num_preterminals =
      values.at("preterminals").is_null() ? 2 * m.symbols.num_nonterminals : get_as<int>(values, "preterminals");
  m.embed_dim = get_as<int>(values, "embed_dim");
  m.depth = get_as<int>(values, "depth");
  return m;
}

TrainConfig ExperimentConfig::train() const {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [k, v] : values.items()) {
    if (!contains(model_keys(), k) && !contains(run_keys(), k)) t[k] = v;
  }
  try {
    return TrainConfig::from_json(t);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<uint64_t> ExperimentConfig::seeds() const {
  const auto& s = values.at("seeds");
  if (s.is_number_integer()) return {s.get<uint64_t>()};
  return get_as<std::vector<uint64_t>>(values, "seeds");
}

std::filesystem::path ExperimentConfig::output_dir() const { return get_as<std::string>(values, "output_dir"); }

std::optional<std::filesystem::path> ExperimentConfig::manifest() const {
  if (values.at("manifest").is_null()) return std::nullopt;
  return std::filesystem::path(get_as<std::string>(values, "manifest"));
}

int ExperimentConfig::vocab_cutoff() const { return get_as<int>(values, "vocab_cutoff"); }

void ExperimentConfig::validate() const {
  const ModelConfig m = model();
  if (m.symbols.num_nonterminals < 1) throw ConfigError("nonterminals must be positive");
  if (m.symbols.num_preterminals < 1) throw ConfigError("preterminals must be positive");
  if (m.embed_dim < 1) throw ConfigError("embed_dim must be positive");
  if (m.depth < 1) throw ConfigError("depth must be at least 1");
  const TrainConfig t = train();
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (seeds().empty()) throw ConfigError("seeds must list at least one seed");
  if (vocab_cutoff() < 1) throw ConfigError("vocab_cutoff must be positive");
  (void)output_dir();
  (void)manifest();
}

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

nlohmann::json parse_override_value(const std::string& text) {
  if (text.find(',') != std::string::npos && text.front() != '[' && text.front() != '{') {
    nlohmann::json list = nlohmann::json::array();
    std::istringstream in(text);
    std::string item;
    bool numeric = true;
    while (std::getline(in, item, ',')) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(item, &used);
        if (used != item.size()) numeric = false;
        list.push_back(v);
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (numeric) return list;
    return text;
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& file,
                                        const std::vector<std::string>& overrides, const EnvLookup& env) {
  ExperimentConfig c;
  c.values = ExperimentConfig::defaults();
  auto assign = [&](const std::string& key, nlohmann::json value, const std::string& source) {
    if (!c.values.contains(key)) throw ConfigError("unknown config key '" + key + "' from " + source);
    c.values[key] = std::move(value);
  };
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [k, v] : j.items()) assign(k, v, file->string());
  }
  const nlohmann::json keys = ExperimentConfig::defaults();
  for (const auto& [k, v] : keys.items()) {
    std::string name = "NPCFG_";
    for (char ch : k) name += char(std::toupper(static_cast<unsigned char>(ch)));
    if (auto value = env(name)) assign(k, parse_override_value(*value), name);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    assign(o.substr(0, eq), parse_override_value(o.substr(eq + 1)), "--set");
  }
  c.validate();
  return c;
}

int report_error(std::exception_ptr error, std::ostream& err) {
  try {
    std::rethrow_exception(error);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const UnsupportedLengthError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DegenerateGeneratorError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ZeroLikelihoodError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

namespace {

struct LoadedModel {
  Grammar grammar;
  std::optional<ParameterSet> parameters;
};

LoadedModel load_model(const std::filesystem::path& path) {
  const Container c = deserialize_container(read_file(path));
  const std::string kind = c.header.value("kind", "");
  if (kind == "grammar") return {grammar_from_container(c), std::nullopt};
  if (kind == "parameters") {
    ParameterSet p = parameters_from_container(c);
    Grammar g = compute_grammar(p);
    return {std::move(g), std::move(p)};
  }
  throw CheckpointError(CheckpointError::Kind::WrongKind,
                        path.string() + " holds neither a grammar nor parameters (kind '" + kind + "')");
}

ParseTree right_branching(std::span<const int> sentence) {
  ParseTree t;
  const int n = static_cast<int>(sentence.size());
  int right = t.add_leaf(n - 1, sentence[std::size_t(n - 1)]);
  for (int i = n - 2; i >= 0; --i) right = t.add_internal(t.add_leaf(i, sentence[std::size_t(i)]), right);
  t.set_root(right);
  return t;
}

enum class Decoder { Mbr, Viterbi };

std::string_view decoder_name(Decoder d) { return d == Decoder::Mbr ? "mbr" : "viterbi"; }

std::vector<Decoder> parse_decoders(const std::string& text) {
  if (text == "mbr") return {Decoder::Mbr};
  if (text == "viterbi") return {Decoder::Viterbi};
  if (text == "both") return {Decoder::Mbr, Decoder::Viterbi};
  throw ConfigError("decoder must be mbr, viterbi or both");
}

struct Decoded {
  ParseTree tree;
  bool fallback = false;
};

// Sentences with no derivation fall back to a right-branching tree.
Decoded decode(const Grammar& g, std::span<const int> sentence, Decoder d) {
  try {
    if (d == Decoder::Mbr) return {mbr_decode(g, sentence), false};
    return {viterbi_decode(g, sentence).tree, false};
  } catch (const ZeroLikelihoodError&) {
    return {right_branching(sentence), true};
  }
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::filesystem::path split_path(const CorpusManifest& m, const std::string& split) {
  if (split == "train") return m.train;
  if (split == "dev") return m.dev;
  if (split == "test") {
    if (m.test.empty()) throw DataError("manifest has no test split");
    return m.test;
  }
  throw ConfigError("split must be train, dev or test");
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_train(const std::optional<std::filesystem::path>& config_file, const std::vector<std::string>& overrides,
              bool verbose, std::ostream& out) {
  const ExperimentConfig cfg = load_experiment_config(config_file, overrides);
  const ModelConfig model = cfg.model();
  TrainConfig tc = cfg.train();
  const auto manifest_path = cfg.manifest();
  if (!manifest_path) throw ConfigError("train needs a corpus manifest (config key 'manifest')");
  const CorpusManifest manifest = CorpusManifest::load(*manifest_path);

  const auto train_trees = read_treebank(manifest.train);
  std::vector<std::vector<std::string>> train_tokens;
  for (const auto& t : train_trees) train_tokens.push_back(t.tokens());
  const Vocabulary vocab = build_vocabulary(train_tokens, cfg.vocab_cutoff());
  Corpus train_corpus = make_corpus(train_trees, vocab);
  const Corpus dev_corpus = make_corpus(read_treebank(manifest.dev), vocab);
  if (tc.focusing == Focusing::TreeFiles) {
    if (tc.focus_files.empty()) tc.focus_files = manifest.focus_trees;
    if (tc.focus_files.empty()) throw ConfigError("tree_files focusing needs focus_files or manifest focus_trees");
    load_focus_trees(tc.focus_files, train_corpus);
  }

  const auto root = cfg.output_dir();
  std::filesystem::create_directories(root);
  write_json(root / "experiment.json", cfg.values);
  for (uint64_t seed : cfg.seeds()) {
    const auto dir = root / ("seed-" + std::to_string(seed));
    std::filesystem::create_directories(dir);
    nlohmann::json snapshot = cfg.values;
    snapshot["seeds"] = {seed};
    write_json(dir / "experiment.json", snapshot);
    tc.seed = seed;
    TrainOptions opts;
    opts.run_dir = dir;
    opts.quiet = !verbose;
    const TrainResult r = train(train_corpus, dev_corpus, model, vocab, tc, opts);
    write_report(dir / "diagnostics", diagnose(r.best));
    out << nlohmann::json{{"run_dir", dir.generic_string()},
                          {"seed", seed},
                          {"best_epoch", r.best_epoch},
                          {"epochs_run", r.epochs_run},
                          {"best_validation_nll", r.best_validation_nll}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

int cmd_eval(const std::vector<std::string>& checkpoints, const std::filesystem::path& manifest_path,
             const std::string& split, const std::string& decoder_text, const std::string& averaging_text,
             const std::filesystem::path& csv_path, double max_unk, std::ostream& out) {
  const auto decoders = parse_decoders(decoder_text);
  if (averaging_text != "sentence" && averaging_text != "micro") throw ConfigError("f1 must be sentence or micro");
  const F1Averaging averaging = averaging_text == "micro" ? F1Averaging::Micro : F1Averaging::Sentence;
  const CorpusManifest manifest = CorpusManifest::load(manifest_path);
  const auto trees = read_treebank(split_path(manifest, split));

  std::ofstream csv(csv_path);
  if (!csv) throw DataError("cannot write " + csv_path.string());
  csv << "checkpoint,decoder,sentence,length,f1,fallback,tree\n";
  nlohmann::json results = nlohmann::json::array();
  std::map<std::string, std::vector<double>> by_decoder;
  for (const auto& ckpt : checkpoints) {
    const LoadedModel m = load_model(ckpt);
    const Corpus corpus = make_corpus(trees, m.grammar.vocab);
    const double unk = unk_rate(corpus);
    if (unk > max_unk)
      throw DataError("vocabulary mismatch: " + std::to_string(unk) + " of " + split + " tokens are unknown to " + ckpt);
    for (Decoder d : decoders) {
      std::vector<SpanSet> preds;
      int fallbacks = 0;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Decoded dec = decode(m.grammar, corpus.sentences[i], d);
        fallbacks += dec.fallback;
        preds.push_back(tree_to_spans(dec.tree, false));
        csv << csv_quote(ckpt) << ',' << decoder_name(d) << ',' << i << ',' << corpus.sentences[i].size() << ','
            << sentence_f1(preds.back(), corpus.gold_spans[i]) << ',' << (dec.fallback ? 1 : 0) << ','
            << csv_quote(to_bracketed(dec.tree, {nullptr, &corpus.tokens[i]})) << '\n';
      }
      const double f1 = corpus_f1(preds, corpus.gold_spans, averaging);
      by_decoder[std::string(decoder_name(d))].push_back(f1);
      results.push_back({{"checkpoint", ckpt},
                         {"decoder", decoder_name(d)},
                         {"f1", f1},
                         {"sentences", corpus.size()},
                         {"fallbacks", fallbacks},
                         {"unk_rate", unk}});
    }
  }
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [name, v] : by_decoder) {
    double sum = 0;
    for (double x : v) sum += x;
    summary[name] = {{"mean", sum / double(v.size())}, {"max", *std::max_element(v.begin(), v.end())}};
  }
  out << nlohmann::json{{"split", split},
                        {"averaging", averaging_text},
                        {"results", results},
                        {"summary", summary},
                        {"csv", csv_path.generic_string()}}
             .dump(2)
      << '\n';
  return kExitOk;
}

int cmd_decode(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
               const std::string& decoder_text, std::ostream& out, std::ostream& err) {
  const auto decoders = parse_decoders(decoder_text);
  const LoadedModel m = load_model(checkpoint);
  std::ifstream in(input);
  if (!in) throw DataError("cannot open " + input.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream words(line);
    std::vector<std::string> tokens;
    for (std::string w; words >> w;) tokens.push_back(w);
    if (tokens.size() < 2) {
      err << "line " << line_no << ": skipped, fewer than 2 tokens\n";
      out << '\n';
      continue;
    }
    const auto ids = m.grammar.vocab.encode(tokens);
    for (Decoder d : decoders) {
      const Decoded dec = decode(m.grammar, ids, d);
      if (decoders.size() > 1) out << decoder_name(d) << '\t';
      out << to_bracketed(dec.tree, {nullptr, &tokens}) << '\n';
    }
  }
  return kExitOk;
}

int cmd_diagnose(const std::filesystem::path& checkpoint, const std::filesystem::path& output,
                 const DiagnosticsOptions& options, std::ostream& out) {
  const LoadedModel m = load_model(checkpoint);
  const DiagnosticsReport r = m.parameters ? diagnose(*m.parameters, options) : diagnose_grammar(m.grammar, options);
  write_report(output, r);
  out << (output / "report.json").generic_string() << '\n';
  return kExitOk;
}

int cmd_synth(const std::filesystem::path& output, const std::optional<std::filesystem::path>& generator_path,
              int train_size, int dev_size, int test_size, int max_len, uint64_t seed, std::ostream& out) {
  if (train_size < 1 || dev_size < 1 || test_size < 0) throw ConfigError("split sizes must be positive");
  const Grammar g = generator_path ? deserialize_grammar(read_file(*generator_path)) : toy_generator();
  if (!validate_grammar(g).ok()) throw DataError("generator grammar is not normalized");
  const Corpus all = sample_corpus(g, train_size + dev_size + test_size, max_len, seed);
  auto slice = [&](int begin, int end) {
    Corpus c;
    for (int i = begin; i < end; ++i) {
      c.tokens.push_back(all.tokens[std::size_t(i)]);
      c.sentences.push_back(all.sentences[std::size_t(i)]);
      c.gold_spans.push_back(all.gold_spans[std::size_t(i)]);
      c.gold_trees.push_back(all.gold_trees[std::size_t(i)]);
    }
    return c;
  };
  std::filesystem::create_directories(output);
  write_file(output / "generator.ckpt", serialize_grammar(g));
  CorpusManifest m;
  m.train = output / "train.txt";
  m.dev = output / "dev.txt";
  write_treebank(m.train, slice(0, train_size), g.vocab);
  write_treebank(m.dev, slice(train_size, train_size + dev_size), g.vocab);
  if (test_size > 0) {
    m.test = output / "test.txt";
    write_treebank(m.test, slice(train_size + dev_size, train_size + dev_size + test_size), g.vocab);
  }
  m.save(output / "manifest.json");
  out << (output / "manifest.json").generic_string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural PCFG induction with collapse-relaxing parameterization"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "Train one run per seed from a JSON config");
  std::string config_file;
  std::vector<std::string> overrides;
  bool verbose = false;
  train_cmd->add_option("-c,--config", config_file, "JSON config file");
  train_cmd->add_option("--set", overrides, "key=value override (repeatable)");
  train_cmd->add_flag("-v,--verbose", verbose, "Print per-epoch progress");

  auto* eval_cmd = app.add_subcommand("eval", "S-F1 of checkpoints on a corpus split");
  std::vector<std::string> eval_ckpts;
  std::string manifest, split = "test", decoder = "mbr", averaging = "sentence", csv = "eval.csv";
  double max_unk = 0.5;
  eval_cmd->add_option("--checkpoint", eval_ckpts, "Checkpoint (repeatable)")->required();
  eval_cmd->add_option("--manifest", manifest, "Corpus manifest")->required();
  eval_cmd->add_option("--split", split, "train, dev or test");
  eval_cmd->add_option("--decoder", decoder, "mbr, viterbi or both");
  eval_cmd->add_option("--f1", averaging, "sentence or micro");
  eval_cmd->add_option("--csv", csv, "Per-sentence CSV output");
  eval_cmd->add_option("--max-unk-rate", max_unk, "Unknown-token rate above which the vocabulary is rejected");

  auto* decode_cmd = app.add_subcommand("decode", "Print trees for a file of tokenized sentences");
  std::string decode_ckpt, input;
  std::string decode_decoder = "mbr";
  decode_cmd->add_option("--checkpoint", decode_ckpt, "Checkpoint")->required();
  decode_cmd->add_option("--input", input, "One whitespace-tokenized sentence per line")->required();
  decode_cmd->add_option("--decoder", decode_decoder, "mbr, viterbi or both");

  auto* diag_cmd = app.add_subcommand("diagnose", "Collapse diagnostics for a checkpoint");
  std::string diag_ckpt, diag_out = "diagnostics";
  DiagnosticsOptions diag_opts;
  diag_cmd->add_option("--checkpoint", diag_ckpt, "Checkpoint")->required();
  diag_cmd->add_option("--output", diag_out, "Output directory");
  diag_cmd->add_option("--bins", diag_opts.histogram_bins, "JSD histogram bins");
  diag_cmd->add_option("--max-pairs", diag_opts.max_pairs, "Subsample at most this many pairs (0 = all)");
  diag_cmd->add_option("--pair-seed", diag_opts.pair_seed, "Seed for pair subsampling");
  diag_cmd->add_option("--overlap-mass", diag_opts.overlap_mass, "Cumulative mass for overlap ratios");

  auto* synth_cmd = app.add_subcommand("synth", "Sample a synthetic treebank from a generator grammar");
  std::string synth_out, generator;
  int train_size = 2000, dev_size = 200, test_size = 200, max_len = 12;
  uint64_t seed = 0;
  synth_cmd->add_option("--output", synth_out, "Output directory")->required();
  synth_cmd->add_option("--generator", generator, "Grammar checkpoint (default: built-in toy generator)");
  synth_cmd->add_option("--train-size", train_size);
  synth_cmd->add_option("--dev-size", dev_size);
  synth_cmd->add_option("--test-size", test_size);
  synth_cmd->add_option("--max-len", max_len);
  synth_cmd->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd)
      return cmd_train(config_file.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_file),
                       overrides, verbose, out);
    if (*eval_cmd) return cmd_eval(eval_ckpts, manifest, split, decoder, averaging, csv, max_unk, out);
    if (*decode_cmd) return cmd_decode(decode_ckpt, input, decode_decoder, out, err);
    if (*diag_cmd) return cmd_diagnose(diag_ckpt, diag_out, diag_opts, out);
    if (*synth_cmd)
      return cmd_synth(synth_out, generator.empty() ? std::nullopt : std::optional<std::filesystem::path>(generator),
                       train_size, dev_size, test_size, max_len, seed, out);
  } catch (...) {
    return report_error(std::current_exception(), err);
  }
  return kExitConfig;
}

}  // namespace npcfg
