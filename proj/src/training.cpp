#include "npcfg/training.hpp"

#include "npcfg/checkpoint.hpp"
#include "npcfg/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace npcfg {

std::string_view to_string(Focusing f) {
  switch (f) {
    case Focusing::None: return "none";
    case Focusing::TreeFiles: return "tree_files";
    case Focusing::Gold: return "gold";
  }
  return "?";
}

Focusing focusing_from_string(std::string_view text) {
  if (text == "none") return Focusing::None;
  if (text == "tree_files") return Focusing::TreeFiles;
  if (text == "gold") return Focusing::Gold;
  throw std::invalid_argument("unknown focusing '" + std::string(text) + "' (none, tree_files, gold)");
}

std::string_view to_string(FocusObjective f) {
  return f == FocusObjective::SpanUnion ? "span_union" : "tree_mixture";
}

FocusObjective focus_objective_from_string(std::string_view text) {
  if (text == "span_union") return FocusObjective::SpanUnion;
  if (text == "tree_mixture") return FocusObjective::TreeMixture;
  throw std::invalid_argument("unknown focus objective '" + std::string(text) + "' (span_union, tree_mixture)");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("training config: " + what);
  };
  require(learning_rate > 0, "learning_rate must be positive");
  require(beta1 > 0 && beta1 < 1, "beta1 must lie in (0, 1)");
  require(beta2 > 0 && beta2 < 1, "beta2 must lie in (0, 1)");
  require(adam_eps > 0, "adam_eps must be positive");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(max_epochs >= 0, "max_epochs must be nonnegative");
  require(patience >= 0, "patience must be nonnegative");
  require(eval_every >= 0, "eval_every must be nonnegative");
  require(snapshot_every >= 0, "snapshot_every must be nonnegative");
  require(workers >= 1, "workers must be at least 1");
  require(!grad_clip || *grad_clip > 0, "grad_clip must be positive when set");
}

TrainConfig TrainConfig::main_text_preset() { return TrainConfig{}; }

TrainConfig TrainConfig::appendix_preset() {
  TrainConfig c;
  c.max_epochs = 10;
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["learning_rate"] = learning_rate;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["focusing"] = std::string(to_string(focusing));
  j["focus_files"] = nlohmann::json::array();
  for (const auto& f : focus_files) j["focus_files"].push_back(f.generic_string());
  j["focus_objective"] = std::string(to_string(focus_objective));
  j["seed"] = seed;
  j["grad_clip"] = grad_clip ? nlohmann::json(*grad_clip) : nlohmann::json();
  j["eval_every"] = eval_every;
  j["snapshot_every"] = snapshot_every;
  j["workers"] = workers;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "beta2") c.beta2 = value.get<double>();
    else if (key == "adam_eps") c.adam_eps = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "max_epochs") c.max_epochs = value.get<int>();
    else if (key == "patience") c.patience = value.get<int>();
    else if (key == "focusing") c.focusing = focusing_from_string(value.get<std::string>());
    else if (key == "focus_files") {
      c.focus_files.clear();
      for (const auto& f : value) c.focus_files.emplace_back(f.get<std::string>());
    } else if (key == "focus_objective") c.focus_objective = focus_objective_from_string(value.get<std::string>());
    else if (key == "seed") c.seed = value.get<uint64_t>();
    else if (key == "grad_clip") c.grad_clip = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    else if (key == "eval_every") c.eval_every = value.get<int>();
    else if (key == "snapshot_every") c.snapshot_every = value.get<int>();
    else if (key == "workers") c.workers = value.get<int>();
    else throw std::invalid_argument("training config: unknown key '" + key + "'");
  }
  return c;
}

OptimizerState OptimizerState::for_parameters(const ParameterSet& p) {
  return {0, p.zeros_like(), p.zeros_like()};
}

void RunLog::append(nlohmann::json record) { records.push_back(std::move(record)); }

std::string RunLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

RunLog RunLog::from_jsonl(const std::string& text) {
  RunLog log;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) log.records.push_back(nlohmann::json::parse(line));
  }
  return log;
}

namespace {

std::vector<double> epoch_field(const RunLog& log, const char* field) {
  std::vector<double> out;
  for (const auto& r : log.records) {
    if (r.value("event", "") != "epoch") continue;
    const auto& v = r.at(field);
    out.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  }
  return out;
}

}  // namespace

std::vector<double> RunLog::validation_nll() const { return epoch_field(*this, "val_nll"); }
std::vector<double> RunLog::training_nll() const { return epoch_field(*this, "train_nll"); }

std::vector<TrainingExample> make_examples(const Corpus& corpus, Focusing focusing, FocusObjective objective) {
  corpus.validate();
  std::vector<TrainingExample> out(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) out[i].words = corpus.sentences[i];
  if (focusing == Focusing::None) return out;

  std::vector<std::vector<ParseTree>> trees;
  if (focusing == Focusing::Gold) {
    if (!corpus.has_gold_trees()) throw DataError("gold focusing requested but the corpus has no gold trees");
    for (const auto& t : corpus.gold_trees) trees.push_back({t});
  } else {
    if (corpus.focus_trees.size() != corpus.size())
      throw DataError("focus trees are not aligned with the training corpus");
    trees = corpus.focus_trees;
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const int len = static_cast<int>(corpus.sentences[i].size());
    if (trees[i].empty()) throw DataError("sentence " + std::to_string(i) + " has no focus trees");
    for (std::size_t k = 0; k < trees[i].size(); ++k) {
      if (trees[i][k].length() != len)
        throw DataError("focus tree " + std::to_string(k) + " of sentence " + std::to_string(i) +
                        " does not match the sentence length");
    }
    if (objective == FocusObjective::SpanUnion) {
      out[i].masks.push_back(SpanMask::from_trees(trees[i]));
    } else {
      for (const auto& t : trees[i]) out[i].masks.push_back(SpanMask::from_trees(std::span(&t, 1)));
    }
  }
  return out;
}

SentenceScore score_sentence(const ChartGrammar& cg, const TrainingExample& example) {
  SentenceScore s;
  auto run = [&](const SpanMask* mask) -> std::optional<RuleCounts> {
    try {
      return inside_outside(cg, example.words, mask);
    } catch (const ZeroLikelihoodError&) {
      return std::nullopt;
    }
  };
  if (example.masks.size() <= 1) {
    auto counts = run(example.masks.empty() ? nullptr : &example.masks.front());
    if (!counts) {
      s.skipped = true;
      return s;
    }
    s.log_likelihood = counts->log_likelihood;
    s.counts = std::move(*counts);
    return s;
  }
  // Mixture: log sum_k p_k; counts weighted by each tree's posterior share.
  std::vector<RuleCounts> parts;
  for (const auto& m : example.masks) {
    if (auto c = run(&m)) parts.push_back(std::move(*c));
  }
  if (parts.empty()) {
    s.skipped = true;
    return s;
  }
  double total = kLogZero<double>;
  for (const auto& c : parts) total = log_add(total, c.log_likelihood);
  s.counts = RuleCounts::zeros(cg.grammar->symbols, cg.grammar->vocab.size());
  for (auto& c : parts) {
    c *= std::exp(c.log_likelihood - total);
    s.counts += c;
  }
  s.log_likelihood = total;
  s.counts.log_likelihood = total;
  return s;
}

namespace {

// Runs fn(i) for i in [0, n) over a fixed number of threads. Work is split
// into contiguous chunks; results must be written to caller-owned slots.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t threads = std::min<std::size_t>(std::size_t(workers), n);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t * n / threads; i < (t + 1) * n / threads; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

BatchResult batch_loss(const ParameterSet& p, const std::vector<const TrainingExample*>& batch, int workers) {
  const GrammarTrace trace = compute_grammar_traced(p);
  const ChartGrammar cg(trace.grammar);
  std::vector<SentenceScore> scores(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    if (batch[i]->words.size() < 2) throw UnsupportedLengthError("training sentences need at least 2 words");
    scores[i] = score_sentence(cg, *batch[i]);
  });

  BatchResult r;
  RuleCounts total = RuleCounts::zeros(p.symbols, p.vocab.size());
  for (const auto& s : scores) {
    if (s.skipped) {
      ++r.skipped;
      continue;
    }
    total += s.counts;
    ++r.used;
  }
  if (r.used == 0) {
    r.nll = std::numeric_limits<double>::quiet_NaN();
    r.grads = p.zeros_like();
    return r;
  }
  const double scale = -1.0 / r.used;
  r.nll = scale * total.log_likelihood;
  GrammarGradient g{scale * total.root, scale * total.binary, scale * total.unary};
  r.grads = backward(p, trace, g);
  return r;
}

BatchResult batch_loss(const ParameterSet& p, const std::vector<TrainingExample>& batch, int workers) {
  std::vector<const TrainingExample*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  return batch_loss(p, ptrs, workers);
}

StepStatus adam_step(ParameterSet& p, const ParamGradients& grads, OptimizerState& state, const TrainConfig& cfg) {
  auto params = p.tensors();
  const auto gs = grads.tensors();
  auto ms = state.m.tensors();
  auto vs = state.v.tensors();
  if (gs.size() != params.size() || ms.size() != params.size() || vs.size() != params.size())
    throw GrammarShapeError("optimizer state does not match the parameters");

  StepStatus status;
  double sq = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (gs[i].tensor->rows() != params[i].tensor->rows() || gs[i].tensor->cols() != params[i].tensor->cols())
      throw GrammarShapeError("gradient " + gs[i].name + " has the wrong shape");
    if (!all_finite(*gs[i].tensor)) return status;
    sq += gs[i].tensor->squaredNorm();
  }
  status.grad_norm = std::sqrt(sq);
  if (!std::isfinite(status.grad_norm)) return status;
  double g_scale = 1.0;
  if (cfg.grad_clip && status.grad_norm > *cfg.grad_clip) {
    g_scale = *cfg.grad_clip / status.grad_norm;
    status.clipped = true;
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = (g_scale * gs[i].tensor->array()).eval();
    auto& m = *ms[i].tensor;
    auto& v = *vs[i].tensor;
    m = (cfg.beta1 * m.array() + (1 - cfg.beta1) * g).matrix();
    v = (cfg.beta2 * v.array() + (1 - cfg.beta2) * g.square()).matrix();
    params[i].tensor->array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
  }
  status.applied = true;
  return status;
}

Evaluation evaluate_nll(const ParameterSet& p, const std::vector<std::vector<int>>& sentences, int workers) {
  const Grammar g = compute_grammar(p);
  const ChartGrammar cg(g);
  std::vector<double> ll(sentences.size());
  parallel_for(sentences.size(), workers,
               [&](std::size_t i) { ll[i] = compute_inside(cg, sentences[i]).log_likelihood; });
  Evaluation e;
  double total = 0;
  for (double v : ll) {
    if (v == kLogZero<double>) {
      ++e.skipped;
      continue;
    }
    total -= v;
    ++e.scored;
  }
  e.nll = e.scored ? total / e.scored : std::numeric_limits<double>::quiet_NaN();
  return e;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

nlohmann::json model_json(const ModelConfig& m) {
  return {{"mode", std::string(to_string(m.mode))},
          {"symbols", symbols_to_json(m.symbols)},
          {"embed_dim", m.embed_dim},
          {"depth", m.depth},
          {"block_order", std::string(to_string(m.order))}};
}

nlohmann::json snapshot_record(const ParameterSet& p) {
  const DiagnosticsReport r = diagnose(p);
  const auto j = r.to_json();
  return {{"scale_stats", j["scale_stats"]}, {"zero_ratio", j["zero_ratio"]}};
}

std::string serialize_state(const OptimizerState& s, int epoch, double best_val, int best_epoch, int bad_epochs) {
  Container c;
  c.header["kind"] = "trainer_state";
  c.header["step"] = s.step;
  c.header["epoch"] = epoch;
  c.header["best_validation_nll"] = best_val;
  c.header["best_epoch"] = best_epoch;
  c.header["bad_epochs"] = bad_epochs;
  for (const auto& t : s.m.tensors()) c.tensors.emplace_back("m." + t.name, *t.tensor);
  for (const auto& t : s.v.tensors()) c.tensors.emplace_back("v." + t.name, *t.tensor);
  return serialize_container(c);
}

struct ResumePoint {
  int epoch = 0;
  double best_val = 0;
  int best_epoch = 0;
  int bad_epochs = 0;
};

ResumePoint load_state(const std::string& bytes, OptimizerState& s) {
  const Container c = deserialize_container(bytes);
  if (c.header.value("kind", "") != "trainer_state")
    throw CheckpointError(CheckpointError::Kind::WrongKind, "checkpoint does not hold trainer state");
  ResumePoint r;
  try {
    s.step = c.header.at("step").get<int64_t>();
    r.epoch = c.header.at("epoch").get<int>();
    r.best_val = c.header.at("best_validation_nll").get<double>();
    r.best_epoch = c.header.at("best_epoch").get<int>();
    r.bad_epochs = c.header.at("bad_epochs").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::CorruptPayload, std::string("corrupt trainer state: ") + e.what());
  }
  for (auto& t : s.m.tensors()) *t.tensor = c.tensor("m." + t.name);
  for (auto& t : s.v.tensors()) *t.tensor = c.tensor("v." + t.name);
  return r;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void check_vocabulary(const Corpus& c, const Vocabulary& vocab, const char* split) {
  for (const auto& s : c.sentences) {
    for (int w : s) {
      if (w < 0 || w >= vocab.size())
        throw DataError(std::string(split) + " corpus uses word ids outside the vocabulary");
    }
  }
}

}  // namespace

TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus, const ModelConfig& model,
                  const Vocabulary& vocab, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  model.symbols.validate();
  if (train_corpus.size() == 0) throw DataError("training corpus is empty");
  if (val_corpus.size() == 0) throw DataError("validation corpus is empty");
  val_corpus.validate();
  check_vocabulary(train_corpus, vocab, "training");
  check_vocabulary(val_corpus, vocab, "validation");
  const std::vector<TrainingExample> examples = make_examples(train_corpus, cfg.focusing, cfg.focus_objective);

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  std::optional<std::filesystem::path> dir = options.run_dir;
  if (dir) std::filesystem::create_directories(*dir);

  TrainResult result;
  ParameterSet p = init_parameters(model, vocab, cfg.seed);
  OptimizerState state = OptimizerState::for_parameters(p);
  RunLog& log = result.log;
  double best_val = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  int start_epoch = 1;

  const bool resuming = options.resume && dir && std::filesystem::exists(*dir / RunFiles::state);
  if (resuming) {
    p = deserialize_parameters(read_file(*dir / RunFiles::last));
    result.best = deserialize_parameters(read_file(*dir / RunFiles::best));
    const ResumePoint rp = load_state(read_file(*dir / RunFiles::state), state);
    log = RunLog::from_jsonl(read_file(*dir / RunFiles::log));
    best_val = rp.best_val;
    result.best_epoch = rp.best_epoch;
    bad_epochs = rp.bad_epochs;
    start_epoch = rp.epoch + 1;
    result.epochs_run = rp.epoch;
  } else {
    if (dir) write_text(*dir / RunFiles::config,
                        nlohmann::json{{"model", model_json(model)}, {"train", cfg.to_json()}}.dump(2) + "\n");
    const Evaluation e0 = evaluate_nll(p, val_corpus.sentences, cfg.workers);
    log.append({{"event", "epoch"}, {"epoch", 0}, {"step", 0}, {"train_nll", nullptr},
                {"val_nll", number_or_null(e0.nll)}, {"val_skipped", e0.skipped}, {"skipped", 0},
                {"aborted_steps", 0}, {"improved", true}});
    if (cfg.snapshot_every > 0) {
      auto snap = snapshot_record(p);
      snap["event"] = "snapshot";
      snap["epoch"] = 0;
      snap["step"] = 0;
      log.append(std::move(snap));
    }
    best_val = std::isfinite(e0.nll) ? e0.nll : std::numeric_limits<double>::infinity();
    result.best = p;
    result.best_epoch = 0;
    if (dir) {
      write_file(*dir / RunFiles::best, serialize_parameters(p));
      write_file(*dir / RunFiles::last, serialize_parameters(p));
      write_text(*dir / RunFiles::log, log.to_jsonl());
      write_text(*dir / RunFiles::timing, "");
    }
  }

  for (int epoch = start_epoch; epoch <= cfg.max_epochs && bad_epochs <= cfg.patience; ++epoch) {
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{uint32_t(cfg.seed), uint32_t(cfg.seed >> 32), uint32_t(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    double nll_sum = 0;
    long used = 0, skipped = 0;
    int aborted = 0;
    for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch_size)) {
      std::vector<const TrainingExample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + std::size_t(cfg.batch_size)); ++i)
        batch.push_back(&examples[order[i]]);
      BatchResult br;
      try {
        br = batch_loss(p, batch, cfg.workers);
      } catch (const NumericError& e) {
        ++aborted;
        log.append({{"event", "aborted_step"}, {"epoch", epoch}, {"step", state.step}, {"reason", e.what()}});
        continue;
      }
      skipped += br.skipped;
      if (br.skipped > 0)
        log.append({{"event", "skipped_sentences"}, {"epoch", epoch}, {"step", state.step}, {"count", br.skipped}});
      if (br.used == 0) continue;
      const StepStatus st = adam_step(p, br.grads, state, cfg);
      if (!st.applied) {
        ++aborted;
        log.append({{"event", "aborted_step"}, {"epoch", epoch}, {"step", state.step},
                    {"reason", "non-finite gradient"}});
        continue;
      }
      nll_sum += br.nll * br.used;
      used += br.used;
      if (cfg.eval_every > 0 && state.step % cfg.eval_every == 0) {
        const Evaluation e = evaluate_nll(p, val_corpus.sentences, cfg.workers);
        log.append({{"event", "eval"}, {"epoch", epoch}, {"step", state.step}, {"val_nll", number_or_null(e.nll)}});
      }
    }

    const Evaluation e = evaluate_nll(p, val_corpus.sentences, cfg.workers);
    const bool improved = std::isfinite(e.nll) && e.nll < best_val;
    if (improved) {
      best_val = e.nll;
      bad_epochs = 0;
      result.best = p;
      result.best_epoch = epoch;
    } else {
      ++bad_epochs;
    }
    result.epochs_run = epoch;
    log.append({{"event", "epoch"}, {"epoch", epoch}, {"step", state.step},
                {"train_nll", used ? number_or_null(nll_sum / double(used)) : nlohmann::json()},
                {"val_nll", number_or_null(e.nll)}, {"val_skipped", e.skipped}, {"skipped", skipped},
                {"aborted_steps", aborted}, {"improved", improved}});
    if (cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0) {
      auto snap = snapshot_record(p);
      snap["event"] = "snapshot";
      snap["epoch"] = epoch;
      snap["step"] = state.step;
      log.append(std::move(snap));
    }
    if (bad_epochs > cfg.patience)
      log.append({{"event", "early_stop"}, {"epoch", epoch}, {"step", state.step}, {"best_epoch", result.best_epoch}});
    if (!options.quiet) {
      std::cerr << "epoch " << epoch << " train_nll " << (used ? nll_sum / double(used) : 0.0) << " val_nll " << e.nll
                << (improved ? " *" : "") << '\n';
    }
    if (dir) {
      if (improved) write_file(*dir / RunFiles::best, serialize_parameters(p));
      write_file(*dir / RunFiles::last, serialize_parameters(p));
      write_file(*dir / RunFiles::state, serialize_state(state, epoch, best_val, result.best_epoch, bad_epochs));
      write_text(*dir / RunFiles::log, log.to_jsonl());
      std::ofstream timing(*dir / RunFiles::timing, std::ios::app);
      timing << nlohmann::json{{"epoch", epoch},
                               {"seconds", std::chrono::duration<double>(Clock::now() - t0).count()}}.dump()
             << '\n';
    }
  }

  result.last = std::move(p);
  result.best_validation_nll = best_val;
  return result;
}

}  // namespace npcfg
