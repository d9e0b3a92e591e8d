#pragma once

#include "npcfg/corpus.hpp"
#include "npcfg/inference.hpp"
#include "npcfg/parameterization.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace npcfg {

enum class Focusing { None, TreeFiles, Gold };
std::string_view to_string(Focusing f);
Focusing focusing_from_string(std::string_view text);

/// How K focus trees restrict the likelihood: one mask over the union of
/// their spans, or a sum over per-tree masked likelihoods.
enum class FocusObjective { SpanUnion, TreeMixture };
std::string_view to_string(FocusObjective f);
FocusObjective focus_objective_from_string(std::string_view text);

struct TrainConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.75;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 4;
  int max_epochs = 30;
  int patience = 5;
  Focusing focusing = Focusing::None;
  std::vector<std::filesystem::path> focus_files;
  FocusObjective focus_objective = FocusObjective::SpanUnion;
  uint64_t seed = 0;
  std::optional<double> grad_clip;
  int eval_every = 0;      // batches between extra validation passes; 0 = per epoch only
  int snapshot_every = 1;  // epochs between diagnostic snapshots; 0 = off
  int workers = 1;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;

  /// Main-text schedule: up to 30 epochs.
  static TrainConfig main_text_preset();
  /// Appendix schedule: up to 10 epochs.
  static TrainConfig appendix_preset();

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// First and second moments per learnable tensor.
struct OptimizerState {
  int64_t step = 0;
  ParameterSet m;
  ParameterSet v;

  static OptimizerState for_parameters(const ParameterSet& p);
};

/// JSON-lines records. Every record carries a monotone "step" counter
/// (optimizer steps taken so far). Wall-clock time is kept out of the log
/// so seeded runs reproduce it byte for byte.
struct RunLog {
  std::vector<nlohmann::json> records;

  void append(nlohmann::json record);
  std::string to_jsonl() const;
  static RunLog from_jsonl(const std::string& text);
  /// Validation NLL of every "epoch" record, in order.
  std::vector<double> validation_nll() const;
  std::vector<double> training_nll() const;
};

/// A training sentence with its focus masks: none (plain likelihood), one
/// union mask, or one mask per tree for the mixture objective.
struct TrainingExample {
  std::vector<int> words;
  std::vector<SpanMask> masks;
};

std::vector<TrainingExample> make_examples(const Corpus& corpus, Focusing focusing, FocusObjective objective);

struct SentenceScore {
  bool skipped = false;
  double log_likelihood = 0;
  RuleCounts counts;
};

/// Masked (or plain) log-likelihood and expected counts of one sentence;
/// skipped when no derivation survives the mask.
SentenceScore score_sentence(const ChartGrammar& cg, const TrainingExample& example);

struct BatchResult {
  double nll = 0;  // mean over the sentences that were not skipped
  int used = 0;
  int skipped = 0;
  ParamGradients grads;
};

/// One shared grammar computation, per-sentence inside-outside (optionally
/// across workers), then an ordered reduction into d(mean NLL)/d(params).
BatchResult batch_loss(const ParameterSet& p, const std::vector<const TrainingExample*>& batch, int workers = 1);
BatchResult batch_loss(const ParameterSet& p, const std::vector<TrainingExample>& batch, int workers = 1);

struct StepStatus {
  bool applied = false;
  double grad_norm = 0;
  bool clipped = false;
};

/// Bias-corrected Adam. Non-finite gradients leave p and state untouched.
StepStatus adam_step(ParameterSet& p, const ParamGradients& grads, OptimizerState& state, const TrainConfig& cfg);

struct Evaluation {
  double nll = 0;  // mean negative log-likelihood per scored sentence
  int scored = 0;
  int skipped = 0;
};

Evaluation evaluate_nll(const ParameterSet& p, const std::vector<std::vector<int>>& sentences, int workers = 1);

struct TrainResult {
  ParameterSet best;
  ParameterSet last;
  RunLog log;
  double best_validation_nll = 0;
  int best_epoch = 0;
  int epochs_run = 0;
};

/// Files written into a run directory.
struct RunFiles {
  static constexpr const char* config = "config.json";
  static constexpr const char* log = "run_log.jsonl";
  static constexpr const char* timing = "timing.jsonl";
  static constexpr const char* best = "best.ckpt";
  static constexpr const char* last = "last.ckpt";
  static constexpr const char* state = "trainer_state.ckpt";
};

struct TrainOptions {
  std::optional<std::filesystem::path> run_dir;
  bool resume = false;
  bool quiet = true;
};

/// Seeded shuffled mini-batches, validation NLL before training and after
/// every epoch, best checkpoint kept, early stop once more than `patience`
/// consecutive epochs fail to improve.
TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus, const ModelConfig& model,
                  const Vocabulary& vocab, const TrainConfig& cfg, const TrainOptions& options = {});

}  // namespace npcfg
