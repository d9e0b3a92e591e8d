#pragma once

#include "npcfg/checkpoint.hpp"
#include "npcfg/grammar.hpp"
#include "npcfg/numeric.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace npcfg {

enum class Mode { Baseline, Crnp };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view text);

/// Order of normalization and activation inside a collapse-relaxing block.
/// NormThenAct computes GELU(RMSNorm(W x)); ActThenNorm computes
/// RMSNorm(GELU(W x)).
enum class BlockOrder { NormThenAct, ActThenNorm };

std::string_view to_string(BlockOrder order);
BlockOrder block_order_from_string(std::string_view text);

/// One block of a parent network. Rows of every input matrix are symbols.
///
/// Residual (baseline): y = x + ReLU(W2 ReLU(W1 x + b1) + b2)
///   uses weight, bias, weight2, bias2.
/// Collapse-relaxing: y = GELU(RMSNorm(W x)) (or the ActThenNorm order)
///   uses weight, gain. There is no residual path.
struct LayerBlock {
  Eigen::MatrixXd weight;   // d x d
  Eigen::MatrixXd bias;     // 1 x d
  Eigen::MatrixXd weight2;  // d x d
  Eigen::MatrixXd bias2;    // 1 x d
  Eigen::MatrixXd gain;     // 1 x d
};

enum class MlpKind { None, Residual, Crnp };

/// A parent network. A Residual MLP starts with an input linear layer
/// (in_weight, in_bias) followed by residual blocks; a Crnp MLP is a plain
/// stack of blocks. MlpKind::None is the identity.
struct Mlp {
  MlpKind kind = MlpKind::None;
  BlockOrder order = BlockOrder::NormThenAct;
  Eigen::MatrixXd in_weight;
  Eigen::MatrixXd in_bias;
  std::vector<LayerBlock> blocks;

  int depth() const { return static_cast<int>(blocks.size()); }
};

struct ModelConfig {
  Mode mode = Mode::Crnp;
  SymbolTable symbols = SymbolTable::with_default_ratio(30);
  int embed_dim = 256;
  int depth = 2;
  BlockOrder order = BlockOrder::NormThenAct;
};

/// Learnable tensors. Embeddings of different networks are separate
/// tensors and never alias each other.
struct ParameterSet {
  Mode mode = Mode::Crnp;
  SymbolTable symbols;
  Vocabulary vocab;
  int embed_dim = 0;

  Eigen::MatrixXd root_embedding;         // 1 x d
  Eigen::MatrixXd nonterminal_embeddings; // |N| x d
  Eigen::MatrixXd preterminal_embeddings; // |P| x d
  Eigen::MatrixXd root_output;            // |N| x d
  Eigen::MatrixXd children_output;        // (|N|+|P|)^2 x d
  Eigen::MatrixXd terminal_output;        // |V| x d

  Mlp root_mlp;    // baseline f1; unused in CRNP (single linear layer)
  Mlp binary_mlp;  // CRNP binary parent network; unused in baseline
  Mlp unary_mlp;   // baseline f2 or CRNP unary parent network

  struct NamedTensor {
    std::string name;
    Eigen::MatrixXd* tensor;
  };
  struct ConstNamedTensor {
    std::string name;
    const Eigen::MatrixXd* tensor;
  };

  /// Every learnable tensor in a fixed canonical order.
  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;

  int64_t num_parameters() const;
  int depth() const;
  BlockOrder order() const;

  /// Same structure with every tensor zeroed.
  ParameterSet zeros_like() const;
};

/// Shape-congruent mirror of ParameterSet holding gradients.
using ParamGradients = ParameterSet;

/// Normal(0, 1/sqrt(d)) weights and embeddings, zero biases, unit gains.
ParameterSet init_parameters(const ModelConfig& config, const Vocabulary& vocab, uint64_t seed);

/// Checks every tensor against the declared structure; throws
/// GrammarShapeError on mismatch.
void validate_parameters(const ParameterSet& p);

Eigen::MatrixXd relu(const Eigen::MatrixXd& x);

/// Row-wise RMS normalization, each row scaled by gain (1 x d).
Eigen::MatrixXd rms_norm_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& gain,
                              double eps = kRmsNormEps);

/// Forward activations kept for the backward pass and for diagnostics.
struct MlpTrace {
  struct Block {
    Eigen::MatrixXd input;
    Eigen::MatrixXd pre1, act1, pre2, act2;  // residual blocks
    Eigen::MatrixXd pre, mid, out;           // collapse-relaxing blocks
    Eigen::MatrixXd act;                     // GELU output, either order
  };
  Eigen::MatrixXd input;
  Eigen::MatrixXd output;
  std::vector<Block> blocks;

  /// Post-activation (ReLU or GELU) values from every block, stacked.
  std::vector<Eigen::MatrixXd> activations() const;
};

MlpTrace mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& input);
/// Accumulates parameter gradients into grad and returns d(loss)/d(input).
Eigen::MatrixXd mlp_backward(const Mlp& mlp, const MlpTrace& trace, const Eigen::MatrixXd& d_output,
                             Mlp& grad);

/// Parent representation of a single embedding w (1 x d) under the given
/// network. The baseline binary network has no MLP and returns w itself.
Eigen::MatrixXd parent_representation(const Eigen::MatrixXd& w, const Mlp& mlp);

/// Forward state of compute_grammar, reused by backward and diagnostics.
struct GrammarTrace {
  Grammar grammar;
  MlpTrace root_trace, binary_trace, unary_trace;
  Eigen::MatrixXd root_repr;    // 1 x d, representation scored against root_output
  Eigen::MatrixXd binary_repr;  // |N| x d parent representations
  Eigen::MatrixXd unary_repr;   // |P| x d
  RowNormalization children;    // CRNP only
  RowNormalization terminals;   // CRNP only
};

GrammarTrace compute_grammar_traced(const ParameterSet& p);
Grammar compute_grammar(const ParameterSet& p);

/// Gradients on each log-probability table of a Grammar.
struct GrammarGradient {
  Eigen::VectorXd root;
  Eigen::MatrixXd binary;
  Eigen::MatrixXd unary;

  static GrammarGradient zeros(const SymbolTable& s, int vocab_size);
};

ParamGradients backward(const ParameterSet& p, const GrammarTrace& trace, const GrammarGradient& grad);
ParamGradients backward(const ParameterSet& p, const GrammarGradient& grad);

/// Checkpoint I/O; shares the grammar container format.
Container parameters_to_container(const ParameterSet& p);
ParameterSet parameters_from_container(const Container& c);
std::string serialize_parameters(const ParameterSet& p);
ParameterSet deserialize_parameters(const std::string& bytes);

}  // namespace npcfg
