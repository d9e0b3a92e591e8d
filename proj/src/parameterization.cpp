#include "npcfg/parameterization.hpp"

#include <random>
#include <sstream>

namespace npcfg {

std::string_view to_string(Mode mode) {
  return mode == Mode::Baseline ? "baseline" : "crnp";
}

Mode mode_from_string(std::string_view text) {
  if (text == "baseline") return Mode::Baseline;
  if (text == "crnp") return Mode::Crnp;
  throw std::invalid_argument("unknown mode '" + std::string(text) + "' (expected baseline|crnp)");
}

std::string_view to_string(BlockOrder order) {
  return order == BlockOrder::NormThenAct ? "norm_then_act" : "act_then_norm";
}

BlockOrder block_order_from_string(std::string_view text) {
  if (text == "norm_then_act") return BlockOrder::NormThenAct;
  if (text == "act_then_norm") return BlockOrder::ActThenNorm;
  throw std::invalid_argument("unknown block order '" + std::string(text) + "'");
}

namespace {

std::string_view to_string(MlpKind kind) {
  switch (kind) {
    case MlpKind::None: return "none";
    case MlpKind::Residual: return "residual";
    case MlpKind::Crnp: return "crnp";
  }
  return "none";
}

MlpKind mlp_kind_from_string(std::string_view text) {
  if (text == "none") return MlpKind::None;
  if (text == "residual") return MlpKind::Residual;
  if (text == "crnp") return MlpKind::Crnp;
  throw std::invalid_argument("unknown mlp kind '" + std::string(text) + "'");
}

Mlp make_mlp(MlpKind kind, int depth, int d, BlockOrder order) {
  Mlp m;
  m.kind = kind;
  m.order = order;
  if (kind == MlpKind::None) return m;
  if (kind == MlpKind::Residual) {
    m.in_weight = Eigen::MatrixXd::Zero(d, d);
    m.in_bias = Eigen::MatrixXd::Zero(1, d);
  }
  for (int i = 0; i < depth; ++i) {
    LayerBlock b;
    b.weight = Eigen::MatrixXd::Zero(d, d);
    if (kind == MlpKind::Residual) {
      b.bias = Eigen::MatrixXd::Zero(1, d);
      b.weight2 = Eigen::MatrixXd::Zero(d, d);
      b.bias2 = Eigen::MatrixXd::Zero(1, d);
    } else {
      b.gain = Eigen::MatrixXd::Ones(1, d);
    }
    m.blocks.push_back(std::move(b));
  }
  return m;
}

// Zero-initialized structure (unit gains) for the given configuration.
ParameterSet make_structure(Mode mode, const SymbolTable& s, const Vocabulary& vocab, int d,
                            int depth, BlockOrder order) {
  s.validate();
  if (d < 1) throw std::invalid_argument("embedding dimension must be positive");
  if (depth < 1) throw std::invalid_argument("network depth must be at least 1");
  ParameterSet p;
  p.mode = mode;
  p.symbols = s;
  p.vocab = vocab;
  p.embed_dim = d;
  p.root_embedding = Eigen::MatrixXd::Zero(1, d);
  p.nonterminal_embeddings = Eigen::MatrixXd::Zero(s.num_nonterminals, d);
  p.preterminal_embeddings = Eigen::MatrixXd::Zero(s.num_preterminals, d);
  p.root_output = Eigen::MatrixXd::Zero(s.num_nonterminals, d);
  p.children_output = Eigen::MatrixXd::Zero(s.num_child_pairs(), d);
  p.terminal_output = Eigen::MatrixXd::Zero(vocab.size(), d);
  if (mode == Mode::Baseline) {
    p.root_mlp = make_mlp(MlpKind::Residual, depth, d, order);
    p.binary_mlp = make_mlp(MlpKind::None, 0, d, order);
    p.unary_mlp = make_mlp(MlpKind::Residual, depth, d, order);
  } else {
    p.root_mlp = make_mlp(MlpKind::None, 0, d, order);
    p.binary_mlp = make_mlp(MlpKind::Crnp, depth, d, order);
    p.unary_mlp = make_mlp(MlpKind::Crnp, depth, d, order);
  }
  return p;
}

template <typename Tensor, typename MlpRef, typename Out>
void append_mlp_tensors(const std::string& prefix, MlpRef& mlp, Out& out) {
  if (mlp.kind == MlpKind::None) return;
  if (mlp.kind == MlpKind::Residual) {
    out.push_back({prefix + ".in_weight", &mlp.in_weight});
    out.push_back({prefix + ".in_bias", &mlp.in_bias});
  }
  for (std::size_t i = 0; i < mlp.blocks.size(); ++i) {
    auto& b = mlp.blocks[i];
    const std::string name = prefix + ".block" + std::to_string(i);
    out.push_back({name + ".weight", &b.weight});
    if (mlp.kind == MlpKind::Residual) {
      out.push_back({name + ".bias", &b.bias});
      out.push_back({name + ".weight2", &b.weight2});
      out.push_back({name + ".bias2", &b.bias2});
    } else {
      out.push_back({name + ".gain", &b.gain});
    }
  }
}

template <typename Tensor, typename Self, typename Out>
void collect_tensors(Self& p, Out& out) {
  out.push_back({"root_embedding", &p.root_embedding});
  out.push_back({"nonterminal_embeddings", &p.nonterminal_embeddings});
  out.push_back({"preterminal_embeddings", &p.preterminal_embeddings});
  out.push_back({"root_output", &p.root_output});
  out.push_back({"children_output", &p.children_output});
  out.push_back({"terminal_output", &p.terminal_output});
  append_mlp_tensors<Tensor>("root_mlp", p.root_mlp, out);
  append_mlp_tensors<Tensor>("binary_mlp", p.binary_mlp, out);
  append_mlp_tensors<Tensor>("unary_mlp", p.unary_mlp, out);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<ParameterSet::NamedTensor> ParameterSet::tensors() {
  std::vector<NamedTensor> out;
  collect_tensors<Eigen::MatrixXd>(*this, out);
  return out;
}

std::vector<ParameterSet::ConstNamedTensor> ParameterSet::tensors() const {
  std::vector<ConstNamedTensor> out;
  collect_tensors<const Eigen::MatrixXd>(*this, out);
  return out;
}

int64_t ParameterSet::num_parameters() const {
  int64_t n = 0;
  for (const auto& t : tensors()) n += t.tensor->size();
  return n;
}

int ParameterSet::depth() const {
  return mode == Mode::Baseline ? unary_mlp.depth() : binary_mlp.depth();
}

BlockOrder ParameterSet::order() const { return unary_mlp.order; }

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet z = *this;
  for (auto& t : z.tensors()) t.tensor->setZero();
  return z;
}

ParameterSet init_parameters(const ModelConfig& config, const Vocabulary& vocab, uint64_t seed) {
  ParameterSet p = make_structure(config.mode, config.symbols, vocab, config.embed_dim,
                                  config.depth, config.order);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(config.embed_dim)));
  for (auto& t : p.tensors()) {
    if (ends_with(t.name, "bias") || ends_with(t.name, "bias2") || ends_with(t.name, "gain"))
      continue;
    for (Eigen::Index i = 0; i < t.tensor->size(); ++i) t.tensor->data()[i] = normal(rng);
  }
  return p;
}

void validate_parameters(const ParameterSet& p) {
  const ParameterSet expected = make_structure(p.mode, p.symbols, p.vocab, p.embed_dim, p.depth(), p.order());
  const auto want = expected.tensors();
  const auto have = p.tensors();
  if (want.size() != have.size()) throw GrammarShapeError("parameter set has an unexpected tensor count");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].tensor->rows() != have[i].tensor->rows() ||
        want[i].tensor->cols() != have[i].tensor->cols()) {
      std::ostringstream os;
      os << "tensor " << have[i].name << " has shape " << have[i].tensor->rows() << "x"
         << have[i].tensor->cols() << ", expected " << want[i].tensor->rows() << "x"
         << want[i].tensor->cols();
      throw GrammarShapeError(os.str());
    }
  }
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd rms_norm_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& gain, double eps) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.row(r) = rms_norm(x.row(r).transpose(), gain.row(0).transpose(), eps).transpose();
  }
  return out;
}

namespace {

Eigen::MatrixXd linear(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  return x * w.transpose();
}

Eigen::MatrixXd linear(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

Eigen::MatrixXd gelu_rows(const Eigen::MatrixXd& x) { return gelu(x.array()).matrix(); }

Eigen::MatrixXd gelu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
  return (dy.array() * x.array().unaryExpr([](double v) { return gelu_grad(v); })).matrix();
}

Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& dy) {
  return (pre.array() > 0.0).select(dy, 0.0);
}

// Returns dx; accumulates d(gain) into dgain.
Eigen::MatrixXd rms_norm_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& gain,
                                  const Eigen::MatrixXd& dy, Eigen::MatrixXd& dgain) {
  const double d = double(x.cols());
  Eigen::MatrixXd dx(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double ms = x.row(r).squaredNorm() / d + kRmsNormEps;
    const double rms = std::sqrt(ms);
    const Eigen::RowVectorXd gdy = dy.row(r).cwiseProduct(gain.row(0));
    const double dot = gdy.dot(x.row(r));
    dx.row(r) = gdy / rms - x.row(r) * (dot / (d * ms * rms));
    dgain.row(0) += dy.row(r).cwiseProduct(x.row(r)) / rms;
  }
  return dx;
}

Eigen::RowVectorXd column_sums(const Eigen::MatrixXd& x) { return x.colwise().sum(); }

}  // namespace

std::vector<Eigen::MatrixXd> MlpTrace::activations() const {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& b : blocks) {
    if (b.act1.size() > 0) {
      out.push_back(b.act1);
      out.push_back(b.act2);
    } else if (b.act.size() > 0) {
      out.push_back(b.act);
    }
  }
  return out;
}

MlpTrace mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& input) {
  MlpTrace trace;
  trace.input = input;
  Eigen::MatrixXd h = input;
  if (mlp.kind == MlpKind::Residual) {
    h = linear(input, mlp.in_weight, mlp.in_bias);
    for (const auto& b : mlp.blocks) {
      MlpTrace::Block t;
      t.input = h;
      t.pre1 = linear(h, b.weight, b.bias);
      t.act1 = relu(t.pre1);
      t.pre2 = linear(t.act1, b.weight2, b.bias2);
      t.act2 = relu(t.pre2);
      h = h + t.act2;
      trace.blocks.push_back(std::move(t));
    }
  } else if (mlp.kind == MlpKind::Crnp) {
    for (const auto& b : mlp.blocks) {
      MlpTrace::Block t;
      t.input = h;
      t.pre = linear(h, b.weight);
      if (mlp.order == BlockOrder::NormThenAct) {
        t.mid = rms_norm_rows(t.pre, b.gain);
        t.out = gelu_rows(t.mid);
        t.act = t.out;
      } else {
        t.mid = gelu_rows(t.pre);
        t.out = rms_norm_rows(t.mid, b.gain);
        t.act = t.mid;
      }
      h = t.out;
      trace.blocks.push_back(std::move(t));
    }
  }
  trace.output = h;
  return trace;
}

Eigen::MatrixXd mlp_backward(const Mlp& mlp, const MlpTrace& trace, const Eigen::MatrixXd& d_output,
                             Mlp& grad) {
  Eigen::MatrixXd dh = d_output;
  if (mlp.kind == MlpKind::Residual) {
    for (int i = mlp.depth() - 1; i >= 0; --i) {
      const auto& b = mlp.blocks[std::size_t(i)];
      const auto& t = trace.blocks[std::size_t(i)];
      auto& g = grad.blocks[std::size_t(i)];
      const Eigen::MatrixXd dpre2 = relu_backward(t.pre2, dh);
      g.weight2 += dpre2.transpose() * t.act1;
      g.bias2.row(0) += column_sums(dpre2);
      const Eigen::MatrixXd dpre1 = relu_backward(t.pre1, dpre2 * b.weight2);
      g.weight += dpre1.transpose() * t.input;
      g.bias.row(0) += column_sums(dpre1);
      dh = dh + dpre1 * b.weight;
    }
    grad.in_weight += dh.transpose() * trace.input;
    grad.in_bias.row(0) += column_sums(dh);
    return dh * mlp.in_weight;
  }
  if (mlp.kind == MlpKind::Crnp) {
    for (int i = mlp.depth() - 1; i >= 0; --i) {
      const auto& b = mlp.blocks[std::size_t(i)];
      const auto& t = trace.blocks[std::size_t(i)];
      auto& g = grad.blocks[std::size_t(i)];
      Eigen::MatrixXd dpre;
      if (mlp.order == BlockOrder::NormThenAct) {
        const Eigen::MatrixXd dmid = gelu_backward(t.mid, dh);
        dpre = rms_norm_backward(t.pre, b.gain, dmid, g.gain);
      } else {
        const Eigen::MatrixXd dmid = rms_norm_backward(t.mid, b.gain, dh, g.gain);
        dpre = gelu_backward(t.pre, dmid);
      }
      g.weight += dpre.transpose() * t.input;
      dh = dpre * b.weight;
    }
  }
  return dh;
}

Eigen::MatrixXd parent_representation(const Eigen::MatrixXd& w, const Mlp& mlp) {
  return mlp_forward(mlp, w).output;
}

namespace {

Eigen::MatrixXd checked_logits(Eigen::MatrixXd logits, const char* network) {
  if (!all_finite(logits)) throw NumericError(std::string("non-finite logits in ") + network + " network");
  return logits;
}

}  // namespace

GrammarTrace compute_grammar_traced(const ParameterSet& p) {
  validate_parameters(p);
  GrammarTrace t;
  Grammar& g = t.grammar;
  g.symbols = p.symbols;
  g.vocab = p.vocab;

  t.root_trace = mlp_forward(p.root_mlp, p.root_embedding);
  t.root_repr = t.root_trace.output;
  g.root = log_softmax_rows(checked_logits(t.root_repr * p.root_output.transpose(), "root"))
               .row(0)
               .transpose();

  t.binary_trace = mlp_forward(p.binary_mlp, p.nonterminal_embeddings);
  t.binary_repr = t.binary_trace.output;
  t.unary_trace = mlp_forward(p.unary_mlp, p.preterminal_embeddings);
  t.unary_repr = t.unary_trace.output;

  if (p.mode == Mode::Crnp) {
    t.children = normalize_rows(p.children_output);
    t.terminals = normalize_rows(p.terminal_output);
    g.binary = log_softmax_rows(checked_logits(t.binary_repr * t.children.rows.transpose(), "binary"));
    g.unary = log_softmax_rows(checked_logits(t.unary_repr * t.terminals.rows.transpose(), "unary"));
  } else {
    g.binary = log_softmax_rows(checked_logits(t.binary_repr * p.children_output.transpose(), "binary"));
    g.unary = log_softmax_rows(checked_logits(t.unary_repr * p.terminal_output.transpose(), "unary"));
  }
  return t;
}

Grammar compute_grammar(const ParameterSet& p) { return compute_grammar_traced(p).grammar; }

GrammarGradient GrammarGradient::zeros(const SymbolTable& s, int vocab_size) {
  return {Eigen::VectorXd::Zero(s.num_nonterminals),
          Eigen::MatrixXd::Zero(s.num_nonterminals, s.num_child_pairs()),
          Eigen::MatrixXd::Zero(s.num_preterminals, vocab_size)};
}

namespace {

// Gradient of a loss through row-wise log-softmax.
Eigen::MatrixXd log_softmax_backward(const Eigen::MatrixXd& logp, const Eigen::MatrixXd& dlogp) {
  const Eigen::MatrixXd prob = logp.array().exp().matrix();
  Eigen::MatrixXd out = dlogp;
  const Eigen::VectorXd sums = dlogp.rowwise().sum();
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) -= sums(r) * prob.row(r);
  return out;
}

Eigen::MatrixXd normalize_rows_backward(const RowNormalization& n, const Eigen::MatrixXd& d_unit) {
  Eigen::MatrixXd out = d_unit;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = n.norms(r);
    if (norm <= 0) continue;
    const double along = n.rows.row(r).dot(d_unit.row(r));
    out.row(r) = (d_unit.row(r) - along * n.rows.row(r)) / norm;
  }
  return out;
}

void check_gradients(const ParamGradients& g) {
  for (const auto& t : g.tensors()) {
    if (!all_finite(*t.tensor)) throw NumericError("non-finite gradient in " + t.name);
  }
}

}  // namespace

ParamGradients backward(const ParameterSet& p, const GrammarTrace& t, const GrammarGradient& grad) {
  const Grammar& g = t.grammar;
  if (grad.root.size() != g.root.size() || grad.binary.rows() != g.binary.rows() ||
      grad.binary.cols() != g.binary.cols() || grad.unary.rows() != g.unary.rows() ||
      grad.unary.cols() != g.unary.cols())
    throw GrammarShapeError("rule gradient shape does not match the grammar");

  ParamGradients out = p.zeros_like();

  const Eigen::MatrixXd d_root_logits =
      log_softmax_backward(g.root.transpose(), grad.root.transpose());
  out.root_output += d_root_logits.transpose() * t.root_repr;
  const Eigen::MatrixXd d_root_repr = d_root_logits * p.root_output;
  out.root_embedding += mlp_backward(p.root_mlp, t.root_trace, d_root_repr, out.root_mlp);

  const Eigen::MatrixXd d_bin_logits = log_softmax_backward(g.binary, grad.binary);
  const Eigen::MatrixXd d_un_logits = log_softmax_backward(g.unary, grad.unary);

  Eigen::MatrixXd d_bin_repr, d_un_repr;
  if (p.mode == Mode::Crnp) {
    d_bin_repr = d_bin_logits * t.children.rows;
    out.children_output += normalize_rows_backward(t.children, d_bin_logits.transpose() * t.binary_repr);
    d_un_repr = d_un_logits * t.terminals.rows;
    out.terminal_output += normalize_rows_backward(t.terminals, d_un_logits.transpose() * t.unary_repr);
  } else {
    d_bin_repr = d_bin_logits * p.children_output;
    out.children_output += d_bin_logits.transpose() * t.binary_repr;
    d_un_repr = d_un_logits * p.terminal_output;
    out.terminal_output += d_un_logits.transpose() * t.unary_repr;
  }
  out.nonterminal_embeddings += mlp_backward(p.binary_mlp, t.binary_trace, d_bin_repr, out.binary_mlp);
  out.preterminal_embeddings += mlp_backward(p.unary_mlp, t.unary_trace, d_un_repr, out.unary_mlp);

  check_gradients(out);
  return out;
}

ParamGradients backward(const ParameterSet& p, const GrammarGradient& grad) {
  return backward(p, compute_grammar_traced(p), grad);
}

Container parameters_to_container(const ParameterSet& p) {
  Container c;
  c.header["kind"] = "parameters";
  c.header["mode"] = std::string(to_string(p.mode));
  c.header["symbols"] = symbols_to_json(p.symbols);
  c.header["vocab"] = p.vocab.words();
  c.header["embed_dim"] = p.embed_dim;
  c.header["depth"] = p.depth();
  c.header["block_order"] = std::string(to_string(p.order()));
  c.header["mlps"] = {{"root", std::string(to_string(p.root_mlp.kind))},
                      {"binary", std::string(to_string(p.binary_mlp.kind))},
                      {"unary", std::string(to_string(p.unary_mlp.kind))}};
  for (const auto& t : p.tensors()) c.tensors.emplace_back(t.name, *t.tensor);
  return c;
}

ParameterSet parameters_from_container(const Container& c) {
  if (c.header.value("kind", "") != "parameters")
    throw CheckpointError(CheckpointError::Kind::WrongKind, "checkpoint does not hold parameters");
  ParameterSet p;
  try {
    const auto words = c.header.at("vocab").get<std::vector<std::string>>();
    if (words.empty() || words.front() != Vocabulary::kUnk)
      throw std::invalid_argument("vocabulary lacks <unk>");
    p = make_structure(mode_from_string(c.header.at("mode").get<std::string>()),
                       symbols_from_json(c.header.at("symbols")),
                       Vocabulary(std::vector<std::string>(words.begin() + 1, words.end())),
                       c.header.at("embed_dim").get<int>(), c.header.at("depth").get<int>(),
                       block_order_from_string(c.header.value("block_order", "norm_then_act")));
    const auto& mlps = c.header.at("mlps");
    if (mlp_kind_from_string(mlps.at("root").get<std::string>()) != p.root_mlp.kind ||
        mlp_kind_from_string(mlps.at("binary").get<std::string>()) != p.binary_mlp.kind ||
        mlp_kind_from_string(mlps.at("unary").get<std::string>()) != p.unary_mlp.kind)
      throw std::invalid_argument("network layout does not match mode");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::CorruptPayload,
                          std::string("corrupt checkpoint: bad parameter header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::CorruptPayload,
                          std::string("corrupt checkpoint: ") + e.what());
  }
  for (auto& t : p.tensors()) {
    const auto& stored = c.tensor(t.name);
    if (stored.rows() != t.tensor->rows() || stored.cols() != t.tensor->cols())
      throw CheckpointError(CheckpointError::Kind::CorruptPayload,
                            "corrupt checkpoint: tensor " + t.name + " has the wrong shape");
    *t.tensor = stored;
  }
  return p;
}

std::string serialize_parameters(const ParameterSet& p) {
  return serialize_container(parameters_to_container(p));
}

ParameterSet deserialize_parameters(const std::string& bytes) {
  return parameters_from_container(deserialize_container(bytes));
}

}  // namespace npcfg
