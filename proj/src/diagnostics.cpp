#include "npcfg/diagnostics.hpp"

#include <fstream>
#include <random>

namespace npcfg {

std::vector<std::pair<int, int>> all_pairs(int rows) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < rows; ++i)
    for (int j = i + 1; j < rows; ++j) pairs.emplace_back(i, j);
  return pairs;
}

Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (!(hi > lo)) throw std::invalid_argument("histogram range is empty");
  Histogram h;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * double(i) / double(bins));
  h.counts.assign(std::size_t(bins), 0);
  for (double v : values) {
    int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    h.counts[std::size_t(std::clamp(b, 0, bins - 1))]++;
  }
  return h;
}

FamilyDiagnostics diagnose_family(const Eigen::MatrixXd& probs, const DiagnosticsOptions& options) {
  FamilyDiagnostics f;
  f.distributions = int(probs.rows());
  f.support = int(probs.cols());
  f.local_ppl = local_ppl(probs);
  f.global_ppl = global_ppl(probs);
  double h = 0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) h += entropy(probs.row(r));
  f.mean_entropy = h / double(probs.rows());

  f.pairs = all_pairs(f.distributions);
  if (options.max_pairs > 0 && f.pairs.size() > std::size_t(options.max_pairs)) {
    std::vector<std::pair<int, int>> sampled;
    std::mt19937_64 rng(options.pair_seed);
    std::sample(f.pairs.begin(), f.pairs.end(), std::back_inserter(sampled), options.max_pairs, rng);
    f.pairs = std::move(sampled);
  }
  for (auto [i, j] : f.pairs) {
    const double d = jsd(probs.row(i), probs.row(j));
    f.pair_jsd.push_back(d);
    f.overlap_ratios.push_back(overlap_ratio(probs.row(i), probs.row(j), options.overlap_mass));
    if (d < options.collapse_threshold) ++f.collapsed_pairs;
  }
  if (!f.pairs.empty()) f.gpj = gpj(probs, f.pairs);
  f.jsd_histogram = make_histogram(f.pair_jsd, options.histogram_bins, 0.0, kLn2);
  return f;
}

DiagnosticsReport diagnose_grammar(const Grammar& g, const DiagnosticsOptions& options) {
  DiagnosticsReport r;
  r.binary = diagnose_family(g.binary.array().exp().matrix(), options);
  r.unary = diagnose_family(g.unary.array().exp().matrix(), options);
  r.root_entropy = entropy(g.root.array().exp());
  return r;
}

std::optional<double> network_zero_ratio(const Mlp& mlp, const MlpTrace& trace) {
  if (mlp.kind == MlpKind::None) return std::nullopt;
  double zeros = 0, total = 0;
  for (const auto& a : trace.activations()) {
    zeros += zero_ratio(a) * double(a.size());
    total += double(a.size());
  }
  if (total == 0) return std::nullopt;
  return zeros / total;
}

DiagnosticsReport diagnose(const ParameterSet& p, const DiagnosticsOptions& options) {
  const GrammarTrace trace = compute_grammar_traced(p);
  DiagnosticsReport r = diagnose_grammar(trace.grammar, options);
  r.zero_ratio_root = network_zero_ratio(p.root_mlp, trace.root_trace);
  r.zero_ratio_binary = network_zero_ratio(p.binary_mlp, trace.binary_trace);
  r.zero_ratio_unary = network_zero_ratio(p.unary_mlp, trace.unary_trace);
  auto cosine = [](const Eigen::MatrixXd& u) -> std::optional<double> {
    try {
      return children_cosine_mean(u).mean;
    } catch (const std::invalid_argument&) {
      return std::nullopt;
    }
  };
  r.children_cosine_binary = cosine(p.children_output);
  r.children_cosine_unary = cosine(p.terminal_output);
  r.scale_root_parent = scale_stats(trace.root_repr);
  r.scale_binary_parent = scale_stats(trace.binary_repr);
  r.scale_unary_parent = scale_stats(trace.unary_repr);
  r.scale_children = scale_stats(p.children_output);
  r.scale_terminals = scale_stats(p.terminal_output);
  return r;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

nlohmann::json scale_json(const std::optional<ScaleStats>& s) {
  if (!s) return nullptr;
  return {{"min", s->min}, {"mean", s->mean}, {"max", s->max}};
}

nlohmann::json family_json(const FamilyDiagnostics& f) {
  nlohmann::json j;
  j["distributions"] = f.distributions;
  j["support"] = f.support;
  j["gpj"] = optional_json(f.gpj);
  j["local_ppl"] = f.local_ppl;
  j["global_ppl"] = f.global_ppl;
  j["mean_entropy"] = f.mean_entropy;
  j["pairs"] = f.pairs.size();
  j["collapsed_pairs"] = f.collapsed_pairs;
  j["jsd_histogram"] = {{"edges", f.jsd_histogram.edges}, {"counts", f.jsd_histogram.counts}};
  double overlap_mean = 0;
  for (double o : f.overlap_ratios) overlap_mean += o;
  j["overlap_ratio_mean"] = f.overlap_ratios.empty() ? nlohmann::json() : nlohmann::json(overlap_mean / double(f.overlap_ratios.size()));
  j["overlap_ratios"] = f.overlap_ratios;
  return j;
}

}  // namespace

nlohmann::json DiagnosticsReport::to_json() const {
  nlohmann::json j;
  j["gpj_binary"] = optional_json(binary.gpj);
  j["gpj_unary"] = optional_json(unary.gpj);
  j["local_ppl"] = {{"binary", binary.local_ppl}, {"unary", unary.local_ppl}};
  j["global_ppl"] = {{"binary", binary.global_ppl}, {"unary", unary.global_ppl}};
  j["mean_entropy"] = {{"root", root_entropy}, {"binary", binary.mean_entropy}, {"unary", unary.mean_entropy}};
  j["zero_ratio"] = {{"root", optional_json(zero_ratio_root)},
                     {"binary", optional_json(zero_ratio_binary)},
                     {"unary", optional_json(zero_ratio_unary)}};
  j["children_cosine_mean"] = {{"binary", optional_json(children_cosine_binary)},
                               {"unary", optional_json(children_cosine_unary)}};
  j["scale_stats"] = {{"root_parent", scale_json(scale_root_parent)},
                      {"binary_parent", scale_json(scale_binary_parent)},
                      {"unary_parent", scale_json(scale_unary_parent)},
                      {"children", scale_json(scale_children)},
                      {"terminals", scale_json(scale_terminals)}};
  j["binary"] = family_json(binary);
  j["unary"] = family_json(unary);
  return j;
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "bin,lower,upper,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    out << b << ',' << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
}

void write_pairwise_csv(const std::filesystem::path& path, const FamilyDiagnostics& f) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "i,j,jsd,overlap\n";
  for (std::size_t k = 0; k < f.pairs.size(); ++k)
    out << f.pairs[k].first << ',' << f.pairs[k].second << ',' << f.pair_jsd[k] << ',' << f.overlap_ratios[k] << '\n';
}

void write_report(const std::filesystem::path& dir, const DiagnosticsReport& report) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
    out << report.to_json().dump(2) << '\n';
  }
  write_histogram_csv(dir / "jsd_histogram_binary.csv", report.binary.jsd_histogram);
  write_histogram_csv(dir / "jsd_histogram_unary.csv", report.unary.jsd_histogram);
  write_pairwise_csv(dir / "pairwise_binary.csv", report.binary);
  write_pairwise_csv(dir / "pairwise_unary.csv", report.unary);
}

}  // namespace npcfg
