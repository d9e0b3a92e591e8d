#pragma once

#include "npcfg/parameterization.hpp"
#include "npcfg/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace npcfg {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitData = 2, kExitNumeric = 3 };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat key-value experiment configuration. Sources are merged in order:
/// defaults, JSON file, NPCFG_<KEY> environment variables, then --set
/// key=value overrides.
struct ExperimentConfig {
  nlohmann::json values;

  static nlohmann::json defaults();

  ModelConfig model() const;
  TrainConfig train() const;
  std::vector<uint64_t> seeds() const;
  std::filesystem::path output_dir() const;
  std::optional<std::filesystem::path> manifest() const;
  int vocab_cutoff() const;

  /// Throws ConfigError; run before any data is read.
  void validate() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& file,
                                        const std::vector<std::string>& overrides,
                                        const EnvLookup& env = process_env);

/// Parses an override value: JSON when it parses, otherwise a string;
/// comma-separated integers become a list.
nlohmann::json parse_override_value(const std::string& text);

/// Maps an exception to an exit code and writes a one-line message.
int report_error(std::exception_ptr error, std::ostream& err);

/// Entry point of the npcfg executable.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace npcfg
