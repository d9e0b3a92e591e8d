#pragma once

#include "npcfg/grammar.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace npcfg {

// Checkpoint container layout (all integers little-endian):
//
//   offset  size  field
//   0       8     magic "NPCFGCKP"
//   8       4     uint32 format version (kCheckpointVersion)
//   12      8     uint64 header length H in bytes
//   20      H     UTF-8 JSON header
//   20+H    ...   tensors, in header order, each rows*cols IEEE-754
//                 binary64 values in row-major order
//
// The header is an object with at least
//   "kind":    "grammar" | "parameters" | "trainer_state"
//   "tensors": [{"name": str, "rows": int, "cols": int}, ...]
// plus kind-specific metadata (symbol counts, vocabulary, mode, depth).
// Readers reject files whose total size differs from 20 + H + 8 * sum(rows*cols).

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { VersionMismatch, CorruptPayload, WrongKind, Io };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Container {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

  const Eigen::MatrixXd& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

std::string serialize_container(const Container& c);
Container deserialize_container(const std::string& bytes);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

nlohmann::json symbols_to_json(const SymbolTable& s);
SymbolTable symbols_from_json(const nlohmann::json& j);

std::string serialize_grammar(const Grammar& g);
Grammar deserialize_grammar(const std::string& bytes);
Grammar grammar_from_container(const Container& c);

}  // namespace npcfg
