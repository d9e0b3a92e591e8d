#include "npcfg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace npcfg {

namespace {

constexpr char kMagic[8] = {'N', 'P', 'C', 'F', 'G', 'C', 'K', 'P'};
constexpr std::size_t kPreambleSize = 8 + 4 + 8;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

[[noreturn]] void corrupt(const std::string& what) {
  throw CheckpointError(CheckpointError::Kind::CorruptPayload, "corrupt checkpoint: " + what);
}

}  // namespace

const Eigen::MatrixXd& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  corrupt("missing tensor '" + name + "'");
}

bool Container::has_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

std::string serialize_container(const Container& c) {
  nlohmann::json header = c.header;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : c.tensors) {
    header["tensors"].push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  }
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : c.tensors) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index col = 0; col < t.cols(); ++col) put<double>(out, t(r, col));
    }
  }
  return out;
}

Container deserialize_container(const std::string& bytes) {
  if (bytes.size() < kPreambleSize) corrupt("truncated preamble");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) corrupt("bad magic");
  const auto version = get<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  const auto header_len = get<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kPreambleSize) corrupt("truncated header");

  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(kPreambleSize, header_len));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("header is not JSON: ") + e.what());
  }
  if (!c.header.is_object() || !c.header.contains("tensors") || !c.header["tensors"].is_array())
    corrupt("header lacks tensor table");

  std::size_t offset = kPreambleSize + header_len;
  for (const auto& entry : c.header["tensors"]) {
    std::string name;
    std::int64_t rows = 0, cols = 0;
    try {
      name = entry.at("name").get<std::string>();
      rows = entry.at("rows").get<std::int64_t>();
      cols = entry.at("cols").get<std::int64_t>();
    } catch (const nlohmann::json::exception&) {
      corrupt("malformed tensor entry");
    }
    if (rows < 0 || cols < 0) corrupt("negative tensor shape");
    const auto count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (count > (bytes.size() - offset) / sizeof(double)) corrupt("truncated tensor data");
    Eigen::MatrixXd t(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index col = 0; col < cols; ++col) {
        t(r, col) = get<double>(bytes, offset);
        offset += sizeof(double);
      }
    }
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (offset != bytes.size()) corrupt("trailing bytes after tensor data");
  c.header.erase("tensors");
  return c;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "short write to " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json symbols_to_json(const SymbolTable& s) {
  return {{"num_nonterminals", s.num_nonterminals}, {"num_preterminals", s.num_preterminals}};
}

SymbolTable symbols_from_json(const nlohmann::json& j) {
  SymbolTable s{j.at("num_nonterminals").get<int>(), j.at("num_preterminals").get<int>()};
  s.validate();
  return s;
}

std::string serialize_grammar(const Grammar& g) {
  Container c;
  c.header["kind"] = "grammar";
  c.header["symbols"] = symbols_to_json(g.symbols);
  c.header["vocab"] = g.vocab.words();
  c.tensors.emplace_back("root", g.root);
  c.tensors.emplace_back("binary", g.binary);
  c.tensors.emplace_back("unary", g.unary);
  return serialize_container(c);
}

Grammar grammar_from_container(const Container& c) {
  if (c.header.value("kind", "") != "grammar")
    throw CheckpointError(CheckpointError::Kind::WrongKind, "checkpoint does not hold a grammar");
  Grammar g;
  try {
    g.symbols = symbols_from_json(c.header.at("symbols"));
    auto words = c.header.at("vocab").get<std::vector<std::string>>();
    if (words.empty() || words.front() != Vocabulary::kUnk) corrupt("vocabulary lacks <unk>");
    g.vocab = Vocabulary(std::vector<std::string>(words.begin() + 1, words.end()));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("bad grammar header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    corrupt(e.what());
  }
  if (c.tensor("root").cols() != 1) corrupt("root tensor must be a column");
  g.root = c.tensor("root");
  g.binary = c.tensor("binary");
  g.unary = c.tensor("unary");
  try {
    validate_grammar(g, std::numeric_limits<double>::infinity());
  } catch (const GrammarShapeError& e) {
    corrupt(e.what());
  }
  return g;
}

Grammar deserialize_grammar(const std::string& bytes) {
  return grammar_from_container(deserialize_container(bytes));
}

}  // namespace npcfg
