#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "masktune/data.hpp"
#include "masktune/trainer.hpp"

namespace masktune {

/// Invalid or unparsable configuration; the CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kOutDirEnv = "MASKTUNE_OUT_DIR";

struct DataSource {
  enum class Kind { synthetic, files };
  Kind kind = Kind::synthetic;
  SpuriousTaskSpec spec;
  bool spec_seed_explicit = false;  // otherwise derived from the root seed

  FileFormat format = FileFormat::tsv;
  RecordSchema schema;
  std::vector<std::string> label_names = kBinaryLabelNames;
  std::filesystem::path train, dev, test_indist;
  std::vector<std::pair<std::string, std::filesystem::path>> ood;
  /// Used when no dev file is given: stratified carve-out of train.
  double validation_fraction = 0.1;
};

struct OutputConfig {
  std::filesystem::path dir = "runs/default";
  bool checkpoints = true;
  bool perturbation_log = true;
};

struct RunConfig {
  DataSource data;
  TrainConfig train;
  OutputConfig output;

  nlohmann::json to_json() const;
};

/// Flat "section.key" -> raw value map.
using KeyValues = std::map<std::string, std::string>;

/// Sections in [brackets], `key = value` lines, `#` comments. Values may be
/// quoted strings, bare words, numbers, booleans or [a, b, ...] lists.
/// Throws ConfigError naming the source and line.
KeyValues parse_config_text(std::string_view text, std::string_view source = "<config>");
KeyValues read_config_file(const std::filesystem::path& path);

/// Every accepted "section.key".
const std::vector<std::string>& known_keys();

/// Resolves `key` ("section.key" or a bare key that names exactly one known
/// key) and stores the value. Throws ConfigError for unknown or ambiguous keys.
void apply_override(KeyValues& kv, std::string_view key, std::string value);

/// Defaults, then `kv`, then validation of every field.
RunConfig build_config(const KeyValues& kv);

/// Synthetic generation or file loading per the data section.
Dataset load_dataset(const DataSource& source, std::uint64_t root_seed);

/// Spec with its seed resolved against the root seed.
SpuriousTaskSpec resolved_spec(const DataSource& source, std::uint64_t root_seed);

}  // namespace masktune
