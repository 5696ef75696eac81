#pragma once

#include "psfcycle/synthetic.hpp"
#include "psfcycle/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace psfcycle {

using Json = nlohmann::json;

/// Raised for malformed or semantically invalid configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Where training volumes come from. Entries are files or directories (all
/// .tif/.tiff files inside, sorted by name).
struct DataConfig {
  std::vector<std::string> domain_a;  // blurred
  std::vector<std::string> domain_b;  // sharp
  int patch_stride = 64;
};

struct InferConfig {
  int tile = 64;
  int overlap = 16;
};

struct EvalConfig {
  double peak = 1.0;
  double clahe_clip = 2.0;
  int clahe_tiles = 8;
};

/// One file describing a whole experiment; each command reads its sections.
struct RunConfig {
  std::optional<SyntheticSpec> synthetic;
  std::optional<TrainConfig> train;
  std::optional<DataConfig> data;
  InferConfig infer;
  EvalConfig eval;
};

Json to_json(const PhantomSpec& s);
Json to_json(const SyntheticSpec& s);
Json to_json(const TrainConfig& c);
Json to_json(const DataConfig& d);
Json to_json(const InferConfig& c);
Json to_json(const EvalConfig& c);
Json to_json(const RunConfig& c);

// Parsers reject unknown keys and wrong types; missing keys keep defaults.
PhantomSpec phantom_spec_from_json(const Json& j);
SyntheticSpec synthetic_spec_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
DataConfig data_config_from_json(const Json& j);
InferConfig infer_config_from_json(const Json& j);
EvalConfig eval_config_from_json(const Json& j);
RunConfig run_config_from_json(const Json& j);

/// Reads and validates a config file. Throws IoError if unreadable, ConfigError if invalid.
RunConfig load_run_config(const std::filesystem::path& path);

/// Expands DataConfig entries into a sorted list of volume files.
std::vector<std::filesystem::path> list_volume_files(const std::vector<std::string>& entries);

}  // namespace psfcycle
