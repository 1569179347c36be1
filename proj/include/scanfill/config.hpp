#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scanfill/data.hpp"
#include "scanfill/trainer.hpp"

namespace scanfill {

/// Every knob of a run. Files and flags address fields by flat dotted keys
/// ("prn.m_out", "train.lr", ...); flags are applied after the file.
struct RunConfig {
  DatasetConfig data;
  PrnConfig prn;
  bool dare = true;
  LossWeights weights;
  std::size_t k_density = 8;
  double mask_threshold = 0.5;
  bool squared_ucd = false;
  double lr = 1e-4;
  double lr_decay = 0.5;
  std::size_t decay_every = 200;
  std::size_t epochs = 600;
  std::size_t batch_size = 8;
  std::size_t checkpoint_every = 50;
  std::size_t max_samples = 0;
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs";

  /// Copies shared values (seed, n_in, m_out, splat) between sections and
  /// checks every field. Throws ConfigError naming the field.
  void finalize();
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

const std::vector<ConfigField>& config_fields();

/// Applies a flat JSON object. Unknown keys and ill-typed values raise
/// ConfigError naming the key.
void apply_json(RunConfig& config, const nlohmann::json& flat);
/// Reads a JSON config file over the defaults. Unreadable files raise IoError.
RunConfig load_run_config(const std::filesystem::path& path);
/// Parses a flag value ("0.001", "true", "table,lamp") into the named field.
void set_option(RunConfig& config, const std::string& key, const std::string& value);
nlohmann::json to_json(const RunConfig& config);

TrainConfig train_config(const RunConfig& config, Category category);

}  // namespace scanfill
