#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "voxdiff/diffusion.hpp"
#include "voxdiff/phantom.hpp"
#include "voxdiff/trainer.hpp"
#include "voxdiff/unet.hpp"

namespace voxdiff::cli {

/// Union of every module's settings. Serialized as one flat JSON object with
/// dotted keys (`train.epochs`); nested objects are flattened on input.
struct RunConfig {
  PhantomConfig phantom;
  TrainConfig train;
  DiffusionConfig diffusion;
  UNetConfig unet;
  std::uint64_t data_seed = 0;
  int threads = 1;

  /// Cross-field checks on top of each module's own validation.
  void validate() const;

  [[nodiscard]] nlohmann::ordered_json to_json() const;
  /// Applies every key of `flat`; unknown keys are a ConfigError.
  void apply(const nlohmann::json& flat);
  /// `key=value`; the value is parsed as JSON, falling back to a string.
  void apply_override(const std::string& assignment);

  static RunConfig from_file(const std::filesystem::path& path);
};

nlohmann::json flatten(const nlohmann::json& j);

void write_run_config(const std::filesystem::path& dir, const RunConfig& cfg);

}  // namespace voxdiff::cli
