#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rpr/ariconv.hpp"
#include "rpr/network.hpp"
#include "rpr/synth.hpp"
#include "rpr/training.hpp"

namespace rpr {

/// Everything a CLI run can be configured with. Persisted as `key=value`
/// lines; `#` starts a comment.
struct RunConfig {
  RprNetConfig net;
  TrainConfig train;
  SynthConfig synth;
  int epochs = 30;
  int precision = 32;  // 32 or 64; the scalar type used for training and embedding
  KernelPath kernel_path = KernelPath::kFactored;
  std::string train_manifest;
  std::string test_manifest;

  /// Applies the desk-scale network preset, keeping every other field.
  void apply_desk();
  void validate() const;
};

/// One `key=value` assignment. Unknown keys and unparsable values throw ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_setting(RunConfig& cfg, const std::string& assignment);

void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value, one per line, in a fixed order.
std::string config_to_text(const RunConfig& cfg);

/// Only the `net.*` keys.
std::string net_config_to_text(const RprNetConfig& net);
/// Network config out of any config text (a checkpoint echo, say); other keys are checked but dropped.
RprNetConfig net_config_from_text(const std::string& text);

std::vector<std::string> config_keys();

}  // namespace rpr
