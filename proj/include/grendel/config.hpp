#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grendel/engine.hpp"
#include "grendel/experiments.hpp"
#include "grendel/scene_io.hpp"

namespace grendel {

struct TrainConfig {
  std::string manifest;
  std::string output_dir = "run";
  std::string resume;                   // checkpoint to start from; empty = manifest points
  std::int64_t total_images = 5000;
  std::int64_t checkpoint_every = 0;    // images; 0 = final checkpoint only
  std::int64_t max_points = 0;          // subsample the initial points; 0 = all
};

struct ExperimentConfig {
  int trials = 32;
  std::vector<int> batch_sizes{1, 2, 4, 8, 16, 32};
  std::string group = "sh_dc";
  std::string sampling = "distinct";    // distinct | duplicate | grouped
  int iid_views = 0;                    // > 0: synthetic i.i.d. gradients instead of a scene
  int iid_dimension = 4096;
  int iid_clusters = 0;                 // > 0: views share one of this many gradients
  std::vector<int> trajectory_batch_sizes{4, 16};
  std::int64_t horizon_images = 256;
  std::int64_t log_every_images = 64;
};

struct Config {
  EngineConfig engine;
  TrainConfig train;
  InitConfig init;
  SyntheticSpec synth;
  ExperimentConfig experiment;
};

/// Reads an INI file ([section] then key = value). Unknown keys and bad
/// values are errors naming the file and line.
Config load_config(const std::filesystem::path& path);

/// Applies "section.key=value".
void apply_override(Config& config, const std::string& assignment);

/// Every key with its current value, as a loadable INI document.
std::string dump_config(const Config& config);

/// Sorted list of all keys.
std::vector<std::string> config_keys();

}  // namespace grendel
