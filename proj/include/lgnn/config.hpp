#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgnn/model.hpp"
#include "lgnn/smoothing.hpp"

namespace lgnn {

// One run is fully described by this struct; train() serializes it into the
// run directory so every artifact can be traced back to its settings.
struct RunConfig {
  ArchSpec arch;  // arch.seed is filled from seeds.init at parse time

  std::string data_source = "synthetic";  // synthetic | cifar100
  std::string data_dir;                   // cifar100: holds train.bin / test.bin
  int classes = 4;                        // synthetic label count
  int train_per_class = 64;
  int test_per_class = 16;
  bool augment = false;
  bool normalize = true;

  int epochs = 10;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> lr_milestones;
  double lr_factor = 0.1;

  LgnnPolicy policy;
  SomDims grid_overrides;  // merged over the per-width defaults

  uint64_t seed_init = 1;
  uint64_t seed_data = 2;
  uint64_t seed_dropout = 3;

  std::string out_dir = "run";
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& cfg);

// defaults for the architecture widths with any overrides applied
SomDims resolved_grid_table(const RunConfig& cfg);

}  // namespace lgnn
