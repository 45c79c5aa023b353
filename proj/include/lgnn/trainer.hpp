#pragma once

#include <string>
#include <vector>

#include "lgnn/config.hpp"
#include "lgnn/data.hpp"
#include "lgnn/model.hpp"

namespace lgnn {

struct EpochRow {
  int epoch;
  double lr;
  double sigma;
  double train_loss;
  double test_acc;
};

struct TrainResult {
  std::string run_dir;
  std::vector<EpochRow> rows;
  double best_acc = 0.0;
  std::string init_ckpt, best_ckpt, final_ckpt;
};

// Per iteration: zero grads, forward/backward, smooth the selected gradient
// tensors, optimizer step. Per epoch: sigma and learning-rate updates, test
// accuracy appended to metrics.csv. Writes config.json, ckpt_init.bin and,
// when epochs > 0, ckpt_best.bin and ckpt_final.bin under cfg.out_dir.
TrainResult train(const RunConfig& cfg);

// Top-1 accuracy in eval mode as a fraction; argmax ties resolve to the
// lowest class index.
double evaluate(ModelGraph& model, const Dataset& ds, const Normalization* norm,
                int batch_size = 128);

// deterministic splits derived from cfg (synthetic) or loaded from data_dir
Dataset load_split(const RunConfig& cfg, const std::string& split);

// in-place kernel pass over the conv-weight gradients named in targets
void smooth_selected(ModelGraph& model, const std::vector<std::string>& targets,
                     const NeighborhoodKernel& kernel);

// mean seconds per smoothing pass over `iters` repeats, for overhead checks
double time_smoothing_pass(ModelGraph& model, const LgnnPolicy& policy, int iters);

}  // namespace lgnn
