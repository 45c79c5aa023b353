#pragma once

#include <string>
#include <vector>

#include "lgnn/model.hpp"

namespace lgnn {

struct HeatMap {
  Tensor grid{{1, 1}};
  std::string layer;
  std::string kind;  // gram_row | activation | filter_norm
  int row = -1;      // source row for gram_row maps
};

// Top-level conv node handle by conv ordinal (0 = first conv).
ConvNodeT<float>& conv_at(ModelGraph& model, int conv_index);

// Pairwise similarity of flattened filters, (c_out, c_out), diagonal zeroed.
// cosine=false keeps raw dot products.
Tensor gram_matrix(const Tensor& w, bool cosine = true);

std::vector<HeatMap> gram_heatmaps(ModelGraph& model, int conv_index,
                                   const std::vector<int>& rows, bool cosine = true);

// Mean cosine similarity over 4-adjacent grid cells.
double neighbor_similarity_grid(const Tensor& w, int m, int n);
double neighbor_similarity(ModelGraph& model, int conv_index);

struct MagnitudeStats {
  double min = 0, max = 0, stddev_of_log = 0;
};

// Per-filter L2 norms: (min, max, population stddev of natural logs).
MagnitudeStats magnitude_stats_of(const Tensor& w);
MagnitudeStats magnitude_stats(ModelGraph& model, int conv_index);

// Mean activation of the conv node's output per channel over (batch,h,w),
// arranged on the layer's filter grid. Eval mode.
HeatMap class_activation_map(ModelGraph& model, const Tensor& images, int conv_index);

struct ActMaxResult {
  Tensor image{{1, 1, 1}};  // (3,h,w) in [0,1]
  double activation = 0;
  bool monotone = true;  // objective never decreased across steps
};

// Plain gradient ascent from seeded noise on the mean spatial activation of
// one channel; pixels clamped to [0,1] after every step.
ActMaxResult activation_maximization(ModelGraph& model, int conv_index, int channel, int steps,
                                     double step_size, uint64_t seed);

// First-layer filters min-max normalized individually and tiled onto the
// filter grid with 1-pixel separators; (3, H, W) in [0,1].
Tensor first_layer_tiles(ModelGraph& model);
void export_first_layer(ModelGraph& model, const std::string& path);

}  // namespace lgnn
