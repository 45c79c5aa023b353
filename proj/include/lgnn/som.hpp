#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lgnn/tensor.hpp"

namespace lgnn {

// Classical 2-d self-organizing map. Kept at 64-bit precision; it serves as
// the conceptual reference for the neighborhood function used on gradients.
struct SomGrid {
  int m = 0;
  int n = 0;
  TensorD weights;  // (m*n, d), one prototype per grid cell

  int cells() const { return m * n; }
  int dim() const { return static_cast<int>(weights.dim(1)); }
  std::pair<int, int> location(int j) const { return {j / n, j % n}; }
};

// Uniform [0,1) prototype initialization.
SomGrid make_som_grid(int m, int n, int dim, uint64_t seed);

// Index of the prototype with minimal squared Euclidean distance to x.
// Ties break to the smallest index.
int find_winner(const SomGrid& grid, std::span<const double> x);

// Pulls every prototype toward x, scaled by the Gaussian of its grid
// distance to the winner. The winner itself moves by alpha * (x - w).
void som_update(SomGrid& grid, std::span<const double> x, int winner, double alpha, double sigma);

struct SomSchedule {
  double alpha_start = 0.5;
  double alpha_end = 0.02;
  double sigma_start = 0.0;  // 0 means max(m,n)/2
  double sigma_end = 0.5;
};

// Shuffled online training with linearly decaying alpha and sigma.
void train_som(SomGrid& grid, const std::vector<std::vector<double>>& data, int epochs,
               const SomSchedule& sched, uint64_t seed);

// Mean weight-space distance between 4-adjacent grid cells.
double mean_neighbor_distance(const SomGrid& grid);

// Mean weight-space distance over all distinct cell pairs.
double mean_pair_distance(const SomGrid& grid);

}  // namespace lgnn
