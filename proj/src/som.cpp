#include "lgnn/som.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lgnn/errors.hpp"

namespace lgnn {

SomGrid make_som_grid(int m, int n, int dim, uint64_t seed) {
  if (m < 1 || n < 1 || dim < 1) throw ConfigError("som: grid extents and dim must be positive");
  SomGrid g;
  g.m = m;
  g.n = n;
  g.weights = TensorD({static_cast<int64_t>(m) * n, dim});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (auto& v : g.weights.data) v = dist(rng);
  return g;
}

int find_winner(const SomGrid& grid, std::span<const double> x) {
  if (static_cast<int>(x.size()) != grid.dim()) throw ShapeError("som: input dimension mismatch");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j = 0; j < grid.cells(); ++j) {
    const double* w = grid.weights.ptr() + static_cast<int64_t>(j) * grid.dim();
    double d = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double diff = x[i] - w[i];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

void som_update(SomGrid& grid, std::span<const double> x, int winner, double alpha, double sigma) {
  if (static_cast<int>(x.size()) != grid.dim()) throw ShapeError("som: input dimension mismatch");
  const auto [cr, cc] = grid.location(winner);
  const double denom = 2.0 * sigma * sigma;
  for (int j = 0; j < grid.cells(); ++j) {
    const auto [r, c] = grid.location(j);
    const double dist2 = double(r - cr) * (r - cr) + double(c - cc) * (c - cc);
    // eta_cc = 1 exactly; neighbors fall off with grid distance, unnormalized
    const double eta = (j == winner) ? 1.0 : std::exp(-dist2 / denom);
    double* w = grid.weights.ptr() + static_cast<int64_t>(j) * grid.dim();
    for (size_t i = 0; i < x.size(); ++i) w[i] += alpha * eta * (x[i] - w[i]);
  }
}

void train_som(SomGrid& grid, const std::vector<std::vector<double>>& data, int epochs,
               const SomSchedule& sched, uint64_t seed) {
  if (data.empty()) throw ConfigError("som: empty dataset");
  if (epochs <= 0) return;
  const double sigma0 = sched.sigma_start > 0.0 ? sched.sigma_start : std::max(grid.m, grid.n) / 2.0;
  const int64_t total = static_cast<int64_t>(epochs) * static_cast<int64_t>(data.size());

  std::mt19937_64 rng(seed);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});

  int64_t it = 0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t s : order) {
      const double f = total > 1 ? static_cast<double>(it) / static_cast<double>(total - 1) : 0.0;
      const double alpha = sched.alpha_start + f * (sched.alpha_end - sched.alpha_start);
      const double sigma = sigma0 + f * (sched.sigma_end - sigma0);
      const int c = find_winner(grid, data[s]);
      som_update(grid, data[s], c, alpha, sigma);
      ++it;
    }
  }
}

static double weight_distance(const SomGrid& g, int a, int b) {
  const double* wa = g.weights.ptr() + static_cast<int64_t>(a) * g.dim();
  const double* wb = g.weights.ptr() + static_cast<int64_t>(b) * g.dim();
  double d = 0.0;
  for (int i = 0; i < g.dim(); ++i) {
    const double diff = wa[i] - wb[i];
    d += diff * diff;
  }
  return std::sqrt(d);
}

double mean_neighbor_distance(const SomGrid& grid) {
  double sum = 0.0;
  int64_t count = 0;
  for (int r = 0; r < grid.m; ++r)
    for (int c = 0; c < grid.n; ++c) {
      const int j = r * grid.n + c;
      if (c + 1 < grid.n) {
        sum += weight_distance(grid, j, j + 1);
        ++count;
      }
      if (r + 1 < grid.m) {
        sum += weight_distance(grid, j, j + grid.n);
        ++count;
      }
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double mean_pair_distance(const SomGrid& grid) {
  double sum = 0.0;
  int64_t count = 0;
  for (int a = 0; a < grid.cells(); ++a)
    for (int b = a + 1; b < grid.cells(); ++b) {
      sum += weight_distance(grid, a, b);
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace lgnn
