#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lgnn/tensor.hpp"

namespace lgnn {

// Below this sigma the normalized window is numerically a delta, so the
// kernel switches to an exact identity and smoothing becomes a strict no-op.
inline constexpr double kSigmaMin = 1e-6;

template <typename T>
struct NeighborhoodKernelT {
  int size = 3;
  double sigma = 0.5;
  TensorT<T> taps{{3, 3}, T(0)};
  bool identity = false;
};

using NeighborhoodKernel = NeighborhoodKernelT<float>;

// Window taps proportional to exp(-(dx^2+dy^2)/(2 sigma^2)), normalized to
// sum 1. Sum-1 taps preserve constant fields under replication padding.
template <typename T = float>
NeighborhoodKernelT<T> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ConfigError("gaussian_kernel: size must be odd positive");
  if (sigma < 0.0) throw ConfigError("gaussian_kernel: sigma must be >= 0");
  NeighborhoodKernelT<T> k;
  k.size = size;
  k.sigma = sigma;
  k.taps = TensorT<T>({size, size}, T(0));
  const int p = (size - 1) / 2;
  if (sigma <= kSigmaMin) {
    k.identity = true;
    k.taps(p, p) = T(1);
    return k;
  }
  double sum = 0.0;
  std::vector<double> raw(static_cast<size_t>(size) * size);
  for (int dy = -p; dy <= p; ++dy)
    for (int dx = -p; dx <= p; ++dx) {
      const double v = std::exp(-(double(dx) * dx + double(dy) * dy) / (2.0 * sigma * sigma));
      raw[static_cast<size_t>((dy + p) * size + dx + p)] = v;
      sum += v;
    }
  for (int i = 0; i < size * size; ++i)
    k.taps[i] = static_cast<T>(raw[static_cast<size_t>(i)] / sum);
  return k;
}

enum class Selection { off, main_branch, resblocks, all };
enum class SigmaMode { constant, decreasing };

struct LgnnPolicy {
  Selection selection = Selection::off;
  SigmaMode sigma_mode = SigmaMode::constant;
  int kernel_size = 3;
  double base_sigma = 0.5;
};

inline double sigma_at_epoch(const LgnnPolicy& policy, int epoch, int total_epochs) {
  if (total_epochs <= 0) throw ConfigError("sigma_at_epoch: total_epochs must be positive");
  if (epoch < 0 || epoch > total_epochs) throw ConfigError("sigma_at_epoch: epoch out of range");
  if (policy.sigma_mode == SigmaMode::constant) return policy.base_sigma;
  return policy.base_sigma * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

// ---------------------------------------------------------------------------
// filter-grid geometry

// (m, n) with m*n = c_out and n the largest divisor not exceeding sqrt(c_out),
// so the grid is as close to square as the factorization allows.
inline std::pair<int, int> closest_square_dims(int64_t c_out) {
  if (c_out < 1) throw ConfigError("closest_square_dims: c_out must be positive");
  int64_t n = 1;
  for (int64_t d = 1; d * d <= c_out; ++d)
    if (c_out % d == 0) n = d;
  return {static_cast<int>(c_out / n), static_cast<int>(n)};
}

struct SomDims {
  std::map<int64_t, std::pair<int, int>> lookup;

  void add(int64_t c_out, int m, int n) {
    if (static_cast<int64_t>(m) * n != c_out)
      throw ConfigError("som dims: m*n must equal filter count " + std::to_string(c_out));
    lookup[c_out] = {m, n};
  }
};

inline SomDims default_som_dims(const std::vector<int64_t>& widths) {
  SomDims d;
  for (int64_t w : widths) {
    auto [m, n] = closest_square_dims(w);
    d.add(w, m, n);
  }
  return d;
}

inline std::pair<int, int> grid_shape(const SomDims& dims, int64_t c_out) {
  auto it = dims.lookup.find(c_out);
  if (it == dims.lookup.end())
    throw ConfigError("grid_shape: no grid entry for filter count " + std::to_string(c_out));
  return it->second;
}

// ---------------------------------------------------------------------------
// gradient smoothing

// Low-pass filters an accumulated conv-weight gradient across the filter
// grid. Filter k sits at grid cell (k div n, k mod n); each of the c_in*s*s
// slices is smoothed independently, so values never mix within a filter.
template <typename T>
TensorT<T> smooth_gradients(const TensorT<T>& grad, const NeighborhoodKernelT<T>& kernel,
                            const SomDims& dims) {
  if (grad.rank() != 4) throw ShapeError("smooth_gradients: gradient must be (c_out,c_in,kh,kw)");
  const int64_t c_out = grad.dim(0);
  const auto [m, n] = grid_shape(dims, c_out);
  if (kernel.identity) return grad;

  const int64_t q = grad.size() / c_out;
  const int p = (kernel.size - 1) / 2;
  const int64_t ph = m + 2 * p, pw = n + 2 * p;

  // gather every slice into a replication-padded grid image
  TensorT<T> grids({q, 1, ph, pw});
  for (int64_t s = 0; s < q; ++s) {
    T* dst = grids.ptr() + s * ph * pw;
    for (int64_t y = 0; y < ph; ++y) {
      const int64_t r = std::clamp<int64_t>(y - p, 0, m - 1);
      for (int64_t x = 0; x < pw; ++x) {
        const int64_t c = std::clamp<int64_t>(x - p, 0, n - 1);
        dst[y * pw + x] = grad[(r * n + c) * q + s];
      }
    }
  }

  TensorT<T> w = reshape(kernel.taps, {1, 1, kernel.size, kernel.size});
  TensorT<T> smoothed = conv2d_batch(grids, w, static_cast<const TensorT<T>*>(nullptr), 1, 0);

  TensorT<T> out(grad.shape);
  for (int64_t s = 0; s < q; ++s) {
    const T* src = smoothed.ptr() + s * m * n;
    for (int64_t r = 0; r < m; ++r)
      for (int64_t c = 0; c < n; ++c) out[(r * n + c) * q + s] = src[r * n + c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer selection

enum class ParamRole { conv_weight, conv_bias, bn, fc };
enum class Placement { none, first_layer, main_branch, shortcut, fc_adjacent };

struct ParamTag {
  std::string name;
  ParamRole role = ParamRole::conv_weight;
  Placement placement = Placement::none;
};

// Only conv weights are ever smoothed; biases, batch-norm parameters and FC
// weights stay untouched under every policy.
inline std::vector<std::string> select_targets(const LgnnPolicy& policy,
                                               const std::vector<ParamTag>& tags) {
  std::vector<std::string> out;
  if (policy.selection == Selection::off) return out;
  for (const auto& t : tags) {
    if (t.role != ParamRole::conv_weight) continue;
    switch (policy.selection) {
      case Selection::main_branch:
        if (t.placement == Placement::main_branch) out.push_back(t.name);
        break;
      case Selection::resblocks:
        if (t.placement == Placement::main_branch || t.placement == Placement::shortcut)
          out.push_back(t.name);
        break;
      case Selection::all:
        out.push_back(t.name);
        break;
      case Selection::off:
        break;
    }
  }
  return out;
}

inline const char* to_string(Selection s) {
  switch (s) {
    case Selection::off: return "off";
    case Selection::main_branch: return "main_branch";
    case Selection::resblocks: return "resblocks";
    case Selection::all: return "all";
  }
  return "off";
}

inline Selection selection_from_string(const std::string& s) {
  if (s == "off") return Selection::off;
  if (s == "main_branch") return Selection::main_branch;
  if (s == "resblocks") return Selection::resblocks;
  if (s == "all") return Selection::all;
  throw ConfigError("unknown selection policy: " + s);
}

inline const char* to_string(SigmaMode m) {
  return m == SigmaMode::constant ? "constant" : "decreasing";
}

inline SigmaMode sigma_mode_from_string(const std::string& s) {
  if (s == "constant") return SigmaMode::constant;
  if (s == "decreasing") return SigmaMode::decreasing;
  throw ConfigError("unknown sigma mode: " + s);
}

}  // namespace lgnn
