#include "lgnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lgnn {

namespace {

std::vector<double> filter_norms(const Tensor& w) {
  const int64_t co = w.dim(0);
  const int64_t q = w.size() / co;
  std::vector<double> norms(static_cast<size_t>(co));
  for (int64_t f = 0; f < co; ++f) {
    double s = 0;
    const float* p = w.ptr() + f * q;
    for (int64_t i = 0; i < q; ++i) s += static_cast<double>(p[i]) * p[i];
    norms[static_cast<size_t>(f)] = std::sqrt(s);
  }
  return norms;
}

double filter_cosine(const Tensor& w, int64_t a, int64_t b, const std::vector<double>& norms) {
  const int64_t q = w.size() / w.dim(0);
  const float* pa = w.ptr() + a * q;
  const float* pb = w.ptr() + b * q;
  double dot = 0;
  for (int64_t i = 0; i < q; ++i) dot += static_cast<double>(pa[i]) * pb[i];
  const double denom = norms[static_cast<size_t>(a)] * norms[static_cast<size_t>(b)];
  return denom > 0 ? dot / denom : 0.0;
}

int node_index_of_conv(ModelGraph& model, int conv_index) {
  auto idx = model.conv_node_indices();
  if (conv_index < 0 || conv_index >= static_cast<int>(idx.size()))
    throw ConfigError("analysis: conv layer " + std::to_string(conv_index) + " does not exist");
  return idx[static_cast<size_t>(conv_index)];
}

}  // namespace

ConvNodeT<float>& conv_at(ModelGraph& model, int conv_index) {
  auto* node = dynamic_cast<ConvNodeT<float>*>(
      model.nodes[static_cast<size_t>(node_index_of_conv(model, conv_index))].get());
  return *node;
}

Tensor gram_matrix(const Tensor& w, bool cosine) {
  if (w.rank() != 4) throw ShapeError("gram_matrix: weights must be (c_out,c_in,kh,kw)");
  const int64_t co = w.dim(0);
  const int64_t q = w.size() / co;
  Tensor g({co, co}, 0.f);
  auto norms = filter_norms(w);
  for (int64_t a = 0; a < co; ++a)
    for (int64_t b = a + 1; b < co; ++b) {
      double v;
      if (cosine) {
        v = filter_cosine(w, a, b, norms);
      } else {
        const float* pa = w.ptr() + a * q;
        const float* pb = w.ptr() + b * q;
        double dot = 0;
        for (int64_t i = 0; i < q; ++i) dot += static_cast<double>(pa[i]) * pb[i];
        v = dot;
      }
      g(a, b) = static_cast<float>(v);
      g(b, a) = static_cast<float>(v);
    }
  return g;  // diagonal stays zero
}

std::vector<HeatMap> gram_heatmaps(ModelGraph& model, int conv_index,
                                   const std::vector<int>& rows, bool cosine) {
  auto& conv = conv_at(model, conv_index);
  const int64_t co = conv.w.dim(0);
  const auto [m, n] = grid_shape(model.som_dims, co);
  auto g = gram_matrix(conv.w, cosine);

  std::vector<HeatMap> out;
  for (int row : rows) {
    if (row < 0 || row >= co) throw ConfigError("gram_heatmaps: row " + std::to_string(row));
    HeatMap hm;
    hm.layer = conv.name;
    hm.kind = "gram_row";
    hm.row = row;
    hm.grid = Tensor({m, n});
    for (int64_t j = 0; j < co; ++j) hm.grid[j] = g(row, j);
    out.push_back(std::move(hm));
  }
  return out;
}

double neighbor_similarity_grid(const Tensor& w, int m, int n) {
  if (w.dim(0) != static_cast<int64_t>(m) * n)
    throw ShapeError("neighbor_similarity: grid does not cover the filters");
  auto norms = filter_norms(w);
  double sum = 0;
  int64_t pairs = 0;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) {
      if (c + 1 < n) {
        sum += filter_cosine(w, r * n + c, r * n + c + 1, norms);
        ++pairs;
      }
      if (r + 1 < m) {
        sum += filter_cosine(w, r * n + c, (r + 1) * n + c, norms);
        ++pairs;
      }
    }
  return pairs > 0 ? sum / static_cast<double>(pairs) : 0.0;
}

double neighbor_similarity(ModelGraph& model, int conv_index) {
  auto& conv = conv_at(model, conv_index);
  const auto [m, n] = grid_shape(model.som_dims, conv.w.dim(0));
  return neighbor_similarity_grid(conv.w, m, n);
}

MagnitudeStats magnitude_stats_of(const Tensor& w) {
  auto norms = filter_norms(w);
  MagnitudeStats st;
  st.min = norms[0];
  st.max = norms[0];
  double mean_log = 0;
  for (double v : norms) {
    if (v == 0.0) throw DegenerateFilterError("magnitude_stats: zero-norm filter");
    st.min = std::min(st.min, v);
    st.max = std::max(st.max, v);
    mean_log += std::log(v);
  }
  mean_log /= static_cast<double>(norms.size());
  double var = 0;
  for (double v : norms) {
    const double d = std::log(v) - mean_log;
    var += d * d;
  }
  st.stddev_of_log = std::sqrt(var / static_cast<double>(norms.size()));
  return st;
}

MagnitudeStats magnitude_stats(ModelGraph& model, int conv_index) {
  return magnitude_stats_of(conv_at(model, conv_index).w);
}

HeatMap class_activation_map(ModelGraph& model, const Tensor& images, int conv_index) {
  if (images.rank() != 4) throw ShapeError("class_activation_map: batch must be (b,c,h,w)");
  const int node_idx = node_index_of_conv(model, conv_index);
  auto& conv = conv_at(model, conv_index);
  const int64_t co = conv.w.dim(0);
  const auto [m, n] = grid_shape(model.som_dims, co);

  auto act = model.activation_at(images, node_idx, Mode::eval);
  const int64_t b = act.dim(0), h = act.dim(2), ww = act.dim(3);

  HeatMap hm;
  hm.layer = conv.name;
  hm.kind = "activation";
  hm.grid = Tensor({m, n});
  for (int64_t ch = 0; ch < co; ++ch) {
    double sum = 0;
    for (int64_t ib = 0; ib < b; ++ib) {
      const float* p = act.ptr() + (ib * co + ch) * h * ww;
      for (int64_t i = 0; i < h * ww; ++i) sum += p[i];
    }
    hm.grid[ch] = static_cast<float>(sum / static_cast<double>(b * h * ww));
  }
  return hm;
}

ActMaxResult activation_maximization(ModelGraph& model, int conv_index, int channel, int steps,
                                     double step_size, uint64_t seed) {
  const int node_idx = node_index_of_conv(model, conv_index);
  auto& conv = conv_at(model, conv_index);
  const int64_t co = conv.w.dim(0);
  if (channel < 0 || channel >= co)
    throw ConfigError("activation_maximization: channel " + std::to_string(channel));
  if (steps < 0) throw ConfigError("activation_maximization: steps must be >= 0");

  const int64_t c = model.input_channels, hw = model.input_hw;
  Tensor img({1, c, hw, hw});
  std::mt19937 rng(static_cast<uint32_t>(seed));
  std::uniform_real_distribution<float> noise(0.25f, 0.75f);
  for (auto& v : img.data) v = noise(rng);

  ActMaxResult res;
  auto plane_mean = [&](const Tensor& act) {
    const int64_t plane = act.dim(2) * act.dim(3);
    double sum = 0;
    const float* p = act.ptr() + channel * plane;
    for (int64_t i = 0; i < plane; ++i) sum += p[i];
    return sum / static_cast<double>(plane);
  };

  // the forward populates node caches for the current image, which is what
  // makes the backward sweep below valid
  auto act = model.activation_at(img, node_idx, Mode::eval);
  const int64_t plane = act.dim(2) * act.dim(3);
  Tensor seed_grad(act.shape, 0.f);
  {
    float* pg = seed_grad.ptr() + channel * plane;
    for (int64_t i = 0; i < plane; ++i) pg[i] = 1.f / static_cast<float>(plane);
  }
  double prev = plane_mean(act);
  if (!std::isfinite(prev)) throw DivergenceError("activation_maximization: non-finite objective");

  for (int it = 0; it < steps; ++it) {
    Tensor g = seed_grad;
    for (int i = node_idx; i >= 0; --i) g = model.nodes[static_cast<size_t>(i)]->backward(g);

    for (int64_t i = 0; i < img.size(); ++i)
      img[i] = std::clamp(img[i] + static_cast<float>(step_size) * g[i], 0.f, 1.f);

    act = model.activation_at(img, node_idx, Mode::eval);
    const double now = plane_mean(act);
    if (!std::isfinite(now))
      throw DivergenceError("activation_maximization: non-finite objective");
    if (now < prev - 1e-9) res.monotone = false;
    prev = now;
  }

  res.activation = prev;
  res.image = reshape(img, {c, hw, hw});
  return res;
}

Tensor first_layer_tiles(ModelGraph& model) {
  auto& conv = conv_at(model, 0);
  if (conv.w.dim(1) != 3)
    throw UnsupportedLayerError("first-layer export requires 3 input channels");
  const int64_t co = conv.w.dim(0), k = conv.w.dim(2);
  const auto [m, n] = grid_shape(model.som_dims, co);

  const int64_t th = m * k + (m - 1), tw = n * k + (n - 1);
  Tensor tiles({3, th, tw}, 0.f);
  for (int64_t f = 0; f < co; ++f) {
    const float* fw = conv.w.ptr() + f * 3 * k * k;
    float lo = fw[0], hi = fw[0];
    for (int64_t i = 0; i < 3 * k * k; ++i) {
      lo = std::min(lo, fw[i]);
      hi = std::max(hi, fw[i]);
    }
    const float range = hi - lo;
    const int64_t r = f / n, c = f % n;
    const int64_t y0 = r * (k + 1), x0 = c * (k + 1);
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t y = 0; y < k; ++y)
        for (int64_t x = 0; x < k; ++x) {
          const float v = fw[ch * k * k + y * k + x];
          tiles(ch, y0 + y, x0 + x) = range > 0 ? (v - lo) / range : 0.5f;
        }
  }
  return tiles;
}

}  // namespace lgnn
