#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lgnn/tensor.hpp"

namespace lgnn {

enum class Mode { train, eval };

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& grad_out, const TensorT<T>& x) {
  if (!grad_out.same_shape(x)) throw ShapeError("relu_backward: shape mismatch");
  TensorT<T> out(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

// ---------------------------------------------------------------------------
// max pooling

template <typename T>
struct PoolResult {
  TensorT<T> out;
  std::vector<int64_t> argmax;  // flat input index per output element
};

// Batched (b,c,h,w) window maxima. Ties break to the first element in
// row-major window order so backward routing is deterministic.
template <typename T>
PoolResult<T> maxpool2d_batch(const TensorT<T>& x, int k, int stride) {
  if (x.rank() != 4) throw ShapeError("maxpool2d: input must be (b,c,h,w)");
  if (k < 1 || stride < 1) throw ShapeError("maxpool2d: k and stride must be >= 1");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = detail::conv_extent(h, k, stride, 0, "maxpool2d");
  const int64_t ow = detail::conv_extent(w, k, stride, 0, "maxpool2d");
  PoolResult<T> res{TensorT<T>({b, c, oh, ow}), {}};
  res.argmax.resize(static_cast<size_t>(b * c * oh * ow));
  int64_t oi = 0;
  for (int64_t ib = 0; ib < b; ++ib)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* plane = x.ptr() + (ib * c + ch) * h * w;
      const int64_t base = (ib * c + ch) * h * w;
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          T best = plane[y * stride * w + xx * stride];
          int64_t best_at = y * stride * w + xx * stride;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const int64_t at = (y * stride + i) * w + (xx * stride + j);
              if (plane[at] > best) {
                best = plane[at];
                best_at = at;
              }
            }
          res.out[oi] = best;
          res.argmax[static_cast<size_t>(oi)] = base + best_at;
          ++oi;
        }
    }
  return res;
}

template <typename T>
TensorT<T> maxpool2d_backward_batch(const TensorT<T>& grad_out, const std::vector<int64_t>& argmax,
                                    const std::vector<int64_t>& in_shape) {
  if (grad_out.size() != static_cast<int64_t>(argmax.size()))
    throw ShapeError("maxpool2d_backward: grad/argmax mismatch");
  TensorT<T> gx(in_shape);
  for (int64_t i = 0; i < grad_out.size(); ++i) gx[argmax[static_cast<size_t>(i)]] += grad_out[i];
  return gx;
}

template <typename T>
TensorT<T> maxpool2d(const TensorT<T>& x, int k, int stride) {
  if (x.rank() != 3) throw ShapeError("maxpool2d: input must be (c,h,w)");
  auto r = maxpool2d_batch(reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}), k, stride);
  return reshape(r.out, {r.out.dim(1), r.out.dim(2), r.out.dim(3)});
}

// ---------------------------------------------------------------------------
// batch normalization

template <typename T>
struct BatchNormState {
  TensorT<T> gamma, beta;               // (c)
  TensorT<T> running_mean, running_var; // (c), updated in training mode only
  T eps = T(1e-5);
  T momentum = T(0.1);

  explicit BatchNormState(int64_t channels = 1)
      : gamma({channels}, T(1)),
        beta({channels}, T(0)),
        running_mean({channels}, T(0)),
        running_var({channels}, T(1)) {}
};

template <typename T>
struct BatchNormCache {
  TensorT<T> xhat;
  std::vector<T> inv_std;  // per channel
  bool training = false;
};

// Normalizes per channel over (b,h,w). Training mode uses batch statistics
// (population variance) and pushes them into the running estimates.
template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& x, BatchNormState<T>& st, Mode mode,
                       BatchNormCache<T>* cache = nullptr) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d: input must be (b,c,h,w)");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (st.gamma.dim(0) != c) throw ShapeError("batchnorm2d: channel mismatch");
  const int64_t n = b * h * w;
  const bool training = mode == Mode::train;
  if (training && n < 2)
    throw DegenerateBatchError("batchnorm2d: needs b*h*w >= 2 in training mode");

  TensorT<T> out(x.shape);
  if (cache) {
    cache->xhat = TensorT<T>(x.shape);
    cache->inv_std.assign(static_cast<size_t>(c), T(0));
    cache->training = training;
  }

  for (int64_t ch = 0; ch < c; ++ch) {
    T mean, var;
    if (training) {
      double sum = 0.0;
      for (int64_t ib = 0; ib < b; ++ib) {
        const T* p = x.ptr() + (ib * c + ch) * h * w;
        for (int64_t i = 0; i < h * w; ++i) sum += static_cast<double>(p[i]);
      }
      mean = static_cast<T>(sum / static_cast<double>(n));
      double sq = 0.0;
      for (int64_t ib = 0; ib < b; ++ib) {
        const T* p = x.ptr() + (ib * c + ch) * h * w;
        for (int64_t i = 0; i < h * w; ++i) {
          const double d = static_cast<double>(p[i]) - static_cast<double>(mean);
          sq += d * d;
        }
      }
      var = static_cast<T>(sq / static_cast<double>(n));
      st.running_mean[ch] = (T(1) - st.momentum) * st.running_mean[ch] + st.momentum * mean;
      st.running_var[ch] = (T(1) - st.momentum) * st.running_var[ch] + st.momentum * var;
    } else {
      mean = st.running_mean[ch];
      var = st.running_var[ch];
    }
    const T inv_std = T(1) / std::sqrt(var + st.eps);
    if (cache) cache->inv_std[static_cast<size_t>(ch)] = inv_std;
    const T g = st.gamma[ch], bt = st.beta[ch];
    for (int64_t ib = 0; ib < b; ++ib) {
      const T* p = x.ptr() + (ib * c + ch) * h * w;
      T* q = out.ptr() + (ib * c + ch) * h * w;
      T* xh = cache ? cache->xhat.ptr() + (ib * c + ch) * h * w : nullptr;
      for (int64_t i = 0; i < h * w; ++i) {
        const T xhat = (p[i] - mean) * inv_std;
        if (xh) xh[i] = xhat;
        q[i] = g * xhat + bt;
      }
    }
  }
  return out;
}

template <typename T>
struct BatchNormGrads {
  TensorT<T> input, gamma, beta;
};

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const TensorT<T>& grad_out, const BatchNormCache<T>& cache,
                                       const BatchNormState<T>& st) {
  const auto& xhat = cache.xhat;
  if (!grad_out.same_shape(xhat)) throw ShapeError("batchnorm2d_backward: shape mismatch");
  const int64_t b = xhat.dim(0), c = xhat.dim(1), h = xhat.dim(2), w = xhat.dim(3);
  const int64_t n = b * h * w;
  BatchNormGrads<T> g{TensorT<T>(xhat.shape), TensorT<T>({c}), TensorT<T>({c})};

  for (int64_t ch = 0; ch < c; ++ch) {
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int64_t ib = 0; ib < b; ++ib) {
      const T* gy = grad_out.ptr() + (ib * c + ch) * h * w;
      const T* xh = xhat.ptr() + (ib * c + ch) * h * w;
      for (int64_t i = 0; i < h * w; ++i) {
        sum_gy += static_cast<double>(gy[i]);
        sum_gy_xhat += static_cast<double>(gy[i]) * static_cast<double>(xh[i]);
      }
    }
    g.beta[ch] = static_cast<T>(sum_gy);
    g.gamma[ch] = static_cast<T>(sum_gy_xhat);
    const T scale = st.gamma[ch] * cache.inv_std[static_cast<size_t>(ch)];
    const T mean_gy = static_cast<T>(sum_gy / static_cast<double>(n));
    const T mean_gy_xhat = static_cast<T>(sum_gy_xhat / static_cast<double>(n));
    for (int64_t ib = 0; ib < b; ++ib) {
      const T* gy = grad_out.ptr() + (ib * c + ch) * h * w;
      const T* xh = xhat.ptr() + (ib * c + ch) * h * w;
      T* gx = g.input.ptr() + (ib * c + ch) * h * w;
      for (int64_t i = 0; i < h * w; ++i) {
        if (cache.training) {
          gx[i] = scale * (gy[i] - mean_gy - xh[i] * mean_gy_xhat);
        } else {
          gx[i] = scale * gy[i];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// dropout

// Inverted-scaling dropout: survivors are scaled by 1/(1-rate) so eval mode
// is the identity. rate 0 consumes no randomness.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double rate, Mode mode, std::mt19937& rng,
                   std::vector<uint8_t>* mask = nullptr) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
  if (mode == Mode::eval || rate == 0.0) {
    if (mask) mask->assign(static_cast<size_t>(x.size()), 1);
    return x;
  }
  TensorT<T> out(x.shape);
  if (mask) mask->assign(static_cast<size_t>(x.size()), 0);
  std::bernoulli_distribution drop(rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < x.size(); ++i) {
    if (drop(rng)) {
      out[i] = T(0);
    } else {
      out[i] = x[i] * scale;
      if (mask) (*mask)[static_cast<size_t>(i)] = 1;
    }
  }
  return out;
}

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& grad_out, const std::vector<uint8_t>& mask,
                            double rate) {
  if (grad_out.size() != static_cast<int64_t>(mask.size()))
    throw ShapeError("dropout_backward: mask mismatch");
  TensorT<T> gx(grad_out.shape);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < grad_out.size(); ++i)
    gx[i] = mask[static_cast<size_t>(i)] ? grad_out[i] * scale : T(0);
  return gx;
}

// ---------------------------------------------------------------------------
// linear

// x (b,d_in) * w(d_out,d_in)^T + bias
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<std::type_identity_t<T>>* bias) {
  if (x.rank() != 2 || w.rank() != 2) throw ShapeError("linear: expected rank-2 tensors");
  if (x.dim(1) != w.dim(1)) throw ShapeError("linear: inner dimension mismatch");
  const int64_t b = x.dim(0), dout = w.dim(0);
  if (bias && bias->dim(0) != dout) throw ShapeError("linear: bias shape mismatch");
  TensorT<T> out({b, dout});
  Eigen::Map<const MatRM<T>> xm(x.ptr(), b, x.dim(1));
  Eigen::Map<const MatRM<T>> wm(w.ptr(), dout, w.dim(1));
  Eigen::Map<MatRM<T>> om(out.ptr(), b, dout);
  om.noalias() = xm * wm.transpose();
  if (bias)
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < dout; ++j) out(i, j) += (*bias)[j];
  return out;
}

template <typename T>
struct LinearGrads {
  TensorT<T> input, weights, bias;
};

template <typename T>
LinearGrads<T> linear_backward(const TensorT<T>& grad_out, const TensorT<T>& x,
                               const TensorT<T>& w) {
  const int64_t b = x.dim(0), din = x.dim(1), dout = w.dim(0);
  if (grad_out.dim(0) != b || grad_out.dim(1) != dout)
    throw ShapeError("linear_backward: grad shape mismatch");
  LinearGrads<T> g{TensorT<T>({b, din}), TensorT<T>({dout, din}), TensorT<T>({dout})};
  Eigen::Map<const MatRM<T>> gym(grad_out.ptr(), b, dout);
  Eigen::Map<const MatRM<T>> xm(x.ptr(), b, din);
  Eigen::Map<const MatRM<T>> wm(w.ptr(), dout, din);
  Eigen::Map<MatRM<T>> gxm(g.input.ptr(), b, din);
  Eigen::Map<MatRM<T>> gwm(g.weights.ptr(), dout, din);
  gxm.noalias() = gym * wm;
  gwm.noalias() = gym.transpose() * xm;
  for (int64_t j = 0; j < dout; ++j) g.bias[j] = gym.col(j).sum();
  return g;
}

// ---------------------------------------------------------------------------
// classification loss

template <typename T>
struct SceResult {
  T loss;
  TensorT<T> grad_logits;  // (softmax - onehot) / batch
};

// Mean negative log softmax probability of the true class, stabilized by
// max subtraction.
template <typename T>
SceResult<T> softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be (b,C)");
  const int64_t b = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != b)
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  SceResult<T> res{T(0), TensorT<T>(logits.shape)};
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    const int label = labels[static_cast<size_t>(i)];
    if (label < 0 || label >= classes) throw LabelError("softmax_cross_entropy: label out of range");
    const T* row = logits.ptr() + i * classes;
    T mx = row[0];
    for (int64_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < classes; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const double log_denom = std::log(denom);
    total += log_denom - static_cast<double>(row[label] - mx);
    T* grow = res.grad_logits.ptr() + i * classes;
    for (int64_t j = 0; j < classes; ++j) {
      const double p = std::exp(static_cast<double>(row[j] - mx)) / denom;
      grow[j] = static_cast<T>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(b));
    }
  }
  res.loss = static_cast<T>(total / static_cast<double>(b));
  return res;
}

}  // namespace lgnn
