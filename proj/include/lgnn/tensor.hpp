#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lgnn/errors.hpp"

namespace lgnn {

// Dense row-major n-d array. The last axis is fastest. Values are immutable
// by convention once an op has produced them; ops return fresh tensors.
template <typename T>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<T> data;

  TensorT() = default;

  explicit TensorT(std::vector<int64_t> s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<size_t>(checked_numel(shape)), fill) {}

  TensorT(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor: shape does not match buffer length");
  }

  static int64_t checked_numel(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t e : s) {
      if (e <= 0) throw ShapeError("tensor: extents must be positive");
      n *= e;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  T& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& operator()(int64_t i, int64_t j) const {
    return data[static_cast<size_t>(i * shape[1] + j)];
  }

  T& operator()(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& operator()(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  T& operator()(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  const T& operator()(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Reinterprets the shape without touching the buffer.
template <typename T>
TensorT<T> reshape(const TensorT<T>& t, std::vector<int64_t> new_shape) {
  if (TensorT<T>::checked_numel(new_shape) != t.size())
    throw ShapeError("reshape: element count mismatch " + t.shape_str());
  return TensorT<T>(std::move(new_shape), t.data);
}

// Extends a 2-d field by repeating its edge values on all four sides.
template <typename T>
TensorT<T> pad_replicate_2d(const TensorT<T>& t, int pad) {
  if (t.rank() != 2) throw ShapeError("pad_replicate_2d: expected rank-2 tensor, got " + t.shape_str());
  if (pad < 0) throw ShapeError("pad_replicate_2d: negative pad");
  const int64_t h = t.dim(0), w = t.dim(1);
  if (pad == 0) return t;
  TensorT<T> out({h + 2 * pad, w + 2 * pad});
  for (int64_t i = 0; i < h + 2 * pad; ++i) {
    const int64_t si = std::clamp<int64_t>(i - pad, 0, h - 1);
    for (int64_t j = 0; j < w + 2 * pad; ++j) {
      const int64_t sj = std::clamp<int64_t>(j - pad, 0, w - 1);
      out(i, j) = t(si, sj);
    }
  }
  return out;
}

namespace detail {

inline int64_t conv_extent(int64_t in, int64_t k, int stride, int zero_pad, const char* what) {
  const int64_t span = in + 2 * zero_pad - k;
  if (span < 0) throw ShapeError(std::string(what) + ": kernel does not fit padded input");
  if (span % stride != 0) throw ShapeError(std::string(what) + ": extent not divisible by stride");
  return span / stride + 1;
}

// Unrolls conv patches into a (c*kh*kw) x (oh*ow) row-major matrix.
// Out-of-range input positions contribute zeros.
template <typename T>
void im2col(const T* in, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
            int zero_pad, int64_t oh, int64_t ow, T* col) {
  const int64_t n = oh * ow;
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((ch * kh + ki) * kw + kj) * n;
        for (int64_t y = 0; y < oh; ++y) {
          const int64_t sy = y * stride + ki - zero_pad;
          if (sy < 0 || sy >= h) {
            std::fill(row + y * ow, row + (y + 1) * ow, T(0));
            continue;
          }
          const T* src = in + (ch * h + sy) * w;
          for (int64_t x = 0; x < ow; ++x) {
            const int64_t sx = x * stride + kj - zero_pad;
            row[y * ow + x] = (sx >= 0 && sx < w) ? src[sx] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add adjoint of im2col.
template <typename T>
void col2im(const T* col, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
            int zero_pad, int64_t oh, int64_t ow, T* in) {
  const int64_t n = oh * ow;
  std::fill(in, in + c * h * w, T(0));
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((ch * kh + ki) * kw + kj) * n;
        for (int64_t y = 0; y < oh; ++y) {
          const int64_t sy = y * stride + ki - zero_pad;
          if (sy < 0 || sy >= h) continue;
          T* dst = in + (ch * h + sy) * w;
          for (int64_t x = 0; x < ow; ++x) {
            const int64_t sx = x * stride + kj - zero_pad;
            if (sx >= 0 && sx < w) dst[sx] += row[y * ow + x];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation of a single (c,h,w) image with (c_out,c,kh,kw) weights.
// out[o,y,x] = bias[o] + sum_{c,i,j} in[c, y*stride+i-pad, x*stride+j-pad] * w[o,c,i,j]
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<std::type_identity_t<T>>* bias,
                  int stride, int zero_pad) {
  if (input.rank() != 3) throw ShapeError("conv2d: input must be (c,h,w), got " + input.shape_str());
  if (weights.rank() != 4) throw ShapeError("conv2d: weights must be (c_out,c_in,kh,kw)");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const int64_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int64_t co = weights.dim(0), ci = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
  if (ci != c) throw ShapeError("conv2d: channel mismatch");
  if (bias && (bias->rank() != 1 || bias->dim(0) != co))
    throw ShapeError("conv2d: bias must be (c_out)");
  const int64_t oh = detail::conv_extent(h, kh, stride, zero_pad, "conv2d");
  const int64_t ow = detail::conv_extent(w, kw, stride, zero_pad, "conv2d");

  const int64_t k = c * kh * kw, n = oh * ow;
  std::vector<T> col(static_cast<size_t>(k * n));
  detail::im2col(input.ptr(), c, h, w, kh, kw, stride, zero_pad, oh, ow, col.data());

  TensorT<T> out({co, oh, ow});
  Eigen::Map<const MatRM<T>> wm(weights.ptr(), co, k);
  Eigen::Map<const MatRM<T>> cm(col.data(), k, n);
  Eigen::Map<MatRM<T>> om(out.ptr(), co, n);
  om.noalias() = wm * cm;
  if (bias)
    for (int64_t o = 0; o < co; ++o) om.row(o).array() += (*bias)[o];
  return out;
}

template <typename T>
struct ConvGrads {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

// Exact adjoints of the conv2d contract.
template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                             const TensorT<T>& weights, int stride, int zero_pad) {
  if (grad_out.rank() != 3 || input.rank() != 3 || weights.rank() != 4)
    throw ShapeError("conv2d_backward: rank mismatch");
  const int64_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int64_t co = weights.dim(0), ci = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
  if (ci != c) throw ShapeError("conv2d_backward: channel mismatch");
  const int64_t oh = detail::conv_extent(h, kh, stride, zero_pad, "conv2d_backward");
  const int64_t ow = detail::conv_extent(w, kw, stride, zero_pad, "conv2d_backward");
  if (grad_out.dim(0) != co || grad_out.dim(1) != oh || grad_out.dim(2) != ow)
    throw ShapeError("conv2d_backward: grad_out shape inconsistent with forward call");

  const int64_t k = c * kh * kw, n = oh * ow;
  std::vector<T> col(static_cast<size_t>(k * n));
  detail::im2col(input.ptr(), c, h, w, kh, kw, stride, zero_pad, oh, ow, col.data());

  ConvGrads<T> g{TensorT<T>({c, h, w}), TensorT<T>({co, ci, kh, kw}), TensorT<T>({co})};

  Eigen::Map<const MatRM<T>> gom(grad_out.ptr(), co, n);
  Eigen::Map<const MatRM<T>> cm(col.data(), k, n);
  Eigen::Map<const MatRM<T>> wm(weights.ptr(), co, k);

  Eigen::Map<MatRM<T>> gwm(g.weights.ptr(), co, k);
  gwm.noalias() = gom * cm.transpose();

  for (int64_t o = 0; o < co; ++o) g.bias[o] = gom.row(o).sum();

  std::vector<T> gcol(static_cast<size_t>(k * n));
  Eigen::Map<MatRM<T>> gcm(gcol.data(), k, n);
  gcm.noalias() = wm.transpose() * gom;
  detail::col2im(gcol.data(), c, h, w, kh, kw, stride, zero_pad, oh, ow, g.input.ptr());
  return g;
}

// Batched conv used by the network layers; loops images through the same
// im2col buffer so training does not allocate per step.
template <typename T>
TensorT<T> conv2d_batch(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<std::type_identity_t<T>>* bias,
                        int stride, int zero_pad) {
  if (input.rank() != 4) throw ShapeError("conv2d_batch: input must be (b,c,h,w)");
  const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t co = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  if (weights.dim(1) != c) throw ShapeError("conv2d_batch: channel mismatch");
  const int64_t oh = detail::conv_extent(h, kh, stride, zero_pad, "conv2d_batch");
  const int64_t ow = detail::conv_extent(w, kw, stride, zero_pad, "conv2d_batch");

  const int64_t k = c * kh * kw, n = oh * ow;
  std::vector<T> col(static_cast<size_t>(k * n));
  TensorT<T> out({b, co, oh, ow});
  Eigen::Map<const MatRM<T>> wm(weights.ptr(), co, k);
  for (int64_t ib = 0; ib < b; ++ib) {
    detail::im2col(input.ptr() + ib * c * h * w, c, h, w, kh, kw, stride, zero_pad, oh, ow,
                   col.data());
    Eigen::Map<const MatRM<T>> cm(col.data(), k, n);
    Eigen::Map<MatRM<T>> om(out.ptr() + ib * co * n, co, n);
    om.noalias() = wm * cm;
    if (bias)
      for (int64_t o = 0; o < co; ++o) om.row(o).array() += (*bias)[o];
  }
  return out;
}

// Batched adjoint; weight/bias gradients accumulate over the batch.
template <typename T>
ConvGrads<T> conv2d_backward_batch(const TensorT<T>& grad_out, const TensorT<T>& input,
                                   const TensorT<T>& weights, int stride, int zero_pad) {
  const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t co = weights.dim(0), ci = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
  if (ci != c) throw ShapeError("conv2d_backward_batch: channel mismatch");
  const int64_t oh = detail::conv_extent(h, kh, stride, zero_pad, "conv2d_backward_batch");
  const int64_t ow = detail::conv_extent(w, kw, stride, zero_pad, "conv2d_backward_batch");
  if (grad_out.shape != std::vector<int64_t>{b, co, oh, ow})
    throw ShapeError("conv2d_backward_batch: grad_out shape inconsistent");

  const int64_t k = c * kh * kw, n = oh * ow;
  std::vector<T> col(static_cast<size_t>(k * n)), gcol(static_cast<size_t>(k * n));

  ConvGrads<T> g{TensorT<T>({b, c, h, w}), TensorT<T>({co, ci, kh, kw}), TensorT<T>({co})};
  Eigen::Map<const MatRM<T>> wm(weights.ptr(), co, k);
  Eigen::Map<MatRM<T>> gwm(g.weights.ptr(), co, k);
  gwm.setZero();
  for (int64_t ib = 0; ib < b; ++ib) {
    detail::im2col(input.ptr() + ib * c * h * w, c, h, w, kh, kw, stride, zero_pad, oh, ow,
                   col.data());
    Eigen::Map<const MatRM<T>> cm(col.data(), k, n);
    Eigen::Map<const MatRM<T>> gom(grad_out.ptr() + ib * co * n, co, n);
    gwm.noalias() += gom * cm.transpose();
    for (int64_t o = 0; o < co; ++o) g.bias[o] += gom.row(o).sum();
    Eigen::Map<MatRM<T>> gcm(gcol.data(), k, n);
    gcm.noalias() = wm.transpose() * gom;
    detail::col2im(gcol.data(), c, h, w, kh, kw, stride, zero_pad, oh, ow,
                   g.input.ptr() + ib * c * h * w);
  }
  return g;
}

}  // namespace lgnn
