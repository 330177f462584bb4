#pragma once

// Layer primitives with explicit reverse-mode gradients. Activations are row-major
// matrices with one row per object; scene groups are contiguous blocks of `group` rows.
// Backward functions accumulate (+=) into parameter gradients and return input gradients.

#include "scenediff/common.hpp"

#include <string>
#include <vector>

namespace scenediff::nn {

template <typename S>
using Mat = MatrixX<S>;
template <typename S>
using MapMat = Eigen::Map<Mat<S>>;
template <typename S>
using CMapMat = Eigen::Map<const Mat<S>>;

// ---- parameter layout -------------------------------------------------------

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Ordered (name, shape, offset) list; offsets tile the flat array exactly.
class Manifest {
 public:
  int add(std::string name, int rows, int cols) {
    entries_.push_back({std::move(name), rows, cols, total_});
    total_ += entries_.back().size();
    return static_cast<int>(entries_.size()) - 1;
  }
  const std::vector<TensorSpec>& entries() const { return entries_; }
  const TensorSpec& operator[](int i) const { return entries_[static_cast<std::size_t>(i)]; }
  std::size_t total() const { return total_; }

 private:
  std::vector<TensorSpec> entries_;
  std::size_t total_ = 0;
};

template <typename S>
MapMat<S> view(std::vector<S>& flat, const TensorSpec& t) {
  return MapMat<S>(flat.data() + t.offset, t.rows, t.cols);
}
template <typename S>
CMapMat<S> view(const std::vector<S>& flat, const TensorSpec& t) {
  return CMapMat<S>(flat.data() + t.offset, t.rows, t.cols);
}

// ---- linear -----------------------------------------------------------------

template <typename S>
Mat<S> linear(const Mat<S>& x, const CMapMat<S>& w, const CMapMat<S>& b) {
  Mat<S> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const CMapMat<S>& w, const Mat<S>& dy, MapMat<S> dw, MapMat<S> db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

// ---- SiLU -------------------------------------------------------------------

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
Mat<S> silu(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return v * sigmoid(v); });
}

template <typename S>
Mat<S> silu_backward(const Mat<S>& x, const Mat<S>& dy) {
  return dy.binaryExpr(x, [](S g, S v) {
    const S s = sigmoid(v);
    return g * s * (S(1) + v * (S(1) - s));
  });
}

// ---- layer norm (per row) ---------------------------------------------------

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;
  VectorX<S> rstd;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const CMapMat<S>& gain, const CMapMat<S>& bias, LayerNormCache<S>& c,
                  S eps = S(1e-5)) {
  const auto n = x.cols();
  c.xhat.resize(x.rows(), n);
  c.rstd.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().sum() / S(n);
    c.rstd(i) = S(1) / std::sqrt(var + eps);
    c.xhat.row(i) = (x.row(i).array() - mean) * c.rstd(i);
  }
  Mat<S> y = c.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const LayerNormCache<S>& c, const CMapMat<S>& gain, const Mat<S>& dy, MapMat<S> dgain,
                           MapMat<S> dbias) {
  dgain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * gain.row(0).array();
  const S n = S(dy.cols());
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const S m1 = dxhat.row(i).mean();
    const S m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).sum() / n;
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

// ---- 1D convolution along the object axis -------------------------------------
// Kernel taps are stacked vertically in w: shape (kernel * cin) x cout. Zero "same" padding
// inside each group of `group` rows.

template <typename S>
Mat<S> im2col(const Mat<S>& x, int group, int kernel) {
  const int half = kernel / 2;
  const auto cin = x.cols();
  Mat<S> cols = Mat<S>::Zero(x.rows(), cin * kernel);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int g0 = static_cast<int>(r / group) * group;
    const int pos = static_cast<int>(r) - g0;
    for (int j = 0; j < kernel; ++j) {
      const int src = pos + j - half;
      if (src >= 0 && src < group) cols.block(r, j * cin, 1, cin) = x.row(g0 + src);
    }
  }
  return cols;
}

template <typename S>
Mat<S> col2im(const Mat<S>& dcols, int group, int kernel, Eigen::Index cin) {
  const int half = kernel / 2;
  Mat<S> dx = Mat<S>::Zero(dcols.rows(), cin);
  for (Eigen::Index r = 0; r < dcols.rows(); ++r) {
    const int g0 = static_cast<int>(r / group) * group;
    const int pos = static_cast<int>(r) - g0;
    for (int j = 0; j < kernel; ++j) {
      const int src = pos + j - half;
      if (src >= 0 && src < group) dx.row(g0 + src) += dcols.block(r, j * cin, 1, cin);
    }
  }
  return dx;
}

// ---- multi-head scaled dot-product attention ----------------------------------
// Queries come in groups of qgroup rows, keys/values in matching groups of kgroup rows
// (kgroup may differ per group for cross-attention; pass explicit offsets then).

template <typename S>
struct AttentionCache {
  std::vector<Mat<S>> weights;  ///< per (group, head): nq x nk softmax rows
};

struct GroupSpan {
  Eigen::Index q0, nq, k0, nk;
};

template <typename S>
Mat<S> attention(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads, const std::vector<GroupSpan>& groups,
                 AttentionCache<S>& cache) {
  const Eigen::Index width = q.cols();
  const Eigen::Index dh = width / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  Mat<S> out = Mat<S>::Zero(q.rows(), width);
  cache.weights.assign(groups.size() * static_cast<std::size_t>(heads), Mat<S>());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& sp = groups[g];
    if (sp.nk == 0) continue;
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.block(sp.q0, h * dh, sp.nq, dh);
      const auto kh = k.block(sp.k0, h * dh, sp.nk, dh);
      const auto vh = v.block(sp.k0, h * dh, sp.nk, dh);
      Mat<S> a = (qh * kh.transpose()) * scale;
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const S m = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - m).exp();
        a.row(i) /= a.row(i).sum();
      }
      out.block(sp.q0, h * dh, sp.nq, dh).noalias() = a * vh;
      cache.weights[g * heads + h] = std::move(a);
    }
  }
  return out;
}

template <typename S>
void attention_backward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads,
                        const std::vector<GroupSpan>& groups, const AttentionCache<S>& cache, const Mat<S>& dout,
                        Mat<S>& dq, Mat<S>& dk, Mat<S>& dv) {
  const Eigen::Index width = q.cols();
  const Eigen::Index dh = width / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  dq = Mat<S>::Zero(q.rows(), width);
  dk = Mat<S>::Zero(k.rows(), width);
  dv = Mat<S>::Zero(v.rows(), width);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& sp = groups[g];
    if (sp.nk == 0) continue;
    for (int h = 0; h < heads; ++h) {
      const Mat<S>& a = cache.weights[g * heads + h];
      const auto qh = q.block(sp.q0, h * dh, sp.nq, dh);
      const auto kh = k.block(sp.k0, h * dh, sp.nk, dh);
      const auto vh = v.block(sp.k0, h * dh, sp.nk, dh);
      const auto doh = dout.block(sp.q0, h * dh, sp.nq, dh);
      dv.block(sp.k0, h * dh, sp.nk, dh).noalias() += a.transpose() * doh;
      const Mat<S> da = doh * vh.transpose();
      Mat<S> ds = a.array() * (da.array().colwise() - (da.array() * a.array()).rowwise().sum());
      ds *= scale;
      dq.block(sp.q0, h * dh, sp.nq, dh).noalias() += ds * kh;
      dk.block(sp.k0, h * dh, sp.nk, dh).noalias() += ds.transpose() * qh;
    }
  }
}

/// Sinusoidal embedding of a diffusion step (sin half, then cos half).
template <typename S>
VectorX<S> timestep_embedding(int t, int dim) {
  VectorX<S> e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(i) = static_cast<S>(std::sin(t * freq));
    e(half + i) = static_cast<S>(std::cos(t * freq));
  }
  if (dim % 2) e(dim - 1) = S(0);
  return e;
}

}  // namespace scenediff::nn
