#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "cmrt/tensor.hpp"

namespace cmrt::model {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using ConstRowMap = Eigen::Map<const RowVec>;
using RowMap = Eigen::Map<RowVec>;

/// Views a rank-2 tensor (or a rank-3 [out, in, k] conv weight as [out, in*k]).
inline ConstMatMap as_matrix(const Tensor& t) {
  const auto rows = static_cast<Eigen::Index>(t.dim(0));
  const auto cols = static_cast<Eigen::Index>(t.size() / t.dim(0));
  return ConstMatMap(t.data.data(), rows, cols);
}
inline MatMap as_matrix(Tensor& t) {
  const auto rows = static_cast<Eigen::Index>(t.dim(0));
  const auto cols = static_cast<Eigen::Index>(t.size() / t.dim(0));
  return MatMap(t.data.data(), rows, cols);
}
inline ConstRowMap as_row(const Tensor& t) { return ConstRowMap(t.data.data(), static_cast<Eigen::Index>(t.size())); }
inline RowMap as_row(Tensor& t) { return RowMap(t.data.data(), static_cast<Eigen::Index>(t.size())); }

// ---------------------------------------------------------------------------
// GELU (erf form)

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline Mat gelu(const Mat& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

inline Mat gelu_backward(const Mat& pre, const Mat& dy) {
  return dy.cwiseProduct(pre.unaryExpr([](double v) { return gelu_grad(v); }));
}

// ---------------------------------------------------------------------------
// Linear: y = x W^T + b, x [T x in], W [out x in]

inline Mat linear(const Mat& x, const Tensor& w, const Tensor& b) {
  Mat y = x * as_matrix(w).transpose();
  y.rowwise() += as_row(b);
  return y;
}

/// Accumulates dW, db and returns dx.
inline Mat linear_backward(const Mat& x, const Tensor& w, const Mat& dy, Tensor& dw, Tensor& db) {
  as_matrix(dw).noalias() += dy.transpose() * x;
  as_row(db) += dy.colwise().sum();
  return dy * as_matrix(w);
}

// ---------------------------------------------------------------------------
// Row-wise layer normalization

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Mat xhat;
  Vec inv_std;
};

inline Mat layer_norm(const Mat& x, const Tensor& gain, const Tensor& bias, LayerNormCache& cache) {
  const auto d = static_cast<double>(x.cols());
  cache.xhat.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / d;
    const RowVec centred = x.row(r).array() - mean;
    const double var = centred.squaredNorm() / d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(r) = inv;
    cache.xhat.row(r) = centred * inv;
  }
  Mat y = cache.xhat.array().rowwise() * as_row(gain).array();
  y.rowwise() += as_row(bias);
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const Tensor& gain, const LayerNormCache& cache, Tensor& dgain,
                               Tensor& dbias) {
  as_row(dgain) += (dy.cwiseProduct(cache.xhat)).colwise().sum();
  as_row(dbias) += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * as_row(gain).array();
  const auto d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).sum() / d;
    const double m2 = dxhat.row(r).dot(cache.xhat.row(r)) / d;
    dx.row(r) = (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2) * cache.inv_std(r);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Strided 1-D convolution with "same" padding. Input and output are
// channel-major [channels x length]; length must be a multiple of stride, and
// the output has length / stride columns.

struct ConvCache {
  Mat cols;  // [(in * kernel) x out_len]
  std::size_t in_len = 0;
};

inline Mat conv1d(const Mat& x, const Tensor& w, const Tensor& b, std::size_t stride, ConvCache& cache) {
  const std::size_t in_ch = w.dim(1), kernel = w.dim(2);
  const auto in_len = static_cast<std::size_t>(x.cols());
  const std::size_t out_len = in_len / stride;
  const long pad_left = static_cast<long>((kernel - stride) / 2);
  cache.in_len = in_len;
  cache.cols.setZero(static_cast<Eigen::Index>(in_ch * kernel), static_cast<Eigen::Index>(out_len));
  for (std::size_t c = 0; c < in_ch; ++c) {
    for (std::size_t j = 0; j < kernel; ++j) {
      auto dst = cache.cols.row(static_cast<Eigen::Index>(c * kernel + j));
      for (std::size_t t = 0; t < out_len; ++t) {
        const long src = static_cast<long>(t * stride + j) - pad_left;
        if (src >= 0 && src < static_cast<long>(in_len)) dst(static_cast<Eigen::Index>(t)) = x(c, src);
      }
    }
  }
  Mat y = as_matrix(w) * cache.cols;
  y.colwise() += as_row(b).transpose();
  return y;
}

inline Mat conv1d_backward(const Mat& dy, const Tensor& w, std::size_t stride, const ConvCache& cache, Tensor& dw,
                           Tensor& db) {
  const std::size_t in_ch = w.dim(1), kernel = w.dim(2);
  const long pad_left = static_cast<long>((kernel - stride) / 2);
  as_matrix(dw).noalias() += dy * cache.cols.transpose();
  as_row(db) += dy.rowwise().sum().transpose();
  const Mat dcols = as_matrix(w).transpose() * dy;
  Mat dx = Mat::Zero(static_cast<Eigen::Index>(in_ch), static_cast<Eigen::Index>(cache.in_len));
  const auto out_len = static_cast<std::size_t>(dy.cols());
  for (std::size_t c = 0; c < in_ch; ++c) {
    for (std::size_t j = 0; j < kernel; ++j) {
      const auto src_row = dcols.row(static_cast<Eigen::Index>(c * kernel + j));
      for (std::size_t t = 0; t < out_len; ++t) {
        const long src = static_cast<long>(t * stride + j) - pad_left;
        if (src >= 0 && src < static_cast<long>(cache.in_len)) dx(c, src) += src_row(static_cast<Eigen::Index>(t));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention (bidirectional)

struct AttentionCache {
  Mat x, q, k, v, concat;
  std::vector<Mat> probs;  // per head [T x T]
};

inline Mat attention(const Mat& x, const Tensor& wq, const Tensor& bq, const Tensor& wk, const Tensor& bk,
                     const Tensor& wv, const Tensor& bv, const Tensor& wo, const Tensor& bo, std::size_t n_heads,
                     AttentionCache& cache) {
  const Eigen::Index d = x.cols();
  const Eigen::Index dh = d / static_cast<Eigen::Index>(n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.x = x;
  cache.q = linear(x, wq, bq);
  cache.k = linear(x, wk, bk);
  cache.v = linear(x, wv, bv);
  cache.concat.resize(x.rows(), d);
  cache.probs.resize(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
    Mat s = (cache.q.middleCols(off, dh) * cache.k.middleCols(off, dh).transpose()) * scale;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp();
      s.row(r) /= s.row(r).sum();
    }
    cache.concat.middleCols(off, dh).noalias() = s * cache.v.middleCols(off, dh);
    cache.probs[h] = std::move(s);
  }
  return linear(cache.concat, wo, bo);
}

struct AttentionGrads {
  Tensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

inline Mat attention_backward(const Mat& dy, const Tensor& wq, const Tensor& wk, const Tensor& wv, const Tensor& wo,
                              std::size_t n_heads, const AttentionCache& cache, AttentionGrads g) {
  const Eigen::Index d = dy.cols();
  const Eigen::Index dh = d / static_cast<Eigen::Index>(n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat dconcat = linear_backward(cache.concat, wo, dy, *g.wo, *g.bo);
  Mat dq(dy.rows(), d), dk(dy.rows(), d), dv(dy.rows(), d);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
    const Mat& p = cache.probs[h];
    const Mat dout = dconcat.middleCols(off, dh);
    const Mat dp = dout * cache.v.middleCols(off, dh).transpose();
    dv.middleCols(off, dh).noalias() = p.transpose() * dout;
    Mat ds = p.cwiseProduct(dp);
    const Vec rs = ds.rowwise().sum();
    ds -= p.cwiseProduct(rs.replicate(1, p.cols()));
    ds *= scale;
    dq.middleCols(off, dh).noalias() = ds * cache.k.middleCols(off, dh);
    dk.middleCols(off, dh).noalias() = ds.transpose() * cache.q.middleCols(off, dh);
  }
  Mat dx = linear_backward(cache.x, wq, dq, *g.wq, *g.bq);
  dx += linear_backward(cache.x, wk, dk, *g.wk, *g.bk);
  dx += linear_backward(cache.x, wv, dv, *g.wv, *g.bv);
  return dx;
}

}  // namespace cmrt::model
