#pragma once

// Training losses: per-slice noise-prediction error and the alpha_bar-weighted pairwise
// IoU penalty on the one-shot clean-scene estimate.

#include "scenediff/diffusion.hpp"
#include "scenediff/geometry.hpp"
#include "scenediff/scene_model.hpp"

namespace scenediff {

struct LossBreakdown {
  double l_bbox = 0.0;
  double l_class = 0.0;
  double l_code = 0.0;
  double l_iou = 0.0;
  double total = 0.0;
  int t = 0;

  double sce() const { return l_bbox + l_class + l_code; }
};

struct SliceLosses {
  double bbox = 0.0, cls = 0.0, code = 0.0;
};

/// Mean squared error of each attribute slice, averaged over rows and slice width.
template <typename A, typename B>
SliceLosses loss_sce(const Eigen::MatrixBase<A>& eps, const Eigen::MatrixBase<B>& eps_hat, const SceneLayout& lay) {
  if (eps.rows() != eps_hat.rows() || eps.cols() != eps_hat.cols() || eps.cols() != lay.D())
    throw RangeError("loss_sce shape mismatch");
  const auto rows = static_cast<double>(eps.rows());
  auto mse = [&](int off, int width) {
    if (width == 0) return 0.0;
    return (eps.middleCols(off, width).template cast<double>() - eps_hat.middleCols(off, width).template cast<double>())
               .squaredNorm() /
           (rows * width);
  };
  return {mse(0, SceneLayout::kBboxDim), mse(lay.class_offset(), lay.L), mse(lay.code_offset(), lay.F)};
}

/// d(l_bbox + l_class + l_code) / d eps_hat, scaled by `weight`.
template <typename A, typename B>
Matrix loss_sce_grad(const Eigen::MatrixBase<A>& eps, const Eigen::MatrixBase<B>& eps_hat, const SceneLayout& lay,
                     double weight = 1.0) {
  Matrix g = 2.0 * (eps_hat.template cast<double>() - eps.template cast<double>());
  const auto rows = static_cast<double>(eps.rows());
  g.leftCols(SceneLayout::kBboxDim) /= rows * SceneLayout::kBboxDim;
  g.middleCols(lay.class_offset(), lay.L) /= rows * lay.L;
  if (lay.F > 0) g.middleCols(lay.code_offset(), lay.F) /= rows * lay.F;
  return weight * g;
}

struct IouLoss {
  double value = 0.0;
  Matrix grad;  ///< d value / d x0_tilde
};

constexpr double kIouStepWeight = 0.1;

/// 0.1 * alpha_bar_t * sum over unordered pairs of occupied rows of the smooth axis-aligned IoU
/// of the denormalized boxes. Rows whose class argmax is 'empty' are gated out (no gradient
/// through the gate).
inline IouLoss loss_iou(const Matrix& x0_tilde, int t, const NoiseSchedule& s, const NormalizationSpec& spec,
                        double sharpness = 10.0) {
  s.check_step(t);
  const SceneLayout& lay = spec.layout;
  IouLoss out;
  out.grad = Matrix::Zero(x0_tilde.rows(), x0_tilde.cols());
  const double w = kIouStepWeight * s.alpha_bar[t];
  std::vector<int> live;
  for (int i = 0; i < x0_tilde.rows(); ++i)
    if (decode_class(x0_tilde.row(i).transpose(), lay) != classes::empty) live.push_back(i);
  for (std::size_t a = 0; a < live.size(); ++a) {
    for (std::size_t b = a + 1; b < live.size(); ++b) {
      const int i = live[a], j = live[b];
      const Vec3 ci = x0_tilde.row(i).segment<3>(0).transpose().cwiseProduct(spec.location_scale);
      const Vec3 hi = x0_tilde.row(i).segment<3>(3).transpose().cwiseProduct(spec.size_scale);
      const Vec3 cj = x0_tilde.row(j).segment<3>(0).transpose().cwiseProduct(spec.location_scale);
      const Vec3 hj = x0_tilde.row(j).segment<3>(3).transpose().cwiseProduct(spec.size_scale);
      const SmoothIou r = smooth_aabb_iou(ci, hi, cj, hj, sharpness);
      out.value += w * r.value;
      out.grad.row(i).segment<3>(0) += w * r.d_center_a.cwiseProduct(spec.location_scale).transpose();
      out.grad.row(i).segment<3>(3) += w * r.d_half_a.cwiseProduct(spec.size_scale).transpose();
      out.grad.row(j).segment<3>(0) += w * r.d_center_b.cwiseProduct(spec.location_scale).transpose();
      out.grad.row(j).segment<3>(3) += w * r.d_half_b.cwiseProduct(spec.size_scale).transpose();
    }
  }
  return out;
}

}  // namespace scenediff
