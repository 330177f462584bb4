#pragma once

// Gaussian diffusion over scene tensors: linear noise schedule, closed-form forward
// corruption, the noise-parametrized reverse mean and ancestral sampling.
// Step indices run 1..T; index 0 of every table denotes the clean signal.

#include "scenediff/common.hpp"

#include <concepts>
#include <span>
#include <string>
#include <vector>

namespace scenediff {

struct NoiseSchedule {
  int T = 0;
  // All tables have T + 1 entries; entry 0 is the clean signal (alpha_bar = 1).
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma2;  ///< posterior variance; sigma2[1] = beta[1]

  double sigma(int t) const { return std::sqrt(sigma2[static_cast<std::size_t>(t)]); }

  void check_step(int t) const {
    if (t < 1 || t > T) throw RangeError("step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }

  static NoiseSchedule from_betas(const std::vector<double>& betas) {
    if (betas.empty()) throw ConfigError("schedule needs at least one step");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.beta.assign(betas.size() + 1, 0.0);
    s.alpha.assign(betas.size() + 1, 1.0);
    s.alpha_bar.assign(betas.size() + 1, 1.0);
    s.sigma2.assign(betas.size() + 1, 0.0);
    for (int t = 1; t <= s.T; ++t) {
      const double b = betas[static_cast<std::size_t>(t - 1)];
      if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta values must lie in (0, 1)");
      s.beta[t] = b;
      s.alpha[t] = 1.0 - b;
      s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
      s.sigma2[t] = t == 1 ? b : (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * b;
    }
    return s;
  }
};

/// Linear beta schedule from beta_start (t = 1) to beta_end (t = T).
inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) betas[t - 1] = beta_start + (beta_end - beta_start) * (t - 1) / double(T - 1);
  return NoiseSchedule::from_betas(betas);
}

struct DiffusionSample {
  Matrix x_t;
  int t = 0;
  Matrix eps;
};

inline Matrix gaussian_like(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.gaussian();
  return m;
}

inline Matrix q_sample_with_noise(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& s) {
  s.check_step(t);
  const double ab = s.alpha_bar[t];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

/// Draws x_t ~ q(x_t | x_0) and returns the noise that produced it.
inline DiffusionSample q_sample(const Matrix& x0, int t, const NoiseSchedule& s, Rng& rng) {
  s.check_step(t);
  DiffusionSample out;
  out.t = t;
  out.eps = gaussian_like(x0.rows(), x0.cols(), rng);
  out.x_t = q_sample_with_noise(x0, t, out.eps, s);
  return out;
}

/// Mean of p(x_{t-1} | x_t) with the noise estimate substituted for the true noise.
inline Matrix posterior_mean(const Matrix& x_t, const Matrix& eps_hat, int t, const NoiseSchedule& s) {
  s.check_step(t);
  if (x_t.rows() != eps_hat.rows() || x_t.cols() != eps_hat.cols()) throw RangeError("shape mismatch");
  const double coef = s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
  return (x_t - coef * eps_hat) / std::sqrt(s.alpha[t]);
}

/// One-shot clean-signal estimate from x_t and a noise estimate.
inline Matrix estimate_x0(const Matrix& x_t, const Matrix& eps_hat, int t, const NoiseSchedule& s) {
  s.check_step(t);
  if (x_t.rows() != eps_hat.rows() || x_t.cols() != eps_hat.cols()) throw RangeError("shape mismatch");
  const double ab = s.alpha_bar[t];
  return (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

enum class ConditionMode { none, completion, rearrangement, text };

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// What the sampler holds fixed and what the denoiser attends to.
struct ConditionSpec {
  ConditionMode mode = ConditionMode::none;
  BoolMatrix mask;          ///< N x D, true where entries are observed; may be empty for none/text
  Matrix observed;          ///< N x D clean values for masked entries
  std::vector<int> tokens;  ///< text mode only

  bool has_mask() const { return mask.size() > 0 && mask.any(); }
  /// Completion re-noises observations to the current step; re-arrangement pins clean values.
  bool noise_observed() const { return mode == ConditionMode::completion; }
};

/// Anything that predicts the noise for a stack of scenes at a common step.
/// `x` holds `scenes` blocks of equal row count stacked vertically.
template <class P>
concept NoisePredictor = requires(const P& p, const Matrix& x, int t, std::span<const ConditionSpec> c) {
  { p.predict_noise(x, t, c) } -> std::convertible_to<Matrix>;
};

struct SamplerOptions {
  bool stochastic = true;           ///< false forces sigma_t = 0 (deterministic given x_T)
  const Matrix* initial = nullptr;  ///< stacked x_T override
};

namespace detail {
inline void apply_condition(Eigen::Block<Matrix> block, const ConditionSpec& c, int t, const NoiseSchedule& s,
                            Rng& rng) {
  if (!c.has_mask()) return;
  Matrix target = c.observed;
  if (c.noise_observed() && t > 0) target = q_sample(c.observed, t, s, rng).x_t;
  for (Eigen::Index i = 0; i < block.rows(); ++i)
    for (Eigen::Index j = 0; j < block.cols(); ++j)
      if (c.mask(i, j)) block(i, j) = target(i, j);
}
}  // namespace detail

/// Ancestral sampling for a batch of scenes of shape rows x cols each.
/// x_T ~ N(0, I); x_{t-1} = mu(x_t, eps_hat) + sigma_t z with z = 0 at t = 1.
/// Masked entries of each condition are overwritten after every step.
template <NoisePredictor P>
std::vector<Matrix> ancestral_sample_batch(const P& model, const NoiseSchedule& s, int rows, int cols,
                                           std::span<const ConditionSpec> conds, Rng& rng,
                                           const SamplerOptions& opt = {}) {
  const int B = static_cast<int>(conds.size());
  Matrix x = opt.initial ? *opt.initial : gaussian_like(Eigen::Index(B) * rows, cols, rng);
  if (x.rows() != Eigen::Index(B) * rows || x.cols() != cols) throw RangeError("initial state shape mismatch");
  for (int b = 0; b < B; ++b) detail::apply_condition(x.block(b * rows, 0, rows, cols), conds[b], s.T, s, rng);

  for (int t = s.T; t >= 1; --t) {
    const Matrix eps_hat = model.predict_noise(x, t, conds);
    Matrix next = posterior_mean(x, eps_hat, t, s);
    if (t > 1 && opt.stochastic) next += s.sigma(t) * gaussian_like(next.rows(), next.cols(), rng);
    if (!next.allFinite()) throw DivergenceError("non-finite sample state at t=" + std::to_string(t));
    for (int b = 0; b < B; ++b) detail::apply_condition(next.block(b * rows, 0, rows, cols), conds[b], t - 1, s, rng);
    x = std::move(next);
  }
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) out.push_back(x.block(b * rows, 0, rows, cols));
  return out;
}

template <NoisePredictor P>
Matrix ancestral_sample(const P& model, const NoiseSchedule& s, int rows, int cols, const ConditionSpec& cond,
                        Rng& rng, const SamplerOptions& opt = {}) {
  return ancestral_sample_batch(model, s, rows, cols, std::span<const ConditionSpec>(&cond, 1), rng, opt).front();
}

}  // namespace scenediff
