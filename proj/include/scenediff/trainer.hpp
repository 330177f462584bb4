#pragma once

// Minibatch training of the noise predictor: per-scene step sampling, noise-prediction +
// IoU objective, Adam with step-decayed learning rate, and a finite-difference audit.

#include "scenediff/denoiser.hpp"
#include "scenediff/objectives.hpp"

#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace scenediff {

struct TrainConfig {
  int batch_size = 32;
  int steps = 20000;
  double lr_init = 2e-4;
  double lr_decay = 0.5;
  int lr_decay_interval = 3000;
  std::uint64_t seed = 0;
  double lambda_iou = 1.0;
  double iou_sharpness = 10.0;
  int eval_interval = 1000;
  int checkpoint_interval = 5000;
  int log_interval = 50;
  int threads = 1;

  void validate() const {
    if (batch_size < 1 || steps < 1 || lr_init <= 0 || lr_decay_interval < 1 || eval_interval < 1 ||
        checkpoint_interval < 1 || log_interval < 1 || threads < 1)
      throw ConfigError("training parameters must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (lambda_iou < 0 || iou_sharpness <= 0) throw ConfigError("lambda_iou >= 0 and iou_sharpness > 0 required");
  }
};

/// Learning rate after `step` completed updates.
inline double learning_rate(const TrainConfig& c, long step) {
  return c.lr_init * std::pow(c.lr_decay, static_cast<double>(step / c.lr_decay_interval));
}

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct TrainState {
  long step = 0;
  std::vector<S> m;
  std::vector<S> v;
  double lr = 0.0;
  Rng rng;
  double avg_sce = 0.0;  ///< exponential moving averages (0.98)
  double avg_iou = 0.0;

  static TrainState fresh(std::size_t params, const TrainConfig& c) {
    TrainState s;
    s.m.assign(params, S(0));
    s.v.assign(params, S(0));
    s.lr = c.lr_init;
    s.rng = Rng(c.seed);
    return s;
  }
};

/// One clean scene and, for text models, its prompt tokens.
struct TrainExample {
  SceneTensor x0;
  std::vector<int> tokens;
};

template <typename S>
struct BatchGradient {
  LossBreakdown loss;  ///< batch means
  std::vector<S> grads;
};

/// Loss and parameter gradient for fixed steps and noises. Losses are batch means.
template <typename S>
BatchGradient<S> batch_gradient(const DenoiserModel<S>& model, std::span<const TrainExample* const> batch,
                                std::span<const int> steps, std::span<const Matrix> noises, const NoiseSchedule& sched,
                                const NormalizationSpec& spec, double lambda_iou, double sharpness,
                                double scale = -1.0) {
  const int B = static_cast<int>(batch.size());
  const int N = model.config.N, D = model.config.D();
  if (scale < 0) scale = 1.0 / B;
  DenoiserInput<S> in;
  in.x.resize(Eigen::Index(B) * N, D);
  Matrix xt_all(Eigen::Index(B) * N, D);
  const bool text = model.config.text();
  for (int b = 0; b < B; ++b) {
    const Matrix xt = q_sample_with_noise(batch[b]->x0, steps[b], noises[b], sched);
    xt_all.middleRows(b * N, N) = xt;
    in.steps.push_back(steps[b]);
    if (text) in.tokens.push_back(batch[b]->tokens);
  }
  in.x = xt_all.cast<S>();
  DenoiserCache<S> cache;
  const MatrixX<S> eps_hat = forward(model, in, &cache);

  BatchGradient<S> out;
  Matrix dout(Eigen::Index(B) * N, D);
  for (int b = 0; b < B; ++b) {
    const auto eh = eps_hat.middleRows(b * N, N);
    const SliceLosses sl = loss_sce(noises[b], eh, spec.layout);
    out.loss.l_bbox += sl.bbox * scale;
    out.loss.l_class += sl.cls * scale;
    out.loss.l_code += sl.code * scale;
    dout.middleRows(b * N, N) = loss_sce_grad(noises[b], eh, spec.layout, scale);
    if (lambda_iou > 0) {
      const int t = steps[b];
      const Matrix ehd = eh.template cast<double>();
      const Matrix x0t = estimate_x0(xt_all.middleRows(b * N, N), ehd, t, sched);
      const IouLoss iou = loss_iou(x0t, t, sched, spec, sharpness);
      out.loss.l_iou += iou.value * scale;
      const double dx0_deps = -std::sqrt(1.0 - sched.alpha_bar[t]) / std::sqrt(sched.alpha_bar[t]);
      dout.middleRows(b * N, N) += (lambda_iou * scale * dx0_deps) * iou.grad;
    }
  }
  out.loss.total = out.loss.sce() + lambda_iou * out.loss.l_iou;
  out.loss.t = B > 0 ? steps[0] : 0;
  out.grads = backward(model, cache, MatrixX<S>(dout.cast<S>())).params;
  return out;
}

/// Adam update with bias correction; increments nothing but the moments.
template <typename S>
void adam_update(std::vector<S>& params, const std::vector<S>& grads, TrainState<S>& st, long t,
                 const AdamSettings& a = {}) {
  const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(t));
  const S b1 = static_cast<S>(a.beta1), b2 = static_cast<S>(a.beta2);
  const S step = static_cast<S>(st.lr / c1);
  const S rc2 = static_cast<S>(1.0 / std::sqrt(c2));
  const S eps = static_cast<S>(a.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const S g = grads[i];
    st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (S(1) - b2) * g * g;
    params[i] -= step * st.m[i] / (std::sqrt(st.v[i]) * rc2 + eps);
  }
}

/// Draws one step and one noise tensor per scene, computes the objective and applies one
/// Adam update. The batch is split into `threads` contiguous shards whose gradients are
/// summed in shard order.
template <typename S>
LossBreakdown train_step(DenoiserModel<S>& model, TrainState<S>& st, std::span<const TrainExample* const> batch,
                         const NoiseSchedule& sched, const NormalizationSpec& spec, const TrainConfig& cfg) {
  if (batch.empty()) throw PreconditionError("empty training batch");
  const int B = static_cast<int>(batch.size());
  const int N = model.config.N, D = model.config.D();
  std::vector<int> steps(static_cast<std::size_t>(B));
  std::vector<Matrix> noises(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    steps[b] = st.rng.uniform_int(1, sched.T);
    noises[b] = gaussian_like(N, D, st.rng);
  }
  const int shards = std::min(cfg.threads, B);
  std::vector<BatchGradient<S>> parts(static_cast<std::size_t>(shards));
  parallel_for(shards, shards, [&](int w) {
    const int begin = B * w / shards, end = B * (w + 1) / shards;
    parts[w] = batch_gradient(model, batch.subspan(begin, end - begin),
                              std::span<const int>(steps).subspan(begin, end - begin),
                              std::span<const Matrix>(noises).subspan(begin, end - begin), sched, spec,
                              cfg.lambda_iou, cfg.iou_sharpness, 1.0 / B);
  });
  LossBreakdown loss;
  std::vector<S> grads = std::move(parts[0].grads);
  loss = parts[0].loss;
  for (int w = 1; w < shards; ++w) {
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += parts[w].grads[i];
    loss.l_bbox += parts[w].loss.l_bbox;
    loss.l_class += parts[w].loss.l_class;
    loss.l_code += parts[w].loss.l_code;
    loss.l_iou += parts[w].loss.l_iou;
  }
  loss.total = loss.sce() + cfg.lambda_iou * loss.l_iou;
  loss.t = steps[0];
  if (!std::isfinite(loss.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << st.step << " (t=" << steps[0] << ", bbox=" << loss.l_bbox
       << ", class=" << loss.l_class << ", code=" << loss.l_code << ", iou=" << loss.l_iou << ")";
    throw DivergenceError(os.str());
  }
  st.lr = learning_rate(cfg, st.step);
  adam_update(model.params, grads, st, st.step + 1);
  ++st.step;
  st.lr = learning_rate(cfg, st.step);
  const double k = st.step == 1 ? 0.0 : 0.98;
  st.avg_sce = k * st.avg_sce + (1 - k) * loss.sce();
  st.avg_iou = k * st.avg_iou + (1 - k) * loss.l_iou;
  return loss;
}

/// Samples a batch (with replacement) from the dataset using the state's stream.
template <typename S>
std::vector<const TrainExample*> draw_batch(const std::vector<TrainExample>& data, TrainState<S>& st, int size) {
  std::vector<const TrainExample*> batch;
  batch.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i)
    batch.push_back(&data[static_cast<std::size_t>(st.rng.uniform_int(0, static_cast<int>(data.size()) - 1))]);
  return batch;
}

/// Runs training until st.step reaches `until_step`; `on_step` sees every loss.
template <typename S>
void train(DenoiserModel<S>& model, TrainState<S>& st, const std::vector<TrainExample>& data,
           const NoiseSchedule& sched, const NormalizationSpec& spec, const TrainConfig& cfg, long until_step,
           const std::function<void(const TrainState<S>&, const LossBreakdown&)>& on_step = {}) {
  if (data.empty()) throw PreconditionError("empty training set");
  while (st.step < until_step) {
    const auto batch = draw_batch(data, st, cfg.batch_size);
    const LossBreakdown loss = train_step<S>(model, st, batch, sched, spec, cfg);
    if (on_step) on_step(st, loss);
  }
}

// ---- gradient audit --------------------------------------------------------------

struct AuditReport {
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
  struct Coord {
    std::size_t index;
    std::string tensor;
    double analytic, numeric, rel;
  };
  std::vector<Coord> worst;  ///< up to 5, descending error
};

struct AuditOptions {
  bool single_precision = false;  ///< analytic gradients in 32-bit (threshold 1e-3)
  int coords = 200;
  bool zero_heads = false;  ///< keep the zero-initialized prediction heads
  std::function<void(std::vector<double>&)> corrupt;  ///< test hook applied to analytic grads
};

/// Finite-difference check of the full training objective (noise loss + IoU loss) with respect
/// to a random subset of parameters of a small model.
inline AuditReport gradient_audit(const DenoiserConfig& config, const NoiseSchedule& sched, Rng& rng,
                                  const AuditOptions& opt = {}) {
  auto model = init_model<double>(config, rng);
  if (!opt.zero_heads)
    for (const auto& e : model.manifest().entries())
      if (e.name.starts_with("head.")) {
        auto v = nn::view(model.params, e);
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-0.3, 0.3);
      }
  const NormalizationSpec spec = NormalizationSpec::for_layout({config.N, config.L, config.F});
  std::vector<TrainExample> data(2);
  for (auto& ex : data) {
    ex.x0 = gaussian_like(config.N, config.D(), rng) * 0.5;
    if (config.text()) ex.tokens = {0, rng.uniform_int(1, config.vocab - 1)};
  }
  const std::vector<const TrainExample*> batch{&data[0], &data[1]};
  const std::vector<int> steps{rng.uniform_int(1, sched.T / 10 + 1), rng.uniform_int(1, sched.T)};
  const std::vector<Matrix> noises{gaussian_like(config.N, config.D(), rng), gaussian_like(config.N, config.D(), rng)};
  const double lambda = 1.0, sharp = 10.0;

  std::vector<double> analytic;
  if (opt.single_precision) {
    const auto m32 = model.cast<float>();
    const auto g = batch_gradient<float>(m32, batch, steps, noises, sched, spec, lambda, sharp);
    analytic.assign(g.grads.begin(), g.grads.end());
  } else {
    analytic = batch_gradient<double>(model, batch, steps, noises, sched, spec, lambda, sharp).grads;
  }
  if (opt.corrupt) opt.corrupt(analytic);

  auto objective = [&] {
    return batch_gradient<double>(model, batch, steps, noises, sched, spec, lambda, sharp).loss.total;
  };
  AuditReport rep;
  rep.threshold = opt.single_precision ? 1e-3 : 1e-4;
  std::vector<AuditReport::Coord> all;
  const double h = 1e-5;
  for (int i = 0; i < opt.coords; ++i) {
    const std::size_t idx = rng.next_u64() % model.params.size();
    const double saved = model.params[idx];
    model.params[idx] = saved + h;
    const double up = objective();
    model.params[idx] = saved - h;
    const double down = objective();
    model.params[idx] = saved;
    const double numeric = (up - down) / (2 * h);
    const double floor = opt.single_precision ? 1e-4 : 1e-6;
    const double rel =
        std::abs(analytic[idx] - numeric) / std::max({std::abs(analytic[idx]), std::abs(numeric), floor});
    std::string name;
    for (const auto& e : model.manifest().entries())
      if (idx >= e.offset && idx < e.offset + e.size()) name = e.name;
    all.push_back({idx, name, analytic[idx], numeric, rel});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.rel > b.rel; });
  rep.max_rel_error = all.empty() ? 0.0 : all.front().rel;
  all.resize(std::min<std::size_t>(all.size(), 5));
  rep.worst = all;
  rep.passed = rep.max_rel_error < rep.threshold;
  return rep;
}

}  // namespace scenediff
