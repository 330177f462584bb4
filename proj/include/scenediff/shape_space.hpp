#pragma once

// Shape space over 2D furniture footprints: parametric outline families, Chamfer distance,
// a small variational autoencoder (point MLP + max pooling encoder, circle-folding decoder),
// per-dimension code scaling to [-1, 1], and class-constrained nearest-prototype retrieval.

#include "scenediff/geometry.hpp"
#include "scenediff/nn_layers.hpp"
#include "scenediff/scene_model.hpp"
#include "scenediff/trainer.hpp"

#include <json.hpp>

#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace scenediff {

constexpr int kFootprintPoints = 64;
constexpr double kKlWeight = 0.001;

/// kFootprintPoints x 2, centroid at the origin, max |coordinate| = 1.
using Footprint = Matrix;

enum class FootprintFamily { rounded_rectangle, ellipse, l_shape };

inline std::string to_string(FootprintFamily f) {
  switch (f) {
    case FootprintFamily::rounded_rectangle: return "rounded_rectangle";
    case FootprintFamily::ellipse: return "ellipse";
    case FootprintFamily::l_shape: return "l_shape";
  }
  return "rounded_rectangle";
}

inline FootprintFamily footprint_family_from_string(const std::string& s) {
  if (s == "rounded_rectangle") return FootprintFamily::rounded_rectangle;
  if (s == "ellipse") return FootprintFamily::ellipse;
  if (s == "l_shape") return FootprintFamily::l_shape;
  throw DataError("unknown footprint family '" + s + "'");
}

struct FootprintParams {
  FootprintFamily family = FootprintFamily::rounded_rectangle;
  double aspect = 1.0;  ///< half-depth / half-width of the canonical outline
  double corner = 0.0;  ///< rounded rectangle: corner radius as a fraction of the shorter half-side
  double notch = 0.0;   ///< L-shape: removed corner as a fraction of each side
};

namespace detail {

inline std::vector<Point2> dense_outline(const FootprintParams& p) {
  const double hx = 1.0, hy = p.aspect;
  std::vector<Point2> pts;
  switch (p.family) {
    case FootprintFamily::ellipse:
      for (int i = 0; i < 720; ++i) {
        const double a = 2 * kPi * i / 720.0;
        pts.emplace_back(hx * std::cos(a), hy * std::sin(a));
      }
      break;
    case FootprintFamily::rounded_rectangle: {
      const double r = std::clamp(p.corner, 0.0, 1.0) * std::min(hx, hy);
      const Point2 centers[4] = {{hx - r, -hy + r}, {hx - r, hy - r}, {-hx + r, hy - r}, {-hx + r, -hy + r}};
      for (int c = 0; c < 4; ++c) {
        const double a0 = -kPi / 2 + c * kPi / 2;
        for (int i = 0; i <= 32; ++i) {
          const double a = a0 + (kPi / 2) * i / 32.0;
          pts.push_back(centers[c] + r * Point2(std::cos(a), std::sin(a)));
        }
      }
      break;
    }
    case FootprintFamily::l_shape: {
      const double nx = 2 * hx * std::clamp(p.notch, 0.05, 0.8), ny = 2 * hy * std::clamp(p.notch, 0.05, 0.8);
      pts = {{-hx, -hy}, {hx, -hy}, {hx, hy - ny}, {hx - nx, hy - ny}, {hx - nx, hy}, {-hx, hy}};
      break;
    }
  }
  return pts;
}

}  // namespace detail

/// Samples the outline at equal arc-length spacing, then centers and normalizes it.
inline Footprint make_footprint(const FootprintParams& p) {
  const auto poly = detail::dense_outline(p);
  std::vector<double> cum{0.0};
  for (std::size_t i = 0; i < poly.size(); ++i) cum.push_back(cum.back() + (poly[(i + 1) % poly.size()] - poly[i]).norm());
  const double total = cum.back();
  Footprint fp(kFootprintPoints, 2);
  std::size_t seg = 0;
  for (int k = 0; k < kFootprintPoints; ++k) {
    const double s = total * k / kFootprintPoints;
    while (cum[seg + 1] < s) ++seg;
    const double u = (s - cum[seg]) / std::max(cum[seg + 1] - cum[seg], 1e-300);
    const Point2 pt = poly[seg] + u * (poly[(seg + 1) % poly.size()] - poly[seg]);
    fp.row(k) = pt.transpose();
  }
  fp.rowwise() -= fp.colwise().mean();
  fp /= fp.cwiseAbs().maxCoeff();
  return fp;
}

/// Symmetric mean of squared nearest-neighbour distances.
inline double chamfer(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw PreconditionError("chamfer of an empty point set");
  double ab = 0.0, ba = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) best = std::min(best, (a.row(i) - b.row(j)).squaredNorm());
    ab += best;
  }
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < a.rows(); ++i) best = std::min(best, (a.row(i) - b.row(j)).squaredNorm());
    ba += best;
  }
  return ab / a.rows() + ba / b.rows();
}

/// Chamfer distance and its gradient with respect to the second set.
inline double chamfer_with_grad(const Matrix& target, const Matrix& rec, Matrix& d_rec) {
  d_rec = Matrix::Zero(rec.rows(), rec.cols());
  double ab = 0.0, ba = 0.0;
  const double na = static_cast<double>(target.rows()), nb = static_cast<double>(rec.rows());
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    Eigen::Index arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < rec.rows(); ++j) {
      const double d = (target.row(i) - rec.row(j)).squaredNorm();
      if (d < best) best = d, arg = j;
    }
    ab += best;
    d_rec.row(arg) += 2.0 * (rec.row(arg) - target.row(i)) / na;
  }
  for (Eigen::Index j = 0; j < rec.rows(); ++j) {
    Eigen::Index arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < target.rows(); ++i) {
      const double d = (target.row(i) - rec.row(j)).squaredNorm();
      if (d < best) best = d, arg = i;
    }
    ba += best;
    d_rec.row(j) += 2.0 * (rec.row(j) - target.row(arg)) / nb;
  }
  return ab / na + ba / nb;
}

/// KL(N(mu, exp(logvar)) || N(0, I)), summed over dimensions.
inline double gaussian_kl(const Vector& mu, const Vector& logvar) {
  return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
}

struct ShapeCodecConfig {
  int latent = 8;
  int hidden = 32;
  int feature = 64;
  int decoder_hidden = 64;
};

struct ShapeCodec {
  ShapeCodecConfig config;
  nn::Manifest manifest;
  std::vector<double> params;
  struct Idx {
    int w1, b1, w2, b2, wmu, bmu, wlv, blv, w3, b3, w4, b4, w5, b5;
  } idx{};

  nn::CMapMat<double> p(int i) const { return nn::view(params, manifest[i]); }
};

inline ShapeCodec make_codec(const ShapeCodecConfig& c, Rng& rng) {
  if (c.latent < 1 || c.hidden < 1 || c.feature < 1 || c.decoder_hidden < 1)
    throw ConfigError("shape codec sizes must be positive");
  ShapeCodec sc;
  sc.config = c;
  auto& m = sc.manifest;
  sc.idx.w1 = m.add("enc.fc1.weight", 2, c.hidden);
  sc.idx.b1 = m.add("enc.fc1.bias", 1, c.hidden);
  sc.idx.w2 = m.add("enc.fc2.weight", c.hidden, c.feature);
  sc.idx.b2 = m.add("enc.fc2.bias", 1, c.feature);
  sc.idx.wmu = m.add("enc.mu.weight", c.feature, c.latent);
  sc.idx.bmu = m.add("enc.mu.bias", 1, c.latent);
  sc.idx.wlv = m.add("enc.logvar.weight", c.feature, c.latent);
  sc.idx.blv = m.add("enc.logvar.bias", 1, c.latent);
  sc.idx.w3 = m.add("dec.fc1.weight", c.latent + 2, c.decoder_hidden);
  sc.idx.b3 = m.add("dec.fc1.bias", 1, c.decoder_hidden);
  sc.idx.w4 = m.add("dec.fc2.weight", c.decoder_hidden, c.decoder_hidden);
  sc.idx.b4 = m.add("dec.fc2.bias", 1, c.decoder_hidden);
  sc.idx.w5 = m.add("dec.out.weight", c.decoder_hidden, 2);
  sc.idx.b5 = m.add("dec.out.bias", 1, 2);
  sc.params.assign(m.total(), 0.0);
  for (const auto& e : m.entries()) {
    if (e.name.ends_with(".bias")) continue;
    auto v = nn::view(sc.params, e);
    const double bound = 1.0 / std::sqrt(static_cast<double>(e.rows));
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-bound, bound);
  }
  return sc;
}

/// Unit-circle folding grid shared by every decode.
inline Matrix folding_grid() {
  Matrix g(kFootprintPoints, 2);
  for (int k = 0; k < kFootprintPoints; ++k) {
    const double a = 2 * kPi * k / kFootprintPoints;
    g(k, 0) = std::cos(a);
    g(k, 1) = std::sin(a);
  }
  return g;
}

struct CodecPass {
  Matrix h1pre, h1, h2pre, h2;
  std::vector<Eigen::Index> argmax;
  Matrix pooled;  ///< 1 x feature
  Vector mu, logvar, eps, z;
  Matrix din, d1pre, d1, d2pre, d2, rec;
  double cd = 0.0, kl = 0.0, loss = 0.0;
};

inline void codec_encode(const ShapeCodec& sc, const Footprint& fp, CodecPass& p) {
  const auto& I = sc.idx;
  p.h1pre = nn::linear<double>(fp, sc.p(I.w1), sc.p(I.b1));
  p.h1 = nn::silu<double>(p.h1pre);
  p.h2pre = nn::linear<double>(p.h1, sc.p(I.w2), sc.p(I.b2));
  p.h2 = nn::silu<double>(p.h2pre);
  p.pooled.resize(1, p.h2.cols());
  p.argmax.assign(static_cast<std::size_t>(p.h2.cols()), 0);
  for (Eigen::Index c = 0; c < p.h2.cols(); ++c) {
    Eigen::Index r = 0;
    p.pooled(0, c) = p.h2.col(c).maxCoeff(&r);
    p.argmax[static_cast<std::size_t>(c)] = r;
  }
  p.mu = nn::linear<double>(p.pooled, sc.p(I.wmu), sc.p(I.bmu)).row(0).transpose();
  p.logvar = nn::linear<double>(p.pooled, sc.p(I.wlv), sc.p(I.blv)).row(0).transpose();
}

inline Matrix codec_decode(const ShapeCodec& sc, const Vector& z, CodecPass* pass = nullptr) {
  const auto& I = sc.idx;
  CodecPass local;
  CodecPass& p = pass ? *pass : local;
  p.din.resize(kFootprintPoints, sc.config.latent + 2);
  p.din.leftCols(sc.config.latent).rowwise() = z.transpose();
  p.din.rightCols(2) = folding_grid();
  p.d1pre = nn::linear<double>(p.din, sc.p(I.w3), sc.p(I.b3));
  p.d1 = nn::silu<double>(p.d1pre);
  p.d2pre = nn::linear<double>(p.d1, sc.p(I.w4), sc.p(I.b4));
  p.d2 = nn::silu<double>(p.d2pre);
  p.rec = nn::linear<double>(p.d2, sc.p(I.w5), sc.p(I.b5));
  return p.rec;
}

/// Full objective for one footprint with a fixed reparameterization draw.
/// Accumulates d loss / d params (scaled by `scale`) into grads when non-null.
inline double codec_loss(const ShapeCodec& sc, const Footprint& fp, const Vector& eps, std::vector<double>* grads,
                         double scale = 1.0, CodecPass* out = nullptr) {
  CodecPass local;
  CodecPass& p = out ? *out : local;
  codec_encode(sc, fp, p);
  p.eps = eps;
  const Vector sigma = (0.5 * p.logvar.array()).exp();
  p.z = p.mu + sigma.cwiseProduct(eps);
  codec_decode(sc, p.z, &p);
  Matrix drec;
  p.cd = chamfer_with_grad(fp, p.rec, drec);
  p.kl = gaussian_kl(p.mu, p.logvar);
  p.loss = p.cd + kKlWeight * p.kl;
  if (!grads) return p.loss;

  const auto& I = sc.idx;
  auto G = [&](int i) { return nn::view(*grads, sc.manifest[i]); };
  drec *= scale;
  Matrix dd2 = nn::linear_backward<double>(p.d2, sc.p(I.w5), drec, G(I.w5), G(I.b5));
  Matrix dd1 = nn::linear_backward<double>(p.d1, sc.p(I.w4), nn::silu_backward<double>(p.d2pre, dd2), G(I.w4), G(I.b4));
  Matrix ddin =
      nn::linear_backward<double>(p.din, sc.p(I.w3), nn::silu_backward<double>(p.d1pre, dd1), G(I.w3), G(I.b3));
  const Vector dz = ddin.leftCols(sc.config.latent).colwise().sum().transpose();
  // z = mu + exp(logvar / 2) * eps; KL terms: d/dmu = mu, d/dlogvar = (exp(logvar) - 1) / 2
  const Vector dmu = dz + scale * kKlWeight * p.mu;
  const Vector dlv = dz.cwiseProduct(0.5 * sigma.cwiseProduct(eps)) +
                     scale * kKlWeight * 0.5 * (p.logvar.array().exp() - 1.0).matrix();
  Matrix dpooled = nn::linear_backward<double>(p.pooled, sc.p(I.wmu), Matrix(dmu.transpose()), G(I.wmu), G(I.bmu));
  dpooled += nn::linear_backward<double>(p.pooled, sc.p(I.wlv), Matrix(dlv.transpose()), G(I.wlv), G(I.blv));
  Matrix dh2 = Matrix::Zero(p.h2.rows(), p.h2.cols());
  for (Eigen::Index c = 0; c < p.h2.cols(); ++c) dh2(p.argmax[static_cast<std::size_t>(c)], c) = dpooled(0, c);
  Matrix dh1 = nn::linear_backward<double>(p.h1, sc.p(I.w2), nn::silu_backward<double>(p.h2pre, dh2), G(I.w2), G(I.b2));
  nn::linear_backward<double>(fp, sc.p(I.w1), nn::silu_backward<double>(p.h1pre, dh1), G(I.w1), G(I.b1));
  return p.loss;
}

struct CodecTrainLog {
  std::vector<double> epoch_loss;  ///< mean CD + 0.001 KL per epoch
  std::vector<double> epoch_cd;
  std::vector<double> epoch_kl;
};

struct CodecTrainConfig {
  int epochs = 500;
  int batch_size = 16;
  double lr = 1e-3;
  double lr_decay = 0.1;
  int lr_decay_interval = 400;  ///< epochs
};

/// Minibatch Adam on CD + 0.001 * KL with the reparameterization draw z = mu + sigma * eps.
inline ShapeCodec train_codec(const std::vector<Footprint>& footprints, const ShapeCodecConfig& cc,
                              const CodecTrainConfig& tc, Rng& rng, CodecTrainLog* log = nullptr) {
  if (footprints.size() < 2) throw PreconditionError("codec training needs at least two footprints");
  ShapeCodec sc = make_codec(cc, rng);
  TrainState<double> st;
  st.m.assign(sc.params.size(), 0.0);
  st.v.assign(sc.params.size(), 0.0);
  std::vector<std::size_t> order(footprints.size());
  std::iota(order.begin(), order.end(), 0);
  long updates = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    st.lr = tc.lr * std::pow(tc.lr_decay, epoch / tc.lr_decay_interval);
    std::shuffle(order.begin(), order.end(), rng.engine());
    double sum_loss = 0, sum_cd = 0, sum_kl = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<double> grads(sc.params.size(), 0.0);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Vector eps(cc.latent);
        for (int k = 0; k < cc.latent; ++k) eps(k) = rng.gaussian();
        CodecPass pass;
        codec_loss(sc, footprints[order[i]], eps, &grads, scale, &pass);
        sum_loss += pass.loss;
        sum_cd += pass.cd;
        sum_kl += pass.kl;
      }
      adam_update(sc.params, grads, st, ++updates);
    }
    const double n = static_cast<double>(footprints.size());
    if (!std::isfinite(sum_loss)) throw DivergenceError("codec loss diverged at epoch " + std::to_string(epoch));
    if (log) {
      log->epoch_loss.push_back(sum_loss / n);
      log->epoch_cd.push_back(sum_cd / n);
      log->epoch_kl.push_back(sum_kl / n);
    }
  }
  return sc;
}

/// Deterministic code: the posterior mean.
inline Vector encode_shape(const ShapeCodec& sc, const Footprint& fp) {
  CodecPass p;
  codec_encode(sc, fp, p);
  return p.mu;
}

struct CodeBounds {
  Vector min, max;
};

struct ScaledCodes {
  std::vector<Vector> codes;
  CodeBounds bounds;
  std::vector<int> degenerate_dims;  ///< pinned to 0 (min == max)
};

inline Vector scale_code(const Vector& raw, const CodeBounds& b) {
  Vector out(raw.size());
  for (Eigen::Index k = 0; k < raw.size(); ++k) {
    const double span = b.max(k) - b.min(k);
    out(k) = span > 0 ? 2.0 * (raw(k) - b.min(k)) / span - 1.0 : 0.0;
  }
  return out;
}

inline Vector unscale_code(const Vector& scaled, const CodeBounds& b) {
  Vector out(scaled.size());
  for (Eigen::Index k = 0; k < scaled.size(); ++k) {
    const double span = b.max(k) - b.min(k);
    out(k) = span > 0 ? b.min(k) + 0.5 * (scaled(k) + 1.0) * span : b.min(k);
  }
  return out;
}

/// Affine per-dimension map from the corpus min/max to [-1, 1].
inline ScaledCodes scale_codes(const std::vector<Vector>& raw) {
  if (raw.empty()) throw PreconditionError("no codes to scale");
  ScaledCodes s;
  const auto F = raw.front().size();
  s.bounds.min = Vector::Constant(F, std::numeric_limits<double>::infinity());
  s.bounds.max = Vector::Constant(F, -std::numeric_limits<double>::infinity());
  for (const auto& c : raw) {
    s.bounds.min = s.bounds.min.cwiseMin(c);
    s.bounds.max = s.bounds.max.cwiseMax(c);
  }
  for (Eigen::Index k = 0; k < F; ++k)
    if (!(s.bounds.max(k) > s.bounds.min(k))) s.degenerate_dims.push_back(static_cast<int>(k));
  for (const auto& c : raw) s.codes.push_back(scale_code(c, s.bounds));
  return s;
}

struct ShapePrototype {
  int id = 0;
  int cls = 0;
  FootprintParams params;
  Footprint footprint;
  Vector raw_code;
  Vector scaled_code;
};

struct ShapeLibrary {
  int F = 0;
  CodeBounds bounds;
  std::vector<ShapePrototype> prototypes;

  std::vector<const ShapePrototype*> of_class(int cls) const {
    std::vector<const ShapePrototype*> out;
    for (const auto& p : prototypes)
      if (p.cls == cls) out.push_back(&p);
    return out;
  }
};

/// Nearest same-class prototype by Euclidean distance of scaled codes; ties go to the lowest id.
inline const ShapePrototype& retrieve(const ShapeLibrary& lib, int cls, const Vector& code) {
  const ShapePrototype* best = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& p : lib.prototypes) {
    if (p.cls != cls) continue;
    const double d = (p.scaled_code - code).squaredNorm();
    if (d < best_d || (d == best_d && best && p.id < best->id)) {
      best = &p;
      best_d = d;
    }
  }
  if (!best) throw DataError("retrieval: no prototype of class " + std::to_string(cls));
  return *best;
}

/// Encodes every prototype footprint with the codec and fills raw/scaled codes and bounds.
inline std::vector<int> assign_codes(ShapeLibrary& lib, const ShapeCodec& sc) {
  std::vector<Vector> raw;
  for (auto& p : lib.prototypes) {
    p.raw_code = encode_shape(sc, p.footprint);
    raw.push_back(p.raw_code);
  }
  lib.F = sc.config.latent;
  const ScaledCodes s = scale_codes(raw);
  lib.bounds = s.bounds;
  for (std::size_t i = 0; i < lib.prototypes.size(); ++i) lib.prototypes[i].scaled_code = s.codes[i];
  return s.degenerate_dims;
}

// ---- library file ----------------------------------------------------------------

inline nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Vector json_vec(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void write_library(const std::string& path, const ShapeLibrary& lib, const ClassTable& table) {
  nlohmann::json j;
  j["format"] = "scenediff-shape-library";
  j["version"] = 1;
  j["latent_dim"] = lib.F;
  j["code_min"] = vec_json(lib.bounds.min);
  j["code_max"] = vec_json(lib.bounds.max);
  j["prototypes"] = nlohmann::json::array();
  for (const auto& p : lib.prototypes) {
    nlohmann::json jp;
    jp["id"] = p.id;
    jp["class"] = table.name(p.cls);
    jp["family"] = to_string(p.params.family);
    jp["aspect"] = p.params.aspect;
    jp["corner"] = p.params.corner;
    jp["notch"] = p.params.notch;
    jp["raw_code"] = vec_json(p.raw_code);
    jp["scaled_code"] = vec_json(p.scaled_code);
    nlohmann::json pts = nlohmann::json::array();
    for (Eigen::Index r = 0; r < p.footprint.rows(); ++r) pts.push_back({p.footprint(r, 0), p.footprint(r, 1)});
    jp["footprint"] = pts;
    j["prototypes"].push_back(jp);
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << j.dump(1) << '\n';
}

inline ShapeLibrary read_library(const std::string& path, const ClassTable& table) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  try {
    nlohmann::json j;
    f >> j;
    if (j.at("format") != "scenediff-shape-library") throw DataError(path + " is not a shape library");
    ShapeLibrary lib;
    lib.F = j.at("latent_dim").get<int>();
    lib.bounds.min = json_vec(j.at("code_min"));
    lib.bounds.max = json_vec(j.at("code_max"));
    for (const auto& jp : j.at("prototypes")) {
      ShapePrototype p;
      p.id = jp.at("id").get<int>();
      p.cls = table.index_of(jp.at("class").get<std::string>());
      p.params.family = footprint_family_from_string(jp.at("family").get<std::string>());
      p.params.aspect = jp.at("aspect").get<double>();
      p.params.corner = jp.at("corner").get<double>();
      p.params.notch = jp.at("notch").get<double>();
      p.raw_code = json_vec(jp.at("raw_code"));
      p.scaled_code = json_vec(jp.at("scaled_code"));
      const auto& pts = jp.at("footprint");
      p.footprint.resize(static_cast<Eigen::Index>(pts.size()), 2);
      for (std::size_t r = 0; r < pts.size(); ++r) {
        p.footprint(static_cast<Eigen::Index>(r), 0) = pts[r].at(0).get<double>();
        p.footprint(static_cast<Eigen::Index>(r), 1) = pts[r].at(1).get<double>();
      }
      lib.prototypes.push_back(std::move(p));
    }
    return lib;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace scenediff
