#pragma once

// Corpus evaluation: top-down semantic rasters, random-projection raster features, and the
// metric suite (CKL, Obj, Sym, PIoU, SCA, rFID, rKID).

#include "scenediff/geometry.hpp"
#include "scenediff/scene_model.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace scenediff {

using Corpus = std::vector<SceneSet>;

// ---- rasters ---------------------------------------------------------------------

constexpr int kRasterSize = 256;
constexpr double kCanvasExtent = 6.0;  ///< meters, centered on the room origin

using Rgb = std::array<std::uint8_t, 3>;
constexpr Rgb kBackground{128, 128, 128};

/// hue = idx * golden-ratio conjugate (mod 1), full saturation and value.
inline Rgb class_color(int idx) {
  const double h = std::fmod(idx * 0.6180339887498949, 1.0) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double q = 1.0 - f;
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = 1, g = f, b = 0; break;
    case 1: r = q, g = 1, b = 0; break;
    case 2: r = 0, g = 1, b = f; break;
    case 3: r = 0, g = q, b = 1; break;
    case 4: r = f, g = 0, b = 1; break;
    default: r = 1, g = 0, b = q; break;
  }
  auto byte = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
  return {byte(r), byte(g), byte(b)};
}

struct Raster {
  int width = kRasterSize;
  int height = kRasterSize;
  std::vector<std::uint8_t> rgb;  ///< row-major, row 0 is the +y edge

  Rgb at(int r, int c) const {
    const std::size_t i = 3 * (static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c));
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  long count(const Rgb& color) const {
    long n = 0;
    for (std::size_t i = 0; i < rgb.size(); i += 3)
      if (rgb[i] == color[0] && rgb[i + 1] == color[1] && rgb[i + 2] == color[2]) ++n;
    return n;
  }
};

/// Orthographic top-down map: each footprint filled with its class color, largest first.
inline Raster render_topdown(const SceneSet& scene) {
  Raster img;
  img.rgb.resize(static_cast<std::size_t>(3 * kRasterSize * kRasterSize));
  for (std::size_t i = 0; i < img.rgb.size(); i += 3) std::copy(kBackground.begin(), kBackground.end(), img.rgb.begin() + i);
  std::vector<const ObjectRecord*> order;
  for (const auto& o : scene.objects)
    if (!o.empty()) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(), [](const ObjectRecord* a, const ObjectRecord* b) {
    return a->size(0) * a->size(1) > b->size(0) * b->size(1);
  });
  const double px = kCanvasExtent / kRasterSize;
  for (const ObjectRecord* o : order) {
    const Rgb col = class_color(o->cls);
    const double c = std::cos(o->theta), s = std::sin(o->theta);
    const double reach = std::hypot(o->size(0), o->size(1));
    const int c0 = std::max(0, static_cast<int>(std::floor((o->location(0) - reach + 3.0) / px)));
    const int c1 = std::min(kRasterSize - 1, static_cast<int>(std::ceil((o->location(0) + reach + 3.0) / px)));
    const int r0 = std::max(0, static_cast<int>(std::floor((3.0 - o->location(1) - reach) / px)));
    const int r1 = std::min(kRasterSize - 1, static_cast<int>(std::ceil((3.0 - o->location(1) + reach) / px)));
    for (int r = r0; r <= r1; ++r) {
      const double y = 3.0 - (r + 0.5) * px - o->location(1);
      for (int cc = c0; cc <= c1; ++cc) {
        const double x = -3.0 + (cc + 0.5) * px - o->location(0);
        const double lx = c * x + s * y, ly = -s * x + c * y;
        if (std::abs(lx) <= o->size(0) && std::abs(ly) <= o->size(1)) {
          const std::size_t i = 3 * (static_cast<std::size_t>(r) * kRasterSize + static_cast<std::size_t>(cc));
          std::copy(col.begin(), col.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(i));
        }
      }
    }
  }
  return img;
}

inline void write_ppm(const std::string& path, const Raster& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

// ---- features --------------------------------------------------------------------

constexpr int kFeatureDim = 64;
constexpr int kPooledSize = 32;

/// 8x8 average pooling to 32x32x3, scaled to [0,1], then a fixed Gaussian projection.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = 2024) : proj_(kFeatureDim, 3 * kPooledSize * kPooledSize) {
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(proj_.cols()));
    for (Eigen::Index i = 0; i < proj_.size(); ++i) proj_.data()[i] = rng.gaussian() * scale;
  }

  Vector operator()(const Raster& img) const {
    const int f = img.width / kPooledSize;
    Vector pooled = Vector::Zero(proj_.cols());
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) {
        const Rgb px = img.at(r, c);
        const Eigen::Index base = 3 * ((r / f) * kPooledSize + c / f);
        for (int k = 0; k < 3; ++k) pooled(base + k) += px[static_cast<std::size_t>(k)];
      }
    pooled /= 255.0 * f * f;
    return proj_ * pooled;
  }

  /// One feature row per scene.
  Matrix features(const Corpus& corpus) const {
    Matrix out(static_cast<Eigen::Index>(corpus.size()), kFeatureDim);
    for (std::size_t i = 0; i < corpus.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) = (*this)(render_topdown(corpus[i])).transpose();
    return out;
  }

 private:
  Matrix proj_;
};

// ---- per-scene metrics -----------------------------------------------------------

struct SymThresholds {
  double size_rel = 0.10;
  double off_axis = 0.15;  ///< m
  double height = 0.05;    ///< m
  double angle_deg = 15.0;
};

inline Eigen::Vector2d forward_vector(double theta) { return {-std::sin(theta), std::cos(theta)}; }

/// Unordered same-class mirror pairs across the axis-aligned vertical plane through their midpoint.
inline int metric_sym(const SceneSet& scene, const SymThresholds& th = {}) {
  std::vector<const ObjectRecord*> objs;
  for (const auto& o : scene.objects)
    if (!o.empty()) objs.push_back(&o);
  int pairs = 0;
  const double cos_tol = std::cos(th.angle_deg * kPi / 180.0);
  for (std::size_t i = 0; i < objs.size(); ++i)
    for (std::size_t j = i + 1; j < objs.size(); ++j) {
      const ObjectRecord& a = *objs[i];
      const ObjectRecord& b = *objs[j];
      if (a.cls != b.cls) continue;
      bool sizes_ok = true;
      for (int k = 0; k < 3; ++k)
        if (std::abs(a.size(k) - b.size(k)) > th.size_rel * std::max(a.size(k), b.size(k))) sizes_ok = false;
      if (!sizes_ok) continue;
      const double dx = b.location(0) - a.location(0), dy = b.location(1) - a.location(1);
      const int axis = std::abs(dx) >= std::abs(dy) ? 0 : 1;  // mirror plane is perpendicular to this axis
      if (std::abs(axis == 0 ? dy : dx) >= th.off_axis) continue;
      if (std::abs(a.location(2) - b.location(2)) >= th.height) continue;
      Eigen::Vector2d fa = forward_vector(a.theta);
      fa(axis) = -fa(axis);
      if (fa.dot(forward_vector(b.theta)) < cos_tol) continue;
      ++pairs;
    }
  return pairs;
}

struct PiouResult {
  double value = 0.0;
  int excluded = 0;  ///< zero-volume boxes skipped
};

/// Mean exact oriented IoU over unordered pairs of non-empty objects.
inline PiouResult metric_piou_detail(const SceneSet& scene) {
  std::vector<Box3> boxes;
  PiouResult r;
  for (const auto& o : scene.objects) {
    if (o.empty()) continue;
    if ((o.size.array() <= 0).any()) {
      ++r.excluded;
      continue;
    }
    boxes.push_back(Box3::of(o));
  }
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    for (std::size_t j = i + 1; j < boxes.size(); ++j, ++n) sum += oriented_iou(boxes[i], boxes[j]);
  r.value = n ? sum / static_cast<double>(n) : 0.0;
  return r;
}

inline double metric_piou(const SceneSet& scene) { return metric_piou_detail(scene).value; }

// ---- corpus metrics --------------------------------------------------------------

/// Fraction of non-empty objects per class (index 0 unused).
inline Vector class_distribution(const Corpus& corpus, int L) {
  Vector counts = Vector::Zero(L);
  for (const auto& s : corpus)
    for (const auto& o : s.objects)
      if (!o.empty() && o.cls < L) counts(o.cls) += 1.0;
  const double total = counts.sum();
  return total > 0 ? Vector(counts / total) : counts;
}

/// KL(P_ref || P_gen) over the non-empty classes with additive smoothing 1e-6.
inline double metric_ckl(const Corpus& gen, const Corpus& ref, int L) {
  if (gen.empty() || ref.empty()) throw PreconditionError("CKL needs two nonempty corpora");
  const Vector pg = class_distribution(gen, L), pr = class_distribution(ref, L);
  constexpr double kSmooth = 1e-6;
  const double zg = pg.tail(L - 1).sum() + kSmooth * (L - 1), zr = pr.tail(L - 1).sum() + kSmooth * (L - 1);
  double kl = 0.0;
  for (int c = 1; c < L; ++c) {
    const double p = (pr(c) + kSmooth) / zr, q = (pg(c) + kSmooth) / zg;
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

inline double mean_object_count(const Corpus& c) {
  if (c.empty()) return 0.0;
  double n = 0;
  for (const auto& s : c) n += s.occupied_count();
  return n / static_cast<double>(c.size());
}

inline double mean_sym(const Corpus& c, const SymThresholds& th = {}) {
  if (c.empty()) return 0.0;
  double n = 0;
  for (const auto& s : c) n += metric_sym(s, th);
  return n / static_cast<double>(c.size());
}

inline double mean_piou(const Corpus& c) {
  if (c.empty()) return 0.0;
  double n = 0;
  for (const auto& s : c) n += metric_piou(s);
  return n / static_cast<double>(c.size());
}

constexpr std::size_t kMinCorpusForStats = 50;

/// Held-out accuracy of a logistic classifier separating generated from reference features,
/// averaged over 5 shuffled 80/20 splits. Each corpus is split 80/20 on its own, and both
/// splits follow one shared permutation, so row i of equally sized corpora lands on the same
/// side in both.
inline double sca_from_features(const Matrix& gen, const Matrix& ref, Rng& rng, int epochs = 200,
                                double lr = 0.5, int reshuffles = 5) {
  if (static_cast<std::size_t>(gen.rows()) < kMinCorpusForStats ||
      static_cast<std::size_t>(ref.rows()) < kMinCorpusForStats)
    throw PreconditionError("SCA needs at least 50 scenes per corpus");
  const Eigen::Index d = gen.cols();
  const Eigen::Index ng = gen.rows(), nr = ref.rows();
  const Eigen::Index tg = (4 * ng) / 5, tr = (4 * nr) / 5;
  const Eigen::Index n_train = tg + tr, n_val = ng + nr - n_train;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(std::max(ng, nr)));
  double acc_sum = 0.0;
  for (int rep = 0; rep < reshuffles; ++rep) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Matrix Xt(n_train, d), Xv(n_val, d);
    Vector yt(n_train), yv(n_val);
    Eigen::Index it = 0, iv = 0;
    const auto split = [&](const Matrix& X, Eigen::Index rows, Eigen::Index n_tr, double label) {
      Eigen::Index seen = 0;
      for (const auto k : perm) {
        if (k >= rows) continue;
        if (seen++ < n_tr) {
          Xt.row(it) = X.row(k);
          yt(it++) = label;
        } else {
          Xv.row(iv) = X.row(k);
          yv(iv++) = label;
        }
      }
    };
    split(gen, ng, tg, 1.0);
    split(ref, nr, tr, 0.0);
    const Eigen::RowVectorXd mu = Xt.colwise().mean();
    Eigen::RowVectorXd sd = ((Xt.rowwise() - mu).array().square().colwise().mean()).sqrt();
    sd = sd.unaryExpr([](double v) { return v > 1e-12 ? v : 1.0; });
    Xt = (Xt.rowwise() - mu).array().rowwise() / sd.array();
    Xv = (Xv.rowwise() - mu).array().rowwise() / sd.array();
    Vector w = Vector::Zero(d);
    double b = 0.0;
    for (int e = 0; e < epochs; ++e) {
      const Vector p = (1.0 / (1.0 + (-(Xt * w).array() - b).exp())).matrix();
      const Vector err = p - yt;
      w -= lr * Xt.transpose() * err / static_cast<double>(n_train);
      b -= lr * err.mean();
    }
    const Vector pv = (Xv * w).array() + b;
    int correct = 0;
    for (Eigen::Index i = 0; i < pv.size(); ++i) correct += ((pv(i) > 0) == (yv(i) > 0.5));
    acc_sum += static_cast<double>(correct) / static_cast<double>(pv.size());
  }
  return acc_sum / reshuffles;
}

/// Square root of a symmetric positive semi-definite matrix; negative eigenvalues clamp to 0.
inline Matrix sqrtm_psd(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline Matrix covariance(const Matrix& x) {
  const Matrix c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(std::max<Eigen::Index>(x.rows() - 1, 1));
}

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (sqrt(S1) S2 sqrt(S1))^(1/2)), with 1e-6 diagonal jitter.
inline double frechet_distance(const Matrix& f1, const Matrix& f2) {
  const Eigen::Index d = f1.cols();
  const Matrix s1 = covariance(f1) + 1e-6 * Matrix::Identity(d, d);
  const Matrix s2 = covariance(f2) + 1e-6 * Matrix::Identity(d, d);
  const double mean_term = (f1.colwise().mean() - f2.colwise().mean()).squaredNorm();
  const Matrix r1 = sqrtm_psd(s1);
  const Matrix mid = r1 * s2 * r1;
  const Matrix sym = 0.5 * (mid + mid.transpose());
  const double cross = sqrtm_psd(sym).trace();
  return std::max(0.0, mean_term + s1.trace() + s2.trace() - 2.0 * cross);
}

/// Unbiased MMD^2 with the cubic polynomial kernel (x.y / d + 1)^3.
inline double kernel_distance(const Matrix& x, const Matrix& y) {
  const double d = static_cast<double>(x.cols());
  auto kern = [d](const Matrix& a, const Matrix& b) {
    return Matrix(((a * b.transpose()).array() / d + 1.0).cube().matrix());
  };
  const double m = static_cast<double>(x.rows()), n = static_cast<double>(y.rows());
  const Matrix kxx = kern(x, x), kyy = kern(y, y), kxy = kern(x, y);
  const double sxx = kxx.sum() - kxx.trace(), syy = kyy.sum() - kyy.trace();
  return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * kxy.sum() / (m * n);
}

inline double metric_rfid(const Corpus& gen, const Corpus& ref, const FeatureExtractor& fx) {
  if (gen.size() < kMinCorpusForStats || ref.size() < kMinCorpusForStats)
    throw PreconditionError("rFID needs at least 50 scenes per corpus");
  return frechet_distance(fx.features(gen), fx.features(ref));
}

inline double metric_rkid(const Corpus& gen, const Corpus& ref, const FeatureExtractor& fx) {
  if (gen.size() < kMinCorpusForStats || ref.size() < kMinCorpusForStats)
    throw PreconditionError("rKID needs at least 50 scenes per corpus");
  return kernel_distance(fx.features(gen), fx.features(ref));
}

struct MetricsReport {
  double ckl = 0.0;
  double obj_mean = 0.0, obj_ref = 0.0;
  double sym_mean = 0.0, sym_ref = 0.0;
  double piou_mean = 0.0, piou_ref = 0.0;
  double sca = 0.5;
  double rfid = 0.0;
  double rkid = 0.0;
  std::size_t n_gen = 0, n_ref = 0;
  bool has_feature_metrics = false;  ///< SCA/rFID/rKID need >= 50 scenes per corpus

  nlohmann::json to_json() const {
    nlohmann::json j{{"ckl", ckl},         {"obj_mean", obj_mean}, {"obj_ref", obj_ref},   {"sym_mean", sym_mean},
                     {"sym_ref", sym_ref}, {"piou_mean", piou_mean}, {"piou_ref", piou_ref}, {"n_gen", n_gen},
                     {"n_ref", n_ref}};
    if (has_feature_metrics) {
      j["sca"] = sca;
      j["rfid"] = rfid;
      j["rkid"] = rkid;
    }
    return j;
  }

  /// key: value lines
  std::string to_text() const {
    const nlohmann::json j = to_json();
    std::string out;
    for (const auto& [k, v] : j.items()) out += k + ": " + v.dump() + "\n";
    return out;
  }
};

inline MetricsReport evaluate(const Corpus& gen, const Corpus& ref, int L, std::uint64_t seed,
                              const SymThresholds& th = {}) {
  MetricsReport r;
  r.n_gen = gen.size();
  r.n_ref = ref.size();
  r.ckl = metric_ckl(gen, ref, L);
  r.obj_mean = mean_object_count(gen);
  r.obj_ref = mean_object_count(ref);
  r.sym_mean = mean_sym(gen, th);
  r.sym_ref = mean_sym(ref, th);
  r.piou_mean = mean_piou(gen);
  r.piou_ref = mean_piou(ref);
  if (gen.size() >= kMinCorpusForStats && ref.size() >= kMinCorpusForStats) {
    const FeatureExtractor fx(seed);
    const Matrix fg = fx.features(gen), fr = fx.features(ref);
    Rng rng(seed ^ 0x5CA5CA5CA5CA5CA5ull);
    r.sca = sca_from_features(fg, fr, rng);
    r.rfid = frechet_distance(fg, fr);
    r.rkid = kernel_distance(fg, fr);
    r.has_feature_metrics = true;
  }
  return r;
}

}  // namespace scenediff
