#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <exception>
#include <cmath>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace scenediff {

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Vec3 = Eigen::Vector3d;

// Error hierarchy. Each family carries the process exit code the CLI maps it to.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code) : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config error: " + w, 2) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error("data error: " + w, 3) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("numeric divergence: " + w, 4) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& w) : Error("checkpoint error: " + w, 5) {}
};
// Input-validation failures that are data problems from the caller's point of view.
struct RangeError : DataError {
  explicit RangeError(const std::string& w) : DataError("range: " + w) {}
};
struct CapacityError : DataError {
  explicit CapacityError(const std::string& w) : DataError("capacity: " + w) {}
};
struct GeometryError : DataError {
  explicit GeometryError(const std::string& w) : DataError("geometry: " + w) {}
};
struct PreconditionError : DataError {
  explicit PreconditionError(const std::string& w) : DataError("precondition: " + w) {}
};
struct NumericError : DivergenceError {
  explicit NumericError(const std::string& w) : DivergenceError(w) {}
};

/// Seeded random stream. All randomness in the library flows through an explicit Rng;
/// the full state (engine and the normal sampler's cached value) can be serialized.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double gaussian() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }

  /// Independent child stream, e.g. one per scene index.
  Rng fork(std::uint64_t salt) const {
    std::seed_seq seq{static_cast<std::uint32_t>(base_seed_of(engine_)), static_cast<std::uint32_t>(salt),
                      static_cast<std::uint32_t>(salt >> 32), 0x5eedu};
    std::mt19937_64 e(seq);
    Rng r;
    r.engine_ = e;
    return r;
  }

  std::mt19937_64& engine() { return engine_; }

  void save(std::ostream& os) const { os << engine_ << ' ' << normal_ << ' ' << uniform_; }
  void load(std::istream& is) { is >> engine_ >> normal_ >> uniform_; }

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_ && a.normal_ == b.normal_;
  }

 private:
  static std::uint64_t base_seed_of(std::mt19937_64 e) { return e(); }

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Runs body(i) for i in [0, n) on up to `threads` workers with static contiguous chunks.
/// Callers write results per index, so output does not depend on the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const int begin = static_cast<int>(static_cast<long>(n) * w / workers);
        const int end = static_cast<int>(static_cast<long>(n) * (w + 1) / workers);
        for (int i = begin; i < end; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// FNV-1a, used for checkpoint layout hashes and payload checksums.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

}  // namespace scenediff
