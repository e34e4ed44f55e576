#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace rdistill {

/// Seeded random source whose output depends only on the seed.
///
/// The standard distributions (`std::normal_distribution` and friends) are
/// implementation-defined, so they are avoided here: every draw is derived
/// from raw mt19937_64 words, which the standard fully specifies.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). Uses rejection so the result is unbiased.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  /// Standard normal via Box-Muller.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(theta);
    has_spare_ = true;
    return radius * std::cos(theta);
  }

  Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double sigma = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    // Row-major fill so the stream order is independent of storage order.
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = sigma * gaussian();
    return m;
  }

  /// Fisher-Yates shuffle driven by `below`.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Random matrix with orthonormal columns (QR of a Gaussian draw, signs
/// fixed so that R has a positive diagonal).
inline Eigen::MatrixXd random_orthonormal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd g = rng.gaussian_matrix(rows, cols);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(cols, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

}  // namespace rdistill
