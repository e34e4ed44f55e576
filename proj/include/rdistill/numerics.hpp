#pragma once

// Dense linear-algebra primitives: SVD with a canonical sign convention,
// least squares, PCA, Marchenko-Pastur rank selection, principal component
// regression, ridge regression with closed-form LOOCV, Spearman correlation
// and principal angles. Everything works in double precision and is a pure
// function of its inputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rdistill/error.hpp"
#include "rdistill/random.hpp"

namespace rdistill::num {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

inline void require_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw InputError(std::string(what) + ": non-finite input");
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SVD

/// Thin SVD, M = u * diag(s) * v^T.
struct SvdResult {
  MatrixXd u;  ///< L x r; empty when not requested
  VectorXd s;  ///< r values, descending
  MatrixXd v;  ///< k x r
};

/// Flips column signs so the largest-magnitude entry of each column of `v`
/// is positive (ties go to the lowest row index). The matching columns of
/// `u` are flipped too so the factorization is unchanged.
inline void canonicalize_signs(MatrixXd& v, MatrixXd* u = nullptr) {
  for (Index j = 0; j < v.cols(); ++j) {
    Index arg = 0;
    for (Index i = 1; i < v.rows(); ++i)
      if (std::abs(v(i, j)) > std::abs(v(arg, j))) arg = i;
    if (v(arg, j) < 0) {
      v.col(j) = -v.col(j);
      if (u && u->cols() > j) u->col(j) = -u->col(j);
    }
  }
}

inline SvdResult svd(const MatrixXd& m, bool compute_u = true) {
  if (m.rows() < 1 || m.cols() < 1) throw InputError("svd: empty matrix");
  detail::require_finite(m, "svd");
  const unsigned opts = compute_u ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : Eigen::ComputeThinV;
  Eigen::BDCSVD<MatrixXd> dec(m, opts);
  if (dec.info() != Eigen::Success) throw NumericalError("svd: failed to converge");
  SvdResult out;
  out.s = dec.singularValues();
  out.v = dec.matrixV();
  if (compute_u) out.u = dec.matrixU();
  if (!out.s.allFinite() || !out.v.allFinite()) throw NumericalError("svd: non-finite result");
  canonicalize_signs(out.v, compute_u ? &out.u : nullptr);
  return out;
}

// ---------------------------------------------------------------------------
// Least squares

/// argmin_W ||Y - X W||_F for full-column-rank X.
inline MatrixXd least_squares(const MatrixXd& x, const MatrixXd& y) {
  if (x.rows() != y.rows()) throw InputError("least_squares: row count mismatch");
  if (x.rows() < x.cols())
    throw InputError("least_squares: fewer rows (" + std::to_string(x.rows()) + ") than columns (" +
                     std::to_string(x.cols()) + ")");
  detail::require_finite(x, "least_squares");
  detail::require_finite(y, "least_squares");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  qr.setThreshold(1e-12);
  if (qr.rank() < x.cols())
    throw InputError("least_squares: rank-deficient design (rank " + std::to_string(qr.rank()) +
                     " < " + std::to_string(x.cols()) + ")");
  return qr.solve(y);
}

// ---------------------------------------------------------------------------
// Affine maps

/// y = (x - input_mean) * weights + output_mean, applied row-wise.
struct AffineMap {
  VectorXd input_mean;
  MatrixXd weights;
  VectorXd output_mean;

  Index input_dim() const { return weights.rows(); }
  Index output_dim() const { return weights.cols(); }

  MatrixXd apply(const MatrixXd& x) const {
    if (x.cols() != input_dim())
      throw InputError("affine map expects " + std::to_string(input_dim()) + " columns, got " +
                       std::to_string(x.cols()));
    MatrixXd centered = x.rowwise() - input_mean.transpose();
    MatrixXd out = centered * weights;
    out.rowwise() += output_mean.transpose();
    return out;
  }
};

inline VectorXd column_mean(const MatrixXd& x) { return x.colwise().mean().transpose(); }

inline MatrixXd center_columns(const MatrixXd& x, const VectorXd& mean) {
  return x.rowwise() - mean.transpose();
}

/// Ordinary least squares with intercept (centered inputs and outputs).
inline AffineMap ols_fit(const MatrixXd& x, const MatrixXd& y) {
  if (x.rows() < 2) throw InputError("ols_fit: need at least 2 rows");
  AffineMap map;
  map.input_mean = column_mean(x);
  map.output_mean = column_mean(y);
  map.weights = least_squares(center_columns(x, map.input_mean), center_columns(y, map.output_mean));
  return map;
}

// ---------------------------------------------------------------------------
// PCA

/// Eigen-decomposition of the sample covariance (1/(L-1)) X_c^T X_c.
struct PcaModel {
  VectorXd mean;
  MatrixXd components;   ///< k x r, orthonormal columns
  VectorXd eigenvalues;  ///< r values, descending, >= 0

  Index rank() const { return components.cols(); }

  PcaModel truncated(Index r) const {
    return {mean, components.leftCols(r), eigenvalues.head(r)};
  }

  MatrixXd transform(const MatrixXd& x) const { return center_columns(x, mean) * components; }
};

inline PcaModel pca(const MatrixXd& x) {
  if (x.rows() < 2) throw InputError("pca: need at least 2 rows");
  if (x.cols() < 1) throw InputError("pca: need at least 1 column");
  detail::require_finite(x, "pca");
  const Index k = x.cols();
  PcaModel model;
  model.mean = column_mean(x);
  const MatrixXd xc = center_columns(x, model.mean);
  const MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("pca: eigen-decomposition failed");
  // Eigen returns ascending order.
  model.eigenvalues = eig.eigenvalues().reverse();
  model.components = eig.eigenvectors().rowwise().reverse();
  const double top = std::max(model.eigenvalues(0), 0.0);
  const double floor = top * 64.0 * static_cast<double>(k) * std::numeric_limits<double>::epsilon();
  for (Index i = 0; i < k; ++i)
    if (model.eigenvalues(i) <= floor) model.eigenvalues(i) = 0.0;
  canonicalize_signs(model.components);
  return model;
}

// ---------------------------------------------------------------------------
// Marchenko-Pastur / Johnstone rank selection

/// Median of the Marchenko-Pastur law with aspect ratio gamma in (0, 1] and
/// unit noise variance.
inline double marchenko_pastur_median(double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0) throw InputError("marchenko_pastur_median: gamma must be in (0, 1]");
  const double sg = std::sqrt(gamma);
  const double lo = (1 - sg) * (1 - sg);
  const double hi = (1 + sg) * (1 + sg);
  const double center = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  // x = center - half*cos(t) maps t in [0, pi] onto the support and removes
  // the square-root cusps at both edges.
  auto integrand = [&](double t) {
    const double x = center - half * std::cos(t);
    const double st = std::sin(t);
    // gamma == 1 puts the lower edge at zero; use the analytic limit there.
    if (x <= 0.0) return half * (1.0 + std::cos(t)) / (2.0 * std::numbers::pi * gamma);
    return half * half * st * st / (2.0 * std::numbers::pi * gamma * x);
  };
  constexpr int kIntervals = 4096;
  const double step = std::numbers::pi / kIntervals;
  std::vector<double> cdf(kIntervals + 1, 0.0);
  // Cumulative Simpson on pairs of sub-intervals; odd nodes get the
  // trapezoid-corrected value from the neighbouring pair.
  for (int i = 2; i <= kIntervals; i += 2) {
    const double a = (i - 2) * step;
    const double seg = step / 3.0 * (integrand(a) + 4 * integrand(a + step) + integrand(a + 2 * step));
    cdf[i] = cdf[i - 2] + seg;
    cdf[i - 1] = cdf[i - 2] + 0.5 * step * (integrand(a) + integrand(a + step));
  }
  const double total = cdf[kIntervals];
  auto cdf_at = [&](double t) {
    // Simpson from the nearest even node below t.
    int node = static_cast<int>(t / step);
    node -= node % 2;
    node = std::clamp(node, 0, kIntervals);
    const double a = node * step;
    const double mid = 0.5 * (a + t);
    return (cdf[node] + (t - a) / 6.0 * (integrand(a) + 4 * integrand(mid) + integrand(t))) / total;
  };
  double tlo = 0.0, thi = std::numbers::pi;
  for (int it = 0; it < 100; ++it) {
    const double tm = 0.5 * (tlo + thi);
    (cdf_at(tm) < 0.5 ? tlo : thi) = tm;
  }
  return center - half * std::cos(0.5 * (tlo + thi));
}

struct JohnstoneThreshold {
  double noise_variance = 0.0;  ///< sigma^2 estimate
  double edge = 0.0;            ///< sigma^2 (1 + sqrt(k/L))^2
  Index rank = 0;               ///< eigenvalues strictly above the edge
};

/// Counts covariance eigenvalues above the Marchenko-Pastur bulk edge. The
/// noise variance is the median eigenvalue over the median of the MP law.
inline JohnstoneThreshold johnstone_threshold(const VectorXd& eigenvalues, Index samples, Index dim) {
  if (dim < 1) throw InputError("johnstone_rank: dimension must be >= 1");
  if (samples <= dim)
    throw InputError("johnstone_rank: need more samples than dimensions (L=" + std::to_string(samples) +
                     ", k=" + std::to_string(dim) + ")");
  if (eigenvalues.size() != dim) throw InputError("johnstone_rank: expected k eigenvalues");
  for (Index i = 1; i < dim; ++i)
    if (eigenvalues(i) > eigenvalues(i - 1)) throw InputError("johnstone_rank: eigenvalues not descending");
  const double gamma = static_cast<double>(dim) / static_cast<double>(samples);
  JohnstoneThreshold t;
  const double med = detail::median({eigenvalues.data(), eigenvalues.data() + dim});
  t.noise_variance = std::max(med, 0.0) / marchenko_pastur_median(gamma);
  const double sg = 1.0 + std::sqrt(gamma);
  t.edge = t.noise_variance * sg * sg;
  for (Index i = 0; i < dim; ++i)
    if (eigenvalues(i) > t.edge) ++t.rank;
  return t;
}

inline Index johnstone_rank(const VectorXd& eigenvalues, Index samples, Index dim) {
  return johnstone_threshold(eigenvalues, samples, dim).rank;
}

// ---------------------------------------------------------------------------
// Principal component regression

/// Regresses centered Y on the top-`rank` principal component scores of X
/// and folds the result back into a map on raw X.
inline AffineMap pcr_fit(const MatrixXd& x, const MatrixXd& y, const PcaModel& model, Index rank) {
  if (rank < 1 || rank > x.cols())
    throw InputError("pcr_fit: rank " + std::to_string(rank) + " outside [1, " + std::to_string(x.cols()) + "]");
  if (x.rows() != y.rows()) throw InputError("pcr_fit: row count mismatch");
  if (model.eigenvalues(rank - 1) <= 0.0)
    throw InputError("pcr_fit: degenerate input, principal component " + std::to_string(rank) +
                     " has zero variance");
  const MatrixXd basis = model.components.leftCols(rank);
  const MatrixXd scores = center_columns(x, model.mean) * basis;
  AffineMap map;
  map.input_mean = model.mean;
  map.output_mean = column_mean(y);
  map.weights = basis * least_squares(scores, center_columns(y, map.output_mean));
  return map;
}

inline AffineMap pcr_fit(const MatrixXd& x, const MatrixXd& y, Index rank) {
  if (x.rows() < 2) throw InputError("pcr_fit: need at least 2 rows");
  if (rank < 1 || rank > x.cols())
    throw InputError("pcr_fit: rank " + std::to_string(rank) + " outside [1, " + std::to_string(x.cols()) + "]");
  return pcr_fit(x, y, pca(x), rank);
}

// ---------------------------------------------------------------------------
// Ridge regression with closed-form leave-one-out CV

struct RidgeFit {
  double alpha = 0.0;
  VectorXd weights;
  double intercept = 0.0;
  std::vector<std::pair<double, double>> loocv_mse_per_alpha;
  bool degenerate = false;  ///< constant target: weights are zero

  VectorXd predict(const MatrixXd& x) const {
    return (x * weights).array() + intercept;
  }
};

/// Nine log-spaced points from 1e-3 to 1e3.
inline std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 9; ++i) grid.push_back(std::pow(10.0, -3.0 + 0.75 * i));
  return grid;
}

/// Ridge with an unpenalized intercept. LOOCV error for every alpha uses the
/// hat-matrix identity e_i / (1 - h_ii); the intercept contributes 1/L to
/// each h_ii.
inline RidgeFit ridge_loocv(const MatrixXd& x, const VectorXd& y, const std::vector<double>& alpha_grid) {
  const Index n = x.rows();
  if (n < 3) throw InputError("ridge_loocv: need at least 3 rows");
  if (y.size() != n) throw InputError("ridge_loocv: target length mismatch");
  if (alpha_grid.empty()) throw InputError("ridge_loocv: empty alpha grid");
  for (double a : alpha_grid)
    if (!(a > 0.0) || !std::isfinite(a)) throw InputError("ridge_loocv: alpha must be positive");
  detail::require_finite(x, "ridge_loocv");
  if (!y.allFinite()) throw InputError("ridge_loocv: non-finite target");

  const VectorXd xmean = column_mean(x);
  const double ymean = y.mean();
  const MatrixXd xc = center_columns(x, xmean);
  const VectorXd yc = y.array() - ymean;

  RidgeFit fit;
  fit.degenerate = yc.isZero(0.0);

  Eigen::BDCSVD<MatrixXd> dec(xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success) throw NumericalError("ridge_loocv: svd failed");
  const MatrixXd& u = dec.matrixU();
  const MatrixXd& v = dec.matrixV();
  const VectorXd& s = dec.singularValues();
  const VectorXd uty = u.transpose() * yc;
  const MatrixXd u2 = u.array().square();
  const double inv_n = 1.0 / static_cast<double>(n);

  auto weights_for = [&](double alpha) -> VectorXd {
    VectorXd shrink = (s.array() / (s.array().square() + alpha)).matrix();
    return v * shrink.cwiseProduct(uty);
  };

  double best_mse = std::numeric_limits<double>::infinity();
  for (double alpha : alpha_grid) {
    const VectorXd factor = (s.array().square() / (s.array().square() + alpha)).matrix();
    const VectorXd fitted = u * factor.cwiseProduct(uty);
    const VectorXd leverage = (u2 * factor).array() + inv_n;
    const VectorXd loo = (yc - fitted).array() / (1.0 - leverage.array());
    const double mse = loo.squaredNorm() / static_cast<double>(n);
    fit.loocv_mse_per_alpha.emplace_back(alpha, mse);
    if (mse < best_mse || (mse == best_mse && alpha < fit.alpha)) {
      best_mse = mse;
      fit.alpha = alpha;
    }
  }
  fit.weights = fit.degenerate ? VectorXd::Zero(x.cols()) : weights_for(fit.alpha);
  fit.intercept = ymean - xmean.dot(fit.weights);
  return fit;
}

// ---------------------------------------------------------------------------
// Spearman correlation

/// 1-based ranks; tied values share the mean of their ranks.
inline VectorXd average_ranks(const VectorXd& v) {
  const Index n = v.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v(a) < v(b); });
  VectorXd ranks(n);
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j + 1 < n && v(order[j + 1]) == v(order[i])) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index t = i; t <= j; ++t) ranks(order[t]) = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const VectorXd& a, const VectorXd& b) {
  const VectorXd ac = a.array() - a.mean();
  const VectorXd bc = b.array() - b.mean();
  const double denom = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
  if (!(denom > 0.0)) throw InputError("undefined correlation: constant input");
  return std::clamp(ac.dot(bc) / denom, -1.0, 1.0);
}

inline double spearman(const VectorXd& pred, const VectorXd& truth) {
  if (pred.size() != truth.size()) throw InputError("spearman: length mismatch");
  if (pred.size() < 2) throw InputError("spearman: need at least 2 points");
  if (!pred.allFinite() || !truth.allFinite()) throw InputError("spearman: non-finite input");
  return pearson(average_ranks(pred), average_ranks(truth));
}

// ---------------------------------------------------------------------------
// Subspaces

/// Orthonormal basis of span(a), dropping directions below a relative
/// singular-value tolerance.
inline MatrixXd orthonormal_basis(const MatrixXd& a, double rel_tol = 1e-10) {
  if (a.rows() < 1 || a.cols() < 1) throw InputError("orthonormal_basis: empty matrix");
  Eigen::BDCSVD<MatrixXd> dec(a, Eigen::ComputeThinU);
  const VectorXd& s = dec.singularValues();
  Index r = 0;
  while (r < s.size() && s(r) > rel_tol * s(0)) ++r;
  if (s.size() == 0 || s(0) <= 0.0) r = 0;
  if (r == 0) throw InputError("orthonormal_basis: zero-rank input");
  return dec.matrixU().leftCols(r);
}

/// Principal angles (radians, ascending) between span(a) and span(b).
inline VectorXd principal_angles(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows()) throw InputError("principal_angles: ambient dimension mismatch");
  const MatrixXd qa = orthonormal_basis(a);
  const MatrixXd qb = orthonormal_basis(b);
  const MatrixXd cross = qa.transpose() * qb;
  Eigen::JacobiSVD<MatrixXd> dec(cross);
  const VectorXd s = dec.singularValues();
  VectorXd angles(s.size());
  for (Index i = 0; i < s.size(); ++i) angles(i) = std::acos(std::clamp(s(i), -1.0, 1.0));
  std::sort(angles.data(), angles.data() + angles.size());
  return angles;
}

/// Extends `basis` (orthonormal columns) to `cols` orthonormal columns using
/// seeded Gaussian directions and Gram-Schmidt with re-orthogonalization.
inline MatrixXd complete_orthonormal(const MatrixXd& basis, Index cols, std::uint64_t seed) {
  const Index dim = basis.rows();
  if (cols > dim) throw InputError("complete_orthonormal: more columns than dimensions");
  MatrixXd out(dim, cols);
  out.leftCols(basis.cols()) = basis;
  Rng rng(seed);
  Index filled = basis.cols();
  while (filled < cols) {
    VectorXd g(dim);
    for (Index i = 0; i < dim; ++i) g(i) = rng.gaussian();
    for (int pass = 0; pass < 2; ++pass)
      for (Index j = 0; j < filled; ++j) g -= out.col(j).dot(g) * out.col(j);
    const double norm = g.norm();
    if (norm < 1e-8) continue;
    out.col(filled++) = g / norm;
  }
  return out;
}

}  // namespace rdistill::num
