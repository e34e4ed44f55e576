#pragma once

// Reference implementations used only by tests. They take deliberately
// different (and slower) routes than the library code they check.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns values in
/// descending order with matching eigenvector columns.
inline std::pair<VectorXd, MatrixXd> jacobi_eigen(MatrixXd a) {
  const Index n = a.rows();
  MatrixXd v = MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Index x, Index y) { return a(x, x) > a(y, y); });
  VectorXd vals(n);
  MatrixXd vecs(n, n);
  for (Index i = 0; i < n; ++i) {
    vals(i) = a(order[i], order[i]);
    vecs.col(i) = v.col(order[i]);
  }
  return {vals, vecs};
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
inline MatrixXd gram_schmidt(const MatrixXd& a) {
  MatrixXd q(a.rows(), 0);
  for (Index j = 0; j < a.cols(); ++j) {
    VectorXd v = a.col(j);
    for (int pass = 0; pass < 2; ++pass)
      for (Index i = 0; i < q.cols(); ++i) v -= q.col(i).dot(v) * q.col(i);
    const double norm = v.norm();
    if (norm < 1e-12 * std::max(1.0, a.col(j).norm())) continue;
    q.conservativeResize(Eigen::NoChange, q.cols() + 1);
    q.col(q.cols() - 1) = v / norm;
  }
  return q;
}

/// O(n^2) average rank: 1 + #smaller + (#equal - 1)/2.
inline VectorXd brute_ranks(const VectorXd& v) {
  VectorXd r(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    double smaller = 0, equal = 0;
    for (Index j = 0; j < v.size(); ++j) {
      if (v(j) < v(i)) smaller += 1;
      if (v(j) == v(i)) equal += 1;
    }
    r(i) = 1.0 + smaller + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double brute_pearson(const VectorXd& a, const VectorXd& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (Index i = 0; i < a.size(); ++i) {
    ma += a(i);
    mb += b(i);
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double brute_spearman(const VectorXd& a, const VectorXd& b) {
  return brute_pearson(brute_ranks(a), brute_ranks(b));
}

/// Explicit leave-one-out ridge: refit (with re-centering) on L-1 rows via
/// the normal equations, predict the held-out row.
inline double explicit_loocv_mse(const MatrixXd& x, const VectorXd& y, double alpha) {
  const Index n = x.rows(), k = x.cols();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    MatrixXd xs(n - 1, k);
    VectorXd ys(n - 1);
    for (Index r = 0, t = 0; r < n; ++r) {
      if (r == i) continue;
      xs.row(t) = x.row(r);
      ys(t) = y(r);
      ++t;
    }
    const Eigen::RowVectorXd mx = xs.colwise().mean();
    const double my = ys.mean();
    const MatrixXd xc = xs.rowwise() - mx;
    const VectorXd yc = ys.array() - my;
    const MatrixXd gram = xc.transpose() * xc + alpha * MatrixXd::Identity(k, k);
    const VectorXd w = gram.ldlt().solve(xc.transpose() * yc);
    const double pred = my + (x.row(i) - mx).dot(w.transpose());
    total += (y(i) - pred) * (y(i) - pred);
  }
  return total / static_cast<double>(n);
}

/// Singular values of a matrix via the Jacobi oracle on A^T A.
inline VectorXd singular_values(const MatrixXd& a) {
  auto [vals, vecs] = jacobi_eigen(a.transpose() * a);
  return vals.cwiseMax(0.0).cwiseSqrt();
}

}  // namespace oracle
