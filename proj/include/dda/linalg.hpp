#pragma once

// Dense small-matrix kernels used by the asymptotic analysis: pseudoinverse,
// orthogonal projector onto ker(B), orthonormal bases, spectral norm and the
// continuous Lyapunov equation. Sizes are desk scale (d <= ~100).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dda/errors.hpp"

namespace dda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Orthogonal basis U = [u_1 .. u_d] whose first `r` columns span ker(B) and
/// whose remaining columns span the row space of B.
struct SubspaceBasis {
  Matrix U;
  int r = 0;     // dimension of ker(B)
  int rank = 0;  // numerical rank of B, always d - r

  /// First r columns (a d x r matrix).
  [[nodiscard]] Matrix active() const { return U.leftCols(r); }
  /// Remaining d - r columns.
  [[nodiscard]] Matrix complement() const { return U.rightCols(U.cols() - r); }
};

namespace detail {

inline double truncation_threshold(Eigen::Index rows, Eigen::Index cols, double largest_sv) {
  return static_cast<double>(std::max(rows, cols)) * largest_sv * 1e-12;
}

// Flip column signs so the entry of largest magnitude is positive. Makes
// bases reproducible across SVD back-ends.
inline void canonicalize_signs(Matrix& U) {
  for (Eigen::Index j = 0; j < U.cols(); ++j) {
    Eigen::Index idx = 0;
    U.col(j).cwiseAbs().maxCoeff(&idx);
    if (U(idx, j) < 0.0) U.col(j) *= -1.0;
  }
}

}  // namespace detail

/// Moore-Penrose inverse through the SVD, truncating singular values below
/// max(rows, cols) * sigma_max * 1e-12.
inline Matrix pseudo_inverse(const Matrix& M) {
  if (M.size() == 0) return Matrix::Zero(M.cols(), M.rows());
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double eps = detail::truncation_threshold(M.rows(), M.cols(), s.size() ? s(0) : 0.0);
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > eps) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// P_B = I - B^T (B B^T)^+ B, the orthogonal projector onto {x : Bx = 0}.
/// `d` is needed when B has no rows.
inline Matrix projection_matrix(const Matrix& B, Eigen::Index d) {
  if (B.rows() == 0) return Matrix::Identity(d, d);
  if (B.cols() != d) throw PreconditionError("projection_matrix: B must have d columns");
  Matrix P = Matrix::Identity(d, d) - B.transpose() * pseudo_inverse(B * B.transpose()) * B;
  return 0.5 * (P + P.transpose());
}

inline Matrix projection_matrix(const Matrix& B) { return projection_matrix(B, B.cols()); }

/// Orthonormal basis adapted to ker(B). The numerical rank is decided with the
/// same truncation rule as pseudo_inverse and reported in the result.
inline SubspaceBasis null_space_basis(const Matrix& B, Eigen::Index d) {
  SubspaceBasis out;
  if (B.rows() == 0) {
    out.U = Matrix::Identity(d, d);
    out.r = static_cast<int>(d);
    out.rank = 0;
    return out;
  }
  if (B.cols() != d) throw PreconditionError("null_space_basis: B must have d columns");
  Eigen::JacobiSVD<Matrix> svd(B, Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  const double eps = detail::truncation_threshold(B.rows(), B.cols(), s.size() ? s(0) : 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > eps) ++rank;
  }
  const Matrix& V = svd.matrixV();
  // V's leading `rank` columns span the row space; the rest span the kernel.
  out.U.resize(d, d);
  out.r = static_cast<int>(d) - rank;
  out.rank = rank;
  out.U.leftCols(out.r) = V.rightCols(out.r);
  out.U.rightCols(rank) = V.leftCols(rank);
  detail::canonicalize_signs(out.U);
  return out;
}

inline SubspaceBasis null_space_basis(const Matrix& B) { return null_space_basis(B, B.cols()); }

/// Largest singular value. Power iteration on M^T M; falls back to a full
/// symmetric eigendecomposition when the iteration stagnates.
inline double spectral_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  const Matrix S = M.transpose() * M;
  const Eigen::Index n = S.rows();
  if (S.cwiseAbs().maxCoeff() == 0.0) return 0.0;

  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.1 * std::sin(1.0 + 3.7 * static_cast<double>(i));
  v.normalize();

  constexpr int kMaxIter = 100000;
  constexpr double kTol = 1e-12;
  double theta = 0.0;
  for (int it = 0; it < kMaxIter; ++it) {
    Vector w = S * v;
    theta = v.dot(w);
    const double wn = w.norm();
    if (wn == 0.0) break;
    if ((w - theta * v).norm() <= kTol * std::max(theta, 1e-300)) return std::sqrt(std::max(theta, 0.0));
    v = w / wn;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(es.eigenvalues().maxCoeff(), 0.0));
}

/// Solves G X + X G^T = M for X, i.e. X = int_0^inf e^{-Gt} M e^{-G^T t} dt.
/// Uses the Kronecker-vectorized system, which is fine for r <= ~10.
inline Matrix lyapunov_solve(const Matrix& G, const Matrix& M) {
  const Eigen::Index r = G.rows();
  if (G.cols() != r || M.rows() != r || M.cols() != r) {
    throw PreconditionError("lyapunov_solve: G and M must be square of equal size");
  }
  if (r == 0) return Matrix(0, 0);
  Eigen::EigenSolver<Matrix> es(G, false);
  const double min_re = es.eigenvalues().real().minCoeff();
  if (!(min_re > 0.0)) {
    std::ostringstream msg;
    msg << "lyapunov_solve: -G is not stable (min Re eig(G) = " << min_re
        << "); restricted strong convexity fails numerically";
    throw NumericalError(msg.str());
  }
  const Matrix I = Matrix::Identity(r, r);
  Matrix K = Matrix::Zero(r * r, r * r);
  // vec(G X) = (I kron G) vec X, vec(X G^T) = (G kron I) vec X, column-major.
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < r; ++j) {
      K.block(i * r, j * r, r, r) += I(i, j) * G;
      K.block(i * r, j * r, r, r) += G(i, j) * I;
    }
  }
  const Vector vecM = Eigen::Map<const Vector>(M.data(), r * r);
  const Vector vecX = K.partialPivLu().solve(vecM);
  Matrix X = Eigen::Map<const Matrix>(vecX.data(), r, r);
  return 0.5 * (X + X.transpose());
}

}  // namespace dda
