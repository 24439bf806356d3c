#pragma once

// Stochastic objectives. The concrete instance is distributed linear
// regression: agent j observes d = u^T x* + v with u ~ N(0, R_j),
// v ~ N(0, sigma_j^2), and holds f_j(x) = E[(u^T x - d)^2] (+ optional t^T x).

#include <concepts>
#include <random>
#include <utility>
#include <vector>

#include "dda/errors.hpp"
#include "dda/linalg.hpp"
#include "dda/network.hpp"

namespace dda {

/// Capability required by the optimization loops and the analysis layer.
template <typename P>
concept GradientOracle = requires(const P& p, int j, const Vector& x, Rng& rng) {
  { p.agents() } -> std::convertible_to<int>;
  { p.dim() } -> std::convertible_to<Eigen::Index>;
  { p.sample_gradient(j, x, rng) } -> std::convertible_to<Vector>;
  { p.true_gradient(j, x) } -> std::convertible_to<Vector>;
  { p.hessian_total(x) } -> std::convertible_to<Matrix>;
  { p.gradient_covariance(j, x) } -> std::convertible_to<Matrix>;
};

class QuadraticEstimationProblem {
public:
  QuadraticEstimationProblem(Vector x_star, std::vector<Matrix> R_u, std::vector<double> sigma_v2, Vector tilt = Vector())
      : x_star_(std::move(x_star)), R_(std::move(R_u)), sigma2_(std::move(sigma_v2)), tilt_(std::move(tilt)) {
    const Eigen::Index d = x_star_.size();
    if (d < 1) throw ConfigError("problem: x* must have at least one component");
    if (R_.empty()) throw ConfigError("problem: at least one agent is required");
    if (R_.size() != sigma2_.size()) throw ConfigError("problem: R_u and sigma_v2 must have one entry per agent");
    if (tilt_.size() == 0) tilt_ = Vector::Zero(d);
    if (tilt_.size() != d) throw ConfigError("problem: tilt must have dimension d");
    sqrt_.reserve(R_.size());
    for (std::size_t j = 0; j < R_.size(); ++j) {
      const Matrix& R = R_[j];
      if (R.rows() != d || R.cols() != d) throw ConfigError("problem: every R_u must be d x d");
      if (!R.allFinite() || (R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + R.cwiseAbs().maxCoeff())) {
        throw ConfigError("problem: every R_u must be finite and symmetric");
      }
      Eigen::SelfAdjointEigenSolver<Matrix> es(R);
      if (es.eigenvalues().minCoeff() < -1e-10 * (1.0 + es.eigenvalues().cwiseAbs().maxCoeff())) {
        throw ConfigError("problem: every R_u must be positive semidefinite");
      }
      if (!(sigma2_[j] >= 0.0) || !std::isfinite(sigma2_[j])) throw ConfigError("problem: noise variances must be nonnegative");
      // Symmetric square root; handles singular PSD matrices.
      const Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
      sqrt_.push_back(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    }
  }

  [[nodiscard]] int agents() const { return static_cast<int>(R_.size()); }
  [[nodiscard]] Eigen::Index dim() const { return x_star_.size(); }
  [[nodiscard]] const Vector& x_star() const { return x_star_; }
  [[nodiscard]] const std::vector<Matrix>& R_u() const { return R_; }
  [[nodiscard]] const std::vector<double>& sigma_v2() const { return sigma2_; }
  [[nodiscard]] const Vector& tilt() const { return tilt_; }

  [[nodiscard]] double objective(int j, const Vector& x) const {
    const Vector e = x - x_star_;
    return e.dot(R_[idx(j)] * e) + sigma2_[idx(j)] + tilt_.dot(x);
  }

  [[nodiscard]] double objective_total(const Vector& x) const {
    double s = 0.0;
    for (int j = 0; j < agents(); ++j) s += objective(j, x);
    return s;
  }

  /// Gradient of (u^T x - d)^2 + t^T x for given draws u and v.
  [[nodiscard]] Vector sample_gradient_from(int j, const Vector& x, const Vector& u, double v) const {
    (void)idx(j);
    return 2.0 * u * (u.dot(x - x_star_) - v) + tilt_;
  }

  [[nodiscard]] Vector sample_gradient(int j, const Vector& x, Rng& rng) const {
    std::normal_distribution<double> n01(0.0, 1.0);
    Vector w(dim());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = n01(rng);
    const double v = std::sqrt(sigma2_[idx(j)]) * n01(rng);
    return sample_gradient_from(j, x, sqrt_[idx(j)] * w, v);
  }

  [[nodiscard]] Vector true_gradient(int j, const Vector& x) const { return 2.0 * R_[idx(j)] * (x - x_star_) + tilt_; }

  [[nodiscard]] Vector gradient_total(const Vector& x) const {
    Vector g = Vector::Zero(dim());
    for (int j = 0; j < agents(); ++j) g += true_gradient(j, x);
    return g;
  }

  /// Hessian of f = sum_j f_j; constant for this family.
  [[nodiscard]] Matrix hessian_total(const Vector& /*x*/) const {
    Matrix H = Matrix::Zero(dim(), dim());
    for (const auto& R : R_) H += 2.0 * R;
    return H;
  }

  /// Cov(grad F_j(x*; xi)) = 4 sigma_j^2 R_j. Only defined at x*.
  [[nodiscard]] Matrix gradient_covariance(int j, const Vector& /*x_star*/) const { return 4.0 * sigma2_[idx(j)] * R_[idx(j)]; }

private:
  [[nodiscard]] std::size_t idx(int j) const {
    if (j < 0 || j >= agents()) throw PreconditionError("problem: agent index out of range");
    return static_cast<std::size_t>(j);
  }

  Vector x_star_;
  std::vector<Matrix> R_;
  std::vector<double> sigma2_;
  Vector tilt_;
  std::vector<Matrix> sqrt_;
};

static_assert(GradientOracle<QuadraticEstimationProblem>);

/// Smallest eigenvalue of U_r^T H U_r, the curvature of H restricted to ker(B).
/// Returns +inf when ker(B) is trivial.
inline double restricted_curvature(const Matrix& H, const Matrix& B) {
  const SubspaceBasis basis = null_space_basis(B, H.rows());
  if (basis.r == 0) return std::numeric_limits<double>::infinity();
  const Matrix Ur = basis.active();
  Eigen::SelfAdjointEigenSolver<Matrix> es(Ur.transpose() * H * Ur, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// R_j = M_j M_j^T / d with standard normal M_j, sigma_j^2 ~ U(sigma_range).
inline QuadraticEstimationProblem generate_instance(int m, int d, const Vector& x_star, Rng& rng,
                                                    std::pair<double, double> sigma_range, const Vector& tilt = Vector()) {
  if (m < 1 || d < 1) throw PreconditionError("generate_instance: m and d must be >= 1");
  if (x_star.size() != d) throw PreconditionError("generate_instance: x* has the wrong dimension");
  if (!(sigma_range.first >= 0.0 && sigma_range.second >= sigma_range.first)) {
    throw PreconditionError("generate_instance: sigma range must satisfy 0 <= lo <= hi");
  }
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> unif(sigma_range.first, sigma_range.second);
  std::vector<Matrix> R;
  std::vector<double> s2;
  R.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    Matrix M(d, d);
    for (int c = 0; c < d; ++c)
      for (int r = 0; r < d; ++r) M(r, c) = n01(rng);
    Matrix Rj = M * M.transpose() / static_cast<double>(d);
    R.push_back(0.5 * (Rj + Rj.transpose()));
    s2.push_back(sigma_range.first == sigma_range.second ? sigma_range.first : unif(rng));
  }
  return QuadraticEstimationProblem(x_star, std::move(R), std::move(s2), tilt);
}

/// Resamples until sum_j R_j restricted to ker(B) has smallest eigenvalue at
/// least `margin`.
inline QuadraticEstimationProblem generate_instance(int m, int d, const Vector& x_star, Rng& rng,
                                                    std::pair<double, double> sigma_range, const Matrix& B, double margin,
                                                    const Vector& tilt = Vector(), int max_attempts = 1000) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    QuadraticEstimationProblem p = generate_instance(m, d, x_star, rng, sigma_range, tilt);
    Matrix S = Matrix::Zero(d, d);
    for (const auto& R : p.R_u()) S += R;
    if (restricted_curvature(S, B) >= margin) return p;
  }
  throw NumericalError("generate_instance: could not draw an instance with the requested restricted curvature margin");
}

}  // namespace dda
