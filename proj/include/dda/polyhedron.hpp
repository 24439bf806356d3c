#pragma once

// Polyhedral constraint set X = {x : Bx <= b, Cx <= c} and its Euclidean
// projection, which is the mirror map of the regularizer psi(x) = ||x||^2 / 2.
// The B-block holds the rows expected active at the optimum.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "dda/errors.hpp"
#include "dda/linalg.hpp"

namespace dda {

/// Projection output. Multipliers satisfy
///   point - z + B^T lambda + C^T mu = 0,  lambda, mu >= 0,
/// with complementary slackness against the rows listed in active_B/active_C.
struct ProjectionResult {
  Vector point;
  Vector lambda;
  Vector mu;
  std::vector<int> active_B;
  std::vector<int> active_C;
};

struct ActiveSet {
  std::vector<int> B;
  std::vector<int> C;
  friend bool operator==(const ActiveSet&, const ActiveSet&) = default;
};

/// Caller-owned warm-start state for repeated projections. Holds the last
/// working set and the Gram factorization of its rows.
class ProjectionWorkspace {
public:
  void reset() {
    working_set_.clear();
    factor_valid_ = false;
  }
  [[nodiscard]] const std::vector<int>& working_set() const { return working_set_; }

private:
  friend class Polyhedron;
  std::vector<int> working_set_;
  bool factor_valid_ = false;
  Matrix rows_;                 // stacked A_W
  Vector rhs_;                  // a_W
  Eigen::LDLT<Matrix> gram_;    // A_W A_W^T
};

class Polyhedron {
public:
  Polyhedron(Matrix B, Vector b, Matrix C, Vector c) : B_(std::move(B)), b_(std::move(b)), C_(std::move(C)), c_(std::move(c)) {
    d_ = std::max(B_.cols(), C_.cols());
    if (B_.rows() == 0) B_.resize(0, d_);
    if (C_.rows() == 0) C_.resize(0, d_);
    if (d_ == 0) throw ConfigError("polyhedron: dimension must be at least 1");
    if (B_.cols() != d_ || C_.cols() != d_) throw ConfigError("polyhedron: B and C must have the same number of columns");
    if (b_.size() != B_.rows()) throw ConfigError("polyhedron: length of b must equal the number of rows of B");
    if (c_.size() != C_.rows()) throw ConfigError("polyhedron: length of c must equal the number of rows of C");
    if (!B_.allFinite() || !b_.allFinite() || !C_.allFinite() || !c_.allFinite()) {
      throw ConfigError("polyhedron: entries must be finite");
    }
    A_.resize(B_.rows() + C_.rows(), d_);
    A_ << B_, C_;
    a_.resize(b_.size() + c_.size());
    a_ << b_, c_;
    row_norms_ = A_.rowwise().norm();
    for (Eigen::Index i = 0; i < A_.rows(); ++i) {
      if (row_norms_(i) == 0.0 && a_(i) < 0.0) throw ConfigError("polyhedron: constraint 0 <= negative value is infeasible");
    }
    // Nonemptiness: the dual active-set solver detects an empty set.
    const Vector origin = Vector::Zero(d_);
    ProjectionResult p;
    try {
      p = project(origin);
    } catch (const NumericalError& e) {
      throw ConfigError(std::string("polyhedron: feasible set is empty (") + e.what() + ")");
    }
    if (!contains(p.point, 1e-8)) throw ConfigError("polyhedron: feasible set is empty");
  }

  static Polyhedron unconstrained(Eigen::Index d) { return Polyhedron(Matrix(0, d), Vector(0), Matrix(0, d), Vector(0)); }

  [[nodiscard]] Eigen::Index dim() const { return d_; }
  [[nodiscard]] Eigen::Index rows_B() const { return B_.rows(); }
  [[nodiscard]] Eigen::Index rows_C() const { return C_.rows(); }
  [[nodiscard]] const Matrix& B() const { return B_; }
  [[nodiscard]] const Vector& b() const { return b_; }
  [[nodiscard]] const Matrix& C() const { return C_; }
  [[nodiscard]] const Vector& c() const { return c_; }
  /// [B; C] and [b; c].
  [[nodiscard]] const Matrix& A() const { return A_; }
  [[nodiscard]] const Vector& a() const { return a_; }

  [[nodiscard]] bool contains(const Vector& x, double tol) const {
    if (tol < 0.0) throw PreconditionError("contains: tol must be nonnegative");
    if (x.size() != d_) throw PreconditionError("contains: dimension mismatch");
    for (Eigen::Index i = 0; i < A_.rows(); ++i) {
      if (A_.row(i).dot(x) - a_(i) > tol) return false;
    }
    return true;
  }

  /// Rows with |(Ax - a)_i| <= tol.
  [[nodiscard]] ActiveSet active_set(const Vector& x, double tol) const {
    if (x.size() != d_) throw PreconditionError("active_set: dimension mismatch");
    ActiveSet out;
    for (Eigen::Index i = 0; i < B_.rows(); ++i) {
      if (std::abs(B_.row(i).dot(x) - b_(i)) <= tol) out.B.push_back(static_cast<int>(i));
    }
    for (Eigen::Index i = 0; i < C_.rows(); ++i) {
      if (std::abs(C_.row(i).dot(x) - c_(i)) <= tol) out.C.push_back(static_cast<int>(i));
    }
    return out;
  }

  /// Euclidean projection argmin_{x in X} ||x - z|| with KKT multipliers.
  /// With a workspace, the previous working set is tried first; a dual
  /// active-set (Goldfarb-Idnani) solve runs when that guess fails KKT.
  [[nodiscard]] ProjectionResult project(const Vector& z, ProjectionWorkspace* ws = nullptr) const {
    if (z.size() != d_) throw PreconditionError("project: dimension mismatch");
    if (!z.allFinite()) throw PreconditionError("project: input must be finite");
    if (ws != nullptr) {
      ProjectionResult warm;
      if (try_working_set(z, *ws, warm)) return warm;
    }
    std::vector<int> act;
    Vector u;
    Vector x = solve_dual_active_set(z, act, u);
    ProjectionResult out = assemble(std::move(x), act, u);
    if (ws != nullptr) {
      std::vector<int> sorted = act;
      std::sort(sorted.begin(), sorted.end());
      ws->working_set_ = std::move(sorted);
      ws->factor_valid_ = false;
    }
    return out;
  }

  /// R(x, z) = psi(x) + psi*(z) - <x, z> for psi = ||.||^2 / 2.
  [[nodiscard]] double fenchel_coupling(const Vector& x, const Vector& z) const {
    if (!contains(x, 1e-9)) throw PreconditionError("fenchel_coupling: x must lie in the feasible set");
    const Vector q = project(z).point;
    const double conj = z.dot(q) - 0.5 * q.squaredNorm();
    return 0.5 * x.squaredNorm() + conj - x.dot(z);
  }

private:
  [[nodiscard]] double feas_tol(Eigen::Index i, double xnorm) const {
    return 1e-12 * (1.0 + std::abs(a_(i)) + row_norms_(i) * xnorm);
  }

  [[nodiscard]] bool feasible_strict(const Vector& x) const {
    const double xn = x.norm();
    for (Eigen::Index i = 0; i < A_.rows(); ++i) {
      if (A_.row(i).dot(x) - a_(i) > feas_tol(i, xn)) return false;
    }
    return true;
  }

  bool try_working_set(const Vector& z, ProjectionWorkspace& ws, ProjectionResult& out) const {
    const auto& W = ws.working_set_;
    if (W.empty()) {
      if (!feasible_strict(z)) return false;
      out = assemble(z, W, Vector());
      return true;
    }
    if (!ws.factor_valid_) {
      ws.rows_.resize(static_cast<Eigen::Index>(W.size()), d_);
      ws.rhs_.resize(static_cast<Eigen::Index>(W.size()));
      for (std::size_t k = 0; k < W.size(); ++k) {
        ws.rows_.row(static_cast<Eigen::Index>(k)) = A_.row(W[k]);
        ws.rhs_(static_cast<Eigen::Index>(k)) = a_(W[k]);
      }
      ws.gram_.compute(ws.rows_ * ws.rows_.transpose());
      ws.factor_valid_ = true;
      if (ws.gram_.info() != Eigen::Success) {
        ws.reset();
        return false;
      }
    }
    const Vector lam = ws.gram_.solve(ws.rows_ * z - ws.rhs_);
    if ((lam.array() < 0.0).any() || !lam.allFinite()) return false;
    Vector x = z - ws.rows_.transpose() * lam;
    if (!feasible_strict(x)) return false;
    out = assemble(std::move(x), W, lam);
    return true;
  }

  ProjectionResult assemble(Vector x, const std::vector<int>& act, const Vector& u) const {
    ProjectionResult r;
    r.point = std::move(x);
    r.lambda = Vector::Zero(B_.rows());
    r.mu = Vector::Zero(C_.rows());
    const auto nb = static_cast<int>(B_.rows());
    for (std::size_t k = 0; k < act.size(); ++k) {
      const int i = act[k];
      const double val = std::max(u(static_cast<Eigen::Index>(k)), 0.0);
      if (i < nb) {
        r.lambda(i) = val;
        r.active_B.push_back(i);
      } else {
        r.mu(i - nb) = val;
        r.active_C.push_back(i - nb);
      }
    }
    std::sort(r.active_B.begin(), r.active_B.end());
    std::sort(r.active_C.begin(), r.active_C.end());
    return r;
  }

  // Dual active-set method for min 1/2 ||x - z||^2 s.t. A x <= a, written in
  // the n_i^T x >= b_i convention with n_i = -A_i^T, b_i = -a_i. Starts from
  // the unconstrained minimizer x = z and adds violated constraints one at a
  // time, dropping constraints whose multipliers would turn negative.
  Vector solve_dual_active_set(const Vector& z, std::vector<int>& act, Vector& u) const {
    Vector x = z;
    act.clear();
    std::vector<double> mult;
    const Eigen::Index nrows = A_.rows();
    const int max_iter = 50 * static_cast<int>(nrows + d_ + 1);
    int iter = 0;

    auto fail = [&](const char* why) {
      std::ostringstream msg;
      msg << "projection: " << why << " (iterations=" << iter << ", working set size=" << act.size() << ", z=["
          << z.transpose() << "], x=[" << x.transpose() << "])";
      throw NumericalError(msg.str());
    };

    for (;;) {
      // Most violated constraint outside the active set.
      const double xn = x.norm();
      int p = -1;
      double worst = 0.0;
      for (Eigen::Index i = 0; i < nrows; ++i) {
        if (std::find(act.begin(), act.end(), static_cast<int>(i)) != act.end()) continue;
        const double viol = (A_.row(i).dot(x) - a_(i));
        if (viol > feas_tol(i, xn) && viol / std::max(row_norms_(i), 1e-300) > worst) {
          worst = viol / std::max(row_norms_(i), 1e-300);
          p = static_cast<int>(i);
        }
      }
      if (p < 0) break;

      const Vector np = -A_.row(p).transpose();
      double up = 0.0;
      for (;;) {
        if (++iter > max_iter) fail("iteration cap exceeded");
        const auto q = static_cast<Eigen::Index>(act.size());
        Vector step = np;
        Vector r(q);
        if (q > 0) {
          Matrix N(d_, q);
          for (Eigen::Index k = 0; k < q; ++k) N.col(k) = -A_.row(act[static_cast<std::size_t>(k)]).transpose();
          Eigen::HouseholderQR<Matrix> qr(N);
          const Matrix Q1 = qr.householderQ() * Matrix::Identity(d_, q);
          const Matrix R = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>();
          const Vector proj = Q1.transpose() * np;
          step = np - Q1 * proj;
          r = R.triangularView<Eigen::Upper>().solve(proj);
        }
        // Partial (dual) step length.
        double t1 = std::numeric_limits<double>::infinity();
        Eigen::Index drop = -1;
        for (Eigen::Index k = 0; k < q; ++k) {
          if (r(k) > 1e-14) {
            const double ratio = mult[static_cast<std::size_t>(k)] / r(k);
            if (ratio < t1) {
              t1 = ratio;
              drop = k;
            }
          }
        }
        // Full (primal) step length.
        double t2 = std::numeric_limits<double>::infinity();
        const double sn = step.squaredNorm();
        const double slack = a_(p) - A_.row(p).dot(x);  // negative while violated
        if (sn > 1e-24 * np.squaredNorm()) t2 = -slack / sn;

        if (!std::isfinite(t1) && !std::isfinite(t2)) fail("constraints are inconsistent (empty feasible set)");

        if (!std::isfinite(t2)) {
          for (Eigen::Index k = 0; k < q; ++k) mult[static_cast<std::size_t>(k)] -= t1 * r(k);
          up += t1;
          act.erase(act.begin() + drop);
          mult.erase(mult.begin() + drop);
          continue;
        }
        const double t = std::min(t1, t2);
        x += t * step;
        for (Eigen::Index k = 0; k < q; ++k) mult[static_cast<std::size_t>(k)] -= t * r(k);
        up += t;
        if (t2 <= t1) {
          act.push_back(p);
          mult.push_back(up);
          break;
        }
        act.erase(act.begin() + drop);
        mult.erase(mult.begin() + drop);
      }
    }
    u = Eigen::Map<const Vector>(mult.data(), static_cast<Eigen::Index>(mult.size()));
    return x;
  }

  Matrix B_;
  Vector b_;
  Matrix C_;
  Vector c_;
  Matrix A_;
  Vector a_;
  Vector row_norms_;
  Eigen::Index d_ = 0;
};

}  // namespace dda
