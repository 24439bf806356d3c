#pragma once

// Distributed dual averaging (DDA), the distributed projected stochastic
// gradient baseline (DPG), trajectory recording, and the exact per-step
// decomposition of the projected error Delta_k = P_B (xbar_k - x*).

#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "dda/errors.hpp"
#include "dda/linalg.hpp"
#include "dda/network.hpp"
#include "dda/polyhedron.hpp"
#include "dda/problem.hpp"
#include "dda/schedule.hpp"

namespace dda {

enum class Algorithm { DDA, DPG };

inline const char* to_string(Algorithm a) { return a == Algorithm::DDA ? "dda" : "dpg"; }

/// How the initial state is drawn. With `box` set, x0 ~ U(box) and every
/// agent starts from z_{j,0} = x0 (or an independent draw each when
/// per_agent is true). `duals` overrides everything with explicit rows.
struct InitSpec {
  Matrix box;  // d x 2, columns lo and hi
  bool per_agent = false;
  std::optional<Vector> point;
  std::optional<Matrix> duals;  // m x d
};

/// Which iterations are stored in the Trajectory.
struct RecordPolicy {
  bool enabled = true;
  long long dense_until = 2000;
  long long dense_stride = 1;
  long long sparse_stride = 10;

  [[nodiscard]] bool should_record(long long k) const {
    if (!enabled) return false;
    if (k <= dense_until) return dense_stride > 0 && k % dense_stride == 0;
    return sparse_stride > 0 && k % sparse_stride == 0;
  }
};

struct RunOptions {
  long long steps = 0;
  InitSpec init;
  RecordPolicy record;
  double active_tol = 1e-6;
  Vector reference;  // x*, for dist_to_opt; may be empty
};

struct Record {
  long long k = 0;
  Matrix x;                 // m x d, x_{j,k}
  Vector xbar;              // DDA: Q(zbar_{k-1}); DPG: mean of x_{j,k}
  double consensus_error = 0.0;  // DDA: sum_j ||z_{j,k} - zbar_k||^2; DPG: same for x_{j,k}
  Vector dist_to_opt;       // ||x_{j,k} - x*|| per agent
  ActiveSet xbar_active;
  Vector lambda;            // multipliers of the xbar projection (DDA only)
  Vector mu;
};

struct Trajectory {
  Algorithm algorithm = Algorithm::DDA;
  int agents = 0;
  Eigen::Index dim = 0;
  Matrix initial;  // m x d initial duals (DDA) or primal points (DPG)
  std::vector<Record> records;
};

/// Everything produced in one iteration, handed to an optional observer.
struct StepView {
  long long k = 0;
  double alpha = 0.0;
  const Matrix* z_prev = nullptr;  // DDA: z_{., k-1}; DPG: x_{., k}
  const Matrix* x = nullptr;       // x_{j,k}
  const Matrix* grads = nullptr;   // sampled gradients at x_{j,k}
  const Matrix* z = nullptr;       // DDA: z_{., k}; DPG: mixed-and-stepped point before projection
  const Vector* xbar = nullptr;
  const ProjectionResult* xbar_projection = nullptr;  // DDA only
  double consensus_error = 0.0;
};

using StepObserver = std::function<void(const StepView&)>;

namespace detail {

inline Matrix draw_initial(const InitSpec& init, int m, Eigen::Index d, Rng& rng) {
  if (init.duals) {
    if (init.duals->rows() != m || init.duals->cols() != d) throw ConfigError("init: explicit duals must be m x d");
    return *init.duals;
  }
  if (init.point) {
    if (init.point->size() != d) throw ConfigError("init: point has the wrong dimension");
    return init.point->transpose().replicate(m, 1);
  }
  if (init.box.rows() != d || init.box.cols() != 2) throw ConfigError("init: box must be d x 2");
  auto draw = [&]() {
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      std::uniform_real_distribution<double> u(init.box(i, 0), init.box(i, 1));
      v(i) = u(rng);
    }
    return v;
  };
  Matrix Z(m, d);
  if (init.per_agent) {
    for (int j = 0; j < m; ++j) Z.row(j) = draw().transpose();
  } else {
    const Vector x0 = draw();
    Z = x0.transpose().replicate(m, 1);
  }
  return Z;
}

inline double row_disagreement(const Matrix& Z) {
  const Eigen::RowVectorXd mean = Z.colwise().mean();
  return (Z.rowwise() - mean).squaredNorm();
}

template <GradientOracle P>
void check_shapes(const P& problem, const Polyhedron& set, const GossipScheme& scheme) {
  if (problem.dim() != set.dim()) throw ConfigError("run: problem and constraint set dimensions differ");
  if (problem.agents() != scheme.agents()) throw ConfigError("run: problem and gossip scheme agent counts differ");
}

inline Vector distances(const Matrix& X, const Vector& ref) {
  Vector d(X.rows());
  if (ref.size() != X.cols()) {
    d.setConstant(std::numeric_limits<double>::quiet_NaN());
    return d;
  }
  for (Eigen::Index j = 0; j < X.rows(); ++j) d(j) = (X.row(j).transpose() - ref).norm();
  return d;
}

}  // namespace detail

/// Algorithm 1: x_{j,k} = Q(z_{j,k-1});  z_{j,k} = sum_i [A_k]_{ji} z_{i,k-1} - alpha_k grad F_j(x_{j,k}; xi_{j,k}).
template <GradientOracle P>
Trajectory dda_run(const P& problem, const Polyhedron& set, const GossipScheme& scheme, const StepSizeSchedule& schedule,
                   const RunOptions& opt, Rng& rng, const StepObserver& observer = {}) {
  detail::check_shapes(problem, set, scheme);
  const int m = problem.agents();
  const Eigen::Index d = problem.dim();
  Trajectory traj;
  traj.algorithm = Algorithm::DDA;
  traj.agents = m;
  traj.dim = d;

  Matrix Z = detail::draw_initial(opt.init, m, d, rng);
  traj.initial = Z;
  Matrix Zprev(m, d), X(m, d), G(m, d);
  std::vector<ProjectionWorkspace> ws(static_cast<std::size_t>(m));
  ProjectionWorkspace ws_bar;

  for (long long k = 1; k <= opt.steps; ++k) {
    const double alpha = schedule(k);
    Zprev = Z;
    try {
      for (int j = 0; j < m; ++j) X.row(j) = set.project(Zprev.row(j).transpose(), &ws[static_cast<std::size_t>(j)]).point.transpose();
    } catch (const NumericalError& e) {
      std::ostringstream msg;
      msg << "dda_run: iteration " << k << ": " << e.what();
      throw NumericalError(msg.str());
    }
    const Vector zbar_prev = Zprev.colwise().mean().transpose();
    const ProjectionResult bar = set.project(zbar_prev, &ws_bar);

    const GossipDraw draw = scheme.draw(rng);
    for (int j = 0; j < m; ++j) G.row(j) = problem.sample_gradient(j, X.row(j).transpose(), rng).transpose();
    scheme.apply(draw, Z);
    Z.noalias() -= alpha * G;

    const double cons = detail::row_disagreement(Z);
    if (opt.record.should_record(k)) {
      Record r;
      r.k = k;
      r.x = X;
      r.xbar = bar.point;
      r.consensus_error = cons;
      r.dist_to_opt = detail::distances(X, opt.reference);
      r.xbar_active = set.active_set(bar.point, opt.active_tol);
      r.lambda = bar.lambda;
      r.mu = bar.mu;
      traj.records.push_back(std::move(r));
    }
    if (observer) {
      StepView v;
      v.k = k;
      v.alpha = alpha;
      v.z_prev = &Zprev;
      v.x = &X;
      v.grads = &G;
      v.z = &Z;
      v.xbar = &bar.point;
      v.xbar_projection = &bar;
      v.consensus_error = cons;
      observer(v);
    }
  }
  return traj;
}

/// Baseline: x_{j,k+1} = P_X(sum_i [A_k]_{ji} x_{i,k} - alpha_k grad F_j(x_{j,k}; xi_{j,k})),
/// started from x_{j,1} = P_X(x_{j,0}).
template <GradientOracle P>
Trajectory dpg_run(const P& problem, const Polyhedron& set, const GossipScheme& scheme, const StepSizeSchedule& schedule,
                   const RunOptions& opt, Rng& rng, const StepObserver& observer = {}) {
  detail::check_shapes(problem, set, scheme);
  const int m = problem.agents();
  const Eigen::Index d = problem.dim();
  Trajectory traj;
  traj.algorithm = Algorithm::DPG;
  traj.agents = m;
  traj.dim = d;

  const Matrix X0 = detail::draw_initial(opt.init, m, d, rng);
  traj.initial = X0;
  std::vector<ProjectionWorkspace> ws(static_cast<std::size_t>(m));
  Matrix X(m, d), Y(m, d), G(m, d);
  for (int j = 0; j < m; ++j) X.row(j) = set.project(X0.row(j).transpose(), &ws[static_cast<std::size_t>(j)]).point.transpose();

  for (long long k = 1; k <= opt.steps; ++k) {
    const double alpha = schedule(k);
    const Vector xbar = X.colwise().mean().transpose();
    const double cons = detail::row_disagreement(X);
    if (opt.record.should_record(k)) {
      Record r;
      r.k = k;
      r.x = X;
      r.xbar = xbar;
      r.consensus_error = cons;
      r.dist_to_opt = detail::distances(X, opt.reference);
      r.xbar_active = set.active_set(xbar, opt.active_tol);
      traj.records.push_back(std::move(r));
    }
    const GossipDraw draw = scheme.draw(rng);
    for (int j = 0; j < m; ++j) G.row(j) = problem.sample_gradient(j, X.row(j).transpose(), rng).transpose();
    Y = X;
    scheme.apply(draw, Y);
    Y.noalias() -= alpha * G;
    const Matrix Xk = X;
    try {
      for (int j = 0; j < m; ++j) X.row(j) = set.project(Y.row(j).transpose(), &ws[static_cast<std::size_t>(j)]).point.transpose();
    } catch (const NumericalError& e) {
      std::ostringstream msg;
      msg << "dpg_run: iteration " << k << ": " << e.what();
      throw NumericalError(msg.str());
    }
    if (observer) {
      StepView v;
      v.k = k;
      v.alpha = alpha;
      v.z_prev = &Xk;
      v.x = &Xk;
      v.grads = &G;
      v.z = &Y;
      v.xbar = &xbar;
      v.consensus_error = cons;
      observer(v);
    }
  }
  return traj;
}

template <GradientOracle P>
Trajectory run_algorithm(Algorithm algo, const P& problem, const Polyhedron& set, const GossipScheme& scheme,
                         const StepSizeSchedule& schedule, const RunOptions& opt, Rng& rng, const StepObserver& observer = {}) {
  return algo == Algorithm::DDA ? dda_run(problem, set, scheme, schedule, opt, rng, observer)
                                : dpg_run(problem, set, scheme, schedule, opt, rng, observer);
}

/// Terms of Delta_{k+1} = Delta_k - alpha_k H Delta_k + alpha_k (zeta + eta + s + eps).
struct Decomposition {
  Vector delta;       // Delta_k
  Vector delta_next;  // Delta_{k+1}
  Vector zeta;        // second-order Taylor remainder
  Vector eta;         // agent disagreement in gradients
  Vector s;           // averaged gradient noise
  Vector eps;         // multiplier change on C rows + off-subspace curvature
  Vector residual;    // left side minus right side
};

/// Inputs of one step of the decomposition.
struct DecompositionInput {
  double alpha = 0.0;
  Vector xbar;        // xbar_k = Q(zbar_{k-1})
  Vector mu_prev;     // C-multipliers of that projection
  Matrix x;           // x_{j,k}, m x d
  Matrix grads;       // sampled gradients at x_{j,k}
  Vector xbar_next;   // xbar_{k+1} = Q(zbar_k)
  Vector mu_next;
};

/// Evaluates the decomposition for doubly stochastic schemes, where the
/// network average obeys zbar_k - zbar_{k-1} = -(alpha_k/m) sum_j grad F_j.
template <GradientOracle P>
class RecursionDecomposer {
public:
  RecursionDecomposer(const P& problem, const Polyhedron& set, const GossipScheme& scheme, Vector x_star)
      : problem_(problem), set_(set), x_star_(std::move(x_star)) {
    if (!scheme.doubly_stochastic()) {
      throw PreconditionError("error decomposition requires a doubly stochastic gossip scheme");
    }
    if (x_star_.size() != set.dim()) throw PreconditionError("error decomposition: x* has the wrong dimension");
    m_ = problem.agents();
    P_B_ = projection_matrix(set.B(), set.dim());
    hess_ = problem.hessian_total(x_star_);
    H_ = P_B_ * hess_ * P_B_ / static_cast<double>(m_);
    grad_star_ = Vector::Zero(set.dim());
    for (int j = 0; j < m_; ++j) grad_star_ += problem.true_gradient(j, x_star_);
  }

  [[nodiscard]] const Matrix& P_B() const { return P_B_; }
  [[nodiscard]] const Matrix& H() const { return H_; }

  [[nodiscard]] Decomposition decompose(const DecompositionInput& in) const {
    const Eigen::Index d = set_.dim();
    const double inv_m = 1.0 / static_cast<double>(m_);
    const Vector e = in.xbar - x_star_;
    Vector grad_bar = Vector::Zero(d);
    Vector eta_sum = Vector::Zero(d);
    Vector noise_sum = Vector::Zero(d);
    for (int j = 0; j < m_; ++j) {
      const Vector xj = in.x.row(j).transpose();
      const Vector gj_bar = problem_.true_gradient(j, in.xbar);
      const Vector gj = problem_.true_gradient(j, xj);
      grad_bar += gj_bar;
      eta_sum += gj_bar - gj;
      noise_sum += in.grads.row(j).transpose() - gj;
    }
    Decomposition out;
    out.delta = P_B_ * e;
    out.delta_next = P_B_ * (in.xbar_next - x_star_);
    out.zeta = -inv_m * (P_B_ * (grad_bar - grad_star_ - hess_ * e));
    out.eta = inv_m * (P_B_ * eta_sum);
    out.s = -inv_m * (P_B_ * noise_sum);
    const Matrix I = Matrix::Identity(d, d);
    out.eps = (P_B_ * (set_.C().transpose() * (in.mu_prev - in.mu_next))) / in.alpha +
              inv_m * (P_B_ * hess_ * (P_B_ - I) * e);
    out.residual = out.delta_next - (out.delta - in.alpha * (H_ * out.delta) + in.alpha * (out.zeta + out.eta + out.s + out.eps));
    return out;
  }

  /// Convenience for a DDA observer: computes xbar_{k+1} from z_{., k}.
  [[nodiscard]] Decomposition decompose(const StepView& v) const {
    if (v.xbar_projection == nullptr) throw PreconditionError("error decomposition needs a DDA step");
    DecompositionInput in;
    in.alpha = v.alpha;
    in.xbar = *v.xbar;
    in.mu_prev = v.xbar_projection->mu;
    in.x = *v.x;
    in.grads = *v.grads;
    const ProjectionResult next = set_.project(v.z->colwise().mean().transpose());
    in.xbar_next = next.point;
    in.mu_next = next.mu;
    return decompose(in);
  }

private:
  const P& problem_;
  const Polyhedron& set_;
  Vector x_star_;
  int m_ = 0;
  Matrix P_B_;
  Matrix hess_;
  Matrix H_;
  Vector grad_star_;
};

}  // namespace dda
