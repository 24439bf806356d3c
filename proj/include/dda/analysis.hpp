#pragma once

// Asymptotic covariance model of the DDA iterates and the Monte Carlo
// machinery that compares it against simulated replications.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <thread>
#include <vector>

#include "dda/algorithms.hpp"
#include "dda/errors.hpp"
#include "dda/linalg.hpp"
#include "dda/network.hpp"
#include "dda/polyhedron.hpp"
#include "dda/problem.hpp"
#include "dda/statistics.hpp"

namespace dda {

/// Limit covariances of (x_{j,k} - x*)/sqrt(alpha_k) (Sigma) and of the
/// Polyak-Ruppert average (Sigma_star), both supported on ker(B).
struct AsymptoticModel {
  Matrix P_B;
  SubspaceBasis U;
  int r = 0;
  Matrix H;          // P_B hess P_B / m
  Matrix G;          // leading r x r block of U^T H U
  Matrix Sigma_bar;  // sum_j Cov_j / m^2
  Matrix Sigma1;     // r x r Lyapunov solution
  Matrix Sigma;
  Matrix Sigma_star;
};

template <GradientOracle P>
AsymptoticModel build_asymptotic_model(const P& problem, const Polyhedron& set, const Vector& x_star) {
  const Eigen::Index d = set.dim();
  if (x_star.size() != d) throw PreconditionError("asymptotic model: x* has the wrong dimension");
  const ActiveSet act = set.active_set(x_star, 1e-9);
  if (!set.contains(x_star, 1e-9) || static_cast<Eigen::Index>(act.B.size()) != set.rows_B() || !act.C.empty()) {
    throw PreconditionError("asymptotic model: the B rows must be exactly the constraints active at x*");
  }
  const int m = problem.agents();
  AsymptoticModel model;
  model.P_B = projection_matrix(set.B(), d);
  model.U = null_space_basis(set.B(), d);
  model.r = model.U.r;
  model.H = model.P_B * problem.hessian_total(x_star) * model.P_B / static_cast<double>(m);
  model.H = 0.5 * (model.H + model.H.transpose());
  const Matrix Ur = model.U.active();
  model.G = (model.U.U.transpose() * model.H * model.U.U).topLeftCorner(model.r, model.r);

  if (model.r > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (model.G + model.G.transpose()), Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, model.H.norm()))) {
      std::ostringstream msg;
      msg << "asymptotic model: G is not positive definite (min eigenvalue " << es.eigenvalues().minCoeff()
          << "); restricted strong convexity fails";
      throw NumericalError(msg.str());
    }
  }

  model.Sigma_bar = Matrix::Zero(d, d);
  for (int j = 0; j < m; ++j) model.Sigma_bar += problem.gradient_covariance(j, x_star);
  model.Sigma_bar /= static_cast<double>(m) * static_cast<double>(m);

  const Matrix noise = model.P_B * model.Sigma_bar * model.P_B;
  if (model.r > 0) {
    const Matrix M = Ur.transpose() * noise * Ur;
    model.Sigma1 = lyapunov_solve(model.G, 0.5 * (M + M.transpose()));
    model.Sigma = Ur * model.Sigma1 * Ur.transpose();
  } else {
    model.Sigma1 = Matrix(0, 0);
    model.Sigma = Matrix::Zero(d, d);
  }
  model.Sigma = 0.5 * (model.Sigma + model.Sigma.transpose());
  const Matrix Hp = pseudo_inverse(model.H);
  model.Sigma_star = Hp * noise * Hp;
  model.Sigma_star = 0.5 * (model.Sigma_star + model.Sigma_star.transpose());
  return model;
}

/// A fully specified simulation: everything a replication needs except its
/// random stream.
struct Experiment {
  QuadraticEstimationProblem problem;
  Polyhedron set;
  GossipScheme scheme;
  StepSizeSchedule schedule;
  RunOptions run;
  Algorithm algorithm = Algorithm::DDA;
  int agent = 0;                 // zero-based agent for the per-agent statistics
  double window_fraction = 0.25; // averaged statistic uses the last fraction of the horizon
  double active_tol = 1e-6;
  int threads = 1;
};

/// Independent stream for replication `index` of stream family `stream`.
inline Rng replication_rng(std::uint64_t master_seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

namespace streams {
inline constexpr std::uint64_t kInstance = 1;
inline constexpr std::uint64_t kReplication = 2;
inline constexpr std::uint64_t kSelfTest = 3;
}  // namespace streams

namespace detail {

/// Runs body(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots; the first exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline bool identified(const ActiveSet& act, Eigen::Index rows_B) {
  return static_cast<Eigen::Index>(act.B.size()) == rows_B && act.C.empty();
}

// Lexicographic order on rows, used to make aggregation independent of the
// order in which replications finished.
inline Matrix sort_rows(const Matrix& S) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(S.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < S.cols(); ++c) {
      if (S(a, c) != S(b, c)) return S(a, c) < S(b, c);
    }
    return false;
  });
  Matrix out(S.rows(), S.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = S.row(idx[i]);
  return out;
}

}  // namespace detail

struct IdentificationResult {
  bool found = false;
  long long K = 0;
};

/// Smallest recorded k such that every record from k on has the full B block
/// active and no C row active at xbar.
inline IdentificationResult identification_time(const Trajectory& traj, const Polyhedron& set, double tol) {
  IdentificationResult res;
  if (traj.records.empty()) return res;
  std::optional<long long> K;
  for (auto it = traj.records.rbegin(); it != traj.records.rend(); ++it) {
    if (!detail::identified(set.active_set(it->xbar, tol), set.rows_B())) break;
    K = it->k;
  }
  if (K) {
    res.found = true;
    res.K = *K;
  }
  return res;
}

/// Monte Carlo summary. Per-replication samples are kept so they can be
/// exported for plotting.
struct CovarianceReport {
  int n_runs = 0;
  long long steps = 0;
  int agent = 0;
  double alpha_final = 0.0;
  long long window_length = 0;
  Matrix scaled_samples;    // (x_{j,k} - x*)/sqrt(alpha_k) at the horizon, one row per run
  Matrix averaged_samples;  // windowed sum of (x_{j,t} - x*) / sqrt(window)
  Matrix empirical_cov_scaled;
  Matrix empirical_cov_averaged;
  Matrix model_Sigma;
  Matrix model_Sigma_star;
  double rel_frobenius_error_Sigma = 0.0;
  double rel_frobenius_error_SigmaStar = 0.0;
  double ks_statistic = 0.0;
  double ks_pvalue_active_direction = 1.0;
  double offmanifold_std_ratio = 0.0;
  double identification_fraction = 0.0;
  std::optional<double> median_identification_time;
  std::vector<long long> identification_times;  // per run, 0 when not identified
};

/// Aggregates replication outputs against the model. Pure function of the
/// multiset of rows: permuting the replications leaves the report unchanged.
inline CovarianceReport summarize(const AsymptoticModel& model, const Matrix& scaled, const Matrix& averaged,
                                  const std::vector<long long>& ident_times) {
  if (scaled.rows() < 2 || averaged.rows() != scaled.rows()) throw PreconditionError("summarize: need n_runs >= 2 paired samples");
  CovarianceReport rep;
  rep.n_runs = static_cast<int>(scaled.rows());
  rep.scaled_samples = scaled;
  rep.averaged_samples = averaged;
  rep.identification_times = ident_times;
  const Matrix s_sorted = detail::sort_rows(scaled);
  const Matrix a_sorted = detail::sort_rows(averaged);
  rep.empirical_cov_scaled = stats::sample_covariance(s_sorted);
  rep.empirical_cov_averaged = stats::sample_covariance(a_sorted);
  rep.model_Sigma = model.Sigma;
  rep.model_Sigma_star = model.Sigma_star;
  rep.rel_frobenius_error_Sigma = stats::relative_frobenius(rep.empirical_cov_scaled, model.Sigma);
  rep.rel_frobenius_error_SigmaStar = stats::relative_frobenius(rep.empirical_cov_averaged, model.Sigma_star);

  if (model.r > 0) {
    const Vector u1 = model.U.U.col(0);
    std::vector<double> proj(static_cast<std::size_t>(s_sorted.rows()));
    for (Eigen::Index i = 0; i < s_sorted.rows(); ++i) proj[static_cast<std::size_t>(i)] = s_sorted.row(i).dot(u1);
    const auto ks = stats::ks_test_normal(proj, 0.0, u1.dot(model.Sigma * u1));
    rep.ks_statistic = ks.statistic;
    rep.ks_pvalue_active_direction = ks.p_value;
    const Matrix Poff = Matrix::Identity(model.P_B.rows(), model.P_B.cols()) - model.P_B;
    const double on = (model.P_B * rep.empirical_cov_scaled * model.P_B).trace();
    const double off = (Poff * rep.empirical_cov_scaled * Poff).trace();
    rep.offmanifold_std_ratio = on > 0.0 ? std::sqrt(std::max(off, 0.0) / on) : (off > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  } else {
    rep.ks_statistic = std::numeric_limits<double>::quiet_NaN();
    rep.ks_pvalue_active_direction = std::numeric_limits<double>::quiet_NaN();
    rep.offmanifold_std_ratio = std::numeric_limits<double>::quiet_NaN();
  }

  std::vector<double> found;
  for (long long K : ident_times)
    if (K > 0) found.push_back(static_cast<double>(K));
  rep.identification_fraction = static_cast<double>(found.size()) / static_cast<double>(ident_times.size());
  if (!found.empty()) rep.median_identification_time = stats::median(found);
  return rep;
}

/// Per-replication quantities extracted without storing trajectories.
struct ReplicationOutcome {
  Vector scaled;
  Vector averaged;
  long long identification = 0;  // 0 when not identified by the horizon
};

inline ReplicationOutcome run_replication(const Experiment& ex, Rng& rng) {
  const long long steps = ex.run.steps;
  if (steps < 1) throw PreconditionError("replication: steps must be >= 1");
  if (ex.agent < 0 || ex.agent >= ex.problem.agents()) throw PreconditionError("replication: agent index out of range");
  const long long window = std::max<long long>(1, std::llround(static_cast<double>(steps) * ex.window_fraction));
  const Vector& xs = ex.problem.x_star();
  ReplicationOutcome out;
  out.averaged = Vector::Zero(xs.size());
  long long last_bad = 0;
  RunOptions opt = ex.run;
  opt.record.enabled = false;
  auto observer = [&](const StepView& v) {
    const Vector e = v.x->row(ex.agent).transpose() - xs;
    if (v.k > steps - window) out.averaged += e;
    if (v.k == steps) out.scaled = e / std::sqrt(v.alpha);
    if (!detail::identified(ex.set.active_set(*v.xbar, ex.active_tol), ex.set.rows_B())) last_bad = v.k;
  };
  (void)run_algorithm(ex.algorithm, ex.problem, ex.set, ex.scheme, ex.schedule, opt, rng, observer);
  out.averaged /= std::sqrt(static_cast<double>(window));
  out.identification = last_bad < steps ? last_bad + 1 : 0;
  return out;
}

inline CovarianceReport monte_carlo(const Experiment& ex, int n_runs, std::uint64_t master_seed) {
  if (n_runs < 2) throw PreconditionError("monte_carlo: n_runs must be >= 2");
  const AsymptoticModel model = build_asymptotic_model(ex.problem, ex.set, ex.problem.x_star());
  const Eigen::Index d = ex.problem.dim();
  Matrix scaled(n_runs, d), averaged(n_runs, d);
  std::vector<long long> ident(static_cast<std::size_t>(n_runs), 0);
  detail::parallel_for(static_cast<std::size_t>(n_runs), ex.threads, [&](std::size_t r) {
    Rng rng = replication_rng(master_seed, streams::kReplication, r);
    ReplicationOutcome o;
    try {
      o = run_replication(ex, rng);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "monte_carlo: replication " << r << " (master seed " << master_seed << ") failed: " << e.what();
      throw NumericalError(msg.str());
    }
    scaled.row(static_cast<Eigen::Index>(r)) = o.scaled.transpose();
    averaged.row(static_cast<Eigen::Index>(r)) = o.averaged.transpose();
    ident[r] = o.identification;
  });
  CovarianceReport rep = summarize(model, scaled, averaged, ident);
  rep.steps = ex.run.steps;
  rep.agent = ex.agent;
  rep.alpha_final = ex.schedule(ex.run.steps);
  rep.window_length = std::max<long long>(1, std::llround(static_cast<double>(ex.run.steps) * ex.window_fraction));
  return rep;
}

/// Draws n samples from N(0, Sigma) for a PSD (possibly singular) Sigma.
inline Matrix sample_gaussian(const Matrix& Sigma, int n, Rng& rng) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (Sigma + Sigma.transpose()));
  const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix out(n, Sigma.rows());
  Vector w(Sigma.rows());
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < w.size(); ++c) w(c) = n01(rng);
    out.row(i) = (root * w).transpose();
  }
  return out;
}

struct RateProbeOptions {
  double tail_start_fraction = 0.1;  // tail window begins at this fraction of the horizon
  int windows = 5;                   // log-spaced windows in the tail
};

struct RateProbeReport {
  double delta = 0.0;
  int n_reps = 0;
  double decreasing_fraction = 0.0;
  std::vector<std::vector<double>> window_medians;  // per replication
  std::vector<double> max_tail_ratio;               // sup over the last window, per replication
  std::vector<long long> window_edges;
};

/// Tracks ||P_B (xbar_k - x*)|| / alpha_k^delta over the tail of each run and
/// calls a run decreasing when the Mann-Kendall S of its window medians is
/// negative.
inline RateProbeReport rate_probe(const Experiment& ex, double delta, int n_reps, std::uint64_t master_seed,
                                  const RateProbeOptions& opts = {}) {
  const double upper = 1.0 - 1.0 / (2.0 * ex.schedule.alpha_exp);
  if (!(delta > 0.0 && delta < upper)) {
    std::ostringstream msg;
    msg << "rate_probe: delta must lie in (0, " << upper << ")";
    throw PreconditionError(msg.str());
  }
  if (n_reps < 1) throw PreconditionError("rate_probe: n_reps must be >= 1");
  if (opts.windows < 2) throw PreconditionError("rate_probe: need at least two windows");
  const long long steps = ex.run.steps;
  const long long k0 = std::max<long long>(1, std::llround(static_cast<double>(steps) * opts.tail_start_fraction));
  if (steps - k0 < opts.windows) throw PreconditionError("rate_probe: horizon too short for the tail windows");

  RateProbeReport rep;
  rep.delta = delta;
  rep.n_reps = n_reps;
  rep.window_edges.push_back(k0);
  for (int w = 1; w <= opts.windows; ++w) {
    const double t = static_cast<double>(w) / opts.windows;
    rep.window_edges.push_back(std::llround(std::exp(std::log(static_cast<double>(k0)) * (1.0 - t) + std::log(static_cast<double>(steps)) * t)));
  }
  rep.window_edges.back() = steps;
  const Matrix P_B = projection_matrix(ex.set.B(), ex.set.dim());
  const Vector& xs = ex.problem.x_star();

  rep.window_medians.resize(static_cast<std::size_t>(n_reps));
  rep.max_tail_ratio.resize(static_cast<std::size_t>(n_reps));
  std::vector<char> decreasing(static_cast<std::size_t>(n_reps), 0);
  detail::parallel_for(static_cast<std::size_t>(n_reps), ex.threads, [&](std::size_t r) {
    Rng rng = replication_rng(master_seed, streams::kReplication, r);
    std::vector<std::vector<double>> buckets(static_cast<std::size_t>(opts.windows));
    RunOptions opt = ex.run;
    opt.record.enabled = false;
    auto observer = [&](const StepView& v) {
      if (v.k < k0) return;
      const double ratio = (P_B * (*v.xbar - xs)).norm() / std::pow(v.alpha, delta);
      for (int w = 0; w < opts.windows; ++w) {
        const auto lo = rep.window_edges[static_cast<std::size_t>(w)];
        const auto hi = rep.window_edges[static_cast<std::size_t>(w) + 1];
        if (v.k >= lo && (v.k < hi || (w == opts.windows - 1 && v.k <= hi))) {
          buckets[static_cast<std::size_t>(w)].push_back(ratio);
          break;
        }
      }
    };
    (void)run_algorithm(ex.algorithm, ex.problem, ex.set, ex.scheme, ex.schedule, opt, rng, observer);
    std::vector<double> med;
    for (auto& b : buckets) med.push_back(stats::median(b));
    const auto& last = buckets.back();
    rep.max_tail_ratio[r] = last.empty() ? 0.0 : *std::max_element(last.begin(), last.end());
    decreasing[r] = stats::kendall_s(med) < 0 ? 1 : 0;
    rep.window_medians[r] = std::move(med);
  });
  rep.decreasing_fraction =
      static_cast<double>(std::count(decreasing.begin(), decreasing.end(), 1)) / static_cast<double>(n_reps);
  return rep;
}

struct ConsensusRateReport {
  std::vector<long long> checkpoints;
  std::vector<double> mean_disagreement;  // replication mean of ||Z_perp||^2 at each checkpoint
  double slope = 0.0;                     // log-log regression slope
  double expected_slope = 0.0;            // -2 * alpha_exp
};

/// Replication-averaged ||Z_k - 1 zbar_k^T||^2 at log-spaced checkpoints in
/// [k_lo, k_hi] and its log-log slope.
inline ConsensusRateReport consensus_rate(const Experiment& ex, int n_reps, std::uint64_t master_seed, long long k_lo,
                                          long long k_hi, int points = 25) {
  if (k_lo < 1 || k_hi <= k_lo || points < 2) throw PreconditionError("consensus_rate: need 1 <= k_lo < k_hi and >= 2 points");
  ConsensusRateReport rep;
  for (int i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) / (points - 1);
    const long long k = std::llround(std::exp(std::log(static_cast<double>(k_lo)) * (1.0 - t) + std::log(static_cast<double>(k_hi)) * t));
    if (rep.checkpoints.empty() || rep.checkpoints.back() != k) rep.checkpoints.push_back(k);
  }
  const std::size_t np = rep.checkpoints.size();
  std::vector<std::vector<double>> per_rep(static_cast<std::size_t>(n_reps), std::vector<double>(np, 0.0));
  Experiment local = ex;
  local.run.steps = k_hi;
  detail::parallel_for(static_cast<std::size_t>(n_reps), ex.threads, [&](std::size_t r) {
    Rng rng = replication_rng(master_seed, streams::kReplication, r);
    RunOptions opt = local.run;
    opt.record.enabled = false;
    std::size_t next = 0;
    auto observer = [&](const StepView& v) {
      while (next < np && rep.checkpoints[next] == v.k) {
        per_rep[r][next] = v.consensus_error;
        ++next;
      }
    };
    (void)run_algorithm(local.algorithm, local.problem, local.set, local.scheme, local.schedule, opt, rng, observer);
  });
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < np; ++i) {
    double s = 0.0;
    for (const auto& row : per_rep) s += row[i];
    const double mean = s / static_cast<double>(n_reps);
    rep.mean_disagreement.push_back(mean);
    lx.push_back(std::log(static_cast<double>(rep.checkpoints[i])));
    ly.push_back(std::log(mean));
  }
  rep.slope = stats::ols_slope(lx, ly);
  rep.expected_slope = -2.0 * ex.schedule.alpha_exp;
  return rep;
}

}  // namespace dda
