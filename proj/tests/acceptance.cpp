// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dda/dda.hpp"
#include "oracles.hpp"

using namespace dda;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

ExperimentConfig load(const std::string& name) {
  return build_config(ConfigDocument::load(std::string(DDA_CONFIG_DIR) + "/" + name));
}

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = n01(rng);
  return M;
}

Outcome projection_oracle() {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> dim(1, 5), rows(1, 8);
  std::uniform_real_distribution<double> box(-3.0, 3.0);
  double worst_point = 0.0, worst_mult = 0.0;
  int missing = 0;
  for (int t = 0; t < 1000; ++t) {
    const int d = dim(rng);
    const auto P = oracle::random_polyhedron(rng, d, rows(rng));
    const Polyhedron X(P.B, P.b, P.C, P.c);
    Vector z(d);
    for (int i = 0; i < d; ++i) z(i) = box(rng);
    const auto ref = oracle::kkt_projection(X.A(), X.a(), z);
    if (!ref) {
      ++missing;
      continue;
    }
    const ProjectionResult r = X.project(z);
    Vector mult(r.lambda.size() + r.mu.size());
    mult << r.lambda, r.mu;
    worst_point = std::max(worst_point, (r.point - ref->point).norm());
    worst_mult = std::max(worst_mult, (mult - ref->multipliers).norm());
  }
  std::ostringstream s;
  s << "max point error " << worst_point << ", max multiplier error " << worst_mult << ", oracle gaps " << missing;
  return {missing == 0 && worst_point <= 1e-8 && worst_mult <= 1e-6, s.str()};
}

Outcome lyapunov() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int r = 1 + t % 6;
    const Matrix S = gaussian(rng, r, r);
    const Matrix K = 0.3 * gaussian(rng, r, r);
    const Matrix G = S * S.transpose() + 0.1 * Matrix::Identity(r, r) + K - K.transpose();
    const Matrix Mh = gaussian(rng, r, r);
    const Matrix M = Mh * Mh.transpose();
    const Matrix X = lyapunov_solve(G, M);
    worst = std::max(worst, (G * X + X * G.transpose() - M).norm() / (1.0 + M.norm()));
  }
  // Single agent, R = I, sigma^2 = 1 on the estimation set: Sigma1 = [1].
  Vector xs(2);
  xs << 1, 2;
  Matrix B(1, 2), C(2, 2);
  B << -2, 1;
  C << 1, 0, 0, -1;
  Vector b(1), c(2);
  b << 0;
  c << 5, 0;
  const QuadraticEstimationProblem p(xs, {Matrix::Identity(2, 2)}, {1.0});
  const AsymptoticModel model = build_asymptotic_model(p, Polyhedron(B, b, C, c), xs);
  const Matrix M1 = model.U.active().transpose() * model.P_B * model.Sigma_bar * model.P_B * model.U.active();
  const double quad = (oracle::lyapunov_quadrature(model.G, M1, 20.0, 20000) - model.Sigma1).norm();
  const double exact = std::abs(model.Sigma1(0, 0) - 1.0);
  std::ostringstream s;
  s << "max relative residual " << worst << ", Sigma1 = " << model.Sigma1(0, 0) << ", quadrature gap " << quad;
  return {worst <= 1e-10 && quad <= 1e-6 && exact <= 1e-6, s.str()};
}

Outcome mixing() {
  const MixingReport pw = mixing_report(GossipScheme::pairwise(Graph::complete(3)), 1000, 1);
  const MixingReport bc = mixing_report(GossipScheme::broadcast(Graph::complete(3)), 1000, 1);
  std::ostringstream s;
  s << "pairwise rho = " << pw.rho << (pw.exact ? " (enumerated)" : " (sampled)") << "; broadcast row " << bc.row_stochastic
    << ", doubly " << bc.doubly_stochastic_always << ", column-in-mean " << bc.column_stochastic_in_mean;
  const bool ok = pw.exact && std::abs(pw.rho - 0.5) <= 1e-12 && pw.row_stochastic && pw.doubly_stochastic_always &&
                  bc.exact && bc.row_stochastic && !bc.doubly_stochastic_always && bc.column_stochastic_in_mean;
  return {ok, s.str()};
}

Outcome convergence() {
  const ExperimentConfig cfg = load("convergence.json");
  const Experiment& ex = cfg.experiment();
  const Vector& xs = ex.problem.x_star();
  int good = 0, good_xbar = 0;
  double mean_worst = 0.0;
  for (int r = 0; r < 100; ++r) {
    Rng rng = replication_rng(cfg.seed, streams::kReplication, static_cast<std::uint64_t>(r));
    RunOptions opt = ex.run;
    opt.record.enabled = false;
    double worst = 0.0, xbar_err = 0.0;
    (void)run_algorithm(ex.algorithm, ex.problem, ex.set, ex.scheme, ex.schedule, opt, rng, [&](const StepView& v) {
      if (v.k != opt.steps) return;
      xbar_err = (*v.xbar - xs).norm();
      for (Eigen::Index j = 0; j < v.x->rows(); ++j) worst = std::max(worst, (v.x->row(j).transpose() - xs).norm());
    });
    mean_worst += worst / 100.0;
    if (worst <= 0.05) ++good;
    if (xbar_err <= 0.05) ++good_xbar;
  }
  std::ostringstream s;
  s << good << "/100 runs with every agent within 0.05 (mean worst-agent distance " << mean_worst << "); xbar within 0.05 in " << good_xbar << "/100";
  return {good >= 90, s.str()};
}

Outcome identification() {
  ExperimentConfig cfg = load("estimation_broadcast.json");
  Experiment& ex = cfg.experiment();
  ex.algorithm = Algorithm::DDA;
  const double dda_frac = monte_carlo(ex, 200, cfg.seed).identification_fraction;
  ex.algorithm = Algorithm::DPG;
  const double dpg_frac = monte_carlo(ex, 200, cfg.seed).identification_fraction;
  std::ostringstream s;
  s << "DDA identifies in " << dda_frac * 100.0 << "% of 200 runs, DPG in " << dpg_frac * 100.0 << "%";
  return {dda_frac >= 0.95 && dpg_frac < dda_frac, s.str()};
}

struct NormalityRun {
  CovarianceReport agent;
  CovarianceReport xbar;
};

// One pass over the replications: agent statistics as in monte_carlo, plus
// the same statistics for xbar as a diagnostic.
NormalityRun normality_runs() {
  const ExperimentConfig cfg = load("estimation_pairwise.json");
  const Experiment& ex = cfg.experiment();
  const AsymptoticModel model = build_asymptotic_model(ex.problem, ex.set, ex.problem.x_star());
  const int n = 1000;
  const long long steps = ex.run.steps;
  const long long window = std::max<long long>(1, std::llround(static_cast<double>(steps) * ex.window_fraction));
  const Vector& xs = ex.problem.x_star();
  const Eigen::Index d = xs.size();
  Matrix sa(n, d), aa(n, d), sx(n, d), ax(n, d);
  for (int r = 0; r < n; ++r) {
    Rng rng = replication_rng(cfg.seed, streams::kReplication, static_cast<std::uint64_t>(r));
    RunOptions opt = ex.run;
    opt.record.enabled = false;
    Vector acc_a = Vector::Zero(d), acc_x = Vector::Zero(d);
    (void)run_algorithm(ex.algorithm, ex.problem, ex.set, ex.scheme, ex.schedule, opt, rng, [&](const StepView& v) {
      const Vector ea = v.x->row(ex.agent).transpose() - xs;
      const Vector ex_bar = *v.xbar - xs;
      if (v.k > steps - window) {
        acc_a += ea;
        acc_x += ex_bar;
      }
      if (v.k == steps) {
        sa.row(r) = ea.transpose() / std::sqrt(v.alpha);
        sx.row(r) = ex_bar.transpose() / std::sqrt(v.alpha);
      }
    });
    aa.row(r) = acc_a.transpose() / std::sqrt(static_cast<double>(window));
    ax.row(r) = acc_x.transpose() / std::sqrt(static_cast<double>(window));
  }
  const std::vector<long long> none(static_cast<std::size_t>(n), 0);
  return {summarize(model, sa, aa, none), summarize(model, sx, ax, none)};
}

Outcome normality(const NormalityRun& run) {
  const CovarianceReport& r = run.agent;
  std::ostringstream s;
  s << "agent 1: Sigma error " << r.rel_frobenius_error_Sigma * 100.0 << "%, KS p " << r.ks_pvalue_active_direction
    << ", off/on ratio " << r.offmanifold_std_ratio << " | xbar: Sigma error " << run.xbar.rel_frobenius_error_Sigma * 100.0
    << "%, KS p " << run.xbar.ks_pvalue_active_direction << ", off/on " << run.xbar.offmanifold_std_ratio;
  return {r.rel_frobenius_error_Sigma <= 0.20 && r.ks_pvalue_active_direction >= 0.01 && r.offmanifold_std_ratio <= 0.15, s.str()};
}

Outcome efficiency(const NormalityRun& run) {
  std::ostringstream s;
  s << "agent 1: Sigma* error " << run.agent.rel_frobenius_error_SigmaStar * 100.0 << "% | xbar: "
    << run.xbar.rel_frobenius_error_SigmaStar * 100.0 << "%";
  return {run.agent.rel_frobenius_error_SigmaStar <= 0.25, s.str()};
}

Outcome consensus() {
  const ExperimentConfig cfg = load("estimation_pairwise.json");
  const ConsensusRateReport r = consensus_rate(cfg.experiment(), 50, cfg.seed, 100, 10000);
  std::ostringstream s;
  s << "slope " << r.slope << " vs " << r.expected_slope;
  return {std::abs(r.slope - r.expected_slope) <= 0.3, s.str()};
}

Outcome recursion() {
  const ExperimentConfig cfg = load("estimation_pairwise.json");
  const Experiment& ex = cfg.experiment();
  const RecursionDecomposer<QuadraticEstimationProblem> dec(ex.problem, ex.set, ex.scheme, ex.problem.x_star());
  RunOptions opt = ex.run;
  opt.steps = 2000;
  opt.record.enabled = false;
  double worst = 0.0, worst_zeta = 0.0;
  long long steps = 0;
  Rng rng = replication_rng(cfg.seed, streams::kReplication, 0);
  (void)dda_run(ex.problem, ex.set, ex.scheme, ex.schedule, opt, rng, [&](const StepView& v) {
    const Decomposition d = dec.decompose(v);
    worst = std::max(worst, d.residual.norm());
    worst_zeta = std::max(worst_zeta, d.zeta.norm());
    ++steps;
  });
  std::ostringstream s;
  s << steps << " steps, max residual " << worst << ", max |zeta| " << worst_zeta;
  return {steps == 2000 && worst <= 1e-10 && worst_zeta <= 1e-10, s.str()};
}

Outcome rate() {
  const ExperimentConfig cfg = load("estimation_pairwise.json");
  const RateProbeReport r = rate_probe(cfg.experiment(), 0.2, 50, cfg.seed, cfg.rate);
  std::ostringstream s;
  s << r.decreasing_fraction * 100.0 << "% of 50 replications decreasing";
  return {r.decreasing_fraction >= 0.90, s.str()};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("%s %2d %-26s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "projection-oracle", projection_oracle);
  report(2, "lyapunov", lyapunov);
  report(3, "mixing-exactness", mixing);
  report(4, "convergence", convergence);
  report(5, "active-set-identification", identification);
  NormalityRun normal;
  const auto t0 = std::chrono::steady_clock::now();
  std::string setup_error;
  try {
    normal = normality_runs();
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  const double shared = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("     (1000 replications for 6 and 7 took %.1f s)\n", shared);
  auto guarded = [&](Outcome (*f)(const NormalityRun&)) {
    return [&, f]() { return setup_error.empty() ? f(normal) : Outcome{false, "exception: " + setup_error}; };
  };
  report(6, "asymptotic-normality", guarded(normality));
  report(7, "asymptotic-efficiency", guarded(efficiency));
  report(8, "consensus-rate", consensus);
  report(9, "recursion-identity", recursion);
  report(10, "rate-probe", rate);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
