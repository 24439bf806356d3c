// dda: command-line driver for distributed dual averaging experiments.
//
//   dda run        --config FILE   single trajectory -> trajectory.csv
//   dda montecarlo --config FILE   replications -> report.json, samples.csv, histogram.csv
//   dda mixing     --config FILE   spectral mixing quantity of the gossip scheme
//   dda check      --config FILE   assumption checklist
//   dda rate-probe --config FILE   tail trend of ||P_B(xbar_k - x*)|| / alpha_k^delta
//
// Exit codes: 0 success, 1 configuration error, 2 numerical failure.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dda/dda.hpp"

namespace fs = std::filesystem;
using namespace dda;

namespace {

struct Common {
  std::string config;
  ConfigOverrides over;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config (JSON)")->required();
  sub->add_option("--seed", c.over.seed, "master seed");
  sub->add_option("--out", c.over.out, "output directory");
  sub->add_option("--runs", c.over.runs, "number of replications");
  sub->add_option("--steps", c.over.steps, "iterations per run");
  sub->add_option("--scheme", c.over.scheme, "gossip scheme: pairwise, broadcast, fixed");
  sub->add_option("--agent", c.over.agent, "1-based agent for per-agent statistics");
}

ExperimentConfig load(const Common& c) {
  ConfigDocument doc = ConfigDocument::load(c.config);
  apply_overrides(doc, c.over);
  return build_config(doc);
}

// Wall-clock timings live apart from the reproducible artifacts.
void write_timing(const fs::path& dir, const std::string& command, double seconds) {
  Json t;
  t["command"] = command;
  t["seconds"] = seconds;
  io::write_json(dir / "timing.json", t);
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_run(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = load(c);
  const Experiment& ex = cfg.experiment();
  Rng rng = replication_rng(cfg.seed, streams::kReplication, 0);
  const Trajectory traj = run_algorithm(ex.algorithm, ex.problem, ex.set, ex.scheme, ex.schedule, ex.run, rng);
  const fs::path dir(cfg.output_dir);
  {
    auto out = io::open_out(dir / "trajectory.csv");
    io::write_trajectory_csv(out, traj, cfg);
  }
  io::write_json(dir / "manifest.json", io::manifest(cfg, "run", {"trajectory.csv"}));
  write_timing(dir, "run", elapsed(t0));
  std::cout << "run: " << to_string(ex.algorithm) << ", " << ex.problem.agents() << " agents, " << cfg.steps << " steps, "
            << traj.records.size() << " records";
  if (!traj.records.empty()) std::cout << ", final ||xbar - x*|| = " << io::num((traj.records.back().xbar - ex.problem.x_star()).norm());
  std::cout << "\nwrote " << (dir / "trajectory.csv").string() << "\n";
  return 0;
}

int cmd_montecarlo(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = load(c);
  const Experiment& ex = cfg.experiment();
  if (cfg.n_runs < 2) throw ConfigError(c.config + ": /n_runs: montecarlo needs at least 2 runs");
  if (cfg.steps < 1) throw ConfigError(c.config + ": /steps: montecarlo needs at least 1 step");
  const AsymptoticModel model = build_asymptotic_model(ex.problem, ex.set, ex.problem.x_star());
  const CovarianceReport rep = monte_carlo(ex, cfg.n_runs, cfg.seed);
  const fs::path dir(cfg.output_dir);
  Json report = io::to_json(rep, model);
  report["algorithm"] = to_string(ex.algorithm);
  report["seed"] = cfg.seed;
  report["config"] = cfg.echo;
  io::write_json(dir / "report.json", report);
  {
    auto out = io::open_out(dir / "samples.csv");
    io::write_samples_csv(out, rep, cfg);
  }
  {
    auto out = io::open_out(dir / "histogram.csv");
    io::write_histogram_csv(out, rep, cfg);
  }
  io::write_json(dir / "manifest.json", io::manifest(cfg, "montecarlo", {"report.json", "samples.csv", "histogram.csv"}));
  write_timing(dir, "montecarlo", elapsed(t0));
  std::cout << "montecarlo: " << to_string(ex.algorithm) << ", " << rep.n_runs << " runs x " << rep.steps << " steps, agent "
            << rep.agent + 1 << "\n"
            << "  rel. Frobenius error vs Sigma      " << io::num(rep.rel_frobenius_error_Sigma) << "\n"
            << "  rel. Frobenius error vs Sigma*     " << io::num(rep.rel_frobenius_error_SigmaStar) << "\n"
            << "  KS p-value along u1                " << io::num(rep.ks_pvalue_active_direction) << "\n"
            << "  off/on-manifold std ratio          " << io::num(rep.offmanifold_std_ratio) << "\n"
            << "  identification fraction           " << io::num(rep.identification_fraction) << "\n"
            << "wrote " << (dir / "report.json").string() << "\n";
  return 0;
}

int cmd_mixing(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const GossipScheme& s = cfg.experiment().scheme;
  const MixingReport rep = mixing_report(s, static_cast<std::size_t>(cfg.mixing_samples), cfg.seed);
  const fs::path dir(cfg.output_dir);
  Json j = io::to_json(rep, s);
  j["seed"] = cfg.seed;
  j["config"] = cfg.echo;
  io::write_json(dir / "mixing.json", j);
  std::cout << "mixing: " << to_string(s.kind()) << " on " << s.agents() << " agents, rho = " << io::num(rep.rho)
            << (rep.exact ? " (enumerated)" : " (Monte Carlo)") << "\n"
            << "  row stochastic always        " << (rep.row_stochastic ? "yes" : "no") << "\n"
            << "  column stochastic in mean    " << (rep.column_stochastic_in_mean ? "yes" : "no") << "\n"
            << "  doubly stochastic always     " << (rep.doubly_stochastic_always ? "yes" : "no") << "\n"
            << "wrote " << (dir / "mixing.json").string() << "\n";
  return 0;
}

void line(bool ok, const std::string& label, const std::string& detail) {
  std::cout << (ok ? "[pass] " : "[warn] ") << label << ": " << detail << "\n";
}

int cmd_check(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const Experiment& ex = cfg.experiment();
  const auto& p = ex.problem;
  const Polyhedron& X = ex.set;
  const Vector& xs = p.x_star();
  const MixingReport mix = mixing_report(ex.scheme, static_cast<std::size_t>(cfg.mixing_samples), cfg.seed);
  const double a_exp = ex.schedule.alpha_exp;
  std::ostringstream s;

  double max_noise = 0.0;
  for (int j = 0; j < p.agents(); ++j) max_noise = std::max(max_noise, p.gradient_covariance(j, xs).trace());
  s << "every f_j is a convex quadratic (R_u PSD); max_j E||grad F_j(x*) - grad f_j(x*)||^2 = " << io::num(max_noise)
    << ", Gaussian noise has all moments";
  line(true, "Assumption 1 (objective function)", s.str());

  s.str("");
  const bool a2 = mix.row_stochastic && mix.column_stochastic_in_mean && mix.rho < 1.0;
  s << "row stochastic always " << (mix.row_stochastic ? "yes" : "no") << ", column stochastic in mean "
    << (mix.column_stochastic_in_mean ? "yes" : "no") << ", rho = " << io::num(mix.rho);
  line(a2, "Assumption 2 (weight matrices)", s.str());

  s.str("");
  const bool a3 = a_exp > 0.5 && a_exp <= 1.0 && check_assumption_stepsize_vs_rho(mix.rho, ex.schedule);
  s << "alpha_k = " << io::num(ex.schedule.a) << "/k^" << io::num(a_exp) << ", need exponent in (1/2, 1] and rho < 1";
  line(a3, "Assumption 3 (step-size)", s.str());

  line(true, "Assumption 4 (sample and sigma-algebra)",
       "fresh i.i.d. draws per agent and step, independent of each other and of A_k");
  line(true, "Assumption 5 (regularizer)", "psi(x) = ||x||^2/2 is 1-strongly convex; Q is the Euclidean projection");

  s.str("");
  const Matrix hess = p.hessian_total(xs);
  const double mu = restricted_curvature(hess, X.B());
  const bool inside = X.contains(xs, 1e-9);
  s << "restricted curvature of the Hessian on ker(B) = " << io::num(mu) << ", x* feasible " << (inside ? "yes" : "no");
  line(mu > 0.0 && inside, "Assumption 6 (strengthened Assumption 1)", s.str());

  // -grad f(x*) must lie in the relative interior of the normal cone.
  s.str("");
  const Vector g = p.gradient_total(xs);
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < X.A().rows(); ++i)
    if (std::abs(X.A().row(i).dot(xs) - X.a()(i)) <= 1e-9 * (1.0 + std::abs(X.a()(i)))) active.push_back(i);
  Matrix Aact(static_cast<Eigen::Index>(active.size()), X.dim());
  for (std::size_t i = 0; i < active.size(); ++i) Aact.row(static_cast<Eigen::Index>(i)) = X.A().row(active[i]);
  bool cq = true;
  if (g.norm() <= 1e-12 * (1.0 + hess.norm())) {
    cq = active.empty();
    s << "grad f(x*) = 0";
    if (!active.empty()) s << " with " << active.size() << " active row(s): degenerate, -grad f(x*) sits on the boundary of the normal cone";
  } else if (active.empty()) {
    cq = false;
    s << "x* is interior but ||grad f(x*)|| = " << io::num(g.norm()) << ": x* is not optimal";
  } else {
    const Vector lam = Aact.transpose().colPivHouseholderQr().solve(-g);
    const double resid = (Aact.transpose() * lam + g).norm();
    const Eigen::FullPivLU<Matrix> lu(Aact);
    cq = resid <= 1e-8 * (1.0 + g.norm()) && lam.minCoeff() > 0.0 && lu.rank() == Aact.rows();
    s << "active rows " << active.size() << ", multipliers [";
    for (Eigen::Index i = 0; i < lam.size(); ++i) s << (i ? ", " : "") << io::num(lam(i));
    s << "], residual " << io::num(resid);
    if (lam.minCoeff() <= 0.0) s << ": zero or negative multiplier, strict complementarity fails";
  }
  line(cq, "Assumption B (constraint qualification)", s.str());

  s.str("");
  const bool a7 = mix.doubly_stochastic_always && mix.rho < 1.0;
  s << "doubly stochastic always " << (mix.doubly_stochastic_always ? "yes" : "no") << ", i.i.d. draws, rho = " << io::num(mix.rho);
  line(a7, "Assumption 7 (stronger conditions on weight matrix)", s.str());

  s.str("");
  s << "alpha_k = a/k^alpha with alpha = " << io::num(a_exp) << ", need alpha in (2/3, 1)";
  line(ex.schedule.asymptotic_range_ok(), "Assumption 8 (stronger conditions on step-size)", s.str());

  if (inside && X.rows_B() > 0) {
    s.str("");
    try {
      const AsymptoticModel model = build_asymptotic_model(p, X, xs);
      s << "r = " << model.r << ", min eig G = " << io::num(Eigen::SelfAdjointEigenSolver<Matrix>(model.G).eigenvalues().minCoeff())
        << ", tr Sigma = " << io::num(model.Sigma.trace()) << ", tr Sigma* = " << io::num(model.Sigma_star.trace());
      line(true, "asymptotic model", s.str());
    } catch (const std::exception& e) {
      line(false, "asymptotic model", e.what());
    }
  }
  return 0;
}

int cmd_rate_probe(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = load(c);
  const RateProbeReport rep = rate_probe(cfg.experiment(), cfg.rate_delta, cfg.n_runs, cfg.seed, cfg.rate);
  const fs::path dir(cfg.output_dir);
  Json j = io::to_json(rep);
  j["seed"] = cfg.seed;
  j["config"] = cfg.echo;
  io::write_json(dir / "rate_probe.json", j);
  write_timing(dir, "rate-probe", elapsed(t0));
  std::cout << "rate-probe: delta = " << io::num(rep.delta) << ", " << rep.n_reps
            << " runs, decreasing window-median trend in " << io::num(100.0 * rep.decreasing_fraction) << "%\n"
            << "wrote " << (dir / "rate_probe.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed dual averaging over gossip networks"};
  app.require_subcommand(1);
  Common run, mc, mix, check, rate;
  add_common(app.add_subcommand("run", "simulate one trajectory"), run);
  add_common(app.add_subcommand("montecarlo", "replications against the asymptotic covariance model"), mc);
  add_common(app.add_subcommand("mixing", "mixing quantity rho of the gossip scheme"), mix);
  add_common(app.add_subcommand("check", "assumption checklist"), check);
  add_common(app.add_subcommand("rate-probe", "tail trend of the scaled projected error"), rate);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    if (app.got_subcommand("run")) return cmd_run(run);
    if (app.got_subcommand("montecarlo")) return cmd_montecarlo(mc);
    if (app.got_subcommand("mixing")) return cmd_mixing(mix);
    if (app.got_subcommand("check")) return cmd_check(check);
    if (app.got_subcommand("rate-probe")) return cmd_rate_probe(rate);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
