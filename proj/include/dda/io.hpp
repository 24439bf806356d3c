#pragma once

// File artifacts. Every CSV starts with '#' lines carrying the effective
// config and master seed, followed by a header row. Numbers use the shortest
// representation that round-trips, so reruns are byte-identical.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dda/analysis.hpp"
#include "dda/config.hpp"
#include "dda/network.hpp"

namespace dda::io {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline Json to_json(const Matrix& M) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

// JSON has no NaN; non-finite values become null.
inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

inline void write_preamble(std::ostream& out, const ExperimentConfig& cfg) {
  out << "# config: " << cfg.echo.dump() << "\n";
  out << "# seed: " << cfg.seed << "\n";
}

/// One row per recorded iteration and agent. Agent 0 is the network
/// estimate xbar_k; agents 1..m are x_{j,k}. consensus_error is the squared
/// dual disagreement sum_j ||z_{j,k} - zbar_k||^2 (primal for DPG).
/// dist_to_opt is ||x - x*||. active_B / active_C list the 1-based rows active
/// at xbar_k, separated by ';'.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const ExperimentConfig& cfg) {
  write_preamble(out, cfg);
  out << "# columns: k = iteration; agent = 0 for xbar_k, j for x_{j,k}; x1..xd = coordinates; "
         "consensus_error = squared disagreement; dist_to_opt = distance to x*; active_B, active_C = rows active at xbar_k\n";
  out << "k,agent";
  for (Eigen::Index i = 0; i < traj.dim; ++i) out << ",x" << (i + 1);
  out << ",consensus_error,dist_to_opt,active_B,active_C\n";
  const Vector& xs = cfg.experiment().problem.x_star();
  auto join = [](const std::vector<int>& rows) {
    std::string s;
    for (std::size_t i = 0; i < rows.size(); ++i) s += (i ? ";" : "") + std::to_string(rows[i] + 1);
    return s;
  };
  for (const Record& r : traj.records) {
    const std::string actB = join(r.xbar_active.B);
    const std::string actC = join(r.xbar_active.C);
    out << r.k << ",0";
    for (Eigen::Index i = 0; i < r.xbar.size(); ++i) out << "," << num(r.xbar(i));
    out << "," << num(r.consensus_error) << "," << num((r.xbar - xs).norm()) << "," << actB << "," << actC << "\n";
    for (Eigen::Index j = 0; j < r.x.rows(); ++j) {
      out << r.k << "," << (j + 1);
      for (Eigen::Index i = 0; i < r.x.cols(); ++i) out << "," << num(r.x(j, i));
      out << "," << num(r.consensus_error) << "," << num(r.dist_to_opt(j)) << "," << actB << "," << actC << "\n";
    }
  }
}

inline Json manifest(const ExperimentConfig& cfg, const std::string& command, const std::vector<std::string>& files) {
  Json j;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["instance_seed"] = cfg.instance_seed;
  j["config"] = cfg.echo;
  const auto& p = cfg.experiment().problem;
  Json inst;
  inst["x_star"] = to_json(p.x_star());
  inst["tilt"] = to_json(p.tilt());
  Json Rs = Json::array();
  for (const auto& R : p.R_u()) Rs.push_back(to_json(R));
  inst["R_u"] = Rs;
  inst["sigma_v2"] = p.sigma_v2();
  j["instance"] = inst;
  j["files"] = files;
  return j;
}

inline Json to_json(const CovarianceReport& r, const AsymptoticModel& model) {
  Json j;
  j["n_runs"] = r.n_runs;
  j["steps"] = r.steps;
  j["agent"] = r.agent + 1;
  j["alpha_final"] = r.alpha_final;
  j["window_length"] = r.window_length;
  j["model"] = {{"P_B", to_json(model.P_B)}, {"H", to_json(model.H)},         {"G", to_json(model.G)},
                {"Sigma_bar", to_json(model.Sigma_bar)}, {"Sigma1", to_json(model.Sigma1)},
                {"Sigma", to_json(model.Sigma)}, {"Sigma_star", to_json(model.Sigma_star)}, {"r", model.r}};
  j["empirical_cov_scaled"] = to_json(r.empirical_cov_scaled);
  j["empirical_cov_averaged"] = to_json(r.empirical_cov_averaged);
  j["rel_frobenius_error_Sigma"] = finite_or_null(r.rel_frobenius_error_Sigma);
  j["rel_frobenius_error_SigmaStar"] = finite_or_null(r.rel_frobenius_error_SigmaStar);
  j["ks_statistic"] = finite_or_null(r.ks_statistic);
  j["ks_pvalue_active_direction"] = finite_or_null(r.ks_pvalue_active_direction);
  j["offmanifold_std_ratio"] = finite_or_null(r.offmanifold_std_ratio);
  j["identification_fraction"] = r.identification_fraction;
  j["median_identification_time"] = r.median_identification_time ? Json(*r.median_identification_time) : Json(nullptr);
  return j;
}

/// run, scaled_1..d, averaged_1..d, identification (0 = not identified).
inline void write_samples_csv(std::ostream& out, const CovarianceReport& r, const ExperimentConfig& cfg) {
  write_preamble(out, cfg);
  const Eigen::Index d = r.scaled_samples.cols();
  out << "run";
  for (Eigen::Index i = 0; i < d; ++i) out << ",scaled_" << (i + 1);
  for (Eigen::Index i = 0; i < d; ++i) out << ",averaged_" << (i + 1);
  out << ",identification\n";
  for (Eigen::Index n = 0; n < r.scaled_samples.rows(); ++n) {
    out << (n + 1);
    for (Eigen::Index i = 0; i < d; ++i) out << "," << num(r.scaled_samples(n, i));
    for (Eigen::Index i = 0; i < d; ++i) out << "," << num(r.averaged_samples(n, i));
    out << "," << r.identification_times[static_cast<std::size_t>(n)] << "\n";
  }
}

/// Per statistic and coordinate: bin edges, observed counts, and the count
/// expected under the model's normal marginal.
inline void write_histogram_csv(std::ostream& out, const CovarianceReport& r, const ExperimentConfig& cfg, int bins = 30) {
  write_preamble(out, cfg);
  out << "statistic,component,bin,lo,hi,count,expected\n";
  auto emit = [&](const char* name, const Matrix& S, const Matrix& model) {
    for (Eigen::Index c = 0; c < S.cols(); ++c) {
      std::vector<double> v(static_cast<std::size_t>(S.rows()));
      for (Eigen::Index n = 0; n < S.rows(); ++n) v[static_cast<std::size_t>(n)] = S(n, c);
      const stats::Histogram h = stats::histogram(v, bins);
      const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
      const double sd = std::sqrt(std::max(model(c, c), 0.0));
      for (std::size_t b = 0; b < h.counts.size(); ++b) {
        const double lo = h.lo + width * static_cast<double>(b);
        const double hi = lo + width;
        double expected = 0.0;
        if (sd > 0.0) expected = static_cast<double>(v.size()) * (stats::normal_cdf(hi, 0.0, sd) - stats::normal_cdf(lo, 0.0, sd));
        out << name << "," << (c + 1) << "," << (b + 1) << "," << num(lo) << "," << num(hi) << "," << h.counts[b] << ","
            << num(expected) << "\n";
      }
    }
  };
  emit("scaled", r.scaled_samples, r.model_Sigma);
  emit("averaged", r.averaged_samples, r.model_Sigma_star);
}

inline Json to_json(const MixingReport& r, const GossipScheme& s) {
  Json j;
  j["scheme"] = to_string(s.kind());
  j["agents"] = s.agents();
  j["rho"] = r.rho;
  j["row_stochastic"] = r.row_stochastic;
  j["column_stochastic_in_mean"] = r.column_stochastic_in_mean;
  j["doubly_stochastic_always"] = r.doubly_stochastic_always;
  j["exact"] = r.exact;
  j["evaluated"] = r.evaluated;
  j["expected_disagreement"] = to_json(r.expected_disagreement);
  return j;
}

inline Json to_json(const RateProbeReport& r) {
  Json j;
  j["delta"] = r.delta;
  j["n_reps"] = r.n_reps;
  j["decreasing_fraction"] = r.decreasing_fraction;
  j["window_edges"] = r.window_edges;
  j["window_medians"] = r.window_medians;
  j["max_tail_ratio"] = r.max_tail_ratio;
  return j;
}

}  // namespace dda::io
