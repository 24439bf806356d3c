#pragma once

// Small statistical helpers for the Monte Carlo harness.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "dda/errors.hpp"
#include "dda/linalg.hpp"

namespace dda::stats {

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
  return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2));
}

/// Survival function of the Kolmogorov distribution, P(K > lambda).
inline double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    if (term < 1e-17) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against N(mean, var). p-value uses the
/// asymptotic distribution with Stephens' small-sample correction.
inline KsResult ks_test_normal(std::vector<double> x, double mean, double var) {
  if (x.empty()) throw PreconditionError("ks_test_normal: need at least one sample");
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  KsResult r;
  if (!(var > 0.0)) {
    const bool all_at_mean = std::all_of(x.begin(), x.end(), [&](double v) { return std::abs(v - mean) <= 1e-12; });
    r.statistic = all_at_mean ? 0.0 : 1.0;
    r.p_value = all_at_mean ? 1.0 : 0.0;
    return r;
  }
  const double sd = std::sqrt(var);
  double D = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = normal_cdf(x[i], mean, sd);
    D = std::max({D, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  r.statistic = D;
  r.p_value = kolmogorov_survival((sn + 0.12 + 0.11 / sn) * D);
  return r;
}

/// Kolmogorov distance between the empirical CDF of `p` and U(0, 1).
inline double uniform_ks_distance(std::vector<double> p) {
  std::sort(p.begin(), p.end());
  const auto n = static_cast<double>(p.size());
  double D = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double F = std::clamp(p[i], 0.0, 1.0);
    D = std::max({D, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  return D;
}

/// Unbiased covariance of the rows of `samples` (n x d).
inline Matrix sample_covariance(const Matrix& samples) {
  const Eigen::Index n = samples.rows();
  if (n < 2) throw PreconditionError("sample_covariance: need at least two samples");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(n - 1);
}

/// ||A - B||_F / ||B||_F; 0 when both vanish and +inf when only B does.
inline double relative_frobenius(const Matrix& A, const Matrix& B) {
  const double nb = B.norm();
  const double diff = (A - B).norm();
  if (nb == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / nb;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

/// Least-squares slope of y on x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw PreconditionError("ols_slope: need two or more paired points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

/// Mann-Kendall S statistic of a series against its index: the number of
/// increasing pairs minus the number of decreasing pairs.
inline int kendall_s(const std::vector<double>& v) {
  int s = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) s += (v[j] > v[i]) - (v[j] < v[i]);
  return s;
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<long long> counts;
};

inline Histogram histogram(const std::vector<double>& v, int bins) {
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(std::max(bins, 1)), 0);
  if (v.empty()) return h;
  h.lo = *std::min_element(v.begin(), v.end());
  h.hi = *std::max_element(v.begin(), v.end());
  if (h.hi == h.lo) {
    h.lo -= 0.5;
    h.hi += 0.5;
  }
  const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (double x : v) {
    auto b = static_cast<std::size_t>((x - h.lo) / width);
    if (b >= h.counts.size()) b = h.counts.size() - 1;
    ++h.counts[b];
  }
  return h;
}

}  // namespace dda::stats
