#pragma once

#include <cmath>

#include "dda/errors.hpp"

namespace dda {

/// alpha_k = a / k^alpha_exp.
struct StepSizeSchedule {
  double a = 1.0;
  double alpha_exp = 0.75;

  StepSizeSchedule() = default;
  StepSizeSchedule(double a_, double exp_) : a(a_), alpha_exp(exp_) {
    if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("step size: a must be positive and finite");
    if (!std::isfinite(alpha_exp)) throw ConfigError("step size: exponent must be finite");
  }

  [[nodiscard]] double operator()(long long k) const {
    if (k < 1) throw PreconditionError("step size: k must be >= 1");
    return a * std::pow(static_cast<double>(k), -alpha_exp);
  }

  /// Exponent in the open interval (2/3, 1) required by the asymptotic theory.
  [[nodiscard]] bool asymptotic_range_ok() const { return alpha_exp > 2.0 / 3.0 && alpha_exp < 1.0; }
};

inline double schedule_value(const StepSizeSchedule& s, long long k) { return s(k); }

}  // namespace dda
