#pragma once

#include <cmath>
#include <string>

#include "inna/error.hpp"

namespace inna {

// Empirical logistic transform of s successes in n trials and its
// approximate variance. Total on 0 <= s <= n, n >= 1.
struct EltSummary {
  double z = 0.0;
  double v = 0.0;
  int n = 0;
  int s = 0;
};

namespace detail {
inline void check_elt_domain(int s, int n) {
  if (n < 1) throw DomainError("empirical logit needs n >= 1, got n = " + std::to_string(n));
  if (s < 0 || s > n)
    throw DomainError("success count " + std::to_string(s) + " outside [0, " +
                      std::to_string(n) + "]");
}
}  // namespace detail

inline double empirical_logit(int s, int n) {
  detail::check_elt_domain(s, n);
  return std::log((s + 0.5) / (n - s + 0.5));
}

inline double elt_variance(int s, int n) {
  detail::check_elt_domain(s, n);
  const double nd = n;
  return (nd + 1.0) * (nd + 2.0) / (nd * (s + 1.0) * (nd - s + 1.0));
}

inline EltSummary elt_summary(int s, int n) {
  return {empirical_logit(s, n), elt_variance(s, n), n, s};
}

}  // namespace inna
