#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "inna/dataset.hpp"

namespace inna {

// expit(a) without overflow: exponentiate the negative magnitude only.
inline double expit(double a) noexcept {
  if (a >= 0.0) {
    const double e = std::exp(-a);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(a);
  return e / (1.0 + e);
}

// log(1 + exp(a)), accurate in both tails.
inline double log1pexp(double a) noexcept {
  if (a > 0.0) return a + std::log1p(std::exp(-a));
  return std::log1p(std::exp(a));
}

// p(1-p) as expit(a) * expit(-a); avoids 1 - p cancelling to zero.
inline double logistic_variance(double a) noexcept { return expit(a) * expit(-a); }

inline double linear_predictor_prob(const Eigen::Ref<const Eigen::VectorXd>& x,
                                    const Eigen::Ref<const Eigen::VectorXd>& slopes,
                                    double mu) noexcept {
  return expit(x.dot(slopes) + mu);
}

// Bernoulli log-likelihood of one group at intercept mu given the member
// offsets x'beta.
inline double group_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& offsets,
                           double mu) noexcept {
  double ll = 0.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const double a = offsets(j) + mu;
    ll += a * y(j) - log1pexp(a);
  }
  return ll;
}

// Log-likelihood with flat priors on mu and the slopes.
inline double flat_loglik(const SurveyDataset& ds, const Eigen::VectorXd& mu,
                          const Eigen::VectorXd& slopes) {
  double ll = 0.0;
  for (std::size_t i = 0; i < ds.households.size(); ++i) {
    const auto& h = ds.households[i];
    const Eigen::VectorXd off = h.x * slopes;
    ll += group_loglik(h.y, off, mu(static_cast<Eigen::Index>(i)));
  }
  return ll;
}

}  // namespace inna
