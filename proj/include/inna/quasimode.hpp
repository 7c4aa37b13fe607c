#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

#include "inna/dataset.hpp"
#include "inna/elt.hpp"
#include "inna/error.hpp"

namespace inna {

// Closed-form expansion point for the normal approximation. Not a mode:
// the score is generally nonzero here and the curvature step corrects it.
struct QuasiModes {
  Eigen::VectorXd beta_star;  // slopes, length p-1
  Eigen::VectorXd mu_star;    // one per group
};

inline Eigen::VectorXd elt_vector(const SurveyDataset& ds) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& h = ds.households[i];
    z(static_cast<Eigen::Index>(i)) = empirical_logit(h.successes(), static_cast<int>(h.n()));
  }
  return z;
}

// Solves the linearised slope score with mu_i fixed at z_i:
//   [sum x x'] beta = sum x (y - z_i).
inline Eigen::VectorXd quasi_mode_beta(const SurveyDataset& ds, const Eigen::VectorXd& z) {
  const auto k = static_cast<Eigen::Index>(ds.n_covariates());
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  if (k == 0) return rhs;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& h = ds.households[i];
    gram.noalias() += h.x.transpose() * h.x;
    rhs.noalias() += h.x.transpose() * (h.y.array() - z(static_cast<Eigen::Index>(i))).matrix();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smax > 0.0) || smin <= smax / kGramConditionLimit) {
    std::ostringstream msg;
    msg << "slope Gram matrix is singular or ill-conditioned (smallest singular value "
        << smin << ", largest " << smax << ")";
    throw ConditioningError(msg.str(), smin);
  }
  return svd.solve(rhs);
}

// mu*_i = log( mean_j exp(-offset_ij) / (1 - ybar_i + 1/(2 n_i)) ).
inline double quasi_mode_mu_from_offsets(const Eigen::VectorXd& y, const Eigen::VectorXd& offsets) {
  const double n = static_cast<double>(y.size());
  const double lo = -offsets.maxCoeff();
  const double lse = lo + std::log((-offsets.array() - lo).exp().sum());
  const double denom = 1.0 - y.mean() + 0.5 / n;
  return lse - std::log(n) - std::log(denom);
}

inline Eigen::VectorXd quasi_mode_mu(const SurveyDataset& ds, const Eigen::VectorXd& beta_star) {
  Eigen::VectorXd mu(static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& h = ds.households[i];
    mu(static_cast<Eigen::Index>(i)) = quasi_mode_mu_from_offsets(h.y, h.x * beta_star);
  }
  return mu;
}

inline QuasiModes quasi_modes(const SurveyDataset& ds) {
  QuasiModes m;
  m.beta_star = quasi_mode_beta(ds, elt_vector(ds));
  m.mu_star = quasi_mode_mu(ds, m.beta_star);
  return m;
}

}  // namespace inna
