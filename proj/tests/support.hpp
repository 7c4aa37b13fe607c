#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "inna/inna.hpp"

namespace testing_support {

using inna::Label;
using inna::MemberRecord;

inline std::vector<std::string> names(std::size_t k) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < k; ++c) out.push_back("x" + std::to_string(c + 1));
  return out;
}

// Random instance with `l` households of sizes in [n_lo, n_hi] and k
// standard-normal covariates. Responses are drawn from a random-intercept
// logistic model with intercept spread `spread`.
inline inna::SurveyDataset random_dataset(std::uint64_t seed, std::size_t l, std::size_t k,
                                          std::size_t n_lo = 4, std::size_t n_hi = 8,
                                          double spread = 0.8, std::size_t wards = 3) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> size(n_lo, n_hi);
  std::vector<double> slopes(k);
  for (auto& b : slopes) b = 0.5 * normal(gen);
  std::vector<MemberRecord> records;
  std::map<Label, std::int64_t> nonsampled;
  for (std::size_t i = 0; i < l; ++i) {
    const Label ward = static_cast<Label>(i % wards) + 1;
    nonsampled[ward] = 3;
    const double mu = spread * normal(gen);
    const std::size_t n = size(gen);
    for (std::size_t j = 0; j < n; ++j) {
      MemberRecord r;
      r.ward_id = ward;
      r.household_id = static_cast<Label>(i + 1);
      double a = mu;
      for (std::size_t c = 0; c < k; ++c) {
        r.covariates.push_back(normal(gen));
        a += slopes[c] * r.covariates.back();
      }
      r.response = std::uniform_real_distribution<double>()(gen) < inna::expit(a) ? 1 : 0;
      records.push_back(r);
    }
  }
  return inna::build_dataset(records, names(k), nonsampled, true);
}

// Flat-prior log-likelihood in tau = (mu, slopes).
inline double flat_loglik_tau(const inna::SurveyDataset& ds, const Eigen::VectorXd& tau) {
  const auto l = static_cast<Eigen::Index>(ds.size());
  return inna::flat_loglik(ds, tau.head(l), tau.tail(tau.size() - l));
}

// Dense negative Hessian [[D, C], [C', B]] assembled straight from the data.
inline Eigen::MatrixXd dense_neg_hessian(const inna::SurveyDataset& ds, const Eigen::VectorXd& tau) {
  const auto l = static_cast<Eigen::Index>(ds.size());
  const auto k = static_cast<Eigen::Index>(ds.n_covariates());
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(l + k, l + k);
  for (Eigen::Index i = 0; i < l; ++i) {
    const auto& h = ds.households[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < h.x.rows(); ++j) {
      const double a = h.x.row(j).dot(tau.tail(k)) + tau(i);
      const double p = 1.0 / (1.0 + std::exp(-a));
      const double w = p * (1.0 - p);
      Eigen::VectorXd v = Eigen::VectorXd::Zero(l + k);
      v(i) = 1.0;
      v.tail(k) = h.x.row(j).transpose();
      H += w * v * v.transpose();
    }
  }
  return H;
}

inline Eigen::VectorXd dense_gradient(const inna::SurveyDataset& ds, const Eigen::VectorXd& tau) {
  const auto l = static_cast<Eigen::Index>(ds.size());
  const auto k = static_cast<Eigen::Index>(ds.n_covariates());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(l + k);
  for (Eigen::Index i = 0; i < l; ++i) {
    const auto& h = ds.households[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < h.x.rows(); ++j) {
      const double a = h.x.row(j).dot(tau.tail(k)) + tau(i);
      const double r = h.y(j) - 1.0 / (1.0 + std::exp(-a));
      g(i) += r;
      g.tail(k) += r * h.x.row(j).transpose();
    }
  }
  return g;
}

struct DenseEta {
  Eigen::MatrixXd precision;  // p x p precision of beta given delta^2
  Eigen::VectorXd mean;       // its mean
  double log_density = 0.0;   // unnormalised eta density
};

// Literal transcription of the eta density with dense l x l matrices:
//   -1/2 log|delta^2 D + I| - 1/2 log|P|
//   -1/2 [ a'(D^{-1} + delta^2 I)^{-1} a + mu_b' G^{-1} mu_b - w' P w ]
// with a = mu_mu + D^{-1} C mu_b and P w = rhs. All inputs come from the
// dense Newton step, not from CurvatureState.
inline DenseEta dense_eta(const inna::SurveyDataset& ds, const Eigen::VectorXd& tau_star, double eta) {
  const auto l = static_cast<Eigen::Index>(ds.size());
  const auto k = static_cast<Eigen::Index>(ds.n_covariates());
  const double dsq = (1.0 - eta) / eta;
  const Eigen::MatrixXd H = dense_neg_hessian(ds, tau_star);
  const Eigen::VectorXd mean = tau_star + H.fullPivLu().solve(dense_gradient(ds, tau_star));
  const Eigen::VectorXd mu_mu = mean.head(l), mu_b = mean.tail(k);
  const Eigen::MatrixXd D = H.topLeftCorner(l, l);
  const Eigen::MatrixXd Cp = H.bottomLeftCorner(k, l);  // (p-1) x l as printed
  const Eigen::MatrixXd B = H.bottomRightCorner(k, k);
  const Eigen::MatrixXd Dinv = D.inverse();
  const Eigen::MatrixXd Ginv = B - Cp * Dinv * Cp.transpose();
  const Eigen::MatrixXd M = (Dinv + dsq * Eigen::MatrixXd::Identity(l, l)).inverse();
  const Eigen::VectorXd j = Eigen::VectorXd::Ones(l);
  const double d0 = j.dot(M * j);
  const Eigen::VectorXd gamma = Cp * Dinv * M * j;
  const Eigen::MatrixXd Delta = Cp * Dinv * M * Dinv * Cp.transpose() + Ginv;
  DenseEta out;
  Eigen::MatrixXd& P = out.precision;
  P.resize(k + 1, k + 1);
  P(0, 0) = d0;
  P.block(1, 0, k, 1) = gamma;
  P.block(0, 1, 1, k) = gamma.transpose();
  P.block(1, 1, k, k) = Delta;
  const Eigen::VectorXd a = mu_mu + Dinv * Cp.transpose() * mu_b;
  Eigen::VectorXd rhs(k + 1);
  rhs(0) = a.dot(M * j);
  rhs.tail(k) = Cp * Dinv * M * a + Ginv * mu_b;
  out.mean = P.fullPivLu().solve(rhs);
  const Eigen::VectorXd& w = out.mean;
  const double logdet_scaled = std::log((dsq * D + Eigen::MatrixXd::Identity(l, l)).determinant());
  const double logdet_p = std::log(P.determinant());
  const double quad = a.dot(M * a) + mu_b.dot(Ginv * mu_b) - w.dot(P * w);
  out.log_density = -0.5 * logdet_scaled - 0.5 * logdet_p - 0.5 * quad;
  return out;
}

inline double dense_eta_log_density(const inna::SurveyDataset& ds, const Eigen::VectorXd& tau_star,
                                    double eta) {
  return dense_eta(ds, tau_star, eta).log_density;
}

// Rank by Gaussian elimination with partial pivoting.
inline int row_reduction_rank(Eigen::MatrixXd m, double tol = 1e-9) {
  int rank = 0;
  const auto rows = m.rows(), cols = m.cols();
  for (Eigen::Index c = 0; c < cols && rank < rows; ++c) {
    Eigen::Index piv = rank;
    for (Eigen::Index r = rank; r < rows; ++r)
      if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
    if (std::abs(m(piv, c)) < tol) continue;
    m.row(piv).swap(m.row(rank));
    for (Eigen::Index r = rank + 1; r < rows; ++r) m.row(r) -= m(r, c) / m(rank, c) * m.row(rank);
    ++rank;
  }
  return rank;
}

inline inna::SurveyDataset parse(const std::string& csv, bool full_rank = true) {
  std::istringstream in(csv);
  return inna::read_dataset(in, {}, full_rank);
}

}  // namespace testing_support
