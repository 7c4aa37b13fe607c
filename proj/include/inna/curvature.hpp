#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "inna/dataset.hpp"
#include "inna/error.hpp"
#include "inna/logistic.hpp"
#include "inna/parallel.hpp"
#include "inna/quasimode.hpp"

namespace inna {

// Gradient and negative Hessian of the flat-prior log-likelihood at the
// quasi-modes, written in blocks
//
//   -H = [ D   C ]      D = diag(d) (groups x groups)
//        [ C'  B ]      C : groups x slopes, row i is c_i
//
// with G = S^{-1}, S = B - C' D^{-1} C (the Schur complement of D). The
// dense blocks E and F of -H^{-1} are never formed; only their actions on
// vectors are available.
struct CurvatureState {
  Eigen::VectorXd mu_star;
  Eigen::VectorXd beta_star;
  Eigen::VectorXd g1;  // dLoglik / dmu_i
  Eigen::VectorXd g2;  // dLoglik / dslopes
  Eigen::VectorXd d;
  Eigen::MatrixXd C;
  Eigen::MatrixXd B;
  Eigen::MatrixXd S;
  Eigen::MatrixXd G;
  Eigen::VectorXd mu_mean;    // approximate posterior mean of mu (flat prior)
  Eigen::VectorXd beta_mean;  // approximate posterior mean of the slopes

  Eigen::Index groups() const { return d.size(); }
  Eigen::Index slopes() const { return B.rows(); }

  // E v = D^{-1} v + D^{-1} C G C' D^{-1} v
  Eigen::VectorXd apply_E(const Eigen::VectorXd& v) const {
    const Eigen::VectorXd dv = v.cwiseQuotient(d);
    return dv + (C * (G * (C.transpose() * dv))).cwiseQuotient(d);
  }
  // F v = -G C' D^{-1} v   (slopes x groups)
  Eigen::VectorXd apply_F(const Eigen::VectorXd& v) const {
    return -(G * (C.transpose() * v.cwiseQuotient(d)));
  }
  // F' u = -D^{-1} C G u
  Eigen::VectorXd apply_Ft(const Eigen::VectorXd& u) const {
    return -(C * (G * u)).cwiseQuotient(d);
  }
};

// Relative eigenvalue floor for positive definiteness of the Schur complement.
inline constexpr double kPdTolerance = 1e-10;

namespace detail {

inline constexpr std::size_t kReductionChunk = 256;

struct CurvaturePartial {
  Eigen::VectorXd g2;
  Eigen::MatrixXd B;
  Eigen::MatrixXd ccd;  // sum c_i c_i' / d_i
};

}  // namespace detail

inline CurvatureState assemble_curvature(const SurveyDataset& ds, const QuasiModes& modes,
                                         unsigned threads = 1) {
  const auto l = static_cast<Eigen::Index>(ds.size());
  const auto k = static_cast<Eigen::Index>(ds.n_covariates());
  CurvatureState cs;
  cs.mu_star = modes.mu_star;
  cs.beta_star = modes.beta_star;
  cs.g1.resize(l);
  cs.d.resize(l);
  cs.C.resize(l, k);

  // Fixed chunk boundaries keep the reduction order independent of threads.
  const std::size_t n_chunks = (ds.size() + detail::kReductionChunk - 1) / detail::kReductionChunk;
  std::vector<detail::CurvaturePartial> partial(n_chunks);
  parallel_for(n_chunks, threads, [&](std::size_t chunk) {
    auto& acc = partial[chunk];
    acc.g2 = Eigen::VectorXd::Zero(k);
    acc.B = Eigen::MatrixXd::Zero(k, k);
    acc.ccd = Eigen::MatrixXd::Zero(k, k);
    const std::size_t begin = chunk * detail::kReductionChunk;
    const std::size_t end = std::min(ds.size(), begin + detail::kReductionChunk);
    for (std::size_t i = begin; i < end; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto& h = ds.households[i];
      const Eigen::VectorXd a = (h.x * modes.beta_star).array() + modes.mu_star(ii);
      Eigen::VectorXd resid(a.size());
      Eigen::VectorXd w(a.size());
      for (Eigen::Index j = 0; j < a.size(); ++j) {
        resid(j) = h.y(j) - expit(a(j));
        w(j) = logistic_variance(a(j));
      }
      cs.g1(ii) = resid.sum();
      cs.d(ii) = w.sum();
      const Eigen::VectorXd c = h.x.transpose() * w;
      cs.C.row(ii) = c.transpose();
      acc.g2.noalias() += h.x.transpose() * resid;
      acc.B.noalias() += h.x.transpose() * w.asDiagonal() * h.x;
      acc.ccd.noalias() += c * c.transpose() / cs.d(ii);
    }
  });
  cs.g2 = Eigen::VectorXd::Zero(k);
  cs.B = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd ccd = Eigen::MatrixXd::Zero(k, k);
  for (const auto& p : partial) {
    cs.g2 += p.g2;
    cs.B += p.B;
    ccd += p.ccd;
  }
  cs.B = 0.5 * (cs.B + cs.B.transpose());
  cs.S = cs.B - ccd;
  cs.S = 0.5 * (cs.S + cs.S.transpose());

  for (Eigen::Index i = 0; i < l; ++i) {
    if (!(cs.d(i) > 0.0)) {
      std::ostringstream msg;
      msg << "curvature of group " << ds.households[static_cast<std::size_t>(i)].id
          << " is not positive (d = " << cs.d(i) << ")";
      throw NumericalError(msg.str());
    }
  }

  if (k > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cs.S, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    // S <= B, so B sets the scale; S alone cannot when k = 1
    const double scale = std::max(hi, cs.B.diagonal().maxCoeff());
    if (!(hi > 0.0) || lo <= kPdTolerance * scale) {
      std::ostringstream msg;
      msg << "Schur complement of the negative Hessian is not positive definite "
          << "(eigenvalues in [" << lo << ", " << hi << "])";
      throw NumericalError(msg.str());
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cs.S);
    cs.G = llt.solve(Eigen::MatrixXd::Identity(k, k));
    cs.G = 0.5 * (cs.G + cs.G.transpose());
  } else {
    cs.G.resize(0, 0);
  }

  // (mu_mean, beta_mean) = tau* - H^{-1} g, via the block inverse.
  const Eigen::VectorXd dg1 = cs.g1.cwiseQuotient(cs.d);
  cs.beta_mean = cs.beta_star + cs.G * (cs.g2 - cs.C.transpose() * dg1);
  cs.mu_mean = cs.mu_star + (cs.g1 - cs.C * (cs.beta_mean - cs.beta_star)).cwiseQuotient(cs.d);
  return cs;
}

inline CurvatureState assemble_curvature(const SurveyDataset& ds, unsigned threads = 1) {
  return assemble_curvature(ds, quasi_modes(ds), threads);
}

struct LogconcavityReport {
  bool responses_interior = true;  // 0 < S_i < n_i for every group
  bool full_rank = true;
  std::vector<Label> violating_groups;
  std::string dependent_column;

  bool pass() const { return responses_interior && full_rank; }
};

// Sufficient conditions for a log-concave flat-prior posterior and a proper
// hierarchical posterior: full-rank design and no all-0 / all-1 group.
inline LogconcavityReport logconcavity_check(const SurveyDataset& ds) {
  LogconcavityReport r;
  for (const auto& h : ds.households) {
    if (h.degenerate()) {
      r.responses_interior = false;
      r.violating_groups.push_back(h.id);
    }
  }
  if (auto col = first_dependent_column(ds)) {
    r.full_rank = false;
    r.dependent_column = detail::column_label(ds, *col);
  }
  return r;
}

}  // namespace inna
