#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include "inna/curvature.hpp"
#include "inna/dataset.hpp"
#include "inna/error.hpp"
#include "inna/logistic.hpp"
#include "inna/parallel.hpp"
#include "inna/rng.hpp"

namespace inna {

struct HyperDraw {
  double delta_sq = 1.0;
  double eta = 0.5;  // 1 / (1 + delta_sq)

  static HyperDraw from_eta(double eta) { return {(1.0 - eta) / eta, eta}; }
  static HyperDraw from_delta_sq(double d) { return {d, 1.0 / (1.0 + d)}; }
};

struct BetaDraw {
  double beta0 = 0.0;
  Eigen::VectorXd slopes;
};

enum class MuSampler : unsigned char { metropolis, grid };

struct PosteriorDraw {
  HyperDraw hyper;
  BetaDraw beta;
  Eigen::VectorXd mu;  // empty when group effects were not drawn
  std::vector<MuSampler> sampler;
  std::vector<float> jump_rate;
};

// Normal law of (beta0, slopes) given delta^2 under the approximate model.
struct BetaParams {
  Eigen::VectorXd mean;       // length p
  Eigen::MatrixXd precision;  // p x p
};

namespace detail {

struct BetaConditional {
  BetaParams params;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_det_precision = 0.0;
  double min_quadratic = 0.0;  // minimum over beta of the exponent quadratic
  double log_det_scaled_d = 0.0;  // log |delta^2 D + I|
};

// With w_i = 1 / (1/d_i + delta^2), a = mu_mean + D^{-1} C beta_mean and the
// design A = [1, D^{-1} C], the beta exponent is
//   (a - A b)' W (a - A b) + (s - beta_mean)' S (s - beta_mean),
// so the precision is A'WA + diag(0, S) and the mean solves P b = A'Wa + (0, S beta_mean).
inline BetaConditional beta_conditional(const CurvatureState& cs, double delta_sq) {
  const Eigen::Index l = cs.groups();
  const Eigen::Index k = cs.slopes();
  const Eigen::Index p = k + 1;
  const Eigen::ArrayXd w = cs.d.array() / (1.0 + delta_sq * cs.d.array());
  const Eigen::MatrixXd cd = cs.C.array().colwise() / cs.d.array();  // D^{-1} C
  const Eigen::VectorXd a = cs.mu_mean + cd * cs.beta_mean;

  BetaConditional out;
  Eigen::MatrixXd& P = out.params.precision;
  P.resize(p, p);
  P(0, 0) = w.sum();
  const Eigen::MatrixXd wcd = cd.array().colwise() * w;  // W D^{-1} C
  if (k > 0) {
    P.block(1, 0, k, 1) = wcd.colwise().sum().transpose();
    P.block(0, 1, 1, k) = P.block(1, 0, k, 1).transpose();
    P.block(1, 1, k, k) = cd.transpose() * wcd + cs.S;
  }
  P = 0.5 * (P + P.transpose());
  Eigen::VectorXd rhs(p);
  const Eigen::VectorXd wa = (w * a.array()).matrix();
  rhs(0) = wa.sum();
  if (k > 0) rhs.tail(k) = cd.transpose() * wa + cs.S * cs.beta_mean;

  out.llt.compute(P);
  if (out.llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "precision of beta given delta^2 = " << delta_sq << " is not positive definite";
    throw ConditioningError(msg.str(), 0.0);
  }
  const Eigen::MatrixXd L = out.llt.matrixL();
  out.log_det_precision = 2.0 * L.diagonal().array().log().sum();
  if (!(L.diagonal().minCoeff() > 0.0)) {
    throw ConditioningError("precision of beta given delta^2 is singular", 0.0);
  }
  out.params.mean = out.llt.solve(rhs);

  const Eigen::VectorXd resid =
      a - Eigen::VectorXd::Constant(l, out.params.mean(0)) - cd * out.params.mean.tail(k);
  const Eigen::VectorXd ds = out.params.mean.tail(k) - cs.beta_mean;
  out.min_quadratic = (w * resid.array().square()).sum() + ds.dot(cs.S * ds);
  out.log_det_scaled_d = (delta_sq * cs.d.array()).log1p().sum();
  return out;
}

}  // namespace detail

inline BetaParams beta_given_delta_params(const CurvatureState& cs, double delta_sq) {
  if (!(delta_sq > 0.0)) throw DomainError("delta^2 must be positive");
  return detail::beta_conditional(cs, delta_sq).params;
}

// Unnormalised log posterior density of eta = 1/(1+delta^2). The delta^2
// prior 1/(1+delta^2)^2 cancels the Jacobian of the transform, so eta has a
// flat prior on (0, 1).
inline double eta_log_density(double eta, const CurvatureState& cs) {
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("eta must lie in (0, 1)");
  const double delta_sq = (1.0 - eta) / eta;
  const auto bc = detail::beta_conditional(cs, delta_sq);
  const double v = -0.5 * bc.log_det_scaled_d - 0.5 * bc.log_det_precision - 0.5 * bc.min_quadratic;
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "eta log density is not finite at eta = " << eta;
    throw NumericalError(msg.str());
  }
  return v;
}

// Discretised density on the midpoints of a uniform partition of (0, 1).
class EtaGrid {
 public:
  EtaGrid() = default;

  template <class LogDensity>
  EtaGrid(std::size_t grid_points, LogDensity&& log_density) {
    if (grid_points < 2) throw DomainError("eta grid needs at least 2 points");
    const double h = 1.0 / static_cast<double>(grid_points);
    log_density_.resize(grid_points);
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < grid_points; ++c) {
      const double v = log_density((static_cast<double>(c) + 0.5) * h);
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        std::ostringstream msg;
        msg << "eta log density is not finite at eta = " << (c + 0.5) * h;
        throw NumericalError(msg.str());
      }
      log_density_[c] = v;
      hi = std::max(hi, v);
    }
    if (hi == -std::numeric_limits<double>::infinity())
      throw NumericalError("eta grid has no mass: every log density is -inf");
    cdf_.resize(grid_points);
    double acc = 0.0;
    for (std::size_t c = 0; c < grid_points; ++c) {
      acc += std::exp(log_density_[c] - hi);
      cdf_[c] = acc;
    }
    for (auto& v : cdf_) v /= acc;
    cdf_.back() = 1.0;
  }

  std::size_t size() const { return cdf_.size(); }
  const std::vector<double>& log_density() const { return log_density_; }
  double probability(std::size_t c) const { return c == 0 ? cdf_[0] : cdf_[c] - cdf_[c - 1]; }

  HyperDraw draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    const auto c = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cdf_.begin(), static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
    const double h = 1.0 / static_cast<double>(cdf_.size());
    const double eta = (static_cast<double>(c) + rng.uniform()) * h;
    return HyperDraw::from_eta(eta);
  }

 private:
  std::vector<double> log_density_;
  std::vector<double> cdf_;
};

inline EtaGrid make_eta_grid(const CurvatureState& cs, std::size_t grid_points) {
  return EtaGrid(grid_points, [&](double eta) { return eta_log_density(eta, cs); });
}

inline HyperDraw draw_delta_sq(const CurvatureState& cs, std::size_t grid_points, Rng& rng) {
  return make_eta_grid(cs, grid_points).draw(rng);
}

inline Eigen::VectorXd standard_normal_vector(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

inline BetaDraw draw_beta(const BetaParams& params, Rng& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(params.precision);
  if (llt.info() != Eigen::Success)
    throw ConditioningError("cannot factorise beta precision", 0.0);
  const Eigen::VectorXd z = standard_normal_vector(params.mean.size(), rng);
  // precision = L L'  =>  L'^{-1} z has covariance precision^{-1}
  const Eigen::VectorXd v = params.mean + llt.matrixU().solve(z);
  return {v(0), v.tail(v.size() - 1)};
}

// Exact conditional log density of a group intercept given beta and
// delta^2, up to a constant. `offsets` holds x'slopes for each member.
inline double mu_conditional_logpdf(double mu, const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& offsets, double beta0,
                                    double delta_sq) noexcept {
  const double r = mu - beta0;
  return group_loglik(y, offsets, mu) - r * r / (2.0 * delta_sq);
}

inline double mu_conditional_logpdf(double mu, const Household& h, const BetaDraw& beta,
                                    double delta_sq) {
  return mu_conditional_logpdf(mu, h.y, h.x * beta.slopes, beta.beta0, delta_sq);
}

struct NormalProposal {
  double mean = 0.0;
  double var = 1.0;
};

// Coordinate i of the approximate conditional law of mu given (beta, delta^2):
// precision d_i + 1/delta^2, mean (d_i mu_mean_i - c_i'(s - beta_mean) + beta0/delta^2) / precision.
inline NormalProposal mu_proposal(const CurvatureState& cs, Eigen::Index i, const BetaDraw& beta,
                                  double delta_sq) {
  const double prec = cs.d(i) + 1.0 / delta_sq;
  const double shift = cs.slopes() > 0 ? cs.C.row(i).dot(beta.slopes - cs.beta_mean) : 0.0;
  const double mean = (cs.d(i) * cs.mu_mean(i) - shift + beta.beta0 / delta_sq) / prec;
  return {mean, 1.0 / prec};
}

struct MuSamplerConfig {
  int steps = 100;
  double jump_low = 0.25;   // healthy jump rates lie in the open interval
  double jump_high = 0.50;  // (jump_low, jump_high)
  int grid_cells = 512;
  double grid_halfwidth = 6.0;  // in proposal standard deviations
};

struct MuDraw {
  double mu = 0.0;
  MuSampler sampler = MuSampler::metropolis;
  double jump_rate = 0.0;
};

// Inverse-CDF draw from the target discretised on `cells` equal cells over
// mean +- halfwidth * sd; uniform within the chosen cell.
template <class LogTarget>
double draw_from_grid(LogTarget&& log_target, double center, double sd, int cells,
                      double halfwidth, Rng& rng) {
  const double lo = center - halfwidth * sd;
  const double h = 2.0 * halfwidth * sd / cells;
  std::vector<double> cdf(static_cast<std::size_t>(cells));
  double top = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < cells; ++c) {
    cdf[c] = log_target(lo + (c + 0.5) * h);
    top = std::max(top, cdf[c]);
  }
  double acc = 0.0;
  for (auto& v : cdf) {
    acc += std::exp(v - top);
    v = acc;
  }
  const double u = rng.uniform() * acc;
  const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  const auto c = std::min<std::ptrdiff_t>(it - cdf.begin(), cells - 1);
  return lo + (static_cast<double>(c) + rng.uniform()) * h;
}

// Independence Metropolis with a normal proposal; the last state of a fixed
// number of steps is kept. When the realised jump rate falls outside the
// healthy window the chain is discarded and the grid sampler is used.
template <class LogTarget>
MuDraw draw_mu_one(LogTarget&& log_target, const NormalProposal& proposal, Rng& rng,
                   const MuSamplerConfig& cfg = {}) {
  if (!(proposal.var > 0.0)) throw DomainError("proposal variance must be positive");
  const double sd = std::sqrt(proposal.var);
  std::normal_distribution<double> normal;
  auto log_weight = [&](double x) {
    const double r = (x - proposal.mean) / sd;
    return log_target(x) + 0.5 * r * r;
  };
  double state = proposal.mean;
  double state_w = log_weight(state);
  int accepted = 0;
  for (int s = 0; s < cfg.steps; ++s) {
    const double cand = proposal.mean + sd * normal(rng);
    const double cand_w = log_weight(cand);
    if (std::log(rng.uniform()) < cand_w - state_w) {
      state = cand;
      state_w = cand_w;
      ++accepted;
    }
  }
  MuDraw out;
  out.jump_rate = cfg.steps > 0 ? static_cast<double>(accepted) / cfg.steps : 0.0;
  if (out.jump_rate > cfg.jump_low && out.jump_rate < cfg.jump_high) {
    out.mu = state;
    out.sampler = MuSampler::metropolis;
  } else {
    out.mu = draw_from_grid(log_target, proposal.mean, sd, cfg.grid_cells, cfg.grid_halfwidth, rng);
    out.sampler = MuSampler::grid;
  }
  return out;
}

inline MuDraw draw_mu_one(const Household& h, const BetaDraw& beta, double delta_sq,
                          const NormalProposal& proposal, Rng& rng,
                          const MuSamplerConfig& cfg = {}) {
  const Eigen::VectorXd offsets = h.x * beta.slopes;
  return draw_mu_one(
      [&](double mu) { return mu_conditional_logpdf(mu, h.y, offsets, beta.beta0, delta_sq); },
      proposal, rng, cfg);
}

struct InnaConfig {
  std::size_t grid_points = 400;
  std::size_t n_draws = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool draw_mu = true;
  MuSamplerConfig mu;
};

// Draws every group intercept for one posterior draw. Group i uses the
// substream (seed, draw, i), so results do not depend on scheduling.
inline void draw_group_effects(const SurveyDataset& ds, const CurvatureState& cs,
                               PosteriorDraw& draw, std::uint64_t seed, std::size_t draw_index,
                               const MuSamplerConfig& cfg) {
  const auto l = static_cast<Eigen::Index>(ds.size());
  draw.mu.resize(l);
  draw.sampler.resize(ds.size());
  draw.jump_rate.resize(ds.size());
  const Rng root = substream(seed, draw_index, stream_tag::mu);
  const std::uint64_t mu_seed = Rng(root)();
  for (Eigen::Index i = 0; i < l; ++i) {
    const auto& h = ds.households[static_cast<std::size_t>(i)];
    Rng rng = substream(mu_seed, static_cast<std::uint64_t>(i));
    const auto prop = mu_proposal(cs, i, draw.beta, draw.hyper.delta_sq);
    const auto m = draw_mu_one(h, draw.beta, draw.hyper.delta_sq, prop, rng, cfg);
    draw.mu(i) = m.mu;
    draw.sampler[static_cast<std::size_t>(i)] = m.sampler;
    draw.jump_rate[static_cast<std::size_t>(i)] = static_cast<float>(m.jump_rate);
  }
}

// Independent draws from the approximate joint posterior by the
// multiplication rule: eta from its grid, beta given delta^2, then each
// group intercept from its exact conditional.
inline std::vector<PosteriorDraw> inna_fit(const SurveyDataset& ds, const CurvatureState& cs,
                                           const InnaConfig& cfg) {
  std::vector<PosteriorDraw> draws(cfg.n_draws);
  if (cfg.n_draws == 0) return draws;
  const EtaGrid grid = make_eta_grid(cs, cfg.grid_points);
  parallel_for(cfg.n_draws, cfg.threads, [&](std::size_t d) {
    auto& draw = draws[d];
    Rng hyper_rng = substream(cfg.seed, d, stream_tag::delta_sq);
    draw.hyper = grid.draw(hyper_rng);
    Rng beta_rng = substream(cfg.seed, d, stream_tag::beta);
    draw.beta = draw_beta(beta_given_delta_params(cs, draw.hyper.delta_sq), beta_rng);
    if (cfg.draw_mu) draw_group_effects(ds, cs, draw, cfg.seed, d, cfg.mu);
  });
  return draws;
}

inline std::vector<PosteriorDraw> inna_fit(const SurveyDataset& ds, const InnaConfig& cfg) {
  const auto cs = assemble_curvature(ds, cfg.threads);
  return inna_fit(ds, cs, cfg);
}

}  // namespace inna
