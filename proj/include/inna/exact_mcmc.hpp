#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "inna/curvature.hpp"
#include "inna/dataset.hpp"
#include "inna/error.hpp"
#include "inna/inna_sampler.hpp"
#include "inna/logistic.hpp"
#include "inna/parallel.hpp"
#include "inna/rng.hpp"

namespace inna {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Midpoint rule for integrating a group intercept against its normal
// prior, in the standardised variable z = (mu - beta0) / delta.
struct IntegrationRule {
  double lower = -3.0;
  double upper = 3.0;
  int m = 100;
  std::vector<double> midpoints;
  std::vector<double> weights;  // Phi(t_k) - Phi(t_{k-1})
  std::vector<double> log_weights;

  IntegrationRule() : IntegrationRule(-3.0, 3.0, 100) {}
  IntegrationRule(double lo, double hi, int cells) : lower(lo), upper(hi), m(cells) {
    if (!(hi > lo) || cells < 1) throw DomainError("integration rule needs lower < upper and m >= 1");
    const double h = (hi - lo) / cells;
    midpoints.resize(cells);
    weights.resize(cells);
    log_weights.resize(cells);
    for (int k = 0; k < cells; ++k) {
      const double t0 = lo + k * h;
      const double t1 = (k + 1 == cells) ? hi : lo + (k + 1) * h;
      midpoints[k] = 0.5 * (t0 + t1);
      // difference of upper tails is more accurate on the right half
      weights[k] = (t0 >= 0.0) ? normal_cdf(-t0) - normal_cdf(-t1) : normal_cdf(t1) - normal_cdf(t0);
      log_weights[k] = std::log(weights[k]);
    }
  }

  double total_weight() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

inline double log_delta_sq_prior(double delta_sq) { return -2.0 * std::log1p(delta_sq); }

// log of  (1+delta^2)^{-2} prod_i sum_k w_k L_i(beta0 + z_k delta),
// each inner sum taken by log-sum-exp.
inline double integrated_loglik(const BetaDraw& beta, double delta_sq, const SurveyDataset& ds,
                                const IntegrationRule& rule, unsigned threads = 1) {
  if (!(delta_sq > 0.0)) throw DomainError("delta^2 must be positive");
  const double delta = std::sqrt(delta_sq);
  std::vector<double> per_group(ds.size());
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    const auto& h = ds.households[i];
    const Eigen::VectorXd off = h.x * beta.slopes;
    const double sy = h.y.sum();
    const double offy = off.dot(h.y);
    thread_local std::vector<double> terms;
    terms.resize(rule.midpoints.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < rule.midpoints.size(); ++k) {
      const double shift = beta.beta0 + rule.midpoints[k] * delta;
      double ll = offy + shift * sy;
      for (Eigen::Index j = 0; j < off.size(); ++j) ll -= log1pexp(off(j) + shift);
      terms[k] = ll + rule.log_weights[k];
      top = std::max(top, terms[k]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    per_group[i] = top + std::log(acc);
  });
  double total = log_delta_sq_prior(delta_sq);
  for (double v : per_group) total += v;
  return total;
}

// Multivariate Student-t (or normal when dof is infinite) independence
// proposal on theta = (beta0, slopes, log delta^2).
struct ProposalSpec {
  Eigen::VectorXd center;
  Eigen::MatrixXd scale;
  double dof = 8.0;

  bool is_normal() const { return std::isinf(dof); }
};

inline ProposalSpec fit_proposal(const std::vector<PosteriorDraw>& draws, double dof) {
  if (draws.empty()) throw DomainError("no draws to fit a proposal");
  const Eigen::Index p = draws.front().beta.slopes.size() + 1;
  const Eigen::Index dim = p + 1;
  if (static_cast<Eigen::Index>(draws.size()) < p + 2)
    throw DomainError("need at least p + 2 draws to fit a proposal");
  if (!(dof > 0.0)) throw DomainError("proposal degrees of freedom must be positive");
  Eigen::MatrixXd theta(static_cast<Eigen::Index>(draws.size()), dim);
  for (std::size_t r = 0; r < draws.size(); ++r) {
    const auto rr = static_cast<Eigen::Index>(r);
    theta(rr, 0) = draws[r].beta.beta0;
    theta.row(rr).segment(1, p - 1) = draws[r].beta.slopes.transpose();
    theta(rr, dim - 1) = std::log(draws[r].hyper.delta_sq);
  }
  ProposalSpec spec;
  spec.dof = dof;
  spec.center = theta.colwise().mean().transpose();
  const Eigen::MatrixXd centered = theta.rowwise() - spec.center.transpose();
  spec.scale = centered.transpose() * centered / static_cast<double>(draws.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(spec.scale, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(hi > 0.0) || lo <= 1e-12 * hi)
    throw ConditioningError("sample covariance of the draws is singular", std::max(lo, 0.0));
  return spec;
}

enum class Retention { standard, moves_only };

inline const char* to_string(Retention r) {
  return r == Retention::standard ? "standard" : "moves-only";
}

struct ChainConfig {
  std::size_t n_iter = 5000;  // iterations after burn-in
  std::size_t burn_in = 500;
  std::uint64_t seed = 1;
  Retention retention = Retention::standard;
  unsigned threads = 1;
};

struct ChainResult {
  std::vector<Eigen::VectorXd> states;  // retained theta values
  std::size_t accepted = 0;             // after burn-in
  std::size_t iterations = 0;           // after burn-in
  Retention retention = Retention::standard;

  double acceptance_rate() const {
    return iterations ? static_cast<double>(accepted) / static_cast<double>(iterations) : 0.0;
  }
};

namespace detail {

struct ProposalSampler {
  explicit ProposalSampler(const ProposalSpec& spec) : spec(spec) {
    Eigen::LLT<Eigen::MatrixXd> llt(spec.scale);
    if (llt.info() != Eigen::Success)
      throw ConditioningError("proposal scale is not positive definite", 0.0);
    lower = llt.matrixL();
  }

  // Scale mixture: sigma^2 = dof / chi^2_dof, then Normal(center, sigma^2 scale).
  Eigen::VectorXd draw(Rng& normal_rng, Rng& mix_rng) const {
    const Eigen::VectorXd z = standard_normal_vector(spec.center.size(), normal_rng);
    double sigma = 1.0;
    if (!spec.is_normal()) {
      std::gamma_distribution<double> chi(spec.dof / 2.0, 2.0);
      sigma = std::sqrt(spec.dof / chi(mix_rng));
    }
    return spec.center + sigma * (lower * z);
  }

  double log_density(const Eigen::VectorXd& theta) const {
    const Eigen::VectorXd r = lower.triangularView<Eigen::Lower>().solve(theta - spec.center);
    const double q = r.squaredNorm();
    if (spec.is_normal()) return -0.5 * q;
    return -0.5 * (spec.dof + static_cast<double>(theta.size())) * std::log1p(q / spec.dof);
  }

  const ProposalSpec& spec;
  Eigen::MatrixXd lower;
};

}  // namespace detail

// Independence Metropolis on theta against an arbitrary log target. Each
// iteration reads its own substreams, so a normal proposal and a t proposal
// with huge dof see the same normal variates.
template <class LogTarget>
ChainResult independence_chain(LogTarget&& log_target, const ProposalSpec& proposal,
                               const ChainConfig& cfg) {
  const detail::ProposalSampler sampler(proposal);
  ChainResult out;
  out.retention = cfg.retention;
  Eigen::VectorXd state = proposal.center;
  double state_w = log_target(state) - sampler.log_density(state);
  const std::size_t total = cfg.burn_in + cfg.n_iter;
  if (cfg.retention == Retention::standard) out.states.reserve(cfg.n_iter);
  for (std::size_t it = 0; it < total; ++it) {
    Rng normal_rng = substream(cfg.seed, it, stream_tag::chain);
    Rng mix_rng = substream(cfg.seed, it, stream_tag::chain + 16);
    Rng accept_rng = substream(cfg.seed, it, stream_tag::chain + 32);
    const Eigen::VectorXd cand = sampler.draw(normal_rng, mix_rng);
    const double cand_target = log_target(cand);
    const double cand_w = cand_target - sampler.log_density(cand);
    const bool accept = std::log(accept_rng.uniform()) < cand_w - state_w;
    if (accept) {
      state = cand;
      state_w = cand_w;
    }
    if (it < cfg.burn_in) continue;
    ++out.iterations;
    if (accept) ++out.accepted;
    if (cfg.retention == Retention::standard || accept) out.states.push_back(state);
  }
  return out;
}

// Log posterior of theta = (beta0, slopes, log delta^2); the last term is the
// Jacobian of the log transform.
inline double theta_log_posterior(const Eigen::VectorXd& theta, const SurveyDataset& ds,
                                  const IntegrationRule& rule, unsigned threads = 1) {
  const Eigen::Index dim = theta.size();
  const double log_dsq = theta(dim - 1);
  const double delta_sq = std::exp(log_dsq);
  if (!(delta_sq > 0.0) || !std::isfinite(delta_sq)) return -std::numeric_limits<double>::infinity();
  BetaDraw beta{theta(0), theta.segment(1, dim - 2)};
  return integrated_loglik(beta, delta_sq, ds, rule, threads) + log_dsq;
}

inline ChainResult mh_chain(const SurveyDataset& ds, const ProposalSpec& proposal,
                            const IntegrationRule& rule, const ChainConfig& cfg) {
  if (proposal.center.size() != static_cast<Eigen::Index>(ds.p()) + 1)
    throw ValidationError("proposal dimension does not match the dataset");
  return independence_chain(
      [&](const Eigen::VectorXd& th) { return theta_log_posterior(th, ds, rule, cfg.threads); },
      proposal, cfg);
}

struct ExactConfig {
  std::size_t pilot_draws = 1000;
  std::size_t grid_points = 400;
  double dof = 8.0;
  // When non-empty, short tuning chains are run for each candidate and the
  // dof with the highest acceptance rate replaces `dof`.
  std::vector<double> dof_candidates;
  std::size_t tune_iterations = 300;
  IntegrationRule rule{};
  std::size_t n_iter = 5000;
  std::size_t burn_in = 500;
  Retention retention = Retention::standard;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool draw_mu = true;
  bool allow_improper = false;
  MuSamplerConfig mu;
};

struct ExactResult {
  std::vector<PosteriorDraw> draws;
  double acceptance_rate = 0.0;
  std::size_t iterations = 0;
  Retention retention = Retention::standard;
  double dof = 8.0;
  double rule_lower = -3.0;
  double rule_upper = 3.0;
  int rule_m = 100;
  ProposalSpec proposal;
  std::vector<std::pair<double, double>> tuning;  // (dof, acceptance rate)
};

// Seeds for the pilot run, the chain and the group-effect draws.
struct ExactSeeds {
  std::uint64_t pilot, chain, mu, tune;
  explicit ExactSeeds(std::uint64_t seed) {
    Rng r = substream(seed, 0, stream_tag::chain);
    pilot = r();
    chain = r();
    mu = r();
    tune = r();
  }
};

inline void require_proper(const SurveyDataset& ds) {
  const auto rep = logconcavity_check(ds);
  if (rep.pass()) return;
  std::ostringstream msg;
  msg << "posterior may be improper:";
  if (!rep.full_rank) msg << " design is rank deficient at column '" << rep.dependent_column << "';";
  if (!rep.responses_interior)
    msg << ' ' << rep.violating_groups.size() << " group(s) have all-0 or all-1 responses";
  throw ProprietyError(msg.str());
}

// Pilot INNA run for the proposal, the (beta, delta^2) chain on the
// numerically integrated likelihood, then group intercepts drawn exactly as
// in INNA for each retained state.
inline ExactResult exact_fit(const SurveyDataset& ds, const CurvatureState& cs,
                             const ExactConfig& cfg) {
  if (!cfg.allow_improper) require_proper(ds);
  const ExactSeeds seeds(cfg.seed);
  ExactResult out;
  out.retention = cfg.retention;
  out.dof = cfg.dof;
  out.rule_lower = cfg.rule.lower;
  out.rule_upper = cfg.rule.upper;
  out.rule_m = cfg.rule.m;
  if (cfg.n_iter == 0) return out;

  InnaConfig pilot;
  pilot.grid_points = cfg.grid_points;
  pilot.n_draws = cfg.pilot_draws;
  pilot.seed = seeds.pilot;
  pilot.threads = cfg.threads;
  pilot.draw_mu = false;
  const auto pilot_draws = inna_fit(ds, cs, pilot);
  double dof = cfg.dof;
  if (!cfg.dof_candidates.empty()) {
    double best = -1.0;
    for (double candidate : cfg.dof_candidates) {
      ChainConfig tune;
      tune.n_iter = cfg.tune_iterations;
      tune.burn_in = 0;
      tune.seed = seeds.tune;
      tune.threads = cfg.threads;
      const double rate = mh_chain(ds, fit_proposal(pilot_draws, candidate), cfg.rule, tune).acceptance_rate();
      out.tuning.emplace_back(candidate, rate);
      if (rate > best) {
        best = rate;
        dof = candidate;
      }
    }
  }
  out.dof = dof;
  out.proposal = fit_proposal(pilot_draws, dof);

  ChainConfig chain;
  chain.n_iter = cfg.n_iter;
  chain.burn_in = cfg.burn_in;
  chain.seed = seeds.chain;
  chain.retention = cfg.retention;
  chain.threads = cfg.threads;
  const auto res = mh_chain(ds, out.proposal, cfg.rule, chain);
  out.acceptance_rate = res.acceptance_rate();
  out.iterations = res.iterations;

  out.draws.resize(res.states.size());
  const Eigen::Index dim = out.proposal.center.size();
  parallel_for(res.states.size(), cfg.threads, [&](std::size_t r) {
    const auto& th = res.states[r];
    auto& d = out.draws[r];
    d.hyper.delta_sq = std::exp(th(dim - 1));
    d.hyper.eta = 1.0 / (1.0 + d.hyper.delta_sq);
    d.beta.beta0 = th(0);
    d.beta.slopes = th.segment(1, dim - 2);
    if (cfg.draw_mu) draw_group_effects(ds, cs, d, seeds.mu, r, cfg.mu);
  });
  return out;
}

inline ExactResult exact_fit(const SurveyDataset& ds, const ExactConfig& cfg) {
  if (!cfg.allow_improper) require_proper(ds);
  return exact_fit(ds, assemble_curvature(ds, cfg.threads), cfg);
}

}  // namespace inna
