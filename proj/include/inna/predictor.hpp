#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "inna/dataset.hpp"
#include "inna/error.hpp"
#include "inna/inna_sampler.hpp"
#include "inna/logistic.hpp"
#include "inna/parallel.hpp"
#include "inna/rng.hpp"

namespace inna {

enum class Origin : unsigned char { sampled, nonsampled };

inline const char* to_string(Origin o) { return o == Origin::sampled ? "sampled" : "nonsampled"; }

// One posterior-predictive draw of a household proportion P = count / N.
struct PredictionDraw {
  std::size_t draw = 0;
  Label household_id = 0;
  Label ward_id = 0;
  Origin origin = Origin::sampled;
  std::size_t N = 0;
  std::size_t count = 0;
  double P = 0.0;
};

// Synthetic households get ward_id * 1e6 + running index.
inline constexpr Label kSyntheticIdStride = 1000000;

inline std::size_t simulate_members(const Eigen::MatrixXd& x, const Eigen::VectorXd& slopes,
                                    double mu, Rng& rng) {
  std::size_t count = 0;
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const double a = (slopes.size() ? x.row(j).dot(slopes) : 0.0) + mu;
    if (rng.uniform() < expit(a)) ++count;
  }
  return count;
}

// Simulates every member of a sampled household from its own covariates.
inline PredictionDraw predict_sampled(const Household& h, const BetaDraw& beta, double mu,
                                      Rng& rng) {
  PredictionDraw out;
  out.household_id = h.id;
  out.ward_id = h.ward_id;
  out.origin = Origin::sampled;
  out.N = h.n();
  out.count = simulate_members(h.x, beta.slopes, mu, rng);
  out.P = out.N ? static_cast<double>(out.count) / static_cast<double>(out.N) : 0.0;
  return out;
}

// Dirichlet(1, ..., 1) weights as the gaps between k-1 sorted uniforms.
inline std::vector<double> bayesian_bootstrap_weights(std::size_t k, Rng& rng) {
  if (k == 0) throw DomainError("Bayesian bootstrap needs at least one value");
  std::vector<double> cuts(k + 1);
  cuts[0] = 0.0;
  cuts[k] = 1.0;
  for (std::size_t i = 1; i < k; ++i) cuts[i] = rng.uniform();
  std::sort(cuts.begin() + 1, cuts.end() - 1);
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) w[i] = cuts[i + 1] - cuts[i];
  return w;
}

namespace detail {

inline std::vector<double> cumulative(const std::vector<double>& w) {
  std::vector<double> c(w.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) c[i] = (acc += w[i]);
  return c;
}

inline std::size_t pick(const std::vector<double>& cum, Rng& rng) {
  const double u = rng.uniform() * cum.back();
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  return static_cast<std::size_t>(std::min<std::ptrdiff_t>(
      it - cum.begin(), static_cast<std::ptrdiff_t>(cum.size()) - 1));
}

}  // namespace detail

// Observed household sizes and member covariate rows, per ward.
struct BootstrapPool {
  struct Ward {
    std::vector<std::size_t> sizes;
    Eigen::MatrixXd covariates;
  };
  std::map<Label, Ward> wards;

  static BootstrapPool from_dataset(const SurveyDataset& ds) {
    BootstrapPool pool;
    std::map<Label, std::vector<const Household*>> by_ward;
    for (const auto& h : ds.households) by_ward[h.ward_id].push_back(&h);
    const auto k = static_cast<Eigen::Index>(ds.n_covariates());
    for (const auto& [ward, groups] : by_ward) {
      Ward w;
      Eigen::Index rows = 0;
      for (const auto* g : groups) {
        rows += g->y.size();
        // sizes of the original households, also after ward regrouping
        std::map<Label, std::size_t> sizes;
        std::vector<Label> order;
        for (Label id : g->member_household)
          if (sizes[id]++ == 0) order.push_back(id);
        for (Label id : order) w.sizes.push_back(sizes[id]);
      }
      w.covariates.resize(rows, k);
      Eigen::Index r = 0;
      for (const auto* g : groups) {
        w.covariates.middleRows(r, g->y.size()) = g->x;
        r += g->y.size();
      }
      pool.wards.emplace(ward, std::move(w));
    }
    return pool;
  }
};

// Synthesises `count` nonsampled households of one ward. Household sizes
// and member covariates come from two independent Bayesian bootstraps of
// the ward's pool. `ward_mu` overrides the household intercept draw when
// the random effect lives at ward level.
inline std::vector<PredictionDraw> bootstrap_nonsampled(const BootstrapPool& pool, Label ward_id,
                                                        std::size_t count, const PosteriorDraw& draw,
                                                        Rng& rng,
                                                        std::optional<double> ward_mu = std::nullopt) {
  const auto it = pool.wards.find(ward_id);
  if (it == pool.wards.end() || it->second.sizes.empty() || it->second.covariates.rows() == 0)
    throw ValidationError("bootstrap pool for ward " + std::to_string(ward_id) + " is empty");
  const auto& w = it->second;
  const auto size_cum = detail::cumulative(bayesian_bootstrap_weights(w.sizes.size(), rng));
  const auto cov_cum = detail::cumulative(
      bayesian_bootstrap_weights(static_cast<std::size_t>(w.covariates.rows()), rng));
  std::normal_distribution<double> normal;
  const double sd = std::sqrt(draw.hyper.delta_sq);
  std::vector<PredictionDraw> out;
  out.reserve(count);
  for (std::size_t h = 0; h < count; ++h) {
    PredictionDraw p;
    p.household_id = ward_id * kSyntheticIdStride + static_cast<Label>(h);
    p.ward_id = ward_id;
    p.origin = Origin::nonsampled;
    p.N = w.sizes[detail::pick(size_cum, rng)];
    const double z = normal(rng);
    const double mu = ward_mu ? *ward_mu : draw.beta.beta0 + sd * z;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(p.N), w.covariates.cols());
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      x.row(j) = w.covariates.row(static_cast<Eigen::Index>(detail::pick(cov_cum, rng)));
    p.count = simulate_members(x, draw.beta.slopes, mu, rng);
    p.P = static_cast<double>(p.count) / static_cast<double>(p.N);
    out.push_back(p);
  }
  return out;
}

struct PredictConfig {
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool include_nonsampled = true;
  std::size_t max_draws = 1000;  // posterior-predictive replicates
};

// Household proportions for every posterior draw: sampled households (per
// original household, also for ward-level fits) followed by the
// bootstrapped nonsampled households of each ward.
inline std::vector<PredictionDraw> predict(const SurveyDataset& ds,
                                           const std::vector<PosteriorDraw>& draws,
                                           const PredictConfig& cfg) {
  const std::size_t n_draws = std::min(draws.size(), cfg.max_draws);
  for (std::size_t d = 0; d < n_draws; ++d)
    if (draws[d].mu.size() != static_cast<Eigen::Index>(ds.size()))
      throw ValidationError("posterior draws do not carry group intercepts");
  const BootstrapPool pool = cfg.include_nonsampled ? BootstrapPool::from_dataset(ds) : BootstrapPool{};
  const bool ward_level = ds.level == GroupingLevel::ward;
  std::map<Label, std::size_t> ward_group;
  if (ward_level)
    for (std::size_t i = 0; i < ds.size(); ++i) ward_group[ds.households[i].ward_id] = i;

  std::vector<std::vector<PredictionDraw>> per_draw(n_draws);
  const std::uint64_t sampled_seed = substream(cfg.seed, 0, stream_tag::prediction)();
  const std::uint64_t boot_seed = substream(cfg.seed, 0, stream_tag::bootstrap)();
  parallel_for(n_draws, cfg.threads, [&](std::size_t d) {
    auto& out = per_draw[d];
    const auto& draw = draws[d];
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& g = ds.households[i];
      Rng rng = substream(sampled_seed, d, i);
      const double mu = draw.mu(static_cast<Eigen::Index>(i));
      if (!ward_level) {
        out.push_back(predict_sampled(g, draw.beta, mu, rng));
        continue;
      }
      // ward-level group: report each original household separately
      std::vector<Label> order;
      std::map<Label, std::vector<Eigen::Index>> rows;
      for (std::size_t j = 0; j < g.member_household.size(); ++j) {
        auto& v = rows[g.member_household[j]];
        if (v.empty()) order.push_back(g.member_household[j]);
        v.push_back(static_cast<Eigen::Index>(j));
      }
      for (Label id : order) {
        const auto& idx = rows[id];
        Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), g.x.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = g.x.row(idx[r]);
        PredictionDraw p;
        p.household_id = id;
        p.ward_id = g.ward_id;
        p.N = idx.size();
        p.count = simulate_members(x, draw.beta.slopes, mu, rng);
        p.P = static_cast<double>(p.count) / static_cast<double>(p.N);
        out.push_back(p);
      }
    }
    if (cfg.include_nonsampled) {
      for (const auto& [ward, count] : ds.nonsampled_counts) {
        if (count <= 0) continue;
        Rng rng = substream(boot_seed, d, static_cast<std::uint64_t>(ward));
        std::optional<double> wmu;
        if (ward_level) wmu = draw.mu(static_cast<Eigen::Index>(ward_group.at(ward)));
        auto syn = bootstrap_nonsampled(pool, ward, static_cast<std::size_t>(count), draw, rng, wmu);
        out.insert(out.end(), syn.begin(), syn.end());
      }
    }
    for (auto& p : out) p.draw = d;
  });
  std::vector<PredictionDraw> all;
  for (auto& v : per_draw) all.insert(all.end(), v.begin(), v.end());
  return all;
}

struct EquivalentSample {
  double n_e = 0.0;
  Eigen::VectorXd normalized;  // sums to n_e
};

inline EquivalentSample equivalent_sample_size(const Eigen::VectorXd& weights) {
  if (weights.size() == 0) throw DomainError("no survey weights given");
  if (!(weights.minCoeff() > 0.0)) throw DomainError("survey weights must be positive");
  const double sum = weights.sum();
  const double sum_sq = weights.squaredNorm();
  EquivalentSample out;
  out.n_e = sum * sum / sum_sq;
  out.normalized = out.n_e * weights / sum;
  return out;
}

// Dataset with every member's covariate row scaled by its normalised weight.
// The scaled intercept column is kept alongside; the group intercepts of the
// fitters absorb the constant column, so they consume `data` unchanged.
struct WeightedDataset {
  SurveyDataset data;
  std::vector<Eigen::VectorXd> intercept;  // normalised weight per member, per group
  double n_e = 0.0;
};

inline WeightedDataset apply_survey_weights(const SurveyDataset& ds, const Eigen::VectorXd& weights) {
  if (weights.size() != static_cast<Eigen::Index>(ds.total_members()))
    throw ValidationError("expected " + std::to_string(ds.total_members()) + " survey weights, got " +
                          std::to_string(weights.size()));
  const auto es = equivalent_sample_size(weights);
  WeightedDataset out;
  out.data = ds;
  out.n_e = es.n_e;
  Eigen::Index offset = 0;
  for (auto& h : out.data.households) {
    const auto n = h.y.size();
    const Eigen::VectorXd w = es.normalized.segment(offset, n);
    h.x = w.asDiagonal() * h.x;
    out.intercept.push_back(w);
    offset += n;
  }
  return out;
}

// Weight-exponentiated log-likelihood, kept for comparison with the
// covariate-scaling form above.
inline double weighted_loglik(const SurveyDataset& ds, const Eigen::VectorXd& normalized,
                              const Eigen::VectorXd& mu, const Eigen::VectorXd& slopes) {
  double ll = 0.0;
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& h = ds.households[i];
    const Eigen::VectorXd off = h.x * slopes;
    for (Eigen::Index j = 0; j < h.y.size(); ++j) {
      const double a = off(j) + mu(static_cast<Eigen::Index>(i));
      ll += normalized(offset + j) * (a * h.y(j) - log1pexp(a));
    }
    offset += h.y.size();
  }
  return ll;
}

}  // namespace inna
