#pragma once

#include <nlohmann/json.hpp>

#include <iomanip>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "inna/dataset.hpp"
#include "inna/error.hpp"
#include "inna/exact_mcmc.hpp"
#include "inna/inna_sampler.hpp"
#include "inna/predictor.hpp"
#include "inna/synth.hpp"

namespace inna {

// draw,beta0,beta_<name>...,delta_sq[,mu_1..mu_l]
inline void write_draws_csv(const std::vector<PosteriorDraw>& draws,
                            const std::vector<std::string>& covariate_names, std::ostream& out,
                            bool with_mu = true) {
  const bool mu = with_mu && !draws.empty() && draws.front().mu.size() > 0;
  out << "draw,beta0";
  for (const auto& n : covariate_names) out << ",beta_" << n;
  out << ",delta_sq";
  if (mu)
    for (Eigen::Index i = 0; i < draws.front().mu.size(); ++i) out << ",mu_" << i + 1;
  out << '\n' << std::setprecision(17);
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const auto& p = draws[d];
    out << d << ',' << p.beta.beta0;
    for (Eigen::Index c = 0; c < p.beta.slopes.size(); ++c) out << ',' << p.beta.slopes(c);
    out << ',' << p.hyper.delta_sq;
    if (mu)
      for (Eigen::Index i = 0; i < p.mu.size(); ++i) out << ',' << p.mu(i);
    out << '\n';
  }
}

inline std::vector<PosteriorDraw> read_draws_csv(std::istream& in, std::size_t n_covariates) {
  std::vector<PosteriorDraw> draws;
  std::string line;
  std::size_t lineno = 0, columns = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (columns == 0) {
      columns = cells.size();
      if (columns < n_covariates + 3 || cells[0] != "draw" || cells[1] != "beta0" ||
          cells[n_covariates + 2] != "delta_sq")
        throw ParseError(lineno, "draws header does not match the dataset covariates");
      continue;
    }
    if (cells.size() != columns) throw ParseError(lineno, "wrong number of fields");
    std::vector<double> v(columns);
    for (std::size_t c = 1; c < columns; ++c) {
      auto x = detail::parse_number<double>(cells[c]);
      if (!x) throw ParseError(lineno, "non-numeric value in column " + std::to_string(c + 1));
      v[c] = *x;
    }
    PosteriorDraw p;
    p.beta.beta0 = v[1];
    p.beta.slopes.resize(static_cast<Eigen::Index>(n_covariates));
    for (std::size_t c = 0; c < n_covariates; ++c) p.beta.slopes(static_cast<Eigen::Index>(c)) = v[2 + c];
    p.hyper = HyperDraw::from_delta_sq(v[n_covariates + 2]);
    const std::size_t mu0 = n_covariates + 3;
    p.mu.resize(static_cast<Eigen::Index>(columns - mu0));
    for (std::size_t i = mu0; i < columns; ++i) p.mu(static_cast<Eigen::Index>(i - mu0)) = v[i];
    draws.push_back(std::move(p));
  }
  if (columns == 0) throw ParseError(lineno, "missing header");
  return draws;
}

inline void write_predictions_csv(const std::vector<PredictionDraw>& preds, std::ostream& out) {
  out << "draw,ward,household,origin,N,P\n" << std::setprecision(17);
  for (const auto& p : preds)
    out << p.draw << ',' << p.ward_id << ',' << p.household_id << ',' << to_string(p.origin) << ','
        << p.N << ',' << p.P << '\n';
}

inline nlohmann::json exact_metadata(const ExactResult& r) {
  nlohmann::json j;
  j["acceptance_rate"] = r.acceptance_rate;
  j["iterations"] = r.iterations;
  j["retained"] = r.draws.size();
  j["retention"] = to_string(r.retention);
  j["retention_biased"] = r.retention == Retention::moves_only;
  j["proposal_dof"] = r.dof;
  for (const auto& [dof, rate] : r.tuning) j["tuning"].push_back({{"dof", dof}, {"acceptance_rate", rate}});
  j["rule"] = {{"lower", r.rule_lower}, {"upper", r.rule_upper}, {"m", r.rule_m}};
  j["proposal_center"] = std::vector<double>(r.proposal.center.data(),
                                             r.proposal.center.data() + r.proposal.center.size());
  return j;
}

inline nlohmann::json truth_json(const SynthTruth& t) {
  nlohmann::json j;
  j["beta"] = std::vector<double>(t.beta.data(), t.beta.data() + t.beta.size());
  j["delta_sq"] = t.delta_sq;
  j["nu"] = std::vector<double>(t.nu.data(), t.nu.data() + t.nu.size());
  j["attempts"] = t.attempts;
  return j;
}

}  // namespace inna
