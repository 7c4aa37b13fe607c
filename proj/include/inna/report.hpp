#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "inna/curvature.hpp"
#include "inna/dataset.hpp"
#include "inna/error.hpp"
#include "inna/exact_mcmc.hpp"
#include "inna/inna_sampler.hpp"
#include "inna/predictor.hpp"
#include "inna/rng.hpp"

namespace inna {

// Posterior summary of one household proportion.
struct SummaryRow {
  Label household_id = 0;
  Label ward_id = 0;
  Origin origin = Origin::sampled;
  double pm = 0.0;
  double psd = 0.0;
  double cv = 0.0;
  bool cv_defined = true;  // false when pm == 0
  std::size_t draws = 0;
};

inline std::vector<SummaryRow> summarize(const std::vector<PredictionDraw>& predictions) {
  struct Acc {
    SummaryRow row;
    double sum = 0.0;
    std::vector<double> values;
  };
  std::vector<Acc> acc;
  std::map<Label, std::size_t> index;
  for (const auto& p : predictions) {
    auto [it, inserted] = index.emplace(p.household_id, acc.size());
    if (inserted) {
      Acc a;
      a.row.household_id = p.household_id;
      a.row.ward_id = p.ward_id;
      a.row.origin = p.origin;
      acc.push_back(std::move(a));
    }
    acc[it->second].values.push_back(p.P);
  }
  std::vector<SummaryRow> out;
  out.reserve(acc.size());
  for (auto& a : acc) {
    const auto n = a.values.size();
    if (n < 2)
      throw ValidationError("household " + std::to_string(a.row.household_id) +
                            " has fewer than 2 draws to summarise");
    double mean = 0.0;
    for (double v : a.values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : a.values) ss += (v - mean) * (v - mean);
    a.row.pm = mean;
    a.row.psd = std::sqrt(ss / static_cast<double>(n - 1));
    a.row.draws = n;
    if (mean > 0.0) {
      a.row.cv = a.row.psd / mean;
    } else {
      a.row.cv = std::numeric_limits<double>::quiet_NaN();
      a.row.cv_defined = false;
    }
    out.push_back(a.row);
  }
  return out;
}

enum class Metric { pm, psd, cv };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::pm: return "pm";
    case Metric::psd: return "psd";
    case Metric::cv: return "cv";
  }
  return "?";
}

// Category scheme for one metric. Interior bins are (lo, hi]; the first
// bin also takes its lower edge. Values above the last edge land in an
// overflow bin when one is configured.
struct Binning {
  std::vector<double> edges;
  std::vector<std::string> labels;
  bool overflow = false;
  bool undefined = false;  // extra category for an undefined CV

  std::size_t categories() const { return labels.size(); }

  std::size_t index(double v, bool defined = true) const {
    if (undefined && (!defined || std::isnan(v))) return labels.size() - 1;
    const std::size_t bins = edges.size() - 1;
    if (v <= edges[1]) return 0;
    for (std::size_t b = 1; b < bins; ++b)
      if (v <= edges[b + 1]) return b;
    return overflow ? bins : bins - 1;
  }
};

inline Binning binning_for(Metric m) {
  switch (m) {
    case Metric::pm:
      return {{0.0, 0.2, 0.4, 0.6, 0.8, 1.0}, {"0-.2", ".2-.4", ".4-.6", ".6-.8", ".8-1"}, false, false};
    case Metric::psd:
      return {{0.0, 0.1, 0.2, 0.3, 0.4, 0.5},
              {".0-.1", ".1-.2", ".2-.3", ".3-.4", ".4-.5", ">.5"},
              true,
              false};
    case Metric::cv:
      return {{0.0, 0.02, 0.05, 0.10, 0.25, 0.50},
              {"<.02", ".02-.05", ".05-.10", ".10-.25", ".25-.50", ">.50", "undefined"},
              true,
              true};
  }
  throw ValidationError("unknown metric");
}

struct CrossTab {
  Metric metric = Metric::pm;
  std::vector<std::string> labels;  // rows: method a, columns: method b
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& r : counts)
      for (auto c : r) t += c;
    return t;
  }
};

inline double metric_value(const SummaryRow& r, Metric m) {
  return m == Metric::pm ? r.pm : m == Metric::psd ? r.psd : r.cv;
}

inline CrossTab cross_tabulate(const std::vector<SummaryRow>& a, const std::vector<SummaryRow>& b,
                               Metric metric) {
  const Binning bins = binning_for(metric);
  CrossTab t;
  t.metric = metric;
  t.labels = bins.labels;
  t.counts.assign(bins.categories(), std::vector<std::size_t>(bins.categories(), 0));
  if (a.size() != b.size()) throw ValidationError("cannot join summaries: household sets differ in size");
  std::map<Label, const SummaryRow*> rhs;
  for (const auto& r : b) rhs[r.household_id] = &r;
  for (const auto& r : a) {
    const auto it = rhs.find(r.household_id);
    if (it == rhs.end())
      throw ValidationError("cannot join summaries: household " + std::to_string(r.household_id) +
                            " missing from the second set");
    const auto i = bins.index(metric_value(r, metric), metric != Metric::cv || r.cv_defined);
    const auto j = bins.index(metric_value(*it->second, metric),
                              metric != Metric::cv || it->second->cv_defined);
    ++t.counts[i][j];
  }
  return t;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// ---- file output --------------------------------------------------------

inline void write_summary_csv(const std::vector<SummaryRow>& rows, std::ostream& out) {
  out << "household,ward,origin,pm,psd,cv\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.household_id << ',' << r.ward_id << ',' << to_string(r.origin) << ',' << r.pm << ','
        << r.psd << ',';
    if (r.cv_defined) out << r.cv;
    else out << "NA";
    out << '\n';
  }
}

inline std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::vector<SummaryRow> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (header) {
      header = false;
      if (cells.size() != 6 || cells[0] != "household")
        throw ParseError(lineno, "expected header 'household,ward,origin,pm,psd,cv'");
      continue;
    }
    if (cells.size() != 6) throw ParseError(lineno, "expected 6 fields");
    SummaryRow r;
    auto hh = detail::parse_number<Label>(cells[0]);
    auto w = detail::parse_number<Label>(cells[1]);
    auto pm = detail::parse_number<double>(cells[3]);
    auto psd = detail::parse_number<double>(cells[4]);
    if (!hh || !w || !pm || !psd) throw ParseError(lineno, "malformed summary row");
    r.household_id = *hh;
    r.ward_id = *w;
    r.origin = cells[2] == "nonsampled" ? Origin::nonsampled : Origin::sampled;
    r.pm = *pm;
    r.psd = *psd;
    if (cells[5] == "NA") {
      r.cv_defined = false;
      r.cv = std::numeric_limits<double>::quiet_NaN();
    } else {
      auto cv = detail::parse_number<double>(cells[5]);
      if (!cv) throw ParseError(lineno, "malformed cv");
      r.cv = *cv;
    }
    rows.push_back(r);
  }
  return rows;
}

inline void write_crosstab_csv(const CrossTab& t, std::ostream& out) {
  out << to_string(t.metric) << "_a\\b";
  for (const auto& l : t.labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    out << t.labels[i];
    for (auto c : t.counts[i]) out << ',' << c;
    out << '\n';
  }
}

// Minimal scatter plot with the 45-degree line.
inline void write_scatter_svg(const std::vector<double>& x, const std::vector<double>& y,
                              const std::string& x_label, const std::string& y_label,
                              std::ostream& out) {
  const double size = 400.0, pad = 40.0;
  double hi = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::isfinite(x[i]) && std::isfinite(y[i])) hi = std::max({hi, x[i], y[i]});
  if (hi <= 0.0) hi = 1.0;
  auto sx = [&](double v) { return pad + v / hi * size; };
  auto sy = [&](double v) { return pad + size - v / hi * size; };
  out << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * pad << "\" height=\""
      << size + 2 * pad << "\">\n";
  out << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << size << "\" height=\"" << size
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(hi) << "\" y2=\"" << sy(hi)
      << "\" stroke=\"gray\"/>\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
    out << "<circle cx=\"" << sx(x[i]) << "\" cy=\"" << sy(y[i]) << "\" r=\"1.5\"/>\n";
  }
  out << "<text x=\"" << pad + size / 2 << "\" y=\"" << size + 1.75 * pad
      << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  out << "<text x=\"12\" y=\"" << pad + size / 2 << "\" transform=\"rotate(-90 12 " << pad + size / 2
      << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  out << "<text x=\"" << pad << "\" y=\"" << pad - 8 << "\">max " << hi << "</text>\n";
  out << "</svg>\n";
}

// ---- comparison run -----------------------------------------------------

struct CompareConfig {
  std::size_t n_draws = 1000;  // INNA draws and retained exact iterations
  std::uint64_t seed = 1;
  unsigned threads = 1;
  GroupingLevel grouping = GroupingLevel::household;
  std::size_t grid_points = 400;
  double dof = 8.0;
  std::vector<double> dof_candidates;  // optional tuning sweep for the exact chain
  std::size_t burn_in = 500;
  std::size_t pilot_draws = 1000;
  Retention retention = Retention::standard;
  IntegrationRule rule{};
  bool include_nonsampled = true;
  bool allow_improper = false;
  bool svg = false;
  std::size_t density_bins = 50;
};

struct ComparisonReport {
  std::vector<SummaryRow> inna;
  std::vector<SummaryRow> exact;
  CrossTab xtab_pm, xtab_psd, xtab_cv;
  double inna_seconds = 0.0;
  double exact_seconds = 0.0;
  double exact_acceptance = 0.0;
  double exact_dof = 8.0;
  double pm_correlation = 0.0;   // sampled households
  double psd_correlation = 0.0;  // sampled households
  double pm_mean_abs_diff = 0.0; // sampled households
  std::vector<PosteriorDraw> inna_draws;
  std::vector<PosteriorDraw> exact_draws;
  std::vector<std::string> files;
};

// Histogram densities of each hyperparameter for both fitters on a shared grid.
inline void write_hyper_density_csv(const std::vector<PosteriorDraw>& a,
                                    const std::vector<PosteriorDraw>& b, std::size_t bins,
                                    const std::vector<std::string>& covariate_names, std::ostream& out) {
  out << "parameter,x,density_inna,density_exact\n" << std::setprecision(17);
  if (a.empty() || b.empty()) return;
  const auto k = a.front().beta.slopes.size();
  std::vector<std::string> names{"delta_sq", "beta0"};
  for (Eigen::Index c = 0; c < k; ++c)
    names.push_back(static_cast<std::size_t>(c) < covariate_names.size()
                        ? "beta_" + covariate_names[static_cast<std::size_t>(c)]
                        : "beta" + std::to_string(c + 1));
  auto value = [&](const PosteriorDraw& d, std::size_t param) {
    if (param == 0) return d.hyper.delta_sq;
    if (param == 1) return d.beta.beta0;
    return d.beta.slopes(static_cast<Eigen::Index>(param - 2));
  };
  for (std::size_t param = 0; param < names.size(); ++param) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto* set : {&a, &b})
      for (const auto& d : *set) {
        lo = std::min(lo, value(d, param));
        hi = std::max(hi, value(d, param));
      }
    if (!(hi > lo)) hi = lo + 1.0;
    const double width = (hi - lo) / static_cast<double>(bins);
    auto hist = [&](const std::vector<PosteriorDraw>& set) {
      std::vector<double> h(bins, 0.0);
      for (const auto& d : set) {
        auto c = static_cast<std::size_t>((value(d, param) - lo) / width);
        h[std::min(c, bins - 1)] += 1.0;
      }
      for (auto& v : h) v /= static_cast<double>(set.size()) * width;
      return h;
    };
    const auto ha = hist(a), hb = hist(b);
    for (std::size_t c = 0; c < bins; ++c)
      out << names[param] << ',' << lo + (static_cast<double>(c) + 0.5) * width << ',' << ha[c] << ','
          << hb[c] << '\n';
  }
}

// Fits both methods on the same data, writes the summaries, scatter data,
// cross-tabulations, hyperparameter densities and timings to `out_dir`.
inline ComparisonReport compare_run(const SurveyDataset& input, const CompareConfig& cfg,
                                    const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  const SurveyDataset ds = regroup(input, cfg.grouping);
  if (!cfg.allow_improper) require_proper(ds);

  Rng seeds = substream(cfg.seed, 0, stream_tag::prediction + 99);
  const std::uint64_t inna_seed = seeds();
  const std::uint64_t exact_seed = seeds();
  const std::uint64_t predict_seed = seeds();

  ComparisonReport rep;
  auto t0 = clock::now();
  const auto cs = assemble_curvature(ds, cfg.threads);
  InnaConfig icfg;
  icfg.grid_points = cfg.grid_points;
  icfg.n_draws = cfg.n_draws;
  icfg.seed = inna_seed;
  icfg.threads = cfg.threads;
  rep.inna_draws = inna_fit(ds, cs, icfg);
  rep.inna_seconds = std::chrono::duration<double>(clock::now() - t0).count();

  t0 = clock::now();
  ExactConfig ecfg;
  ecfg.pilot_draws = cfg.pilot_draws;
  ecfg.grid_points = cfg.grid_points;
  ecfg.dof = cfg.dof;
  ecfg.dof_candidates = cfg.dof_candidates;
  ecfg.rule = cfg.rule;
  ecfg.n_iter = cfg.n_draws;
  ecfg.burn_in = cfg.burn_in;
  ecfg.retention = cfg.retention;
  ecfg.seed = exact_seed;
  ecfg.threads = cfg.threads;
  ecfg.allow_improper = true;  // gated above
  const auto cs_exact = assemble_curvature(ds, cfg.threads);
  auto exact = exact_fit(ds, cs_exact, ecfg);
  rep.exact_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  rep.exact_acceptance = exact.acceptance_rate;
  rep.exact_dof = exact.dof;
  rep.exact_draws = std::move(exact.draws);

  PredictConfig pcfg;
  pcfg.seed = predict_seed;
  pcfg.threads = cfg.threads;
  pcfg.include_nonsampled = cfg.include_nonsampled;
  pcfg.max_draws = cfg.n_draws;
  rep.inna = summarize(predict(ds, rep.inna_draws, pcfg));
  rep.exact = summarize(predict(ds, rep.exact_draws, pcfg));
  rep.xtab_pm = cross_tabulate(rep.inna, rep.exact, Metric::pm);
  rep.xtab_psd = cross_tabulate(rep.inna, rep.exact, Metric::psd);
  rep.xtab_cv = cross_tabulate(rep.inna, rep.exact, Metric::cv);

  std::map<Label, const SummaryRow*> ex;
  for (const auto& r : rep.exact) ex[r.household_id] = &r;
  std::vector<double> pm_a, pm_b, psd_a, psd_b;
  double mad = 0.0;
  for (const auto& r : rep.inna) {
    if (r.origin != Origin::sampled) continue;
    const auto* e = ex.at(r.household_id);
    pm_a.push_back(r.pm);
    pm_b.push_back(e->pm);
    psd_a.push_back(r.psd);
    psd_b.push_back(e->psd);
    mad += std::abs(r.pm - e->pm);
  }
  rep.pm_correlation = pearson(pm_a, pm_b);
  rep.psd_correlation = pearson(psd_a, psd_b);
  rep.pm_mean_abs_diff = pm_a.empty() ? 0.0 : mad / static_cast<double>(pm_a.size());

  fs::create_directories(out_dir);
  auto open = [&](const std::string& name) {
    rep.files.push_back(name);
    std::ofstream f(out_dir / name);
    if (!f) throw ValidationError("cannot write '" + (out_dir / name).string() + "'");
    return f;
  };
  {
    auto f = open("summary_inna.csv");
    write_summary_csv(rep.inna, f);
  }
  {
    auto f = open("summary_exact.csv");
    write_summary_csv(rep.exact, f);
  }
  {
    auto f = open("scatter.csv");
    f << "household,ward,origin,pm_inna,pm_exact,psd_inna,psd_exact,cv_inna,cv_exact\n"
      << std::setprecision(17);
    for (const auto& r : rep.inna) {
      const auto* e = ex.at(r.household_id);
      f << r.household_id << ',' << r.ward_id << ',' << to_string(r.origin) << ',' << r.pm << ','
        << e->pm << ',' << r.psd << ',' << e->psd << ',';
      if (r.cv_defined) f << r.cv;
      else f << "NA";
      f << ',';
      if (e->cv_defined) f << e->cv;
      else f << "NA";
      f << '\n';
    }
  }
  for (const auto* t : {&rep.xtab_pm, &rep.xtab_psd, &rep.xtab_cv}) {
    auto f = open(std::string("xtab_") + to_string(t->metric) + ".csv");
    write_crosstab_csv(*t, f);
  }
  {
    auto f = open("hyper_density.csv");
    write_hyper_density_csv(rep.inna_draws, rep.exact_draws, cfg.density_bins, ds.covariate_names, f);
  }
  {
    auto f = open("timing.json");
    f << std::setprecision(17) << "{\n"
      << "  \"inna_seconds\": " << rep.inna_seconds << ",\n"
      << "  \"exact_seconds\": " << rep.exact_seconds << ",\n"
      << "  \"speedup\": " << (rep.inna_seconds > 0 ? rep.exact_seconds / rep.inna_seconds : 0.0) << ",\n"
      << "  \"exact_acceptance_rate\": " << rep.exact_acceptance << ",\n"
      << "  \"exact_dof\": " << rep.exact_dof << ",\n"
      << "  \"retention\": \"" << to_string(cfg.retention) << "\",\n"
      << "  \"draws\": " << cfg.n_draws << ",\n"
      << "  \"groups\": " << ds.size() << ",\n"
      << "  \"pm_correlation\": " << rep.pm_correlation << ",\n"
      << "  \"psd_correlation\": " << rep.psd_correlation << ",\n"
      << "  \"pm_mean_abs_diff\": " << rep.pm_mean_abs_diff << "\n"
      << "}\n";
  }
  if (cfg.svg) {
    std::vector<double> a, b;
    for (auto m : {Metric::pm, Metric::psd, Metric::cv}) {
      a.clear();
      b.clear();
      for (const auto& r : rep.inna) {
        a.push_back(metric_value(r, m));
        b.push_back(metric_value(*ex.at(r.household_id), m));
      }
      auto f = open(std::string("scatter_") + to_string(m) + ".svg");
      write_scatter_svg(a, b, std::string("INNA ") + to_string(m), std::string("exact ") + to_string(m), f);
    }
  }
  return rep;
}

}  // namespace inna
