#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "inna/error.hpp"

namespace inna {

using Label = std::int64_t;

struct MemberRecord {
  Label ward_id = 0;
  Label household_id = 0;
  int response = 0;
  std::vector<double> covariates;  // slopes only; the intercept is implicit
};

// A random-effect group. At household level this is one household; after
// regrouping to ward level it holds every member of a ward and
// `member_household` remembers where each member came from.
struct Household {
  Label id = 0;
  Label ward_id = 0;
  std::size_t ward = 0;  // dense ward index
  Eigen::MatrixXd x;     // n_i x (p-1)
  Eigen::VectorXd y;     // responses as 0.0 / 1.0
  std::vector<Label> member_household;
  std::size_t population_size = 0;  // N_i; equals n_i for sampled households

  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
  int successes() const { return static_cast<int>(std::lround(y.sum())); }
  double mean_response() const { return y.size() ? y.mean() : 0.0; }
  bool degenerate() const {
    const int s = successes();
    return s == 0 || s == static_cast<int>(n());
  }
};

struct Standardization {
  double mean = 0.0;
  double sd = 1.0;
  double apply(double v) const { return (v - mean) / sd; }
};

enum class GroupingLevel { household, ward };

struct SurveyDataset {
  std::vector<Household> households;
  std::vector<Label> wards;  // dense ward index -> label
  std::map<Label, std::int64_t> nonsampled_counts;
  std::vector<std::string> covariate_names;
  std::vector<std::optional<Standardization>> standardization;
  GroupingLevel level = GroupingLevel::household;
  std::vector<std::string> warnings;

  std::size_t n_covariates() const { return covariate_names.size(); }
  std::size_t p() const { return n_covariates() + 1; }
  std::size_t size() const { return households.size(); }

  std::size_t total_members() const {
    std::size_t n = 0;
    for (const auto& h : households) n += h.n();
    return n;
  }
  double total_successes() const {
    double s = 0.0;
    for (const auto& h : households) s += h.y.sum();
    return s;
  }
  std::int64_t nonsampled_total() const {
    std::int64_t t = 0;
    for (const auto& [w, c] : nonsampled_counts) t += c;
    return t;
  }
};

// Relative eigenvalue floor on the design Gram matrix. It matches the
// condition guard used when solving for the slope quasi-mode, so anything
// accepted here can be inverted there.
inline constexpr double kGramConditionLimit = 1e12;

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  if (s.empty()) return std::nullopt;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) return std::nullopt;
  }
  return value;
}

inline std::string column_label(const SurveyDataset& ds, std::size_t design_col) {
  return design_col == 0 ? std::string("intercept") : ds.covariate_names[design_col - 1];
}

}  // namespace detail

// Gram matrix of the design [1, X] over all members.
inline Eigen::MatrixXd design_gram(const SurveyDataset& ds) {
  const auto p = static_cast<Eigen::Index>(ds.p());
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  for (const auto& h : ds.households) {
    Eigen::MatrixXd design(h.n(), p);
    design.col(0).setOnes();
    design.rightCols(p - 1) = h.x;
    gram.noalias() += design.transpose() * design;
  }
  return gram;
}

// Returns the index (in design columns, 0 = intercept) of the first column
// that is numerically dependent on its predecessors, or nullopt when the
// design has full column rank.
inline std::optional<std::size_t> first_dependent_column(const SurveyDataset& ds) {
  const Eigen::MatrixXd gram = design_gram(ds);
  for (Eigen::Index k = 1; k <= gram.rows(); ++k) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram.topLeftCorner(k, k),
                                                      Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    const double hi = ev.maxCoeff();
    const double lo = ev.minCoeff();
    if (!(hi > 0.0) || lo <= hi / kGramConditionLimit)
      return static_cast<std::size_t>(k - 1);
  }
  return std::nullopt;
}

inline void check_full_rank(const SurveyDataset& ds) {
  if (auto col = first_dependent_column(ds)) {
    const auto name = detail::column_label(ds, *col);
    throw RankError(name, "design matrix is rank deficient: column '" + name +
                              "' is linearly dependent on earlier columns");
  }
}

inline void refresh_warnings(SurveyDataset& ds) {
  ds.warnings.clear();
  for (const auto& h : ds.households) {
    if (h.degenerate())
      ds.warnings.push_back("household " + std::to_string(h.id) + " has " +
                            std::to_string(h.successes()) + " successes out of " +
                            std::to_string(h.n()) + " (degenerate response)");
  }
}

// Groups member rows into households, remaps labels to dense indices and
// validates the result.
inline SurveyDataset build_dataset(const std::vector<MemberRecord>& records,
                                   std::vector<std::string> covariate_names,
                                   std::map<Label, std::int64_t> nonsampled = {},
                                   bool require_full_rank = true) {
  SurveyDataset ds;
  ds.covariate_names = std::move(covariate_names);
  ds.standardization.assign(ds.covariate_names.size(), std::nullopt);
  const std::size_t k = ds.covariate_names.size();
  if (records.empty()) throw ValidationError("dataset has no member records");

  std::unordered_map<Label, std::size_t> ward_index;
  std::unordered_map<Label, std::size_t> household_index;
  std::vector<std::vector<const MemberRecord*>> members;
  for (const auto& r : records) {
    if (r.response != 0 && r.response != 1)
      throw DomainError("response must be 0 or 1, got " + std::to_string(r.response));
    if (r.covariates.size() != k)
      throw ValidationError("member of household " + std::to_string(r.household_id) +
                            " has " + std::to_string(r.covariates.size()) +
                            " covariates, expected " + std::to_string(k));
    if (!ward_index.count(r.ward_id)) {
      ward_index.emplace(r.ward_id, ds.wards.size());
      ds.wards.push_back(r.ward_id);
    }
    auto [it, inserted] = household_index.emplace(r.household_id, ds.households.size());
    if (inserted) {
      Household h;
      h.id = r.household_id;
      h.ward_id = r.ward_id;
      h.ward = ward_index.at(r.ward_id);
      ds.households.push_back(std::move(h));
      members.emplace_back();
    } else if (ds.households[it->second].ward_id != r.ward_id) {
      throw ValidationError("household " + std::to_string(r.household_id) +
                            " appears in more than one ward");
    }
    members[it->second].push_back(&r);
  }

  for (std::size_t i = 0; i < ds.households.size(); ++i) {
    auto& h = ds.households[i];
    const auto& rows = members[i];
    h.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k));
    h.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
      h.y(static_cast<Eigen::Index>(j)) = rows[j]->response;
      for (std::size_t c = 0; c < k; ++c)
        h.x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = rows[j]->covariates[c];
      h.member_household.push_back(h.id);
    }
    h.population_size = h.n();
  }

  for (const auto& [ward, count] : nonsampled) {
    if (count < 0)
      throw ValidationError("ward " + std::to_string(ward) + " has a negative nonsampled count");
    if (!ward_index.count(ward) && count > 0)
      throw ValidationError("ward " + std::to_string(ward) +
                            " has nonsampled households but no sampled households");
  }
  ds.nonsampled_counts = std::move(nonsampled);
  for (Label w : ds.wards) ds.nonsampled_counts.try_emplace(w, 0);

  if (require_full_rank) check_full_rank(ds);
  refresh_warnings(ds);
  return ds;
}

// Structural checks for datasets assembled by hand rather than through
// build_dataset.
inline void validate(const SurveyDataset& ds) {
  if (ds.households.empty()) throw ValidationError("dataset has no households");
  const auto k = static_cast<Eigen::Index>(ds.n_covariates());
  for (const auto& h : ds.households) {
    if (h.n() == 0)
      throw ValidationError("household " + std::to_string(h.id) + " has no members");
    if (h.x.rows() != h.y.size() || h.x.cols() != k)
      throw ValidationError("household " + std::to_string(h.id) + " has inconsistent shapes");
    if (h.ward >= ds.wards.size())
      throw ValidationError("household " + std::to_string(h.id) + " belongs to an undeclared ward");
    for (Eigen::Index j = 0; j < h.y.size(); ++j)
      if (h.y(j) != 0.0 && h.y(j) != 1.0)
        throw DomainError("household " + std::to_string(h.id) + " has a non-binary response");
  }
}

inline std::map<Label, std::int64_t> read_nonsampled(std::istream& in) {
  std::map<Label, std::int64_t> out;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (header) {
      header = false;
      if (cells.size() != 2 || cells[0] != "ward" || cells[1] != "nonsampled_households")
        throw ParseError(lineno, "expected header 'ward,nonsampled_households'");
      continue;
    }
    if (cells.size() != 2) throw ParseError(lineno, "expected 2 fields");
    auto w = detail::parse_number<Label>(cells[0]);
    auto c = detail::parse_number<std::int64_t>(cells[1]);
    if (!w || !c) throw ParseError(lineno, "malformed integer");
    if (*c < 0) throw ParseError(lineno, "negative nonsampled count");
    if (!out.emplace(*w, *c).second) throw ParseError(lineno, "duplicate ward");
  }
  return out;
}

inline SurveyDataset read_dataset(std::istream& in,
                                  std::map<Label, std::int64_t> nonsampled = {},
                                  bool require_full_rank = true) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> names;
  std::vector<MemberRecord> records;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (header) {
      header = false;
      if (cells.size() < 3 || cells[0] != "ward" || cells[1] != "household" || cells[2] != "y")
        throw ParseError(lineno, "header must start with 'ward,household,y'");
      for (std::size_t c = 3; c < cells.size(); ++c) names.emplace_back(cells[c]);
      continue;
    }
    if (cells.size() != names.size() + 3)
      throw ParseError(lineno, "expected " + std::to_string(names.size() + 3) + " fields, got " +
                                   std::to_string(cells.size()));
    MemberRecord r;
    auto w = detail::parse_number<Label>(cells[0]);
    auto hh = detail::parse_number<Label>(cells[1]);
    auto y = detail::parse_number<int>(cells[2]);
    if (!w) throw ParseError(lineno, "malformed ward label");
    if (!hh) throw ParseError(lineno, "malformed household label");
    if (!y) throw ParseError(lineno, "malformed response");
    if (*y != 0 && *y != 1) throw ParseError(lineno, "response must be 0 or 1");
    r.ward_id = *w;
    r.household_id = *hh;
    r.response = *y;
    r.covariates.reserve(names.size());
    for (std::size_t c = 3; c < cells.size(); ++c) {
      auto v = detail::parse_number<double>(cells[c]);
      if (!v) throw ParseError(lineno, "malformed covariate '" + names[c - 3] + "'");
      r.covariates.push_back(*v);
    }
    records.push_back(std::move(r));
  }
  if (header) throw ParseError(lineno, "missing header");
  if (records.empty()) throw ValidationError("dataset has no member records");
  return build_dataset(records, std::move(names), std::move(nonsampled), require_full_rank);
}

inline SurveyDataset load_dataset(const std::string& path,
                                  const std::string& nonsampled_path = {},
                                  bool require_full_rank = true) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset '" + path + "'");
  std::map<Label, std::int64_t> nonsampled;
  if (!nonsampled_path.empty()) {
    std::ifstream ns(nonsampled_path);
    if (!ns) throw ValidationError("cannot open nonsampled counts '" + nonsampled_path + "'");
    nonsampled = read_nonsampled(ns);
  }
  return read_dataset(in, std::move(nonsampled), require_full_rank);
}

// Member-level CSV in load order. For ward-level datasets the original
// household labels are written back.
inline void write_dataset(const SurveyDataset& ds, std::ostream& out) {
  out << "ward,household,y";
  for (const auto& n : ds.covariate_names) out << ',' << n;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& h : ds.households) {
    for (Eigen::Index j = 0; j < h.y.size(); ++j) {
      out << h.ward_id << ',' << h.member_household[static_cast<std::size_t>(j)] << ','
          << static_cast<int>(h.y(j));
      for (Eigen::Index c = 0; c < h.x.cols(); ++c) out << ',' << h.x(j, c);
      out << '\n';
    }
  }
}

inline void write_nonsampled(const SurveyDataset& ds, std::ostream& out) {
  out << "ward,nonsampled_households\n";
  for (const auto& [w, c] : ds.nonsampled_counts) out << w << ',' << c << '\n';
}

// Rescales one covariate to mean 0 and standard deviation 1 (divisor n) over
// all sampled members. The transform is kept so that bootstrap-generated
// records can be put on the same scale.
inline SurveyDataset standardize_covariate(const SurveyDataset& ds, std::size_t column) {
  if (column >= ds.n_covariates())
    throw ValidationError("covariate column " + std::to_string(column) + " out of range");
  const auto c = static_cast<Eigen::Index>(column);
  const double n = static_cast<double>(ds.total_members());
  double sum = 0.0;
  for (const auto& h : ds.households) sum += h.x.col(c).sum();
  const double mean = sum / n;
  double ss = 0.0;
  for (const auto& h : ds.households) ss += (h.x.col(c).array() - mean).square().sum();
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0) || sd <= 1e-14 * std::max(1.0, std::abs(mean)))
    throw DomainError("covariate '" + ds.covariate_names[column] + "' has zero variance");

  SurveyDataset out = ds;
  for (auto& h : out.households) h.x.col(c) = (h.x.col(c).array() - mean) / sd;
  const Standardization step{mean, sd};
  auto& slot = out.standardization[column];
  if (slot) {
    // compose with the earlier transform so raw values map straight through
    slot = Standardization{slot->mean + slot->sd * mean, slot->sd * sd};
  } else {
    slot = step;
  }
  return out;
}

// Household level is the identity. Ward level merges every household of a
// ward into one random-effect group.
inline SurveyDataset regroup(const SurveyDataset& ds, GroupingLevel level) {
  if (level == GroupingLevel::household) return ds;
  SurveyDataset out = ds;
  out.level = GroupingLevel::ward;
  out.households.clear();
  std::vector<std::vector<const Household*>> by_ward(ds.wards.size());
  for (const auto& h : ds.households) by_ward[h.ward].push_back(&h);
  const auto k = static_cast<Eigen::Index>(ds.n_covariates());
  for (std::size_t w = 0; w < ds.wards.size(); ++w) {
    if (by_ward[w].empty()) continue;
    Household g;
    g.id = ds.wards[w];
    g.ward_id = ds.wards[w];
    g.ward = w;
    Eigen::Index total = 0;
    for (const auto* h : by_ward[w]) total += h->y.size();
    g.x.resize(total, k);
    g.y.resize(total);
    Eigen::Index row = 0;
    for (const auto* h : by_ward[w]) {
      g.x.middleRows(row, h->y.size()) = h->x;
      g.y.segment(row, h->y.size()) = h->y;
      g.member_household.insert(g.member_household.end(), h->member_household.begin(),
                                h->member_household.end());
      row += h->y.size();
    }
    g.population_size = g.n();
    out.households.push_back(std::move(g));
  }
  refresh_warnings(out);
  return out;
}

}  // namespace inna
