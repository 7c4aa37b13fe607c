#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "inna/inna.hpp"

namespace fs = std::filesystem;

namespace {

struct Global {
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out_dir = ".";
};

struct DataArgs {
  std::string data;
  std::string nonsampled;
  std::string grouping = "household";
  std::vector<std::string> standardize;
};

void add_data_options(CLI::App* app, DataArgs& a) {
  app->add_option("--data", a.data, "member-level CSV (ward,household,y,covariates...)")->required();
  app->add_option("--nonsampled", a.nonsampled, "CSV of nonsampled household counts per ward");
  app->add_option("--grouping", a.grouping, "random-effect level")
      ->check(CLI::IsMember({"household", "ward"}));
  app->add_option("--standardize", a.standardize, "covariate names to standardise");
}

inna::SurveyDataset load(const DataArgs& a) {
  auto ds = inna::load_dataset(a.data, a.nonsampled);
  for (const auto& name : a.standardize) {
    const auto& names = ds.covariate_names;
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw inna::ValidationError("unknown covariate '" + name + "'");
    ds = inna::standardize_covariate(ds, static_cast<std::size_t>(it - names.begin()));
  }
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
  return inna::regroup(ds, a.grouping == "ward" ? inna::GroupingLevel::ward : inna::GroupingLevel::household);
}

std::ofstream open_out(const Global& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  const auto path = fs::path(g.out_dir) / name;
  std::ofstream f(path);
  if (!f) throw inna::ValidationError("cannot write '" + path.string() + "'");
  return f;
}

inna::Retention parse_retention(const std::string& s) {
  return s == "moves-only" ? inna::Retention::moves_only : inna::Retention::standard;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Approximate and exact Bayesian fits for household-level logistic models"};
  app.set_config("--config", "", "key=value configuration file mirroring the flags");
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "root random seed");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "output directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic survey");
  inna::SynthConfig sc;
  std::vector<double> beta;
  std::vector<std::size_t> sizes;
  double geometric_mean = 0.0;
  sim->add_option("--wards", sc.n_wards)->check(CLI::PositiveNumber);
  sim->add_option("--households", sc.households_per_ward, "sampled households per ward")
      ->check(CLI::PositiveNumber);
  sim->add_option("--nonsampled", sc.nonsampled_per_ward, "nonsampled households per ward");
  sim->add_option("--delta-sq", sc.true_delta_sq);
  sim->add_option("--beta", beta, "true intercept and slopes (p values)");
  sim->add_option("--sizes", sizes, "household sizes drawn uniformly from this list");
  sim->add_option("--geometric-mean", geometric_mean, "draw household sizes as 1 + geometric");

  // fit
  auto* fit = app.add_subcommand("fit", "draw from the posterior");
  DataArgs fit_data;
  add_data_options(fit, fit_data);
  std::string method = "inna";
  std::size_t draws = 1000, grid_points = 400, burn_in = 500, pilot = 1000;
  double dof = 8.0;
  std::vector<double> dof_sweep;
  std::string retention = "standard";
  bool with_mu = false, allow_improper = false;
  fit->add_option("--method", method)->check(CLI::IsMember({"inna", "exact"}));
  fit->add_option("--draws", draws, "INNA draws or retained chain iterations");
  fit->add_option("--grid-points", grid_points)->check(CLI::Range(2, 1000000));
  fit->add_option("--burn-in", burn_in);
  fit->add_option("--pilot-draws", pilot);
  fit->add_option("--dof", dof, "Student-t proposal degrees of freedom (inf for normal)");
  fit->add_option("--dof-sweep", dof_sweep, "tune the proposal over these dof values");
  fit->add_option("--retention", retention)->check(CLI::IsMember({"standard", "moves-only"}));
  fit->add_flag("--with-mu", with_mu, "write group intercept columns");
  fit->add_flag("--allow-improper", allow_improper, "skip the propriety gate");

  // predict
  auto* pred = app.add_subcommand("predict", "household proportions from posterior draws");
  DataArgs pred_data;
  add_data_options(pred, pred_data);
  std::string draws_file;
  bool no_nonsampled = false;
  std::size_t max_draws = 1000;
  pred->add_option("--draws-file", draws_file, "draws CSV written by fit --with-mu")->required();
  pred->add_option("--max-draws", max_draws);
  pred->add_flag("--no-nonsampled", no_nonsampled, "skip bootstrapped nonsampled households");

  // compare
  auto* cmp = app.add_subcommand("compare", "fit both methods and write the comparison report");
  DataArgs cmp_data;
  add_data_options(cmp, cmp_data);
  inna::CompareConfig cc;
  std::string cmp_retention = "standard";
  cmp->add_option("--draws", cc.n_draws);
  cmp->add_option("--grid-points", cc.grid_points)->check(CLI::Range(2, 1000000));
  cmp->add_option("--burn-in", cc.burn_in);
  cmp->add_option("--pilot-draws", cc.pilot_draws);
  cmp->add_option("--dof", cc.dof);
  cmp->add_option("--dof-sweep", cc.dof_candidates);
  cmp->add_option("--retention", cmp_retention)->check(CLI::IsMember({"standard", "moves-only"}));
  cmp->add_flag("--allow-improper", cc.allow_improper, "skip the propriety gate");
  cmp->add_flag("--svg", cc.svg, "also write SVG scatter plots");

  // tables
  auto* tab = app.add_subcommand("tables", "cross-tabulate two summary files");
  std::string summary_a, summary_b;
  tab->add_option("--a", summary_a, "summary CSV for the row method")->required();
  tab->add_option("--b", summary_b, "summary CSV for the column method")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(inna::ExitCode::validation);
  }

  try {
    if (sim->parsed()) {
      sc.seed = g.seed;
      if (!beta.empty()) sc.true_beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
      if (!sizes.empty()) sc.member_count = inna::EmpiricalSizes{sizes};
      if (geometric_mean > 0.0) sc.member_count = inna::GeometricSizes{geometric_mean};
      const auto res = inna::generate(sc);
      {
        auto f = open_out(g, "data.csv");
        inna::write_dataset(res.dataset, f);
      }
      {
        auto f = open_out(g, "nonsampled.csv");
        inna::write_nonsampled(res.dataset, f);
      }
      {
        auto f = open_out(g, "truth.json");
        f << inna::truth_json(res.truth).dump(2) << '\n';
      }
    } else if (fit->parsed()) {
      const auto ds = load(fit_data);
      std::vector<inna::PosteriorDraw> out;
      if (method == "inna") {
        inna::InnaConfig ic;
        ic.grid_points = grid_points;
        ic.n_draws = draws;
        ic.seed = g.seed;
        ic.threads = g.threads;
        ic.draw_mu = with_mu;
        out = inna::inna_fit(ds, ic);
      } else {
        inna::ExactConfig ec;
        ec.pilot_draws = pilot;
        ec.grid_points = grid_points;
        ec.dof = dof;
        ec.dof_candidates = dof_sweep;
        ec.n_iter = draws;
        ec.burn_in = burn_in;
        ec.retention = parse_retention(retention);
        ec.seed = g.seed;
        ec.threads = g.threads;
        ec.draw_mu = with_mu;
        ec.allow_improper = allow_improper;
        auto res = inna::exact_fit(ds, ec);
        {
          auto f = open_out(g, "exact_metadata.json");
          f << inna::exact_metadata(res).dump(2) << '\n';
        }
        out = std::move(res.draws);
      }
      auto f = open_out(g, "draws_" + method + ".csv");
      inna::write_draws_csv(out, ds.covariate_names, f, with_mu);
    } else if (pred->parsed()) {
      const auto ds = load(pred_data);
      std::ifstream in(draws_file);
      if (!in) throw inna::ValidationError("cannot open draws '" + draws_file + "'");
      const auto post = inna::read_draws_csv(in, ds.n_covariates());
      inna::PredictConfig pc;
      pc.seed = g.seed;
      pc.threads = g.threads;
      pc.include_nonsampled = !no_nonsampled;
      pc.max_draws = max_draws;
      const auto preds = inna::predict(ds, post, pc);
      {
        auto f = open_out(g, "predictions.csv");
        inna::write_predictions_csv(preds, f);
      }
      auto f = open_out(g, "summary.csv");
      inna::write_summary_csv(inna::summarize(preds), f);
    } else if (cmp->parsed()) {
      const auto ds = load(cmp_data);
      cc.seed = g.seed;
      cc.threads = g.threads;
      cc.retention = parse_retention(cmp_retention);
      cc.grouping = ds.level;
      const auto rep = inna::compare_run(ds, cc, g.out_dir);
      std::cout << "INNA " << rep.inna_seconds << " s, exact " << rep.exact_seconds
                << " s, exact acceptance " << rep.exact_acceptance << ", PM r " << rep.pm_correlation
                << ", PSD r " << rep.psd_correlation << '\n';
    } else if (tab->parsed()) {
      auto read = [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw inna::ValidationError("cannot open summary '" + path + "'");
        return inna::read_summary_csv(in);
      };
      const auto a = read(summary_a), b = read(summary_b);
      for (auto m : {inna::Metric::pm, inna::Metric::psd, inna::Metric::cv}) {
        auto f = open_out(g, std::string("xtab_") + inna::to_string(m) + ".csv");
        inna::write_crosstab_csv(inna::cross_tabulate(a, b, m), f);
      }
    }
  } catch (const inna::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
