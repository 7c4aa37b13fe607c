#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace inna;
namespace ts = testing_support;

namespace {

Eigen::VectorXd tau_of(const QuasiModes& m) {
  Eigen::VectorXd t(m.mu_star.size() + m.beta_star.size());
  t << m.mu_star, m.beta_star;
  return t;
}

SurveyDataset from_records(const std::vector<MemberRecord>& rec, std::size_t k, bool full_rank = true) {
  return build_dataset(rec, ts::names(k), {}, full_rank);
}

}  // namespace

// ---- quasi-modes ----------------------------------------------------------

TEST(QuasiMode, HandSlope) {
  // one household, y = (1, 0), x = (1, -1): z = 0, gram 2, rhs 1
  const auto ds = from_records({{1, 1, 1, {1.0}}, {1, 1, 0, {-1.0}}}, 1, false);
  const auto m = quasi_modes(ds);
  EXPECT_NEAR(m.beta_star(0), 0.5, 1e-14);
}

TEST(QuasiMode, HandIntercepts) {
  const Eigen::VectorXd zero1 = Eigen::VectorXd::Zero(1), zero2 = Eigen::VectorXd::Zero(2);
  EXPECT_NEAR(quasi_mode_mu_from_offsets(Eigen::VectorXd::Zero(1), zero1), -std::log(1.5), 1e-14);
  EXPECT_NEAR(quasi_mode_mu_from_offsets(Eigen::VectorXd::Ones(1), zero1), std::log(2.0), 1e-14);
  Eigen::VectorXd y(2);
  y << 1, 0;
  EXPECT_NEAR(quasi_mode_mu_from_offsets(y, zero2), std::log(4.0 / 3.0), 1e-14);
}

TEST(QuasiMode, OffsetShiftMovesIntercept) {
  Eigen::VectorXd y(4), off(4);
  y << 1, 0, 1, 1;
  off << 0.3, -1.2, 2.0, 0.1;
  const double base = quasi_mode_mu_from_offsets(y, off);
  for (double c : {-5.0, 0.7, 40.0})
    EXPECT_NEAR(quasi_mode_mu_from_offsets(y, (off.array() + c).matrix()), base - c, 1e-10);
}

TEST(QuasiMode, SingularGramIsReported) {
  const auto ds = from_records({{1, 1, 1, {0.0}}, {1, 1, 0, {0.0}}, {1, 2, 1, {0.0}}}, 1, false);
  try {
    quasi_modes(ds);
    FAIL();
  } catch (const ConditioningError& e) {
    EXPECT_EQ(e.smallest_singular_value(), 0.0);
  }
}

TEST(QuasiMode, NewtonStepImprovesLikelihood) {
  int improved = 0, total = 0;
  for (std::uint64_t s = 0; s < 60; ++s) {
    const auto ds = ts::random_dataset(1000 + s, 12, 2, 6, 10, 0.6);
    const auto cs = assemble_curvature(ds);
    Eigen::VectorXd refined(cs.groups() + cs.slopes());
    refined << cs.mu_mean, cs.beta_mean;
    const Eigen::VectorXd start = tau_of({cs.beta_star, cs.mu_star});
    ++total;
    if (ts::flat_loglik_tau(ds, refined) > ts::flat_loglik_tau(ds, start)) ++improved;
  }
  EXPECT_GE(improved, (9 * total + 9) / 10);
}

// ---- curvature ------------------------------------------------------------

TEST(Curvature, ExpitValues) {
  EXPECT_DOUBLE_EQ(expit(0.0), 0.5);
  EXPECT_NEAR(expit(std::log(3.0)), 0.75, 1e-15);
  EXPECT_NEAR(expit(-50.0) / std::exp(-50.0), 1.0, 1e-12);
  EXPECT_EQ(expit(-800.0), 0.0);
  EXPECT_EQ(expit(800.0), 1.0);
  EXPECT_NEAR(log1pexp(-800.0), 0.0, 1e-300);
  EXPECT_NEAR(log1pexp(800.0), 800.0, 1e-12);
}

TEST(Curvature, QuarterWeightsAtZero) {
  const auto ds = ts::random_dataset(5, 7, 2);
  QuasiModes zero{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(7)};
  const auto cs = assemble_curvature(ds, zero);
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_NEAR(cs.d(static_cast<Eigen::Index>(i)), ds.households[i].n() / 4.0, 1e-15);
}

TEST(Curvature, GradientMatchesFiniteDifferences) {
  const auto ds = ts::random_dataset(17, 6, 3);
  const auto cs = assemble_curvature(ds);
  const Eigen::VectorXd tau = tau_of({cs.beta_star, cs.mu_star});
  Eigen::VectorXd g(tau.size());
  g << cs.g1, cs.g2;
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < tau.size(); ++j) {
    Eigen::VectorXd up = tau, dn = tau;
    up(j) += h;
    dn(j) -= h;
    const double fd = (ts::flat_loglik_tau(ds, up) - ts::flat_loglik_tau(ds, dn)) / (2 * h);
    EXPECT_NEAR(g(j), fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Curvature, HessianMatchesFiniteDifferences) {
  const auto ds = ts::random_dataset(18, 6, 3);
  const auto cs = assemble_curvature(ds);
  const Eigen::VectorXd tau = tau_of({cs.beta_star, cs.mu_star});
  const auto l = cs.groups(), k = cs.slopes();
  Eigen::MatrixXd neg(l + k, l + k);
  neg.setZero();
  neg.topLeftCorner(l, l) = cs.d.asDiagonal();
  neg.topRightCorner(l, k) = cs.C;
  neg.bottomLeftCorner(k, l) = cs.C.transpose();
  neg.bottomRightCorner(k, k) = cs.B;
  const double h = 1e-4;
  for (Eigen::Index j = 0; j < tau.size(); ++j) {
    Eigen::VectorXd up = tau, dn = tau;
    up(j) += h;
    dn(j) -= h;
    const Eigen::VectorXd col = -(ts::dense_gradient(ds, up) - ts::dense_gradient(ds, dn)) / (2 * h);
    for (Eigen::Index r = 0; r < tau.size(); ++r) EXPECT_NEAR(neg(r, j), col(r), 1e-6);
  }
  EXPECT_LT((neg - ts::dense_neg_hessian(ds, tau)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Curvature, ImplicitBlocksMatchDenseInverse) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto ds = ts::random_dataset(40 + s, 15, 3);
    const auto cs = assemble_curvature(ds);
    const auto l = cs.groups(), k = cs.slopes();
    const Eigen::VectorXd tau = tau_of({cs.beta_star, cs.mu_star});
    const Eigen::MatrixXd inv = ts::dense_neg_hessian(ds, tau).inverse();
    std::mt19937_64 gen(s);
    std::normal_distribution<double> nd;
    Eigen::VectorXd v(l), u(k);
    for (auto& x : v) x = nd(gen);
    for (auto& x : u) x = nd(gen);
    EXPECT_LT((cs.apply_E(v) - inv.topLeftCorner(l, l) * v).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((cs.apply_F(v) - inv.bottomLeftCorner(k, l) * v).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((cs.apply_Ft(u) - inv.topRightCorner(l, k) * u).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((cs.G - inv.bottomRightCorner(k, k)).cwiseAbs().maxCoeff(), 1e-8);

    Eigen::VectorXd g(l + k);
    g << cs.g1, cs.g2;
    const Eigen::VectorXd step = tau + inv * g;
    EXPECT_LT((cs.mu_mean - step.head(l)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((cs.beta_mean - step.tail(k)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Curvature, SchurPositiveIffHessianPositive) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto ds = ts::random_dataset(300 + s, 5 + s % 7, 1 + s % 4, 2, 6);
    // every fifth instance has a covariate constant within households
    if (s % 5 == 0)
      for (auto& h : ds.households) h.x.col(0).setConstant(h.x(0, 0));
    const auto m = quasi_modes(ds);
    const Eigen::VectorXd tau = tau_of(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ts::dense_neg_hessian(ds, tau));
    const bool dense_pd = eig.eigenvalues().minCoeff() > 1e-10 * eig.eigenvalues().maxCoeff();
    bool schur_pd = true;
    try {
      assemble_curvature(ds, m);
    } catch (const NumericalError&) {
      schur_pd = false;
    }
    EXPECT_EQ(dense_pd, schur_pd) << "seed " << s;
  }
}

TEST(Curvature, ZeroSchurComplementIsRejected) {
  // covariate constant within every household: c_i c_i' / d_i = B
  std::vector<MemberRecord> rec;
  for (int i = 1; i <= 4; ++i)
    for (int j = 0; j < 3; ++j) rec.push_back({1, i, (i + j) % 2, {0.5 * i}});
  const auto ds = from_records(rec, 1);
  EXPECT_THROW(assemble_curvature(ds), NumericalError);
}

TEST(Curvature, LogconcavityReport) {
  const auto ok = ts::random_dataset(9, 5, 2, 8, 12, 0.2);
  std::vector<MemberRecord> rec{{1, 1, 1, {0.2}}, {1, 1, 1, {0.4}}, {1, 2, 0, {-0.1}}, {1, 2, 1, {0.9}}};
  const auto bad = from_records(rec, 1);
  const auto r = logconcavity_check(bad);
  EXPECT_FALSE(r.pass());
  EXPECT_FALSE(r.responses_interior);
  EXPECT_TRUE(r.full_rank);
  ASSERT_EQ(r.violating_groups.size(), 1u);
  EXPECT_EQ(r.violating_groups[0], 1);
  if (logconcavity_check(ok).responses_interior) {
    EXPECT_TRUE(logconcavity_check(ok).pass());
  }
}

TEST(Curvature, ThreadCountDoesNotChangeResult) {
  const auto ds = ts::random_dataset(77, 700, 3);
  const auto a = assemble_curvature(ds, 1);
  const auto b = assemble_curvature(ds, 4);
  EXPECT_EQ(a.S, b.S);
  EXPECT_EQ(a.B, b.B);
  EXPECT_EQ(a.g2, b.g2);
  EXPECT_EQ(a.mu_mean, b.mu_mean);
  EXPECT_EQ(a.beta_mean, b.beta_mean);
}

// ---- eta and beta ---------------------------------------------------------

TEST(InnaSampler, EtaDensityMatchesDenseTranscription) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto ds = ts::random_dataset(500 + s, 8, 2);
    const auto cs = assemble_curvature(ds);
    const Eigen::VectorXd tau = tau_of({cs.beta_star, cs.mu_star});
    const double ref_lib = eta_log_density(0.5, cs);
    const double ref_dense = ts::dense_eta_log_density(ds, tau, 0.5);
    for (double eta : {0.01, 0.1, 0.3, 0.7, 0.95, 0.999}) {
      EXPECT_NEAR(eta_log_density(eta, cs) - ref_lib, ts::dense_eta_log_density(ds, tau, eta) - ref_dense,
                  1e-8)
          << "eta " << eta;
    }
  }
}

TEST(InnaSampler, BetaConditionalMatchesDenseTranscription) {
  const auto ds = ts::random_dataset(600, 10, 3);
  const auto cs = assemble_curvature(ds);
  const Eigen::VectorXd tau = tau_of({cs.beta_star, cs.mu_star});
  for (double eta : {0.05, 0.5, 0.9}) {
    const auto lib = beta_given_delta_params(cs, (1 - eta) / eta);
    const auto dense = ts::dense_eta(ds, tau, eta);
    EXPECT_LT((lib.precision - dense.precision).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((lib.mean - dense.mean).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_THROW(beta_given_delta_params(cs, 0.0), DomainError);
  EXPECT_THROW(eta_log_density(1.0, cs), DomainError);
}

TEST(InnaSampler, LargeDeltaLimit) {
  const auto ds = ts::random_dataset(601, 10, 2);
  const auto cs = assemble_curvature(ds);
  const auto p = beta_given_delta_params(cs, 1e8);
  EXPECT_NEAR(p.mean(0), cs.mu_mean.mean(), 1e-6);
  EXPECT_LT((p.mean.tail(2) - cs.beta_mean).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(InnaSampler, FlatGridIsUniform) {
  const EtaGrid grid(50, [](double) { return -3.0; });
  for (std::size_t c = 0; c < grid.size(); ++c) EXPECT_NEAR(grid.probability(c), 0.02, 1e-12);
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double eta = grid.draw(rng).eta;
    sum += eta;
    sq += eta * eta;
  }
  EXPECT_NEAR(sum / n, 0.5, 4 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(sq / n - std::pow(sum / n, 2), 1.0 / 12, 0.003);
}

TEST(InnaSampler, GridRespectsSupport) {
  const EtaGrid grid(10, [](double e) {
    return (e > 0.2 && e < 0.3) ? 0.0 : -std::numeric_limits<double>::infinity();
  });
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const auto h = grid.draw(rng);
    EXPECT_GT(h.eta, 0.2);
    EXPECT_LT(h.eta, 0.3);
    EXPECT_NEAR(h.delta_sq, (1 - h.eta) / h.eta, 1e-12);
  }
  EXPECT_THROW(EtaGrid(10, [](double) { return -std::numeric_limits<double>::infinity(); }),
               NumericalError);
  EXPECT_THROW(EtaGrid(1, [](double) { return 0.0; }), DomainError);
}

TEST(InnaSampler, GridResolutionTotalVariation) {
  const auto ds = ts::random_dataset(602, 30, 2);
  const auto cs = assemble_curvature(ds);
  const auto coarse = make_eta_grid(cs, 100);
  const auto fine = make_eta_grid(cs, 400);
  double tv = 0.0;
  for (std::size_t c = 0; c < 100; ++c) {
    double f = 0.0;
    for (std::size_t j = 0; j < 4; ++j) f += fine.probability(4 * c + j);
    tv += std::abs(f - coarse.probability(c));
  }
  EXPECT_LT(0.5 * tv, 0.01);
}

TEST(InnaSampler, BetaDrawMoments) {
  BetaParams p;
  p.mean = Eigen::Vector3d(0.5, -1.0, 2.0);
  Eigen::Matrix3d cov;
  cov << 1.0, 0.3, -0.2, 0.3, 0.5, 0.1, -0.2, 0.1, 0.8;
  p.precision = cov.inverse();
  const int n = 50000;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
  Rng rng(8);
  for (int i = 0; i < n; ++i) {
    const auto b = draw_beta(p, rng);
    Eigen::Vector3d v(b.beta0, b.slopes(0), b.slopes(1));
    sum += v;
    outer += v * v.transpose();
  }
  const Eigen::Vector3d mean = sum / n;
  const Eigen::Matrix3d sample_cov = outer / n - mean * mean.transpose();
  EXPECT_LT((mean - p.mean).cwiseAbs().maxCoeff(), 0.02);
  EXPECT_LT((sample_cov - cov).cwiseAbs().maxCoeff(), 0.025);
}

// ---- group intercepts -------------------------------------------------------

TEST(InnaSampler, MuConditionalTranscription) {
  Eigen::VectorXd y(3), off(3);
  y << 1, 0, 1;
  off << 0.2, -0.5, 1.1;
  for (double mu : {-2.0, 0.0, 0.8}) {
    double ref = -(mu - 0.3) * (mu - 0.3) / (2 * 0.7);
    for (int j = 0; j < 3; ++j) {
      const double p = 1.0 / (1.0 + std::exp(-(mu + off(j))));
      ref += y(j) * std::log(p) + (1 - y(j)) * std::log(1 - p);
    }
    EXPECT_NEAR(mu_conditional_logpdf(mu, y, off, 0.3, 0.7), ref, 1e-12);
  }
  const Eigen::VectorXd flipped = (1.0 - y.array()).matrix();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  for (double mu : {-1.5, 0.4, 2.2})
    EXPECT_NEAR(mu_conditional_logpdf(mu, y, zero, 0.0, 1.3),
                mu_conditional_logpdf(-mu, flipped, zero, 0.0, 1.3), 1e-12);
}

TEST(InnaSampler, PerfectProposalFallsBackToGrid) {
  const NormalProposal prop{1.0, 0.25};
  auto target = [](double x) { return -(x - 1.0) * (x - 1.0) / (2 * 0.25); };
  Rng rng(9);
  const auto d = draw_mu_one(target, prop, rng);
  EXPECT_EQ(d.jump_rate, 1.0);
  EXPECT_EQ(d.sampler, MuSampler::grid);
}

TEST(InnaSampler, GridDrawMoments) {
  const NormalProposal prop{1.0, 0.25};
  auto target = [](double x) { return -(x - 1.0) * (x - 1.0) / (2 * 0.25); };
  MuSamplerConfig cfg;
  cfg.steps = 0;  // jump rate 0 forces the grid
  Rng rng(10);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = draw_mu_one(target, prop, rng, cfg).mu;
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 0.01);
  EXPECT_NEAR(var / 0.25, 1.0, 0.01);
}

TEST(InnaSampler, MetropolisKeptInsideWindow) {
  // a proposal twice as wide as the target accepts roughly half the moves
  const NormalProposal prop{0.0, 4.0};
  auto target = [](double x) { return -x * x / 2; };
  int kept = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    const auto d = draw_mu_one(target, prop, rng);
    if (d.sampler == MuSampler::metropolis) {
      ++kept;
      EXPECT_GT(d.jump_rate, 0.25);
      EXPECT_LT(d.jump_rate, 0.5);
    }
  }
  EXPECT_GT(kept, 0);
}

TEST(InnaSampler, SmallDeltaPinsIntercept) {
  const auto ds = ts::random_dataset(603, 4, 1);
  BetaDraw beta{0.4, Eigen::VectorXd::Constant(1, 0.2)};
  const NormalProposal prop{0.4, 1e-8};
  Rng rng(11);
  const auto d = draw_mu_one(ds.households[0], beta, 1e-8, prop, rng);
  EXPECT_NEAR(d.mu, 0.4, 1e-3);
}

TEST(InnaSampler, ZeroDrawsAndThreadDeterminism) {
  const auto ds = ts::random_dataset(604, 40, 2);
  InnaConfig cfg;
  cfg.n_draws = 0;
  EXPECT_TRUE(inna_fit(ds, cfg).empty());
  cfg.n_draws = 30;
  cfg.seed = 5;
  const auto a = inna_fit(ds, cfg);
  cfg.threads = 3;
  const auto b = inna_fit(ds, cfg);
  ASSERT_EQ(a.size(), 30u);
  for (std::size_t d = 0; d < a.size(); ++d) {
    EXPECT_EQ(a[d].hyper.delta_sq, b[d].hyper.delta_sq);
    EXPECT_EQ(a[d].beta.beta0, b[d].beta.beta0);
    EXPECT_EQ(a[d].beta.slopes, b[d].beta.slopes);
    EXPECT_EQ(a[d].mu, b[d].mu);
  }
  cfg.seed = 6;
  EXPECT_NE(inna_fit(ds, cfg)[0].beta.beta0, a[0].beta.beta0);
}
