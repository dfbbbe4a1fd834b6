#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>

#include "qgloc/experiments.hpp"

using namespace qgloc;

namespace {

ExperimentConfig small_wegner() {
  ExperimentConfig c;
  c.dimension = 1;
  c.sizes = {4, 6};
  c.samples = 500;
  c.m = 8;
  c.seed = 17;
  c.energy.center = 0.5;
  c.energy.widths = {0.2, 0.1, 0.05};
  return c;
}

}  // namespace

TEST(Experiments, WorkerCountDoesNotChangeResults) {
  auto c = small_wegner();
  c.workers = 1;
  const auto a = wegner_experiment(c);
  c.workers = 4;
  const auto b = wegner_experiment(c);
  EXPECT_EQ(a.hits, b.hits);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) EXPECT_EQ(a.cells[i].p.successes, b.cells[i].p.successes);
}

TEST(Experiments, StreamsDifferAcrossBoxSizes) {
  ExperimentConfig c;
  const LatticeGraph g4(c.box(4)), g6(c.box(6));
  EXPECT_NE(c.potential(g4, 0).values[0], c.potential(g6, 0).values[0]);
  EXPECT_EQ(c.potential(g4, 3).values, c.potential(g4, 3).values);
}

TEST(Experiments, WegnerBelowSpectrumIsZero) {
  auto c = small_wegner();
  c.energy.center.reset();
  c.energy.intervals = {{-0.5, -0.1}, {-0.3, -0.2}};
  const auto r = wegner_experiment(c);
  for (const auto& cell : r.cells) {
    EXPECT_EQ(cell.p.successes, 0u);
    EXPECT_EQ(cell.p.lo, 0.0);
  }
  EXPECT_TRUE(r.paired_monotone);
}

TEST(Experiments, WegnerNestedIntervalsArePairedMonotone) {
  const auto r = wegner_experiment(small_wegner());
  EXPECT_TRUE(r.paired_monotone);
  for (std::size_t i = 1; i < 3; ++i) EXPECT_LE(r.cells[i].p.successes, r.cells[i - 1].p.successes);
  EXPECT_TRUE(r.bound_holds);
  for (const auto& cell : r.cells) {
    EXPECT_GE(cell.p.estimate, 0.0);
    EXPECT_LE(cell.p.estimate, 1.0);
    EXPECT_LE(cell.p.lo, cell.p.estimate);
    EXPECT_GE(cell.p.hi, cell.p.estimate);
  }
}

TEST(Experiments, WegnerValidation) {
  auto c = small_wegner();
  c.samples = 100;
  EXPECT_THROW(wegner_experiment(c), ConfigError);
  c = small_wegner();
  c.energy.widths = {30.0};
  EXPECT_THROW(wegner_experiment(c), ConfigError);
  c = small_wegner();
  c.sizes = {5};
  EXPECT_THROW(wegner_experiment(c), ConfigError);
}

TEST(Experiments, IlsValidation) {
  ExperimentConfig c;
  c.dimension = 2;
  c.measure = SingleSiteMeasure::power_tail(0, 1, 2);
  c.exponents.xi = 1.0;
  c.exponents.beta = 0.45;
  EXPECT_NO_THROW(validate_ils(c));
  c.exponents.beta = 0.6;  // xi < tau (2 - beta) - d fails
  EXPECT_THROW(validate_ils(c), ConfigError);
  c.exponents.beta = 0.45;
  c.exponents.xi = 2.5;
  EXPECT_THROW(validate_ils(c), ConfigError);
  c.exponents.xi = 1.0;
  c.measure = SingleSiteMeasure::uniform(0, 1);  // tau = 1 = d/2
  EXPECT_THROW(validate_ils(c), ConfigError);
  c.measure = SingleSiteMeasure::power_tail(0, 1, 2);
  c.exponents.beta.reset();
  EXPECT_THROW(validate_ils(c), ConfigError);
}

TEST(Experiments, ConditionedGroundStateBound) {
  ExperimentConfig c;
  c.dimension = 2;
  c.m = 8;
  c.measure = SingleSiteMeasure::uniform(0, 1);
  const auto r = ground_state_check(c, 4, 0.3, 30);
  EXPECT_EQ(r.violations, 0u);
  EXPECT_GE(r.min_margin, -1e-12);
  // 2·4·5 = 40 edges, each above 0.3 with probability 0.7.
  EXPECT_NEAR(r.event_probability, std::pow(0.7, 40), 1e-15);
  const auto r0 = ground_state_check(c, 4, 0.0, 10);
  EXPECT_EQ(r0.violations, 0u);
}

TEST(Experiments, TailEventFrequencyMatchesExactLaw) {
  // Unconditioned samples: frequency of {all ω_e >= q_- + h} against the exact
  // product law, inside a 99.9% binomial interval.
  const LatticeGraph g(LatticeBox{1, {}, 4});
  const auto mu = SingleSiteMeasure::power_tail(0, 1, 2);
  const double h = 0.3;
  const std::size_t n = 4000;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < n; ++s) hits += sample_config(g, mu, 23, s).min() >= h;
  const double exact = std::pow(1.0 - mu.interval_mass(0, h), 4.0);
  const auto p = binomial_interval(hits, n, 0.999);
  EXPECT_LE(p.lo, exact);
  EXPECT_GE(p.hi, exact);
}

TEST(Experiments, IlsHitsAreMonotoneInThreshold) {
  ExperimentConfig c;
  c.dimension = 1;
  c.sizes = {4};
  c.samples = 200;
  c.m = 8;
  c.measure = SingleSiteMeasure::power_tail(0, 1, 2);
  c.exponents.xi = 0.1;
  c.exponents.beta = 1.4;
  const auto wide = ils_experiment(c);
  c.exponents.beta = 1.0;
  const auto narrow = ils_experiment(c);
  // The threshold l^(β-2) shrinks with β, and so do the hits, sample by sample.
  for (std::size_t s = 0; s < c.samples; ++s) EXPECT_LE(narrow.hits[s], wide.hits[s]);
  EXPECT_GT(wide.scales[0].p.successes, 0u);
}

TEST(Experiments, SyntheticProfileFit) {
  const LatticeGraph g(LatticeBox{1, {}, 40});
  std::vector<double> prof(g.num_vertices());
  for (std::size_t v = 0; v < prof.size(); ++v) prof[v] = std::exp(-0.7 * std::abs(g.vertex_position(v)[0] - 3.0));
  ExperimentConfig::Decay opt;
  const auto f = fit_profile(g, prof, opt);
  EXPECT_NEAR(f.gamma, 0.7, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_TRUE(f.localized);
  // The boundary margin drops the 5 vertices nearest each end.
  EXPECT_EQ(f.points, prof.size() - 10);
}

TEST(Experiments, ConstantPotentialGroundStateIsNotLocalized) {
  ExperimentConfig c;
  c.dimension = 1;
  c.sizes = {20};
  c.samples = 1;
  c.m = 8;
  c.constant_potential = 1.0;
  c.energy.epsilon = 1e-3;
  const auto r = eigenfunction_decay_experiment(c);
  ASSERT_EQ(r.fits.size(), 1u);
  EXPECT_NEAR(r.fits[0].energy, 1.0, 1e-10);
  EXPECT_NEAR(r.fits[0].gamma, 0.0, 1e-8);
  EXPECT_FALSE(r.fits[0].localized);
}

TEST(Experiments, DecayValidation) {
  ExperimentConfig c;
  c.dimension = 3;
  EXPECT_THROW(eigenfunction_decay_experiment(c), ConfigError);
  c.dimension = 1;
  c.m = 7;
  EXPECT_THROW(eigenfunction_decay_experiment(c), ConfigError);
}

TEST(Experiments, DynamicalMomentMatchesDenseOracle) {
  const LatticeGraph g(LatticeBox{1, {}, 10});
  const auto op = assemble(g, sample_config(g, SingleSiteMeasure::uniform(0, 4), 4, 0), 8);
  const auto sp = eigen_window(op, -1.0, 3.0);
  ASSERT_GT(sp.size(), 1u);
  const double p = 3.0;
  const auto v = dynamical_moment(op, sp, p, {0.0, 1.0, 7.5});

  Eigen::VectorXd xp(static_cast<Eigen::Index>(op.size()));
  for (std::size_t i = 0; i < op.size(); ++i) xp[static_cast<Eigen::Index>(i)] = std::pow(std::abs(op.dof_positions[i][0]), p);
  const Eigen::MatrixXd U = xp.asDiagonal() * sp.eigenvectors;
  const Eigen::MatrixXd GU = U.transpose() * (Eigen::MatrixXd(op.M) * U);
  const Eigen::MatrixXd GW = sp.eigenvectors.transpose() * (Eigen::MatrixXd(central_cell_mass(op)) * sp.eigenvectors);
  // ‖U W*‖ = ‖R_U R_W^T‖ with G = R^T R.
  const Eigen::MatrixXd RU = Eigen::LLT<Eigen::MatrixXd>(GU).matrixU();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ew(GW);
  const Eigen::MatrixXd RW = ew.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ew.eigenvectors().transpose();
  const double oracle = Eigen::JacobiSVD<Eigen::MatrixXd>(RU * RW.transpose()).singularValues()[0];
  EXPECT_NEAR(v.moment, oracle, 1e-9 * oracle);
  EXPECT_LE(v.sup_t, v.majorant * (1 + 1e-12));
  EXPECT_GE(v.sup_t, v.moment * (1 - 1e-12));  // t = 0 is on the grid
}

TEST(Experiments, ZeroMomentIsTimeInvariantAndContractive) {
  const LatticeGraph g(LatticeBox{1, {}, 10});
  const auto op = assemble(g, sample_config(g, SingleSiteMeasure::uniform(0, 4), 4, 1), 8);
  const auto sp = eigen_window(op, -1.0, 3.0);
  const auto v = dynamical_moment(op, sp, 0.0, {0.5, 2.0, 50.0});
  EXPECT_LE(v.moment, 1.0 + 1e-12);
  EXPECT_NEAR(v.sup_t, v.moment, 1e-10);
}

TEST(Experiments, DynlocBelowSpectrumHasNoStates) {
  ExperimentConfig c;
  c.dimension = 1;
  c.sizes = {10, 12};
  c.samples = 3;
  c.m = 8;
  c.measure = SingleSiteMeasure::uniform(1.0, 2.0);
  c.exponents.p = 0.0;
  c.energy.intervals = {{0.0, 0.5}};
  const auto r = dynamical_moment_experiment(c);
  for (const auto& s : r.sizes) {
    EXPECT_EQ(s.used, 0u);
    EXPECT_EQ(s.skipped, 3u);
  }
  EXPECT_FALSE(r.trend_non_increasing);  // no data, no claim
  c.exponents.p = 1.0;  // below 2(2τ - d) = 2
  EXPECT_THROW(dynamical_moment_experiment(c), ConfigError);
}

TEST(Experiments, MsaFarBelowSpectrumIsAllGood) {
  ExperimentConfig c;
  c.dimension = 1;
  c.sizes = {18, 24};
  c.override_suitable = true;
  c.samples = 20;
  c.m = 8;
  c.exponents.gamma = 0.0;
  c.energy.grid = {-5.0};
  const auto r = msa_flow_experiment(c);
  for (const auto& cell : r.cells) {
    EXPECT_EQ(cell.bad.successes, 0u);
    EXPECT_EQ(cell.resonant, 0u);
  }
  EXPECT_FALSE(r.decreasing[0].second);  // 0 -> 0 is not a strict decrease
}

TEST(Experiments, MsaScalesAndValidation) {
  ExperimentConfig c;
  c.dimension = 1;
  c.sizes = {18};
  c.msa.levels = 2;
  c.exponents.alpha_msa = 1.2;
  c.override_suitable = true;
  const auto s = msa_scales(c);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[1], 36);  // 18^1.2 = 32.2, next multiple of 6
  c.override_suitable = false;
  EXPECT_THROW(validate_msa(c), ConfigError);
  c.sizes = {20};
  c.override_suitable = true;
  EXPECT_THROW(validate_msa(c), ConfigError);
}

TEST(Experiments, UltraShiftIsExact) {
  ExperimentConfig c;
  c.dimension = 1;
  c.sizes = {8};
  c.m = 8;
  c.constant_potential = 0.0;
  const auto r = ultracontractivity_experiment(c);
  ASSERT_EQ(r.rows.size(), 10u);
  EXPECT_NEAR(r.rows.front().t, 0.01, 1e-15);
  EXPECT_NEAR(r.rows.back().t, 1.0, 1e-15);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(std::isfinite(row.product));
    EXPECT_LT(row.shift_error, 1e-12);
  }
  EXPECT_TRUE(r.all_certified);
  EXPECT_GE(r.variation, 1.0);
  c.constant_potential = 1.0;
  EXPECT_THROW(ultracontractivity_experiment(c), ConfigError);
}

TEST(Experiments, CombesThomasSummary) {
  ExperimentConfig c;
  c.dimension = 1;
  c.sizes = {40};
  c.m = 16;
  c.constant_potential = 4.0;
  c.combes_thomas.b_edge = -10;
  c.combes_thomas.deltas = {2, 4, 6, 8};
  c.combes_thomas.windows = {{0.0, 4.0, 2.0}, {2.0, 4.0, 3.0}};
  c.combes_thomas.prefactor_delta = 4;
  c.combes_thomas.prefactor_windows = {{1.0, 3.0, 2.0}, {0.0, 4.0, 2.0}};
  const auto r = combes_thomas_run(c);
  EXPECT_TRUE(r.all_fits_good);
  EXPECT_TRUE(r.rate_monotone);
  // Continuum rate sqrt(ω - E).
  EXPECT_NEAR(r.windows[0].fit.gamma_fit, std::sqrt(2.0), 2e-2);
  EXPECT_NEAR(r.windows[1].fit.gamma_fit, 1.0, 2e-2);
  // Same E, so the norm is the same and norm·η scales with η.
  EXPECT_NEAR(r.prefactor_variation, 2.0, 1e-9);
  c.combes_thomas.windows = {{0.0, 5.0, 2.0}};  // contains the ground state 4
  EXPECT_THROW(combes_thomas_run(c), PreconditionError);
}

TEST(Experiments, GriSmallRun) {
  ExperimentConfig c;
  c.dimension = 1;
  c.samples = 4;
  c.m = 8;
  c.override_suitable = true;
  c.measure = SingleSiteMeasure::uniform(0, 4);
  c.energy.value = 0.05;
  c.gri.geometries = {{18, 30}};
  c.gri.identity_trials = 4;
  const auto r = gri_experiment(c);
  ASSERT_EQ(r.geometries.size(), 1u);
  const auto& g = r.geometries[0];
  EXPECT_LT(g.identity.max_residual, 1e-10);
  EXPECT_EQ(g.trials.size(), 4u);
  for (const auto& t : g.trials) {
    EXPECT_TRUE(std::isfinite(t.ratio));
    EXPECT_GT(t.ratio, 0.0);
  }
  EXPECT_GE(g.max_over_median, 1.0);
  EXPECT_GT(g.caccioppoli_max, 0.0);
  c.override_suitable = false;
  EXPECT_THROW(gri_experiment(c), PreconditionError);
}

TEST(Experiments, SelftestPasses) {
  for (const auto& c : selftest()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}
