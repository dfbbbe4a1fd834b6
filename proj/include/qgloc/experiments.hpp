#pragma once

// Monte Carlo and deterministic drivers. Every per-sample task is a pure
// function of (config, sample index); reductions run in index order.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "qgloc/errors.hpp"
#include "qgloc/format.hpp"
#include "qgloc/lattice_graph.hpp"
#include "qgloc/operator_assembly.hpp"
#include "qgloc/parallel.hpp"
#include "qgloc/randomness.hpp"
#include "qgloc/resolvent_probe.hpp"
#include "qgloc/spectral_engine.hpp"
#include "qgloc/statistics.hpp"

namespace qgloc {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

struct WindowSpec {
  double r = 0.0;
  double s = 0.0;
  double E = 0.0;
};

struct ExperimentConfig {
  int dimension = 1;
  std::vector<int> sizes{8};
  SingleSiteMeasure measure = SingleSiteMeasure::uniform(0.0, 1.0);
  /// ω ≡ constant instead of random couplings.
  std::optional<double> constant_potential;
  std::size_t samples = 100;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  bool override_suitable = false;
  int m = 32;
  std::size_t dense_threshold = 2000;
  double eigen_tol = 1e-8;

  struct Energy {
    double R = 10.0;
    std::vector<Interval> intervals;
    std::optional<double> center;
    std::vector<double> widths;
    std::optional<double> epsilon;
    std::vector<double> grid;
    std::optional<double> value;
    std::optional<Interval> window;
  } energy;

  struct Exponents {
    std::optional<double> xi;
    std::optional<double> beta;
    std::optional<double> p;
    double alpha_msa = 1.5;
    double gamma = 0.05;
  } exponents;

  struct Ils {
    double h = 0.0;
    std::size_t conditioned_samples = 0;
    int check_size = 4;
  } ils;

  struct CombesThomas {
    std::vector<WindowSpec> windows;
    std::vector<double> deltas{5, 10, 15, 20, 25};
    int b_edge = -14;
    double prefactor_delta = 10;
    std::vector<WindowSpec> prefactor_windows;
  } combes_thomas;

  struct Gri {
    std::vector<std::pair<int, int>> geometries;
    std::size_t identity_trials = 20;
  } gri;

  struct Decay {
    double floor = 1e-10;
    double boundary_margin = 5.0;
    std::size_t min_points = 4;
    double gamma_min = 0.05;
    double r2_min = 0.9;
  } decay;

  struct Dynloc {
    std::vector<double> t_grid{0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0};
  } dynloc;

  struct Msa {
    std::size_t levels = 3;
  } msa;

  struct Ultra {
    std::vector<double> t_grid;
    double shift = 0.5;
  } ultra;

  struct Spectrum {
    std::size_t count = 10;
  } spectrum;

  double epsilon() const { return energy.epsilon.value_or(0.5 * measure.width()); }

  EigenOptions eigen_options() const {
    EigenOptions o;
    o.dense_threshold = dense_threshold;
    return o;
  }

  LatticeBox box(int side) const { return LatticeBox{dimension, {}, side}; }

  /// Independent stream per box size: the same sample index on two sizes
  /// must not reuse the same uniforms.
  std::uint64_t stream_seed(int side) const {
    return detail::splitmix64(seed ^ (static_cast<std::uint64_t>(side) * 0x9e3779b97f4a7c15ULL));
  }

  PotentialConfig potential(const LatticeGraph& g, std::size_t sample) const {
    if (constant_potential) return constant_config(g, *constant_potential);
    return sample_config(g, measure, stream_seed(g.box().side), sample);
  }

  /// Checks shared by every experiment; throws ConfigError.
  void validate_common() const {
    if (dimension < 1 || dimension > kMaxDimension) throw ConfigError("dimension must be 1, 2 or 3");
    if (sizes.empty()) throw ConfigError("sizes must not be empty");
    for (int L : sizes) {
      if (L < 2 || L % 2 != 0) throw ConfigError("box sizes must be even and >= 2, got " + std::to_string(L));
    }
    if (m < 2) throw ConfigError("m must be >= 2");
    if (!(eigen_tol > 0.0)) throw ConfigError("eigen_tol must be positive");
    try {
      measure.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    if (constant_potential && !(*constant_potential >= 0.0)) throw ConfigError("potential.constant must be >= 0");
  }
};

/// FEM eigenvalues overshoot by about (λ - q_-)² h² / 12; the guard band is
/// twice that.
inline double fem_guard(double lambda, double q_minus, int m) {
  const double k = std::max(lambda - q_minus, 0.0);
  return 2.0 * k * k / (12.0 * m * m);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

// ---------------------------------------------------------------------------
// Wegner

struct WegnerCell {
  int side = 0;
  Interval interval;
  Proportion p;
};

struct WegnerResult {
  std::vector<WegnerCell> cells;
  /// log P̂ against log |I| for each size.
  std::vector<std::pair<int, LineFit>> interval_fits;
  /// log P̂ against log |Λ| for each interval width (needs two or more sizes).
  std::vector<std::pair<double, LineFit>> volume_fits;
  /// max over cells of P̂ / (|Λ|² |I|^α)
  double c_fit = 0.0;
  bool bound_holds = true;
  bool paired_monotone = true;
  std::size_t undersampled_cells = 0;
  /// Flattened per-sample hit flags: hits[(size_index * samples + s) * intervals + k].
  std::vector<std::uint8_t> hits;
  std::vector<Interval> intervals;
};

inline std::vector<Interval> wegner_intervals(const ExperimentConfig& cfg) {
  std::vector<Interval> out = cfg.energy.intervals;
  if (cfg.energy.center) {
    for (double w : cfg.energy.widths) out.push_back({*cfg.energy.center - w / 2, *cfg.energy.center + w / 2});
  }
  return out;
}

inline void validate_wegner(const ExperimentConfig& cfg) {
  cfg.validate_common();
  const auto iv = wegner_intervals(cfg);
  require(!iv.empty(), "wegner: needs energy.intervals or energy.center with energy.widths");
  for (const auto& I : iv) {
    require(I.hi > I.lo, "wegner: empty interval");
    require(I.lo > -cfg.energy.R && I.hi < cfg.energy.R, "wegner: interval outside (-R, R)");
  }
  require(cfg.samples >= 500, "wegner: needs samples >= 500");
}

inline WegnerResult wegner_experiment(const ExperimentConfig& cfg) {
  validate_wegner(cfg);
  WegnerResult res;
  res.intervals = wegner_intervals(cfg);
  const std::size_t ni = res.intervals.size();
  const double qm = cfg.measure.q_minus;
  for (int L : cfg.sizes) {
    const LatticeGraph g(cfg.box(L));
    auto rows = parallel_map(cfg.samples, cfg.workers, [&](std::size_t s) {
      const auto op = assemble(g, cfg.potential(g, s), cfg.m);
      std::vector<std::uint8_t> hit(ni, 0);
      for (std::size_t k = 0; k < ni; ++k) {
        const Interval& I = res.intervals[k];
        const double guard = fem_guard(I.hi, qm, cfg.m);
        // Closed interval with guard; borderline eigenvalues count as hits.
        hit[k] = count_in(op, I.lo - guard, I.hi + guard) > 0 ? 1 : 0;
      }
      return hit;
    });
    for (std::size_t k = 0; k < ni; ++k) {
      std::size_t hits = 0;
      for (const auto& r : rows) hits += r[k];
      res.cells.push_back({L, res.intervals[k], binomial_interval(hits, cfg.samples)});
    }
    for (const auto& r : rows) {
      res.hits.insert(res.hits.end(), r.begin(), r.end());
      for (std::size_t a = 0; a < ni; ++a) {
        for (std::size_t b = 0; b < ni; ++b) {
          const Interval &A = res.intervals[a], &B = res.intervals[b];
          if (A.lo <= B.lo && B.hi <= A.hi && r[b] > r[a]) res.paired_monotone = false;
        }
      }
    }
  }
  const double alpha = cfg.measure.holder_alpha();
  for (const auto& c : res.cells) {
    if (c.p.successes < 5) ++res.undersampled_cells;
    const double vol = cfg.box(c.side).volume();
    res.c_fit = std::max(res.c_fit, c.p.estimate / (vol * vol * std::pow(c.interval.width(), alpha)));
  }
  for (const auto& c : res.cells) {
    const double vol = cfg.box(c.side).volume();
    if (c.p.estimate > res.c_fit * vol * vol * std::pow(c.interval.width(), alpha) * (1 + 1e-12)) {
      res.bound_holds = false;
    }
  }
  for (int L : cfg.sizes) {
    std::vector<double> x, y;
    for (const auto& c : res.cells) {
      if (c.side == L && c.p.estimate > 0) {
        x.push_back(std::log(c.interval.width()));
        y.push_back(std::log(c.p.estimate));
      }
    }
    if (x.size() >= 2) res.interval_fits.emplace_back(L, fit_line(x, y));
  }
  if (cfg.sizes.size() >= 2) {
    std::vector<double> widths;
    for (const auto& I : res.intervals) widths.push_back(I.width());
    std::sort(widths.begin(), widths.end());
    widths.erase(std::unique(widths.begin(), widths.end()), widths.end());
    for (double w : widths) {
      std::vector<double> x, y;
      for (const auto& c : res.cells) {
        if (c.interval.width() == w && c.p.estimate > 0) {
          x.push_back(std::log(cfg.box(c.side).volume()));
          y.push_back(std::log(c.p.estimate));
        }
      }
      if (x.size() >= 2) res.volume_fits.emplace_back(w, fit_line(x, y));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Initial length scale

struct IlsScale {
  int side = 0;
  double threshold = 0.0;
  Proportion p;
  double bound_xi = 0.0;
  double bound_proof = 0.0;
  bool within_proof_bound = false;
};

struct GroundStateCheck {
  int side = 0;
  double h = 0.0;
  std::size_t samples = 0;
  std::size_t violations = 0;
  /// min over samples of E_0 - (q_- + h)
  double min_margin = 0.0;
  /// Exact law of the conditioning event for reference:
  /// P{all ω_e >= q_- + h} = (1 - μ([q_-, q_- + h]))^{#E}.
  double event_probability = 0.0;
};

struct IlsResult {
  std::vector<IlsScale> scales;
  bool strictly_decreasing = false;
  bool all_within_proof_bound = false;
  bool all_within_xi_bound = false;
  std::optional<GroundStateCheck> proof_step;
  std::vector<std::uint8_t> hits;
};

inline void validate_ils(const ExperimentConfig& cfg) {
  cfg.validate_common();
  const double tau = cfg.measure.tail_exponent();
  const double d = cfg.dimension;
  require(cfg.exponents.xi.has_value(), "ils: exponents.xi is required");
  require(cfg.exponents.beta.has_value(), "ils: exponents.beta is required");
  const double xi = *cfg.exponents.xi, beta = *cfg.exponents.beta;
  require(tau > d / 2, "ils: tail exponent tau must exceed d/2");
  require(xi > 0 && xi < 2 * tau - d, "ils: xi must lie in (0, 2 tau - d) = (0, " + round_trip(2 * tau - d) + ")");
  require(beta > 0 && beta < 2, "ils: beta must lie in (0, 2)");
  require(xi < tau * (2 - beta) - d,
          "ils: need xi < tau (2 - beta) - d; beta < " + round_trip(2 - (xi + d) / tau) + " for these values");
  require(cfg.ils.h >= 0, "ils: h must be >= 0");
}

inline GroundStateCheck ground_state_check(const ExperimentConfig& cfg, int side, double h,
                                           std::size_t samples) {
  const LatticeGraph g(cfg.box(side));
  const double qm = cfg.measure.q_minus;
  const double floor = qm + h;
  auto e0 = parallel_map(samples, cfg.workers, [&](std::size_t s) {
    const auto omega = sample_config_conditioned(g, cfg.measure, floor, cfg.stream_seed(side) ^ 0xc0dULL, s);
    return eigen_low(assemble(g, omega, cfg.m), 1, cfg.eigen_tol, cfg.eigen_options()).eigenvalues[0];
  });
  GroundStateCheck c;
  c.side = side;
  c.h = h;
  c.samples = samples;
  c.min_margin = std::numeric_limits<double>::infinity();
  for (double e : e0) {
    // Exact up to rounding of the generalized eigensolver.
    if (e < floor - 1e-12 * std::max(1.0, std::abs(floor))) ++c.violations;
    c.min_margin = std::min(c.min_margin, e - floor);
  }
  c.event_probability = std::pow(1.0 - cfg.measure.interval_mass(qm, floor), static_cast<double>(g.num_edges()));
  return c;
}

inline IlsResult ils_experiment(const ExperimentConfig& cfg) {
  validate_ils(cfg);
  const double tau = cfg.measure.tail_exponent();
  const double xi = *cfg.exponents.xi, beta = *cfg.exponents.beta;
  const double qm = cfg.measure.q_minus;
  IlsResult res;
  for (int L : cfg.sizes) {
    const LatticeGraph g(cfg.box(L));
    const double thr = std::pow(static_cast<double>(L), beta - 2.0);
    auto hit = parallel_map(cfg.samples, cfg.workers, [&](std::size_t s) {
      const auto op = assemble(g, cfg.potential(g, s), cfg.m);
      // E_0 <= q_- + thr, with the FEM guard band counted as a hit.
      return static_cast<std::uint8_t>(count_below(op, qm + thr + fem_guard(qm + thr, qm, cfg.m)) > 0);
    });
    std::size_t k = 0;
    for (auto v : hit) k += v;
    IlsScale sc;
    sc.side = L;
    sc.threshold = thr;
    sc.p = binomial_interval(k, cfg.samples);
    sc.bound_xi = std::pow(static_cast<double>(L), -xi);
    sc.bound_proof = cfg.dimension * cfg.box(L).volume() * std::pow(thr, tau);
    sc.within_proof_bound = sc.p.lo <= sc.bound_proof;
    res.scales.push_back(sc);
    res.hits.insert(res.hits.end(), hit.begin(), hit.end());
  }
  res.strictly_decreasing = res.scales.size() >= 2;
  res.all_within_proof_bound = true;
  res.all_within_xi_bound = true;
  for (std::size_t i = 0; i < res.scales.size(); ++i) {
    if (i > 0 && !(res.scales[i].p.estimate < res.scales[i - 1].p.estimate)) res.strictly_decreasing = false;
    if (!res.scales[i].within_proof_bound) res.all_within_proof_bound = false;
    if (res.scales[i].p.lo > res.scales[i].bound_xi) res.all_within_xi_bound = false;
  }
  if (cfg.ils.conditioned_samples > 0) {
    res.proof_step = ground_state_check(cfg, cfg.ils.check_size, cfg.ils.h, cfg.ils.conditioned_samples);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Eigenfunction decay

struct ProfileFit {
  int side = 0;
  std::size_t sample = 0;
  double energy = 0.0;
  std::size_t center = 0;
  double gamma = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
  bool valid = false;
  bool localized = false;
};

/// Fits log ‖χ_{Λ_1(x)} u‖ against |x - center| over cells above floor·max
/// that keep `margin` away from the box boundary.
inline ProfileFit fit_profile(const LatticeGraph& g, const std::vector<double>& profile,
                              const ExperimentConfig::Decay& opt) {
  ProfileFit f;
  const auto it = std::max_element(profile.begin(), profile.end());
  f.center = static_cast<std::size_t>(it - profile.begin());
  const double peak = *it;
  const Eigen::Vector3d c = g.vertex_position(f.center);
  const LatticeBox& box = g.box();
  std::vector<double> x, y;
  for (std::size_t v = 0; v < profile.size(); ++v) {
    if (!(profile[v] > opt.floor * peak)) continue;
    const Eigen::Vector3d p = g.vertex_position(v);
    double edge_gap = std::numeric_limits<double>::infinity();
    for (int k = 0; k < box.dimension; ++k) {
      edge_gap = std::min({edge_gap, p[k] - box.lower(k), box.upper(k) - p[k]});
    }
    if (edge_gap < opt.boundary_margin) continue;
    x.push_back((p - c).norm());
    y.push_back(std::log(profile[v]));
  }
  f.points = x.size();
  if (x.size() >= opt.min_points) {
    const auto line = fit_line(x, y);
    f.gamma = -line.slope;
    f.r2 = line.r2;
    f.valid = std::isfinite(f.gamma) && std::isfinite(f.r2);
  }
  f.localized = f.valid && f.gamma > opt.gamma_min && f.r2 >= opt.r2_min;
  return f;
}

struct DecaySize {
  int side = 0;
  std::size_t fits = 0;
  std::size_t localized = 0;
  std::size_t skipped_samples = 0;
  double median_gamma = 0.0;
  double fraction_localized = 0.0;
};

struct DecayResult {
  Interval window;
  std::vector<ProfileFit> fits;
  std::vector<DecaySize> sizes;
  /// median γ of the last size over the first.
  double median_ratio = 1.0;
};

inline void validate_decay(const ExperimentConfig& cfg) {
  cfg.validate_common();
  require(cfg.dimension <= 2, "decay: desk scale is d = 1 or 2");
  require(cfg.m % 2 == 0, "decay: needs even m for cell profiles");
}

inline DecayResult eigenfunction_decay_experiment(const ExperimentConfig& cfg) {
  validate_decay(cfg);
  DecayResult res;
  const double qm = cfg.constant_potential.value_or(cfg.measure.q_minus);
  res.window = {qm, qm + cfg.epsilon()};
  for (int L : cfg.sizes) {
    const LatticeGraph g(cfg.box(L));
    auto per = parallel_map(cfg.samples, cfg.workers, [&](std::size_t s) {
      const auto op = assemble(g, cfg.potential(g, s), cfg.m);
      const auto sp = eigen_window(op, res.window.lo - 1e-9, res.window.hi, cfg.eigen_tol, cfg.eigen_options());
      std::vector<ProfileFit> out;
      for (Eigen::Index j = 0; j < sp.eigenvalues.size(); ++j) {
        const Eigen::VectorXd u = sp.eigenvectors.col(j);
        ProfileFit f = fit_profile(g, cell_profile(op, g, u), cfg.decay);
        f.side = L;
        f.sample = s;
        f.energy = sp.eigenvalues[j];
        out.push_back(f);
      }
      return out;
    });
    DecaySize ds;
    ds.side = L;
    std::vector<double> gammas;
    for (const auto& v : per) {
      if (v.empty()) ++ds.skipped_samples;
      for (const auto& f : v) {
        res.fits.push_back(f);
        ++ds.fits;
        if (f.localized) ++ds.localized;
        if (f.valid) gammas.push_back(f.gamma);
      }
    }
    ds.median_gamma = gammas.empty() ? 0.0 : median(gammas);
    ds.fraction_localized = ds.fits ? static_cast<double>(ds.localized) / static_cast<double>(ds.fits) : 0.0;
    res.sizes.push_back(ds);
  }
  if (res.sizes.size() >= 2 && res.sizes.front().median_gamma != 0.0) {
    res.median_ratio = res.sizes.back().median_gamma / res.sizes.front().median_gamma;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Dynamical moments

struct MomentValue {
  std::size_t states = 0;
  /// ‖|X|^p P_I χ_K‖
  double moment = 0.0;
  /// max over the t grid of ‖|X|^p e^{-itH} P_I χ_K‖
  double sup_t = 0.0;
  /// Σ_n ‖|X|^p φ_n‖ ‖χ_K φ_n‖, a t-uniform majorant.
  double majorant = 0.0;
};

/// Gram matrix of the hat functions restricted to the unit cell around the
/// box center (elements whose midpoint lies in it).
inline SparseMatrix central_cell_mass(const DiscreteOperator& op) {
  const double h = op.h();
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t e = 0; e < op.num_edges; ++e) {
    for (int j = 0; j < op.m; ++j) {
      const std::size_t a = op.node(e, j), b = op.node(e, j + 1);
      const Eigen::Vector3d mid = 0.5 * (op.dof_positions[a] + op.dof_positions[b]);
      bool inside = true;
      for (int k = 0; k < op.box.dimension; ++k) inside = inside && std::abs(mid[k] - op.box.center[k]) < 0.5;
      if (!inside) continue;
      t.emplace_back(a, a, h / 3.0);
      t.emplace_back(b, b, h / 3.0);
      t.emplace_back(a, b, h / 6.0);
      t.emplace_back(b, a, h / 6.0);
    }
  }
  const auto n = static_cast<Eigen::Index>(op.size());
  SparseMatrix M(n, n);
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

/// For T = U W*, U = [|X|^p φ_n], W = [χ_K φ_n]: ‖T‖² = λ_max(G_U G_W).
/// Time evolution multiplies column n of U by e^{-itλ_n}.
inline MomentValue dynamical_moment(const DiscreteOperator& op, const SpectralResult& sp, double p,
                                    const std::vector<double>& t_grid) {
  MomentValue v;
  v.states = sp.size();
  if (v.states == 0) return v;
  Eigen::VectorXd xp(static_cast<Eigen::Index>(op.size()));
  for (std::size_t i = 0; i < op.size(); ++i) {
    Eigen::Vector3d d = op.dof_positions[i];
    for (int k = 0; k < op.box.dimension; ++k) d[k] -= op.box.center[k];
    xp[static_cast<Eigen::Index>(i)] = p == 0.0 ? 1.0 : std::pow(d.norm(), p);
  }
  const Eigen::MatrixXd U = xp.asDiagonal() * sp.eigenvectors;
  const Eigen::MatrixXd GU = U.transpose() * (op.M * U);
  const SparseMatrix MK = central_cell_mass(op);
  const Eigen::MatrixXd GW = sp.eigenvectors.transpose() * (MK * sp.eigenvectors);
  auto top = [](const Eigen::MatrixXcd& A, const Eigen::MatrixXd& B) {
    // λ_max(A B) for Hermitian PSD A, B through B^{1/2} A B^{1/2}.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eb(B);
    const Eigen::MatrixXd Bh = eb.eigenvectors() * eb.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                               eb.eigenvectors().transpose();
    const Eigen::MatrixXcd S = Bh.cast<std::complex<double>>() * A * Bh.cast<std::complex<double>>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(0.5 * (S + S.adjoint()));
    return std::sqrt(std::max(es.eigenvalues().maxCoeff(), 0.0));
  };
  v.moment = top(GU.cast<std::complex<double>>(), GW);
  for (double t : t_grid) {
    Eigen::VectorXcd phase(static_cast<Eigen::Index>(v.states));
    for (Eigen::Index n = 0; n < phase.size(); ++n) phase[n] = std::polar(1.0, -t * sp.eigenvalues[n]);
    const Eigen::MatrixXcd GUt = phase.conjugate().asDiagonal() * GU.cast<std::complex<double>>() * phase.asDiagonal();
    v.sup_t = std::max(v.sup_t, top(GUt, GW));
  }
  for (Eigen::Index n = 0; n < GU.rows(); ++n) {
    v.majorant += std::sqrt(std::max(GU(n, n), 0.0) * std::max(GW(n, n), 0.0));
  }
  return v;
}

struct DynlocSize {
  int side = 0;
  std::size_t used = 0;
  std::size_t skipped = 0;
  double mean_moment = 0.0;
  double mean_sup_t = 0.0;
};

struct DynlocResult {
  Interval window;
  double p = 0.0;
  std::vector<DynlocSize> sizes;
  /// Per-sample moments regressed on L.
  LineFit trend;
  bool trend_non_increasing = false;
  /// sup_t never exceeds the t-uniform majorant.
  bool sup_within_majorant = true;
  std::vector<std::pair<int, MomentValue>> records;
};

inline Interval dynloc_window(const ExperimentConfig& cfg) {
  if (!cfg.energy.intervals.empty()) return cfg.energy.intervals.front();
  return {cfg.measure.q_minus, cfg.measure.q_minus + cfg.epsilon()};
}

inline void validate_dynloc(const ExperimentConfig& cfg) {
  cfg.validate_common();
  require(cfg.exponents.p.has_value(), "dynloc: exponents.p is required");
  const double tau = cfg.measure.tail_exponent();
  const double p = *cfg.exponents.p;
  require(p >= 0, "dynloc: p must be >= 0");
  require(p == 0 || p > 2 * (2 * tau - cfg.dimension),
          "dynloc: need p > 2(2 tau - d) = " + round_trip(2 * (2 * tau - cfg.dimension)));
  const Interval I = dynloc_window(cfg);
  require(I.hi > I.lo, "dynloc: empty energy interval");
  require(I.hi <= cfg.measure.q_minus + cfg.epsilon() + 1e-12, "dynloc: interval must lie in [q_-, q_- + epsilon]");
}

inline DynlocResult dynamical_moment_experiment(const ExperimentConfig& cfg) {
  validate_dynloc(cfg);
  DynlocResult res;
  res.window = dynloc_window(cfg);
  res.p = *cfg.exponents.p;
  std::vector<double> xs, ys;
  for (int L : cfg.sizes) {
    const LatticeGraph g(cfg.box(L));
    auto vals = parallel_map(cfg.samples, cfg.workers, [&](std::size_t s) {
      const auto op = assemble(g, cfg.potential(g, s), cfg.m);
      const double lo = std::max(res.window.lo, cfg.measure.q_minus - 1.0);
      if (res.window.hi <= cfg.measure.q_minus) return MomentValue{};
      const auto sp = eigen_window(op, lo, res.window.hi, cfg.eigen_tol, cfg.eigen_options());
      return dynamical_moment(op, sp, res.p, cfg.dynloc.t_grid);
    });
    DynlocSize ds;
    ds.side = L;
    for (const auto& v : vals) {
      res.records.emplace_back(L, v);
      if (v.states == 0) {
        ++ds.skipped;
        continue;
      }
      ++ds.used;
      ds.mean_moment += v.moment;
      ds.mean_sup_t += v.sup_t;
      xs.push_back(L);
      ys.push_back(v.moment);
      if (v.sup_t > v.majorant * (1 + 1e-9)) res.sup_within_majorant = false;
    }
    if (ds.used) {
      ds.mean_moment /= static_cast<double>(ds.used);
      ds.mean_sup_t /= static_cast<double>(ds.used);
    }
    res.sizes.push_back(ds);
  }
  if (xs.size() >= 3 && cfg.sizes.size() >= 2) {
    res.trend = fit_line(xs, ys);
    res.trend_non_increasing = res.trend.slope_lo <= 0.0;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Multiscale flow

inline int next_override_suitable(double x) {
  int L = std::max(18, static_cast<int>(std::ceil(x - 1e-9)));
  while (!is_override_suitable(L)) ++L;
  return L;
}

inline std::vector<int> msa_scales(const ExperimentConfig& cfg) {
  if (cfg.sizes.size() > 1) return cfg.sizes;
  std::vector<int> s{cfg.sizes.front()};
  while (s.size() < cfg.msa.levels) {
    s.push_back(next_override_suitable(std::pow(static_cast<double>(s.back()), cfg.exponents.alpha_msa)));
  }
  return s;
}

inline std::vector<double> msa_energies(const ExperimentConfig& cfg) {
  if (!cfg.energy.grid.empty()) return cfg.energy.grid;
  const double qm = cfg.measure.q_minus, eps = cfg.epsilon();
  return {qm + 0.25 * eps, qm + 0.5 * eps, qm + 0.75 * eps};
}

struct MsaCell {
  int side = 0;
  double energy = 0.0;
  std::size_t resonant = 0;
  Proportion bad;
};

struct MsaResult {
  std::vector<int> scales;
  std::vector<double> energies;
  double gamma = 0.0;
  std::vector<MsaCell> cells;
  /// per energy: P̂(bad) non-increasing and strictly lower at the last scale
  std::vector<std::pair<double, bool>> decreasing;
  std::vector<std::uint8_t> bad_flags;
};

inline void validate_msa(const ExperimentConfig& cfg) {
  cfg.validate_common();
  require(cfg.exponents.alpha_msa > 1.0, "msa: alpha_msa must exceed 1");
  require(cfg.exponents.gamma >= 0.0, "msa: gamma must be >= 0");
  require(cfg.msa.levels >= 1 && cfg.msa.levels <= 3, "msa: at most 3 desk-scale levels");
  const auto scales = msa_scales(cfg);
  require(scales.size() <= 3, "msa: at most 3 desk-scale levels");
  for (int L : scales) {
    require(is_suitable(cfg.box(L), true), "msa: scale " + std::to_string(L) + " is not override-suitable");
    require(cfg.override_suitable || is_suitable(L),
            "msa: scale " + std::to_string(L) + " is not suitable (pass --override-suitable)");
  }
}

inline MsaResult msa_flow_experiment(const ExperimentConfig& cfg) {
  validate_msa(cfg);
  MsaResult res;
  res.scales = msa_scales(cfg);
  res.energies = msa_energies(cfg);
  res.gamma = cfg.exponents.gamma;
  for (int L : res.scales) {
    const LatticeGraph g(cfg.box(L));
    const EdgeSet in = region_mask(g, GraphRegion::interior());
    const EdgeSet out = region_mask(g, GraphRegion::collar());
    // Per sample, per energy: 0 good, 1 bad, 2 resonant (E in the spectrum).
    auto flags = parallel_map(cfg.samples, cfg.workers, [&](std::size_t s) {
      const auto op = assemble(g, cfg.potential(g, s), cfg.m);
      std::vector<std::uint8_t> f;
      for (double E : res.energies) {
        if (near_spectrum(op, E)) {
          f.push_back(2);
          continue;
        }
        const ResolventSolver solver(op, E);
        const double n = block_norm(op, solver, out, in).value;
        f.push_back(n <= std::exp(-res.gamma * L) ? 0 : 1);
      }
      return f;
    });
    for (std::size_t k = 0; k < res.energies.size(); ++k) {
      std::size_t bad = 0, resonant = 0;
      for (const auto& f : flags) {
        bad += f[k] != 0;
        resonant += f[k] == 2;
        res.bad_flags.push_back(f[k]);
      }
      res.cells.push_back({L, res.energies[k], resonant, binomial_interval(bad, cfg.samples)});
    }
  }
  for (std::size_t k = 0; k < res.energies.size(); ++k) {
    bool ok = res.scales.size() >= 2;
    double prev = 2.0, first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < res.scales.size(); ++i) {
      const double p = res.cells[i * res.energies.size() + k].bad.estimate;
      if (i == 0) first = p;
      last = p;
      if (p > prev) ok = false;
      prev = p;
    }
    res.decreasing.emplace_back(res.energies[k], ok && last < first);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Ultracontractivity

struct UltraRow {
  double t = 0.0;
  double norm = 0.0;
  double product = 0.0;
  bool certified = false;
  /// |norm(t; H_0 + c) / (e^{-tc} norm(t; H_0)) - 1|
  double shift_error = 0.0;
};

struct UltraResult {
  int side = 0;
  std::vector<UltraRow> rows;
  double variation = 0.0;
  bool bounded = false;
  bool all_certified = false;
};

inline std::vector<double> ultra_grid(const ExperimentConfig& cfg) {
  if (!cfg.ultra.t_grid.empty()) return cfg.ultra.t_grid;
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(std::pow(10.0, -2.0 + 2.0 * i / 9.0));
  return t;
}

inline UltraResult ultracontractivity_experiment(const ExperimentConfig& cfg) {
  cfg.validate_common();
  require(cfg.constant_potential.value_or(0.0) == 0.0, "ultra: needs the free operator (potential.constant = 0)");
  const auto grid = ultra_grid(cfg);
  for (double t : grid) require(t > 0.0 && t <= 1.0, "ultra: t grid must lie in (0, 1]");
  UltraResult res;
  res.side = cfg.sizes.front();
  const LatticeGraph g(cfg.box(res.side));
  const auto op = assemble(g, constant_config(g, 0.0), cfg.m);
  const SpectralResult sp = op.size() <= 4000 ? eigen_all(op)
                                              : eigen_low(op, std::min<std::size_t>(op.size(), 2000),
                                                          cfg.eigen_tol, cfg.eigen_options());
  SpectralResult shifted = sp;
  shifted.eigenvalues.array() += cfg.ultra.shift;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  res.all_certified = true;
  for (double t : grid) {
    const auto n = semigroup_sup_norm(sp, t);
    if (!n.certified) {
      throw NumericalError("ultra: truncation not certified at t = " + round_trip(t));
    }
    UltraRow r{t, n.value, n.value * std::pow(t, 0.25), n.certified, 0.0};
    const auto ns = semigroup_sup_norm(shifted, t);
    r.shift_error = std::abs(ns.value / (std::exp(-t * cfg.ultra.shift) * n.value) - 1.0);
    lo = std::min(lo, r.product);
    hi = std::max(hi, r.product);
    res.rows.push_back(r);
  }
  res.variation = hi / lo;
  res.bounded = res.variation < 5.0;
  return res;
}

// ---------------------------------------------------------------------------
// Combes-Thomas

struct CombesThomasSummary {
  std::vector<CombesThomasResult> windows;
  /// windows sorted by sqrt(η(s - r)); γ_fit strictly increasing along it
  bool rate_monotone = false;
  bool all_fits_good = false;
  double prefactor_delta = 0.0;
  /// (η, norm at prefactor_delta, norm · η)
  std::vector<std::tuple<double, double, double>> prefactor;
  double prefactor_variation = 0.0;
};

inline CombesThomasSummary combes_thomas_run(const ExperimentConfig& cfg) {
  cfg.validate_common();
  require(cfg.dimension == 1, "combes-thomas: the delta family is laid out along a line (d = 1)");
  require(!cfg.combes_thomas.windows.empty(), "combes-thomas: needs at least one window");
  const int L = cfg.sizes.front();
  const LatticeGraph g(cfg.box(L));
  const auto omega = cfg.potential(g, 0);
  const auto op = assemble(g, omega, cfg.m);
  auto edge_at = [&](int x) {
    const auto e = g.find_edge(EdgeId{Site{x, 0, 0}, 0});
    if (!e) throw ConfigError("combes-thomas: edge at " + std::to_string(x) + " is outside the box");
    return *e;
  };
  const std::size_t b = edge_at(cfg.combes_thomas.b_edge);
  std::vector<std::size_t> a;
  for (double d : cfg.combes_thomas.deltas) {
    require(d >= 1 && d == std::floor(d), "combes-thomas: deltas must be integers >= 1");
    a.push_back(edge_at(cfg.combes_thomas.b_edge + 1 + static_cast<int>(d)));
  }
  CombesThomasSummary res;
  res.all_fits_good = true;
  for (const auto& w : cfg.combes_thomas.windows) {
    auto r = combes_thomas_experiment(op, g, SpectralWindow{w.r, w.s}, w.E, b, a);
    if (!(r.fit.r2 >= 0.95 && r.fit.gamma_fit > 0)) res.all_fits_good = false;
    res.windows.push_back(std::move(r));
  }
  std::vector<const CombesThomasResult*> order;
  for (const auto& r : res.windows) order.push_back(&r);
  std::sort(order.begin(), order.end(),
            [](const auto* x, const auto* y) { return x->sqrt_eta_width < y->sqrt_eta_width; });
  res.rate_monotone = order.size() >= 2;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (!(order[i]->fit.gamma_fit > order[i - 1]->fit.gamma_fit)) res.rate_monotone = false;
  }
  res.prefactor_delta = cfg.combes_thomas.prefactor_delta;
  if (!cfg.combes_thomas.prefactor_windows.empty()) {
    const std::size_t ea = edge_at(cfg.combes_thomas.b_edge + 1 + static_cast<int>(res.prefactor_delta));
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& w : cfg.combes_thomas.prefactor_windows) {
      const SpectralWindow win{w.r, w.s};
      if (!(w.E > w.r && w.E < w.s)) throw PreconditionError("combes-thomas: E outside the window");
      if (window_eigenvalue_count(op, win) != 0) {
        throw PreconditionError("combes-thomas: prefactor window contains an eigenvalue");
      }
      const double eta = win.eta(w.E);
      const double n = block_norm(op, w.E, EdgeSet{ea}, EdgeSet{b}, 1e-8);
      res.prefactor.emplace_back(eta, n, n * eta);
      lo = std::min(lo, n * eta);
      hi = std::max(hi, n * eta);
    }
    res.prefactor_variation = hi / lo;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Geometric resolvent inequality

struct GriGeometryResult {
  int inner = 0;
  int outer = 0;
  std::vector<GriTrial> trials;
  double max_ratio = 0.0;
  double median_ratio = 0.0;
  double max_over_median = 0.0;
  ResolventIdentityCheck identity;
  double caccioppoli_max = 0.0;
};

struct GriResult {
  double energy = 0.0;
  std::vector<GriGeometryResult> geometries;
  /// max C_geom / min C_geom across geometries
  double stability = 1.0;
};

inline GriResult gri_experiment(const ExperimentConfig& cfg) {
  cfg.validate_common();
  require(cfg.energy.value.has_value(), "gri: energy.value is required");
  require(!cfg.gri.geometries.empty(), "gri: needs at least one geometry [inner, outer]");
  GriResult res;
  res.energy = *cfg.energy.value;
  for (const auto& [li, lo] : cfg.gri.geometries) {
    require(li < lo, "gri: inner box must be smaller than outer box");
    const LatticeGraph gi(cfg.box(li)), go(cfg.box(lo));
    GriGeometry geo{gi.box(), go.box(), region_mask(gi, GraphRegion::interior()), {}};
    for (std::size_t e = 0; e < go.num_edges(); ++e) {
      if (!gi.find_edge(go.edge(e))) geo.b_outer.push_back(e);
    }
    validate_gri_geometry(gi, go, geo, cfg.override_suitable);
    GriGeometryResult gr;
    gr.inner = li;
    gr.outer = lo;
    // Outer configurations are drawn on Λ' and restricted to Λ.
    gr.trials = parallel_map(cfg.samples, cfg.workers, [&](std::size_t s) {
      return gri_trial(gi, go, geo, cfg.potential(go, s), cfg.m, res.energy);
    });
    std::vector<double> ratios;
    for (const auto& t : gr.trials) ratios.push_back(t.ratio);
    gr.max_ratio = *std::max_element(ratios.begin(), ratios.end());
    gr.median_ratio = median(ratios);
    gr.max_over_median = gr.max_ratio / gr.median_ratio;

    const auto omega_o = cfg.potential(go, 0);
    const auto op_o = assemble(go, omega_o, cfg.m);
    const auto op_i = assemble(gi, restrict_config(go, omega_o, gi), cfg.m);
    gr.identity = resolvent_identity_check(op_i, gi, op_o, go, res.energy, cfg.gri.identity_trials,
                                           cfg.stream_seed(lo));
    const ResolventSolver si(op_i, res.energy);
    for (std::size_t k = 0; k < 3; ++k) {
      Eigen::VectorXd f(static_cast<Eigen::Index>(op_i.size()));
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        f[i] = counter_uniform(cfg.stream_seed(li), k, static_cast<std::uint64_t>(i)) - 0.5;
      }
      gr.caccioppoli_max = std::max(gr.caccioppoli_max, caccioppoli_estimate(op_i, gi, si, geo.a_inner, f).constant);
    }
    res.geometries.push_back(std::move(gr));
  }
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& g : res.geometries) {
    lo = std::min(lo, g.max_ratio);
    hi = std::max(hi, g.max_ratio);
  }
  res.stability = hi / lo;
  return res;
}

// ---------------------------------------------------------------------------
// Spectrum and secular

inline SpectralResult spectrum_run(const ExperimentConfig& cfg, PotentialConfig* omega_out = nullptr) {
  cfg.validate_common();
  const LatticeGraph g(cfg.box(cfg.sizes.front()));
  const auto omega = cfg.potential(g, 0);
  if (omega_out) *omega_out = omega;
  const auto op = assemble(g, omega, cfg.m);
  return eigen_low(op, std::min(cfg.spectrum.count, op.size()), cfg.eigen_tol, cfg.eigen_options());
}

inline std::vector<SecularEigenvalue> secular_run(const ExperimentConfig& cfg) {
  cfg.validate_common();
  const LatticeGraph g(cfg.box(cfg.sizes.front()));
  require(g.num_vertices() <= kSecularMaxVertices, "secular: graph too large for the oracle");
  const auto omega = cfg.potential(g, 0);
  const Interval w = cfg.energy.window.value_or(Interval{omega.min(), omega.min() + 10.0});
  require(w.hi > w.lo, "secular: empty energy window");
  return secular_eigenvalues(g, omega, w.lo, w.hi);
}

// ---------------------------------------------------------------------------
// Selftest

struct SelftestCase {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline std::vector<SelftestCase> selftest() {
  std::vector<SelftestCase> out;
  auto run = [&](const std::string& name, auto&& fn) {
    SelftestCase c;
    c.name = name;
    try {
      c.detail = fn(c.passed);
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("exception: ") + e.what();
    }
    out.push_back(c);
  };
  const double pi2 = std::numbers::pi * std::numbers::pi;

  run("free ground state", [](bool& ok) {
    const LatticeGraph g(LatticeBox{1, {}, 2});
    const auto r = eigen_low(assemble(g, constant_config(g, 0.0), 16), 1);
    ok = std::abs(r.eigenvalues[0]) < 1e-10;
    return "lambda0 = " + round_trip(r.eigenvalues[0]);
  });
  run("shift identity", [](bool& ok) {
    const LatticeGraph g(LatticeBox{2, {}, 4});
    const auto op = assemble(g, sample_config(g, SingleSiteMeasure::uniform(0, 1), 1, 0), 4);
    const auto a = eigen_all(op), b = eigen_all(shift_potential(op, 0.5));
    double err = 0.0;
    for (Eigen::Index i = 0; i < a.eigenvalues.size(); ++i) {
      err = std::max(err, std::abs(b.eigenvalues[i] - a.eigenvalues[i] - 0.5) / std::max(1.0, std::abs(b.eigenvalues[i])));
    }
    ok = err < 1e-10;
    return "max rel error " + round_trip(err);
  });
  run("ground state bound", [](bool& ok) {
    const LatticeGraph g(LatticeBox{2, {}, 4});
    const auto mu = SingleSiteMeasure::uniform(0, 1);
    std::size_t bad = 0;
    for (std::size_t s = 0; s < 20; ++s) {
      const auto omega = sample_config_conditioned(g, mu, 0.3, 5, s);
      if (eigen_low(assemble(g, omega, 8), 1).eigenvalues[0] < 0.3 - 1e-12) ++bad;
    }
    ok = bad == 0;
    return std::to_string(bad) + " violations in 20 samples";
  });
  run("single edge secular spectrum", [pi2](bool& ok) {
    const LatticeGraph g(LatticeBox{1, {}, 2});
    const auto omega = constant_config(g, 0.7);
    const auto roots = flatten(secular_eigenvalues(g, omega, 0.0, 0.7 + 4.5 * pi2));
    // Two unit edges in a line: Neumann interval of length 2.
    double err = 0.0;
    for (std::size_t n = 0; n < roots.size(); ++n) {
      err = std::max(err, std::abs(roots[n] - (0.7 + n * n * pi2 / 4.0)));
    }
    ok = roots.size() == 5 && err < 1e-8;
    return std::to_string(roots.size()) + " roots, max error " + round_trip(err);
  });
  run("FEM against secular oracle", [](bool& ok) {
    const LatticeGraph g(LatticeBox{2, {}, 2});
    const auto omega = sample_config(g, SingleSiteMeasure::uniform(0, 4), 11, 0);
    const auto exact = flatten(secular_eigenvalues(g, omega, omega.min(), omega.min() + 6.0));
    const auto fem = eigen_window(assemble(g, omega, 64), omega.min() - 1e-9, omega.min() + 7.0);
    double err = 0.0;
    for (std::size_t i = 0; i < exact.size(); ++i) {
      err = std::max(err, std::abs(fem.eigenvalues[static_cast<Eigen::Index>(i)] - exact[i]) / std::max(1.0, exact[i]));
    }
    ok = !exact.empty() && err < 1e-3;
    return std::to_string(exact.size()) + " eigenvalues, max rel error " + round_trip(err);
  });
  run("full block norm is inverse distance", [](bool& ok) {
    const LatticeGraph g(LatticeBox{1, {}, 6});
    const auto op = assemble(g, sample_config(g, SingleSiteMeasure::uniform(0, 4), 3, 0), 8);
    const auto all = eigen_all(op);
    const double E = 0.5 * (all.eigenvalues[2] + all.eigenvalues[3]);
    const double dist = std::min(E - all.eigenvalues[2], all.eigenvalues[3] - E);
    const double n = block_norm(op, E, all_edges(op), all_edges(op), 1e-10);
    ok = std::abs(n * dist - 1.0) < 1e-6;
    return "norm * dist = " + round_trip(n * dist);
  });
  run("semigroup shift", [](bool& ok) {
    const LatticeGraph g(LatticeBox{1, {}, 6});
    const auto sp = eigen_all(assemble(g, constant_config(g, 0.0), 8));
    auto sh = sp;
    sh.eigenvalues.array() += 1.5;
    const double t = 0.3;
    const double err = std::abs(semigroup_sup_norm(sh, t).value / (std::exp(-t * 1.5) * semigroup_sup_norm(sp, t).value) - 1.0);
    ok = err < 1e-12;
    return "relative error " + round_trip(err);
  });
  run("geometric resolvent identity", [](bool& ok) {
    const LatticeGraph gi(LatticeBox{1, {}, 18}), go(LatticeBox{1, {}, 30});
    const auto omega = sample_config(go, SingleSiteMeasure::uniform(0, 4), 8, 0);
    const auto c = resolvent_identity_check(assemble(gi, restrict_config(go, omega, gi), 8), gi,
                                            assemble(go, omega, 8), go, 0.1, 5);
    ok = c.max_residual < 1e-6;
    return "residual " + round_trip(c.max_residual);
  });
  run("binomial interval", [](bool& ok) {
    const auto p = binomial_interval(0, 100);
    ok = p.lo == 0.0 && std::abs(p.hi - 0.036216) < 1e-5;
    return "upper " + round_trip(p.hi);
  });
  return out;
}

}  // namespace qgloc
