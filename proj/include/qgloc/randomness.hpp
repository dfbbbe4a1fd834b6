#pragma once

// Single-site measures on [q_-, q_+] and reproducible i.i.d. edge potentials.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qgloc/errors.hpp"
#include "qgloc/lattice_graph.hpp"

namespace qgloc {

enum class MeasureFamily { uniform, power_tail };

inline std::string to_string(MeasureFamily f) {
  return f == MeasureFamily::uniform ? "uniform" : "power_tail";
}

/// Law μ of a single coupling constant. PowerTail(τ) has CDF
/// F(q) = ((q - q_-) / (q_+ - q_-))^τ.
struct SingleSiteMeasure {
  MeasureFamily family = MeasureFamily::uniform;
  double q_minus = 0.0;
  double q_plus = 1.0;
  double tau = 1.0;

  static SingleSiteMeasure uniform(double lo, double hi) {
    return SingleSiteMeasure{MeasureFamily::uniform, lo, hi, 1.0};
  }
  static SingleSiteMeasure power_tail(double lo, double hi, double tau) {
    return SingleSiteMeasure{MeasureFamily::power_tail, lo, hi, tau};
  }

  double width() const { return q_plus - q_minus; }

  void validate() const {
    if (!(q_minus >= 0.0)) throw ParameterError("single-site measure needs q_minus >= 0");
    if (!(q_plus > q_minus)) throw ParameterError("single-site measure needs q_plus > q_minus");
    if (family == MeasureFamily::uniform && tau != 1.0) {
      throw ParameterError("uniform measure has tail exponent 1");
    }
    if (family == MeasureFamily::power_tail && !(tau >= 1.0)) {
      // τ < 1 has an unbounded density; not shipped.
      throw ParameterError("power_tail measure needs tau >= 1");
    }
  }

  double cdf(double q) const {
    if (q <= q_minus) return 0.0;
    if (q >= q_plus) return 1.0;
    const double x = (q - q_minus) / width();
    return family == MeasureFamily::uniform ? x : std::pow(x, tau);
  }

  double quantile(double u) const {
    u = std::clamp(u, 0.0, 1.0);
    const double x = family == MeasureFamily::uniform ? u : std::pow(u, 1.0 / tau);
    return std::min(q_plus, q_minus + width() * x);
  }

  /// μ([a, b])
  double interval_mass(double a, double b) const { return b <= a ? 0.0 : cdf(b) - cdf(a); }

  double holder_alpha() const { return 1.0; }
  /// sup of the density.
  double holder_constant() const {
    return family == MeasureFamily::uniform ? 1.0 / width() : tau / width();
  }
  double tail_exponent() const { return family == MeasureFamily::uniform ? 1.0 : tau; }

  /// Largest h0 with μ([q_-, q_-+h]) <= h^τ for all h <= h0. Both families
  /// give μ([q_-, q_-+h]) = (h/w)^τ, so the bound holds on the whole support
  /// iff w >= 1 and for no h > 0 otherwise.
  double tail_h0() const { return width() >= 1.0 ? width() : 0.0; }
};

/// One realization ω of the edge potentials on a box graph.
struct PotentialConfig {
  LatticeBox box{};
  std::vector<double> values;
  std::uint64_t master_seed = 0;
  std::uint64_t sample_index = 0;

  double min() const { return *std::min_element(values.begin(), values.end()); }
  double max() const { return *std::max_element(values.begin(), values.end()); }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Counter-based uniform in (0, 1) keyed by (seed, sample, edge); independent
/// of evaluation order.
inline double counter_uniform(std::uint64_t master_seed, std::uint64_t sample_index,
                              std::uint64_t edge_index) {
  std::uint64_t h = detail::splitmix64(master_seed);
  h = detail::splitmix64(h ^ sample_index);
  h = detail::splitmix64(h ^ (edge_index * 0xd1b54a32d192ed03ULL));
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

inline PotentialConfig sample_config(const LatticeGraph& g, const SingleSiteMeasure& mu,
                                     std::uint64_t master_seed, std::uint64_t sample_index) {
  mu.validate();
  PotentialConfig cfg{g.box(), std::vector<double>(g.num_edges()), master_seed, sample_index};
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    cfg.values[e] = mu.quantile(counter_uniform(master_seed, sample_index, e));
  }
  return cfg;
}

/// Sample from μ conditioned on ω_e >= lower for every edge (inverse CDF of
/// the conditional law).
inline PotentialConfig sample_config_conditioned(const LatticeGraph& g, const SingleSiteMeasure& mu,
                                                 double lower, std::uint64_t master_seed,
                                                 std::uint64_t sample_index) {
  mu.validate();
  const double f0 = mu.cdf(lower);
  if (f0 >= 1.0) throw ParameterError("conditioning lower bound leaves no mass");
  PotentialConfig cfg{g.box(), std::vector<double>(g.num_edges()), master_seed, sample_index};
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const double u = counter_uniform(master_seed, sample_index, e);
    cfg.values[e] = std::max(lower, mu.quantile(f0 + (1.0 - f0) * u));
  }
  return cfg;
}

inline PotentialConfig constant_config(const LatticeGraph& g, double value) {
  return PotentialConfig{g.box(), std::vector<double>(g.num_edges(), value), 0, 0};
}

/// Coupling constants of `outer` restricted to the edges of `inner`, which
/// must be a sub-box graph of `outer`.
inline PotentialConfig restrict_config(const LatticeGraph& outer, const PotentialConfig& omega,
                                       const LatticeGraph& inner) {
  PotentialConfig out{inner.box(), std::vector<double>(inner.num_edges()), omega.master_seed,
                      omega.sample_index};
  for (std::size_t e = 0; e < inner.num_edges(); ++e) {
    const auto idx = outer.find_edge(inner.edge(e));
    if (!idx) throw GraphError("restrict_config: inner graph is not contained in outer graph");
    out.values[e] = omega.values[*idx];
  }
  return out;
}

struct TailCheck {
  double h = 0.0;
  double mass = 0.0;
  double bound = 0.0;
  bool ok = true;
};

struct HolderCheck {
  double a = 0.0;
  double b = 0.0;
  double mass = 0.0;
  double bound = 0.0;
  bool ok = true;
};

struct MeasureDiagnostics {
  double alpha = 1.0;
  double holder_constant = 1.0;
  double tau = 1.0;
  double h0 = 0.0;
  std::vector<TailCheck> tail_checks;
  std::vector<HolderCheck> holder_checks;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

/// Evaluates the tail bound on a geometric h-grid inside (0, h0] and the
/// Hölder bound on 100 random subintervals of the support.
inline MeasureDiagnostics measure_diagnostics(const SingleSiteMeasure& mu, std::uint64_t seed = 7,
                                              int tail_points = 24, int holder_intervals = 100) {
  mu.validate();
  MeasureDiagnostics diag;
  diag.alpha = mu.holder_alpha();
  diag.holder_constant = mu.holder_constant();
  diag.tau = mu.tail_exponent();
  diag.h0 = mu.tail_h0();
  constexpr double kSlack = 1e-12;

  if (diag.h0 <= 0.0) {
    const double h = std::min(1.0, mu.width());
    const double mass = mu.interval_mass(mu.q_minus, mu.q_minus + h);
    diag.tail_checks.push_back({h, mass, std::pow(h, diag.tau), false});
    diag.violations.push_back("tail bound mu([q-, q-+h]) <= h^tau fails for every h > 0 (width " +
                              std::to_string(mu.width()) + " < 1)");
  } else {
    for (int i = 0; i < tail_points; ++i) {
      const double h = diag.h0 * std::pow(0.5, i);
      const double mass = mu.interval_mass(mu.q_minus, mu.q_minus + h);
      const double bound = std::pow(h, diag.tau);
      const bool ok = mass <= bound * (1.0 + kSlack);
      diag.tail_checks.push_back({h, mass, bound, ok});
      if (!ok) {
        diag.violations.push_back("tail bound violated at h=" + std::to_string(h) +
                                  " mass=" + std::to_string(mass));
      }
    }
  }

  for (int i = 0; i < holder_intervals; ++i) {
    double a = mu.quantile(counter_uniform(seed, 2 * i, 0));
    double b = mu.q_minus + mu.width() * counter_uniform(seed, 2 * i + 1, 1);
    if (a > b) std::swap(a, b);
    const double mass = mu.interval_mass(a, b);
    const double bound = diag.holder_constant * std::pow(b - a, diag.alpha);
    const bool ok = mass <= bound * (1.0 + kSlack) + 1e-15;
    diag.holder_checks.push_back({a, b, mass, bound, ok});
    if (!ok) {
      diag.violations.push_back("Holder bound violated on [" + std::to_string(a) + ", " +
                                std::to_string(b) + "]");
    }
  }
  return diag;
}

}  // namespace qgloc
