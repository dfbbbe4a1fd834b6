#pragma once

// Localized resolvent blocks ‖χ_A (H - E)^{-1} χ_B‖, Combes-Thomas decay
// fits, and the nested-box resolvent identity and inequality.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iterator>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "qgloc/errors.hpp"
#include "qgloc/format.hpp"
#include "qgloc/lattice_graph.hpp"
#include "qgloc/operator_assembly.hpp"
#include "qgloc/randomness.hpp"
#include "qgloc/spectral_engine.hpp"
#include "qgloc/statistics.hpp"

namespace qgloc {

/// Factorization of A - E M. Below min ω the matrix is positive definite and
/// Cholesky is used; otherwise a pivoted sparse LU.
class ResolventSolver {
 public:
  ResolventSolver(const DiscreteOperator& op, double E) : energy_(E) {
    const SparseMatrix X = op.A() - E * op.M;
    if (E < op.min_omega()) {
      llt_ = std::make_unique<Eigen::SimplicialLLT<SparseMatrix>>(X);
      if (llt_->info() == Eigen::Success) return;
      llt_.reset();
    }
    lu_ = std::make_unique<Eigen::SparseLU<SparseMatrix>>();
    lu_->analyzePattern(X);
    lu_->factorize(X);
    if (lu_->info() != Eigen::Success) {
      throw NumericalError("resolvent factorization failed at E = " + round_trip(E));
    }
  }

  /// (A - E M)^{-1} b
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    return llt_ ? Eigen::VectorXd(llt_->solve(b)) : Eigen::VectorXd(lu_->solve(b));
  }

  double energy() const { return energy_; }
  bool definite() const { return static_cast<bool>(llt_); }

 private:
  double energy_;
  std::unique_ptr<Eigen::SimplicialLLT<SparseMatrix>> llt_;
  std::unique_ptr<Eigen::SparseLU<SparseMatrix>> lu_;
};

inline constexpr double kSpectrumGuard = 1e-10;

/// True when some generalized eigenvalue lies within `guard` of E (inertia test).
inline bool near_spectrum(const DiscreteOperator& op, double E, double guard = kSpectrumGuard) {
  return count_below(op, E + guard) != count_below(op, E - guard);
}

struct NormEstimate {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// Largest eigenvalue of an operator that is self-adjoint and positive in the
// M-inner product, by Lanczos with full reorthogonalization.
inline NormEstimate lanczos_top(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                                const SparseMatrix& M, double tol, int max_iter = 300,
                                std::uint64_t seed = 0xb10c) {
  const Eigen::Index n = M.rows();
  Eigen::VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    q[i] = counter_uniform(seed, 0, static_cast<std::uint64_t>(i)) - 0.5;
  }
  q /= std::sqrt(q.dot(M * q));
  std::vector<Eigen::VectorXd> Q{q};
  std::vector<Eigen::VectorXd> MQ{M * q};
  std::vector<double> alpha, beta;
  double prev = 0.0;
  NormEstimate est;
  const int limit = static_cast<int>(std::min<Eigen::Index>(n, max_iter));
  for (int j = 0; j < limit; ++j) {
    Eigen::VectorXd w = apply(Q[static_cast<std::size_t>(j)]);
    alpha.push_back(MQ[static_cast<std::size_t>(j)].dot(w));
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < Q.size(); ++i) w -= MQ[i].dot(w) * Q[i];
    }
    const Eigen::VectorXd Mw = M * w;
    const double b = std::sqrt(std::max(w.dot(Mw), 0.0));

    const auto k = static_cast<Eigen::Index>(alpha.size());
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      T(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < k) T(i, i + 1) = T(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    const double theta = es.eigenvalues()[k - 1];
    const double resid = b * std::abs(es.eigenvectors()(k - 1, k - 1));
    est.value = theta;
    est.iterations = j + 1;
    const double scale = std::max(std::abs(theta), std::numeric_limits<double>::min());
    if (b <= 1e-14 * scale || (j > 0 && resid <= tol * scale && std::abs(theta - prev) <= tol * scale)) {
      est.converged = true;
      return est;
    }
    prev = theta;
    beta.push_back(b);
    Q.push_back(w / b);
    MQ.push_back(Mw / b);
  }
  est.converged = limit == n;
  return est;
}

}  // namespace detail

/// Mass matrix of the edges in S alone: the Gram matrix of the hat
/// functions in L2(S), so c -> c^T M_S c is ‖χ_S f‖².
inline SparseMatrix restricted_mass(const DiscreteOperator& op, const EdgeSet& edges) {
  const double h = op.h();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(edges.size() * static_cast<std::size_t>(op.m) * 4);
  for (std::size_t e : edges) {
    if (e >= op.num_edges) throw PreconditionError("restricted_mass: edge index out of range");
    for (int j = 0; j < op.m; ++j) {
      const std::size_t a = op.node(e, j), b = op.node(e, j + 1);
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

inline EdgeSet all_edges(const DiscreteOperator& op) {
  EdgeSet all(op.num_edges);
  for (std::size_t e = 0; e < op.num_edges; ++e) all[e] = e;
  return all;
}

/// ‖χ_A (H - E)^{-1} χ_B‖ as a map L2(B) -> L2(A), with the Galerkin
/// resolvent g -> (A - E M)^{-1} (∫ φ_i g). The supremum over L2(B) is
/// attained on hat functions restricted to B, which gives
///   ‖M_A^{1/2} (A - E M)^{-1} M_B^{1/2}‖,
/// symmetric in A and B. Computed by Lanczos on the DOFs carried by B.
inline NormEstimate block_norm(const DiscreteOperator& op, const ResolventSolver& solver,
                               const EdgeSet& a, const EdgeSet& b, double tol = 1e-6) {
  if (a.empty() || b.empty()) return NormEstimate{0.0, 0, true};
  const SparseMatrix Ma = restricted_mass(op, a);
  const SparseMatrix Mb = restricted_mass(op, b);
  std::vector<Eigen::Index> support;
  {
    const Eigen::VectorXd mask = dof_mask(op, b);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      if (mask[i] != 0.0) support.push_back(i);
    }
  }
  const auto nb = static_cast<Eigen::Index>(support.size());
  const auto n = static_cast<Eigen::Index>(op.size());
  std::vector<Eigen::Index> local(static_cast<std::size_t>(n), -1);
  for (Eigen::Index i = 0; i < nb; ++i) local[static_cast<std::size_t>(support[static_cast<std::size_t>(i)])] = i;
  std::vector<Eigen::Triplet<double>> tbb;
  for (Eigen::Index k = 0; k < Mb.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(Mb, k); it; ++it) {
      tbb.emplace_back(local[static_cast<std::size_t>(it.row())], local[static_cast<std::size_t>(it.col())],
                       it.value());
    }
  }
  SparseMatrix Mbb(nb, nb);
  Mbb.setFromTriplets(tbb.begin(), tbb.end());
  Eigen::SimplicialLLT<SparseMatrix> mass(Mbb);
  if (mass.info() != Eigen::Success) throw NumericalError("block_norm: restricted mass is singular");

  auto apply = [&](const Eigen::VectorXd& c) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < nb; ++i) z[support[static_cast<std::size_t>(i)]] = c[i];
    const Eigen::VectorXd w = solver.solve(Ma * solver.solve(Mb * z));
    const Eigen::VectorXd r = Mb * w;
    Eigen::VectorXd rl(nb);
    for (Eigen::Index i = 0; i < nb; ++i) rl[i] = r[support[static_cast<std::size_t>(i)]];
    return Eigen::VectorXd(mass.solve(rl));
  };
  NormEstimate est = detail::lanczos_top(apply, Mbb, tol * tol);
  if (!est.converged) {
    throw NumericalError("block_norm: Lanczos did not converge in " + std::to_string(est.iterations) +
                         " iterations");
  }
  est.value = std::sqrt(std::max(est.value, 0.0));
  return est;
}

inline double block_norm(const DiscreteOperator& op, double E, const EdgeSet& a, const EdgeSet& b,
                         double tol = 1e-6) {
  if (near_spectrum(op, E)) {
    throw PreconditionError("block_norm: E = " + round_trip(E) + " is within " +
                            round_trip(kSpectrumGuard) + " of the spectrum");
  }
  const ResolventSolver solver(op, E);
  return block_norm(op, solver, a, b, tol).value;
}

/// dist(E, σ) = 1 / ‖(H - E)^{-1}‖.
inline double distance_to_spectrum(const DiscreteOperator& op, double E, double tol = 1e-8) {
  const ResolventSolver solver(op, E);
  const EdgeSet all = all_edges(op);
  return 1.0 / block_norm(op, solver, all, all, tol).value;
}

// ---------------------------------------------------------------------------
// Combes-Thomas

struct DecayFit {
  std::vector<double> deltas;
  std::vector<double> norms;
  std::vector<bool> used;
  double floor = 1e-13;
  double gamma_fit = 0.0;
  double prefactor = 0.0;
  double r2 = 0.0;
  std::size_t points_used = 0;
};

/// Least squares of log norm against δ over norms above `floor`.
inline DecayFit fit_decay(const std::vector<double>& deltas, const std::vector<double>& norms,
                          double floor = 1e-13) {
  DecayFit fit;
  fit.deltas = deltas;
  fit.norms = norms;
  fit.floor = floor;
  std::vector<double> x, y;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const bool ok = norms[i] > floor;
    fit.used.push_back(ok);
    if (ok) {
      x.push_back(deltas[i]);
      y.push_back(std::log(norms[i]));
    }
  }
  fit.points_used = x.size();
  if (x.size() < 2) return fit;
  const LineFit line = fit_line(x, y);
  fit.gamma_fit = -line.slope;
  fit.prefactor = std::exp(line.intercept);
  fit.r2 = line.r2;
  return fit;
}

struct SpectralWindow {
  double r = 0.0;
  double s = 0.0;
  double width() const { return s - r; }
  double eta(double E) const { return std::min(E - r, s - E); }
};

/// Number of eigenvalues in the open window, with a relative margin at the
/// ends so that an eigenvalue sitting exactly on r or s is not counted.
inline std::size_t window_eigenvalue_count(const DiscreteOperator& op, const SpectralWindow& w) {
  const double margin = 1e-9 * std::max({1.0, std::abs(w.r), std::abs(w.s)});
  return count_in(op, w.r + margin, w.s - margin);
}

struct CombesThomasResult {
  SpectralWindow window;
  double energy = 0.0;
  double eta = 0.0;
  DecayFit fit;
  /// Smallest c1 with norm_i <= c1 η^{-1} exp(-γ_fit δ_i) over the fitted points.
  double c1 = 0.0;
  double sqrt_eta_width = 0.0;
};

/// B is a fixed edge; A_δ runs over the edges at distance δ from it.
inline CombesThomasResult combes_thomas_experiment(const DiscreteOperator& op, const LatticeGraph& g,
                                                   const SpectralWindow& window, double E,
                                                   std::size_t edge_b,
                                                   const std::vector<std::size_t>& edges_a,
                                                   double tol = 1e-8) {
  if (!(E > window.r && E < window.s)) throw PreconditionError("combes_thomas: E outside the window");
  if (window_eigenvalue_count(op, window) != 0) {
    throw PreconditionError("combes_thomas: window (" + round_trip(window.r) + ", " +
                            round_trip(window.s) + ") contains an eigenvalue");
  }
  CombesThomasResult res;
  res.window = window;
  res.energy = E;
  res.eta = window.eta(E);
  res.sqrt_eta_width = std::sqrt(res.eta * window.width());
  const ResolventSolver solver(op, E);
  std::vector<double> deltas, norms;
  for (std::size_t ea : edges_a) {
    const double delta = edge_distance(g, ea, edge_b);
    if (delta < 1.0) throw PreconditionError("combes_thomas: needs dist(A, B) >= 1");
    deltas.push_back(delta);
    norms.push_back(block_norm(op, solver, EdgeSet{ea}, EdgeSet{edge_b}, tol).value);
  }
  res.fit = fit_decay(deltas, norms);
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (!res.fit.used[i]) continue;
    res.c1 = std::max(res.c1, norms[i] * res.eta * std::exp(res.fit.gamma_fit * deltas[i]));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Nested boxes

/// Cutoff ψ: 1 on Λ_{L-8}, 0 outside Λ_{L-4}, linear in the sup-distance to
/// the center in between. Linear on every edge, so P1 interpolation is exact.
inline double cutoff_value(const LatticeBox& box, const Eigen::Vector3d& x) {
  double r = 0.0;
  for (int k = 0; k < box.dimension; ++k) r = std::max(r, std::abs(x[k] - box.center[k]));
  const double inner = (box.side - 8) / 2.0;
  return std::clamp(1.0 - (r - inner) / 2.0, 0.0, 1.0);
}

struct ResolventIdentityCheck {
  std::size_t trials = 0;
  /// max over trials of ‖lhs - rhs‖_M / ‖lhs‖_M
  double max_residual = 0.0;
  /// max over trials of ‖A^{-1} J^T C u‖_M / ‖lhs‖_M, the mass-commutator term.
  double max_mass_term = 0.0;
  /// ‖[Ψ, K] - Σ_e ψ'_e (G_e - G_e^T)‖_max; zero up to rounding.
  double derivative_form_error = 0.0;
  double cutoff_derivative_sup = 0.0;
};

/// Checks R_Λ ψ = ψ R_Λ' + R_Λ [B - C] R_Λ' on random vectors, where
///   R_Λ ψ g = A_Λ^{-1} J^T Ψ M' g,   B = [Ψ, K'] = Σ_e ψ'_e (G_e - G_e^T),
///   C = Σ_e (ω_e - E)[M'_e, Ψ],
/// J^T restricts outer DOFs to the inner box and G_e = (∫ φ_i φ_j') is the
/// element derivative pairing. B is the discrete ψ'·D + D ψ'.
inline ResolventIdentityCheck resolvent_identity_check(const DiscreteOperator& inner,
                                                       const LatticeGraph& gi,
                                                       const DiscreteOperator& outer,
                                                       const LatticeGraph& go, double E,
                                                       std::size_t trials = 20,
                                                       std::uint64_t seed = 99) {
  const auto J = dof_embedding(inner, gi, outer, go);
  const auto no = static_cast<Eigen::Index>(outer.size());
  const auto ni = static_cast<Eigen::Index>(inner.size());
  const Eigen::VectorXd psi =
      dof_weight(outer, [&](const Eigen::Vector3d& x) { return cutoff_value(gi.box(), x); });

  // Element-level B and C with independent bookkeeping.
  std::vector<Eigen::Triplet<double>> tb, tc;
  ResolventIdentityCheck out;
  const double h = outer.h();
  for (std::size_t e = 0; e < outer.num_edges; ++e) {
    const double w = outer.omega[e] - E;
    for (int j = 0; j < outer.m; ++j) {
      const std::size_t a = outer.node(e, j), b = outer.node(e, j + 1);
      const double pa = psi[static_cast<Eigen::Index>(a)], pb = psi[static_cast<Eigen::Index>(b)];
      const double dpsi = (pb - pa) / h;
      out.cutoff_derivative_sup = std::max(out.cutoff_derivative_sup, std::abs(dpsi));
      // G_e - G_e^T = [[0, 1], [-1, 0]] for P1 hat functions.
      tb.emplace_back(a, b, dpsi);
      tb.emplace_back(b, a, -dpsi);
      // [M_e, Ψ]_{ab} = m_ab (ψ_b - ψ_a), m_ab = h/6.
      tc.emplace_back(a, b, w * h / 6.0 * (pb - pa));
      tc.emplace_back(b, a, w * h / 6.0 * (pa - pb));
    }
  }
  SparseMatrix B(no, no), C(no, no);
  B.setFromTriplets(tb.begin(), tb.end());
  C.setFromTriplets(tc.begin(), tc.end());
  {
    const SparseMatrix Psi = Eigen::VectorXd(psi).asDiagonal().toDenseMatrix().sparseView();
    const SparseMatrix comm = SparseMatrix(Psi * outer.K) - SparseMatrix(outer.K * Psi);
    out.derivative_form_error = (Eigen::MatrixXd(comm - B)).cwiseAbs().maxCoeff();
  }

  const ResolventSolver r_out(outer, E);
  const ResolventSolver r_in(inner, E);
  auto restrict = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd r(ni);
    for (Eigen::Index i = 0; i < ni; ++i) r[i] = v[static_cast<Eigen::Index>(J[static_cast<std::size_t>(i)])];
    return r;
  };
  auto mnorm = [&](const Eigen::VectorXd& v) { return std::sqrt(v.dot(inner.M * v)); };

  for (std::size_t t = 0; t < trials; ++t) {
    Eigen::VectorXd g(no);
    for (Eigen::Index i = 0; i < no; ++i) {
      g[i] = counter_uniform(seed, t, static_cast<std::uint64_t>(i)) - 0.5;
    }
    const Eigen::VectorXd u = r_out.solve(outer.M * g);
    const Eigen::VectorXd lhs = r_in.solve(restrict(psi.cwiseProduct(outer.M * g)));
    const Eigen::VectorXd first = restrict(psi.cwiseProduct(u));
    const Eigen::VectorXd second = r_in.solve(restrict((B - C) * u));
    const double scale = mnorm(lhs);
    out.max_residual = std::max(out.max_residual, mnorm(lhs - first - second) / scale);
    out.max_mass_term = std::max(out.max_mass_term, mnorm(r_in.solve(restrict(C * u))) / scale);
  }
  out.trials = trials;
  return out;
}

struct GriGeometry {
  LatticeBox inner;
  LatticeBox outer;
  /// Edges of the inner graph, inside Λ_int.
  EdgeSet a_inner;
  /// Edges of the outer graph, outside Λ.
  EdgeSet b_outer;
};

struct GriTrial {
  double lhs = 0.0;
  double rhs_outer = 0.0;
  double rhs_inner = 0.0;
  double ratio = 0.0;
};

/// Validates A ⊂ Λ_int and B ⊂ Λ' \ Λ. Inner edges must exist in the outer graph.
inline void validate_gri_geometry(const LatticeGraph& gi, const LatticeGraph& go,
                                  const GriGeometry& geo, bool allow_override) {
  if (!is_suitable(geo.inner, allow_override) || !is_suitable(geo.outer, allow_override)) {
    throw PreconditionError("gri: boxes must be suitable (or override-suitable)");
  }
  if (geo.a_inner.empty() || geo.b_outer.empty()) throw PreconditionError("gri: empty A or B");
  const EdgeSet interior = region_mask(gi, GraphRegion::interior());
  for (std::size_t e : geo.a_inner) {
    if (!std::binary_search(interior.begin(), interior.end(), e)) {
      throw PreconditionError("gri: A must lie in the interior region of the inner box");
    }
  }
  for (std::size_t e : geo.b_outer) {
    if (e >= go.num_edges()) throw PreconditionError("gri: B edge index out of range");
    if (gi.find_edge(go.edge(e))) {
      throw PreconditionError("gri: B must lie in the outer box minus the inner box");
    }
  }
}

/// The three block norms of the inequality for one configuration ω on Λ'.
inline GriTrial gri_trial(const LatticeGraph& gi, const LatticeGraph& go, const GriGeometry& geo,
                          const PotentialConfig& omega_outer, int m, double E, double tol = 1e-6) {
  const PotentialConfig omega_inner = restrict_config(go, omega_outer, gi);
  const DiscreteOperator op_o = assemble(go, omega_outer, m);
  const DiscreteOperator op_i = assemble(gi, omega_inner, m);
  if (near_spectrum(op_o, E) || near_spectrum(op_i, E)) {
    throw PreconditionError("gri: E lies in the spectrum of one of the boxes");
  }
  EdgeSet a_outer, out_outer;
  for (std::size_t e : geo.a_inner) a_outer.push_back(*go.find_edge(gi.edge(e)));
  const EdgeSet out_inner = region_mask(gi, GraphRegion::collar());
  for (std::size_t e : out_inner) out_outer.push_back(*go.find_edge(gi.edge(e)));
  std::sort(a_outer.begin(), a_outer.end());
  std::sort(out_outer.begin(), out_outer.end());

  const ResolventSolver so(op_o, E);
  const ResolventSolver si(op_i, E);
  GriTrial t;
  t.lhs = block_norm(op_o, so, geo.b_outer, a_outer, tol).value;
  t.rhs_outer = block_norm(op_o, so, geo.b_outer, out_outer, tol).value;
  t.rhs_inner = block_norm(op_i, si, out_inner, geo.a_inner, tol).value;
  t.ratio = t.lhs / (t.rhs_outer * t.rhs_inner);
  return t;
}

struct CaccioppoliEstimate {
  double derivative_norm = 0.0;
  double u_norm = 0.0;
  double g_norm = 0.0;
  /// ‖u'‖_{Ω̃} / (‖u‖_Ω + ‖g‖_Ω)
  double constant = 0.0;
};

/// u = R_Λ(E) χ_A f on Ω = Λ_out with Ω̃ = closure(Λ_{L-2} \ Λ_{L-10}).
inline CaccioppoliEstimate caccioppoli_estimate(const DiscreteOperator& op, const LatticeGraph& g,
                                                const ResolventSolver& solver, const EdgeSet& a,
                                                const Eigen::VectorXd& f) {
  const Eigen::VectorXd u = solver.solve(restricted_mass(op, a) * f);
  const EdgeSet omega = region_mask(g, GraphRegion::collar());
  const LatticeBox& box = g.box();
  const EdgeSet tilde = region_mask(g, GraphRegion::annulus(box.resized(box.side - 2), box.resized(box.side - 10)));
  EdgeSet a_in_omega;
  std::set_intersection(a.begin(), a.end(), omega.begin(), omega.end(), std::back_inserter(a_in_omega));
  CaccioppoliEstimate c;
  c.derivative_norm = std::sqrt(edge_derivative_squared(op, u, tilde));
  c.u_norm = std::sqrt(edge_l2_squared(op, u, omega));
  c.g_norm = std::sqrt(edge_l2_squared(op, f, a_in_omega));
  c.constant = c.derivative_norm / (c.u_norm + c.g_norm);
  return c;
}

}  // namespace qgloc
