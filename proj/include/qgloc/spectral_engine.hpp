#pragma once

// Low-lying spectrum of the pencil (K + P, M), Sylvester inertia counts, an
// exact secular-equation oracle for small graphs, and heat-kernel sup norms.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "qgloc/errors.hpp"
#include "qgloc/format.hpp"
#include "qgloc/lattice_graph.hpp"
#include "qgloc/operator_assembly.hpp"
#include "qgloc/randomness.hpp"

namespace qgloc {

struct SpectralResult {
  Eigen::VectorXd eigenvalues;
  /// Columns are M-orthonormal.
  Eigen::MatrixXd eigenvectors;
  Eigen::VectorXd residuals;
  std::string method;
  double tol = 0.0;
  int iterations = 0;
  /// True when every eigenpair of the pencil is present.
  bool complete = false;

  std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
};

enum class EigenMethod { automatic, dense, iterative };

struct EigenOptions {
  EigenMethod method = EigenMethod::automatic;
  std::size_t dense_threshold = 2000;
  int max_restarts = 300;
  std::uint64_t seed = 0x51u;
};

namespace detail {

inline Eigen::VectorXd pair_residuals(const SparseMatrix& A, const SparseMatrix& M,
                                      const Eigen::VectorXd& lambda, const Eigen::MatrixXd& V) {
  Eigen::VectorXd res(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    const Eigen::VectorXd mv = M * V.col(i);
    res[i] = (A * V.col(i) - lambda[i] * mv).norm() / mv.norm();
  }
  return res;
}

inline SpectralResult dense_solve(const DiscreteOperator& op, std::size_t count) {
  const SparseMatrix As = op.A();
  const Eigen::MatrixXd A(As);
  const Eigen::MatrixXd M(op.M);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(A, M, Eigen::ComputeEigenvectors |
                                                                         Eigen::Ax_lBx);
  if (es.info() != Eigen::Success) throw NumericalError("dense generalized eigensolver failed");
  const auto k = static_cast<Eigen::Index>(count);
  SpectralResult r;
  r.eigenvalues = es.eigenvalues().head(k);
  r.eigenvectors = es.eigenvectors().leftCols(k);
  r.residuals = pair_residuals(As, op.M, r.eigenvalues, r.eigenvectors);
  r.method = "dense";
  r.complete = count == op.size();
  return r;
}

// M-orthonormalizes the columns of Z against V (CGS2) and among themselves,
// dropping numerically dependent directions.
inline Eigen::MatrixXd m_orthonormalize(const Eigen::MatrixXd& V, Eigen::MatrixXd Z,
                                        const SparseMatrix& M) {
  for (int pass = 0; pass < 2 && V.cols() > 0; ++pass) {
    Z -= V * (V.transpose() * (M * Z));
  }
  const Eigen::MatrixXd MZ = M * Z;
  const Eigen::MatrixXd G = Z.transpose() * MZ;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    if (es.eigenvalues()[i] > 1e-20 * std::max(top, 1e-300)) keep.push_back(i);
  }
  Eigen::MatrixXd Q(Z.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    Q.col(static_cast<Eigen::Index>(j)) =
        Z * es.eigenvectors().col(keep[j]) / std::sqrt(es.eigenvalues()[keep[j]]);
  }
  if (V.cols() > 0 && Q.cols() > 0) {
    Q -= V * (V.transpose() * (M * Q));
    const Eigen::MatrixXd G2 = Q.transpose() * (M * Q);
    Eigen::LLT<Eigen::MatrixXd> llt(G2);
    if (llt.info() == Eigen::Success) {
      Q = llt.matrixU().solve<Eigen::OnTheRight>(Q);
    }
  }
  return Q;
}

// Thick-restarted block Krylov on T = (A - σM)^{-1} M with σ below the
// spectrum, followed by Rayleigh-Ritz on (A, M). Each restart keeps the
// current Ritz vectors and continues the Krylov sequence from the last block.
inline SpectralResult iterative_solve(const DiscreteOperator& op, std::size_t count, double tol,
                                      const EigenOptions& opts) {
  const SparseMatrix A = op.A();
  const SparseMatrix& M = op.M;
  const auto n = static_cast<Eigen::Index>(op.size());
  const double sigma = op.min_omega() - 1.0;
  Eigen::SimplicialLLT<SparseMatrix> llt(A - sigma * M);
  if (llt.info() != Eigen::Success) throw NumericalError("shift-invert factorization failed");

  const auto nev = static_cast<Eigen::Index>(count);
  const Eigen::Index keep = std::min<Eigen::Index>(n, nev + std::max<Eigen::Index>(8, nev / 4));
  const Eigen::Index ncv = std::min<Eigen::Index>(n, std::max<Eigen::Index>(3 * keep, keep + 40));
  const Eigen::Index bsize = std::min<Eigen::Index>(keep, std::max<Eigen::Index>(8, keep / 4));

  Eigen::MatrixXd X(n, keep);
  for (Eigen::Index j = 0; j < keep; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      X(i, j) = counter_uniform(opts.seed, static_cast<std::uint64_t>(j),
                                static_cast<std::uint64_t>(i)) -
                0.5;
    }
  }
  Eigen::MatrixXd V = m_orthonormalize(Eigen::MatrixXd(n, 0), X, M);
  Eigen::MatrixXd block = V.rightCols(std::min(bsize, V.cols()));

  SpectralResult r;
  r.method = "shift-invert block Krylov";
  r.tol = tol;
  for (int it = 1; it <= opts.max_restarts; ++it) {
    while (V.cols() < ncv && block.cols() > 0) {
      Eigen::MatrixXd Z = llt.solve(M * block);
      Z = m_orthonormalize(V, Z, M);
      if (Z.cols() == 0) break;
      if (V.cols() + Z.cols() > ncv) Z.conservativeResize(Eigen::NoChange, ncv - V.cols());
      Eigen::MatrixXd grown(n, V.cols() + Z.cols());
      grown << V, Z;
      V.swap(grown);
      block = Z;
    }
    const Eigen::MatrixXd G = V.transpose() * (A * V);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (G + G.transpose()));
    const Eigen::Index got = std::min<Eigen::Index>(keep, V.cols());
    X = V * es.eigenvectors().leftCols(got);
    r.eigenvalues = es.eigenvalues().head(std::min(nev, got));
    r.eigenvectors = X.leftCols(r.eigenvalues.size());
    r.residuals = pair_residuals(A, M, r.eigenvalues, r.eigenvectors);
    r.iterations = it;
    if (r.eigenvalues.size() == nev && r.residuals.maxCoeff() <= tol) return r;
    V = m_orthonormalize(Eigen::MatrixXd(n, 0), X, M);
    // Continue from the least converged wanted Ritz vectors.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(r.residuals.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return r.residuals[a] > r.residuals[b]; });
    order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(bsize)));
    block.resize(n, static_cast<Eigen::Index>(order.size()));
    for (std::size_t j = 0; j < order.size(); ++j) block.col(static_cast<Eigen::Index>(j)) = X.col(order[j]);
  }
  throw NumericalError("shift-invert eigensolver did not converge after " +
                       std::to_string(opts.max_restarts) + " restarts (max residual " +
                       round_trip(r.residuals.size() ? r.residuals.maxCoeff() : -1.0) + ", tol " +
                       round_trip(tol) + ")");
}

}  // namespace detail

/// Lowest `count` generalized eigenpairs of (K + P, M).
inline SpectralResult eigen_low(const DiscreteOperator& op, std::size_t count, double tol = 1e-8,
                                const EigenOptions& opts = {}) {
  if (count > op.size()) throw PreconditionError("eigen_low: count exceeds the DOF count");
  if (count == 0) {
    SpectralResult r;
    r.method = "empty";
    r.eigenvectors.resize(static_cast<Eigen::Index>(op.size()), 0);
    return r;
  }
  bool dense = opts.method == EigenMethod::dense;
  if (opts.method == EigenMethod::automatic) {
    dense = op.size() < opts.dense_threshold || 2 * count + 16 > op.size();
  }
  SpectralResult r = dense ? detail::dense_solve(op, count) : detail::iterative_solve(op, count, tol, opts);
  r.tol = tol;
  if (r.residuals.size() && r.residuals.maxCoeff() > tol) {
    throw NumericalError("eigen_low: residual " + round_trip(r.residuals.maxCoeff()) +
                         " exceeds tol " + round_trip(tol) + " (" + r.method + ")");
  }
  return r;
}

/// Every eigenpair (dense).
inline SpectralResult eigen_all(const DiscreteOperator& op) {
  SpectralResult r = detail::dense_solve(op, op.size());
  r.tol = r.residuals.size() ? r.residuals.maxCoeff() : 0.0;
  return r;
}

/// Number of generalized eigenvalues strictly below E (negative inertia of A - E M).
inline std::size_t count_below(const DiscreteOperator& op, double E) {
  const SparseMatrix A = op.A();
  for (int attempt = 0; attempt < 8; ++attempt) {
    const double e = E + attempt * 1e-12 * std::max(1.0, std::abs(E));
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(A - e * op.M);
    if (ldlt.info() != Eigen::Success) continue;
    const Eigen::VectorXd d = ldlt.vectorD();
    if ((d.array() == 0.0).any()) continue;
    return static_cast<std::size_t>((d.array() < 0.0).count());
  }
  throw NumericalError("count_below: singular factorization at E = " + round_trip(E));
}

inline std::size_t count_in(const DiscreteOperator& op, double lo, double hi) {
  if (hi <= lo) return 0;
  const std::size_t a = count_below(op, lo);
  const std::size_t b = count_below(op, hi);
  return b > a ? b - a : 0;
}

/// Eigenpairs with eigenvalues in [lo, hi).
inline SpectralResult eigen_window(const DiscreteOperator& op, double lo, double hi,
                                   double tol = 1e-8, const EigenOptions& opts = {}) {
  const std::size_t below_hi = count_below(op, hi);
  SpectralResult all = eigen_low(op, below_hi, tol, opts);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < all.eigenvalues.size(); ++i) {
    if (all.eigenvalues[i] >= lo && all.eigenvalues[i] < hi) keep.push_back(i);
  }
  SpectralResult r;
  r.method = all.method;
  r.tol = all.tol;
  r.iterations = all.iterations;
  r.eigenvalues.resize(static_cast<Eigen::Index>(keep.size()));
  r.eigenvectors.resize(all.eigenvectors.rows(), static_cast<Eigen::Index>(keep.size()));
  r.residuals.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    r.eigenvalues[jj] = all.eigenvalues[keep[j]];
    r.eigenvectors.col(jj) = all.eigenvectors.col(keep[j]);
    r.residuals[jj] = all.residuals[keep[j]];
  }
  return r;
}

inline void write_spectrum_csv(std::ostream& os, const SpectralResult& r) {
  os << "index,eigenvalue,residual\n";
  for (Eigen::Index i = 0; i < r.eigenvalues.size(); ++i) {
    os << i << ',' << round_trip(r.eigenvalues[i]) << ','
       << round_trip(r.residuals.size() > i ? r.residuals[i] : 0.0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Secular-equation oracle

/// Dirichlet-to-Neumann data of one edge at energy E.
struct EdgeDtN {
  double diagonal = 0.0;
  double offdiagonal = 0.0;
  bool hyperbolic = false;
  /// k_e (trigonometric branch) or κ_e (hyperbolic branch).
  double wavenumber = 0.0;
  /// sin(k_e ℓ) on the trigonometric branch, 1 otherwise.
  double sin_k = 1.0;
};

/// With s = E - ω the entries are -k cot(kℓ) and k / sin(kℓ) for s > 0, and
/// their analytic continuation -κ coth(κℓ) and κ / sinh(κℓ) for s < 0, so the
/// vertex matrix is continuous in E through s = 0.
inline EdgeDtN edge_dtn(double E, double omega, double length = 1.0) {
  const double s = E - omega;
  const double x2 = s * length * length;
  EdgeDtN d;
  d.wavenumber = std::sqrt(std::abs(s));
  d.hyperbolic = s < 0;
  if (std::abs(x2) < 1e-4) {
    d.diagonal = (-1.0 + x2 / 3.0 + x2 * x2 / 45.0 + 2.0 * x2 * x2 * x2 / 945.0) / length;
    d.offdiagonal = (1.0 + x2 / 6.0 + 7.0 * x2 * x2 / 360.0 + 31.0 * x2 * x2 * x2 / 15120.0) / length;
    d.sin_k = s >= 0 ? std::sin(d.wavenumber * length) : 1.0;
    return d;
  }
  if (s > 0) {
    const double k = d.wavenumber;
    const double sk = std::sin(k * length);
    d.sin_k = sk;
    d.diagonal = -k * std::cos(k * length) / sk;
    d.offdiagonal = k / sk;
    return d;
  }
  const double x = d.wavenumber * length;
  const double q = std::exp(-2.0 * x);
  d.diagonal = -d.wavenumber * (1.0 + q) / (1.0 - q);
  d.offdiagonal = 2.0 * d.wavenumber * std::exp(-x) / (1.0 - q);
  return d;
}

/// Combinatorial skeleton of a metric graph with unit edges.
struct EdgeList {
  std::size_t num_vertices = 0;
  std::vector<std::array<std::size_t, 2>> ends;

  static EdgeList of(const LatticeGraph& g) {
    EdgeList l;
    l.num_vertices = g.num_vertices();
    l.ends.resize(g.num_edges());
    for (std::size_t e = 0; e < g.num_edges(); ++e) l.ends[e] = {g.tail(e), g.head(e)};
    return l;
  }
};

struct SecularSample {
  double energy = 0.0;
  std::vector<double> wavenumbers;
  std::vector<bool> hyperbolic;
  Eigen::MatrixXd matrix;
  double smallest_singular_value = 0.0;
  /// Some edge has |sin k_e| < 1e-8 (near a Dirichlet resonance).
  bool near_pole = false;
};

inline constexpr double kSecularPoleThreshold = 1e-8;

/// Vertex matrix M(E); M(E) a = 0 is the Kirchhoff condition on the exact edge solutions.
inline SecularSample secular_sample(const EdgeList& g, const std::vector<double>& omega, double E) {
  if (omega.size() != g.ends.size()) throw PreconditionError("secular_sample: omega size mismatch");
  SecularSample s;
  s.energy = E;
  const auto nv = static_cast<Eigen::Index>(g.num_vertices);
  s.matrix = Eigen::MatrixXd::Zero(nv, nv);
  s.wavenumbers.resize(g.ends.size());
  s.hyperbolic.resize(g.ends.size());
  for (std::size_t e = 0; e < g.ends.size(); ++e) {
    const EdgeDtN d = edge_dtn(E, omega[e]);
    const auto a = static_cast<Eigen::Index>(g.ends[e][0]);
    const auto b = static_cast<Eigen::Index>(g.ends[e][1]);
    s.matrix(a, a) += d.diagonal;
    s.matrix(b, b) += d.diagonal;
    s.matrix(a, b) += d.offdiagonal;
    s.matrix(b, a) += d.offdiagonal;
    s.wavenumbers[e] = d.wavenumber;
    s.hyperbolic[e] = d.hyperbolic;
    if (!d.hyperbolic && std::abs(d.sin_k) < kSecularPoleThreshold) s.near_pole = true;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.matrix, Eigen::EigenvaluesOnly);
  s.smallest_singular_value = es.eigenvalues().cwiseAbs().minCoeff();
  return s;
}

inline SecularSample secular_sample(const LatticeGraph& g, const PotentialConfig& omega, double E) {
  return secular_sample(EdgeList::of(g), omega.values, E);
}

namespace detail {

// #{n >= 1 : ω + (nπ/ℓ)² < E} for s = E - ω.
inline std::size_t dirichlet_below(double s, double length) {
  if (s <= 0) return 0;
  auto n = static_cast<std::size_t>(std::floor(std::sqrt(s) * length / std::numbers::pi));
  while (n >= 1) {
    const double kn = static_cast<double>(n) * std::numbers::pi / length;
    if (kn * kn < s) break;
    --n;
  }
  return n;
}

}  // namespace detail

/// Below this |sin(k_e)| an edge is split before counting.
inline constexpr double kSecularSplitThreshold = 1e-2;

/// Exact eigenvalue count N(E) = #{λ < E}: the form h - E splits into its
/// vertex part (quadratic form -M(E) on vertex values) and the edge-wise
/// Dirichlet parts, whose eigenvalues are ω_e + (nπ/ℓ)², n >= 1.
///
/// Near a Dirichlet resonance the entries of M(E) grow like 1/sin(k_e) and
/// the sign of the small eigenvalue is lost to cancellation. Such an edge is
/// split by an extra degree-2 vertex at an irrational ratio, which leaves the
/// operator unchanged and moves the poles away from E.
inline std::size_t secular_count(const EdgeList& g, const std::vector<double>& omega, double E,
                                 bool* pole_flag = nullptr) {
  if (omega.size() != g.ends.size()) throw PreconditionError("secular_count: omega size mismatch");
  static constexpr double kRatios[] = {0.70710678118654752, 0.38196601125010515,
                                       0.41421356237309505, 0.2679491924311227};
  struct Piece {
    std::size_t a, b;
    double length;
    double omega;
  };
  std::vector<Piece> pieces;
  pieces.reserve(2 * g.ends.size());
  std::size_t nv = g.num_vertices;
  for (std::size_t e = 0; e < g.ends.size(); ++e) {
    const double s = E - omega[e];
    const double k = std::sqrt(std::max(s, 0.0));
    if (s > 0 && std::abs(std::sin(k)) < kSecularSplitThreshold) {
      if (pole_flag && std::abs(std::sin(k)) < kSecularPoleThreshold) *pole_flag = true;
      double best_ratio = kRatios[0];
      double best = -1.0;
      for (double r : kRatios) {
        const double q = std::min(std::abs(std::sin(k * r)), std::abs(std::sin(k * (1.0 - r))));
        if (q > best) {
          best = q;
          best_ratio = r;
        }
      }
      const std::size_t mid = nv++;
      pieces.push_back({g.ends[e][0], mid, best_ratio, omega[e]});
      pieces.push_back({mid, g.ends[e][1], 1.0 - best_ratio, omega[e]});
    } else {
      pieces.push_back({g.ends[e][0], g.ends[e][1], 1.0, omega[e]});
    }
  }
  const auto n = static_cast<Eigen::Index>(nv);
  Eigen::MatrixXd mat = Eigen::MatrixXd::Zero(n, n);
  std::size_t count = 0;
  for (const Piece& p : pieces) {
    const EdgeDtN d = edge_dtn(E, p.omega, p.length);
    const auto a = static_cast<Eigen::Index>(p.a);
    const auto b = static_cast<Eigen::Index>(p.b);
    mat(a, a) += d.diagonal;
    mat(b, b) += d.diagonal;
    mat(a, b) += d.offdiagonal;
    mat(b, a) += d.offdiagonal;
    count += detail::dirichlet_below(E - p.omega, p.length);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mat, Eigen::EigenvaluesOnly);
  count += static_cast<std::size_t>((es.eigenvalues().array() > 0.0).count());
  return count;
}

struct SecularEigenvalue {
  double value = 0.0;
  std::size_t multiplicity = 1;
  /// The eigenvalue sits within the resonance threshold of some ω_e + n²π².
  bool pole_flag = false;
};

inline constexpr std::size_t kSecularMaxVertices = 400;

/// All eigenvalues in [lo, hi]: scan N(E) on a 0.01 grid, bisect each jump to
/// 1e-10; the jump size is the multiplicity.
inline std::vector<SecularEigenvalue> secular_eigenvalues(const EdgeList& g,
                                                          const std::vector<double>& omega,
                                                          double lo, double hi, double step = 0.01,
                                                          double tol = 1e-10) {
  if (g.num_vertices > kSecularMaxVertices) {
    throw PreconditionError("secular_eigenvalues: graph too large for the vertex-matrix oracle");
  }
  if (!(hi > lo)) throw PreconditionError("secular_eigenvalues: empty window");
  std::vector<SecularEigenvalue> out;
  // Evaluate just outside the window so eigenvalues on its ends are kept.
  const double a0 = lo - 10 * tol;
  const double b0 = hi + 10 * tol;
  std::function<void(double, double, std::size_t, std::size_t)> refine =
      [&](double a, double b, std::size_t na, std::size_t nb) {
        if (nb <= na) return;
        if (b - a <= tol) {
          const double x = 0.5 * (a + b);
          bool flag = false;
          for (double w : omega) {
            if (x > w && std::abs(std::sin(std::sqrt(x - w))) < kSecularPoleThreshold) flag = true;
          }
          out.push_back(SecularEigenvalue{x, nb - na, flag});
          return;
        }
        const double mid = 0.5 * (a + b);
        const std::size_t nm = secular_count(g, omega, mid);
        refine(a, mid, na, nm);
        refine(mid, b, nm, nb);
      };
  double a = a0;
  std::size_t na = secular_count(g, omega, a);
  while (a < b0) {
    const double b = std::min(b0, a + step);
    const std::size_t nb = secular_count(g, omega, b);
    refine(a, b, na, nb);
    a = b;
    na = nb;
  }
  return out;
}

inline std::vector<SecularEigenvalue> secular_eigenvalues(const LatticeGraph& g,
                                                          const PotentialConfig& omega, double lo,
                                                          double hi, double step = 0.01,
                                                          double tol = 1e-10) {
  return secular_eigenvalues(EdgeList::of(g), omega.values, lo, hi, step, tol);
}

/// Eigenvalues with multiplicity, ascending.
inline std::vector<double> flatten(const std::vector<SecularEigenvalue>& roots) {
  std::vector<double> v;
  for (const auto& r : roots) v.insert(v.end(), r.multiplicity, r.value);
  return v;
}

// ---------------------------------------------------------------------------
// Heat semigroup

struct SemigroupNorm {
  double t = 0.0;
  double value = 0.0;
  /// Estimated omitted part of sup_x Σ_n e^{-2tλ_n} φ_n(x)², relative to value².
  double truncation = 0.0;
  bool certified = false;
  std::size_t argmax = 0;
};

/// L2 -> L∞ norm of e^{-tH} on the box: sup_x (Σ_n e^{-2tλ_n} φ_n(x)²)^{1/2}.
/// The omitted tail is bounded with Weyl's law: eigenfunctions beyond the
/// computed range contribute at most (1/π) ∫_{λ_N}^∞ e^{-2tλ} λ^{-1/2} dλ.
inline SemigroupNorm semigroup_sup_norm(const SpectralResult& r, double t) {
  if (!(t > 0.0)) throw PreconditionError("semigroup_sup_norm: t must be positive");
  if (r.size() == 0) throw PreconditionError("semigroup_sup_norm: no eigenpairs");
  SemigroupNorm s;
  s.t = t;
  const Eigen::ArrayXd w = (-2.0 * t * r.eigenvalues.array()).exp();
  const Eigen::VectorXd rows = r.eigenvectors.array().square().matrix() * w.matrix();
  Eigen::Index arg = 0;
  const double best = rows.maxCoeff(&arg);
  s.value = std::sqrt(best);
  s.argmax = static_cast<std::size_t>(arg);
  if (r.complete) {
    s.truncation = 0.0;
  } else {
    const double lam = std::max(r.eigenvalues[r.eigenvalues.size() - 1], 0.0);
    const double tail =
        std::sqrt(std::numbers::pi / (2.0 * t)) / std::numbers::pi * std::erfc(std::sqrt(2.0 * t * lam));
    s.truncation = tail / best;
  }
  s.certified = std::sqrt(1.0 + s.truncation) - 1.0 < 0.01;
  return s;
}

}  // namespace qgloc
