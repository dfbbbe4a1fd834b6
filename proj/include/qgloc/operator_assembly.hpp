#pragma once

// P1 finite-element discretization of the edge form
//   h(f, g) = Σ_e (f_e' | g_e') + ω_e (f_e | g_e)
// on a box graph. Kirchhoff mode shares vertex DOFs (continuity, with the
// Kirchhoff and Neumann conditions arising as natural conditions); decoupled
// mode gives every edge its own Neumann interval.

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "qgloc/errors.hpp"
#include "qgloc/format.hpp"
#include "qgloc/lattice_graph.hpp"
#include "qgloc/randomness.hpp"

namespace qgloc {

using SparseMatrix = Eigen::SparseMatrix<double>;

enum class CouplingMode { kirchhoff, decoupled };

inline std::string to_string(CouplingMode m) {
  return m == CouplingMode::kirchhoff ? "kirchhoff" : "decoupled";
}

struct DiscreteOperator {
  SparseMatrix K;
  SparseMatrix M;
  SparseMatrix P;
  int m = 2;
  CouplingMode mode = CouplingMode::kirchhoff;
  LatticeBox box{};
  std::size_t num_edges = 0;
  std::size_t num_vertices = 0;
  /// Coupling constants the operator was assembled with (shifted by shift_potential).
  std::vector<double> omega;
  /// Global index of local node j on edge e at edge_nodes[e * (m + 1) + j].
  std::vector<std::size_t> edge_nodes;
  std::vector<GraphPoint> dof_points;
  std::vector<Eigen::Vector3d> dof_positions;

  std::size_t size() const { return dof_positions.size(); }
  double h() const { return 1.0 / m; }
  std::size_t node(std::size_t e, int j) const {
    return edge_nodes[e * static_cast<std::size_t>(m + 1) + static_cast<std::size_t>(j)];
  }
  /// K + P, the matrix of h_ω.
  SparseMatrix A() const { return K + P; }
  double min_omega() const { return *std::min_element(omega.begin(), omega.end()); }
};

inline std::size_t expected_dof_count(const LatticeGraph& g, int m, CouplingMode mode) {
  const auto fm = static_cast<std::size_t>(m);
  return mode == CouplingMode::kirchhoff ? g.num_edges() * (fm - 1) + g.num_vertices()
                                         : g.num_edges() * (fm + 1);
}

inline DiscreteOperator assemble(const LatticeGraph& g, const PotentialConfig& omega, int m,
                                 CouplingMode mode = CouplingMode::kirchhoff) {
  if (m < 2) throw ParameterError("assemble: need m >= 2 sub-intervals per edge");
  if (!(omega.box == g.box()) || omega.values.size() != g.num_edges()) {
    throw PreconditionError("assemble: potential configuration belongs to a different graph");
  }
  DiscreteOperator op;
  op.m = m;
  op.mode = mode;
  op.box = g.box();
  op.num_edges = g.num_edges();
  op.num_vertices = g.num_vertices();
  op.omega = omega.values;

  const std::size_t ne = g.num_edges();
  const std::size_t per = static_cast<std::size_t>(m) + 1;
  const std::size_t n = expected_dof_count(g, m, mode);
  op.edge_nodes.resize(ne * per);
  op.dof_points.resize(n);
  op.dof_positions.resize(n);

  if (mode == CouplingMode::kirchhoff) {
    for (std::size_t v = 0; v < g.num_vertices(); ++v) {
      const std::size_t e = g.incident(v).front();
      op.dof_points[v] = GraphPoint{e, g.tail(e) == v ? 0.0 : 1.0};
      op.dof_positions[v] = g.vertex_position(v);
    }
  }
  for (std::size_t e = 0; e < ne; ++e) {
    for (int j = 0; j <= m; ++j) {
      std::size_t idx;
      if (mode == CouplingMode::decoupled) {
        idx = e * per + static_cast<std::size_t>(j);
      } else if (j == 0) {
        idx = g.tail(e);
      } else if (j == m) {
        idx = g.head(e);
      } else {
        idx = g.num_vertices() + e * static_cast<std::size_t>(m - 1) + static_cast<std::size_t>(j - 1);
      }
      op.edge_nodes[e * per + static_cast<std::size_t>(j)] = idx;
      if (mode == CouplingMode::decoupled || (j > 0 && j < m)) {
        const GraphPoint p{e, static_cast<double>(j) / m};
        op.dof_points[idx] = p;
        op.dof_positions[idx] = g.position(p);
      }
    }
  }

  const double h = 1.0 / m;
  std::vector<Eigen::Triplet<double>> tk, tm, tp;
  tk.reserve(4 * ne * static_cast<std::size_t>(m));
  tm.reserve(tk.capacity());
  tp.reserve(tk.capacity());
  for (std::size_t e = 0; e < ne; ++e) {
    const double w = omega.values[e];
    for (int j = 0; j < m; ++j) {
      const std::size_t a = op.node(e, j);
      const std::size_t b = op.node(e, j + 1);
      const std::size_t idx[2] = {a, b};
      for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) {
          const double kval = (r == c ? 1.0 : -1.0) / h;
          const double mval = (r == c ? 2.0 : 1.0) * h / 6.0;
          tk.emplace_back(idx[r], idx[c], kval);
          tm.emplace_back(idx[r], idx[c], mval);
          tp.emplace_back(idx[r], idx[c], w * mval);
        }
      }
    }
  }
  const auto nn = static_cast<Eigen::Index>(n);
  op.K.resize(nn, nn);
  op.M.resize(nn, nn);
  op.P.resize(nn, nn);
  op.K.setFromTriplets(tk.begin(), tk.end());
  op.M.setFromTriplets(tm.begin(), tm.end());
  op.P.setFromTriplets(tp.begin(), tp.end());
  return op;
}

/// P <- P + t M; generalized eigenvalues move by exactly t.
inline DiscreteOperator shift_potential(const DiscreteOperator& op, double t) {
  DiscreteOperator out = op;
  if (t != 0.0) {
    out.P = op.P + t * op.M;
    for (double& w : out.omega) w += t;
  }
  return out;
}

/// Nodal values of a scalar function on the graph.
inline Eigen::VectorXd dof_weight(const DiscreteOperator& op,
                                  const std::function<double(const Eigen::Vector3d&)>& f) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(op.size()));
  for (std::size_t i = 0; i < op.size(); ++i) {
    const double v = f(op.dof_positions[i]);
    if (!std::isfinite(v)) throw PreconditionError("dof_weight: weight is not finite");
    w[static_cast<Eigen::Index>(i)] = v;
  }
  return w;
}

/// Diagonal nodal multiplication f -> w f; self-adjoint for the lumped
/// pairing and used on both sides of M-inner products.
inline Eigen::VectorXd apply_weight(const Eigen::VectorXd& weight, const Eigen::VectorXd& f) {
  if (weight.size() != f.size()) throw PreconditionError("apply_weight: size mismatch");
  return weight.cwiseProduct(f);
}

/// Indicator of the closed region covered by `edges`: every DOF on one of
/// those edges, endpoints included.
inline Eigen::VectorXd dof_mask(const DiscreteOperator& op, const EdgeSet& edges) {
  Eigen::VectorXd mask = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(op.size()));
  for (std::size_t e : edges) {
    if (e >= op.num_edges) throw PreconditionError("dof_mask: edge index out of range");
    for (int j = 0; j <= op.m; ++j) mask[static_cast<Eigen::Index>(op.node(e, j))] = 1.0;
  }
  return mask;
}

inline Eigen::VectorXd dof_mask(const DiscreteOperator& op, const LatticeGraph& g,
                                const GraphRegion& region) {
  return dof_mask(op, region_mask(g, region));
}

/// ‖f‖² restricted to the given edges, integrated exactly for P1 functions.
inline double edge_l2_squared(const DiscreteOperator& op, const Eigen::VectorXd& f,
                              const EdgeSet& edges) {
  const double h = op.h();
  double s = 0.0;
  for (std::size_t e : edges) {
    for (int j = 0; j < op.m; ++j) {
      const double a = f[static_cast<Eigen::Index>(op.node(e, j))];
      const double b = f[static_cast<Eigen::Index>(op.node(e, j + 1))];
      s += h / 3.0 * (a * a + a * b + b * b);
    }
  }
  return s;
}

/// ‖f'‖² restricted to the given edges.
inline double edge_derivative_squared(const DiscreteOperator& op, const Eigen::VectorXd& f,
                                      const EdgeSet& edges) {
  const double h = op.h();
  double s = 0.0;
  for (std::size_t e : edges) {
    for (int j = 0; j < op.m; ++j) {
      const double d = f[static_cast<Eigen::Index>(op.node(e, j + 1))] -
                       f[static_cast<Eigen::Index>(op.node(e, j))];
      s += d * d / h;
    }
  }
  return s;
}

/// ‖χ_{Λ_1(x)} f‖ for every lattice vertex x: the unit cube around x meets
/// Γ in the half-edges adjacent to x. Needs even m so half-edges are unions
/// of elements.
inline std::vector<double> cell_profile(const DiscreteOperator& op, const LatticeGraph& g,
                                        const Eigen::VectorXd& f) {
  if (op.m % 2 != 0) throw PreconditionError("cell_profile: needs an even number of sub-intervals");
  const double h = op.h();
  const int half = op.m / 2;
  std::vector<double> sq(g.num_vertices(), 0.0);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    for (int j = 0; j < op.m; ++j) {
      const double a = f[static_cast<Eigen::Index>(op.node(e, j))];
      const double b = f[static_cast<Eigen::Index>(op.node(e, j + 1))];
      const double part = h / 3.0 * (a * a + a * b + b * b);
      sq[j < half ? g.tail(e) : g.head(e)] += part;
    }
  }
  for (double& v : sq) v = std::sqrt(v);
  return sq;
}

/// Index of every DOF of `inner` inside the DOF numbering of `outer`. Both
/// operators must share m and kirchhoff mode, and inner's box must lie in outer's.
inline std::vector<std::size_t> dof_embedding(const DiscreteOperator& inner, const LatticeGraph& gi,
                                              const DiscreteOperator& outer,
                                              const LatticeGraph& go) {
  if (inner.m != outer.m || inner.mode != CouplingMode::kirchhoff ||
      outer.mode != CouplingMode::kirchhoff) {
    throw PreconditionError("dof_embedding: operators need equal m and kirchhoff coupling");
  }
  std::vector<std::size_t> map(inner.size());
  for (std::size_t e = 0; e < gi.num_edges(); ++e) {
    const auto eo = go.find_edge(gi.edge(e));
    if (!eo) throw GraphError("dof_embedding: inner box is not contained in outer box");
    for (int j = 0; j <= inner.m; ++j) map[inner.node(e, j)] = outer.node(*eo, j);
  }
  return map;
}

/// Symmetric sparse matrix in MatrixMarket coordinate format, full precision.
inline void write_matrix_market(std::ostream& os, const SparseMatrix& A) {
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n';
  for (Eigen::Index k = 0; k < A.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
      os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << round_trip(it.value()) << '\n';
    }
  }
}

}  // namespace qgloc
