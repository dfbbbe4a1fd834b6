#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

#include "qgloc/operator_assembly.hpp"
#include "qgloc/spectral_engine.hpp"

using namespace qgloc;

namespace {

constexpr double kPi2 = std::numbers::pi * std::numbers::pi;

Eigen::VectorXd dense_eigenvalues(const DiscreteOperator& op) {
  return eigen_all(op).eigenvalues;
}

}  // namespace

TEST(OperatorAssembly, SingleEdgeTwoElements) {
  const LatticeGraph g(LatticeBox{1, {}, 2});
  // One edge via a decoupled pair; the spectrum is that of one interval twice.
  const auto op = assemble(g, constant_config(g, 0.0), 2, CouplingMode::decoupled);
  EXPECT_EQ(op.size(), 6u);
  const auto ev = dense_eigenvalues(op);
  EXPECT_NEAR(ev[0], 0.0, 1e-12);
  EXPECT_NEAR(ev[1], 0.0, 1e-12);
  EXPECT_NEAR(ev[2], 12.0, 1e-10);
  EXPECT_NEAR(ev[3], 12.0, 1e-10);
}

TEST(OperatorAssembly, DofCounts) {
  for (int d = 1; d <= 3; ++d) {
    const LatticeGraph g(LatticeBox{d, {}, 2});
    for (int m : {2, 5, 8}) {
      const auto k = assemble(g, constant_config(g, 1.0), m, CouplingMode::kirchhoff);
      EXPECT_EQ(k.size(), g.num_edges() * (m - 1) + g.num_vertices());
      const auto dc = assemble(g, constant_config(g, 1.0), m, CouplingMode::decoupled);
      EXPECT_EQ(dc.size(), g.num_edges() * (m + 1));
    }
  }
}

TEST(OperatorAssembly, RejectsBadInput) {
  const LatticeGraph g(LatticeBox{1, {}, 4});
  const LatticeGraph other(LatticeBox{1, {}, 6});
  EXPECT_THROW(assemble(g, constant_config(g, 0.0), 1), ParameterError);
  EXPECT_THROW(assemble(g, constant_config(other, 0.0), 4), PreconditionError);
}

TEST(OperatorAssembly, MatrixProperties) {
  const LatticeGraph g(LatticeBox{2, {}, 2});
  const auto omega = sample_config(g, SingleSiteMeasure::uniform(0, 3), 1, 0);
  const auto op = assemble(g, omega, 4);
  for (const SparseMatrix* X : {&op.K, &op.M, &op.P}) {
    EXPECT_NEAR((Eigen::MatrixXd(*X) - Eigen::MatrixXd(X->transpose())).norm(), 0.0, 1e-14);
  }
  Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(op.M)};
  EXPECT_EQ(llt.info(), Eigen::Success);
  // Kernel of K is the constants.
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(op.K),
                                                               Eigen::MatrixXd(op.M)};
  EXPECT_NEAR(es.eigenvalues()[0], 0.0, 1e-10);
  EXPECT_GT(es.eigenvalues()[1], 1e-3);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(op.size()));
  EXPECT_NEAR((op.K * one).norm(), 0.0, 1e-12);
}

TEST(OperatorAssembly, Sparsity) {
  const LatticeGraph g(LatticeBox{2, {}, 4});
  const auto op = assemble(g, constant_config(g, 0.5), 6);
  const SparseMatrix A = op.A();
  Eigen::VectorXi row = Eigen::VectorXi::Zero(A.rows());
  Eigen::VectorXi col = Eigen::VectorXi::Zero(A.rows());
  for (Eigen::Index k = 0; k < A.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
      row[it.row()]++;
      col[it.col()]++;
    }
  }
  for (std::size_t v = 0; v < g.num_vertices(); ++v) {
    const auto i = static_cast<Eigen::Index>(v);
    const int deg = static_cast<int>(g.degree(v));
    EXPECT_EQ(row[i], deg + 1);
    // Row plus column stencil of the symmetric matrix, diagonal counted once.
    EXPECT_EQ(row[i] + col[i] - 1, 2 * deg + 1);
  }
  for (std::size_t i = g.num_vertices(); i < op.size(); ++i) {
    EXPECT_EQ(row[static_cast<Eigen::Index>(i)], 3);
  }
}

TEST(OperatorAssembly, ConstantPotentialGroundState) {
  const LatticeGraph g(LatticeBox{2, {1, -1, 0}, 4});
  const auto op = assemble(g, constant_config(g, 2.75), 4);
  const auto r = eigen_low(op, 3);
  EXPECT_NEAR(r.eigenvalues[0], 2.75, 1e-10);
  const Eigen::VectorXd v = r.eigenvectors.col(0);
  EXPECT_NEAR((v.array() - v[0]).abs().maxCoeff(), 0.0, 1e-9);
}

TEST(OperatorAssembly, TwoEdgeChainIsLengthTwoInterval) {
  const LatticeGraph g(LatticeBox{1, {}, 2});
  const auto op = assemble(g, constant_config(g, 0.0), 32);
  const auto ev = eigen_low(op, 4).eigenvalues;
  for (int n = 0; n < 4; ++n) {
    const double exact = n * n * kPi2 / 4.0;
    EXPECT_NEAR(ev[n], exact, 1e-10 + 2e-3 * exact) << n;
  }
}

TEST(OperatorAssembly, FemConvergenceOrder) {
  const LatticeGraph g(LatticeBox{1, {}, 2});
  std::vector<double> err;
  for (int m : {8, 16, 32, 64}) {
    const auto op = assemble(g, constant_config(g, 0.0), m, CouplingMode::decoupled);
    // Decoupled pair: λ_0 = λ_1 = 0, λ_2 = λ_3 ≈ π².
    err.push_back(std::abs(eigen_low(op, 3).eigenvalues[2] - kPi2));
  }
  for (std::size_t i = 1; i < err.size(); ++i) {
    const double order = std::log2(err[i - 1] / err[i]);
    EXPECT_GE(order, 1.8);
    EXPECT_LE(order, 2.2);
  }
}

TEST(OperatorAssembly, ShiftIdentityIsExactAtMatrixLevel) {
  const LatticeGraph g(LatticeBox{2, {}, 4});
  const auto omega = sample_config(g, SingleSiteMeasure::uniform(0, 2), 5, 1);
  const auto op = assemble(g, omega, 4);
  EXPECT_EQ((shift_potential(op, 0.0).P - op.P).norm(), 0.0);
  PotentialConfig shifted = omega;
  for (double& w : shifted.values) w += 1.0;
  const auto direct = assemble(g, shifted, 4);
  const auto via = shift_potential(op, 1.0);
  EXPECT_LE((direct.P - via.P).norm(), 1e-14 * direct.P.norm());
  const auto e0 = dense_eigenvalues(op);
  const auto e1 = dense_eigenvalues(via);
  for (Eigen::Index i = 0; i < e0.size(); ++i) {
    EXPECT_NEAR(e1[i], e0[i] + 1.0, 1e-10 * std::abs(e0[i] + 1.0));
  }
  const auto down = shift_potential(op, -omega.min());
  EXPECT_NEAR(dense_eigenvalues(down)[0], e0[0] - omega.min(), 1e-10);
}

TEST(OperatorAssembly, MinMaxMonotonicity) {
  const LatticeGraph g(LatticeBox{2, {}, 2});
  const auto mu = SingleSiteMeasure::uniform(0, 2);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto omega = sample_config(g, mu, 77, s);
    const auto before = dense_eigenvalues(assemble(g, omega, 4));
    const std::size_t e = s % g.num_edges();
    omega.values[e] += 0.1 + 0.05 * static_cast<double>(s);
    const auto after = dense_eigenvalues(assemble(g, omega, 4));
    for (Eigen::Index i = 0; i < before.size(); ++i) {
      EXPECT_GE(after[i], before[i] - 1e-9 * std::max(1.0, std::abs(before[i])));
    }
  }
}

TEST(OperatorAssembly, GroundStateLowerBound) {
  const LatticeGraph g(LatticeBox{2, {}, 4});
  const auto mu = SingleSiteMeasure::uniform(0, 1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto omega = sample_config_conditioned(g, mu, 0.3, 9, s);
    const auto r = eigen_low(assemble(g, omega, 4), 1);
    EXPECT_GE(r.eigenvalues[0], omega.min() - 1e-12);
    EXPECT_GE(r.eigenvalues[0], 0.3);
  }
}

TEST(OperatorAssembly, DecoupledDominatedByKirchhoff) {
  const LatticeGraph g(LatticeBox{2, {}, 2});
  const auto mu = SingleSiteMeasure::uniform(0.5, 2);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto omega = sample_config(g, mu, 3, s);
    const auto kir = dense_eigenvalues(assemble(g, omega, 4, CouplingMode::kirchhoff));
    const auto dec =
        dense_eigenvalues(assemble(g, constant_config(g, mu.q_minus), 4, CouplingMode::decoupled));
    for (Eigen::Index i = 0; i < kir.size(); ++i) EXPECT_GE(kir[i], dec[i] - 1e-9);
  }
}

TEST(OperatorAssembly, WeightsAndMasks) {
  const LatticeGraph g(LatticeBox{2, {}, 4});
  const auto op = assemble(g, constant_config(g, 0.0), 4);
  const auto n = static_cast<Eigen::Index>(op.size());
  const Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(n, -1.0, 2.0);
  const auto one = dof_weight(op, [](const Eigen::Vector3d&) { return 1.0; });
  EXPECT_EQ(apply_weight(one, f), f);
  const auto flat = dof_weight(op, [](const Eigen::Vector3d&) { return std::exp(-0.0 * 3.0); });
  EXPECT_EQ(apply_weight(flat, f), f);

  const LatticeBox sub{2, {1, 1, 0}, 2};
  const EdgeSet edges = edges_within(g, sub);
  const Eigen::VectorXd mask = dof_mask(op, edges);
  const auto indicator =
      dof_weight(op, [&](const Eigen::Vector3d& x) { return sub.contains(x) ? 1.0 : 0.0; });
  EXPECT_EQ(mask, indicator);
  EXPECT_THROW(dof_weight(op, [](const Eigen::Vector3d&) { return INFINITY; }), PreconditionError);
}

TEST(OperatorAssembly, ElementNormsMatchMassMatrix) {
  const LatticeGraph g(LatticeBox{2, {}, 4});
  const auto op = assemble(g, constant_config(g, 0.0), 6);
  Eigen::VectorXd f(static_cast<Eigen::Index>(op.size()));
  for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = std::sin(0.37 * static_cast<double>(i));
  const EdgeSet all = region_mask(g, GraphRegion::full());
  EXPECT_NEAR(edge_l2_squared(op, f, all), f.dot(op.M * f), 1e-12);
  EXPECT_NEAR(edge_derivative_squared(op, f, all), f.dot(op.K * f), 1e-10);
  const auto cells = cell_profile(op, g, f);
  double total = 0.0;
  for (double c : cells) total += c * c;
  EXPECT_NEAR(total, f.dot(op.M * f), 1e-12);
}

TEST(OperatorAssembly, DofEmbeddingKeepsPositions) {
  const LatticeGraph outer(LatticeBox{2, {}, 6});
  const LatticeGraph inner(LatticeBox{2, {1, 0, 0}, 2});
  const auto oo = assemble(outer, constant_config(outer, 0.0), 4);
  const auto oi = assemble(inner, constant_config(inner, 0.0), 4);
  const auto map = dof_embedding(oi, inner, oo, outer);
  for (std::size_t i = 0; i < map.size(); ++i) {
    EXPECT_NEAR((oi.dof_positions[i] - oo.dof_positions[map[i]]).norm(), 0.0, 1e-14);
  }
}

TEST(OperatorAssembly, MatrixMarketExport) {
  const LatticeGraph g(LatticeBox{1, {}, 2});
  const auto op = assemble(g, constant_config(g, 1.0 / 3.0), 2);
  std::ostringstream os;
  write_matrix_market(os, op.P);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "%%MatrixMarket matrix coordinate real general");
  long rows, cols, nnz;
  is >> rows >> cols >> nnz;
  EXPECT_EQ(rows, 5);
  EXPECT_EQ(nnz, op.P.nonZeros());
  Eigen::MatrixXd back = Eigen::MatrixXd::Zero(rows, cols);
  for (long k = 0; k < nnz; ++k) {
    long r, c;
    double v;
    is >> r >> c >> v;
    back(r - 1, c - 1) = v;
  }
  EXPECT_EQ(back, Eigen::MatrixXd(op.P));
}
