#include <gtest/gtest.h>

#include <random>
#include <set>
#include <tuple>

#include "qgloc/lattice_graph.hpp"

using namespace qgloc;

namespace {

LatticeBox make_box(int d, int side, Site center = {}) { return LatticeBox{d, center, side}; }

// Counts unit lattice segments of the closed box by scanning every segment
// between neighbouring lattice points of a larger enclosing grid.
std::size_t enumerate_edges(int d, int side) {
  const int half = side / 2;
  std::size_t count = 0;
  const int lo = -half - 1, hi = half + 1;
  std::vector<int> x(3, 0);
  std::function<void(int)> rec = [&](int k) {
    if (k == d) {
      for (int dir = 0; dir < d; ++dir) {
        bool inside = true;
        for (int j = 0; j < d; ++j) {
          const int a = x[j];
          const int b = x[j] + (j == dir ? 1 : 0);
          if (a < -half || b > half) inside = false;
        }
        if (inside) ++count;
      }
      return;
    }
    for (int v = lo; v <= hi; ++v) {
      x[k] = v;
      rec(k + 1);
    }
  };
  rec(0);
  return count;
}

double brute_force_distance(const LatticeGraph& g, std::size_t e1, std::size_t e2, int samples,
                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double best = std::numeric_limits<double>::infinity();
  const int side = static_cast<int>(std::sqrt(static_cast<double>(samples)));
  for (int i = 0; i <= side; ++i) {
    for (int j = 0; j <= side; ++j) {
      const double s = static_cast<double>(i) / side;
      const double t = static_cast<double>(j) / side;
      best = std::min(best, (g.position({e1, s}) - g.position({e2, t})).norm());
    }
  }
  for (int i = 0; i < samples; ++i) {
    best = std::min(best, (g.position({e1, u(rng)}) - g.position({e2, u(rng)})).norm());
  }
  return best;
}

}  // namespace

TEST(LatticeGraph, LineOfTwoSegments) {
  const LatticeGraph g(make_box(1, 2));
  EXPECT_EQ(g.num_edges(), 2u);
  EXPECT_EQ(g.num_vertices(), 3u);
  EXPECT_EQ(g.boundary_vertices().size(), 2u);
}

TEST(LatticeGraph, TwoByTwoSquare) {
  const LatticeGraph g(make_box(2, 2));
  EXPECT_EQ(g.num_edges(), 12u);
  EXPECT_EQ(g.num_vertices(), 9u);
  EXPECT_EQ(g.boundary_vertices().size(), 8u);
}

TEST(LatticeGraph, EdgeCountMatchesEnumeration) {
  for (int d = 1; d <= 3; ++d) {
    for (int side = 2; side <= 20; side += 2) {
      if (d == 3 && side > 12) continue;  // keeps the cubic scan cheap
      const LatticeGraph g(make_box(d, side));
      EXPECT_EQ(g.num_edges(), enumerate_edges(d, side)) << "d=" << d << " L=" << side;
      EXPECT_EQ(g.num_edges(), closed_form_edge_count(d, side));
      EXPECT_LE(g.num_edges(), static_cast<std::size_t>(d * std::pow(side + 1, d)));
    }
  }
  // The closed box slightly exceeds d |Λ| for d >= 2.
  EXPECT_GT(closed_form_edge_count(2, 10), static_cast<std::size_t>(2 * 100));
}

TEST(LatticeGraph, DegreeBookkeeping) {
  for (int d = 1; d <= 3; ++d) {
    const LatticeGraph g(make_box(d, 6, Site{1, d > 1 ? -2 : 0, d > 2 ? 3 : 0}));
    std::size_t total = 0;
    for (std::size_t v = 0; v < g.num_vertices(); ++v) {
      total += g.degree(v);
      if (!g.is_boundary(v)) {
        EXPECT_EQ(g.degree(v), static_cast<std::size_t>(2 * d));
      }
    }
    EXPECT_EQ(total, 2 * g.num_edges());
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      ASSERT_LT(g.tail(e), g.num_vertices());
      ASSERT_LT(g.head(e), g.num_vertices());
      const Site a = g.vertex(g.tail(e));
      const Site b = g.vertex(g.head(e));
      const int k = g.edge(e).direction;
      for (int j = 0; j < 3; ++j) EXPECT_EQ(b[j] - a[j], j == k ? 1 : 0);
      EXPECT_EQ(*g.find_edge(g.edge(e)), e);
    }
  }
}

TEST(LatticeGraph, RejectsInvalidBoxes) {
  EXPECT_THROW(LatticeGraph(make_box(1, 0)), GraphError);
  EXPECT_THROW(LatticeGraph(make_box(1, -4)), GraphError);
  EXPECT_THROW(LatticeGraph(make_box(4, 2)), GraphError);
  EXPECT_THROW(LatticeGraph(make_box(0, 2)), GraphError);
  EXPECT_THROW(LatticeGraph(make_box(2, 3)), GraphError);
  EXPECT_THROW(LatticeGraph(make_box(3, 2), 2), GraphError);
}

TEST(LatticeGraph, SuitablePredicate) {
  EXPECT_TRUE(is_suitable(42));
  EXPECT_TRUE(is_suitable(54));
  EXPECT_FALSE(is_suitable(48));
  EXPECT_FALSE(is_suitable(30));
  EXPECT_FALSE(is_suitable(44));
  EXPECT_TRUE(is_override_suitable(18));
  EXPECT_TRUE(is_override_suitable(24));
  EXPECT_FALSE(is_override_suitable(12));
  EXPECT_FALSE(is_override_suitable(20));
}

TEST(LatticeGraph, InteriorAndCollarMasks) {
  const LatticeGraph g(make_box(2, 42));
  const EdgeSet in = region_mask(g, GraphRegion::interior());
  const EdgeSet out = region_mask(g, GraphRegion::collar());
  EXPECT_EQ(in.size(), closed_form_edge_count(2, 14));
  for (std::size_t e : in) {
    EXPECT_TRUE(LatticeBox({2, {}, 14}).contains(g.edge_midpoint(e)));
  }
  // Λ_42 \ Λ_30 keeps every edge that does not enter the open inner box.
  const std::size_t inner_open = closed_form_edge_count(2, 30) - 4 * 30;
  EXPECT_EQ(out.size(), g.num_edges() - inner_open);
  EXPECT_FALSE(sets_intersect(in, out));
  EXPECT_EQ(region_mask(g, GraphRegion::full()).size(), g.num_edges());
}

TEST(LatticeGraph, MasksDisjointForSuitableBoxes) {
  for (int side : {24, 30, 42, 54, 66}) {
    for (int d = 1; d <= 2; ++d) {
      const LatticeGraph g(make_box(d, side, Site{3, d > 1 ? 1 : 0, 0}));
      EXPECT_FALSE(sets_intersect(region_mask(g, GraphRegion::interior()),
                                  region_mask(g, GraphRegion::collar())));
    }
  }
  // At L = 18 the interior box equals Λ_{L-12}; in d >= 2 its boundary edges
  // belong to both closures.
  const LatticeGraph g18(make_box(2, 18));
  EXPECT_TRUE(sets_intersect(region_mask(g18, GraphRegion::interior()),
                             region_mask(g18, GraphRegion::collar())));
}

TEST(LatticeGraph, RegionRejectsOddSubBox) {
  const LatticeGraph g(make_box(1, 10));
  EXPECT_THROW(region_mask(g, GraphRegion::sub_box(LatticeBox{1, {}, 3})), GraphError);
  EXPECT_THROW(region_mask(g, GraphRegion::sub_box(LatticeBox{2, {}, 4})), GraphError);
}

TEST(LatticeGraph, DistanceExamples) {
  const LatticeGraph line(make_box(1, 10));
  const auto e01 = *line.find_edge({{0, 0, 0}, 0});
  const auto e34 = *line.find_edge({{3, 0, 0}, 0});
  EXPECT_DOUBLE_EQ(set_distance(line, {e01}, {e34}), 2.0);
  EXPECT_DOUBLE_EQ(set_distance(line, {e01}, {e01}), 0.0);
  EXPECT_THROW(set_distance(line, {}, {e01}), GraphError);

  const LatticeGraph sq(make_box(2, 10));
  const auto a = *sq.find_edge({{0, 0, 0}, 0});
  const auto b = *sq.find_edge({{0, 2, 0}, 1});
  std::mt19937_64 rng(1);
  const double bf = brute_force_distance(sq, a, b, 10000, rng);
  EXPECT_DOUBLE_EQ(set_distance(sq, {a}, {b}), 2.0);
  EXPECT_NEAR(set_distance(sq, {a}, {b}), bf, 1e-9);
  EXPECT_LE(set_distance(sq, {a}, {b}), bf + 1e-12);
}

TEST(LatticeGraph, DistanceAgreesWithBruteForceSampling) {
  const LatticeGraph g(make_box(3, 4));
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, g.num_edges() - 1);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t e1 = pick(rng), e2 = pick(rng);
    const double exact = edge_distance(g, e1, e2);
    const double bf = brute_force_distance(g, e1, e2, 10000, rng);
    EXPECT_LE(exact, bf + 1e-12);
    EXPECT_NEAR(exact, bf, 2e-2);  // grid resolution 1/100 bounds the sampling gap
    EXPECT_DOUBLE_EQ(exact, edge_distance(g, e2, e1));
  }
}

TEST(LatticeGraph, EnlargingSetNeverIncreasesDistance) {
  const LatticeGraph g(make_box(2, 8));
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> pick(0, g.num_edges() - 1);
  for (int trial = 0; trial < 30; ++trial) {
    EdgeSet a{pick(rng)};
    const EdgeSet b{pick(rng)};
    double prev = set_distance(g, a, b);
    for (int grow = 0; grow < 5; ++grow) {
      a.push_back(pick(rng));
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
      const double now = set_distance(g, a, b);
      EXPECT_LE(now, prev);
      prev = now;
    }
  }
}

TEST(LatticeGraph, IntrinsicDistanceDominatesEuclidean) {
  const LatticeGraph g(make_box(2, 6));
  const GraphPoint p{0, 0.25};
  for (std::size_t e = 0; e < g.num_edges(); e += 7) {
    const GraphPoint q{e, 0.5};
    const double eu = (g.position(p) - g.position(q)).norm();
    const double in = intrinsic_distance(g, p, q);
    EXPECT_GE(in + 1e-12, eu);
    EXPECT_LE(in, std::sqrt(2.0) * eu + 2.0);
  }
}

TEST(LatticeGraph, DescribeListsEverything) {
  const LatticeGraph g(make_box(2, 2));
  const std::string text = g.describe();
  EXPECT_NE(text.find("vertices 9"), std::string::npos);
  EXPECT_NE(text.find("edges 12"), std::string::npos);
  EXPECT_NE(text.find("direction 2"), std::string::npos);
}
