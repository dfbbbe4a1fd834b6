#pragma once

// Cubic-lattice quantum graph restricted to closed boxes, plus the region
// predicates and distances used by the resolvent and localization estimates.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qgloc/errors.hpp"

namespace qgloc {

inline constexpr int kMaxDimension = 3;

/// Lattice coordinates; components beyond the dimension are zero.
using Site = std::array<int, kMaxDimension>;

/// Closed box x + [-L/2, L/2]^d with integer center and even side, so that
/// its boundary never cuts an edge interior.
struct LatticeBox {
  int dimension = 1;
  Site center{};
  int side = 2;

  int lower(int k) const { return k < dimension ? center[k] - side / 2 : 0; }
  int upper(int k) const { return k < dimension ? center[k] + side / 2 : 0; }

  /// |Λ| = L^d.
  double volume() const { return std::pow(static_cast<double>(side), dimension); }

  bool contains(const Site& s) const {
    for (int k = 0; k < dimension; ++k) {
      if (s[k] < lower(k) || s[k] > upper(k)) return false;
    }
    return true;
  }

  bool contains(const Eigen::Vector3d& x, double eps = 1e-12) const {
    for (int k = 0; k < dimension; ++k) {
      if (x[k] < lower(k) - eps || x[k] > upper(k) + eps) return false;
    }
    return true;
  }

  bool contains_open(const Eigen::Vector3d& x, double eps = 1e-12) const {
    for (int k = 0; k < dimension; ++k) {
      if (x[k] <= lower(k) + eps || x[k] >= upper(k) - eps) return false;
    }
    return true;
  }

  /// Concentric box with another side.
  LatticeBox resized(int new_side) const { return LatticeBox{dimension, center, new_side}; }

  void validate(int max_dimension = kMaxDimension) const {
    if (dimension < 1 || dimension > max_dimension) {
      throw GraphError("box dimension must lie in {1.." + std::to_string(max_dimension) + "}, got " +
                       std::to_string(dimension));
    }
    if (side <= 0) throw GraphError("box side must be positive, got " + std::to_string(side));
    if (side % 2 != 0) {
      throw GraphError("box side must be even so the boundary avoids edge interiors, got " +
                       std::to_string(side));
    }
    for (int k = dimension; k < kMaxDimension; ++k) {
      if (center[k] != 0) throw GraphError("box center has nonzero coordinate beyond its dimension");
    }
  }

  friend bool operator==(const LatticeBox& a, const LatticeBox& b) {
    return a.dimension == b.dimension && a.center == b.center && a.side == b.side;
  }
};

/// L in 6N \ 12N and L >= 42.
inline bool is_suitable(int side) { return side % 6 == 0 && side % 12 != 0 && side >= 42; }

/// Desk-scale relaxation: L >= 18 and divisible by 6.
inline bool is_override_suitable(int side) { return side >= 18 && side % 6 == 0; }

inline bool is_suitable(const LatticeBox& box, bool allow_override) {
  return allow_override ? is_override_suitable(box.side) : is_suitable(box.side);
}

/// Exact edge count of the closed box: d * L * (L+1)^(d-1).
inline std::size_t closed_form_edge_count(int dimension, int side) {
  std::size_t count = static_cast<std::size_t>(dimension) * static_cast<std::size_t>(side);
  for (int k = 1; k < dimension; ++k) count *= static_cast<std::size_t>(side + 1);
  return count;
}

/// Edge from `base` to `base + e_direction` (direction is 0-based).
struct EdgeId {
  Site base{};
  int direction = 0;

  friend bool operator==(const EdgeId& a, const EdgeId& b) {
    return a.base == b.base && a.direction == b.direction;
  }
};

/// A point on the graph: edge index and coordinate t in [0,1] from the tail.
struct GraphPoint {
  std::size_t edge = 0;
  double t = 0.0;
};

/// Sorted list of edge indices of one graph.
using EdgeSet = std::vector<std::size_t>;

class LatticeGraph {
 public:
  explicit LatticeGraph(const LatticeBox& box, int max_dimension = kMaxDimension) : box_(box) {
    box_.validate(max_dimension);
    const int d = box_.dimension;
    const std::size_t n1 = static_cast<std::size_t>(box_.side) + 1;
    std::size_t nv = 1;
    for (int k = 0; k < d; ++k) nv *= n1;

    vertices_.resize(nv);
    for (std::size_t v = 0; v < nv; ++v) {
      Site s{};
      std::size_t rest = v;
      for (int k = 0; k < d; ++k) {
        s[k] = box_.lower(k) + static_cast<int>(rest % n1);
        rest /= n1;
      }
      vertices_[v] = s;
    }

    edge_lookup_.assign(nv * static_cast<std::size_t>(d), kNone);
    incident_.assign(nv, {});
    boundary_.assign(nv, false);
    for (std::size_t v = 0; v < nv; ++v) {
      const Site& s = vertices_[v];
      for (int k = 0; k < d; ++k) {
        if (s[k] == box_.lower(k) || s[k] == box_.upper(k)) boundary_[v] = true;
        if (s[k] < box_.upper(k)) {
          Site t = s;
          t[k] += 1;
          const std::size_t head = *find_vertex(t);
          const std::size_t e = edges_.size();
          edges_.push_back(EdgeId{s, k});
          tails_.push_back(v);
          heads_.push_back(head);
          edge_lookup_[v * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)] = e;
        }
      }
    }
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      incident_[tails_[e]].push_back(e);
      incident_[heads_[e]].push_back(e);
    }
    for (auto& list : incident_) std::sort(list.begin(), list.end());
  }

  const LatticeBox& box() const { return box_; }
  int dimension() const { return box_.dimension; }
  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_edges() const { return edges_.size(); }

  const Site& vertex(std::size_t v) const { return vertices_.at(v); }
  const EdgeId& edge(std::size_t e) const { return edges_.at(e); }
  /// ι(e)
  std::size_t tail(std::size_t e) const { return tails_.at(e); }
  /// τ(e)
  std::size_t head(std::size_t e) const { return heads_.at(e); }
  const std::vector<std::size_t>& incident(std::size_t v) const { return incident_.at(v); }
  std::size_t degree(std::size_t v) const { return incident_.at(v).size(); }
  bool is_boundary(std::size_t v) const { return boundary_.at(v); }

  std::vector<std::size_t> boundary_vertices() const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < vertices_.size(); ++v) {
      if (boundary_[v]) out.push_back(v);
    }
    return out;
  }

  std::optional<std::size_t> find_vertex(const Site& s) const {
    if (!box_.contains(s)) return std::nullopt;
    for (int k = box_.dimension; k < kMaxDimension; ++k) {
      if (s[k] != 0) return std::nullopt;
    }
    const std::size_t n1 = static_cast<std::size_t>(box_.side) + 1;
    std::size_t index = 0;
    std::size_t stride = 1;
    for (int k = 0; k < box_.dimension; ++k) {
      index += static_cast<std::size_t>(s[k] - box_.lower(k)) * stride;
      stride *= n1;
    }
    return index;
  }

  std::optional<std::size_t> find_edge(const EdgeId& id) const {
    if (id.direction < 0 || id.direction >= box_.dimension) return std::nullopt;
    const auto v = find_vertex(id.base);
    if (!v) return std::nullopt;
    const std::size_t e = edge_lookup_[*v * static_cast<std::size_t>(box_.dimension) +
                                       static_cast<std::size_t>(id.direction)];
    if (e == kNone) return std::nullopt;
    return e;
  }

  Eigen::Vector3d vertex_position(std::size_t v) const {
    const Site& s = vertices_.at(v);
    return Eigen::Vector3d(s[0], s[1], s[2]);
  }

  /// Embedded position ι(e) + t e_k.
  Eigen::Vector3d position(const GraphPoint& p) const {
    Eigen::Vector3d x = vertex_position(tails_.at(p.edge));
    x[edges_[p.edge].direction] += p.t;
    return x;
  }

  Eigen::Vector3d edge_midpoint(std::size_t e) const { return position(GraphPoint{e, 0.5}); }

  /// Structured text description: vertex list and oriented edge list.
  std::string describe() const {
    std::ostringstream os;
    os << "# lattice box graph\n";
    os << "dimension " << box_.dimension << "\n";
    os << "center";
    for (int k = 0; k < box_.dimension; ++k) os << ' ' << box_.center[k];
    os << "\nside " << box_.side << "\n";
    os << "vertices " << vertices_.size() << "\n";
    for (std::size_t v = 0; v < vertices_.size(); ++v) {
      os << v;
      for (int k = 0; k < box_.dimension; ++k) os << ' ' << vertices_[v][k];
      os << " degree " << incident_[v].size() << (boundary_[v] ? " boundary" : " inner") << "\n";
    }
    os << "edges " << edges_.size() << "\n";
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      os << e << " direction " << edges_[e].direction + 1 << " tail " << tails_[e] << " head "
         << heads_[e] << "\n";
    }
    return os.str();
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  LatticeBox box_;
  std::vector<Site> vertices_;
  std::vector<EdgeId> edges_;
  std::vector<std::size_t> tails_;
  std::vector<std::size_t> heads_;
  std::vector<std::size_t> edge_lookup_;
  std::vector<std::vector<std::size_t>> incident_;
  std::vector<bool> boundary_;
};

enum class RegionKind { full, interior, collar, sub_box, annulus };

/// Region descriptor. Its edge set is every edge of the graph that lies in
/// the closure of the region.
struct GraphRegion {
  RegionKind kind = RegionKind::full;
  LatticeBox outer{};
  LatticeBox inner{};

  static GraphRegion full() { return GraphRegion{}; }
  /// Λ_int = Λ_{L/3}(x)
  static GraphRegion interior() { return GraphRegion{RegionKind::interior, {}, {}}; }
  /// Λ_out = Λ_L(x) \ Λ_{L-12}(x)
  static GraphRegion collar() { return GraphRegion{RegionKind::collar, {}, {}}; }
  static GraphRegion sub_box(const LatticeBox& b) { return GraphRegion{RegionKind::sub_box, b, {}}; }
  /// closure(outer \ inner)
  static GraphRegion annulus(const LatticeBox& outer, const LatticeBox& inner) {
    return GraphRegion{RegionKind::annulus, outer, inner};
  }
};

inline LatticeBox interior_box(const LatticeBox& box) {
  if (box.side % 6 != 0) {
    throw GraphError("interior region needs a side divisible by 6, got " + std::to_string(box.side));
  }
  return box.resized(box.side / 3);
}

inline LatticeBox collar_inner_box(const LatticeBox& box) {
  if (box.side - 12 < 2) {
    throw GraphError("collar region needs side >= 14, got " + std::to_string(box.side));
  }
  return box.resized(box.side - 12);
}

namespace detail {

inline void require_edge_bounded(const LatticeBox& b, int dimension) {
  if (b.dimension != dimension) throw GraphError("region box dimension differs from graph");
  if (b.side <= 0 || b.side % 2 != 0) {
    throw GraphError("region box is not edge-bounded (side must be positive and even), got " +
                     std::to_string(b.side));
  }
}

inline bool edge_in_closed_box(const LatticeGraph& g, std::size_t e, const LatticeBox& b) {
  return b.contains(g.vertex(g.tail(e))) && b.contains(g.vertex(g.head(e)));
}

// A unit lattice edge meets the open interior of an integer box iff its
// midpoint lies there.
inline bool edge_meets_open_box(const LatticeGraph& g, std::size_t e, const LatticeBox& b) {
  return b.contains_open(g.edge_midpoint(e));
}

}  // namespace detail

inline EdgeSet region_mask(const LatticeGraph& g, const GraphRegion& region) {
  EdgeSet out;
  const std::size_t ne = g.num_edges();
  switch (region.kind) {
    case RegionKind::full:
      out.resize(ne);
      for (std::size_t e = 0; e < ne; ++e) out[e] = e;
      return out;
    case RegionKind::interior: {
      const LatticeBox b = interior_box(g.box());
      for (std::size_t e = 0; e < ne; ++e) {
        if (detail::edge_in_closed_box(g, e, b)) out.push_back(e);
      }
      return out;
    }
    case RegionKind::collar: {
      const LatticeBox inner = collar_inner_box(g.box());
      for (std::size_t e = 0; e < ne; ++e) {
        if (!detail::edge_meets_open_box(g, e, inner)) out.push_back(e);
      }
      return out;
    }
    case RegionKind::sub_box: {
      detail::require_edge_bounded(region.outer, g.dimension());
      for (std::size_t e = 0; e < ne; ++e) {
        if (detail::edge_in_closed_box(g, e, region.outer)) out.push_back(e);
      }
      return out;
    }
    case RegionKind::annulus: {
      detail::require_edge_bounded(region.outer, g.dimension());
      detail::require_edge_bounded(region.inner, g.dimension());
      for (std::size_t e = 0; e < ne; ++e) {
        if (detail::edge_in_closed_box(g, e, region.outer) &&
            !detail::edge_meets_open_box(g, e, region.inner)) {
          out.push_back(e);
        }
      }
      return out;
    }
  }
  return out;
}

/// Edges of `g` that also belong to the closed box `b` (E(Γ∩b) as a subset of g).
inline EdgeSet edges_within(const LatticeGraph& g, const LatticeBox& b) {
  return region_mask(g, GraphRegion::sub_box(b));
}

inline bool sets_intersect(const EdgeSet& a, const EdgeSet& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

/// Euclidean distance between two axis-aligned unit edges. Each edge is a
/// degenerate axis-aligned box, so the distance is the norm of the per-axis gaps.
inline double edge_distance(const LatticeGraph& g, std::size_t e1, std::size_t e2) {
  const Eigen::Vector3d a0 = g.vertex_position(g.tail(e1));
  const Eigen::Vector3d a1 = g.vertex_position(g.head(e1));
  const Eigen::Vector3d b0 = g.vertex_position(g.tail(e2));
  const Eigen::Vector3d b1 = g.vertex_position(g.head(e2));
  double sq = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double gap = std::max({0.0, b0[k] - a1[k], a0[k] - b1[k]});
    sq += gap * gap;
  }
  return std::sqrt(sq);
}

/// dist(A, B) between the embedded point sets of two edge subsets.
inline double set_distance(const LatticeGraph& g, const EdgeSet& a, const EdgeSet& b) {
  if (a.empty() || b.empty()) throw GraphError("set_distance requires nonempty edge sets");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t e1 : a) {
    for (std::size_t e2 : b) {
      best = std::min(best, edge_distance(g, e1, e2));
      if (best == 0.0) return 0.0;
    }
  }
  return best;
}

/// Shortest path length along the graph between two points.
inline double intrinsic_distance(const LatticeGraph& g, const GraphPoint& p, const GraphPoint& q) {
  if (p.edge == q.edge) return std::abs(p.t - q.t);
  const std::size_t nv = g.num_vertices();
  auto bfs = [&](std::size_t source) {
    std::vector<int> dist(nv, -1);
    std::deque<std::size_t> queue{source};
    dist[source] = 0;
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      for (std::size_t e : g.incident(v)) {
        const std::size_t w = g.tail(e) == v ? g.head(e) : g.tail(e);
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          queue.push_back(w);
        }
      }
    }
    return dist;
  };
  const std::array<std::size_t, 2> p_end{g.tail(p.edge), g.head(p.edge)};
  const std::array<double, 2> p_off{p.t, 1.0 - p.t};
  const std::array<std::size_t, 2> q_end{g.tail(q.edge), g.head(q.edge)};
  const std::array<double, 2> q_off{q.t, 1.0 - q.t};
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 2; ++i) {
    const auto dist = bfs(p_end[i]);
    for (int j = 0; j < 2; ++j) {
      if (dist[q_end[j]] < 0) continue;
      best = std::min(best, p_off[i] + dist[q_end[j]] + q_off[j]);
    }
  }
  return best;
}

}  // namespace qgloc
