#pragma once

// Attributed directed road network (primal graph) and its dual view.
//
// Nodes are intersections, edges are directed road segments, and
// between-edges connect consecutive segments ((u,v),(v,w)). All ids are
// dense indices after construction; the external string ids are kept for
// file round trips and prediction-time alignment.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfn {

using NodeId = std::size_t;
using EdgeId = std::size_t;
using BetweenEdgeId = std::size_t;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Zone { none, city, rural, summer_cottage };
enum class TurnDirection { right, left, u_turn, straight };

std::string to_string(Zone zone);
std::string to_string(TurnDirection direction);
Zone parse_zone(const std::string& text);
TurnDirection parse_turn_direction(const std::string& text);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct NodeRecord {
  std::string id;
  Zone zone = Zone::none;
  std::optional<double> lon;
  std::optional<double> lat;
};

struct EdgeRecord {
  std::string id;
  std::string source;
  std::string target;
  int category = 1;
  double length = 0.0;
  std::vector<Point> geometry;
};

struct BetweenEdgeRecord {
  std::string id;
  std::string first;
  std::string second;
  double turn_angle = 0.0;
  TurnDirection turn_direction = TurnDirection::straight;
};

struct Node {
  std::string id;
  Zone zone = Zone::none;
  std::optional<double> lon;
  std::optional<double> lat;
};

struct Edge {
  std::string id;
  NodeId source = 0;
  NodeId target = 0;
  int category = 1;
  double length = 0.0;
  std::vector<Point> geometry;
};

struct BetweenEdge {
  std::string id;
  EdgeId first = 0;
  EdgeId second = 0;
  double turn_angle = 0.0;
  TurnDirection turn_direction = TurnDirection::straight;
  /// Set when the turn attributes were zero-filled for lack of geometry.
  bool attributes_missing = false;
};

struct Subnetwork;

/// Sorted incidence lists of one element.
struct Adjacency {
  std::vector<std::size_t> in;
  std::vector<std::size_t> out;
};

class RoadNetwork {
 public:
  RoadNetwork() = default;

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<BetweenEdge>& between_edges() const { return between_; }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  std::size_t between_edge_count() const { return between_.size(); }

  /// In-edge and out-edge ids of a node, sorted by id.
  const Adjacency& node_adjacency(NodeId v) const;
  std::size_t in_degree(NodeId v) const { return node_adjacency(v).in.size(); }
  std::size_t out_degree(NodeId v) const { return node_adjacency(v).out.size(); }

  std::optional<NodeId> find_node(const std::string& id) const;
  std::optional<EdgeId> find_edge(const std::string& id) const;
  std::optional<BetweenEdgeId> find_between_edge(const std::string& id) const;

  /// Number of between-edges whose turn attributes were zero-filled.
  std::size_t missing_turn_attributes() const;

  /// 64-bit FNV-1a digest over the external ids of nodes, edges, and
  /// between-edges in dense order.
  std::uint64_t id_digest() const;

 private:
  friend RoadNetwork build_road_network(std::span<const NodeRecord>, std::span<const EdgeRecord>,
                                        std::optional<std::span<const BetweenEdgeRecord>>);
  friend RoadNetwork derive_between_edges(RoadNetwork);
  friend Subnetwork induced_subnetwork(const RoadNetwork&, std::span<const NodeId>,
                                              std::span<const EdgeId>);

  void index();

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<BetweenEdge> between_;
  std::vector<Adjacency> node_adj_;
};

/// Validates records and densifies ids in record order. Between-edges, when
/// given, must connect consecutive edges. Self-loops, dangling node
/// references, and duplicate ids are rejected with GraphError.
RoadNetwork build_road_network(
    std::span<const NodeRecord> nodes, std::span<const EdgeRecord> edges,
    std::optional<std::span<const BetweenEdgeRecord>> between_edges = std::nullopt);

/// Adds one between-edge per ordered consecutive edge pair (U-turns
/// included), ordered by (first, second). Turn attributes come from edge
/// geometry when both edges carry it, otherwise they are zero-filled and
/// flagged. Throws GraphError if the network already has between-edges.
RoadNetwork derive_between_edges(RoadNetwork network);

/// The dual graph: dual nodes are primal edges, dual edges are between-edges.
class DualGraph {
 public:
  explicit DualGraph(const RoadNetwork& network);

  std::size_t node_count() const { return adj_.size(); }
  std::size_t edge_count() const { return ends_.size(); }

  /// Incoming and outgoing between-edge ids of a primal edge, sorted.
  const Adjacency& adjacency(EdgeId e) const;
  /// (first, second) edge of a between-edge.
  std::pair<EdgeId, EdgeId> endpoints(BetweenEdgeId b) const { return ends_.at(b); }

 private:
  std::vector<Adjacency> adj_;
  std::vector<std::pair<EdgeId, EdgeId>> ends_;
};

DualGraph dual_graph(const RoadNetwork& network);

enum class Orientation { incoming, outgoing };

struct Relation {
  std::size_t neighbor = 0;
  std::size_t relation = 0;  // edge id in the primal view, between-edge id in the dual view
  Orientation orientation = Orientation::incoming;
  friend bool operator==(const Relation&, const Relation&) = default;
};

struct Neighborhood {
  std::size_t element = 0;
  /// Sorted by (orientation, neighbor, relation); incoming first.
  std::vector<Relation> relations;
};

/// Primal neighborhood of node v: one relation per incident edge.
Neighborhood neighborhood(const RoadNetwork& network, NodeId v);
/// Dual neighborhood of edge e: one relation per incident between-edge.
Neighborhood neighborhood(const RoadNetwork& network, const DualGraph& dual, EdgeId e);

/// The intersection shared by the two edges of a between-edge.
NodeId shared_node(const RoadNetwork& network, BetweenEdgeId b);

/// A network restricted to a node set and an edge set, with the induced
/// between-edges. Index vectors map local ids back to the parent network.
struct Subnetwork {
  RoadNetwork network;
  std::vector<NodeId> nodes;
  std::vector<EdgeId> edges;
  std::vector<BetweenEdgeId> between_edges;
};

/// Nodes are the given set plus every endpoint of the given edges; the
/// between-edges are those of the parent whose two edges are both kept.
/// Local ids follow parent order.
Subnetwork induced_subnetwork(const RoadNetwork& network, std::span<const NodeId> nodes,
                              std::span<const EdgeId> edges);

}  // namespace rfn
