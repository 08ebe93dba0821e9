#include "rfn/graph.hpp"

#include <algorithm>
#include <tuple>
#include <unordered_map>

#include "rfn/features.hpp"

namespace rfn {

std::string to_string(Zone zone) {
  switch (zone) {
    case Zone::none: return "none";
    case Zone::city: return "city";
    case Zone::rural: return "rural";
    case Zone::summer_cottage: return "summer-cottage";
  }
  return "none";
}

std::string to_string(TurnDirection direction) {
  switch (direction) {
    case TurnDirection::right: return "right";
    case TurnDirection::left: return "left";
    case TurnDirection::u_turn: return "u-turn";
    case TurnDirection::straight: return "straight";
  }
  return "straight";
}

Zone parse_zone(const std::string& text) {
  if (text.empty() || text == "none") return Zone::none;
  if (text == "city") return Zone::city;
  if (text == "rural") return Zone::rural;
  if (text == "summer-cottage" || text == "summer_cottage") return Zone::summer_cottage;
  throw GraphError("unknown zone category '" + text + "'");
}

TurnDirection parse_turn_direction(const std::string& text) {
  if (text == "right") return TurnDirection::right;
  if (text == "left") return TurnDirection::left;
  if (text == "u-turn" || text == "u_turn") return TurnDirection::u_turn;
  if (text == "straight") return TurnDirection::straight;
  throw GraphError("unknown turn direction '" + text + "'");
}

const Adjacency& RoadNetwork::node_adjacency(NodeId v) const {
  if (v >= node_adj_.size()) throw GraphError("unknown node id " + std::to_string(v));
  return node_adj_[v];
}

namespace {

template <class T>
std::optional<std::size_t> find_by_id(const std::vector<T>& items, const std::string& id) {
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].id == id) return i;
  return std::nullopt;
}

void fnv1a(std::uint64_t& h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h ^= 0xff;
  h *= 0x100000001b3ULL;
}

void check_turn_angle(double angle, const std::string& id) {
  if (!(angle >= 0.0 && angle <= 180.0))
    throw GraphError("between-edge " + id + ": turn angle " + std::to_string(angle) +
                     " outside [0,180]");
}

}  // namespace

std::optional<NodeId> RoadNetwork::find_node(const std::string& id) const {
  return find_by_id(nodes_, id);
}
std::optional<EdgeId> RoadNetwork::find_edge(const std::string& id) const {
  return find_by_id(edges_, id);
}
std::optional<BetweenEdgeId> RoadNetwork::find_between_edge(const std::string& id) const {
  return find_by_id(between_, id);
}

std::size_t RoadNetwork::missing_turn_attributes() const {
  return static_cast<std::size_t>(std::count_if(
      between_.begin(), between_.end(), [](const BetweenEdge& b) { return b.attributes_missing; }));
}

std::uint64_t RoadNetwork::id_digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& n : nodes_) fnv1a(h, n.id);
  fnv1a(h, "|");
  for (const auto& e : edges_) fnv1a(h, e.id);
  fnv1a(h, "|");
  for (const auto& b : between_) fnv1a(h, b.id);
  return h;
}

void RoadNetwork::index() {
  node_adj_.assign(nodes_.size(), {});
  for (EdgeId e = 0; e < edges_.size(); ++e) {
    node_adj_[edges_[e].source].out.push_back(e);
    node_adj_[edges_[e].target].in.push_back(e);
  }
}

RoadNetwork build_road_network(std::span<const NodeRecord> nodes,
                               std::span<const EdgeRecord> edges,
                               std::optional<std::span<const BetweenEdgeRecord>> between_edges) {
  RoadNetwork net;
  std::unordered_map<std::string, NodeId> node_index;
  for (const auto& rec : nodes) {
    if (!node_index.emplace(rec.id, net.nodes_.size()).second)
      throw GraphError("duplicate id: node " + rec.id);
    net.nodes_.push_back(Node{rec.id, rec.zone, rec.lon, rec.lat});
  }

  std::unordered_map<std::string, EdgeId> edge_index;
  for (const auto& rec : edges) {
    if (!edge_index.emplace(rec.id, net.edges_.size()).second)
      throw GraphError("duplicate id: edge " + rec.id);
    auto src = node_index.find(rec.source);
    auto tgt = node_index.find(rec.target);
    if (src == node_index.end() || tgt == node_index.end())
      throw GraphError("dangling node reference: edge " + rec.id + " references node " +
                       (src == node_index.end() ? rec.source : rec.target));
    if (src->second == tgt->second) throw GraphError("self-loop edge " + rec.id + " rejected");
    if (rec.category < 1 || rec.category > kRoadCategories)
      throw GraphError("edge " + rec.id + ": road category " + std::to_string(rec.category) +
                       " outside 1..9");
    if (!(rec.length > 0.0))
      throw GraphError("edge " + rec.id + ": length must be positive");
    net.edges_.push_back(
        Edge{rec.id, src->second, tgt->second, rec.category, rec.length, rec.geometry});
  }

  if (between_edges) {
    std::unordered_map<std::string, BetweenEdgeId> seen;
    for (const auto& rec : *between_edges) {
      if (!seen.emplace(rec.id, net.between_.size()).second)
        throw GraphError("duplicate id: between-edge " + rec.id);
      auto first = edge_index.find(rec.first);
      auto second = edge_index.find(rec.second);
      if (first == edge_index.end() || second == edge_index.end())
        throw GraphError("between-edge " + rec.id + " references unknown edge");
      if (net.edges_[first->second].target != net.edges_[second->second].source)
        throw GraphError("between-edge " + rec.id + ": edges " + rec.first + " and " +
                         rec.second + " are not consecutive");
      check_turn_angle(rec.turn_angle, rec.id);
      net.between_.push_back(BetweenEdge{rec.id, first->second, second->second, rec.turn_angle,
                                         rec.turn_direction, false});
    }
  }
  net.index();
  return net;
}

RoadNetwork derive_between_edges(RoadNetwork network) {
  if (!network.between_.empty())
    throw GraphError("derive_between_edges: network already has between-edges");
  for (EdgeId e1 = 0; e1 < network.edges_.size(); ++e1) {
    const Edge& first = network.edges_[e1];
    for (EdgeId e2 : network.node_adj_[first.target].out) {
      const Edge& second = network.edges_[e2];
      BetweenEdge b;
      b.id = std::to_string(network.between_.size());
      b.first = e1;
      b.second = e2;
      if (first.geometry.size() >= 2 && second.geometry.size() >= 2) {
        const auto turn = compute_turn_attributes(first.geometry, second.geometry);
        b.turn_angle = turn.angle_deg;
        b.turn_direction = turn.direction;
      } else {
        b.attributes_missing = true;
      }
      network.between_.push_back(std::move(b));
    }
  }
  return network;
}

DualGraph::DualGraph(const RoadNetwork& network) : adj_(network.edge_count()) {
  const auto& between = network.between_edges();
  ends_.reserve(between.size());
  for (BetweenEdgeId b = 0; b < between.size(); ++b) {
    ends_.emplace_back(between[b].first, between[b].second);
    adj_[between[b].first].out.push_back(b);
    adj_[between[b].second].in.push_back(b);
  }
}

const Adjacency& DualGraph::adjacency(EdgeId e) const {
  if (e >= adj_.size()) throw GraphError("unknown edge id " + std::to_string(e));
  return adj_[e];
}

DualGraph dual_graph(const RoadNetwork& network) { return DualGraph(network); }

namespace {

void sort_relations(std::vector<Relation>& relations) {
  std::sort(relations.begin(), relations.end(), [](const Relation& a, const Relation& b) {
    return std::tie(a.orientation, a.neighbor, a.relation) <
           std::tie(b.orientation, b.neighbor, b.relation);
  });
}

}  // namespace

Neighborhood neighborhood(const RoadNetwork& network, NodeId v) {
  const Adjacency& adj = network.node_adjacency(v);
  Neighborhood n{v, {}};
  n.relations.reserve(adj.in.size() + adj.out.size());
  for (EdgeId e : adj.in)
    n.relations.push_back({network.edges()[e].source, e, Orientation::incoming});
  for (EdgeId e : adj.out)
    n.relations.push_back({network.edges()[e].target, e, Orientation::outgoing});
  sort_relations(n.relations);
  return n;
}

Neighborhood neighborhood(const RoadNetwork& network, const DualGraph& dual, EdgeId e) {
  if (e >= network.edge_count()) throw GraphError("unknown edge id " + std::to_string(e));
  const Adjacency& adj = dual.adjacency(e);
  Neighborhood n{e, {}};
  n.relations.reserve(adj.in.size() + adj.out.size());
  for (BetweenEdgeId b : adj.in) n.relations.push_back({dual.endpoints(b).first, b, Orientation::incoming});
  for (BetweenEdgeId b : adj.out)
    n.relations.push_back({dual.endpoints(b).second, b, Orientation::outgoing});
  sort_relations(n.relations);
  return n;
}

NodeId shared_node(const RoadNetwork& network, BetweenEdgeId b) {
  if (b >= network.between_edge_count())
    throw GraphError("unknown between-edge id " + std::to_string(b));
  return network.edges()[network.between_edges()[b].first].target;
}

Subnetwork induced_subnetwork(const RoadNetwork& network, std::span<const NodeId> nodes,
                              std::span<const EdgeId> edges) {
  std::vector<char> keep_node(network.node_count(), 0), keep_edge(network.edge_count(), 0);
  for (NodeId v : nodes) keep_node.at(v) = 1;
  for (EdgeId e : edges) {
    keep_edge.at(e) = 1;
    keep_node[network.edges()[e].source] = 1;
    keep_node[network.edges()[e].target] = 1;
  }

  Subnetwork sub;
  constexpr std::size_t kDropped = static_cast<std::size_t>(-1);
  std::vector<std::size_t> node_local(network.node_count(), kDropped);
  std::vector<std::size_t> edge_local(network.edge_count(), kDropped);
  for (NodeId v = 0; v < network.node_count(); ++v) {
    if (!keep_node[v]) continue;
    node_local[v] = sub.nodes.size();
    sub.nodes.push_back(v);
    sub.network.nodes_.push_back(network.nodes()[v]);
  }
  for (EdgeId e = 0; e < network.edge_count(); ++e) {
    if (!keep_edge[e]) continue;
    edge_local[e] = sub.edges.size();
    sub.edges.push_back(e);
    Edge copy = network.edges()[e];
    copy.source = node_local[copy.source];
    copy.target = node_local[copy.target];
    sub.network.edges_.push_back(std::move(copy));
  }
  for (BetweenEdgeId b = 0; b < network.between_edge_count(); ++b) {
    const BetweenEdge& be = network.between_edges()[b];
    if (!keep_edge[be.first] || !keep_edge[be.second]) continue;
    sub.between_edges.push_back(b);
    BetweenEdge copy = be;
    copy.first = edge_local[be.first];
    copy.second = edge_local[be.second];
    sub.network.between_.push_back(std::move(copy));
  }
  sub.network.index();
  return sub;
}

}  // namespace rfn
