#include "rfn/model.hpp"

namespace rfn {

namespace {

void append(RelationIndex& index, const Neighborhood& n) {
  for (const Relation& r : n.relations) {
    index.element.push_back(n.element);
    index.neighbor.push_back(r.neighbor);
    index.relation.push_back(r.relation);
    index.orientation.push_back(r.orientation);
  }
}

}  // namespace

RelationIndex RelationIndex::primal(const RoadNetwork& network) {
  RelationIndex index;
  index.element_count = network.node_count();
  for (NodeId v = 0; v < network.node_count(); ++v) append(index, neighborhood(network, v));
  return index;
}

RelationIndex RelationIndex::dual(const RoadNetwork& network, const DualGraph& dual) {
  RelationIndex index;
  index.element_count = network.edge_count();
  for (EdgeId e = 0; e < network.edge_count(); ++e) append(index, neighborhood(network, dual, e));
  return index;
}

GraphContext::GraphContext(RoadNetwork net)
    : network(std::move(net)),
      dual(network),
      primal_relations(RelationIndex::primal(network)),
      dual_relations(RelationIndex::dual(network, dual)) {
  shared_nodes.reserve(network.between_edge_count());
  for (BetweenEdgeId b = 0; b < network.between_edge_count(); ++b)
    shared_nodes.push_back(shared_node(network, b));
}

std::string to_string(Task task) {
  return task == Task::speed_regression ? "speed_regression" : "limit_classification";
}

Task parse_task(const std::string& text) {
  if (text == "speed_regression" || text == "regression") return Task::speed_regression;
  if (text == "limit_classification" || text == "classification")
    return Task::limit_classification;
  throw std::invalid_argument("unknown task '" + text + "'");
}

}  // namespace rfn
