#pragma once

// Shared plumbing for edge-level models: a network with its precomputed
// relation indices, and the interface trainers and evaluators talk to.

#include <memory>
#include <string>
#include <vector>

#include "rfn/features.hpp"
#include "rfn/graph.hpp"
#include "rfn/ndiff.hpp"

namespace rfn {

/// Flattened neighborhoods of every element of one graph view, in element
/// order and, within an element, in Neighborhood order.
struct RelationIndex {
  std::size_t element_count = 0;
  std::vector<std::size_t> element;
  std::vector<std::size_t> neighbor;
  std::vector<std::size_t> relation;
  std::vector<Orientation> orientation;

  std::size_t size() const { return element.size(); }

  static RelationIndex primal(const RoadNetwork& network);
  static RelationIndex dual(const RoadNetwork& network, const DualGraph& dual);
};

/// A road network with everything the forward pass needs precomputed.
struct GraphContext {
  explicit GraphContext(RoadNetwork net);

  RoadNetwork network;
  DualGraph dual;
  RelationIndex primal_relations;
  RelationIndex dual_relations;
  /// shared_node() of every between-edge.
  std::vector<NodeId> shared_nodes;
};

enum class Task { speed_regression, limit_classification };

std::string to_string(Task task);
Task parse_task(const std::string& text);

/// Anything that maps a featurized network to one output row per edge.
class EdgeModel {
 public:
  virtual ~EdgeModel() = default;

  /// |E| x output_dim predictions on the tape.
  virtual nd::Tensor predict_edges(const GraphContext& graph, const FeatureSet& features) const = 0;
  virtual std::vector<nd::Tensor> parameters() const = 0;
  virtual std::vector<std::string> parameter_names() const = 0;
  /// Deep copy: parameters are not shared with the original.
  virtual std::unique_ptr<EdgeModel> clone() const = 0;
  virtual std::string kind() const = 0;
  /// Dual-graph hops an edge output can see; 0 for graph-free models.
  virtual std::size_t depth() const = 0;
  virtual std::size_t output_dim() const = 0;
};

}  // namespace rfn
