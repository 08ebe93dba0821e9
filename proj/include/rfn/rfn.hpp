#pragma once

// Relational fusion networks.
//
// A relational fusion layer updates node representations by fusing every
// (source, target, relation) triple of the primal graph and aggregating the
// fused rows per node, and updates edge representations the same way on the
// dual graph, where a relation is a between-edge joined with the features of
// the intersection it passes through. Between-edge representations go
// through a plain feed-forward layer.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rfn/model.hpp"
#include "rfn/ndiff.hpp"

namespace rfn {

enum class FusionKind { additive, interactional };
enum class AggregatorKind { attentional, non_attentional };
enum class NormalizationPlacement { none, first_layer, all_layers };

std::string to_string(FusionKind kind);
std::string to_string(AggregatorKind kind);
std::string to_string(NormalizationPlacement placement);
FusionKind parse_fusion_kind(const std::string& text);
AggregatorKind parse_aggregator_kind(const std::string& text);
NormalizationPlacement parse_normalization(const std::string& text);

struct FusionParams {
  FusionKind kind = FusionKind::additive;
  std::size_t source_dim = 0;
  std::size_t target_dim = 0;
  std::size_t relation_dim = 0;
  std::size_t out_dim = 0;
  nd::Activation activation = nd::Activation::elu();

  // additive
  nd::Tensor source_weight;    // source_dim x out_dim
  nd::Tensor target_weight;    // target_dim x out_dim
  nd::Tensor relation_weight;  // relation_dim x out_dim
  // interactional
  nd::Tensor interaction_weight;  // d^R x d^R
  nd::Tensor output_weight;       // d^R x out_dim
  // both
  nd::Tensor bias;  // 1 x out_dim

  std::size_t relational_dim() const { return source_dim + target_dim + relation_dim; }

  static FusionParams additive(std::size_t source_dim, std::size_t target_dim,
                               std::size_t relation_dim, std::size_t out_dim,
                               nd::Activation activation, Rng& rng);
  static FusionParams interactional(std::size_t source_dim, std::size_t target_dim,
                                    std::size_t relation_dim, std::size_t out_dim,
                                    nd::Activation activation, Rng& rng);

  std::vector<nd::Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
};

struct AggregatorParams {
  AggregatorKind kind = AggregatorKind::non_attentional;
  nd::Tensor coefficient_weight;  // d^R x 1, attentional only
  nd::Activation coefficient_activation = nd::Activation::leaky_relu(0.2);

  static AggregatorParams attentional(std::size_t relational_dim, Rng& rng);
  static AggregatorParams non_attentional() { return {}; }

  std::vector<nd::Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
};

/// Row-wise additive fusion: act(src Ws + tgt Wt + rel Wr + b).
nd::Tensor fuse_additive(const FusionParams& p, const nd::Tensor& source,
                         const nd::Tensor& target, const nd::Tensor& relation);
/// Row-wise interactional fusion: act(((h W^I) . h) W^R) + b with
/// h = src ++ tgt ++ rel. The bias sits outside the activation.
nd::Tensor fuse_interactional(const FusionParams& p, const nd::Tensor& source,
                              const nd::Tensor& target, const nd::Tensor& relation);
nd::Tensor fuse(const FusionParams& p, const nd::Tensor& source, const nd::Tensor& target,
                const nd::Tensor& relation);

/// Softmax of leaky_relu(h W^C) within each element's relations.
nd::Tensor attention_weights(const AggregatorParams& p, const nd::Tensor& relational,
                             std::span<const std::size_t> element, std::size_t element_count);
/// Single-neighborhood convenience: every row belongs to one element.
nd::Tensor attention_weights(const AggregatorParams& p, const nd::Tensor& relational);

struct Aggregate {
  nd::Tensor values;   // element_count x out_dim
  nd::Tensor weights;  // relations x 1; empty for the mean aggregator
};

/// Attentional: attention-weighted sum of the fused rows. Non-attentional:
/// their mean. Elements without relations get zero rows.
Aggregate aggregate(const AggregatorParams& p, const nd::Tensor& fused,
                    const nd::Tensor& relational, std::span<const std::size_t> element,
                    std::size_t element_count);

struct FusionResult {
  nd::Tensor values;
  nd::Tensor attention;  // relations x 1 when attentional
};

/// One relational fusion pass over a graph view. element_features has one
/// row per element of the view, relation_features one row per relation id.
FusionResult relational_fusion(const RelationIndex& relations, const nd::Tensor& element_features,
                               const nd::Tensor& relation_features, const FusionParams& fusion,
                               const AggregatorParams& aggregator, bool normalize);

/// Row b of the result is between_features[b] ++ node_features[shared_node(b)].
nd::Tensor join(const nd::Tensor& node_features, const nd::Tensor& between_features,
                std::span<const NodeId> shared_nodes);

struct FeedForwardParams {
  nd::Tensor weight;
  nd::Tensor bias;
  nd::Activation activation = nd::Activation::elu();
};

struct RfnLayerParams {
  std::optional<FusionParams> node_fusion;  // absent when switched off
  AggregatorParams node_aggregator;
  std::optional<FusionParams> edge_fusion;
  AggregatorParams edge_aggregator;
  std::optional<FeedForwardParams> between;
  bool normalize = false;
};

struct Heads {
  bool nodes = false;
  bool edges = true;
  bool between_edges = false;
  friend bool operator==(const Heads&, const Heads&) = default;
};

struct RfnConfig {
  FusionKind fusion = FusionKind::interactional;
  AggregatorKind aggregator = AggregatorKind::attentional;
  std::size_t layers = 2;
  /// Output width of layers 1..K-1; a single entry is reused for every layer.
  std::vector<std::size_t> hidden_dims = {32};
  std::size_t output_dim = 1;
  nd::Activation hidden_activation = nd::Activation::elu();
  nd::Activation output_activation = nd::Activation::relu();
  NormalizationPlacement normalization = NormalizationPlacement::first_layer;
  Heads heads;
  std::size_t node_input_dim = kNodeFeatures;
  std::size_t edge_input_dim = kEdgeFeaturesWithNodes;
  std::size_t between_input_dim = kBetweenEdgeFeatures;

  std::size_t hidden_dim(std::size_t layer) const;
  bool normalize_layer(std::size_t layer) const;
  void validate() const;

  /// Defaults for the two tasks: relu head with first-layer normalization
  /// for speeds, softmax head with normalization everywhere for limits.
  static RfnConfig for_task(Task task, FusionKind fusion, AggregatorKind aggregator,
                            std::size_t hidden, std::size_t output_dim);
};

struct LayerState {
  nd::Tensor nodes;
  nd::Tensor edges;
  nd::Tensor between_edges;
};

/// Intermediate values captured during a forward pass.
struct ForwardTrace {
  /// Outputs of every layer before any head activation (index k-1 for layer k).
  std::vector<LayerState> layers;
  /// Attention weights used by the edge view of each layer, one per dual relation.
  std::vector<nd::Matrix> edge_attention;
  std::vector<nd::Matrix> node_attention;
};

class RfnModel final : public EdgeModel {
 public:
  static RfnModel create(const RfnConfig& config, std::uint64_t seed);
  /// Rebuilds a model around given layer parameters (checkpoint loading).
  static RfnModel from_layers(const RfnConfig& config, std::vector<RfnLayerParams> layers);

  RfnModel(RfnModel&&) = default;
  RfnModel& operator=(RfnModel&&) = default;
  RfnModel(const RfnModel&) = delete;
  RfnModel& operator=(const RfnModel&) = delete;

  const RfnConfig& config() const { return config_; }
  const std::vector<RfnLayerParams>& layers() const { return layers_; }
  std::vector<RfnLayerParams>& mutable_layers() { return layers_; }

  /// Full forward pass; active heads carry the output activation.
  LayerState forward(const GraphContext& graph, const FeatureSet& features,
                     ForwardTrace* trace = nullptr) const;
  LayerState forward(const GraphContext& graph, const LayerState& inputs,
                     ForwardTrace* trace = nullptr) const;

  nd::Tensor predict_edges(const GraphContext& graph, const FeatureSet& features) const override;
  std::vector<nd::Tensor> parameters() const override;
  std::vector<std::string> parameter_names() const override;
  std::unique_ptr<EdgeModel> clone() const override;
  RfnModel clone_model() const;
  std::string kind() const override { return "rfn"; }
  std::size_t depth() const override { return config_.layers; }
  std::size_t output_dim() const override { return config_.output_dim; }

 private:
  RfnModel(RfnConfig config, std::vector<RfnLayerParams> layers)
      : config_(std::move(config)), layers_(std::move(layers)) {}

  RfnConfig config_;
  std::vector<RfnLayerParams> layers_;
};

/// Feature matrices as constant tensors, ready for forward().
LayerState input_state(const FeatureSet& features);

}  // namespace rfn
