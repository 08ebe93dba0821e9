#include "rfn/rfn.hpp"

#include <stdexcept>

namespace rfn {

using nd::Activation;
using nd::Matrix;
using nd::Tensor;

std::string to_string(FusionKind kind) {
  return kind == FusionKind::additive ? "additive" : "interactional";
}

std::string to_string(AggregatorKind kind) {
  return kind == AggregatorKind::attentional ? "attentional" : "non_attentional";
}

std::string to_string(NormalizationPlacement placement) {
  switch (placement) {
    case NormalizationPlacement::none: return "none";
    case NormalizationPlacement::first_layer: return "first_layer";
    case NormalizationPlacement::all_layers: return "all_layers";
  }
  return "none";
}

FusionKind parse_fusion_kind(const std::string& text) {
  if (text == "additive") return FusionKind::additive;
  if (text == "interactional") return FusionKind::interactional;
  throw std::invalid_argument("unknown fusion kind '" + text + "'");
}

AggregatorKind parse_aggregator_kind(const std::string& text) {
  if (text == "attentional") return AggregatorKind::attentional;
  if (text == "non_attentional" || text == "non-attentional" || text == "mean")
    return AggregatorKind::non_attentional;
  throw std::invalid_argument("unknown aggregator kind '" + text + "'");
}

NormalizationPlacement parse_normalization(const std::string& text) {
  if (text == "none") return NormalizationPlacement::none;
  if (text == "first_layer" || text == "first") return NormalizationPlacement::first_layer;
  if (text == "all_layers" || text == "all" || text == "both")
    return NormalizationPlacement::all_layers;
  throw std::invalid_argument("unknown normalization placement '" + text + "'");
}

// -- fusion -------------------------------------------------------------------

namespace {

Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  return Tensor::parameter(nd::xavier_uniform(rows, cols, rng));
}

Tensor zeros(std::size_t rows, std::size_t cols) {
  return Tensor::parameter(Matrix(rows, cols));
}

void expect_cols(const Tensor& t, std::size_t cols, const char* what) {
  if (t.cols() != cols)
    throw nd::ShapeError(std::string(what) + " width " + std::to_string(t.cols()) +
                         ", expected " + std::to_string(cols));
}

}  // namespace

FusionParams FusionParams::additive(std::size_t source_dim, std::size_t target_dim,
                                    std::size_t relation_dim, std::size_t out_dim,
                                    Activation activation, Rng& rng) {
  FusionParams p;
  p.kind = FusionKind::additive;
  p.source_dim = source_dim;
  p.target_dim = target_dim;
  p.relation_dim = relation_dim;
  p.out_dim = out_dim;
  p.activation = activation;
  p.source_weight = xavier(source_dim, out_dim, rng);
  p.target_weight = xavier(target_dim, out_dim, rng);
  p.relation_weight = xavier(relation_dim, out_dim, rng);
  p.bias = zeros(1, out_dim);
  return p;
}

FusionParams FusionParams::interactional(std::size_t source_dim, std::size_t target_dim,
                                         std::size_t relation_dim, std::size_t out_dim,
                                         Activation activation, Rng& rng) {
  FusionParams p;
  p.kind = FusionKind::interactional;
  p.source_dim = source_dim;
  p.target_dim = target_dim;
  p.relation_dim = relation_dim;
  p.out_dim = out_dim;
  p.activation = activation;
  const std::size_t d = p.relational_dim();
  p.interaction_weight = xavier(d, d, rng);
  p.output_weight = xavier(d, out_dim, rng);
  p.bias = zeros(1, out_dim);
  return p;
}

std::vector<Tensor> FusionParams::parameters() const {
  if (kind == FusionKind::additive) return {source_weight, target_weight, relation_weight, bias};
  return {interaction_weight, output_weight, bias};
}

std::vector<std::string> FusionParams::parameter_names() const {
  if (kind == FusionKind::additive) return {"W_s", "W_t", "W_r", "b"};
  return {"W_I", "W_R", "b"};
}

AggregatorParams AggregatorParams::attentional(std::size_t relational_dim, Rng& rng) {
  AggregatorParams p;
  p.kind = AggregatorKind::attentional;
  p.coefficient_weight = xavier(relational_dim, 1, rng);
  return p;
}

std::vector<Tensor> AggregatorParams::parameters() const {
  if (kind == AggregatorKind::attentional) return {coefficient_weight};
  return {};
}

std::vector<std::string> AggregatorParams::parameter_names() const {
  if (kind == AggregatorKind::attentional) return {"W_C"};
  return {};
}

Tensor fuse_additive(const FusionParams& p, const Tensor& source, const Tensor& target,
                     const Tensor& relation) {
  expect_cols(source, p.source_dim, "fusion source");
  expect_cols(target, p.target_dim, "fusion target");
  expect_cols(relation, p.relation_dim, "fusion relation");
  Tensor z = nd::add(nd::add(nd::matmul(source, p.source_weight),
                             nd::matmul(target, p.target_weight)),
                     nd::matmul(relation, p.relation_weight));
  return nd::activate(p.activation, nd::add_row(z, p.bias));
}

Tensor fuse_interactional(const FusionParams& p, const Tensor& source, const Tensor& target,
                          const Tensor& relation) {
  expect_cols(source, p.source_dim, "fusion source");
  expect_cols(target, p.target_dim, "fusion target");
  expect_cols(relation, p.relation_dim, "fusion relation");
  const Tensor h = nd::concat_cols({source, target, relation});
  const Tensor interaction = nd::mul(nd::matmul(h, p.interaction_weight), h);
  return nd::add_row(nd::activate(p.activation, nd::matmul(interaction, p.output_weight)), p.bias);
}

Tensor fuse(const FusionParams& p, const Tensor& source, const Tensor& target,
            const Tensor& relation) {
  return p.kind == FusionKind::additive ? fuse_additive(p, source, target, relation)
                                        : fuse_interactional(p, source, target, relation);
}

// -- aggregation ------------------------------------------------------------------

Tensor attention_weights(const AggregatorParams& p, const Tensor& relational,
                         std::span<const std::size_t> element, std::size_t element_count) {
  if (p.kind != AggregatorKind::attentional)
    throw std::logic_error("attention weights requested from a non-attentional aggregator");
  if (relational.rows() != element.size())
    throw nd::ShapeError("attention: relational rows and segment ids disagree");
  const Tensor scores = nd::activate(p.coefficient_activation,
                                     nd::matmul(relational, p.coefficient_weight));
  return nd::segment_softmax(scores, element, element_count);
}

Tensor attention_weights(const AggregatorParams& p, const Tensor& relational) {
  if (relational.rows() == 0) throw std::invalid_argument("attention over an empty neighborhood");
  const std::vector<std::size_t> element(relational.rows(), 0);
  return attention_weights(p, relational, element, 1);
}

Aggregate aggregate(const AggregatorParams& p, const Tensor& fused, const Tensor& relational,
                    std::span<const std::size_t> element, std::size_t element_count) {
  if (fused.rows() != element.size() || relational.rows() != element.size())
    throw nd::ShapeError("aggregate: fused, relational and segment rows disagree");
  if (p.kind == AggregatorKind::non_attentional)
    return {nd::segment_mean(fused, element, element_count), Tensor()};
  Tensor weights = attention_weights(p, relational, element, element_count);
  Tensor values = nd::segment_weighted_sum(fused, weights, element, element_count);
  return {std::move(values), std::move(weights)};
}

FusionResult relational_fusion(const RelationIndex& relations, const Tensor& element_features,
                               const Tensor& relation_features, const FusionParams& fusion,
                               const AggregatorParams& aggregator, bool normalize) {
  if (element_features.rows() != relations.element_count)
    throw nd::ShapeError("relational fusion: element rows " +
                         std::to_string(element_features.rows()) + " vs " +
                         std::to_string(relations.element_count) + " elements");
  const Tensor source = nd::gather_rows(element_features, relations.element);
  const Tensor target = nd::gather_rows(element_features, relations.neighbor);
  const Tensor relation = nd::gather_rows(relation_features, relations.relation);
  const Tensor fused = fuse(fusion, source, target, relation);
  const Tensor relational = aggregator.kind == AggregatorKind::attentional
                                ? nd::concat_cols({source, target, relation})
                                : fused;
  Aggregate agg = aggregate(aggregator, fused, relational, relations.element,
                            relations.element_count);
  FusionResult out{std::move(agg.values), std::move(agg.weights)};
  if (normalize) out.values = nd::l2_normalize_rows(out.values);
  return out;
}

Tensor join(const Tensor& node_features, const Tensor& between_features,
            std::span<const NodeId> shared_nodes) {
  if (between_features.rows() != shared_nodes.size())
    throw nd::ShapeError("join: between-edge rows and shared nodes disagree");
  return nd::concat_cols({between_features, nd::gather_rows(node_features, shared_nodes)});
}

// -- configuration -------------------------------------------------------------------

std::size_t RfnConfig::hidden_dim(std::size_t layer) const {
  if (hidden_dims.empty()) throw std::invalid_argument("hidden_dims is empty");
  const std::size_t i = layer - 1;
  return i < hidden_dims.size() ? hidden_dims[i] : hidden_dims.back();
}

bool RfnConfig::normalize_layer(std::size_t layer) const {
  switch (normalization) {
    case NormalizationPlacement::none: return false;
    case NormalizationPlacement::first_layer: return layer == 1;
    case NormalizationPlacement::all_layers: return true;
  }
  return false;
}

void RfnConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("an RFN needs at least one layer");
  if (!heads.nodes && !heads.edges && !heads.between_edges)
    throw std::invalid_argument("an RFN needs at least one active output head");
  if (output_dim < 1) throw std::invalid_argument("output_dim must be positive");
  if (layers > 1) {
    if (hidden_dims.empty()) throw std::invalid_argument("hidden_dims is empty");
    for (std::size_t d : hidden_dims)
      if (d < 1) throw std::invalid_argument("hidden dims must be positive");
  }
}

RfnConfig RfnConfig::for_task(Task task, FusionKind fusion, AggregatorKind aggregator,
                              std::size_t hidden, std::size_t output_dim) {
  RfnConfig c;
  c.fusion = fusion;
  c.aggregator = aggregator;
  c.hidden_dims = {hidden};
  c.output_dim = output_dim;
  if (task == Task::speed_regression) {
    c.output_activation = Activation::relu();
    c.normalization = NormalizationPlacement::first_layer;
  } else {
    c.output_activation = Activation::softmax_rows();
    c.normalization = NormalizationPlacement::all_layers;
  }
  return c;
}

// -- model ---------------------------------------------------------------------------

namespace {

FusionParams make_fusion(FusionKind kind, std::size_t s, std::size_t t, std::size_t r,
                         std::size_t out, Activation act, Rng& rng) {
  return kind == FusionKind::additive ? FusionParams::additive(s, t, r, out, act, rng)
                                      : FusionParams::interactional(s, t, r, out, act, rng);
}

AggregatorParams make_aggregator(AggregatorKind kind, std::size_t relational_dim, Rng& rng) {
  return kind == AggregatorKind::attentional ? AggregatorParams::attentional(relational_dim, rng)
                                             : AggregatorParams::non_attentional();
}

Tensor copy_param(const Tensor& t) { return Tensor(t.value(), t.requires_grad()); }

FusionParams copy_fusion(const FusionParams& p) {
  FusionParams c = p;
  c.source_weight = copy_param(p.source_weight);
  c.target_weight = copy_param(p.target_weight);
  c.relation_weight = copy_param(p.relation_weight);
  c.interaction_weight = copy_param(p.interaction_weight);
  c.output_weight = copy_param(p.output_weight);
  c.bias = copy_param(p.bias);
  return c;
}

AggregatorParams copy_aggregator(const AggregatorParams& p) {
  AggregatorParams c = p;
  c.coefficient_weight = copy_param(p.coefficient_weight);
  return c;
}

}  // namespace

RfnModel RfnModel::create(const RfnConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<RfnLayerParams> layers;
  std::size_t dv = config.node_input_dim;
  std::size_t de = config.edge_input_dim;
  std::size_t db = config.between_input_dim;
  for (std::size_t k = 1; k <= config.layers; ++k) {
    const bool last = k == config.layers;
    const std::size_t width = last ? config.output_dim : config.hidden_dim(k);
    // Final-layer fusion is linear; the head activation is applied after aggregation.
    const Activation act = last ? Activation::identity() : config.hidden_activation;
    RfnLayerParams layer;
    layer.normalize = config.normalize_layer(k);
    if (!last || config.heads.nodes) {
      layer.node_fusion = make_fusion(config.fusion, dv, dv, de, width, act, rng);
      layer.node_aggregator = make_aggregator(config.aggregator, 2 * dv + de, rng);
    }
    if (!last || config.heads.edges) {
      layer.edge_fusion = make_fusion(config.fusion, de, de, db + dv, width, act, rng);
      layer.edge_aggregator = make_aggregator(config.aggregator, 2 * de + db + dv, rng);
    }
    if (!last || config.heads.between_edges) {
      FeedForwardParams ff;
      ff.weight = xavier(db, width, rng);
      ff.bias = zeros(1, width);
      ff.activation = act;
      layer.between = std::move(ff);
    }
    layers.push_back(std::move(layer));
    if (!last) dv = de = db = width;
  }
  return RfnModel(config, std::move(layers));
}

RfnModel RfnModel::from_layers(const RfnConfig& config, std::vector<RfnLayerParams> layers) {
  config.validate();
  if (layers.size() != config.layers)
    throw std::invalid_argument("layer count disagrees with the configuration");
  return RfnModel(config, std::move(layers));
}

LayerState input_state(const FeatureSet& features) {
  return {Tensor::constant(features.nodes), Tensor::constant(features.edges),
          Tensor::constant(features.between_edges)};
}

LayerState RfnModel::forward(const GraphContext& graph, const FeatureSet& features,
                             ForwardTrace* trace) const {
  return forward(graph, input_state(features), trace);
}

LayerState RfnModel::forward(const GraphContext& graph, const LayerState& inputs,
                             ForwardTrace* trace) const {
  const RoadNetwork& net = graph.network;
  if (inputs.nodes.rows() != net.node_count() || inputs.edges.rows() != net.edge_count() ||
      inputs.between_edges.rows() != net.between_edge_count())
    throw nd::ShapeError("forward: feature rows do not match the network");
  if (inputs.nodes.cols() != config_.node_input_dim ||
      inputs.edges.cols() != config_.edge_input_dim ||
      inputs.between_edges.cols() != config_.between_input_dim)
    throw nd::ShapeError("forward: feature widths do not match the model's input schedule");

  if (trace) *trace = ForwardTrace{};
  LayerState h = inputs;
  for (const RfnLayerParams& layer : layers_) {
    LayerState next = h;
    Matrix node_attention, edge_attention;
    if (layer.node_fusion) {
      FusionResult r = relational_fusion(graph.primal_relations, h.nodes, h.edges,
                                         *layer.node_fusion, layer.node_aggregator,
                                         layer.normalize);
      next.nodes = r.values;
      if (layer.node_aggregator.kind == AggregatorKind::attentional) node_attention = r.attention.value();
    }
    if (layer.edge_fusion) {
      const Tensor joined = join(h.nodes, h.between_edges, graph.shared_nodes);
      FusionResult r = relational_fusion(graph.dual_relations, h.edges, joined,
                                         *layer.edge_fusion, layer.edge_aggregator,
                                         layer.normalize);
      next.edges = r.values;
      if (layer.edge_aggregator.kind == AggregatorKind::attentional) edge_attention = r.attention.value();
    }
    if (layer.between) {
      next.between_edges = nd::activate(
          layer.between->activation,
          nd::add_row(nd::matmul(h.between_edges, layer.between->weight), layer.between->bias));
    }
    if (trace) {
      trace->layers.push_back(next);
      trace->node_attention.push_back(std::move(node_attention));
      trace->edge_attention.push_back(std::move(edge_attention));
    }
    h = std::move(next);
  }

  const Activation& head = config_.output_activation;
  if (config_.heads.nodes) h.nodes = nd::activate(head, h.nodes);
  if (config_.heads.edges) h.edges = nd::activate(head, h.edges);
  if (config_.heads.between_edges) h.between_edges = nd::activate(head, h.between_edges);
  return h;
}

Tensor RfnModel::predict_edges(const GraphContext& graph, const FeatureSet& features) const {
  if (!config_.heads.edges) throw std::logic_error("model has no edge output head");
  return forward(graph, features).edges;
}

std::vector<Tensor> RfnModel::parameters() const {
  std::vector<Tensor> out;
  auto extend = [&out](const std::vector<Tensor>& ts) { out.insert(out.end(), ts.begin(), ts.end()); };
  for (const RfnLayerParams& layer : layers_) {
    if (layer.node_fusion) {
      extend(layer.node_fusion->parameters());
      extend(layer.node_aggregator.parameters());
    }
    if (layer.edge_fusion) {
      extend(layer.edge_fusion->parameters());
      extend(layer.edge_aggregator.parameters());
    }
    if (layer.between) extend({layer.between->weight, layer.between->bias});
  }
  return out;
}

std::vector<std::string> RfnModel::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const RfnLayerParams& layer = layers_[k];
    const std::string prefix = "layer" + std::to_string(k + 1) + ".";
    auto extend = [&](const std::string& view, const std::vector<std::string>& names) {
      for (const auto& n : names) out.push_back(prefix + view + "." + n);
    };
    if (layer.node_fusion) {
      extend("node", layer.node_fusion->parameter_names());
      extend("node", layer.node_aggregator.parameter_names());
    }
    if (layer.edge_fusion) {
      extend("edge", layer.edge_fusion->parameter_names());
      extend("edge", layer.edge_aggregator.parameter_names());
    }
    if (layer.between) extend("between", {"W", "b"});
  }
  return out;
}

RfnModel RfnModel::clone_model() const {
  std::vector<RfnLayerParams> layers;
  layers.reserve(layers_.size());
  for (const RfnLayerParams& layer : layers_) {
    RfnLayerParams c;
    c.normalize = layer.normalize;
    if (layer.node_fusion) c.node_fusion = copy_fusion(*layer.node_fusion);
    c.node_aggregator = copy_aggregator(layer.node_aggregator);
    if (layer.edge_fusion) c.edge_fusion = copy_fusion(*layer.edge_fusion);
    c.edge_aggregator = copy_aggregator(layer.edge_aggregator);
    if (layer.between) {
      FeedForwardParams ff = *layer.between;
      ff.weight = copy_param(layer.between->weight);
      ff.bias = copy_param(layer.between->bias);
      c.between = std::move(ff);
    }
    layers.push_back(std::move(c));
  }
  return RfnModel(config_, std::move(layers));
}

std::unique_ptr<EdgeModel> RfnModel::clone() const {
  return std::make_unique<RfnModel>(clone_model());
}

}  // namespace rfn
