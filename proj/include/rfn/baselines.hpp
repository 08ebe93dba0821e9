#pragma once

// Graph-free reference models: the Grouping Estimator, which predicts from
// the (road category, city zone) group alone, and a two-layer perceptron
// over edge encodings.

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "rfn/dataset.hpp"
#include "rfn/model.hpp"

namespace rfn {

struct GroupKey {
  int category = 1;
  bool in_city = false;
  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

/// An edge is in the city zone iff either endpoint is.
GroupKey group_key(const RoadNetwork& network, EdgeId edge);

struct GroupEntry {
  double value = 0.0;  // mean speed, or class label for classification
  std::size_t support = 0;
  friend bool operator==(const GroupEntry&, const GroupEntry&) = default;
};

struct GroupingTable {
  Task task = Task::speed_regression;
  std::map<GroupKey, GroupEntry> groups;
  GroupEntry fallback;

  /// The group's value, or the global fallback for groups unseen in training.
  double lookup(const GroupKey& key) const;
  friend bool operator==(const GroupingTable&, const GroupingTable&) = default;
};

/// Regression: per group, the mean of segment-mean speeds. Classification:
/// per group, the most frequent label (smallest label on ties). The
/// fallback is the same statistic over all training entries.
GroupingTable grouping_fit(const RoadNetwork& network, const Dataset& dataset,
                           std::span<const std::size_t> training_entries);

double grouping_predict(const GroupingTable& table, const RoadNetwork& network, EdgeId edge);
/// One prediction per edge of the network.
std::vector<double> grouping_predict_all(const GroupingTable& table, const RoadNetwork& network);

struct MlpConfig {
  std::size_t input_dim = kEdgeFeaturesWithNodes;
  std::size_t hidden_dim = 128;
  std::size_t output_dim = 1;
  nd::Activation hidden_activation = nd::Activation::elu();
  nd::Activation output_activation = nd::Activation::relu();
};

/// head(act(X W1 + b1) W2 + b2), applied to each edge row independently.
class MlpModel final : public EdgeModel {
 public:
  static MlpModel create(const MlpConfig& config, std::uint64_t seed);
  static MlpModel from_parameters(const MlpConfig& config, std::vector<nd::Tensor> params);

  MlpModel(MlpModel&&) = default;
  MlpModel& operator=(MlpModel&&) = default;
  MlpModel(const MlpModel&) = delete;
  MlpModel& operator=(const MlpModel&) = delete;

  const MlpConfig& config() const { return config_; }

  nd::Tensor forward(const nd::Tensor& edge_features) const;
  nd::Tensor predict_edges(const GraphContext& graph, const FeatureSet& features) const override;
  std::vector<nd::Tensor> parameters() const override { return {w1_, b1_, w2_, b2_}; }
  std::vector<std::string> parameter_names() const override { return {"W1", "b1", "W2", "b2"}; }
  std::unique_ptr<EdgeModel> clone() const override;
  std::string kind() const override { return "mlp"; }
  std::size_t depth() const override { return 0; }
  std::size_t output_dim() const override { return config_.output_dim; }

 private:
  MlpModel() = default;
  MlpConfig config_;
  nd::Tensor w1_, b1_, w2_, b2_;
};

}  // namespace rfn
