#include "rfn/baselines.hpp"

#include <algorithm>
#include <stdexcept>

namespace rfn {

GroupKey group_key(const RoadNetwork& network, EdgeId edge) {
  const Edge& e = network.edges().at(edge);
  const bool city = network.nodes()[e.source].zone == Zone::city ||
                    network.nodes()[e.target].zone == Zone::city;
  return {e.category, city};
}

double GroupingTable::lookup(const GroupKey& key) const {
  auto it = groups.find(key);
  return it == groups.end() ? fallback.value : it->second.value;
}

namespace {

struct Accumulator {
  double sum = 0.0;
  std::map<int, std::size_t> counts;
  std::size_t support = 0;

  void add_speed(double segment_mean_speed) {
    sum += segment_mean_speed;
    ++support;
  }
  void add_label(int label) {
    ++counts[label];
    ++support;
  }
  GroupEntry finish(Task task) const {
    if (task == Task::speed_regression) return {sum / static_cast<double>(support), support};
    // std::map iterates labels in ascending order, so strict > keeps the smallest on ties.
    int best = 0;
    std::size_t best_count = 0;
    for (const auto& [label, count] : counts)
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    return {static_cast<double>(best), support};
  }
};

}  // namespace

GroupingTable grouping_fit(const RoadNetwork& network, const Dataset& dataset,
                           std::span<const std::size_t> training_entries) {
  if (training_entries.empty()) throw DatasetError("grouping estimator needs training entries");
  std::map<GroupKey, Accumulator> acc;
  Accumulator all;
  for (std::size_t i : training_entries) {
    const DatasetEntry& entry = dataset.entries.at(i);
    Accumulator& a = acc[group_key(network, entry.edge)];
    if (dataset.task == Task::speed_regression) {
      const double m = segment_mean(entry.speeds);
      a.add_speed(m);
      all.add_speed(m);
    } else {
      a.add_label(entry.label);
      all.add_label(entry.label);
    }
  }
  GroupingTable table;
  table.task = dataset.task;
  for (const auto& [key, a] : acc) table.groups.emplace(key, a.finish(dataset.task));
  table.fallback = all.finish(dataset.task);
  return table;
}

double grouping_predict(const GroupingTable& table, const RoadNetwork& network, EdgeId edge) {
  return table.lookup(group_key(network, edge));
}

std::vector<double> grouping_predict_all(const GroupingTable& table, const RoadNetwork& network) {
  std::vector<double> out(network.edge_count());
  for (EdgeId e = 0; e < network.edge_count(); ++e) out[e] = grouping_predict(table, network, e);
  return out;
}

// -- MLP ------------------------------------------------------------------------

MlpModel MlpModel::create(const MlpConfig& config, std::uint64_t seed) {
  if (config.input_dim == 0 || config.hidden_dim == 0 || config.output_dim == 0)
    throw std::invalid_argument("MLP dimensions must be positive");
  Rng rng(seed);
  MlpModel m;
  m.config_ = config;
  m.w1_ = nd::Tensor::parameter(nd::xavier_uniform(config.input_dim, config.hidden_dim, rng));
  m.b1_ = nd::Tensor::parameter(nd::Matrix(1, config.hidden_dim));
  m.w2_ = nd::Tensor::parameter(nd::xavier_uniform(config.hidden_dim, config.output_dim, rng));
  m.b2_ = nd::Tensor::parameter(nd::Matrix(1, config.output_dim));
  return m;
}

MlpModel MlpModel::from_parameters(const MlpConfig& config, std::vector<nd::Tensor> params) {
  if (params.size() != 4) throw std::invalid_argument("MLP expects four parameter blocks");
  const std::pair<std::size_t, std::size_t> shapes[] = {{config.input_dim, config.hidden_dim},
                                                        {1, config.hidden_dim},
                                                        {config.hidden_dim, config.output_dim},
                                                        {1, config.output_dim}};
  for (std::size_t i = 0; i < 4; ++i)
    if (params[i].rows() != shapes[i].first || params[i].cols() != shapes[i].second)
      throw nd::ShapeError("MLP parameter block " + std::to_string(i) + " has shape " +
                           nd::shape_string(params[i].value()));
  MlpModel m;
  m.config_ = config;
  m.w1_ = params[0];
  m.b1_ = params[1];
  m.w2_ = params[2];
  m.b2_ = params[3];
  return m;
}

nd::Tensor MlpModel::forward(const nd::Tensor& x) const {
  if (x.cols() != config_.input_dim)
    throw nd::ShapeError("MLP input width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(config_.input_dim));
  const nd::Tensor h =
      nd::activate(config_.hidden_activation, nd::add_row(nd::matmul(x, w1_), b1_));
  return nd::activate(config_.output_activation, nd::add_row(nd::matmul(h, w2_), b2_));
}

nd::Tensor MlpModel::predict_edges(const GraphContext&, const FeatureSet& features) const {
  return forward(nd::Tensor::constant(features.edges));
}

std::unique_ptr<EdgeModel> MlpModel::clone() const {
  auto copy = [](const nd::Tensor& t) { return nd::Tensor(t.value(), t.requires_grad()); };
  MlpModel m;
  m.config_ = config_;
  m.w1_ = copy(w1_);
  m.b1_ = copy(b1_);
  m.w2_ = copy(w2_);
  m.b2_ = copy(b2_);
  return std::make_unique<MlpModel>(std::move(m));
}

}  // namespace rfn
