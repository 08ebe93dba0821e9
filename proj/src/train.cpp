#include "rfn/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>

#include "rfn/eval.hpp"

namespace rfn {

using nd::Matrix;
using nd::Tensor;

// -- losses -------------------------------------------------------------------

Tensor amse_loss(const Tensor& predictions, std::span<const std::vector<double>> records) {
  if (records.empty()) throw TrainingError("AMSE over an empty set of segments");
  if (predictions.cols() != 1 || predictions.rows() != records.size())
    throw nd::ShapeError("AMSE expects " + std::to_string(records.size()) +
                         " x 1 predictions, got " + nd::shape_string(predictions.value()));
  const double n = static_cast<double>(records.size());
  // d/dyhat_s = (2/N) (yhat_s - mean(Y_s))
  std::vector<double> slope(records.size());
  double total = 0.0;
  for (std::size_t s = 0; s < records.size(); ++s) {
    if (records[s].empty()) throw TrainingError("segment without records in AMSE");
    const double yhat = predictions.value()(s, 0);
    double sq = 0.0;
    for (double y : records[s]) sq += (yhat - y) * (yhat - y);
    total += sq / static_cast<double>(records[s].size());
    slope[s] = 2.0 * (yhat - segment_mean(records[s])) / n;
  }
  return nd::make_op(Matrix(1, 1, total / n), {predictions},
                     [slope = std::move(slope)](const Matrix& g, std::span<Matrix* const> d) {
                       for (std::size_t s = 0; s < slope.size(); ++s)
                         (*d[0])(s, 0) += g(0, 0) * slope[s];
                     });
}

Tensor cross_entropy_loss(const Tensor& probabilities, std::span<const std::size_t> class_indices) {
  const Matrix& p = probabilities.value();
  if (class_indices.empty()) throw TrainingError("cross entropy over an empty batch");
  if (p.rows() != class_indices.size())
    throw nd::ShapeError("cross entropy: " + std::to_string(class_indices.size()) +
                         " labels for " + std::to_string(p.rows()) + " rows");
  const double n = static_cast<double>(p.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double row = 0.0;
    for (double v : p.row(i)) row += v;
    if (std::abs(row - 1.0) > kProbabilityRowTolerance)
      throw TrainingError("cross entropy: row " + std::to_string(i) + " sums to " +
                          std::to_string(row));
    if (class_indices[i] >= p.cols())
      throw nd::ShapeError("cross entropy: class index out of range");
    total -= std::log(std::max(p(i, class_indices[i]), kProbabilityFloor));
  }
  std::vector<std::size_t> labels(class_indices.begin(), class_indices.end());
  return nd::make_op(
      Matrix(1, 1, total / n), {probabilities},
      [labels = std::move(labels), p, n](const Matrix& g, std::span<Matrix* const> d) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
          const double q = p(i, labels[i]);
          if (q >= kProbabilityFloor) (*d[0])(i, labels[i]) -= g(0, 0) / (n * q);
        }
      });
}

// -- optimizer ------------------------------------------------------------------

AdamState adam_init(std::span<const Tensor> params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.rows(), p.cols());
    state.second_moment.emplace_back(p.rows(), p.cols());
  }
  return state;
}

void adam_step(AdamState& state, std::span<const Tensor> params) {
  if (params.size() != state.first_moment.size())
    throw nd::ShapeError("adam: parameter count changed since initialization");
  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    const Matrix& g = p.grad();
    Matrix& theta = p.mutable_value();
    if (!m.same_shape(theta) || !g.same_shape(theta))
      throw nd::ShapeError("adam: gradient shape mismatch for parameter " + std::to_string(i));
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g.values()[k];
      double& mk = m.values()[k];
      double& vk = v.values()[k];
      mk = c.beta1 * mk + (1.0 - c.beta1) * gk;
      vk = c.beta2 * vk + (1.0 - c.beta2) * gk * gk;
      const double mhat = mk / correction1;
      const double vhat = vk / correction2;
      theta.values()[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

// -- sampling and batching --------------------------------------------------------

std::vector<std::size_t> oversample(std::span<const int> labels, Rng& rng) {
  if (labels.empty()) throw TrainingError("oversampling an empty label set");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::size_t largest = 0;
  for (const auto& [label, members] : by_class) largest = std::max(largest, members.size());
  std::vector<std::size_t> out;
  out.reserve(largest * by_class.size());
  for (const auto& [label, members] : by_class) {
    out.insert(out.end(), members.begin(), members.end());
    for (std::size_t k = members.size(); k < largest; ++k)
      out.push_back(members[static_cast<std::size_t>(rng.below(members.size()))]);
  }
  rng.shuffle(std::span<std::size_t>(out));
  return out;
}

namespace {

/// Max flow on a small bipartite graph by BFS augmenting paths. Nodes:
/// 0 source, 1..R rows, R+1..R+C columns, R+C+1 sink.
class BipartiteFlow {
 public:
  BipartiteFlow(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), adj_(rows + cols + 2) {}

  void add(std::size_t from, std::size_t to, long cap) {
    adj_[from].push_back(arcs_.size());
    arcs_.push_back({to, cap});
    adj_[to].push_back(arcs_.size());
    arcs_.push_back({from, 0});
  }
  std::size_t source() const { return 0; }
  std::size_t sink() const { return rows_ + cols_ + 1; }
  std::size_t row(std::size_t r) const { return 1 + r; }
  std::size_t col(std::size_t c) const { return 1 + rows_ + c; }

  long run() {
    long total = 0;
    for (;;) {
      std::vector<std::size_t> via(adj_.size(), kNone);
      std::queue<std::size_t> q;
      q.push(source());
      std::vector<char> seen(adj_.size(), 0);
      seen[source()] = 1;
      while (!q.empty() && !seen[sink()]) {
        const std::size_t u = q.front();
        q.pop();
        for (std::size_t a : adj_[u]) {
          const std::size_t w = arcs_[a].to;
          if (seen[w] || arcs_[a].cap <= 0) continue;
          seen[w] = 1;
          via[w] = a;
          q.push(w);
        }
      }
      if (!seen[sink()]) return total;
      long push = std::numeric_limits<long>::max();
      for (std::size_t w = sink(); w != source(); w = arcs_[via[w] ^ 1].to)
        push = std::min(push, arcs_[via[w]].cap);
      for (std::size_t w = sink(); w != source(); w = arcs_[via[w] ^ 1].to) {
        arcs_[via[w]].cap -= push;
        arcs_[via[w] ^ 1].cap += push;
      }
      total += push;
    }
  }

  /// Flow on the arc added as the index-th call to add().
  long flow(std::size_t index) const { return arcs_[2 * index + 1].cap; }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  struct Arc {
    std::size_t to;
    long cap;
  };
  std::size_t rows_, cols_;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<Arc> arcs_;
};

}  // namespace

BatchPlan stratified_batches(std::span<const EdgeId> edges, std::span<const int> categories,
                             std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw TrainingError("batch size must be positive");
  if (edges.size() != categories.size())
    throw TrainingError("stratified batches: one category per edge required");
  BatchPlan plan;
  const std::size_t n = edges.size();
  if (n == 0) return plan;

  std::map<int, std::vector<EdgeId>> by_category;
  for (std::size_t i = 0; i < n; ++i) by_category[categories[i]].push_back(edges[i]);
  std::vector<std::vector<EdgeId>> pools;
  for (auto& [category, pool] : by_category) pools.push_back(std::move(pool));

  const std::size_t num_batches = (n + batch_size - 1) / batch_size;
  const std::size_t num_pools = pools.size();
  std::vector<std::size_t> sizes(num_batches, batch_size);
  sizes.back() = n - (num_batches - 1) * batch_size;

  // count[b][c] = floor(s_b n_c / n) plus a 0/1 top-up; top-ups only go to
  // cells whose share is fractional and must restore every row and column
  // total, which is a bipartite flow problem.
  std::vector<std::vector<std::size_t>> count(num_batches, std::vector<std::size_t>(num_pools));
  std::vector<long> row_need(num_batches), col_need(num_pools);
  for (std::size_t c = 0; c < num_pools; ++c) col_need[c] = static_cast<long>(pools[c].size());
  BipartiteFlow flow(num_batches, num_pools);
  std::vector<std::pair<std::size_t, std::size_t>> cell_of_arc;
  std::size_t arc_count = 0;
  std::vector<std::size_t> cell_arc;
  for (std::size_t b = 0; b < num_batches; ++b) {
    row_need[b] = static_cast<long>(sizes[b]);
    for (std::size_t c = 0; c < num_pools; ++c) {
      const std::size_t numerator = sizes[b] * pools[c].size();
      count[b][c] = numerator / n;
      row_need[b] -= static_cast<long>(count[b][c]);
      col_need[c] -= static_cast<long>(count[b][c]);
      if (numerator % n != 0) {
        flow.add(flow.row(b), flow.col(c), 1);
        cell_of_arc.emplace_back(b, c);
        cell_arc.push_back(arc_count++);
      }
    }
  }
  for (std::size_t b = 0; b < num_batches; ++b) {
    flow.add(flow.source(), flow.row(b), row_need[b]);
    ++arc_count;
  }
  for (std::size_t c = 0; c < num_pools; ++c) {
    flow.add(flow.col(c), flow.sink(), col_need[c]);
    ++arc_count;
  }
  const long needed = std::accumulate(row_need.begin(), row_need.end(), 0L);
  if (flow.run() != needed) throw std::logic_error("stratified batches: rounding is infeasible");
  for (std::size_t k = 0; k < cell_of_arc.size(); ++k)
    if (flow.flow(cell_arc[k]) > 0) ++count[cell_of_arc[k].first][cell_of_arc[k].second];

  for (auto& pool : pools) rng.shuffle(std::span<EdgeId>(pool));
  std::vector<std::size_t> cursor(num_pools, 0);
  plan.batches.resize(num_batches);
  for (std::size_t b = 0; b < num_batches; ++b) {
    for (std::size_t c = 0; c < num_pools; ++c) {
      auto first = pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]);
      plan.batches[b].insert(plan.batches[b].end(), first,
                             first + static_cast<std::ptrdiff_t>(count[b][c]));
      cursor[c] += count[b][c];
    }
  }
  return plan;
}

BatchPlan sequential_batches(std::span<const EdgeId> edges, std::size_t batch_size) {
  if (batch_size == 0) throw TrainingError("batch size must be positive");
  BatchPlan plan;
  for (std::size_t i = 0; i < edges.size(); i += batch_size) {
    const std::size_t end = std::min(edges.size(), i + batch_size);
    plan.batches.emplace_back(edges.begin() + static_cast<std::ptrdiff_t>(i),
                              edges.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

Subnetwork receptive_subnetwork(const GraphContext& graph, std::span<const EdgeId> targets,
                                std::size_t depth) {
  const RoadNetwork& net = graph.network;
  std::vector<char> need_edge(net.edge_count(), 0), need_node(net.node_count(), 0);
  for (EdgeId e : targets) need_edge.at(e) = 1;
  for (std::size_t k = depth; k >= 1; --k) {
    std::vector<char> edge_next = need_edge, node_next = need_node;
    for (EdgeId e = 0; e < net.edge_count(); ++e) {
      if (!need_edge[e]) continue;
      const Adjacency& adj = graph.dual.adjacency(e);
      for (const auto* list : {&adj.in, &adj.out})
        for (BetweenEdgeId b : *list) {
          const auto [first, second] = graph.dual.endpoints(b);
          edge_next[first] = edge_next[second] = 1;
          node_next[graph.shared_nodes[b]] = 1;
        }
    }
    for (NodeId v = 0; v < net.node_count(); ++v) {
      if (!need_node[v]) continue;
      const Adjacency& adj = net.node_adjacency(v);
      for (const auto* list : {&adj.in, &adj.out})
        for (EdgeId e : *list) {
          edge_next[e] = 1;
          node_next[net.edges()[e].source] = node_next[net.edges()[e].target] = 1;
        }
    }
    need_edge = std::move(edge_next);
    need_node = std::move(node_next);
  }
  std::vector<NodeId> nodes;
  std::vector<EdgeId> edges;
  for (NodeId v = 0; v < net.node_count(); ++v)
    if (need_node[v]) nodes.push_back(v);
  for (EdgeId e = 0; e < net.edge_count(); ++e)
    if (need_edge[e]) edges.push_back(e);
  return induced_subnetwork(net, nodes, edges);
}

PreparedBatch prepare_batch(const GraphContext& graph, const FeatureSet& features,
                            const Dataset& dataset, std::span<const std::size_t> entries,
                            std::size_t depth) {
  std::vector<EdgeId> targets;
  targets.reserve(entries.size());
  for (std::size_t i : entries) targets.push_back(dataset.entries.at(i).edge);
  Subnetwork sub = receptive_subnetwork(graph, targets, depth);
  std::vector<std::size_t> rows;
  rows.reserve(targets.size());
  for (EdgeId e : targets)
    rows.push_back(static_cast<std::size_t>(
        std::lower_bound(sub.edges.begin(), sub.edges.end(), e) - sub.edges.begin()));
  FeatureSet local = features.select(sub.nodes, sub.edges, sub.between_edges);
  return PreparedBatch{GraphContext(std::move(sub.network)), std::move(local), std::move(rows),
                       std::vector<std::size_t>(entries.begin(), entries.end())};
}

// -- protocols --------------------------------------------------------------------

namespace {

double mae_or_nan(std::span<const double> predictions, const Dataset& dataset,
                  std::span<const std::size_t> entries) {
  if (entries.empty()) return kNotRecorded;
  try {
    return mae_segments(predictions, dataset, entries);
  } catch (const EvaluationError&) {
    return kNotRecorded;
  }
}

void check_finite(double loss, std::size_t epoch, std::size_t batch, std::size_t batch_rows) {
  if (std::isfinite(loss)) return;
  throw TrainingError("non-finite loss " + std::to_string(loss) + " at epoch " +
                      std::to_string(epoch) + ", batch " + std::to_string(batch) + " (" +
                      std::to_string(batch_rows) + " targets)");
}

template <class LossFn>
double train_on(EdgeModel& model, const PreparedBatch& batch, std::vector<Tensor>& params,
                AdamState& adam, LossFn&& loss_fn, std::size_t epoch, std::size_t index) {
  for (Tensor& p : params) p.zero_grad();
  const Tensor predictions =
      nd::gather_rows(model.predict_edges(batch.graph, batch.features), batch.target_rows);
  const Tensor loss = loss_fn(predictions);
  check_finite(loss.item(), epoch, index, batch.target_rows.size());
  nd::backward(loss);
  adam_step(adam, params);
  return loss.item();
}

std::vector<PreparedBatch> prepare_all(const GraphContext& graph, const FeatureSet& features,
                                       const Dataset& dataset,
                                       const std::vector<std::vector<std::size_t>>& batches,
                                       std::size_t depth) {
  std::vector<PreparedBatch> out;
  out.reserve(batches.size());
  for (const auto& entries : batches)
    out.push_back(prepare_batch(graph, features, dataset, entries, depth));
  return out;
}

void check_model(const EdgeModel& model, const Dataset& dataset, std::size_t expected_outputs) {
  if (model.output_dim() != expected_outputs)
    throw TrainingError("model emits " + std::to_string(model.output_dim()) +
                        " outputs per edge, the " + to_string(dataset.task) + " task needs " +
                        std::to_string(expected_outputs));
}

}  // namespace

TrainResult train_regression(EdgeModel& model, const GraphContext& graph,
                             const FeatureSet& features, const Dataset& dataset,
                             const TrainConfig& config, const EpochCallback& on_epoch) {
  if (dataset.task != Task::speed_regression)
    throw TrainingError("train_regression needs a speed regression dataset");
  check_model(model, dataset, 1);
  const std::vector<std::size_t> train = dataset.indices(Split::train);
  const std::vector<std::size_t> validation = dataset.indices(Split::validation);
  if (train.empty()) throw TrainingError("no training entries");

  Rng rng(config.seed);
  std::vector<EdgeId> edges;
  std::vector<int> categories;
  std::map<EdgeId, std::size_t> entry_of_edge;
  for (std::size_t i : train) {
    const EdgeId e = dataset.entries[i].edge;
    edges.push_back(e);
    categories.push_back(graph.network.edges()[e].category);
    entry_of_edge[e] = i;
  }
  const BatchPlan plan = stratified_batches(edges, categories, config.batch_size, rng);
  std::vector<std::vector<std::size_t>> batch_entries;
  for (const auto& batch : plan.batches) {
    auto& ids = batch_entries.emplace_back();
    for (EdgeId e : batch) ids.push_back(entry_of_edge.at(e));
  }
  const std::vector<PreparedBatch> prepared =
      prepare_all(graph, features, dataset, batch_entries, model.depth());
  std::vector<std::vector<std::vector<double>>> records(prepared.size());
  for (std::size_t b = 0; b < prepared.size(); ++b)
    for (std::size_t i : prepared[b].entries) records[b].push_back(dataset.entries[i].speeds);

  std::vector<Tensor> params = model.parameters();
  AdamState adam = adam_init(params, config.adam);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t b : order) {
      const auto& recs = records[b];
      loss_sum += train_on(model, prepared[b], params, adam,
                           [&recs](const Tensor& p) { return amse_loss(p, recs); }, epoch, b);
    }
    const std::vector<double> predictions =
        edge_values(model.predict_edges(graph, features).value());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(prepared.size());
    rec.train_mae = mae_or_nan(predictions, dataset, train);
    rec.validation_mae = mae_or_nan(predictions, dataset, validation);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

TrainResult train_classification(EdgeModel& model, const GraphContext& graph,
                                 const FeatureSet& features, const Dataset& dataset,
                                 const TrainConfig& config, const EpochCallback& on_epoch) {
  if (dataset.task != Task::limit_classification)
    throw TrainingError("train_classification needs a speed limit dataset");
  check_model(model, dataset, dataset.classes.size());
  const std::vector<std::size_t> train = dataset.indices(Split::train);
  std::vector<std::size_t> validation = dataset.indices(Split::validation);
  if (train.empty()) throw TrainingError("no training entries");
  if (validation.empty()) validation = train;

  Rng rng(config.seed);
  std::vector<int> labels;
  for (std::size_t i : train) labels.push_back(dataset.entries[i].label);
  std::vector<std::size_t> stream;
  for (std::size_t k : oversample(labels, rng)) stream.push_back(train[k]);

  std::vector<std::vector<std::size_t>> batch_entries;
  for (std::size_t i = 0; i < stream.size(); i += config.batch_size) {
    if (config.batch_size == 0) throw TrainingError("batch size must be positive");
    const std::size_t end = std::min(stream.size(), i + config.batch_size);
    batch_entries.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(i),
                               stream.begin() + static_cast<std::ptrdiff_t>(end));
  }
  const std::vector<PreparedBatch> prepared =
      prepare_all(graph, features, dataset, batch_entries, model.depth());
  std::vector<std::vector<std::size_t>> targets(prepared.size());
  for (std::size_t b = 0; b < prepared.size(); ++b)
    for (std::size_t i : prepared[b].entries)
      targets[b].push_back(dataset.class_index(dataset.entries[i].label));

  std::vector<int> truth;
  for (std::size_t i : validation) truth.push_back(dataset.entries[i].label);

  std::vector<Tensor> params = model.parameters();
  AdamState adam = adam_init(params, config.adam);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::unique_ptr<EdgeModel> best;
  double best_f1 = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t b : order) {
      const auto& t = targets[b];
      loss_sum += train_on(model, prepared[b], params, adam,
                           [&t](const Tensor& p) { return cross_entropy_loss(p, t); }, epoch, b);
    }
    const std::vector<int> predicted =
        edge_labels(model.predict_edges(graph, features).value(), dataset.classes);
    std::vector<int> picked;
    for (std::size_t i : validation) picked.push_back(predicted[dataset.entries[i].edge]);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(prepared.size());
    rec.validation_f1 = macro_f1(picked, truth, dataset.classes);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.validation_f1 > best_f1) {
      best_f1 = rec.validation_f1;
      best = model.clone();
      result.best_epoch = epoch;
    }
  }
  if (best) {
    const std::vector<Tensor> chosen = best->parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i].mutable_value() = chosen[i].value();
  }
  return result;
}

}  // namespace rfn
