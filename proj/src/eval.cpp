#include "rfn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace rfn {

double mae_segments(std::span<const double> edge_predictions, const Dataset& dataset,
                    std::span<const std::size_t> entries, std::size_t min_records) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i : entries) {
    const DatasetEntry& entry = dataset.entries.at(i);
    if (entry.speeds.size() < min_records || entry.speeds.empty()) continue;
    if (entry.edge >= edge_predictions.size())
      throw EvaluationError("no prediction for edge " + std::to_string(entry.edge));
    total += std::abs(edge_predictions[entry.edge] - segment_mean(entry.speeds));
    ++n;
  }
  if (n == 0)
    throw EvaluationError("no segment has at least " + std::to_string(min_records) +
                          " records");
  return total / static_cast<double>(n);
}

double macro_f1(std::span<const int> predicted, std::span<const int> truth,
                std::span<const int> classes) {
  if (predicted.size() != truth.size())
    throw EvaluationError("macro F1: prediction and truth counts differ");
  if (classes.empty()) throw EvaluationError("macro F1: empty class universe");
  double sum = 0.0;
  for (int c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool p = predicted[i] == c, t = truth[i] == c;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(classes.size());
}

std::vector<double> edge_values(const nd::Matrix& predictions) {
  if (predictions.cols() < 1) throw EvaluationError("prediction matrix has no columns");
  std::vector<double> out(predictions.rows());
  for (std::size_t r = 0; r < predictions.rows(); ++r) out[r] = predictions(r, 0);
  return out;
}

std::vector<int> edge_labels(const nd::Matrix& probabilities, std::span<const int> classes) {
  if (probabilities.cols() != classes.size())
    throw EvaluationError("probability width does not match the class universe");
  std::vector<int> out(probabilities.rows());
  for (std::size_t r = 0; r < probabilities.rows(); ++r) {
    const auto row = probabilities.row(r);
    out[r] = classes[static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())];
  }
  return out;
}

AttentionReport inspect_attention(const RfnModel& model, const GraphContext& graph,
                                  const FeatureSet& features, EdgeId edge) {
  if (model.config().aggregator != AggregatorKind::attentional)
    throw EvaluationError("attention inspection needs an attentional model");
  if (edge >= graph.network.edge_count())
    throw EvaluationError("unknown edge " + std::to_string(edge));

  ForwardTrace trace;
  model.forward(graph, features, &trace);

  const RelationIndex& rel = graph.dual_relations;
  const auto first = std::lower_bound(rel.element.begin(), rel.element.end(), edge);
  const auto begin = static_cast<std::size_t>(first - rel.element.begin());
  std::size_t end = begin;
  while (end < rel.size() && rel.element[end] == edge) ++end;

  AttentionReport report;
  report.edge = edge;
  report.edge_id = graph.network.edges()[edge].id;
  for (std::size_t k = 0; k < trace.edge_attention.size(); ++k) {
    const nd::Matrix& weights = trace.edge_attention[k];
    if (weights.rows() != rel.size()) continue;  // edge view switched off in this layer
    AttentionLayer layer{k + 1, {}};
    for (std::size_t i = begin; i < end; ++i)
      layer.entries.push_back({rel.neighbor[i], rel.relation[i], rel.orientation[i], weights(i, 0)});
    report.layers.push_back(std::move(layer));
  }
  return report;
}

std::string format_attention_table(const AttentionReport& report, const RoadNetwork& network) {
  std::vector<std::string> header{"layer"};
  if (!report.layers.empty())
    for (const auto& e : report.layers.front().entries)
      header.push_back((e.orientation == Orientation::incoming ? "in:" : "out:") +
                       network.edges()[e.neighbor].id);
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& layer : report.layers) {
    std::vector<std::string> row{std::to_string(layer.layer)};
    for (const auto& e : layer.entries) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", e.weight);
      row.emplace_back(buf);
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  out << "edge " << report.edge_id << "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      out << std::string(width[c] - row[c].size(), ' ') << row[c];
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace rfn
