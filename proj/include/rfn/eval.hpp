#pragma once

// Metrics and attention-weight inspection.

#include <span>
#include <string>
#include <vector>

#include "rfn/dataset.hpp"
#include "rfn/rfn.hpp"

namespace rfn {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Segments with fewer records are left out of MAE on a split.
inline constexpr std::size_t kMinRecords = 10;

/// Mean over the listed entries with at least min_records records of
/// |prediction - mean record|. edge_predictions is indexed by edge id.
/// Throws EvaluationError when no entry qualifies.
double mae_segments(std::span<const double> edge_predictions, const Dataset& dataset,
                    std::span<const std::size_t> entries, std::size_t min_records = kMinRecords);

/// Unweighted mean of per-class F1 over the class universe. A class with no
/// true positives scores 0.
double macro_f1(std::span<const int> predicted, std::span<const int> truth,
                std::span<const int> classes);

/// Column 0 of an |E| x 1 prediction matrix.
std::vector<double> edge_values(const nd::Matrix& predictions);
/// Row-wise argmax mapped to labels; ties go to the lower class index.
std::vector<int> edge_labels(const nd::Matrix& probabilities, std::span<const int> classes);

struct AttentionEntry {
  EdgeId neighbor = 0;
  BetweenEdgeId relation = 0;
  Orientation orientation = Orientation::incoming;
  double weight = 0.0;
};

struct AttentionLayer {
  std::size_t layer = 0;  // 1-based
  std::vector<AttentionEntry> entries;
};

struct AttentionReport {
  EdgeId edge = 0;
  std::string edge_id;
  std::vector<AttentionLayer> layers;
};

/// Dual-view attention weights of one edge at every layer, captured from a
/// forward pass. Throws for non-attentional models.
AttentionReport inspect_attention(const RfnModel& model, const GraphContext& graph,
                                  const FeatureSet& features, EdgeId edge);

/// Layers as rows, neighbors as columns grouped into in- and out-neighbors.
std::string format_attention_table(const AttentionReport& report, const RoadNetwork& network);

}  // namespace rfn
