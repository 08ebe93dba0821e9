#pragma once

// End-to-end operations over bundles and checkpoints: ingestion, training
// a configured model, evaluation, prediction, and attention inspection.
// The command-line tool and the Python module are thin layers over these.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rfn/io.hpp"

namespace rfn {

struct PreprocessOptions {
  std::filesystem::path graph;
  std::optional<std::filesystem::path> overrides;
  std::optional<std::filesystem::path> observations;  // regression
  std::optional<std::filesystem::path> labels;        // classification
  std::optional<std::filesystem::path> split_file;
  FractionSplit fractions;
  std::uint64_t seed = 0;
  bool filter_peak = false;
  FeatureConfig features;
};

struct PreprocessReport {
  bool derived_between_edges = false;
  std::size_t missing_turn_attributes = 0;
  std::size_t records_read = 0;
  std::size_t records_dropped_peak = 0;
};

/// Reads the inputs, builds the dataset and splits, and fits the feature
/// scalers on the training edges.
Bundle preprocess(const PreprocessOptions& options, PreprocessReport* report = nullptr);

enum class ModelKind { rfn, mlp, grouping };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

/// Everything that determines a training run besides the data.
struct RunConfig {
  ModelKind model = ModelKind::rfn;
  FusionKind fusion = FusionKind::interactional;
  AggregatorKind aggregator = AggregatorKind::attentional;
  std::size_t layers = 2;
  std::vector<std::size_t> hidden_dims = {32};
  /// Task default when unset: first layer for speeds, all layers for limits.
  std::optional<NormalizationPlacement> normalization;
  std::size_t mlp_hidden_dim = 128;
  double learning_rate = 0.01;
  /// Task default when unset: 20 for speeds, 30 for limits.
  std::optional<std::size_t> epochs;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;

  std::size_t epochs_for(Task task) const;
  void validate() const;
};

/// Unknown keys are rejected. "variant" may name an RFN variant as
/// "<aggregator>+<fusion>" (e.g. "attentional+interactional") or a baseline.
RunConfig run_config_from_json(const json& j);
json to_json(const RunConfig& config);

struct TrainedRun {
  Checkpoint checkpoint;
  TrainResult result;
  /// Validation score of the returned model: MAE for speeds, macro F1 for
  /// limits. NaN when the validation split has no scorable entries.
  double validation_metric = kNotRecorded;
};

TrainedRun train_run(const Bundle& bundle, const RunConfig& config,
                     const EpochCallback& on_epoch = {});

/// Raw model outputs for every edge: |E| x 1 speeds or |E| x C class
/// probabilities (one-hot for the grouping estimator).
nd::Matrix predict(const Checkpoint& checkpoint, const Bundle& bundle);

struct Metrics {
  Task task = Task::speed_regression;
  std::string split;   // "train", "validation", "test", or "all"
  std::string metric;  // "mae" or "macro_f1"
  double value = kNotRecorded;
  std::size_t scored = 0;
  std::optional<double> subset_value;
  std::size_t subset_scored = 0;
};

/// Scores the checkpoint on a split (all entries when split is empty). With
/// a subset, also scores the listed edges within that split; speed MAE over
/// a subset keeps segments of any record count.
Metrics evaluate(const Checkpoint& checkpoint, const Bundle& bundle, std::optional<Split> split,
                 const std::optional<std::vector<std::string>>& subset = std::nullopt);
json to_json(const Metrics& metrics);

AttentionReport inspect(const Checkpoint& checkpoint, const Bundle& bundle,
                        const std::string& edge_id);

/// Throws IoError unless the checkpoint was trained on this network.
void check_compatible(const Checkpoint& checkpoint, const Bundle& bundle);

}  // namespace rfn
