#pragma once

// Losses, the Adam optimizer, batching, and the training protocols for
// speed regression and speed-limit classification.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "rfn/dataset.hpp"
#include "rfn/model.hpp"
#include "rfn/ndiff.hpp"

namespace rfn {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// -- losses -------------------------------------------------------------------

/// (1/N) sum_s (1/|Y_s|) sum_{y in Y_s} (yhat_s - y)^2 over the N rows of an
/// N x 1 prediction tensor; records[s] belongs to row s.
nd::Tensor amse_loss(const nd::Tensor& predictions, std::span<const std::vector<double>> records);

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kProbabilityRowTolerance = 1e-6;

/// -(1/N) sum_i log max(p_i[label_i], 1e-12). Rows must sum to 1 within 1e-6.
nd::Tensor cross_entropy_loss(const nd::Tensor& probabilities,
                              std::span<const std::size_t> class_indices);

// -- optimizer ------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<nd::Matrix> first_moment;
  std::vector<nd::Matrix> second_moment;
};

AdamState adam_init(std::span<const nd::Tensor> params, const AdamConfig& config = {});
/// One bias-corrected Adam update from the gradients currently held by params.
void adam_step(AdamState& state, std::span<const nd::Tensor> params);

// -- sampling and batching --------------------------------------------------------

/// Positions into labels such that every present class appears exactly as
/// often as the largest class: each class keeps its own positions and tops
/// up with uniform draws (with replacement) from them. The result is shuffled.
std::vector<std::size_t> oversample(std::span<const int> labels, Rng& rng);

struct BatchPlan {
  std::vector<std::vector<EdgeId>> batches;
};

/// ceil(n / batch_size) batches, all full except possibly the last. Each
/// batch holds, per category, its proportional share of that category
/// rounded down or up, so no count is off by one or more from the share.
/// categories[i] is the category of edges[i].
BatchPlan stratified_batches(std::span<const EdgeId> edges, std::span<const int> categories,
                             std::size_t batch_size, Rng& rng);

/// Consecutive chunks of batch_size in the given order.
BatchPlan sequential_batches(std::span<const EdgeId> edges, std::size_t batch_size);

/// The smallest subnetwork on which a depth-K forward pass computes the
/// targets' edge outputs exactly as the full network would: every element
/// whose representation at layer k >= 1 is needed keeps its whole
/// neighborhood.
Subnetwork receptive_subnetwork(const GraphContext& graph, std::span<const EdgeId> targets,
                                std::size_t depth);

/// A batch ready for training: its subnetwork, the matching feature rows,
/// and for every target occurrence its local edge row and dataset entry.
struct PreparedBatch {
  GraphContext graph;
  FeatureSet features;
  std::vector<std::size_t> target_rows;
  std::vector<std::size_t> entries;
};

PreparedBatch prepare_batch(const GraphContext& graph, const FeatureSet& features,
                            const Dataset& dataset, std::span<const std::size_t> entries,
                            std::size_t depth);

// -- protocols --------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

struct EpochRecord;
using EpochCallback = std::function<void(const EpochRecord&)>;

inline constexpr double kNotRecorded = std::numeric_limits<double>::quiet_NaN();

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = kNotRecorded;
  double train_mae = kNotRecorded;
  double validation_mae = kNotRecorded;
  double validation_f1 = kNotRecorded;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  /// Epoch whose snapshot the model holds after classification; 0 if none.
  std::size_t best_epoch = 0;
};

/// AMSE over stratified batches, shuffled every epoch. Records train and
/// validation MAE after each epoch; no snapshot selection.
TrainResult train_regression(EdgeModel& model, const GraphContext& graph,
                             const FeatureSet& features, const Dataset& dataset,
                             const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Cross-entropy over sequential chunks of a once-oversampled training
/// stream, chunk order shuffled every epoch. The model ends up holding the
/// snapshot with the highest validation macro F1, earliest on ties.
TrainResult train_classification(EdgeModel& model, const GraphContext& graph,
                                 const FeatureSet& features, const Dataset& dataset,
                                 const TrainConfig& config,
                                 const EpochCallback& on_epoch = {});

}  // namespace rfn
