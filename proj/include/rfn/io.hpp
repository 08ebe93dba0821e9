#pragma once

// File formats: graph JSON, observation/label/split CSVs, preprocessed
// bundles, and model checkpoints. docs/formats.md describes each one.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfn/baselines.hpp"
#include "rfn/dataset.hpp"
#include "rfn/eval.hpp"
#include "rfn/features.hpp"
#include "rfn/rfn.hpp"
#include "rfn/train.hpp"

namespace rfn {

using nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// -- graph ----------------------------------------------------------------------

struct GraphLoad {
  RoadNetwork network;
  /// True when between-edges were derived rather than read.
  bool derived_between_edges = false;
};

/// Field overrides keyed by element id, applied to the raw records before
/// the network is built: {"nodes": {id: {...}}, "edges": {...}, "between_edges": {...}}.
void apply_feature_overrides(json& graph, const json& overrides);

/// Builds a network from a graph document. Between-edges are derived when
/// the document has none.
GraphLoad graph_from_json(const json& graph);
json graph_to_json(const RoadNetwork& network);
GraphLoad load_graph(const std::filesystem::path& path,
                     const std::optional<std::filesystem::path>& overrides = std::nullopt);

// -- supervision ------------------------------------------------------------------

struct Observation {
  std::string edge_id;
  double speed_kmh = 0.0;
  std::optional<std::string> timestamp;
};

/// Header: edge_id,speed_kmh[,timestamp]. Errors name the offending line.
std::vector<Observation> parse_observations_csv(const std::string& text,
                                                const std::string& source = "observations");
/// Header: edge_id,limit_class.
std::vector<std::pair<std::string, int>> parse_labels_csv(const std::string& text,
                                                          const std::string& source = "labels");
/// Header: edge_id,split.
std::vector<std::pair<std::string, Split>> parse_split_csv(const std::string& text,
                                                           const std::string& source = "split");

/// Wall-clock time of an ISO-8601 style timestamp ("...T08:30..." or
/// "... 08:30..."), in minutes after midnight.
int minutes_of_day(const std::string& timestamp);
/// 07:00-09:00 and 15:00-17:00, start inclusive, end exclusive.
bool in_peak_hours(const std::string& timestamp);

struct FractionSplit {
  double train = 0.5;
  double validation = 0.25;
};

/// Regression dataset from observations, grouped per edge in edge order.
/// Unknown edge ids are an error.
Dataset regression_dataset(const RoadNetwork& network, const std::vector<Observation>& records,
                           bool filter_peak);
Dataset classification_dataset(const RoadNetwork& network,
                               const std::vector<std::pair<std::string, int>>& labels);

/// Assigns splits from an explicit list; entries it does not mention are dropped.
void assign_splits(Dataset& dataset, const RoadNetwork& network,
                   const std::vector<std::pair<std::string, Split>>& splits);
/// Seeded shuffle, then the first floor(n*train) entries train, the next
/// floor(n*validation) validate, the rest test.
void assign_splits(Dataset& dataset, const FractionSplit& fractions, std::uint64_t seed);

json dataset_to_json(const Dataset& dataset, const RoadNetwork& network);
Dataset dataset_from_json(const json& doc, const RoadNetwork& network);

// -- features and bundles -----------------------------------------------------------

json features_to_json(const FeatureSet& features, const FeatureConfig& config);
FeatureSet features_from_json(const json& doc, FeatureConfig* config = nullptr);
json feature_layout_json(const FeatureSet& features);

struct Bundle {
  RoadNetwork network;
  FeatureSet features;
  FeatureConfig feature_config;
  Dataset dataset;
};

void save_bundle(const std::filesystem::path& dir, const Bundle& bundle);
Bundle load_bundle(const std::filesystem::path& dir);

// -- configs and reports --------------------------------------------------------------

json to_json(const nd::Activation& activation);
nd::Activation activation_from_json(const json& j);
json to_json(const RfnConfig& config);
RfnConfig rfn_config_from_json(const json& j);
json to_json(const MlpConfig& config);
MlpConfig mlp_config_from_json(const json& j);
json to_json(const GroupingTable& table);
GroupingTable grouping_from_json(const json& j);
json to_json(const TrainResult& result);
json to_json(const AttentionReport& report, const RoadNetwork& network);

// -- checkpoints -------------------------------------------------------------------

/// A trained model of one of the three kinds plus what is needed to apply
/// it to the network it was trained on.
struct Checkpoint {
  Task task = Task::speed_regression;
  std::vector<int> classes;
  std::uint64_t id_digest = 0;
  FeatureConfig feature_config;
  std::shared_ptr<RfnModel> rfn;
  std::shared_ptr<MlpModel> mlp;
  std::optional<GroupingTable> grouping;

  std::string kind() const;
  /// The tensor model, or null for the grouping estimator.
  const EdgeModel* edge_model() const;
};

inline constexpr char kCheckpointMagic[8] = {'R', 'F', 'N', 'C', 'K', 'P', 'T', '1'};

/// Magic, little-endian uint64 header length, JSON header, then each
/// parameter's values as little-endian doubles in declared order.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rfn
