#pragma once

// Numeric encodings of node, edge, and between-edge attributes and the
// min-max scaling applied to their continuous columns.

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfn/graph.hpp"
#include "rfn/ndiff.hpp"

namespace rfn {

class FeatureError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kNodeFeatures = 3;
inline constexpr std::size_t kEdgeFeaturesPlain = 10;
inline constexpr std::size_t kEdgeFeaturesWithNodes = 16;
inline constexpr std::size_t kBetweenEdgeFeatures = 5;
inline constexpr int kRoadCategories = 9;

/// City, rural, summer-cottage indicators; all zero for Zone::none.
std::array<double, kNodeFeatures> encode_node(Zone zone);

/// Category one-hot (columns 0..8), raw length (column 9), then optionally
/// the source and target node encodings.
std::vector<double> encode_edge(int category, double length,
                                const std::array<double, kNodeFeatures>* source = nullptr,
                                const std::array<double, kNodeFeatures>* target = nullptr);

/// Direction one-hot in (right, left, u-turn, straight) order, then the raw
/// angle in degrees.
std::array<double, kBetweenEdgeFeatures> encode_between_edge(TurnDirection direction,
                                                             double angle_deg);

struct TurnAttributes {
  double angle_deg = 0.0;
  TurnDirection direction = TurnDirection::straight;
  /// Signed heading change in (-180, 180]; positive is counter-clockwise.
  double signed_change_deg = 0.0;
};

inline constexpr double kStraightMaxDeg = 30.0;
inline constexpr double kUTurnMinDeg = 150.0;

/// Heading change from the last segment of the first polyline to the first
/// segment of the second. Coordinates are planar (x east, y north).
/// Straight iff |change| <= 30, u-turn iff |change| >= 150, else right for
/// clockwise turns and left for counter-clockwise ones.
TurnAttributes compute_turn_attributes(std::span<const Point> first, std::span<const Point> second);

/// Per-column min-max scaler over a chosen set of columns.
class MinMaxScaler {
 public:
  MinMaxScaler() = default;

  /// Fits the listed columns over the given rows (all rows if empty).
  void fit(const nd::Matrix& m, std::vector<std::size_t> columns,
           std::span<const std::size_t> rows = {});
  /// (x - min) / (max - min) clamped to [0,1]; constant columns map to 0.
  nd::Matrix apply(const nd::Matrix& m) const;
  nd::Matrix fit_apply(const nd::Matrix& m, std::vector<std::size_t> columns,
                       std::span<const std::size_t> rows = {}) {
    fit(m, std::move(columns), rows);
    return apply(m);
  }

  bool fitted() const { return fitted_; }
  const std::vector<std::size_t>& columns() const { return columns_; }
  const std::vector<double>& mins() const { return mins_; }
  const std::vector<double>& maxs() const { return maxs_; }

  static MinMaxScaler from_parts(std::vector<std::size_t> columns, std::vector<double> mins,
                                 std::vector<double> maxs);

 private:
  bool fitted_ = false;
  std::vector<std::size_t> columns_;
  std::vector<double> mins_;
  std::vector<double> maxs_;
};

struct FeatureConfig {
  /// Append source/target node encodings to each edge (16 columns) or not (10).
  bool edge_node_features = true;
};

/// X^V, X^E, X^B plus the scalers that produced them.
struct FeatureSet {
  nd::Matrix nodes;
  nd::Matrix edges;
  nd::Matrix between_edges;
  MinMaxScaler node_scaler;
  MinMaxScaler edge_scaler;
  MinMaxScaler between_scaler;
  std::vector<std::string> node_columns;
  std::vector<std::string> edge_columns;
  std::vector<std::string> between_columns;

  /// Copy restricted to the rows listed (parent ids in local order).
  FeatureSet select(std::span<const NodeId> nodes, std::span<const EdgeId> edges,
                    std::span<const BetweenEdgeId> between_edges) const;
};

/// Raw (unscaled) encodings of every element of the network.
FeatureSet encode_features(const RoadNetwork& network, const FeatureConfig& config = {});

/// Encodes, then fits scalers on the training edges (and the between-edges
/// touching them) and scales everything. Empty training set fits on all rows.
FeatureSet build_features(const RoadNetwork& network, std::span<const EdgeId> training_edges,
                          const FeatureConfig& config = {});

/// Encodes and scales with previously fitted scalers.
FeatureSet apply_features(const RoadNetwork& network, const FeatureSet& fitted,
                          const FeatureConfig& config = {});

}  // namespace rfn
