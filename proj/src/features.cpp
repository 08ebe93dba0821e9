#include "rfn/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace rfn {

std::array<double, kNodeFeatures> encode_node(Zone zone) {
  switch (zone) {
    case Zone::city: return {1.0, 0.0, 0.0};
    case Zone::rural: return {0.0, 1.0, 0.0};
    case Zone::summer_cottage: return {0.0, 0.0, 1.0};
    case Zone::none: break;
  }
  return {0.0, 0.0, 0.0};
}

std::vector<double> encode_edge(int category, double length,
                                const std::array<double, kNodeFeatures>* source,
                                const std::array<double, kNodeFeatures>* target) {
  if (category < 1 || category > kRoadCategories)
    throw FeatureError("road category " + std::to_string(category) + " outside 1..9");
  if (!(length > 0.0)) throw FeatureError("edge length must be positive");
  if ((source == nullptr) != (target == nullptr))
    throw FeatureError("encode_edge needs both endpoint encodings or neither");
  std::vector<double> out(source ? kEdgeFeaturesWithNodes : kEdgeFeaturesPlain, 0.0);
  out[static_cast<std::size_t>(category - 1)] = 1.0;
  out[kRoadCategories] = length;
  if (source) {
    std::copy(source->begin(), source->end(), out.begin() + kEdgeFeaturesPlain);
    std::copy(target->begin(), target->end(),
              out.begin() + kEdgeFeaturesPlain + kNodeFeatures);
  }
  return out;
}

std::array<double, kBetweenEdgeFeatures> encode_between_edge(TurnDirection direction,
                                                             double angle_deg) {
  if (!(angle_deg >= 0.0 && angle_deg <= 180.0))
    throw FeatureError("turn angle " + std::to_string(angle_deg) + " outside [0,180]");
  std::array<double, kBetweenEdgeFeatures> out{};
  out[static_cast<std::size_t>(direction)] = 1.0;
  out[4] = angle_deg;
  return out;
}

TurnAttributes compute_turn_attributes(std::span<const Point> first,
                                       std::span<const Point> second) {
  if (first.size() < 2 || second.size() < 2)
    throw FeatureError("turn geometry needs at least two points per edge");
  const Point& a0 = first[first.size() - 2];
  const Point& a1 = first[first.size() - 1];
  const Point& b0 = second[0];
  const Point& b1 = second[1];
  const double ax = a1.x - a0.x, ay = a1.y - a0.y;
  const double bx = b1.x - b0.x, by = b1.y - b0.y;
  if ((ax == 0.0 && ay == 0.0) || (bx == 0.0 && by == 0.0))
    throw FeatureError("degenerate zero-length segment in turn geometry");

  double delta = (std::atan2(by, bx) - std::atan2(ay, ax)) * 180.0 / std::numbers::pi;
  while (delta <= -180.0) delta += 360.0;
  while (delta > 180.0) delta -= 360.0;

  TurnAttributes t;
  t.signed_change_deg = delta;
  t.angle_deg = std::min(std::abs(delta), 180.0);
  if (t.angle_deg <= kStraightMaxDeg)
    t.direction = TurnDirection::straight;
  else if (t.angle_deg >= kUTurnMinDeg)
    t.direction = TurnDirection::u_turn;
  else
    t.direction = delta < 0.0 ? TurnDirection::right : TurnDirection::left;
  return t;
}

// -- MinMaxScaler -------------------------------------------------------------

void MinMaxScaler::fit(const nd::Matrix& m, std::vector<std::size_t> columns,
                       std::span<const std::size_t> rows) {
  if (m.rows() == 0) throw FeatureError("min-max fit needs at least one row");
  for (std::size_t c : columns)
    if (c >= m.cols()) throw FeatureError("min-max column " + std::to_string(c) + " out of range");
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(m.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rows = all;
  }
  columns_ = std::move(columns);
  mins_.assign(columns_.size(), std::numeric_limits<double>::infinity());
  maxs_.assign(columns_.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t r : rows) {
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      const double v = m(r, columns_[k]);
      mins_[k] = std::min(mins_[k], v);
      maxs_[k] = std::max(maxs_[k], v);
    }
  }
  fitted_ = true;
}

nd::Matrix MinMaxScaler::apply(const nd::Matrix& m) const {
  if (!fitted_) throw FeatureError("min-max scaler applied before fit");
  nd::Matrix out = m;
  for (std::size_t k = 0; k < columns_.size(); ++k) {
    const std::size_t c = columns_[k];
    if (c >= out.cols()) throw FeatureError("min-max column out of range");
    const double span = maxs_[k] - mins_[k];
    for (std::size_t r = 0; r < out.rows(); ++r) {
      double& v = out(r, c);
      v = span > 0.0 ? std::clamp((v - mins_[k]) / span, 0.0, 1.0) : 0.0;
    }
  }
  return out;
}

MinMaxScaler MinMaxScaler::from_parts(std::vector<std::size_t> columns, std::vector<double> mins,
                                      std::vector<double> maxs) {
  if (columns.size() != mins.size() || columns.size() != maxs.size())
    throw FeatureError("min-max scaler parts disagree in length");
  MinMaxScaler s;
  s.columns_ = std::move(columns);
  s.mins_ = std::move(mins);
  s.maxs_ = std::move(maxs);
  s.fitted_ = true;
  return s;
}

// -- FeatureSet -----------------------------------------------------------------

namespace {

nd::Matrix select_rows(const nd::Matrix& m, std::span<const std::size_t> rows) {
  nd::Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  return out;
}

std::vector<std::string> node_column_names() {
  return {"zone_city", "zone_rural", "zone_summer_cottage"};
}

std::vector<std::string> edge_column_names(bool with_nodes) {
  std::vector<std::string> names;
  for (int c = 1; c <= kRoadCategories; ++c) names.push_back("category_" + std::to_string(c));
  names.push_back("length");
  if (with_nodes) {
    for (const char* end : {"source_", "target_"})
      for (const auto& n : node_column_names()) names.push_back(end + n);
  }
  return names;
}

std::vector<std::string> between_column_names() {
  return {"turn_right", "turn_left", "turn_u_turn", "turn_straight", "turn_angle"};
}

MinMaxScaler fit_or_identity(const nd::Matrix& m, std::vector<std::size_t> columns,
                             std::span<const std::size_t> rows) {
  if (m.rows() == 0) {
    const std::size_t n = columns.size();
    return MinMaxScaler::from_parts(std::move(columns), std::vector<double>(n, 0.0),
                                    std::vector<double>(n, 0.0));
  }
  MinMaxScaler s;
  s.fit(m, std::move(columns), rows);
  return s;
}

}  // namespace

FeatureSet FeatureSet::select(std::span<const NodeId> node_rows, std::span<const EdgeId> edge_rows,
                              std::span<const BetweenEdgeId> between_rows) const {
  FeatureSet out = *this;
  out.nodes = select_rows(nodes, node_rows);
  out.edges = select_rows(edges, edge_rows);
  out.between_edges = select_rows(between_edges, between_rows);
  return out;
}

FeatureSet encode_features(const RoadNetwork& network, const FeatureConfig& config) {
  FeatureSet fs;
  fs.node_columns = node_column_names();
  fs.edge_columns = edge_column_names(config.edge_node_features);
  fs.between_columns = between_column_names();

  fs.nodes = nd::Matrix(network.node_count(), kNodeFeatures);
  std::vector<std::array<double, kNodeFeatures>> node_codes;
  node_codes.reserve(network.node_count());
  for (NodeId v = 0; v < network.node_count(); ++v) {
    node_codes.push_back(encode_node(network.nodes()[v].zone));
    std::copy(node_codes.back().begin(), node_codes.back().end(), fs.nodes.row(v).begin());
  }

  fs.edges = nd::Matrix(network.edge_count(), fs.edge_columns.size());
  for (EdgeId e = 0; e < network.edge_count(); ++e) {
    const Edge& edge = network.edges()[e];
    const auto row = config.edge_node_features
                         ? encode_edge(edge.category, edge.length, &node_codes[edge.source],
                                       &node_codes[edge.target])
                         : encode_edge(edge.category, edge.length);
    std::copy(row.begin(), row.end(), fs.edges.row(e).begin());
  }

  fs.between_edges = nd::Matrix(network.between_edge_count(), kBetweenEdgeFeatures);
  for (BetweenEdgeId b = 0; b < network.between_edge_count(); ++b) {
    const BetweenEdge& be = network.between_edges()[b];
    const auto row = encode_between_edge(be.turn_direction, be.turn_angle);
    std::copy(row.begin(), row.end(), fs.between_edges.row(b).begin());
  }
  return fs;
}

FeatureSet build_features(const RoadNetwork& network, std::span<const EdgeId> training_edges,
                          const FeatureConfig& config) {
  FeatureSet fs = encode_features(network, config);

  std::vector<char> is_training(network.edge_count(), 0);
  for (EdgeId e : training_edges) is_training.at(e) = 1;
  std::vector<std::size_t> edge_rows(training_edges.begin(), training_edges.end());
  std::sort(edge_rows.begin(), edge_rows.end());
  edge_rows.erase(std::unique(edge_rows.begin(), edge_rows.end()), edge_rows.end());
  std::vector<std::size_t> between_rows;
  if (!edge_rows.empty()) {
    for (BetweenEdgeId b = 0; b < network.between_edge_count(); ++b) {
      const auto& be = network.between_edges()[b];
      if (is_training[be.first] || is_training[be.second]) between_rows.push_back(b);
    }
  }

  fs.node_scaler = fit_or_identity(fs.nodes, {}, {});
  fs.edge_scaler = fit_or_identity(fs.edges, {static_cast<std::size_t>(kRoadCategories)}, edge_rows);
  fs.between_scaler = fit_or_identity(fs.between_edges, {4}, between_rows);
  fs.nodes = fs.node_scaler.apply(fs.nodes);
  fs.edges = fs.edge_scaler.apply(fs.edges);
  fs.between_edges = fs.between_scaler.apply(fs.between_edges);
  return fs;
}

FeatureSet apply_features(const RoadNetwork& network, const FeatureSet& fitted,
                          const FeatureConfig& config) {
  FeatureSet fs = encode_features(network, config);
  fs.node_scaler = fitted.node_scaler;
  fs.edge_scaler = fitted.edge_scaler;
  fs.between_scaler = fitted.between_scaler;
  fs.nodes = fs.node_scaler.apply(fs.nodes);
  fs.edges = fs.edge_scaler.apply(fs.edges);
  fs.between_edges = fs.between_scaler.apply(fs.between_edges);
  return fs;
}

}  // namespace rfn
