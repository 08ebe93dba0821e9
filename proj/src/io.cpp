#include "rfn/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace rfn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blocks are written as native little-endian doubles");

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(source + ": " + e.what());
  }
}

template <class T>
T field(const json& obj, const char* name, const std::string& where) {
  auto it = obj.find(name);
  if (it == obj.end()) throw IoError(where + ": missing field '" + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw IoError(where + ": field '" + name + "': " + e.what());
  }
}

std::string id_field(const json& obj, const char* name, const std::string& where) {
  auto it = obj.find(name);
  if (it == obj.end()) throw IoError(where + ": missing field '" + name + "'");
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw IoError(where + ": field '" + name + "' must be a string or integer id");
}

const json& array_field(const json& doc, const char* name, bool required) {
  static const json empty = json::array();
  auto it = doc.find(name);
  if (it == doc.end()) {
    if (required) throw IoError(std::string("graph: missing top-level array '") + name + "'");
    return empty;
  }
  if (!it->is_array()) throw IoError(std::string("graph: '") + name + "' must be an array");
  return *it;
}

}  // namespace

// -- graph ----------------------------------------------------------------------

void apply_feature_overrides(json& graph, const json& overrides) {
  for (const char* kind : {"nodes", "edges", "between_edges"}) {
    auto ov = overrides.find(kind);
    if (ov == overrides.end()) continue;
    if (!ov->is_object()) throw IoError(std::string("overrides: '") + kind + "' must be an object");
    auto arr = graph.find(kind);
    if (arr == graph.end()) throw IoError(std::string("overrides: graph has no '") + kind + "'");
    for (auto it = ov->begin(); it != ov->end(); ++it) {
      bool hit = false;
      for (auto& element : *arr) {
        if (id_field(element, "id", kind) != it.key()) continue;
        for (auto f = it.value().begin(); f != it.value().end(); ++f) {
          if (f.key() == "id") throw IoError("overrides may not change ids");
          element[f.key()] = f.value();
        }
        hit = true;
      }
      if (!hit) throw IoError(std::string("overrides: unknown ") + kind + " id '" + it.key() + "'");
    }
  }
}

GraphLoad graph_from_json(const json& doc) {
  if (!doc.is_object()) throw IoError("graph: top level must be an object");
  std::vector<NodeRecord> nodes;
  const json& jn = array_field(doc, "nodes", true);
  for (std::size_t i = 0; i < jn.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "]";
    NodeRecord r;
    r.id = id_field(jn[i], "id", where);
    auto zone = jn[i].find("zone");
    if (zone != jn[i].end() && !zone->is_null()) {
      try {
        r.zone = parse_zone(zone->get<std::string>());
      } catch (const std::exception& e) {
        throw IoError(where + ": " + e.what());
      }
    }
    if (jn[i].contains("lon") && !jn[i]["lon"].is_null()) r.lon = field<double>(jn[i], "lon", where);
    if (jn[i].contains("lat") && !jn[i]["lat"].is_null()) r.lat = field<double>(jn[i], "lat", where);
    nodes.push_back(std::move(r));
  }

  std::vector<EdgeRecord> edges;
  const json& je = array_field(doc, "edges", true);
  for (std::size_t i = 0; i < je.size(); ++i) {
    const std::string where = "edges[" + std::to_string(i) + "]";
    EdgeRecord r;
    r.id = id_field(je[i], "id", where);
    r.source = id_field(je[i], "source", where);
    r.target = id_field(je[i], "target", where);
    r.category = field<int>(je[i], "category", where);
    r.length = field<double>(je[i], "length", where);
    auto geom = je[i].find("geometry");
    if (geom != je[i].end() && !geom->is_null()) {
      for (const auto& p : *geom) {
        if (!p.is_array() || p.size() != 2) throw IoError(where + ": geometry points are [x, y]");
        r.geometry.push_back({p[0].get<double>(), p[1].get<double>()});
      }
    }
    edges.push_back(std::move(r));
  }

  GraphLoad out;
  try {
    if (doc.contains("between_edges")) {
      std::vector<BetweenEdgeRecord> between;
      const json& jb = array_field(doc, "between_edges", false);
      for (std::size_t i = 0; i < jb.size(); ++i) {
        const std::string where = "between_edges[" + std::to_string(i) + "]";
        BetweenEdgeRecord r;
        r.id = id_field(jb[i], "id", where);
        r.first = id_field(jb[i], "first", where);
        r.second = id_field(jb[i], "second", where);
        r.turn_angle = field<double>(jb[i], "turn_angle", where);
        r.turn_direction = parse_turn_direction(field<std::string>(jb[i], "turn_direction", where));
        between.push_back(std::move(r));
      }
      out.network = build_road_network(nodes, edges, std::span<const BetweenEdgeRecord>(between));
    } else {
      out.network = derive_between_edges(build_road_network(nodes, edges));
      out.derived_between_edges = true;
    }
  } catch (const GraphError& e) {
    throw IoError(std::string("graph: ") + e.what());
  }
  return out;
}

json graph_to_json(const RoadNetwork& network) {
  json doc;
  doc["nodes"] = json::array();
  for (const Node& n : network.nodes()) {
    json j{{"id", n.id}, {"zone", to_string(n.zone)}};
    if (n.lon) j["lon"] = *n.lon;
    if (n.lat) j["lat"] = *n.lat;
    doc["nodes"].push_back(std::move(j));
  }
  doc["edges"] = json::array();
  for (const Edge& e : network.edges()) {
    json j{{"id", e.id},
           {"source", network.nodes()[e.source].id},
           {"target", network.nodes()[e.target].id},
           {"category", e.category},
           {"length", e.length}};
    if (!e.geometry.empty()) {
      json g = json::array();
      for (const Point& p : e.geometry) g.push_back({p.x, p.y});
      j["geometry"] = std::move(g);
    }
    doc["edges"].push_back(std::move(j));
  }
  doc["between_edges"] = json::array();
  for (const BetweenEdge& b : network.between_edges())
    doc["between_edges"].push_back({{"id", b.id},
                                    {"first", network.edges()[b.first].id},
                                    {"second", network.edges()[b.second].id},
                                    {"turn_angle", b.turn_angle},
                                    {"turn_direction", to_string(b.turn_direction)}});
  return doc;
}

GraphLoad load_graph(const std::filesystem::path& path,
                     const std::optional<std::filesystem::path>& overrides) {
  json doc = parse_json(read_text(path), path.string());
  if (overrides) apply_feature_overrides(doc, parse_json(read_text(*overrides), overrides->string()));
  return graph_from_json(doc);
}

// -- CSV ----------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line number, fields)
};

CsvTable read_csv(const std::string& text, const std::string& source) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size())
      throw IoError(source + ":" + std::to_string(number) + ": expected " +
                    std::to_string(table.header.size()) + " fields, found " +
                    std::to_string(fields.size()));
    table.rows.emplace_back(number, std::move(fields));
  }
  if (table.header.empty()) throw IoError(source + ": empty file");
  return table;
}

std::size_t column(const CsvTable& t, const std::string& name, const std::string& source,
                   bool required = true) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) {
    if (required) throw IoError(source + ":1: missing column '" + name + "'");
    return static_cast<std::size_t>(-1);
  }
  return static_cast<std::size_t>(it - t.header.begin());
}

double parse_double(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw IoError(where + ": not a number: '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw IoError(where + ": not an integer: '" + s + "'");
  return v;
}

}  // namespace

std::vector<Observation> parse_observations_csv(const std::string& text, const std::string& source) {
  const CsvTable t = read_csv(text, source);
  const std::size_t c_edge = column(t, "edge_id", source);
  const std::size_t c_speed = column(t, "speed_kmh", source);
  const std::size_t c_time = column(t, "timestamp", source, false);
  std::vector<Observation> out;
  for (const auto& [line, f] : t.rows) {
    const std::string where = source + ":" + std::to_string(line);
    Observation o;
    o.edge_id = f[c_edge];
    if (o.edge_id.empty()) throw IoError(where + ": empty edge_id");
    o.speed_kmh = parse_double(f[c_speed], where);
    if (!(o.speed_kmh > 0.0)) throw IoError(where + ": speed must be positive");
    if (c_time != static_cast<std::size_t>(-1) && !f[c_time].empty()) {
      o.timestamp = f[c_time];
      try {
        minutes_of_day(*o.timestamp);
      } catch (const IoError& e) {
        throw IoError(where + ": " + e.what());
      }
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<std::pair<std::string, int>> parse_labels_csv(const std::string& text,
                                                          const std::string& source) {
  const CsvTable t = read_csv(text, source);
  const std::size_t c_edge = column(t, "edge_id", source);
  const std::size_t c_label = column(t, "limit_class", source);
  std::vector<std::pair<std::string, int>> out;
  for (const auto& [line, f] : t.rows)
    out.emplace_back(f[c_edge], parse_int(f[c_label], source + ":" + std::to_string(line)));
  return out;
}

std::vector<std::pair<std::string, Split>> parse_split_csv(const std::string& text,
                                                           const std::string& source) {
  const CsvTable t = read_csv(text, source);
  const std::size_t c_edge = column(t, "edge_id", source);
  const std::size_t c_split = column(t, "split", source);
  std::vector<std::pair<std::string, Split>> out;
  for (const auto& [line, f] : t.rows) {
    try {
      out.emplace_back(f[c_edge], parse_split(f[c_split]));
    } catch (const DatasetError& e) {
      throw IoError(source + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

int minutes_of_day(const std::string& timestamp) {
  std::size_t at = timestamp.find('T');
  if (at == std::string::npos) at = timestamp.find(' ');
  const std::string clock = at == std::string::npos ? timestamp : timestamp.substr(at + 1);
  if (clock.size() < 5 || clock[2] != ':' || !std::isdigit(static_cast<unsigned char>(clock[0])) ||
      !std::isdigit(static_cast<unsigned char>(clock[1])) ||
      !std::isdigit(static_cast<unsigned char>(clock[3])) ||
      !std::isdigit(static_cast<unsigned char>(clock[4])))
    throw IoError("unrecognized timestamp '" + timestamp + "'");
  const int h = (clock[0] - '0') * 10 + (clock[1] - '0');
  const int m = (clock[3] - '0') * 10 + (clock[4] - '0');
  if (h > 23 || m > 59) throw IoError("time of day out of range in '" + timestamp + "'");
  return h * 60 + m;
}

bool in_peak_hours(const std::string& timestamp) {
  const int t = minutes_of_day(timestamp);
  return (t >= 7 * 60 && t < 9 * 60) || (t >= 15 * 60 && t < 17 * 60);
}

namespace {

EdgeId edge_or_throw(const RoadNetwork& network, const std::string& id, const std::string& what) {
  auto e = network.find_edge(id);
  if (!e) throw IoError(what + " references unknown edge '" + id + "'");
  return *e;
}

}  // namespace

Dataset regression_dataset(const RoadNetwork& network, const std::vector<Observation>& records,
                           bool filter_peak) {
  std::map<EdgeId, std::vector<double>> speeds;
  for (const auto& o : records) {
    const EdgeId e = edge_or_throw(network, o.edge_id, "observation");
    if (filter_peak && o.timestamp && in_peak_hours(*o.timestamp)) continue;
    speeds[e].push_back(o.speed_kmh);
  }
  Dataset d;
  d.task = Task::speed_regression;
  for (auto& [edge, s] : speeds) d.entries.push_back({edge, Split::train, std::move(s), 0});
  return d;
}

Dataset classification_dataset(const RoadNetwork& network,
                               const std::vector<std::pair<std::string, int>>& labels) {
  std::map<EdgeId, int> by_edge;
  for (const auto& [id, label] : labels) {
    const EdgeId e = edge_or_throw(network, id, "label");
    if (!by_edge.emplace(e, label).second) throw IoError("edge '" + id + "' labelled twice");
  }
  Dataset d;
  d.task = Task::limit_classification;
  for (const auto& [edge, label] : by_edge) {
    d.entries.push_back({edge, Split::train, {}, label});
    d.classes.push_back(label);
  }
  std::sort(d.classes.begin(), d.classes.end());
  d.classes.erase(std::unique(d.classes.begin(), d.classes.end()), d.classes.end());
  return d;
}

void assign_splits(Dataset& dataset, const RoadNetwork& network,
                   const std::vector<std::pair<std::string, Split>>& splits) {
  std::map<EdgeId, Split> by_edge;
  for (const auto& [id, split] : splits) {
    const EdgeId e = edge_or_throw(network, id, "split file");
    if (!by_edge.emplace(e, split).second) throw IoError("edge '" + id + "' split twice");
  }
  std::vector<DatasetEntry> kept;
  for (auto& entry : dataset.entries) {
    auto it = by_edge.find(entry.edge);
    if (it == by_edge.end()) continue;
    entry.split = it->second;
    kept.push_back(std::move(entry));
  }
  dataset.entries = std::move(kept);
}

void assign_splits(Dataset& dataset, const FractionSplit& fractions, std::uint64_t seed) {
  if (fractions.train < 0 || fractions.validation < 0 || fractions.train + fractions.validation > 1)
    throw IoError("split fractions must be non-negative and sum to at most 1");
  std::vector<std::size_t> order(dataset.entries.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::floor(n * fractions.train));
  const auto n_val = static_cast<std::size_t>(std::floor(n * fractions.validation));
  for (std::size_t k = 0; k < order.size(); ++k)
    dataset.entries[order[k]].split =
        k < n_train ? Split::train : k < n_train + n_val ? Split::validation : Split::test;
}

json dataset_to_json(const Dataset& dataset, const RoadNetwork& network) {
  json doc{{"task", to_string(dataset.task)}, {"classes", dataset.classes}};
  doc["entries"] = json::array();
  for (const auto& e : dataset.entries) {
    json j{{"edge", network.edges().at(e.edge).id}, {"split", to_string(e.split)}};
    if (dataset.task == Task::speed_regression)
      j["speeds"] = e.speeds;
    else
      j["label"] = e.label;
    doc["entries"].push_back(std::move(j));
  }
  return doc;
}

Dataset dataset_from_json(const json& doc, const RoadNetwork& network) {
  Dataset d;
  try {
    d.task = parse_task(field<std::string>(doc, "task", "dataset"));
    d.classes = doc.value("classes", std::vector<int>{});
    for (const auto& j : field<json>(doc, "entries", "dataset")) {
      DatasetEntry e;
      e.edge = edge_or_throw(network, field<std::string>(j, "edge", "dataset entry"), "dataset");
      e.split = parse_split(field<std::string>(j, "split", "dataset entry"));
      if (d.task == Task::speed_regression)
        e.speeds = field<std::vector<double>>(j, "speeds", "dataset entry");
      else
        e.label = field<int>(j, "label", "dataset entry");
      d.entries.push_back(std::move(e));
    }
    d.validate(network);
  } catch (const DatasetError& e) {
    throw IoError(std::string("dataset: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("dataset: ") + e.what());
  }
  return d;
}

// -- features ----------------------------------------------------------------------

namespace {

json matrix_to_json(const nd::Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r)
    rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

nd::Matrix matrix_from_json(const json& j, const std::string& where) {
  const auto rows = field<std::size_t>(j, "rows", where);
  const auto cols = field<std::size_t>(j, "cols", where);
  nd::Matrix m(rows, cols);
  const json& data = field<json>(j, "data", where);
  if (data.size() != rows) throw IoError(where + ": row count mismatch");
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = data[r].get<std::vector<double>>();
    if (row.size() != cols) throw IoError(where + ": column count mismatch in row " + std::to_string(r));
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

json scaler_to_json(const MinMaxScaler& s) {
  return json{{"columns", s.columns()}, {"mins", s.mins()}, {"maxs", s.maxs()}};
}

MinMaxScaler scaler_from_json(const json& j, const std::string& where) {
  return MinMaxScaler::from_parts(field<std::vector<std::size_t>>(j, "columns", where),
                                  field<std::vector<double>>(j, "mins", where),
                                  field<std::vector<double>>(j, "maxs", where));
}

}  // namespace

json features_to_json(const FeatureSet& f, const FeatureConfig& config) {
  return json{{"edge_node_features", config.edge_node_features},
              {"nodes", matrix_to_json(f.nodes)},
              {"edges", matrix_to_json(f.edges)},
              {"between_edges", matrix_to_json(f.between_edges)},
              {"scalers",
               {{"nodes", scaler_to_json(f.node_scaler)},
                {"edges", scaler_to_json(f.edge_scaler)},
                {"between_edges", scaler_to_json(f.between_scaler)}}},
              {"layout", feature_layout_json(f)}};
}

FeatureSet features_from_json(const json& doc, FeatureConfig* config) {
  FeatureSet f;
  f.nodes = matrix_from_json(field<json>(doc, "nodes", "features"), "features.nodes");
  f.edges = matrix_from_json(field<json>(doc, "edges", "features"), "features.edges");
  f.between_edges =
      matrix_from_json(field<json>(doc, "between_edges", "features"), "features.between_edges");
  const json& sc = field<json>(doc, "scalers", "features");
  f.node_scaler = scaler_from_json(field<json>(sc, "nodes", "scalers"), "scalers.nodes");
  f.edge_scaler = scaler_from_json(field<json>(sc, "edges", "scalers"), "scalers.edges");
  f.between_scaler =
      scaler_from_json(field<json>(sc, "between_edges", "scalers"), "scalers.between_edges");
  if (doc.contains("layout")) {
    const json& layout = doc["layout"];
    f.node_columns = layout.value("nodes", std::vector<std::string>{});
    f.edge_columns = layout.value("edges", std::vector<std::string>{});
    f.between_columns = layout.value("between_edges", std::vector<std::string>{});
  }
  if (config) config->edge_node_features = doc.value("edge_node_features", true);
  return f;
}

json feature_layout_json(const FeatureSet& f) {
  return json{{"nodes", f.node_columns},
              {"edges", f.edge_columns},
              {"between_edges", f.between_columns}};
}

void save_bundle(const std::filesystem::path& dir, const Bundle& bundle) {
  std::filesystem::create_directories(dir);
  write_text(dir / "graph.json", graph_to_json(bundle.network).dump(1));
  write_text(dir / "features.json", features_to_json(bundle.features, bundle.feature_config).dump());
  write_text(dir / "features_layout.json", feature_layout_json(bundle.features).dump(2));
  write_text(dir / "dataset.json", dataset_to_json(bundle.dataset, bundle.network).dump(1));
}

Bundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("bundle directory not found: " + dir.string());
  Bundle b;
  b.network = graph_from_json(parse_json(read_text(dir / "graph.json"), "graph.json")).network;
  b.features = features_from_json(parse_json(read_text(dir / "features.json"), "features.json"),
                                  &b.feature_config);
  b.dataset = dataset_from_json(parse_json(read_text(dir / "dataset.json"), "dataset.json"),
                                b.network);
  if (b.features.nodes.rows() != b.network.node_count() ||
      b.features.edges.rows() != b.network.edge_count() ||
      b.features.between_edges.rows() != b.network.between_edge_count())
    throw IoError("bundle: feature rows do not match the graph");
  return b;
}

// -- configs and reports --------------------------------------------------------------

json to_json(const nd::Activation& a) { return json{{"name", a.name()}, {"param", a.param}}; }

nd::Activation activation_from_json(const json& j) {
  if (j.is_string()) return nd::Activation::parse(j.get<std::string>());
  return nd::Activation::parse(field<std::string>(j, "name", "activation"), j.value("param", 0.0));
}

json to_json(const RfnConfig& c) {
  return json{{"fusion", to_string(c.fusion)},
              {"aggregator", to_string(c.aggregator)},
              {"layers", c.layers},
              {"hidden_dims", c.hidden_dims},
              {"output_dim", c.output_dim},
              {"hidden_activation", to_json(c.hidden_activation)},
              {"output_activation", to_json(c.output_activation)},
              {"normalization", to_string(c.normalization)},
              {"heads",
               {{"nodes", c.heads.nodes},
                {"edges", c.heads.edges},
                {"between_edges", c.heads.between_edges}}},
              {"node_input_dim", c.node_input_dim},
              {"edge_input_dim", c.edge_input_dim},
              {"between_input_dim", c.between_input_dim}};
}

RfnConfig rfn_config_from_json(const json& j) {
  RfnConfig c;
  try {
    if (j.contains("fusion")) c.fusion = parse_fusion_kind(j["fusion"].get<std::string>());
    if (j.contains("aggregator"))
      c.aggregator = parse_aggregator_kind(j["aggregator"].get<std::string>());
    c.layers = j.value("layers", c.layers);
    c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
    c.output_dim = j.value("output_dim", c.output_dim);
    if (j.contains("hidden_activation"))
      c.hidden_activation = activation_from_json(j["hidden_activation"]);
    if (j.contains("output_activation"))
      c.output_activation = activation_from_json(j["output_activation"]);
    if (j.contains("normalization"))
      c.normalization = parse_normalization(j["normalization"].get<std::string>());
    if (j.contains("heads")) {
      c.heads.nodes = j["heads"].value("nodes", c.heads.nodes);
      c.heads.edges = j["heads"].value("edges", c.heads.edges);
      c.heads.between_edges = j["heads"].value("between_edges", c.heads.between_edges);
    }
    c.node_input_dim = j.value("node_input_dim", c.node_input_dim);
    c.edge_input_dim = j.value("edge_input_dim", c.edge_input_dim);
    c.between_input_dim = j.value("between_input_dim", c.between_input_dim);
  } catch (const json::exception& e) {
    throw IoError(std::string("model config: ") + e.what());
  }
  return c;
}

json to_json(const MlpConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"hidden_dim", c.hidden_dim},
              {"output_dim", c.output_dim},
              {"hidden_activation", to_json(c.hidden_activation)},
              {"output_activation", to_json(c.output_activation)}};
}

MlpConfig mlp_config_from_json(const json& j) {
  MlpConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.output_dim = j.value("output_dim", c.output_dim);
  if (j.contains("hidden_activation")) c.hidden_activation = activation_from_json(j["hidden_activation"]);
  if (j.contains("output_activation")) c.output_activation = activation_from_json(j["output_activation"]);
  return c;
}

json to_json(const GroupingTable& t) {
  json groups = json::array();
  for (const auto& [key, entry] : t.groups)
    groups.push_back({{"category", key.category},
                      {"in_city", key.in_city},
                      {"value", entry.value},
                      {"support", entry.support}});
  return json{{"task", to_string(t.task)},
              {"groups", std::move(groups)},
              {"fallback", {{"value", t.fallback.value}, {"support", t.fallback.support}}}};
}

GroupingTable grouping_from_json(const json& j) {
  GroupingTable t;
  t.task = parse_task(field<std::string>(j, "task", "grouping"));
  for (const auto& g : field<json>(j, "groups", "grouping"))
    t.groups[{field<int>(g, "category", "group"), field<bool>(g, "in_city", "group")}] = {
        field<double>(g, "value", "group"), field<std::size_t>(g, "support", "group")};
  const json& fb = field<json>(j, "fallback", "grouping");
  t.fallback = {field<double>(fb, "value", "fallback"), field<std::size_t>(fb, "support", "fallback")};
  return t;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const TrainResult& r) {
  json history = json::array();
  for (const auto& e : r.history)
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", number_or_null(e.train_loss)},
                       {"train_mae", number_or_null(e.train_mae)},
                       {"validation_mae", number_or_null(e.validation_mae)},
                       {"validation_f1", number_or_null(e.validation_f1)}});
  return json{{"history", std::move(history)}, {"best_epoch", r.best_epoch}};
}

json to_json(const AttentionReport& report, const RoadNetwork& network) {
  json layers = json::array();
  for (const auto& layer : report.layers) {
    json entries = json::array();
    double total = 0.0;
    for (const auto& e : layer.entries) {
      entries.push_back({{"neighbor", network.edges()[e.neighbor].id},
                         {"between_edge", network.between_edges()[e.relation].id},
                         {"orientation", e.orientation == Orientation::incoming ? "in" : "out"},
                         {"weight", e.weight}});
      total += e.weight;
    }
    layers.push_back({{"layer", layer.layer}, {"weights", std::move(entries)}, {"sum", total}});
  }
  return json{{"edge", report.edge_id}, {"layers", std::move(layers)}};
}

// -- checkpoints -------------------------------------------------------------------

std::string Checkpoint::kind() const {
  if (rfn) return "rfn";
  if (mlp) return "mlp";
  if (grouping) return "grouping";
  return "empty";
}

const EdgeModel* Checkpoint::edge_model() const {
  if (rfn) return rfn.get();
  if (mlp) return mlp.get();
  return nullptr;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void restore_parameters(const std::vector<nd::Tensor>& params,
                        const std::vector<nd::Matrix>& values) {
  if (params.size() != values.size())
    throw IoError("checkpoint holds " + std::to_string(values.size()) +
                  " parameter blocks, the model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    nd::Tensor p = params[i];
    if (!p.value().same_shape(values[i]))
      throw IoError("checkpoint block " + std::to_string(i) + " has shape " +
                    nd::shape_string(values[i]) + ", expected " + nd::shape_string(p.value()));
    p.mutable_value() = values[i];
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  json header{{"format_version", 1},
              {"kind", c.kind()},
              {"task", to_string(c.task)},
              {"classes", c.classes},
              {"id_digest", hex64(c.id_digest)},
              {"edge_node_features", c.feature_config.edge_node_features}};
  std::vector<nd::Tensor> params;
  std::vector<std::string> names;
  if (c.rfn) {
    header["config"] = to_json(c.rfn->config());
    params = c.rfn->parameters();
    names = c.rfn->parameter_names();
  } else if (c.mlp) {
    header["config"] = to_json(c.mlp->config());
    params = c.mlp->parameters();
    names = c.mlp->parameter_names();
  }
  if (c.grouping) header["grouping"] = to_json(*c.grouping);
  json blocks = json::array();
  for (std::size_t i = 0; i < params.size(); ++i)
    blocks.push_back({{"name", names[i]}, {"rows", params[i].rows()}, {"cols", params[i].cols()}});
  header["parameters"] = std::move(blocks);

  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = text.size();
  char len_bytes[8];
  std::memcpy(len_bytes, &len, 8);
  out.append(len_bytes, 8);
  out += text;
  for (const auto& p : params) {
    const auto values = p.value().values();
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint file (bad magic)");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (len > bytes.size() - 16) throw IoError("checkpoint header is truncated");
  const json header = parse_json(bytes.substr(16, len), "checkpoint header");

  Checkpoint c;
  try {
    if (header.value("format_version", 0) != 1) throw IoError("unsupported checkpoint version");
    c.task = parse_task(field<std::string>(header, "task", "checkpoint"));
    c.classes = header.value("classes", std::vector<int>{});
    c.id_digest = std::stoull(field<std::string>(header, "id_digest", "checkpoint"), nullptr, 16);
    c.feature_config.edge_node_features = header.value("edge_node_features", true);

    std::vector<nd::Matrix> values;
    std::size_t offset = 16 + len;
    for (const auto& block : field<json>(header, "parameters", "checkpoint")) {
      nd::Matrix m(field<std::size_t>(block, "rows", "parameter"),
                   field<std::size_t>(block, "cols", "parameter"));
      const std::size_t nbytes = m.size() * sizeof(double);
      if (offset + nbytes > bytes.size()) throw IoError("checkpoint parameter data is truncated");
      std::memcpy(m.values().data(), bytes.data() + offset, nbytes);
      offset += nbytes;
      values.push_back(std::move(m));
    }
    if (offset != bytes.size()) throw IoError("checkpoint has trailing bytes");

    const std::string kind = field<std::string>(header, "kind", "checkpoint");
    if (kind == "rfn") {
      c.rfn = std::make_shared<RfnModel>(
          RfnModel::create(rfn_config_from_json(field<json>(header, "config", "checkpoint")), 0));
      restore_parameters(c.rfn->parameters(), values);
    } else if (kind == "mlp") {
      c.mlp = std::make_shared<MlpModel>(
          MlpModel::create(mlp_config_from_json(field<json>(header, "config", "checkpoint")), 0));
      restore_parameters(c.mlp->parameters(), values);
    } else if (kind != "grouping") {
      throw IoError("unknown checkpoint kind '" + kind + "'");
    }
    if (header.contains("grouping")) c.grouping = grouping_from_json(header["grouping"]);
    if (kind == "grouping" && !c.grouping) throw IoError("grouping checkpoint without a table");
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_text(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text(path));
}

}  // namespace rfn
