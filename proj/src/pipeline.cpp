#include "rfn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace rfn {

Bundle preprocess(const PreprocessOptions& options, PreprocessReport* report) {
  if (options.observations.has_value() == options.labels.has_value())
    throw IoError("give exactly one of observations (speeds) or labels (speed limits)");
  PreprocessReport rep;
  GraphLoad load = load_graph(options.graph, options.overrides);
  rep.derived_between_edges = load.derived_between_edges;
  rep.missing_turn_attributes = load.network.missing_turn_attributes();

  Bundle bundle;
  bundle.network = std::move(load.network);
  if (options.observations) {
    const auto records = parse_observations_csv(read_text(*options.observations),
                                                options.observations->string());
    rep.records_read = records.size();
    if (options.filter_peak)
      rep.records_dropped_peak = static_cast<std::size_t>(
          std::count_if(records.begin(), records.end(), [](const Observation& o) {
            return o.timestamp && in_peak_hours(*o.timestamp);
          }));
    bundle.dataset = regression_dataset(bundle.network, records, options.filter_peak);
  } else {
    const auto labels = parse_labels_csv(read_text(*options.labels), options.labels->string());
    rep.records_read = labels.size();
    bundle.dataset = classification_dataset(bundle.network, labels);
  }

  if (options.split_file)
    assign_splits(bundle.dataset, bundle.network,
                  parse_split_csv(read_text(*options.split_file), options.split_file->string()));
  else
    assign_splits(bundle.dataset, options.fractions, options.seed);
  bundle.dataset.validate(bundle.network);

  bundle.feature_config = options.features;
  bundle.features =
      build_features(bundle.network, bundle.dataset.edges(Split::train), options.features);
  if (report) *report = rep;
  return bundle;
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::rfn: return "rfn";
    case ModelKind::mlp: return "mlp";
    case ModelKind::grouping: return "grouping";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "rfn") return ModelKind::rfn;
  if (text == "mlp") return ModelKind::mlp;
  if (text == "grouping" || text == "grouping_estimator") return ModelKind::grouping;
  throw std::invalid_argument("unknown model kind '" + text + "'");
}

std::size_t RunConfig::epochs_for(Task task) const {
  if (epochs) return *epochs;
  return task == Task::speed_regression ? 20 : 30;
}

void RunConfig::validate() const {
  if (layers == 0) throw std::invalid_argument("layers must be positive");
  if (hidden_dims.empty() ||
      std::any_of(hidden_dims.begin(), hidden_dims.end(), [](std::size_t d) { return d == 0; }))
    throw std::invalid_argument("hidden dims must be positive");
  if (mlp_hidden_dim == 0) throw std::invalid_argument("mlp hidden dim must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw IoError("run config must be a JSON object");
  static const std::set<std::string> known = {
      "model",          "variant", "fusion",     "aggregator", "layers",
      "hidden_dims",    "hidden_dim", "normalization", "mlp_hidden_dim", "learning_rate",
      "epochs",         "batch_size", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw IoError("run config: unknown key '" + it.key() + "'");

  RunConfig c;
  try {
    if (j.contains("variant")) {
      const std::string v = j["variant"].get<std::string>();
      const auto plus = v.find('+');
      if (plus == std::string::npos) {
        c.model = parse_model_kind(v);
      } else {
        c.model = ModelKind::rfn;
        c.aggregator = parse_aggregator_kind(v.substr(0, plus));
        c.fusion = parse_fusion_kind(v.substr(plus + 1));
      }
    }
    if (j.contains("model")) c.model = parse_model_kind(j["model"].get<std::string>());
    if (j.contains("fusion")) c.fusion = parse_fusion_kind(j["fusion"].get<std::string>());
    if (j.contains("aggregator"))
      c.aggregator = parse_aggregator_kind(j["aggregator"].get<std::string>());
    c.layers = j.value("layers", c.layers);
    if (j.contains("hidden_dim")) c.hidden_dims = {j["hidden_dim"].get<std::size_t>()};
    if (j.contains("hidden_dims")) c.hidden_dims = j["hidden_dims"].get<std::vector<std::size_t>>();
    if (j.contains("normalization"))
      c.normalization = parse_normalization(j["normalization"].get<std::string>());
    c.mlp_hidden_dim = j.value("mlp_hidden_dim", c.mlp_hidden_dim);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw IoError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json j{{"model", to_string(c.model)},
         {"fusion", to_string(c.fusion)},
         {"aggregator", to_string(c.aggregator)},
         {"layers", c.layers},
         {"hidden_dims", c.hidden_dims},
         {"mlp_hidden_dim", c.mlp_hidden_dim},
         {"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"seed", c.seed}};
  if (c.normalization) j["normalization"] = to_string(*c.normalization);
  if (c.epochs) j["epochs"] = *c.epochs;
  return j;
}

namespace {

std::size_t output_width(const Dataset& dataset) {
  return dataset.task == Task::speed_regression ? 1 : dataset.classes.size();
}

}  // namespace

TrainedRun train_run(const Bundle& bundle, const RunConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const Dataset& data = bundle.dataset;
  const Task task = data.task;
  if (task == Task::limit_classification && data.classes.size() < 2)
    throw TrainingError("speed limit classification needs at least two classes");

  TrainedRun run;
  Checkpoint& ck = run.checkpoint;
  ck.task = task;
  ck.classes = data.classes;
  ck.id_digest = bundle.network.id_digest();
  ck.feature_config = bundle.feature_config;

  const GraphContext graph(bundle.network);
  TrainConfig tc;
  tc.epochs = config.epochs_for(task);
  tc.batch_size = config.batch_size;
  tc.adam.learning_rate = config.learning_rate;
  tc.seed = config.seed;

  auto fit = [&](EdgeModel& model) {
    run.result = task == Task::speed_regression
                     ? train_regression(model, graph, bundle.features, data, tc, on_epoch)
                     : train_classification(model, graph, bundle.features, data, tc, on_epoch);
  };

  switch (config.model) {
    case ModelKind::rfn: {
      RfnConfig rc = RfnConfig::for_task(task, config.fusion, config.aggregator,
                                         config.hidden_dims.front(), output_width(data));
      rc.layers = config.layers;
      rc.hidden_dims = config.hidden_dims;
      if (config.normalization) rc.normalization = *config.normalization;
      rc.node_input_dim = bundle.features.nodes.cols();
      rc.edge_input_dim = bundle.features.edges.cols();
      rc.between_input_dim = bundle.features.between_edges.cols();
      ck.rfn = std::make_shared<RfnModel>(RfnModel::create(rc, config.seed));
      fit(*ck.rfn);
      break;
    }
    case ModelKind::mlp: {
      MlpConfig mc;
      mc.input_dim = bundle.features.edges.cols();
      mc.hidden_dim = config.mlp_hidden_dim;
      mc.output_dim = output_width(data);
      mc.output_activation = task == Task::speed_regression ? nd::Activation::relu()
                                                            : nd::Activation::softmax_rows();
      ck.mlp = std::make_shared<MlpModel>(MlpModel::create(mc, config.seed));
      fit(*ck.mlp);
      break;
    }
    case ModelKind::grouping:
      ck.grouping = grouping_fit(bundle.network, data, data.indices(Split::train));
      break;
  }

  if (!data.indices(Split::validation).empty()) {
    try {
      run.validation_metric = evaluate(ck, bundle, Split::validation).value;
    } catch (const EvaluationError&) {
      run.validation_metric = kNotRecorded;
    }
  }
  return run;
}

void check_compatible(const Checkpoint& checkpoint, const Bundle& bundle) {
  if (checkpoint.id_digest != bundle.network.id_digest())
    throw IoError("checkpoint was trained on a different network (id digest mismatch)");
  if (checkpoint.task != bundle.dataset.task)
    throw IoError("checkpoint task " + to_string(checkpoint.task) + " does not match bundle task " +
                  to_string(bundle.dataset.task));
  if (checkpoint.feature_config.edge_node_features != bundle.feature_config.edge_node_features)
    throw IoError("checkpoint and bundle use different edge feature layouts");
}

nd::Matrix predict(const Checkpoint& checkpoint, const Bundle& bundle) {
  check_compatible(checkpoint, bundle);
  if (const EdgeModel* model = checkpoint.edge_model()) {
    const GraphContext graph(bundle.network);
    return model->predict_edges(graph, bundle.features).value();
  }
  if (!checkpoint.grouping) throw IoError("checkpoint holds no model");
  const std::vector<double> values = grouping_predict_all(*checkpoint.grouping, bundle.network);
  if (checkpoint.task == Task::speed_regression) return nd::Matrix::column_vector(values);
  nd::Matrix onehot(values.size(), checkpoint.classes.size());
  for (std::size_t e = 0; e < values.size(); ++e) {
    const auto it = std::find(checkpoint.classes.begin(), checkpoint.classes.end(),
                              static_cast<int>(std::lround(values[e])));
    if (it == checkpoint.classes.end()) throw IoError("grouping label outside the class universe");
    onehot(e, static_cast<std::size_t>(it - checkpoint.classes.begin())) = 1.0;
  }
  return onehot;
}

namespace {

double score(const Checkpoint& checkpoint, const Dataset& dataset, const nd::Matrix& outputs,
             const std::vector<std::size_t>& entries, std::size_t min_records) {
  if (dataset.task == Task::speed_regression)
    return mae_segments(edge_values(outputs), dataset, entries, min_records);
  if (entries.empty()) throw EvaluationError("nothing to score");
  const std::vector<int> labels = edge_labels(outputs, checkpoint.classes);
  std::vector<int> predicted;
  std::vector<int> truth;
  for (std::size_t i : entries) {
    predicted.push_back(labels[dataset.entries[i].edge]);
    truth.push_back(dataset.entries[i].label);
  }
  return macro_f1(predicted, truth, checkpoint.classes);
}

std::size_t scorable(const Dataset& dataset, const std::vector<std::size_t>& entries,
                     std::size_t min_records) {
  if (dataset.task != Task::speed_regression) return entries.size();
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](std::size_t i) {
    return dataset.entries[i].speeds.size() >= min_records;
  }));
}

}  // namespace

Metrics evaluate(const Checkpoint& checkpoint, const Bundle& bundle, std::optional<Split> split,
                 const std::optional<std::vector<std::string>>& subset) {
  const Dataset& data = bundle.dataset;
  const nd::Matrix outputs = predict(checkpoint, bundle);

  std::vector<std::size_t> entries;
  if (split) {
    entries = data.indices(*split);
  } else {
    entries.resize(data.entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
  }

  Metrics m;
  m.task = data.task;
  m.split = split ? to_string(*split) : "all";
  m.metric = data.task == Task::speed_regression ? "mae" : "macro_f1";
  m.value = score(checkpoint, data, outputs, entries, kMinRecords);
  m.scored = scorable(data, entries, kMinRecords);

  if (subset) {
    std::set<EdgeId> wanted;
    for (const std::string& id : *subset) {
      const auto e = bundle.network.find_edge(id);
      if (!e) throw IoError("subset names unknown edge '" + id + "'");
      wanted.insert(*e);
    }
    std::vector<std::size_t> picked;
    for (std::size_t i : entries)
      if (wanted.count(data.entries[i].edge)) picked.push_back(i);
    if (picked.empty())
      throw EvaluationError("no subset edge has an entry in the " + m.split + " split");
    m.subset_value = score(checkpoint, data, outputs, picked, 0);
    m.subset_scored = picked.size();
  }
  return m;
}

json to_json(const Metrics& m) {
  json j{{"task", to_string(m.task)},
         {"split", m.split},
         {"metric", m.metric},
         {"value", m.value},
         {"scored", m.scored}};
  if (m.subset_value) j["subset"] = {{"value", *m.subset_value}, {"scored", m.subset_scored}};
  return j;
}

AttentionReport inspect(const Checkpoint& checkpoint, const Bundle& bundle,
                        const std::string& edge_id) {
  check_compatible(checkpoint, bundle);
  if (!checkpoint.rfn) throw IoError("attention inspection needs a relational fusion network");
  const auto edge = bundle.network.find_edge(edge_id);
  if (!edge) throw IoError("unknown edge '" + edge_id + "'");
  const GraphContext graph(bundle.network);
  return inspect_attention(*checkpoint.rfn, graph, bundle.features, *edge);
}

}  // namespace rfn
