// rfn: preprocess road-network data, train and evaluate relational fusion
// networks and baselines, write predictions, and inspect attention.
//
// Results go to stdout (or --out), logs and the error JSON to stderr.
// Exit status: 0 success, 1 runtime failure, 2 usage error.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rfn/pipeline.hpp"

namespace fs = std::filesystem;
using rfn::json;

namespace {

constexpr const char* kCheckpointFile = "checkpoint.rfn";
constexpr const char* kHistoryFile = "history.json";

void emit_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("rfn");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  const char* env = std::getenv("RFN_LOG");
  if (!env) return;
  const std::string level = env;
  if (level == "error")
    spdlog::set_level(spdlog::level::err);
  else if (level == "debug")
    spdlog::set_level(spdlog::level::debug);
  else if (level != "info")
    spdlog::warn("RFN_LOG must be error, info, or debug; using info");
}

void write_output(const std::optional<fs::path>& out, const std::string& text) {
  if (out)
    rfn::write_text(*out, text);
  else
    std::cout << text;
}

fs::path checkpoint_path(const fs::path& given) {
  return fs::is_directory(given) ? given / kCheckpointFile : given;
}

std::string fmt_metric(double v) {
  return std::isfinite(v) ? std::to_string(v) : std::string("n/a");
}

// -- preprocess ----------------------------------------------------------------

struct PreprocessArgs {
  rfn::PreprocessOptions options;
  std::string graph, overrides, observations, labels, split_file;
  std::vector<double> fractions;
  bool plain_edges = false;
  std::string out;
};

void run_preprocess(PreprocessArgs& a) {
  auto& o = a.options;
  o.graph = a.graph;
  if (!a.overrides.empty()) o.overrides = a.overrides;
  if (!a.observations.empty()) o.observations = a.observations;
  if (!a.labels.empty()) o.labels = a.labels;
  if (!a.split_file.empty()) o.split_file = a.split_file;
  if (!a.fractions.empty()) {
    if (a.fractions.size() != 2) throw rfn::IoError("--fractions takes TRAIN,VALIDATION");
    o.fractions = {a.fractions[0], a.fractions[1]};
  }
  o.features.edge_node_features = !a.plain_edges;

  rfn::PreprocessReport report;
  const rfn::Bundle bundle = rfn::preprocess(o, &report);
  if (report.derived_between_edges)
    spdlog::info("derived {} between-edges ({} without geometry)",
                 bundle.network.between_edge_count(), report.missing_turn_attributes);
  if (report.records_dropped_peak)
    spdlog::info("dropped {} of {} records in peak hours", report.records_dropped_peak,
                 report.records_read);
  rfn::save_bundle(a.out, bundle);

  const auto& d = bundle.dataset;
  std::cout << json{{"bundle", a.out},
                    {"task", rfn::to_string(d.task)},
                    {"nodes", bundle.network.node_count()},
                    {"edges", bundle.network.edge_count()},
                    {"between_edges", bundle.network.between_edge_count()},
                    {"derived_between_edges", report.derived_between_edges},
                    {"missing_turn_attributes", report.missing_turn_attributes},
                    {"records_read", report.records_read},
                    {"records_dropped_peak", report.records_dropped_peak},
                    {"entries",
                     {{"train", d.indices(rfn::Split::train).size()},
                      {"validation", d.indices(rfn::Split::validation).size()},
                      {"test", d.indices(rfn::Split::test).size()}}}}
                   .dump(2)
            << '\n';
}

// -- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string bundle, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::string variant;
};

void run_train(const TrainArgs& a) {
  const rfn::Bundle bundle = rfn::load_bundle(a.bundle);
  json cfg_doc = json::object();
  if (!a.config.empty()) {
    try {
      cfg_doc = json::parse(rfn::read_text(a.config));
    } catch (const json::parse_error& e) {
      throw rfn::IoError(a.config + ": " + e.what());
    }
  }
  if (!a.variant.empty()) {
    cfg_doc.erase("model");
    cfg_doc.erase("fusion");
    cfg_doc.erase("aggregator");
    cfg_doc["variant"] = a.variant;
  }
  if (a.seed) cfg_doc["seed"] = *a.seed;
  if (a.epochs) cfg_doc["epochs"] = *a.epochs;
  if (a.learning_rate) cfg_doc["learning_rate"] = *a.learning_rate;
  const rfn::RunConfig config = rfn::run_config_from_json(cfg_doc);
  spdlog::debug("run config {}", rfn::to_json(config).dump());

  const rfn::Task task = bundle.dataset.task;
  const auto on_epoch = [task](const rfn::EpochRecord& r) {
    if (task == rfn::Task::speed_regression)
      spdlog::info("epoch {:>3}  loss {:.4f}  train mae {}  val mae {}", r.epoch, r.train_loss,
                   fmt_metric(r.train_mae), fmt_metric(r.validation_mae));
    else
      spdlog::info("epoch {:>3}  loss {:.4f}  val macro f1 {}", r.epoch, r.train_loss,
                   fmt_metric(r.validation_f1));
  };
  const rfn::TrainedRun run = rfn::train_run(bundle, config, on_epoch);

  const fs::path out(a.out);
  fs::create_directories(out);
  rfn::save_checkpoint(out / kCheckpointFile, run.checkpoint);
  json history = rfn::to_json(run.result);
  history["config"] = rfn::to_json(config);
  history["task"] = rfn::to_string(task);
  history["metric"] = task == rfn::Task::speed_regression ? "mae" : "macro_f1";
  history["validation_metric"] =
      std::isfinite(run.validation_metric) ? json(run.validation_metric) : json(nullptr);
  rfn::write_text(out / kHistoryFile, history.dump(2));

  std::cout << json{{"checkpoint", (out / kCheckpointFile).string()},
                    {"history", (out / kHistoryFile).string()},
                    {"model", run.checkpoint.kind()},
                    {"epochs", run.result.history.size()},
                    {"best_epoch", run.result.best_epoch},
                    {"metric", history["metric"]},
                    {"validation_metric", history["validation_metric"]}}
                   .dump(2)
            << '\n';
}

// -- evaluate / predict / inspect ------------------------------------------------

struct ModelArgs {
  std::string checkpoint, bundle;
  std::optional<std::string> out;
};

std::optional<fs::path> out_path(const ModelArgs& a) {
  return a.out ? std::optional<fs::path>(*a.out) : std::nullopt;
}

void run_evaluate(const ModelArgs& a, const std::string& split,
                  const std::vector<std::string>& subset) {
  const rfn::Checkpoint ck = rfn::load_checkpoint(checkpoint_path(a.checkpoint));
  const rfn::Bundle bundle = rfn::load_bundle(a.bundle);
  std::optional<rfn::Split> which;
  if (split != "all") which = rfn::parse_split(split);
  std::optional<std::vector<std::string>> chosen;
  if (!subset.empty()) chosen = subset;
  const rfn::Metrics m = rfn::evaluate(ck, bundle, which, chosen);
  json doc = rfn::to_json(m);
  doc["model"] = ck.kind();
  write_output(out_path(a), doc.dump(2) + "\n");
}

void run_predict(const ModelArgs& a) {
  const rfn::Checkpoint ck = rfn::load_checkpoint(checkpoint_path(a.checkpoint));
  const rfn::Bundle bundle = rfn::load_bundle(a.bundle);
  const rfn::nd::Matrix out = rfn::predict(ck, bundle);

  std::string csv;
  char buf[64];
  if (ck.task == rfn::Task::speed_regression) {
    csv = "edge_id,speed_kmh\n";
    for (std::size_t e = 0; e < out.rows(); ++e) {
      std::snprintf(buf, sizeof buf, "%.17g", out(e, 0));
      csv += bundle.network.edges()[e].id + "," + buf + "\n";
    }
  } else {
    const std::vector<int> labels = rfn::edge_labels(out, ck.classes);
    csv = "edge_id,limit_class";
    for (int c : ck.classes) csv += ",p_" + std::to_string(c);
    csv += "\n";
    for (std::size_t e = 0; e < out.rows(); ++e) {
      csv += bundle.network.edges()[e].id + "," + std::to_string(labels[e]);
      for (std::size_t c = 0; c < out.cols(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", out(e, c));
        csv += buf;
      }
      csv += "\n";
    }
  }
  write_output(out_path(a), csv);
  spdlog::info("wrote {} predictions", out.rows());
}

void run_inspect(const ModelArgs& a, const std::string& edge, const std::string& format) {
  const rfn::Checkpoint ck = rfn::load_checkpoint(checkpoint_path(a.checkpoint));
  const rfn::Bundle bundle = rfn::load_bundle(a.bundle);
  const rfn::AttentionReport report = rfn::inspect(ck, bundle, edge);
  if (format == "json")
    write_output(out_path(a), rfn::to_json(report, bundle.network).dump(2) + "\n");
  else
    write_output(out_path(a), rfn::format_attention_table(report, bundle.network));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relational fusion networks for road networks"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* cmd_pre = app.add_subcommand("preprocess", "Build a dataset bundle from raw files");
  cmd_pre->add_option("--graph", pre.graph, "Graph JSON")->required();
  cmd_pre->add_option("--overrides", pre.overrides, "Attribute overrides JSON");
  auto* obs = cmd_pre->add_option("--observations", pre.observations,
                                  "Speed records CSV (edge_id,speed_kmh[,timestamp])");
  auto* lab = cmd_pre->add_option("--labels", pre.labels, "Speed limit CSV (edge_id,limit_class)");
  obs->excludes(lab);
  auto* split_file = cmd_pre->add_option("--split-file", pre.split_file, "Split CSV (edge_id,split)");
  cmd_pre->add_option("--fractions", pre.fractions, "Seeded TRAIN,VALIDATION fractions")
      ->delimiter(',')
      ->excludes(split_file);
  cmd_pre->add_option("--seed", pre.options.seed, "Seed for the fraction split");
  cmd_pre->add_flag("--filter-peak", pre.options.filter_peak,
                    "Drop records from 07-09 and 15-17 wall-clock");
  cmd_pre->add_flag("--plain-edge-features", pre.plain_edges,
                    "Leave endpoint zone encodings out of edge features");
  cmd_pre->add_option("--out", pre.out, "Bundle directory")->required();

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Train a model on a bundle");
  cmd_train->add_option("--bundle", tr.bundle, "Bundle directory")->required();
  cmd_train->add_option("--config", tr.config, "Run config JSON");
  cmd_train->add_option("--variant", tr.variant,
                        "attentional|non_attentional + additive|interactional, mlp, or grouping");
  cmd_train->add_option("--seed", tr.seed, "Seed for initialization and sampling");
  cmd_train->add_option("--epochs", tr.epochs, "Epoch count");
  cmd_train->add_option("--lr", tr.learning_rate, "Adam learning rate");
  cmd_train->add_option("--out", tr.out, "Output directory")->required();

  ModelArgs ev;
  std::string split = "validation";
  std::vector<std::string> subset;
  auto* cmd_eval = app.add_subcommand("evaluate", "Score a checkpoint on a split");
  cmd_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file or train output dir")
      ->required();
  cmd_eval->add_option("--bundle", ev.bundle, "Bundle directory")->required();
  cmd_eval->add_option("--split", split, "train, validation, test, or all")
      ->check(CLI::IsMember({"train", "validation", "val", "test", "all"}));
  cmd_eval->add_option("--subset", subset, "Comma-separated edge ids to score separately")
      ->delimiter(',');
  cmd_eval->add_option("--out", ev.out, "Metrics JSON file (default stdout)");

  ModelArgs pr;
  auto* cmd_pred = app.add_subcommand("predict", "Write one prediction per edge as CSV");
  cmd_pred->add_option("--checkpoint", pr.checkpoint, "Checkpoint file or train output dir")
      ->required();
  cmd_pred->add_option("--bundle", pr.bundle, "Bundle directory")->required();
  cmd_pred->add_option("--out", pr.out, "CSV file (default stdout)");

  ModelArgs in;
  std::string edge;
  std::string format = "table";
  auto* cmd_insp = app.add_subcommand("inspect", "Show the attention weights behind one edge");
  cmd_insp->add_option("--checkpoint", in.checkpoint, "Checkpoint file or train output dir")
      ->required();
  cmd_insp->add_option("--bundle", in.bundle, "Bundle directory")->required();
  cmd_insp->add_option("--edge", edge, "Edge id")->required();
  cmd_insp->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));
  cmd_insp->add_option("--out", in.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return 2;
  }

  setup_logging();
  try {
    if (*cmd_pre) run_preprocess(pre);
    if (*cmd_train) run_train(tr);
    if (*cmd_eval) run_evaluate(ev, split, subset);
    if (*cmd_pred) run_predict(pr);
    if (*cmd_insp) run_inspect(in, edge, format);
  } catch (const rfn::IoError& e) {
    emit_error("io", e.what());
    return 1;
  } catch (const rfn::GraphError& e) {
    emit_error("graph", e.what());
    return 1;
  } catch (const rfn::TrainingError& e) {
    emit_error("training", e.what());
    return 1;
  } catch (const rfn::EvaluationError& e) {
    emit_error("evaluation", e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error("invalid", e.what());
    return 1;
  }
  return 0;
}
