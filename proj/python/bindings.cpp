// Python module over the pipeline operations. Structured results cross the
// boundary as plain dicts and lists via the json module.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rfn/pipeline.hpp"

namespace py = pybind11;
using namespace rfn;

namespace {

py::object to_python(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_python(const py::handle& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

std::optional<Split> split_arg(const std::string& text) {
  if (text == "all") return std::nullopt;
  return parse_split(text);
}

struct PyTrainedRun {
  Checkpoint checkpoint;
  py::object history;
  std::size_t best_epoch = 0;
  double validation_metric = kNotRecorded;
};

}  // namespace

PYBIND11_MODULE(_rfn, m) {
  m.doc() = "Relational fusion networks for edge-level prediction on road networks.";

  py::register_exception<IoError>(m, "IoError", PyExc_RuntimeError);
  py::register_exception<GraphError>(m, "GraphError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<EvaluationError>(m, "EvaluationError", PyExc_RuntimeError);

  py::class_<Bundle>(m, "Bundle")
      .def_property_readonly("node_count", [](const Bundle& b) { return b.network.node_count(); })
      .def_property_readonly("edge_count", [](const Bundle& b) { return b.network.edge_count(); })
      .def_property_readonly("between_edge_count",
                             [](const Bundle& b) { return b.network.between_edge_count(); })
      .def_property_readonly("task", [](const Bundle& b) { return to_string(b.dataset.task); })
      .def_property_readonly("classes", [](const Bundle& b) { return b.dataset.classes; })
      .def_property_readonly("edge_ids",
                             [](const Bundle& b) {
                               std::vector<std::string> ids;
                               for (const Edge& e : b.network.edges()) ids.push_back(e.id);
                               return ids;
                             })
      .def("split_edges",
           [](const Bundle& b, const std::string& split) {
             std::vector<std::string> ids;
             for (EdgeId e : b.dataset.edges(parse_split(split))) ids.push_back(b.network.edges()[e].id);
             return ids;
           },
           py::arg("split"))
      .def("save", [](const Bundle& b, const std::filesystem::path& dir) { save_bundle(dir, b); },
           py::arg("directory"))
      .def_static("load", &load_bundle, py::arg("directory"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("kind", &Checkpoint::kind)
      .def_property_readonly("task", [](const Checkpoint& c) { return to_string(c.task); })
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(p, c); },
           py::arg("path"))
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("to_bytes", [](const Checkpoint& c) { return py::bytes(serialize_checkpoint(c)); })
      .def_static("from_bytes",
                  [](const py::bytes& b) { return deserialize_checkpoint(std::string(b)); },
                  py::arg("data"));

  py::class_<PyTrainedRun>(m, "TrainedRun")
      .def_readonly("checkpoint", &PyTrainedRun::checkpoint)
      .def_readonly("history", &PyTrainedRun::history)
      .def_readonly("best_epoch", &PyTrainedRun::best_epoch)
      .def_readonly("validation_metric", &PyTrainedRun::validation_metric);

  m.def(
      "preprocess",
      [](const std::filesystem::path& graph, std::optional<std::filesystem::path> observations,
         std::optional<std::filesystem::path> labels, std::optional<std::filesystem::path> overrides,
         std::optional<std::filesystem::path> split_file, double train_fraction,
         double validation_fraction, std::uint64_t seed, bool filter_peak, bool edge_node_features) {
        PreprocessOptions o;
        o.graph = graph;
        o.observations = std::move(observations);
        o.labels = std::move(labels);
        o.overrides = std::move(overrides);
        o.split_file = std::move(split_file);
        o.fractions = {train_fraction, validation_fraction};
        o.seed = seed;
        o.filter_peak = filter_peak;
        o.features.edge_node_features = edge_node_features;
        PreprocessReport r;
        Bundle b = preprocess(o, &r);
        py::dict report;
        report["derived_between_edges"] = r.derived_between_edges;
        report["missing_turn_attributes"] = r.missing_turn_attributes;
        report["records_read"] = r.records_read;
        report["records_dropped_peak"] = r.records_dropped_peak;
        return py::make_tuple(std::move(b), report);
      },
      py::arg("graph"), py::kw_only(), py::arg("observations") = py::none(),
      py::arg("labels") = py::none(), py::arg("overrides") = py::none(),
      py::arg("split_file") = py::none(), py::arg("train_fraction") = 0.5,
      py::arg("validation_fraction") = 0.25, py::arg("seed") = 0, py::arg("filter_peak") = false,
      py::arg("edge_node_features") = true,
      "Reads a graph document and observation or label CSVs into a bundle. Returns (bundle, report).");

  m.def(
      "train",
      [](const Bundle& bundle, const py::object& config, const py::object& on_epoch) {
        const RunConfig rc = config.is_none() ? RunConfig{} : run_config_from_json(from_python(config));
        EpochCallback cb;
        if (!on_epoch.is_none())
          cb = [&](const EpochRecord& e) {
            TrainResult one;
            one.history = {e};
            on_epoch(to_python(to_json(one)["history"][0]));
          };
        TrainedRun run = train_run(bundle, rc, cb);
        return PyTrainedRun{std::move(run.checkpoint), to_python(to_json(run.result)["history"]),
                            run.result.best_epoch, run.validation_metric};
      },
      py::arg("bundle"), py::arg("config") = py::none(), py::arg("on_epoch") = py::none(),
      "Trains the configured model. config takes the same keys as a run-config JSON file.");

  m.def(
      "evaluate",
      [](const Checkpoint& c, const Bundle& b, const std::string& split,
         std::optional<std::vector<std::string>> subset) {
        return to_python(to_json(evaluate(c, b, split_arg(split), subset)));
      },
      py::arg("checkpoint"), py::arg("bundle"), py::arg("split") = "validation",
      py::arg("subset") = py::none());

  m.def(
      "predict",
      [](const Checkpoint& c, const Bundle& b) {
        const nd::Matrix out = predict(c, b);
        py::array_t<double> arr({out.rows(), out.cols()});
        auto view = arr.mutable_unchecked<2>();
        for (std::size_t r = 0; r < out.rows(); ++r)
          for (std::size_t k = 0; k < out.cols(); ++k) view(r, k) = out(r, k);
        return arr;
      },
      py::arg("checkpoint"), py::arg("bundle"),
      "Per-edge outputs in edge order: speeds (|E| x 1) or class probabilities (|E| x C).");

  m.def(
      "inspect",
      [](const Checkpoint& c, const Bundle& b, const std::string& edge_id) {
        return to_python(to_json(inspect(c, b, edge_id), b.network));
      },
      py::arg("checkpoint"), py::arg("bundle"), py::arg("edge_id"));

  m.def("load_bundle", &load_bundle, py::arg("directory"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
}
