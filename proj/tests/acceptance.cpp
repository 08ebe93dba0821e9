// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <unistd.h>

#include "rfn/baselines.hpp"
#include "rfn/eval.hpp"
#include "rfn/features.hpp"
#include "rfn/io.hpp"
#include "rfn/pipeline.hpp"
#include "rfn/rfn.hpp"
#include "rfn/train.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace rfn;
using namespace rfn::testing;
using nd::Activation;
using nd::Matrix;
using nd::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

void randomize(const std::vector<Tensor>& params, Rng& rng, double scale) {
  for (Tensor t : params)
    for (double& v : t.mutable_value().values()) v = rng.uniform(-scale, scale);
}

LayerState random_state(const RoadNetwork& n, const RfnConfig& c, Rng& rng) {
  return {Tensor::constant(random_matrix(n.node_count(), c.node_input_dim, rng)),
          Tensor::constant(random_matrix(n.edge_count(), c.edge_input_dim, rng)),
          Tensor::constant(random_matrix(n.between_edge_count(), c.between_input_dim, rng))};
}

constexpr FusionKind kFusions[] = {FusionKind::additive, FusionKind::interactional};
constexpr AggregatorKind kAggregators[] = {AggregatorKind::attentional,
                                           AggregatorKind::non_attentional};

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

// Both losses on every variant, two layers with hidden width 8; the
// classification head has 4 classes.
Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const RoadNetwork n = random_network(8, 12, 1);
  const GraphContext g(n);
  std::vector<EdgeId> all(n.edge_count());
  for (EdgeId e = 0; e < all.size(); ++e) all[e] = e;
  const FeatureSet features = build_features(n, all);
  Rng rng(101);
  std::vector<std::vector<double>> records(n.edge_count());
  for (auto& r : records) r = {rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
  std::vector<std::size_t> targets(n.edge_count());
  for (auto& t : targets) t = rng.below(4);

  double worst = 0.0;
  std::size_t checked = 0, kinks = 0;
  for (FusionKind f : kFusions)
    for (AggregatorKind a : kAggregators)
      for (Task task : {Task::speed_regression, Task::limit_classification}) {
        const bool regression = task == Task::speed_regression;
        RfnConfig c = RfnConfig::for_task(task, f, a, 8, regression ? 1 : 4);
        const RfnModel m = RfnModel::create(c, 7);
        randomize(m.parameters(), rng, 0.5);
        std::vector<Tensor> params = m.parameters();
        const auto loss = [&] {
          const Tensor out = m.forward(g, features).edges;
          return regression ? amse_loss(out, records) : cross_entropy_loss(out, targets);
        };
        const nd::GradCheckResult r = nd::grad_check(loss, params, 1e-5);
        worst = std::max(worst, r.max_relative_error);
        checked += r.checked;
        kinks += r.skipped_kinks;
      }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && checked > 0 && secs < 120.0,
          fmt("max rel err %.2e over %zu entries (%zu kink-adjacent skipped), %.1fs", worst, checked,
              kinks, secs)};
}

Outcome attention_simplex() {
  Rng rng(202);
  double worst_sum = 0.0;
  bool positive = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.below(8);
    const std::size_t width = 1 + rng.below(12);
    AggregatorParams a = AggregatorParams::attentional(width, rng);
    randomize(a.parameters(), rng, 3.0);
    const Matrix w = attention_weights(a, Tensor::constant(random_matrix(m, width, rng))).value();
    double total = 0.0;
    for (double v : w.values()) {
      positive = positive && v > 0.0;
      total += v;
    }
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));
  }
  bool uniform = true;
  for (std::size_t m = 1; m <= 8; ++m) {
    AggregatorParams a = AggregatorParams::attentional(6, rng);
    a.coefficient_weight.mutable_value().fill(0.0);
    const Matrix w = attention_weights(a, Tensor::constant(random_matrix(m, 6, rng))).value();
    for (double v : w.values()) uniform = uniform && v == 1.0 / static_cast<double>(m);
  }
  return {positive && worst_sum <= 1e-9 && uniform,
          fmt("max |sum-1| %.1e, all positive %s, zero coefficients uniform %s", worst_sum,
              positive ? "yes" : "no", uniform ? "yes" : "no")};
}

Outcome dual_graph_oracle() {
  Rng rng(303);
  std::size_t mismatches = 0, pairs = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t nodes = 2 + rng.below(11);
    const RoadNetwork bare = random_digraph(nodes, 0.3, 3000 + seed, false);
    const RoadNetwork n = derive_between_edges(bare);
    std::vector<std::pair<EdgeId, EdgeId>> got;
    for (const BetweenEdge& b : n.between_edges()) got.emplace_back(b.first, b.second);
    auto want = brute_force_between_pairs(n);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    mismatches += got != want;
    pairs += want.size();
  }
  const RoadNetwork x = intersection_example();
  const GraphContext g(x);
  const bool fig = g.dual.node_count() == 6 && x.between_edge_count() == 12 &&
                   g.dual.edge_count() == 12;
  return {mismatches == 0 && fig,
          fmt("%zu/100 digraphs mismatched (%zu pairs), intersection %zu dual nodes / %zu between-edges",
              mismatches, pairs, g.dual.node_count(), x.between_edge_count())};
}

Outcome algorithm_equivalence() {
  Rng rng(404);
  double worst = 0.0;
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    const FusionKind f = kFusions[inst % 2];
    const AggregatorKind a = kAggregators[(inst / 2) % 2];
    const bool normalize = inst % 3 == 0;
    const RoadNetwork n = inst == 0 ? intersection_example() : random_digraph(5 + inst % 4, 0.35, 4000 + inst);
    const GraphContext g(n);

    FusionParams p = f == FusionKind::additive
                         ? FusionParams::additive(3, 3, 2, 4, Activation::elu(), rng)
                         : FusionParams::interactional(3, 3, 2, 4, Activation::elu(), rng);
    randomize(p.parameters(), rng, 0.5);
    AggregatorParams ag = a == AggregatorKind::attentional ? AggregatorParams::attentional(8, rng)
                                                           : AggregatorParams::non_attentional();
    randomize(ag.parameters(), rng, 0.5);
    const Matrix nodes = random_matrix(n.node_count(), 3, rng);
    const Matrix edges = random_matrix(n.edge_count(), 2, rng);
    const FusionResult primal = relational_fusion(g.primal_relations, Tensor::constant(nodes),
                                                  Tensor::constant(edges), p, ag, normalize);
    worst = std::max(worst, max_abs_diff(primal.values.value(),
                                         scalar_relational_fusion(
                                             brute_force_primal_relations(n), n.node_count(),
                                             to_rows(nodes), to_rows(edges), p, ag, normalize)
                                             .values));
    const Matrix edges3 = random_matrix(n.edge_count(), 3, rng);
    const Matrix between = random_matrix(n.between_edge_count(), 2, rng);
    const FusionResult dual = relational_fusion(g.dual_relations, Tensor::constant(edges3),
                                                Tensor::constant(between), p, ag, normalize);
    worst = std::max(worst, max_abs_diff(dual.values.value(),
                                         scalar_relational_fusion(
                                             brute_force_dual_relations(n), n.edge_count(),
                                             to_rows(edges3), to_rows(between), p, ag, normalize)
                                             .values));

    RfnConfig c = inst % 5 == 4
                      ? RfnConfig::for_task(Task::limit_classification, f, a, 4, 3)
                      : RfnConfig::for_task(Task::speed_regression, f, a, 4, 2);
    c.layers = 2 + inst % 2;
    c.node_input_dim = 3;
    c.edge_input_dim = 4;
    c.between_input_dim = 2;
    if (inst % 7 == 3) c.heads = Heads{true, true, true};
    const RfnModel m = RfnModel::create(c, inst);
    randomize(m.parameters(), rng, 0.3);
    const LayerState in = random_state(n, c, rng);
    const LayerState out = m.forward(g, in);
    const OracleState o = scalar_forward(m, n, to_rows(in.nodes.value()), to_rows(in.edges.value()),
                                         to_rows(in.between_edges.value()));
    worst = std::max({worst, max_abs_diff(out.edges.value(), o.edges),
                      max_abs_diff(out.nodes.value(), o.nodes),
                      max_abs_diff(out.between_edges.value(), o.between_edges)});
  }
  return {worst < 1e-10, fmt("max |batched - scalar| %.2e over 20 instances", worst)};
}

Outcome hand_values() {
  const std::vector<std::vector<double>> one = {{10, 20}};
  const double amse = amse_loss(Tensor::constant(Matrix{{15}}), one).item();

  const std::vector<int> classes = {1, 2};
  const std::vector<int> truth = {1, 1, 2, 2};
  const std::vector<int> pred = {1, 2, 2, 2};
  const double f1 = macro_f1(pred, truth, classes);

  Dataset d;
  d.entries.push_back({0, Split::test, std::vector<double>(10, 50.0), 0});
  d.entries.push_back({1, Split::test, std::vector<double>(9, 10.0), 0});
  const std::vector<double> speeds = {52.0, 100.0};
  const std::vector<std::size_t> both = {0, 1};
  const double mae = mae_segments(speeds, d, both);

  return {amse == 25.0 && std::abs(f1 - 0.7333) <= 1e-4 && mae == 2.0,
          fmt("AMSE %.17g, macro F1 %.6f, MAE with a 9-record segment %.3g", amse, f1, mae)};
}

Outcome receptive_field() {
  Rng rng(606);
  double worst = 0.0;
  std::size_t probes = 0;
  for (std::size_t layers : {std::size_t{1}, std::size_t{2}})
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const RoadNetwork n = random_network(14, 22, 600 + seed);
      const GraphContext g(n);
      for (FusionKind f : kFusions)
        for (AggregatorKind a : kAggregators) {
          RfnConfig c = RfnConfig::for_task(Task::speed_regression, f, a, 4, 2);
          c.layers = layers;
          c.node_input_dim = 3;
          c.edge_input_dim = 4;
          c.between_input_dim = 2;
          const RfnModel m = RfnModel::create(c, seed);
          randomize(m.parameters(), rng, 0.4);
          const LayerState in = random_state(n, c, rng);
          const Matrix full = m.forward(g, in).edges.value();
          for (EdgeId e = 0; e < n.edge_count(); e += 2) {
            const std::vector<int> d = dual_distances(n, e);
            const auto far = [&](EdgeId x) { return d[x] < 0 || d[x] > static_cast<int>(layers); };
            Matrix xv = in.nodes.value(), xe = in.edges.value(), xb = in.between_edges.value();
            for (EdgeId x = 0; x < n.edge_count(); ++x)
              if (far(x)) std::fill(xe.row(x).begin(), xe.row(x).end(), 0.0);
            for (NodeId v = 0; v < n.node_count(); ++v) {
              const Adjacency& adj = n.node_adjacency(v);
              if (std::all_of(adj.in.begin(), adj.in.end(), far) &&
                  std::all_of(adj.out.begin(), adj.out.end(), far))
                std::fill(xv.row(v).begin(), xv.row(v).end(), 0.0);
            }
            for (BetweenEdgeId b = 0; b < n.between_edge_count(); ++b) {
              const BetweenEdge& be = n.between_edges()[b];
              if (far(be.first) && far(be.second)) std::fill(xb.row(b).begin(), xb.row(b).end(), 0.0);
            }
            const Matrix masked =
                m.forward(g, LayerState{Tensor::constant(xv), Tensor::constant(xe), Tensor::constant(xb)})
                    .edges.value();
            for (std::size_t col = 0; col < full.cols(); ++col)
              worst = std::max(worst, std::abs(masked(e, col) - full(e, col)));
            ++probes;
          }
        }
    }
  return {worst <= 1e-12, fmt("max change %.2e over %zu masked edges, K in {1,2}", worst, probes)};
}

Outcome synthetic_end_to_end() {
  const auto t0 = Clock::now();
  int passing = 0;
  std::string per_seed;
  double worst_grouping = INFINITY;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TwoRegion tr = two_region_network(seed);
    const GraphContext g(tr.network);
    const FeatureSet fs = build_features(g.network, tr.dataset.edges(Split::train));
    const RfnConfig cfg = RfnConfig::for_task(Task::speed_regression, FusionKind::interactional,
                                              AggregatorKind::attentional, 32, 1);
    RfnModel model = RfnModel::create(cfg, seed);
    TrainConfig tc;
    tc.epochs = 200;
    tc.seed = seed;
    tc.adam.learning_rate = 0.01;
    train_regression(model, g, fs, tr.dataset, tc);
    const std::vector<std::size_t> test = tr.dataset.indices(Split::test);
    const double mae = mae_segments(edge_values(model.predict_edges(g, fs).value()), tr.dataset, test);
    const GroupingTable table = grouping_fit(g.network, tr.dataset, tr.dataset.indices(Split::train));
    const double grouping = mae_segments(grouping_predict_all(table, g.network), tr.dataset, test);
    worst_grouping = std::min(worst_grouping, grouping);
    passing += mae < 5.0 && mae < grouping;
    per_seed += fmt(" %.2f/%.1f", mae, grouping);
  }
  const double secs = seconds_since(t0);
  return {passing >= 8 && secs < 180.0,
          fmt("%d/10 seeds under 5 km/h and below grouping (min grouping %.1f), %.1fs; rfn/grouping MAE:%s",
              passing, worst_grouping, secs, per_seed.c_str())};
}

Outcome oversampling_balance() {
  std::vector<int> labels(1000, 30);
  labels.insert(labels.end(), 37, 50);
  labels.insert(labels.end(), 5, 80);
  Rng rng(808);
  std::map<int, std::size_t> h;
  for (std::size_t i : oversample(labels, rng)) ++h[labels[i]];
  const bool ok = h == std::map<int, std::size_t>{{30, 1000}, {50, 1000}, {80, 1000}};
  return {ok, fmt("histogram {30: %zu, 50: %zu, 80: %zu}", h[30], h[50], h[80])};
}

Outcome normalization() {
  Rng rng(909);
  double worst_norm = 0.0, worst_sum = 0.0;
  std::size_t rows = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const RoadNetwork n = random_digraph(10, 0.3, 900 + seed);
    const GraphContext g(n);
    for (FusionKind f : kFusions)
      for (AggregatorKind a : kAggregators) {
        RfnConfig c = RfnConfig::for_task(Task::limit_classification, f, a, 8, 4);
        c.layers = 3;
        c.normalization = NormalizationPlacement::all_layers;
        c.node_input_dim = 3;
        c.edge_input_dim = 4;
        c.between_input_dim = 2;
        const RfnModel m = RfnModel::create(c, seed);
        randomize(m.parameters(), rng, 0.5);
        ForwardTrace trace;
        const LayerState out = m.forward(g, random_state(n, c, rng), &trace);
        for (std::size_t k = 0; k < trace.layers.size(); ++k) {
          const RfnLayerParams& layer = m.layers()[k];
          if (!layer.normalize) continue;
          const auto check = [&](const Tensor& t) {
            for (std::size_t r = 0; r < t.rows(); ++r) {
              double sq = 0.0;
              for (double v : t.value().row(r)) sq += v * v;
              if (sq == 0.0) continue;
              worst_norm = std::max(worst_norm, std::abs(std::sqrt(sq) - 1.0));
              ++rows;
            }
          };
          if (layer.node_fusion) check(trace.layers[k].nodes);
          if (layer.edge_fusion) check(trace.layers[k].edges);
        }
        const Matrix probs = out.edges.value();
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          double total = 0.0;
          for (double v : probs.row(r)) total += v;
          worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        }
      }
  }
  return {rows > 0 && worst_norm <= 1e-9 && worst_sum <= 1e-9,
          fmt("max |norm-1| %.1e over %zu rows, max |row sum-1| %.1e", worst_norm, rows, worst_sum)};
}

Outcome determinism_and_persistence() {
  TwoRegion tr = two_region_network(10);
  Bundle b;
  b.features = build_features(tr.network, tr.dataset.edges(Split::train), b.feature_config);
  b.network = std::move(tr.network);
  b.dataset = std::move(tr.dataset);
  RunConfig cfg;
  cfg.epochs = 15;
  cfg.seed = 3;

  const TrainedRun first = train_run(b, cfg);
  const TrainedRun second = train_run(b, cfg);
  bool history = first.result.history.size() == second.result.history.size();
  for (std::size_t i = 0; history && i < first.result.history.size(); ++i) {
    const EpochRecord& x = first.result.history[i];
    const EpochRecord& y = second.result.history[i];
    history = same_bits(x.train_loss, y.train_loss) && same_bits(x.train_mae, y.train_mae) &&
              same_bits(x.validation_mae, y.validation_mae) &&
              same_bits(x.validation_f1, y.validation_f1);
  }
  const bool checkpoints = serialize_checkpoint(first.checkpoint) == serialize_checkpoint(second.checkpoint);

  const auto path = std::filesystem::temp_directory_path() /
                    ("rfn_acceptance_" + std::to_string(::getpid()) + ".ckpt");
  save_checkpoint(path, first.checkpoint);
  const Checkpoint loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  bool metrics = true;
  for (std::optional<Split> split : {std::optional<Split>(Split::train), std::optional<Split>(Split::validation),
                                     std::optional<Split>(Split::test), std::optional<Split>()}) {
    const Metrics m1 = evaluate(first.checkpoint, b, split);
    const Metrics m2 = evaluate(loaded, b, split);
    metrics = metrics && same_bits(m1.value, m2.value) && m1.scored == m2.scored;
  }
  return {history && checkpoints && metrics,
          fmt("history identical %s, checkpoint bytes identical %s, reloaded metrics identical %s",
              history ? "yes" : "no", checkpoints ? "yes" : "no", metrics ? "yes" : "no")};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"gradient correctness", gradient_correctness},
      {"attention simplex", attention_simplex},
      {"dual graph oracle", dual_graph_oracle},
      {"batched vs scalar equivalence", algorithm_equivalence},
      {"loss and metric hand values", hand_values},
      {"receptive field", receptive_field},
      {"two-region end to end", synthetic_end_to_end},
      {"oversampling balance", oversampling_balance},
      {"normalization", normalization},
      {"determinism and persistence", determinism_and_persistence},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2zu %-30s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
