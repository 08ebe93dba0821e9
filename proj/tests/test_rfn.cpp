#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

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

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

void randomize(const std::vector<Tensor>& params, Rng& rng, double scale = 0.5) {
  for (Tensor t : params)
    for (double& v : t.mutable_value().values()) v = rng.uniform(-scale, scale);
}

Tensor row(std::initializer_list<double> v) { return Tensor::constant(Matrix{v}); }

std::vector<double> as_vector(const Tensor& t) {
  return {t.value().values().begin(), t.value().values().end()};
}

// Elements, neighbors and relations of an index, in the oracle's layout.
std::vector<OracleRelation> oracle_relations(const RelationIndex& index) {
  std::vector<OracleRelation> out;
  for (std::size_t i = 0; i < index.size(); ++i)
    out.push_back({index.element[i], index.neighbor[i], index.relation[i]});
  return out;
}

LayerState random_state(const RoadNetwork& n, const RfnConfig& c, Rng& rng) {
  return {Tensor::constant(random_matrix(n.node_count(), c.node_input_dim, rng)),
          Tensor::constant(random_matrix(n.edge_count(), c.edge_input_dim, rng)),
          Tensor::constant(random_matrix(n.between_edge_count(), c.between_input_dim, rng))};
}

RfnConfig small_config(FusionKind f, AggregatorKind a, std::size_t layers) {
  RfnConfig c = RfnConfig::for_task(Task::speed_regression, f, a, 4, 2);
  c.layers = layers;
  c.node_input_dim = 3;
  c.edge_input_dim = 4;
  c.between_input_dim = 2;
  return c;
}

constexpr FusionKind kFusions[] = {FusionKind::additive, FusionKind::interactional};
constexpr AggregatorKind kAggregators[] = {AggregatorKind::attentional,
                                           AggregatorKind::non_attentional};

}  // namespace

TEST_SUITE("rfn") {

TEST_CASE("additive fusion hand cases") {
  Rng rng(1);
  FusionParams p = FusionParams::additive(2, 2, 1, 2, Activation::identity(), rng);
  for (Tensor t : p.parameters()) t.mutable_value().fill(0.0);
  const Tensor s = row({1, 2}), t = row({3, 4}), r = row({5});
  CHECK(fuse_additive(p, s, t, r).value() == Matrix{{0, 0}});
  p.source_weight.mutable_value() = Matrix::identity(2);
  CHECK(fuse_additive(p, s, t, r).value() == Matrix{{1, 2}});
  CHECK_THROWS_AS(fuse_additive(p, row({1}), t, r), nd::ShapeError);
}

TEST_CASE("additive fusion matches the scalar oracle and the stacked form") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    FusionParams p = FusionParams::additive(3, 3, 2, 2, Activation::elu(), rng);
    randomize(p.parameters(), rng);
    const Tensor s = Tensor::constant(random_matrix(1, 3, rng));
    const Tensor t = Tensor::constant(random_matrix(1, 3, rng));
    const Tensor r = Tensor::constant(random_matrix(1, 2, rng));
    const Matrix got = fuse_additive(p, s, t, r).value();
    CHECK(max_abs_diff(got, {scalar_fuse(p, as_vector(s), as_vector(t), as_vector(r))}) < 1e-12);

    Matrix stacked(8, 2);
    for (std::size_t o = 0; o < 2; ++o) {
      for (std::size_t i = 0; i < 3; ++i) stacked(i, o) = p.source_weight.value()(i, o);
      for (std::size_t i = 0; i < 3; ++i) stacked(3 + i, o) = p.target_weight.value()(i, o);
      for (std::size_t i = 0; i < 2; ++i) stacked(6 + i, o) = p.relation_weight.value()(i, o);
    }
    const Tensor compact = nd::elu(nd::add_row(
        nd::matmul(nd::concat_cols({s, t, r}), Tensor::constant(stacked)), p.bias));
    CHECK(max_abs_diff(got, to_rows(compact.value())) < 1e-12);
  }
}

TEST_CASE("interactional fusion hand cases") {
  Rng rng(3);
  for (Activation act : {Activation::relu(), Activation::elu(), Activation::identity()}) {
    FusionParams p = FusionParams::interactional(1, 1, 1, 2, act, rng);
    randomize(p.parameters(), rng);
    p.interaction_weight.mutable_value().fill(0.0);
    CHECK(fuse_interactional(p, row({1}), row({2}), row({3})).value() == p.bias.value());
  }
  FusionParams q = FusionParams::interactional(1, 1, 0, 1, Activation::identity(), rng);
  q.interaction_weight.mutable_value() = Matrix::identity(2);
  q.output_weight.mutable_value() = Matrix{{1}, {1}};
  q.bias.mutable_value().fill(0.0);
  CHECK(fuse_interactional(q, row({1}), row({2}), Tensor::constant(Matrix(1, 0))).item() == 5.0);
}

TEST_CASE("interactional fusion matches the scalar oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    FusionParams p = FusionParams::interactional(2, 2, 2, 3, Activation::elu(), rng);
    randomize(p.parameters(), rng);
    const Tensor s = Tensor::constant(random_matrix(1, 2, rng));
    const Tensor t = Tensor::constant(random_matrix(1, 2, rng));
    const Tensor r = Tensor::constant(random_matrix(1, 2, rng));
    CHECK(max_abs_diff(fuse_interactional(p, s, t, r).value(),
                       {scalar_fuse(p, as_vector(s), as_vector(t), as_vector(r))}) < 1e-12);
  }
}

TEST_CASE("attention weight hand cases") {
  Rng rng(5);
  AggregatorParams a = AggregatorParams::attentional(1, rng);
  CHECK(attention_weights(a, Tensor::constant(Matrix{{0.7}})).item() == doctest::Approx(1.0));

  a.coefficient_weight.mutable_value() = Matrix{{1.0}};
  const Matrix w = attention_weights(a, Tensor::constant(Matrix{{0.0}, {std::log(3.0)}})).value();
  CHECK(w(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(w(1, 0) == doctest::Approx(0.75).epsilon(1e-12));

  AggregatorParams z = AggregatorParams::attentional(4, rng);
  z.coefficient_weight.mutable_value().fill(0.0);
  const Matrix uniform = attention_weights(z, Tensor::constant(random_matrix(5, 4, rng))).value();
  for (double v : uniform.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("aggregate hand cases") {
  const std::vector<std::size_t> one = {0};
  const std::vector<std::size_t> two = {0, 0};
  const AggregatorParams mean = AggregatorParams::non_attentional();
  CHECK(aggregate(mean, row({4, 5}), row({1}), one, 1).values.value() == Matrix{{4, 5}});
  CHECK(aggregate(mean, Tensor::constant(Matrix{{1, 0}, {0, 1}}), Tensor::constant(Matrix(2, 1)),
                  two, 1)
            .values.value() == Matrix{{0.5, 0.5}});

  Rng rng(6);
  AggregatorParams att = AggregatorParams::attentional(1, rng);
  att.coefficient_weight.mutable_value() = Matrix{{1.0}};
  const Aggregate agg = aggregate(att, Tensor::constant(Matrix{{4, 0}, {0, 4}}),
                                  Tensor::constant(Matrix{{0.0}, {std::log(3.0)}}), two, 1);
  CHECK(agg.values.value()(0, 0) == doctest::Approx(1.0));
  CHECK(agg.values.value()(0, 1) == doctest::Approx(3.0));
  CHECK(aggregate(att, row({1}), row({1}), one, 1).values.value() == Matrix{{1}});
}

TEST_CASE("attention over random neighborhoods lies on the simplex") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(8);
    AggregatorParams a = AggregatorParams::attentional(5, rng);
    randomize(a.parameters(), rng, 3.0);
    const Matrix w = attention_weights(a, Tensor::constant(random_matrix(m, 5, rng))).value();
    double total = 0.0;
    for (double v : w.values()) {
      CHECK(v > 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("aggregation is invariant to neighbor order") {
  Rng rng(8);
  for (AggregatorKind kind : kAggregators) {
    AggregatorParams a = kind == AggregatorKind::attentional ? AggregatorParams::attentional(3, rng)
                                                             : AggregatorParams::non_attentional();
    randomize(a.parameters(), rng);
    const Matrix fused = random_matrix(6, 2, rng);
    const Matrix rel = random_matrix(6, 3, rng);
    const std::vector<std::size_t> seg(6, 0);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[1], perm[4]);
    Matrix pf(6, 2), pr(6, 3);
    for (std::size_t i = 0; i < 6; ++i) {
      std::copy_n(fused.row(perm[i]).begin(), 2, pf.row(i).begin());
      std::copy_n(rel.row(perm[i]).begin(), 3, pr.row(i).begin());
    }
    const Matrix x = aggregate(a, Tensor::constant(fused), Tensor::constant(rel), seg, 1).values.value();
    const Matrix y = aggregate(a, Tensor::constant(pf), Tensor::constant(pr), seg, 1).values.value();
    CHECK(max_abs_diff(x, to_rows(y)) < 1e-12);
  }
}

TEST_CASE("relational fusion on a single edge returns the projected source") {
  std::vector<NodeRecord> nodes = {{"A", Zone::none, std::nullopt, std::nullopt},
                                   {"B", Zone::none, std::nullopt, std::nullopt}};
  std::vector<EdgeRecord> edges = {{"AB", "A", "B", 1, 5.0, {}}};
  const RoadNetwork n = build_road_network(nodes, edges);
  Rng rng(9);
  FusionParams p = FusionParams::additive(2, 2, 1, 2, Activation::identity(), rng);
  for (Tensor t : p.parameters()) t.mutable_value().fill(0.0);
  p.source_weight.mutable_value() = Matrix::identity(2);
  const Tensor h = Tensor::constant(Matrix{{1, 2}, {3, 4}});
  const FusionResult r = relational_fusion(RelationIndex::primal(n), h, row({7}), p,
                                           AggregatorParams::non_attentional(), false);
  CHECK(r.values.value() == Matrix{{1, 2}, {3, 4}});
}

TEST_CASE("isolated elements receive zero rows") {
  std::vector<NodeRecord> nodes = {{"A", Zone::none, std::nullopt, std::nullopt},
                                   {"B", Zone::none, std::nullopt, std::nullopt},
                                   {"Z", Zone::none, std::nullopt, std::nullopt}};
  std::vector<EdgeRecord> edges = {{"AB", "A", "B", 1, 5.0, {}}};
  const RoadNetwork n = build_road_network(nodes, edges);
  Rng rng(10);
  for (FusionKind f : kFusions)
    for (AggregatorKind a : kAggregators)
      for (bool normalize : {false, true}) {
        FusionParams p = f == FusionKind::additive
                             ? FusionParams::additive(2, 2, 1, 3, Activation::elu(), rng)
                             : FusionParams::interactional(2, 2, 1, 3, Activation::elu(), rng);
        randomize(p.parameters(), rng);
        AggregatorParams ag = a == AggregatorKind::attentional ? AggregatorParams::attentional(5, rng)
                                                               : AggregatorParams::non_attentional();
        const FusionResult r = relational_fusion(RelationIndex::primal(n),
                                                 Tensor::constant(random_matrix(3, 2, rng)),
                                                 row({0.5}), p, ag, normalize);
        for (double v : r.values.value().row(2)) CHECK(v == 0.0);
      }
}

TEST_CASE("relational fusion matches the per-element oracle on both views") {
  Rng rng(11);
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const RoadNetwork n = random_digraph(6, 0.4, 500 + seed);
    const GraphContext g(n);
    for (FusionKind f : kFusions)
      for (AggregatorKind a : kAggregators) {
        const bool normalize = seed % 2 == 0;
        FusionParams p = f == FusionKind::additive
                             ? FusionParams::additive(3, 3, 2, 4, Activation::elu(), rng)
                             : FusionParams::interactional(3, 3, 2, 4, Activation::elu(), rng);
        randomize(p.parameters(), rng);
        AggregatorParams ag = a == AggregatorKind::attentional ? AggregatorParams::attentional(8, rng)
                                                               : AggregatorParams::non_attentional();
        randomize(ag.parameters(), rng);

        const Matrix nodes = random_matrix(n.node_count(), 3, rng);
        const Matrix edges2 = random_matrix(n.edge_count(), 2, rng);
        const FusionResult primal = relational_fusion(g.primal_relations, Tensor::constant(nodes),
                                                      Tensor::constant(edges2), p, ag, normalize);
        const OracleFusion op =
            scalar_relational_fusion(brute_force_primal_relations(n), n.node_count(), to_rows(nodes),
                                     to_rows(edges2), p, ag, normalize);
        CHECK(max_abs_diff(primal.values.value(), op.values) < 1e-10);

        const Matrix edges3 = random_matrix(n.edge_count(), 3, rng);
        const Matrix between = random_matrix(n.between_edge_count(), 2, rng);
        const FusionResult dual = relational_fusion(g.dual_relations, Tensor::constant(edges3),
                                                    Tensor::constant(between), p, ag, normalize);
        const OracleFusion od = scalar_relational_fusion(
            brute_force_dual_relations(n), n.edge_count(), to_rows(edges3), to_rows(between), p, ag,
            normalize);
        CHECK(max_abs_diff(dual.values.value(), od.values) < 1e-10);

        if (a == AggregatorKind::attentional) {
          // Same relation multiset, possibly in another order.
          const auto lib = oracle_relations(g.dual_relations);
          const auto ref = brute_force_dual_relations(n);
          REQUIRE(lib.size() == ref.size());
          for (std::size_t i = 0; i < lib.size(); ++i) {
            const auto it = std::find_if(ref.begin(), ref.end(), [&](const OracleRelation& o) {
              return o.element == lib[i].element && o.neighbor == lib[i].neighbor &&
                     o.relation == lib[i].relation;
            });
            REQUIRE(it != ref.end());
            CHECK(std::abs(dual.attention.value()(i, 0) - od.weights[it - ref.begin()]) < 1e-10);
          }
        }
      }
  }
}

TEST_CASE("normalized fusion rows have unit norm") {
  Rng rng(12);
  const RoadNetwork n = random_digraph(10, 0.3, 12);
  const GraphContext g(n);
  FusionParams p = FusionParams::interactional(3, 3, 2, 5, Activation::elu(), rng);
  randomize(p.parameters(), rng);
  const FusionResult r =
      relational_fusion(g.primal_relations, Tensor::constant(random_matrix(n.node_count(), 3, rng)),
                        Tensor::constant(random_matrix(n.edge_count(), 2, rng)), p,
                        AggregatorParams::attentional(8, rng), true);
  for (std::size_t i = 0; i < r.values.rows(); ++i) {
    double sq = 0.0;
    for (double v : r.values.value().row(i)) sq += v * v;
    if (sq > 0.0) CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
  }
}

TEST_CASE("join") {
  const RoadNetwork n = intersection_example();
  const GraphContext g(n);
  const Tensor nodes = Tensor::constant(Matrix::identity(4));
  const Tensor none = Tensor::constant(Matrix(n.between_edge_count(), 0));
  const Matrix j = join(nodes, none, g.shared_nodes).value();
  CHECK(j.cols() == 4);
  const NodeId b = *n.find_node("B");
  std::size_t through_b = 0;
  for (BetweenEdgeId i = 0; i < n.between_edge_count(); ++i) {
    const BetweenEdge& be = n.between_edges()[i];
    const bool via_b = n.edges()[be.first].target == b;
    CHECK(j(i, b) == (via_b ? 1.0 : 0.0));
    through_b += via_b;
  }
  CHECK(through_b == 9);

  Rng rng(13);
  const Matrix hb = random_matrix(n.between_edge_count(), 3, rng);
  CHECK(join(Tensor::constant(Matrix(4, 0)), Tensor::constant(hb), g.shared_nodes).value() == hb);
}

TEST_CASE("single-layer model on one edge has the declared shape") {
  std::vector<NodeRecord> nodes = {{"A", Zone::none, std::nullopt, std::nullopt},
                                   {"B", Zone::none, std::nullopt, std::nullopt}};
  std::vector<EdgeRecord> edges = {{"AB", "A", "B", 1, 5.0, {}}};
  const GraphContext g(derive_between_edges(build_road_network(nodes, edges)));
  RfnConfig c = small_config(FusionKind::additive, AggregatorKind::attentional, 1);
  c.output_dim = 3;
  const RfnModel m = RfnModel::create(c, 1);
  CHECK_FALSE(m.layers()[0].node_fusion.has_value());
  CHECK_FALSE(m.layers()[0].between.has_value());
  Rng rng(14);
  const LayerState in = random_state(g.network, c, rng);
  const LayerState out = m.forward(g, in);
  CHECK(out.edges.rows() == 1);
  CHECK(out.edges.cols() == 3);
  CHECK(out.nodes.value() == in.nodes.value());
  CHECK(out.between_edges.value() == in.between_edges.value());
}

TEST_CASE("forward propagation matches the layer-by-layer oracle") {
  Rng rng(15);
  for (FusionKind f : kFusions)
    for (AggregatorKind a : kAggregators)
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const RoadNetwork n = seed == 0 ? intersection_example() : random_digraph(7, 0.35, seed);
        const GraphContext g(n);
        RfnConfig c = small_config(f, a, 2);
        if (seed == 2) {
          c = RfnConfig::for_task(Task::limit_classification, f, a, 4, 3);
          c.node_input_dim = 3;
          c.edge_input_dim = 4;
          c.between_input_dim = 2;
          c.heads = Heads{true, true, true};
        }
        const RfnModel m = RfnModel::create(c, seed);
        randomize(m.parameters(), rng, 0.3);
        const LayerState in = random_state(n, c, rng);
        const LayerState out = m.forward(g, in);
        const OracleState o = scalar_forward(m, n, to_rows(in.nodes.value()),
                                             to_rows(in.edges.value()),
                                             to_rows(in.between_edges.value()));
        CHECK(max_abs_diff(out.edges.value(), o.edges) < 1e-10);
        CHECK(max_abs_diff(out.nodes.value(), o.nodes) < 1e-10);
        CHECK(max_abs_diff(out.between_edges.value(), o.between_edges) < 1e-10);
      }
}

TEST_CASE("classification heads emit probability rows") {
  const RoadNetwork n = random_digraph(9, 0.3, 16);
  const GraphContext g(n);
  RfnConfig c = RfnConfig::for_task(Task::limit_classification, FusionKind::interactional,
                                    AggregatorKind::attentional, 8, 4);
  c.node_input_dim = 3;
  c.edge_input_dim = 4;
  c.between_input_dim = 2;
  const RfnModel m = RfnModel::create(c, 2);
  Rng rng(16);
  const Matrix out = m.forward(g, random_state(n, c, rng)).edges.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double total = 0.0;
    for (double v : out.row(r)) total += v;
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("edge outputs only see elements within K dual hops") {
  Rng rng(17);
  for (std::size_t layers : {std::size_t{1}, std::size_t{2}}) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const RoadNetwork n = random_network(14, 22, 100 + seed);
      const GraphContext g(n);
      for (FusionKind f : kFusions)
        for (AggregatorKind a : kAggregators) {
          RfnConfig c = small_config(f, a, layers);
          const RfnModel m = RfnModel::create(c, seed);
          randomize(m.parameters(), rng, 0.4);
          const LayerState in = random_state(n, c, rng);
          const Matrix full = m.forward(g, in).edges.value();
          for (EdgeId e = 0; e < n.edge_count(); e += 3) {
            const std::vector<int> d = dual_distances(n, e);
            const auto far = [&](EdgeId x) { return d[x] < 0 || d[x] > static_cast<int>(layers); };
            Matrix xv = in.nodes.value(), xe = in.edges.value(), xb = in.between_edges.value();
            for (EdgeId x = 0; x < n.edge_count(); ++x)
              if (far(x)) std::fill(xe.row(x).begin(), xe.row(x).end(), 0.0);
            for (NodeId v = 0; v < n.node_count(); ++v) {
              const Adjacency& adj = n.node_adjacency(v);
              const bool all_far = std::all_of(adj.in.begin(), adj.in.end(), far) &&
                                   std::all_of(adj.out.begin(), adj.out.end(), far);
              if (all_far) std::fill(xv.row(v).begin(), xv.row(v).end(), 0.0);
            }
            for (BetweenEdgeId b = 0; b < n.between_edge_count(); ++b) {
              const BetweenEdge& be = n.between_edges()[b];
              if (far(be.first) && far(be.second)) std::fill(xb.row(b).begin(), xb.row(b).end(), 0.0);
            }
            const Matrix masked = m.forward(g, LayerState{Tensor::constant(xv), Tensor::constant(xe),
                                                          Tensor::constant(xb)})
                                      .edges.value();
            for (std::size_t col = 0; col < full.cols(); ++col)
              CHECK(std::abs(masked(e, col) - full(e, col)) <= 1e-12);
          }
        }
    }
  }
}

TEST_CASE("a full two-layer forward pass is differentiable end to end") {
  const RoadNetwork n = random_network(8, 12, 3);
  const GraphContext g(n);
  Rng rng(18);
  for (FusionKind f : kFusions)
    for (AggregatorKind a : kAggregators) {
      RfnConfig c = small_config(f, a, 2);
      c.output_dim = 1;
      const RfnModel m = RfnModel::create(c, 4);
      randomize(m.parameters(), rng, 0.5);
      const LayerState in = random_state(n, c, rng);
      std::vector<std::vector<double>> records(n.edge_count());
      for (auto& r : records) r = {rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
      std::vector<Tensor> params = m.parameters();
      const nd::GradCheckResult res =
          nd::grad_check([&] { return amse_loss(m.forward(g, in).edges, records); }, params);
      CHECK(res.checked > 0);
      CHECK(res.max_relative_error < 1e-4);
    }
}

TEST_CASE("invalid configurations are rejected") {
  RfnConfig c;
  c.layers = 0;
  CHECK_THROWS_AS(RfnModel::create(c, 0), std::invalid_argument);
  c = RfnConfig{};
  c.heads = Heads{false, false, false};
  CHECK_THROWS_AS(RfnModel::create(c, 0), std::invalid_argument);
  c = RfnConfig{};
  const RfnModel m = RfnModel::create(c, 0);
  const GraphContext g(intersection_example());
  Rng rng(19);
  CHECK_THROWS_AS(m.forward(g, random_state(g.network, small_config(FusionKind::additive,
                                                                    AggregatorKind::attentional, 2),
                                            rng)),
                  nd::ShapeError);
}

}  // TEST_SUITE
