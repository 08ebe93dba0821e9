#include <doctest.h>

#include <cmath>
#include <numeric>

#include "rfn/ndiff.hpp"

using namespace rfn;
using namespace rfn::nd;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

// Values bounded away from zero so probes never cross a kink.
Matrix away_from_zero(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.2, 1.0);
  return m;
}

}  // namespace

TEST_SUITE("ndiff") {

TEST_CASE("matmul by the identity returns the operand") {
  Rng rng(1);
  const Tensor x = Tensor::constant(random_matrix(2, 3, rng));
  CHECK(matmul(Tensor::constant(Matrix::identity(2)), x).value() == x.value());
}

TEST_CASE("concatenation and Hadamard product") {
  const Tensor a = Tensor::constant(Matrix{{1, 2}});
  const Tensor b = Tensor::constant(Matrix{{3}});
  CHECK(concat_cols({a, b}).value() == Matrix{{1, 2, 3}});
  const Tensor p = mul(Tensor::constant(Matrix{{1, 2}, {3, 4}}), Tensor::constant(Matrix{{2, 0}, {1, 1}}));
  CHECK(p.value() == Matrix{{2, 0}, {3, 4}});
}

TEST_CASE("shape mismatches are rejected") {
  const Tensor a = Tensor::constant(Matrix(2, 3));
  const Tensor b = Tensor::constant(Matrix(2, 3));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, Tensor::constant(Matrix(3, 2))), ShapeError);
  CHECK_THROWS_AS(concat_cols({a, Tensor::constant(Matrix(1, 1))}), ShapeError);
  CHECK_THROWS_AS(backward(a), ShapeError);
}

TEST_CASE("elementwise activations") {
  const Tensor x = Tensor::constant(Matrix{{-3, 2, -10}});
  CHECK(relu(x).value() == Matrix{{0, 2, 0}});
  CHECK(leaky_relu(x, 0.2).value()(0, 2) == doctest::Approx(-2.0));
  CHECK(elu(x).value()(0, 0) == doctest::Approx(std::exp(-3.0) - 1.0));
  CHECK(elu(x).value()(0, 1) == 2.0);
}

TEST_CASE("softmax rows have the closed form and sum to one") {
  const Tensor s = softmax_rows(Tensor::constant(Matrix{{0.0, std::log(3.0)}}));
  CHECK(s.value()(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(s.value()(0, 1) == doctest::Approx(0.75).epsilon(1e-14));

  Rng rng(7);
  const Tensor big = softmax_rows(Tensor::constant(random_matrix(50, 6, rng, -500.0, 500.0)));
  for (std::size_t r = 0; r < 50; ++r) {
    double total = 0.0;
    for (double v : big.value().row(r)) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
  const Tensor moderate = softmax_rows(Tensor::constant(random_matrix(20, 4, rng, -5.0, 5.0)));
  for (double v : moderate.value().values()) CHECK(v > 0.0);
}

TEST_CASE("L2 row normalization") {
  const Tensor n = l2_normalize_rows(Tensor::constant(Matrix{{3, 4}, {0, 0}}));
  CHECK(n.value()(0, 0) == doctest::Approx(0.6));
  CHECK(n.value()(0, 1) == doctest::Approx(0.8));
  CHECK(n.value()(1, 0) == 0.0);
  CHECK(n.value()(1, 1) == 0.0);

  Rng rng(3);
  const Tensor r = l2_normalize_rows(Tensor::constant(random_matrix(30, 7, rng)));
  for (std::size_t i = 0; i < 30; ++i) {
    double sq = 0.0;
    for (double v : r.value().row(i)) sq += v * v;
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-12);
  }
}

TEST_CASE("gradient of sum(W x) is x transposed in every row") {
  Tensor w = Tensor::parameter(Matrix{{0.5, -1.0}, {2.0, 0.25}});
  const Tensor x = Tensor::constant(Matrix{{1.0}, {2.0}});
  backward(sum(matmul(w, x)));
  CHECK(w.grad() == Matrix{{1.0, 2.0}, {1.0, 2.0}});
}

TEST_CASE("dead relu region has zero gradient") {
  Tensor w = Tensor::parameter(Matrix{{0.5, -1.0, 3.0}});
  // -|w| = -(relu(w) + relu(-w))
  const Tensor neg_abs = scale(add(relu(w), relu(scale(w, -1.0))), -1.0);
  backward(sum(relu(neg_abs)));
  for (double g : w.grad().values()) CHECK(g == 0.0);
}

TEST_CASE("sum of parameters has all-ones gradient exactly") {
  Rng rng(5);
  Tensor a = Tensor::parameter(random_matrix(3, 4, rng));
  Tensor b = Tensor::parameter(random_matrix(3, 4, rng));
  backward(add(sum(a), sum(b)));
  for (double g : a.grad().values()) CHECK(g == 1.0);
  for (double g : b.grad().values()) CHECK(g == 1.0);
}

TEST_CASE("repeated backward calls accumulate") {
  Tensor a = Tensor::parameter(Matrix{{1.0, 2.0}});
  const Tensor loss = sum(scale(a, 3.0));
  backward(loss);
  backward(loss);
  CHECK(a.grad() == Matrix{{6.0, 6.0}});
  a.zero_grad();
  CHECK(a.grad() == Matrix{{0.0, 0.0}});
}

TEST_CASE("matmul distributes over addition within rounding") {
  Rng rng(11);
  const Tensor a = Tensor::constant(random_matrix(4, 5, rng));
  const Tensor b = Tensor::constant(random_matrix(5, 3, rng));
  const Tensor c = Tensor::constant(random_matrix(5, 3, rng));
  const Matrix lhs = matmul(a, add(b, c)).value();
  const Matrix rhs = add(matmul(a, b), matmul(a, c)).value();
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs.values()[i] - rhs.values()[i]) < 1e-9);
  const Tensor d = Tensor::constant(random_matrix(3, 2, rng));
  const Matrix l2 = matmul(matmul(a, b), d).value();
  const Matrix r2 = matmul(a, matmul(b, d)).value();
  for (std::size_t i = 0; i < l2.size(); ++i) CHECK(std::abs(l2.values()[i] - r2.values()[i]) < 1e-9);
}

TEST_CASE("segment ops") {
  const std::vector<std::size_t> seg = {0, 0, 2, 2, 2};
  const Tensor values = Tensor::constant(Matrix{{1, 0}, {0, 1}, {3, 3}, {6, 0}, {0, 6}});
  const Matrix mean = segment_mean(values, seg, 3).value();
  CHECK(mean == Matrix{{0.5, 0.5}, {0, 0}, {3, 3}});

  const Tensor scores = Tensor::constant(Matrix{{0.0}, {std::log(3.0)}, {1.0}, {1.0}, {1.0}});
  const Matrix w = segment_softmax(scores, seg, 3).value();
  CHECK(w(0, 0) == doctest::Approx(0.25));
  CHECK(w(1, 0) == doctest::Approx(0.75));
  for (std::size_t i = 2; i < 5; ++i) CHECK(w(i, 0) == doctest::Approx(1.0 / 3.0));

  const Matrix ws = segment_weighted_sum(values, Tensor::constant(w), seg, 3).value();
  CHECK(ws(0, 0) == doctest::Approx(0.25));
  CHECK(ws(0, 1) == doctest::Approx(0.75));
  CHECK(ws(1, 0) == 0.0);
  CHECK(ws(2, 0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(segment_mean(values, std::vector<std::size_t>{0, 1}, 2), ShapeError);
}

TEST_CASE("gather_rows repeats rows and scatters gradients back") {
  Tensor a = Tensor::parameter(Matrix{{1, 2}, {3, 4}});
  const std::vector<std::size_t> idx = {1, 1, 0};
  const Tensor g = gather_rows(a, idx);
  CHECK(g.value() == Matrix{{3, 4}, {3, 4}, {1, 2}});
  backward(sum(g));
  CHECK(a.grad() == Matrix{{1, 1}, {2, 2}});
}

TEST_CASE("xavier initialization bounds, determinism and mean") {
  const Matrix w = xavier_uniform(1, 5, 42);
  for (double v : w.values()) CHECK(std::abs(v) <= 1.0);
  CHECK(xavier_uniform(1, 5, 42) == w);
  CHECK_FALSE(xavier_uniform(1, 5, 43) == w);

  const Matrix big = xavier_uniform(100, 100, 9);
  const double limit = std::sqrt(6.0 / 200.0);
  double mean = 0.0;
  for (double v : big.values()) {
    CHECK(std::abs(v) <= limit);
    mean += v;
  }
  mean /= static_cast<double>(big.size());
  // Uniform on [-a, a] has variance a^2/3.
  const double sigma_of_mean = limit / std::sqrt(3.0) / std::sqrt(static_cast<double>(big.size()));
  CHECK(std::abs(mean) < 3.0 * sigma_of_mean);
}

TEST_CASE("grad_check of trivial closures") {
  Tensor p = Tensor::parameter(Matrix{{0.3, -0.7}});
  std::vector<Tensor> params = {p};
  const GradCheckResult identity = grad_check([&] { return sum(p); }, params);
  CHECK(identity.max_relative_error < 1e-9);
  const GradCheckResult constant =
      grad_check([&] { return sum(Tensor::constant(Matrix{{1.0}})); }, params);
  CHECK(constant.max_relative_error == 0.0);
}

TEST_CASE("every differentiable op agrees with central differences") {
  Rng rng(2024);
  Tensor a = Tensor::parameter(away_from_zero(4, 3, rng));
  Tensor b = Tensor::parameter(away_from_zero(3, 5, rng));
  Tensor c = Tensor::parameter(away_from_zero(4, 5, rng));
  Tensor bias = Tensor::parameter(away_from_zero(1, 5, rng));
  Tensor col = Tensor::parameter(away_from_zero(4, 1, rng));
  std::vector<Tensor> params = {a, b, c, bias, col};
  const std::vector<std::size_t> seg = {0, 1, 1, 1};
  const std::vector<std::size_t> pick = {3, 0, 0, 2};

  const std::vector<std::pair<const char*, std::function<Tensor()>>> closures = {
      {"matmul", [&] { return sum(mul(matmul(a, b), c)); }},
      {"add/sub", [&] { return sum(mul(sub(add(c, c), matmul(a, b)), c)); }},
      {"add_row", [&] { return sum(mul(add_row(c, bias), c)); }},
      {"concat", [&] { return sum(mul(concat_cols({a, c}), concat_cols({c, a}))); }},
      {"row_sum", [&] { return sum(mul(row_sum(c), col)); }},
      {"gather", [&] { return sum(mul(gather_rows(c, pick), c)); }},
      {"elu", [&] { return sum(mul(elu(c), c)); }},
      {"relu", [&] { return sum(mul(relu(c), c)); }},
      {"leaky", [&] { return sum(mul(leaky_relu(c, 0.2), c)); }},
      {"softmax", [&] { return sum(mul(softmax_rows(c), c)); }},
      {"l2", [&] { return sum(mul(l2_normalize_rows(c), c)); }},
      {"segment_softmax", [&] { return sum(mul(segment_softmax(col, seg, 2), col)); }},
      {"segment_weighted_sum",
       [&] { return sum(mul(segment_weighted_sum(c, segment_softmax(col, seg, 2), seg, 2),
                            segment_mean(c, seg, 2))); }},
      {"two-layer composite",
       [&] { return sum(mul(elu(add_row(scale(matmul(a, b), 0.5), bias)), c)); }},
  };
  for (const auto& [name, f] : closures) {
    CAPTURE(name);
    const GradCheckResult r = grad_check(f, params);
    CHECK(r.checked > 0);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("kink-straddling probes are skipped") {
  Tensor p = Tensor::parameter(Matrix{{0.0, 1.0}});
  std::vector<Tensor> params = {p};
  const GradCheckResult r = grad_check([&] { return sum(relu(p)); }, params);
  CHECK(r.skipped_kinks == 1);
  CHECK(r.checked == 1);
}

}  // TEST_SUITE
