#pragma once

// Dense two-dimensional tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a node of a define-by-run graph. Every op
// whose inputs require gradients records its parents and a backward rule on
// the output node; backward() orders the reachable nodes topologically and
// replays the rules in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfn/random.hpp"

namespace rfn::nd {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major dense matrix of doubles. Plain value type.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);
  static Matrix column_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

namespace detail {
struct Node;
}

/// Handle to a value on the differentiation graph. Copies share the node.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor constant(Matrix value) { return Tensor(std::move(value), false); }

  const Matrix& value() const;
  /// Direct write access, meant for optimizers and finite-difference probes.
  /// Any graph that already consumed this tensor keeps stale values.
  Matrix& mutable_value();
  const Matrix& grad() const;
  Matrix& mutable_grad();
  bool requires_grad() const;
  void zero_grad();

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;

  /// A fresh leaf holding a copy of the current value (gradient tracking kept).
  Tensor detached_copy() const;

  const detail::Node* node() const { return node_.get(); }

 private:
  friend class Tape;
  friend Tensor make_op(Matrix value, std::vector<Tensor> inputs,
                        std::function<void(const Matrix&, std::span<Matrix* const>)> backward);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Backward rule: receives the output gradient and one pointer per input,
/// null when that input does not need a gradient. Rules accumulate (+=).
using BackwardFn = std::function<void(const Matrix& grad_out, std::span<Matrix* const> grad_in)>;

/// Records an op on the graph. The result requires a gradient iff any input
/// does; otherwise the rule is dropped.
Tensor make_op(Matrix value, std::vector<Tensor> inputs, BackwardFn backward);

/// Topologically ordered record of the ops reachable from a root.
class Tape {
 public:
  explicit Tape(const Tensor& root);

  std::size_t size() const { return order_.size(); }

  /// Seeds the root with ones and replays backward rules in reverse order.
  /// Interior gradients are reset first; leaf gradients accumulate.
  void backward();

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;
};

/// Reverse pass from a 1x1 loss. Throws ShapeError for non-scalar input.
void backward(const Tensor& loss);

// -- algebra ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise (Hadamard) product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a (m x n) plus a 1 x n row broadcast over every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
/// Sum of all entries as a 1x1 tensor.
Tensor sum(const Tensor& a);
/// Per-row sums as an m x 1 tensor.
Tensor row_sum(const Tensor& a);
/// Row i of the result is row indices[i] of a. Indices may repeat.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);

// -- activations -------------------------------------------------------------

struct Activation {
  enum class Kind { identity, relu, leaky_relu, elu, softmax_rows };

  Kind kind = Kind::identity;
  double param = 0.0;  // slope for leaky_relu, alpha for elu

  static Activation identity() { return {Kind::identity, 0.0}; }
  static Activation relu() { return {Kind::relu, 0.0}; }
  static Activation leaky_relu(double slope = 0.2) { return {Kind::leaky_relu, slope}; }
  static Activation elu(double alpha = 1.0) { return {Kind::elu, alpha}; }
  static Activation softmax_rows() { return {Kind::softmax_rows, 0.0}; }

  std::string name() const;
  static Activation parse(const std::string& name, double param = 0.0);

  friend bool operator==(const Activation&, const Activation&) = default;
};

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor elu(const Tensor& a, double alpha = 1.0);
/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& a);
Tensor activate(const Activation& act, const Tensor& a);

/// Rescales each nonzero row to unit Euclidean norm; zero rows pass through.
Tensor l2_normalize_rows(const Tensor& a);

// -- segment ops (rows grouped by an owner id) -------------------------------

/// Softmax of an n x 1 column within each segment. segment[i] < num_segments.
Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> segment,
                       std::size_t num_segments);
/// Row s of the result is sum over i in segment s of weights[i] * values[i].
/// Segments with no rows yield zero rows.
Tensor segment_weighted_sum(const Tensor& values, const Tensor& weights,
                            std::span<const std::size_t> segment, std::size_t num_segments);
/// Arithmetic mean of the rows in each segment; empty segments yield zeros.
Tensor segment_mean(const Tensor& values, std::span<const std::size_t> segment,
                    std::size_t num_segments);

// -- initialization and checking ----------------------------------------------

/// i.i.d. uniform on [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))].
Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);
Matrix xavier_uniform(std::size_t rows, std::size_t cols, std::uint64_t seed);

/// Thread-local fingerprint of the sign pattern seen at relu/leaky_relu
/// inputs while active. Lets the gradient checker tell when a finite
/// difference probe straddles a kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  std::uint64_t fingerprint() const { return hash_; }
  void reset() { hash_ = kOffset; }

  static void observe(std::span<const double> inputs);

 private:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  std::uint64_t hash_ = kOffset;
  KinkMonitor* previous_ = nullptr;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Central-difference check of the tape gradient of closure() with respect
/// to every entry of every parameter. Relative error per entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor). Entries
/// whose +/- eps probes change the relu/leaky_relu sign pattern are skipped.
GradCheckResult grad_check(const std::function<Tensor()>& closure, std::span<Tensor> params,
                           double eps = 1e-5, double abs_floor = 1e-6);

}  // namespace rfn::nd
