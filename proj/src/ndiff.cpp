#include "rfn/ndiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace rfn::nd {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

using detail::Node;

// -- Matrix --------------------------------------------------------------------

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

Matrix Matrix::column_vector(std::span<const double> values) {
  Matrix m(values.size(), 1);
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// -- Tensor ----------------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->grad = Matrix(value.rows(), value.cols());
  node_->value = std::move(value);
}

const Matrix& Tensor::value() const { return node_->value; }
Matrix& Tensor::mutable_value() { return node_->value; }
const Matrix& Tensor::grad() const { return node_->grad; }
Matrix& Tensor::mutable_grad() { return node_->grad; }
bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.fill(0.0);
}

double Tensor::item() const {
  if (value().rows() != 1 || value().cols() != 1)
    throw ShapeError("item() on a " + shape_string(value()) + " tensor");
  return value()(0, 0);
}

Tensor Tensor::detached_copy() const { return Tensor(node_->value, node_->requires_grad); }

Tensor make_op(Matrix value, std::vector<Tensor> inputs, BackwardFn backward) {
#ifndef NDEBUG
  assert(value.all_finite() && "non-finite value produced by tensor op");
#endif
  auto node = std::make_shared<Node>();
  node->leaf = false;
  node->requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                    [](const Tensor& t) { return t.requires_grad(); });
  if (node->requires_grad) {
    node->grad = Matrix(value.rows(), value.cols());
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_);
    node->backward = std::move(backward);
  }
  node->value = std::move(value);
  return Tensor(std::move(node));
}

// -- Tape ------------------------------------------------------------------------

Tape::Tape(const Tensor& root) : root_(root.node_) {
  if (!root_->requires_grad) return;
  // Iterative post-order DFS; each node is emitted once, after its parents.
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  seen.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Tape::backward() {
  if (!root_->requires_grad) return;
  for (Node* node : order_) {
    if (!node->leaf) node->grad.fill(0.0);
  }
  for (double& g : root_->grad.values()) g += 1.0;
  std::vector<Matrix*> grads;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* node = *it;
    if (node->leaf || !node->backward) continue;
    grads.clear();
    for (auto& parent : node->parents)
      grads.push_back(parent->requires_grad ? &parent->grad : nullptr);
    node->backward(node->grad, grads);
  }
}

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ShapeError("backward() needs a 1x1 loss, got " + shape_string(loss.value()));
  Tape(loss).backward();
}

// -- algebra -------------------------------------------------------------------

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

// out += a * b
void gemm_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    auto out_row = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      auto b_row = b.row(p);
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aip * b_row[j];
    }
  }
}

// out += a * b^T
void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
  for (std::size_t i = 0; i < m; ++i) {
    auto a_row = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
      out(i, j) += acc;
    }
  }
}

// out += a^T * b
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    auto a_row = a.row(p);
    auto b_row = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const double api = a_row[i];
      if (api == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < n; ++j) out_row[j] += api * b_row[j];
    }
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: " + shape_string(av) + " * " + shape_string(bv));
  Matrix out(av.rows(), bv.cols());
  gemm_acc(av, bv, out);
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g, std::span<Matrix* const> d) {
    if (d[0]) gemm_nt_acc(g, b.value(), *d[0]);
    if (d[1]) gemm_tn_acc(a.value(), g, *d[1]);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  axpy(1.0, b.value().values(), out.values());
  return make_op(std::move(out), {a, b}, [](const Matrix& g, std::span<Matrix* const> d) {
    if (d[0]) axpy(1.0, g.values(), d[0]->values());
    if (d[1]) axpy(1.0, g.values(), d[1]->values());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  axpy(-1.0, b.value().values(), out.values());
  return make_op(std::move(out), {a, b}, [](const Matrix& g, std::span<Matrix* const> d) {
    if (d[0]) axpy(1.0, g.values(), d[0]->values());
    if (d[1]) axpy(-1.0, g.values(), d[1]->values());
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  auto bv = b.value().values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  return make_op(std::move(out), {a, b}, [a, b](const Matrix& g, std::span<Matrix* const> d) {
    auto gv = g.values();
    if (d[0]) {
      auto x = b.value().values();
      auto dv = d[0]->values();
      for (std::size_t i = 0; i < gv.size(); ++i) dv[i] += gv[i] * x[i];
    }
    if (d[1]) {
      auto x = a.value().values();
      auto dv = d[1]->values();
      for (std::size_t i = 0; i < gv.size(); ++i) dv[i] += gv[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= factor;
  return make_op(std::move(out), {a}, [factor](const Matrix& g, std::span<Matrix* const> d) {
    axpy(factor, g.values(), d[0]->values());
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw ShapeError("add_row: " + shape_string(av) + " + " + shape_string(rv));
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) axpy(1.0, rv.row(0), out.row(i));
  return make_op(std::move(out), {a, row}, [](const Matrix& g, std::span<Matrix* const> d) {
    if (d[0]) axpy(1.0, g.values(), d[0]->values());
    if (d[1]) {
      for (std::size_t i = 0; i < g.rows(); ++i) axpy(1.0, g.row(i), d[1]->row(0));
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows)
      throw ShapeError("concat_cols: row mismatch " + std::to_string(rows) + " vs " +
                       std::to_string(p.rows()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Matrix& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(pv.row(i).begin(), pv.row(i).end(), out.row(i).begin() + offset);
    offset += p.cols();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_op(std::move(out), inputs,
                 [offsets](const Matrix& g, std::span<Matrix* const> d) {
                   for (std::size_t k = 0; k < d.size(); ++k) {
                     if (!d[k]) continue;
                     const std::size_t w = d[k]->cols();
                     for (std::size_t i = 0; i < g.rows(); ++i)
                       axpy(1.0, g.row(i).subspan(offsets[k], w), d[k]->row(i));
                   }
                 });
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return make_op(Matrix(1, 1, total), {a}, [](const Matrix& g, std::span<Matrix* const> d) {
    for (double& v : d[0]->values()) v += g(0, 0);
  });
}

Tensor row_sum(const Tensor& a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (double v : av.row(i)) out(i, 0) += v;
  return make_op(std::move(out), {a}, [](const Matrix& g, std::span<Matrix* const> d) {
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (double& v : d[0]->row(i)) v += g(i, 0);
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  const Matrix& av = a.value();
  Matrix out(indices.size(), av.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.rows())
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of " +
                       std::to_string(av.rows()) + " rows");
    std::copy(av.row(indices[i]).begin(), av.row(indices[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_op(std::move(out), {a},
                 [idx = std::move(idx)](const Matrix& g, std::span<Matrix* const> d) {
                   for (std::size_t i = 0; i < idx.size(); ++i)
                     axpy(1.0, g.row(i), d[0]->row(idx[i]));
                 });
}

// -- activations -----------------------------------------------------------------

namespace {
thread_local KinkMonitor* active_monitor = nullptr;
}

KinkMonitor::KinkMonitor() : previous_(active_monitor) { active_monitor = this; }
KinkMonitor::~KinkMonitor() { active_monitor = previous_; }

void KinkMonitor::observe(std::span<const double> inputs) {
  KinkMonitor* m = active_monitor;
  if (!m) return;
  for (double x : inputs) {
    m->hash_ ^= (x > 0.0) ? 0x9bu : 0x51u;
    m->hash_ *= 0x100000001b3ULL;
  }
}

std::string Activation::name() const {
  switch (kind) {
    case Kind::identity: return "identity";
    case Kind::relu: return "relu";
    case Kind::leaky_relu: return "leaky_relu";
    case Kind::elu: return "elu";
    case Kind::softmax_rows: return "softmax";
  }
  return "identity";
}

Activation Activation::parse(const std::string& name, double param) {
  if (name == "identity") return identity();
  if (name == "relu") return relu();
  if (name == "leaky_relu") return leaky_relu(param == 0.0 ? 0.2 : param);
  if (name == "elu") return elu(param == 0.0 ? 1.0 : param);
  if (name == "softmax" || name == "softmax_rows") return softmax_rows();
  throw std::invalid_argument("unknown activation '" + name + "'");
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor leaky_relu(const Tensor& a, double slope) {
  KinkMonitor::observe(a.value().values());
  Matrix out = a.value();
  for (double& v : out.values())
    if (v <= 0.0) v *= slope;
  return make_op(std::move(out), {a}, [a, slope](const Matrix& g, std::span<Matrix* const> d) {
    auto x = a.value().values();
    auto gv = g.values();
    auto dv = d[0]->values();
    for (std::size_t i = 0; i < gv.size(); ++i) dv[i] += x[i] > 0.0 ? gv[i] : slope * gv[i];
  });
}

Tensor elu(const Tensor& a, double alpha) {
  Matrix out = a.value();
  for (double& v : out.values())
    if (v <= 0.0) v = alpha * std::expm1(v);
  Matrix saved = out;
  return make_op(std::move(out), {a},
                 [a, alpha, saved = std::move(saved)](const Matrix& g, std::span<Matrix* const> d) {
                   auto x = a.value().values();
                   auto y = saved.values();
                   auto gv = g.values();
                   auto dv = d[0]->values();
                   for (std::size_t i = 0; i < gv.size(); ++i)
                     dv[i] += x[i] > 0.0 ? gv[i] : gv[i] * (y[i] + alpha);
                 });
}

Tensor softmax_rows(const Tensor& a) {
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    if (r.empty()) continue;
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& v : r) z += (v = std::exp(v - mx));
    for (double& v : r) v /= z;
  }
  Matrix saved = out;
  return make_op(std::move(out), {a},
                 [saved = std::move(saved)](const Matrix& g, std::span<Matrix* const> d) {
                   for (std::size_t i = 0; i < g.rows(); ++i) {
                     auto y = saved.row(i);
                     auto gr = g.row(i);
                     double dot = 0.0;
                     for (std::size_t j = 0; j < y.size(); ++j) dot += gr[j] * y[j];
                     auto dr = d[0]->row(i);
                     for (std::size_t j = 0; j < y.size(); ++j) dr[j] += y[j] * (gr[j] - dot);
                   }
                 });
}

Tensor activate(const Activation& act, const Tensor& a) {
  switch (act.kind) {
    case Activation::Kind::identity: return a;
    case Activation::Kind::relu: return relu(a);
    case Activation::Kind::leaky_relu: return leaky_relu(a, act.param);
    case Activation::Kind::elu: return elu(a, act.param);
    case Activation::Kind::softmax_rows: return softmax_rows(a);
  }
  return a;
}

Tensor l2_normalize_rows(const Tensor& a) {
  const Matrix& av = a.value();
  Matrix out = av;
  std::vector<double> norms(av.rows(), 0.0);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double sq = 0.0;
    for (double v : av.row(i)) sq += v * v;
    norms[i] = std::sqrt(sq);
    if (norms[i] > 0.0)
      for (double& v : out.row(i)) v /= norms[i];
  }
  Matrix saved = out;
  return make_op(std::move(out), {a},
                 [norms = std::move(norms), saved = std::move(saved)](
                     const Matrix& g, std::span<Matrix* const> d) {
                   for (std::size_t i = 0; i < g.rows(); ++i) {
                     auto gr = g.row(i);
                     auto dr = d[0]->row(i);
                     if (norms[i] == 0.0) {
                       axpy(1.0, gr, dr);
                       continue;
                     }
                     auto y = saved.row(i);
                     double dot = 0.0;
                     for (std::size_t j = 0; j < y.size(); ++j) dot += y[j] * gr[j];
                     for (std::size_t j = 0; j < y.size(); ++j)
                       dr[j] += (gr[j] - y[j] * dot) / norms[i];
                   }
                 });
}

// -- segment ops -----------------------------------------------------------------

namespace {

void check_segments(std::span<const std::size_t> segment, std::size_t rows,
                    std::size_t num_segments, const char* op) {
  if (segment.size() != rows)
    throw ShapeError(std::string(op) + ": " + std::to_string(segment.size()) +
                     " segment ids for " + std::to_string(rows) + " rows");
  for (std::size_t s : segment)
    if (s >= num_segments) throw ShapeError(std::string(op) + ": segment id out of range");
}

}  // namespace

Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> segment,
                       std::size_t num_segments) {
  const Matrix& sv = scores.value();
  if (sv.cols() != 1) throw ShapeError("segment_softmax: scores must be a column");
  check_segments(segment, sv.rows(), num_segments, "segment_softmax");
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < sv.rows(); ++i) mx[segment[i]] = std::max(mx[segment[i]], sv(i, 0));
  Matrix out(sv.rows(), 1);
  std::vector<double> z(num_segments, 0.0);
  for (std::size_t i = 0; i < sv.rows(); ++i) {
    out(i, 0) = std::exp(sv(i, 0) - mx[segment[i]]);
    z[segment[i]] += out(i, 0);
  }
  for (std::size_t i = 0; i < sv.rows(); ++i) out(i, 0) /= z[segment[i]];
  Matrix saved = out;
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return make_op(std::move(out), {scores},
                 [saved = std::move(saved), seg = std::move(seg), num_segments](
                     const Matrix& g, std::span<Matrix* const> d) {
                   std::vector<double> dot(num_segments, 0.0);
                   for (std::size_t i = 0; i < seg.size(); ++i) dot[seg[i]] += g(i, 0) * saved(i, 0);
                   for (std::size_t i = 0; i < seg.size(); ++i)
                     (*d[0])(i, 0) += saved(i, 0) * (g(i, 0) - dot[seg[i]]);
                 });
}

Tensor segment_weighted_sum(const Tensor& values, const Tensor& weights,
                            std::span<const std::size_t> segment, std::size_t num_segments) {
  const Matrix& vv = values.value();
  const Matrix& wv = weights.value();
  if (wv.cols() != 1 || wv.rows() != vv.rows())
    throw ShapeError("segment_weighted_sum: weights " + shape_string(wv) + " for values " +
                     shape_string(vv));
  check_segments(segment, vv.rows(), num_segments, "segment_weighted_sum");
  Matrix out(num_segments, vv.cols());
  for (std::size_t i = 0; i < vv.rows(); ++i) axpy(wv(i, 0), vv.row(i), out.row(segment[i]));
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return make_op(std::move(out), {values, weights},
                 [values, weights, seg = std::move(seg)](const Matrix& g,
                                                         std::span<Matrix* const> d) {
                   const Matrix& vv = values.value();
                   const Matrix& wv = weights.value();
                   for (std::size_t i = 0; i < seg.size(); ++i) {
                     auto gr = g.row(seg[i]);
                     if (d[0]) axpy(wv(i, 0), gr, d[0]->row(i));
                     if (d[1]) {
                       double dot = 0.0;
                       auto vr = vv.row(i);
                       for (std::size_t j = 0; j < vr.size(); ++j) dot += vr[j] * gr[j];
                       (*d[1])(i, 0) += dot;
                     }
                   }
                 });
}

Tensor segment_mean(const Tensor& values, std::span<const std::size_t> segment,
                    std::size_t num_segments) {
  const Matrix& vv = values.value();
  check_segments(segment, vv.rows(), num_segments, "segment_mean");
  std::vector<double> count(num_segments, 0.0);
  for (std::size_t s : segment) count[s] += 1.0;
  Matrix out(num_segments, vv.cols());
  for (std::size_t i = 0; i < vv.rows(); ++i) axpy(1.0, vv.row(i), out.row(segment[i]));
  for (std::size_t s = 0; s < num_segments; ++s)
    if (count[s] > 0.0)
      for (double& v : out.row(s)) v /= count[s];
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return make_op(std::move(out), {values},
                 [seg = std::move(seg), count = std::move(count)](const Matrix& g,
                                                                  std::span<Matrix* const> d) {
                   for (std::size_t i = 0; i < seg.size(); ++i)
                     axpy(1.0 / count[seg[i]], g.row(seg[i]), d[0]->row(i));
                 });
}

// -- initialization and checking ---------------------------------------------------

Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

Matrix xavier_uniform(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return xavier_uniform(rows, cols, rng);
}

GradCheckResult grad_check(const std::function<Tensor()>& closure, std::span<Tensor> params,
                           double eps, double abs_floor) {
  for (auto& p : params) p.zero_grad();
  std::uint64_t base_pattern;
  {
    KinkMonitor monitor;
    Tensor loss = closure();
    base_pattern = monitor.fingerprint();
    backward(loss);
  }
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  auto probe = [&](double& slot, double value, std::uint64_t& pattern) {
    slot = value;
    KinkMonitor monitor;
    const double f = closure().item();
    pattern = monitor.fingerprint();
    return f;
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_value().values();
    auto grads = analytic[k].values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double original = values[j];
      std::uint64_t plus_pattern = 0, minus_pattern = 0;
      const double f_plus = probe(values[j], original + eps, plus_pattern);
      const double f_minus = probe(values[j], original - eps, minus_pattern);
      values[j] = original;
      if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double denom = std::max({std::abs(grads[j]), std::abs(numeric), abs_floor});
      result.max_relative_error =
          std::max(result.max_relative_error, std::abs(grads[j] - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace rfn::nd
