#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "pascl/tensor.hpp"

namespace pascl {

enum class Primitive {
  kMatmul,
  kTranspose,
  kAdd,
  kScale,
  kRelu,
  kRowLogSoftmax,
  kRowLogSumExp,
  kRowL2Normalize,
  kExp,
  kLog,
  kSum,
  kMean,
  kGatherRows,
  kConcatRows,
  kDotRows,
  kBatchNorm,
};

std::string_view primitive_name(Primitive p);

struct NodeRef {
  std::size_t index = 0;
  friend bool operator==(NodeRef, NodeRef) = default;
};

// Extra, non-differentiable arguments of a primitive.
struct PrimitiveAttrs {
  double scalar = 0.0;                // kScale factor, kBatchNorm eps
  std::vector<std::size_t> indices;   // kGatherRows
  // kBatchNorm: empty => normalize with batch statistics (training), else
  // the running mean/variance to normalize with (evaluation).
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

// Stabilizer added under the square root of row_l2_normalize.
inline constexpr double kL2NormalizeEps = 1e-12;

// Recorded computation over dense arrays with reverse-mode differentiation.
// Nodes are appended in evaluation order, so the node list is a topological
// order by construction. A tape is single-threaded; tapes share no state.
class Tape {
 public:
  NodeRef constant(TensorBuf value);
  NodeRef parameter(TensorBuf value);

  // Evaluates `p` on `inputs` and records it. Throws InputError on shape
  // mismatch and NumericError when the result is not finite.
  NodeRef apply(Primitive p, std::span<const NodeRef> inputs,
                PrimitiveAttrs attrs = {});
  NodeRef apply(Primitive p, std::initializer_list<NodeRef> inputs,
                PrimitiveAttrs attrs = {}) {
    return apply(p, std::span<const NodeRef>(inputs.begin(), inputs.size()),
                 std::move(attrs));
  }

  NodeRef matmul(NodeRef a, NodeRef b) { return apply(Primitive::kMatmul, {a, b}); }
  NodeRef transpose(NodeRef a) { return apply(Primitive::kTranspose, {a}); }
  // Same-shape add, or row broadcast when `b` is a rank 1 vector of
  // length cols(a).
  NodeRef add(NodeRef a, NodeRef b) { return apply(Primitive::kAdd, {a, b}); }
  NodeRef scale(NodeRef a, double c) {
    PrimitiveAttrs at;
    at.scalar = c;
    return apply(Primitive::kScale, {a}, std::move(at));
  }
  NodeRef relu(NodeRef a) { return apply(Primitive::kRelu, {a}); }
  NodeRef row_log_softmax(NodeRef a) { return apply(Primitive::kRowLogSoftmax, {a}); }
  NodeRef row_logsumexp(NodeRef a) { return apply(Primitive::kRowLogSumExp, {a}); }
  NodeRef row_l2_normalize(NodeRef a) { return apply(Primitive::kRowL2Normalize, {a}); }
  NodeRef exp(NodeRef a) { return apply(Primitive::kExp, {a}); }
  NodeRef log(NodeRef a) { return apply(Primitive::kLog, {a}); }
  NodeRef sum(NodeRef a) { return apply(Primitive::kSum, {a}); }
  NodeRef mean(NodeRef a) { return apply(Primitive::kMean, {a}); }
  NodeRef gather_rows(NodeRef a, std::vector<std::size_t> rows) {
    PrimitiveAttrs at;
    at.indices = std::move(rows);
    return apply(Primitive::kGatherRows, {a}, std::move(at));
  }
  NodeRef concat_rows(NodeRef a, NodeRef b) { return apply(Primitive::kConcatRows, {a, b}); }
  NodeRef dot_rows(NodeRef a, NodeRef b) { return apply(Primitive::kDotRows, {a, b}); }
  // Per-column normalization of a [batch, features] input followed by the
  // affine map gamma * xhat + beta.
  NodeRef batch_norm_train(NodeRef x, NodeRef gamma, NodeRef beta, double eps);
  NodeRef batch_norm_eval(NodeRef x, NodeRef gamma, NodeRef beta,
                          std::vector<double> running_mean,
                          std::vector<double> running_var, double eps);

  // Reverse sweep from a scalar node. Resets every gradient first, so
  // repeated calls yield identical gradients.
  void backward(NodeRef loss);

  const TensorBuf& value(NodeRef n) const { return nodes_.at(n.index).value; }
  // Gradient of the last backward() target with respect to `n`; zeros if
  // `n` did not influence it.
  const std::vector<double>& grad(NodeRef n) const;
  bool is_parameter(NodeRef n) const { return nodes_.at(n.index).is_parameter; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<NodeRef> parameters() const;

 private:
  struct Node {
    Primitive op{};
    bool is_leaf = false;
    bool is_parameter = false;
    std::vector<NodeRef> inputs;
    PrimitiveAttrs attrs;
    TensorBuf value;
    std::vector<double> saved;  // primitive-specific forward intermediates
    std::vector<double> grad;
  };

  NodeRef push(Node node);
  void backprop_node(const Node& node);
  std::vector<double>& grad_of(NodeRef n);

  std::vector<Node> nodes_;
};

struct GradCheckReport {
  double max_abs_error = 0.0;
  // |analytic - numeric| / max(1, |analytic|, |numeric|)
  double max_rel_error = 0.0;
  bool pass = true;
};

// Builds a scalar-valued graph from a single parameter leaf.
using TapeFunction = std::function<NodeRef(Tape&, NodeRef)>;

// Compares reverse-mode gradients against central differences
// (f(x + step e_i) - f(x - step e_i)) / (2 step) for every coordinate.
// Passes when every coordinate's relative error is within `tol`.
GradCheckReport grad_check(const TapeFunction& fn, const TensorBuf& point,
                           double step, double tol);

}  // namespace pascl
