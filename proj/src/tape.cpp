#include "pascl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

void require(bool cond, Primitive p, const char* msg) {
  if (!cond) {
    throw InputError(std::string(primitive_name(p)) + ": " + msg);
  }
}

std::size_t arity(Primitive p) {
  switch (p) {
    case Primitive::kMatmul:
    case Primitive::kAdd:
    case Primitive::kConcatRows:
    case Primitive::kDotRows:
      return 2;
    case Primitive::kBatchNorm:
      return 3;
    default:
      return 1;
  }
}

// Row-wise max-shifted log-sum-exp.
double logsumexp(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double acc = 0.0;
  for (double v : row) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

}  // namespace

std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::kMatmul: return "matmul";
    case Primitive::kTranspose: return "transpose";
    case Primitive::kAdd: return "add";
    case Primitive::kScale: return "scale";
    case Primitive::kRelu: return "relu";
    case Primitive::kRowLogSoftmax: return "row_log_softmax";
    case Primitive::kRowLogSumExp: return "row_logsumexp";
    case Primitive::kRowL2Normalize: return "row_l2_normalize";
    case Primitive::kExp: return "exp";
    case Primitive::kLog: return "log";
    case Primitive::kSum: return "sum";
    case Primitive::kMean: return "mean";
    case Primitive::kGatherRows: return "gather_rows";
    case Primitive::kConcatRows: return "concat_rows";
    case Primitive::kDotRows: return "dot_rows";
    case Primitive::kBatchNorm: return "batch_norm";
  }
  return "unknown";
}

NodeRef Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeRef{nodes_.size() - 1};
}

NodeRef Tape::constant(TensorBuf value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  Node n;
  n.is_leaf = true;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeRef Tape::parameter(TensorBuf value) {
  if (!value.all_finite()) throw NumericError("parameter: non-finite value");
  Node n;
  n.is_leaf = true;
  n.is_parameter = true;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeRef Tape::batch_norm_train(NodeRef x, NodeRef gamma, NodeRef beta,
                               double eps) {
  PrimitiveAttrs at;
  at.scalar = eps;
  return apply(Primitive::kBatchNorm, {x, gamma, beta}, std::move(at));
}

NodeRef Tape::batch_norm_eval(NodeRef x, NodeRef gamma, NodeRef beta,
                              std::vector<double> running_mean,
                              std::vector<double> running_var, double eps) {
  PrimitiveAttrs at;
  at.scalar = eps;
  at.running_mean = std::move(running_mean);
  at.running_var = std::move(running_var);
  return apply(Primitive::kBatchNorm, {x, gamma, beta}, std::move(at));
}

NodeRef Tape::apply(Primitive p, std::span<const NodeRef> inputs,
                    PrimitiveAttrs attrs) {
  require(inputs.size() == arity(p), p, "wrong number of inputs");
  for (NodeRef r : inputs) {
    require(r.index < nodes_.size(), p, "input refers to an unknown node");
  }
  const TensorBuf& a = nodes_[inputs[0].index].value;
  Node node;
  node.op = p;
  node.inputs.assign(inputs.begin(), inputs.end());

  switch (p) {
    case Primitive::kMatmul: {
      const TensorBuf& b = nodes_[inputs[1].index].value;
      require(a.cols() == b.rows(), p, "inner dimensions differ");
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      TensorBuf out({m, n});
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
          const double av = a.at(i, l);
          if (av == 0.0) continue;
          const double* brow = &b.values()[l * n];
          double* orow = &out.values()[i * n];
          for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
      }
      node.value = std::move(out);
      break;
    }
    case Primitive::kTranspose: {
      TensorBuf out({a.cols(), a.rows()});
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
      node.value = std::move(out);
      break;
    }
    case Primitive::kAdd: {
      const TensorBuf& b = nodes_[inputs[1].index].value;
      TensorBuf out = a;
      if (a.same_shape(b)) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      } else {
        require(b.rank() == 1 && b.size() == a.cols(), p,
                "shapes neither equal nor row-broadcastable");
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t c = 0; c < a.cols(); ++c) out.at(r, c) += b[c];
      }
      node.value = std::move(out);
      break;
    }
    case Primitive::kScale: {
      TensorBuf out = a;
      for (double& v : out.values()) v *= attrs.scalar;
      node.value = std::move(out);
      break;
    }
    case Primitive::kRelu: {
      TensorBuf out = a;
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      node.value = std::move(out);
      break;
    }
    case Primitive::kRowLogSoftmax: {
      TensorBuf out = a;
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double lse = logsumexp(a.row(r));
        for (double& v : out.row(r)) v -= lse;
      }
      node.value = std::move(out);
      break;
    }
    case Primitive::kRowLogSumExp: {
      TensorBuf out({a.rows()});
      for (std::size_t r = 0; r < a.rows(); ++r) out[r] = logsumexp(a.row(r));
      node.value = std::move(out);
      break;
    }
    case Primitive::kRowL2Normalize: {
      TensorBuf out = a;
      node.saved.resize(a.rows());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double ss = 0.0;
        for (double v : a.row(r)) ss += v * v;
        const double norm = std::sqrt(ss + kL2NormalizeEps);
        node.saved[r] = norm;
        for (double& v : out.row(r)) v /= norm;
      }
      node.value = std::move(out);
      break;
    }
    case Primitive::kExp: {
      TensorBuf out = a;
      for (double& v : out.values()) v = std::exp(v);
      node.value = std::move(out);
      break;
    }
    case Primitive::kLog: {
      TensorBuf out = a;
      for (double& v : out.values()) v = std::log(v);
      node.value = std::move(out);
      break;
    }
    case Primitive::kSum:
    case Primitive::kMean: {
      double acc = 0.0;
      for (double v : a.values()) acc += v;
      if (p == Primitive::kMean) acc /= static_cast<double>(a.size());
      node.value = TensorBuf::scalar(acc);
      break;
    }
    case Primitive::kGatherRows: {
      require(!attrs.indices.empty(), p, "empty index list");
      for (std::size_t r : attrs.indices) {
        require(r < a.rows(), p, "row index out of range");
      }
      node.value = select_rows(a, attrs.indices);
      break;
    }
    case Primitive::kConcatRows: {
      const TensorBuf& b = nodes_[inputs[1].index].value;
      require(a.cols() == b.cols(), p, "column counts differ");
      std::vector<double> data(a.values());
      data.insert(data.end(), b.values().begin(), b.values().end());
      node.value = TensorBuf::matrix(a.rows() + b.rows(), a.cols(), std::move(data));
      break;
    }
    case Primitive::kDotRows: {
      const TensorBuf& b = nodes_[inputs[1].index].value;
      require(a.same_shape(b), p, "shapes differ");
      TensorBuf out({a.rows()});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double acc = 0.0;
        auto ar = a.row(r), br = b.row(r);
        for (std::size_t c = 0; c < ar.size(); ++c) acc += ar[c] * br[c];
        out[r] = acc;
      }
      node.value = std::move(out);
      break;
    }
    case Primitive::kBatchNorm: {
      const TensorBuf& gamma = nodes_[inputs[1].index].value;
      const TensorBuf& beta = nodes_[inputs[2].index].value;
      const std::size_t m = a.rows(), f = a.cols();
      require(a.rank() == 2, p, "input must be [batch, features]");
      require(gamma.rank() == 1 && gamma.size() == f && beta.same_shape(gamma),
              p, "gamma/beta must be [features]");
      require(attrs.scalar > 0.0, p, "eps must be positive");
      const bool train = attrs.running_mean.empty();
      // saved = [mean(f), inv_std(f)]
      node.saved.assign(2 * f, 0.0);
      if (train) {
        require(m >= 2, p, "training mode needs a batch of at least 2");
        for (std::size_t c = 0; c < f; ++c) {
          double mu = 0.0;
          for (std::size_t r = 0; r < m; ++r) mu += a.at(r, c);
          mu /= static_cast<double>(m);
          double var = 0.0;
          for (std::size_t r = 0; r < m; ++r) {
            const double d = a.at(r, c) - mu;
            var += d * d;
          }
          var /= static_cast<double>(m);
          node.saved[c] = mu;
          node.saved[f + c] = 1.0 / std::sqrt(var + attrs.scalar);
        }
      } else {
        require(attrs.running_mean.size() == f && attrs.running_var.size() == f,
                p, "running statistics must be [features]");
        for (std::size_t c = 0; c < f; ++c) {
          require(attrs.running_var[c] >= 0.0, p, "negative running variance");
          node.saved[c] = attrs.running_mean[c];
          node.saved[f + c] = 1.0 / std::sqrt(attrs.running_var[c] + attrs.scalar);
        }
      }
      TensorBuf out({m, f});
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < f; ++c)
          out.at(r, c) = gamma[c] * (a.at(r, c) - node.saved[c]) * node.saved[f + c] + beta[c];
      node.value = std::move(out);
      break;
    }
  }

  if (!node.value.all_finite()) {
    throw NumericError(std::string(primitive_name(p)) + ": non-finite output");
  }
  node.attrs = std::move(attrs);
  return push(std::move(node));
}

std::vector<double>& Tape::grad_of(NodeRef n) { return nodes_[n.index].grad; }

const std::vector<double>& Tape::grad(NodeRef n) const {
  const Node& node = nodes_.at(n.index);
  if (node.grad.size() != node.value.size()) {
    throw StateError("grad: no backward pass has reached this node");
  }
  return node.grad;
}

std::vector<NodeRef> Tape::parameters() const {
  std::vector<NodeRef> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_parameter) out.push_back(NodeRef{i});
  }
  return out;
}

void Tape::backward(NodeRef loss) {
  if (loss.index >= nodes_.size()) throw InputError("backward: unknown node");
  if (!nodes_[loss.index].value.is_scalar()) {
    throw InputError("backward: loss must be scalar");
  }
  for (Node& n : nodes_) n.grad.assign(n.value.size(), 0.0);
  nodes_[loss.index].grad[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.is_leaf) continue;
    backprop_node(n);
  }
  for (Node& n : nodes_) {
    if (n.is_parameter) n.value.grad() = n.grad;
  }
}

void Tape::backprop_node(const Node& node) {
  const std::vector<double>& g = node.grad;
  const bool any = std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
  if (!any) return;
  const TensorBuf& y = node.value;
  const TensorBuf& a = nodes_[node.inputs[0].index].value;
  std::vector<double>& ga = grad_of(node.inputs[0]);

  switch (node.op) {
    case Primitive::kMatmul: {
      const TensorBuf& b = nodes_[node.inputs[1].index].value;
      std::vector<double>& gb = grad_of(node.inputs[1]);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t l = 0; l < k; ++l) {
          const double* brow = &b.values()[l * n];
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + l] += acc;
          const double av = a.at(i, l);
          if (av == 0.0) continue;
          double* gbrow = &gb[l * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
      break;
    }
    case Primitive::kTranspose: {
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
          ga[i * a.cols() + j] += g[j * a.rows() + i];
      break;
    }
    case Primitive::kAdd: {
      const TensorBuf& b = nodes_[node.inputs[1].index].value;
      std::vector<double>& gb = grad_of(node.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (a.same_shape(b)) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      } else {
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t c = 0; c < a.cols(); ++c) gb[c] += g[r * a.cols() + c];
      }
      break;
    }
    case Primitive::kScale:
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += node.attrs.scalar * g[i];
      break;
    case Primitive::kRelu:
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] > 0.0) ga[i] += g[i];
      }
      break;
    case Primitive::kRowLogSoftmax: {
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          ga[i] += g[i] - std::exp(y[i]) * gsum;
        }
      }
      break;
    }
    case Primitive::kRowLogSumExp: {
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        if (g[r] == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          ga[i] += g[r] * std::exp(a[i] - y[r]);
        }
      }
      break;
    }
    case Primitive::kRowL2Normalize: {
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double yg = 0.0;
        for (std::size_t c = 0; c < cols; ++c) yg += y[r * cols + c] * g[r * cols + c];
        const double norm = node.saved[r];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          ga[i] += (g[i] - y[i] * yg) / norm;
        }
      }
      break;
    }
    case Primitive::kExp:
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      break;
    case Primitive::kLog:
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
      break;
    case Primitive::kSum:
      for (double& v : ga) v += g[0];
      break;
    case Primitive::kMean: {
      const double s = g[0] / static_cast<double>(a.size());
      for (double& v : ga) v += s;
      break;
    }
    case Primitive::kGatherRows: {
      const std::size_t cols = a.cols();
      for (std::size_t k = 0; k < node.attrs.indices.size(); ++k) {
        const std::size_t src = node.attrs.indices[k];
        for (std::size_t c = 0; c < cols; ++c) ga[src * cols + c] += g[k * cols + c];
      }
      break;
    }
    case Primitive::kConcatRows: {
      std::vector<double>& gb = grad_of(node.inputs[1]);
      const std::size_t na = a.size();
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
      break;
    }
    case Primitive::kDotRows: {
      const TensorBuf& b = nodes_[node.inputs[1].index].value;
      std::vector<double>& gb = grad_of(node.inputs[1]);
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          ga[i] += g[r] * b[i];
          gb[i] += g[r] * a[i];
        }
      }
      break;
    }
    case Primitive::kBatchNorm: {
      const TensorBuf& gamma = nodes_[node.inputs[1].index].value;
      std::vector<double>& ggamma = grad_of(node.inputs[1]);
      std::vector<double>& gbeta = grad_of(node.inputs[2]);
      const std::size_t m = a.rows(), f = a.cols();
      const bool train = node.attrs.running_mean.empty();
      const double md = static_cast<double>(m);
      for (std::size_t c = 0; c < f; ++c) {
        const double mu = node.saved[c], istd = node.saved[f + c];
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          const double gi = g[r * f + c];
          sum_g += gi;
          sum_gx += gi * (a.at(r, c) - mu) * istd;
        }
        ggamma[c] += sum_gx;
        gbeta[c] += sum_g;
        if (train) {
          // dx = gamma*istd/m * (m g - sum g - xhat * sum(g xhat))
          for (std::size_t r = 0; r < m; ++r) {
            const double xhat = (a.at(r, c) - mu) * istd;
            ga[r * f + c] += gamma[c] * istd / md *
                             (md * g[r * f + c] - sum_g - xhat * sum_gx);
          }
        } else {
          for (std::size_t r = 0; r < m; ++r) ga[r * f + c] += g[r * f + c] * gamma[c] * istd;
        }
      }
      break;
    }
  }
}

GradCheckReport grad_check(const TapeFunction& fn, const TensorBuf& point,
                           double step, double tol) {
  if (!(step > 0.0) || !(tol > 0.0)) {
    throw InputError("grad_check: step and tol must be positive");
  }
  auto evaluate = [&](const TensorBuf& x) {
    Tape tape;
    NodeRef out = fn(tape, tape.parameter(x));
    if (!tape.value(out).is_scalar()) {
      throw InputError("grad_check: function must return a scalar");
    }
    return tape.value(out)[0];
  };

  Tape tape;
  NodeRef x = tape.parameter(point);
  NodeRef out = fn(tape, x);
  if (!tape.value(out).is_scalar()) {
    throw InputError("grad_check: function must return a scalar");
  }
  tape.backward(out);
  const std::vector<double> analytic = tape.grad(x);

  GradCheckReport report;
  TensorBuf probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double up = evaluate(probe);
    probe[i] = point[i] - step;
    const double down = evaluate(probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * step);
    const double abs_err = std::abs(analytic[i] - numeric);
    const double rel_err =
        abs_err / std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, rel_err);
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace pascl
