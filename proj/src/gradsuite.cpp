#include "pascl/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pascl/longtail.hpp"
#include "pascl/objectives.hpp"

namespace pascl {
namespace {

constexpr std::size_t kBatch = 12;
constexpr std::size_t kOutBatch = 6;
constexpr std::size_t kEmbed = 4;
constexpr std::size_t kClasses = 4;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  TensorBuf matrix(std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(r * c);
    for (double& x : v) x = u(rng_);
    return TensorBuf::matrix(r, c, std::move(v));
  }
  TensorBuf vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng_);
    return TensorBuf::vector(std::move(v));
  }
  // Entries bounded away from 0 so relu's kink stays out of reach of the
  // finite-difference step.
  TensorBuf off_kink(std::size_t r, std::size_t c) {
    TensorBuf t = matrix(r, c, 0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (sign(rng_)) t[i] = -t[i];
    }
    return t;
  }
  std::vector<int> labels(std::size_t n, int classes) {
    std::uniform_int_distribution<int> u(0, classes - 1);
    std::vector<int> v(n);
    for (int& x : v) x = u(rng_);
    return v;
  }
  std::vector<std::size_t> indices(std::size_t n, std::size_t bound) {
    std::uniform_int_distribution<std::size_t> u(0, bound - 1);
    std::vector<std::size_t> v(n);
    for (auto& x : v) x = u(rng_);
    return v;
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Reduces any node to a scalar with non-uniform sensitivities.
NodeRef reduce(Tape& tape, NodeRef n, const TensorBuf& weights) {
  const TensorBuf& v = tape.value(n);
  if (v.rank() == 2) return tape.sum(tape.dot_rows(n, tape.constant(weights)));
  return tape.sum(tape.exp(tape.scale(n, 0.5)));
}

struct Case {
  std::string name;
  TapeFunction fn;
  TensorBuf point;
};

std::vector<Case> primitive_cases(Gen& g) {
  std::vector<Case> cs;
  const std::size_t r = 5, c = 3;
  auto w = [&](std::size_t rows, std::size_t cols) { return g.matrix(rows, cols); };

  {
    TensorBuf b = g.matrix(c, 4), wt = w(r, 4);
    cs.push_back({"primitive/matmul/lhs",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.matmul(x, t.constant(b)), wt); },
                  g.matrix(r, c)});
  }
  {
    TensorBuf a = g.matrix(r, c), wt = w(r, 4);
    cs.push_back({"primitive/matmul/rhs",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.matmul(t.constant(a), x), wt); },
                  g.matrix(c, 4)});
  }
  {
    TensorBuf wt = w(c, r);
    cs.push_back({"primitive/transpose",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.transpose(x), wt); },
                  g.matrix(r, c)});
  }
  {
    TensorBuf b = g.matrix(r, c), wt = w(r, c);
    cs.push_back({"primitive/add",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.add(x, t.constant(b)), wt); },
                  g.matrix(r, c)});
  }
  {
    TensorBuf a = g.matrix(r, c), wt = w(r, c);
    cs.push_back({"primitive/add/broadcast",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.add(t.constant(a), x), wt); },
                  g.vec(c)});
  }
  {
    TensorBuf wt = w(r, c);
    cs.push_back({"primitive/scale",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.scale(x, -1.7), wt); },
                  g.matrix(r, c)});
  }
  {
    TensorBuf wt = w(r, c);
    cs.push_back({"primitive/relu",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.relu(x), wt); },
                  g.off_kink(r, c)});
  }
  {
    TensorBuf wt = w(r, c);
    cs.push_back({"primitive/row_log_softmax",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.row_log_softmax(x), wt); },
                  g.matrix(r, c, -3.0, 3.0)});
  }
  cs.push_back({"primitive/row_logsumexp",
                [](Tape& t, NodeRef x) { return reduce(t, t.row_logsumexp(x), {}); },
                g.matrix(r, c, -3.0, 3.0)});
  {
    TensorBuf wt = w(r, c);
    cs.push_back({"primitive/row_l2_normalize",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.row_l2_normalize(x), wt); },
                  g.off_kink(r, c)});
  }
  {
    TensorBuf wt = w(r, c);
    cs.push_back({"primitive/exp",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.exp(x), wt); },
                  g.matrix(r, c)});
  }
  {
    TensorBuf wt = w(r, c);
    cs.push_back({"primitive/log",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.log(x), wt); },
                  g.matrix(r, c, 0.5, 2.0)});
  }
  cs.push_back({"primitive/sum",
                [](Tape& t, NodeRef x) { return t.exp(t.scale(t.sum(x), 0.3)); },
                g.matrix(r, c)});
  cs.push_back({"primitive/mean",
                [](Tape& t, NodeRef x) { return t.exp(t.mean(x)); },
                g.matrix(r, c)});
  {
    std::vector<std::size_t> idx = g.indices(7, r);
    TensorBuf wt = w(7, c);
    cs.push_back({"primitive/gather_rows",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.gather_rows(x, idx), wt); },
                  g.matrix(r, c)});
  }
  {
    TensorBuf b = g.matrix(2, c), wt = w(r + 2, c);
    cs.push_back({"primitive/concat_rows",
                  [=](Tape& t, NodeRef x) {
                    return reduce(t, t.concat_rows(t.constant(b), x), wt);
                  },
                  g.matrix(r, c)});
  }
  {
    TensorBuf b = g.matrix(r, c);
    cs.push_back({"primitive/dot_rows",
                  [=](Tape& t, NodeRef x) { return reduce(t, t.dot_rows(x, t.constant(b)), {}); },
                  g.matrix(r, c)});
  }
  {
    TensorBuf gamma = g.vec(c, 0.5, 1.5), beta = g.vec(c), wt = w(r, c);
    cs.push_back({"primitive/batch_norm_train/x",
                  [=](Tape& t, NodeRef x) {
                    return reduce(t, t.batch_norm_train(x, t.constant(gamma), t.constant(beta), 1e-5),
                                  wt);
                  },
                  g.matrix(r, c, -2.0, 2.0)});
  }
  {
    TensorBuf xs = g.matrix(r, c, -2.0, 2.0), beta = g.vec(c), wt = w(r, c);
    cs.push_back({"primitive/batch_norm_train/gamma",
                  [=](Tape& t, NodeRef x) {
                    return reduce(t, t.batch_norm_train(t.constant(xs), x, t.constant(beta), 1e-5),
                                  wt);
                  },
                  g.vec(c, 0.5, 1.5)});
  }
  {
    TensorBuf xs = g.matrix(r, c, -2.0, 2.0), gamma = g.vec(c, 0.5, 1.5), wt = w(r, c);
    cs.push_back({"primitive/batch_norm_train/beta",
                  [=](Tape& t, NodeRef x) {
                    return reduce(t, t.batch_norm_train(t.constant(xs), t.constant(gamma), x, 1e-5),
                                  wt);
                  },
                  g.vec(c)});
  }
  {
    TensorBuf gamma = g.vec(c, 0.5, 1.5), beta = g.vec(c), wt = w(r, c);
    std::vector<double> rm = g.vec(c).values(), rv = g.vec(c, 0.5, 2.0).values();
    cs.push_back({"primitive/batch_norm_eval/x",
                  [=](Tape& t, NodeRef x) {
                    return reduce(t,
                                  t.batch_norm_eval(x, t.constant(gamma), t.constant(beta), rm,
                                                    rv, 1e-5),
                                  wt);
                  },
                  g.matrix(r, c, -2.0, 2.0)});
  }
  {
    TensorBuf xs = g.matrix(r, c, -2.0, 2.0), beta = g.vec(c), wt = w(r, c);
    std::vector<double> rm = g.vec(c).values(), rv = g.vec(c, 0.5, 2.0).values();
    cs.push_back({"primitive/batch_norm_eval/gamma",
                  [=](Tape& t, NodeRef x) {
                    return reduce(t,
                                  t.batch_norm_eval(t.constant(xs), x, t.constant(beta), rm, rv,
                                                    1e-5),
                                  wt);
                  },
                  g.vec(c, 0.5, 1.5)});
  }
  return cs;
}

std::vector<Domain> domains_for(std::size_t n_in, std::size_t n_out) {
  std::vector<Domain> d(n_in, Domain::kIn);
  d.insert(d.end(), n_out, Domain::kOut);
  return d;
}

std::vector<Case> loss_cases(Gen& g) {
  std::vector<Case> cs;
  const std::vector<int> tail = {2, 3};
  {
    auto labels = g.labels(kBatch, kClasses);
    cs.push_back({"loss/cross_entropy",
                  [=](Tape& t, NodeRef x) { return cross_entropy(t, x, labels); },
                  g.matrix(kBatch, kClasses, -3.0, 3.0)});
  }
  cs.push_back({"loss/outlier_uniformity",
                [](Tape& t, NodeRef x) { return outlier_uniformity(t, x); },
                g.matrix(kBatch, kClasses, -3.0, 3.0)});
  {
    auto labels = g.labels(kBatch, kClasses);
    const auto counts = longtailed_counts(kClasses, 100, 10.0);
    std::vector<double> priors;
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), 0.0));
    for (auto n : counts) priors.push_back(static_cast<double>(n) / total);
    cs.push_back({"loss/logit_adjusted_ce",
                  [=](Tape& t, NodeRef x) { return logit_adjusted_ce(t, x, labels, priors, 1.0); },
                  g.matrix(kBatch, kClasses, -3.0, 3.0)});
  }
  // Contrastive: 12 in-distribution rows followed by 6 OOD rows, differentiated
  // through the normalization so the check covers the raw embeddings.
  for (ContrastVariant v : {ContrastVariant::kSclIn, ContrastVariant::kSclAll,
                            ContrastVariant::kPartial, ContrastVariant::kAsymmetric,
                            ContrastVariant::kPascl}) {
    std::vector<int> labels = g.labels(kBatch, kClasses);
    // keep at least two tail rows so PASCL has an anchor with a positive
    labels[0] = labels[1] = 2;
    for (std::size_t i = 0; i < kOutBatch; ++i) labels.push_back(kOodLabel);
    const auto domains = domains_for(kBatch, kOutBatch);
    const ContrastSpec spec{v, tail};
    cs.push_back({"loss/pascl_contrastive/" + std::string(variant_name(v)),
                  [=](Tape& t, NodeRef x) {
                    return pascl_contrastive(t, t.row_l2_normalize(x), labels, domains, spec, 0.1);
                  },
                  g.matrix(kBatch + kOutBatch, kEmbed)});
  }
  // stage1_loss over a packed point: rows are in then out examples, the
  // first kClasses columns are logits and the rest raw projections.
  for (ContrastVariant v : {ContrastVariant::kSclAll, ContrastVariant::kPascl}) {
    std::vector<int> labels = g.labels(kBatch, kClasses);
    labels[0] = labels[1] = 3;
    std::vector<double> sel_logit(kClasses * 2 * kClasses, 0.0);
    std::vector<double> sel_proj(kClasses * 2 * kEmbed, 0.0);
    for (std::size_t i = 0; i < kClasses; ++i) sel_logit[i * kClasses + i] = 1.0;
    for (std::size_t i = 0; i < kEmbed; ++i) sel_proj[(kClasses + i) * kEmbed + i] = 1.0;
    const TensorBuf sl = TensorBuf::matrix(kClasses + kEmbed, kClasses, sel_logit);
    const TensorBuf sp = TensorBuf::matrix(kClasses + kEmbed, kEmbed, sel_proj);
    std::vector<std::size_t> in_rows, out_rows;
    for (std::size_t i = 0; i < kBatch; ++i) in_rows.push_back(i);
    for (std::size_t i = 0; i < kOutBatch; ++i) out_rows.push_back(kBatch + i);
    const ContrastSpec spec{v, tail};
    LossWeights w;
    w.num_classes = kClasses;
    cs.push_back({"loss/stage1_loss/" + std::string(variant_name(v)),
                  [=](Tape& t, NodeRef x) {
                    const NodeRef logits = t.matmul(x, t.constant(sl));
                    Stage1Inputs in;
                    in.logits_in = t.gather_rows(logits, in_rows);
                    in.logits_out = t.gather_rows(logits, out_rows);
                    in.projection = t.row_l2_normalize(t.matmul(x, t.constant(sp)));
                    in.labels_in = labels;
                    in.n_out = kOutBatch;
                    return stage1_loss(t, in, spec, w).total;
                  },
                  g.matrix(kBatch + kOutBatch, kClasses + kEmbed, -2.0, 2.0)});
  }
  return cs;
}

}  // namespace

std::vector<GradCaseResult> run_grad_suite(const GradSuiteOptions& opts) {
  std::vector<GradCaseResult> out;
  for (std::size_t s = 0; s < opts.seeds; ++s) {
    const std::uint64_t seed = opts.first_seed + s;
    Gen g(derive_seed(seed, 77));
    std::vector<Case> cases;
    if (opts.primitives) cases = primitive_cases(g);
    if (opts.losses) {
      auto more = loss_cases(g);
      cases.insert(cases.end(), more.begin(), more.end());
    }
    for (const Case& c : cases) {
      out.push_back({c.name, seed, grad_check(c.fn, c.point, opts.step, opts.tol)});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const GradCaseResult& a, const GradCaseResult& b) { return a.name < b.name; });
  return out;
}

}  // namespace pascl
