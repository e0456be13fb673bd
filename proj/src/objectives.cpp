#include "pascl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

// Added to self-similarity logits so exp() underflows to exactly 0.
constexpr double kMaskedLogit = -1e9;
constexpr double kUnitNormTolerance = 1e-6;
constexpr int kNoPositiveRole = -2;
constexpr int kOodPseudoClass = -3;

TensorBuf one_hot(std::span<const int> labels, std::size_t num_classes) {
  TensorBuf t({labels.size(), num_classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= num_classes) {
      throw InputError("label " + std::to_string(labels[r]) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    t.at(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return t;
}

double scalar_of(const Tape& tape, NodeRef n) { return tape.value(n)[0]; }

}  // namespace

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0)) throw ConfigError("lambda1", "must be >= 0");
  if (!(lambda2 >= 0.0)) throw ConfigError("lambda2", "must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("tau", "must be > 0");
  if (!(tau_la >= 0.0)) throw ConfigError("tau_la", "must be >= 0");
  if (num_classes < 2) throw ConfigError("C", "must be at least 2");
}

std::string_view variant_name(ContrastVariant v) {
  switch (v) {
    case ContrastVariant::kSclIn: return "scl_in";
    case ContrastVariant::kSclAll: return "scl_all";
    case ContrastVariant::kPartial: return "partial";
    case ContrastVariant::kAsymmetric: return "asymmetric";
    case ContrastVariant::kPascl: return "pascl";
  }
  return "unknown";
}

ContrastVariant parse_variant(std::string_view name) {
  for (ContrastVariant v : {ContrastVariant::kSclIn, ContrastVariant::kSclAll,
                            ContrastVariant::kPartial, ContrastVariant::kAsymmetric,
                            ContrastVariant::kPascl}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("variant", "unknown contrastive variant '" + std::string(name) + "'");
}

bool ContrastSpec::is_tail(int label) const {
  return std::binary_search(tail_set.begin(), tail_set.end(), label);
}

ContrastStats& ContrastStats::operator+=(const ContrastStats& o) {
  anchors += o.anchors;
  participants += o.participants;
  head_participants += o.head_participants;
  tail_participants += o.tail_participants;
  ood_participants += o.ood_participants;
  return *this;
}

NodeRef cross_entropy(Tape& tape, NodeRef logits, std::span<const int> labels) {
  const TensorBuf& l = tape.value(logits);
  if (l.rank() != 2 || l.rows() != labels.size()) {
    throw InputError("cross_entropy: logits must be [batch, C] with one label per row");
  }
  NodeRef target = tape.constant(one_hot(labels, l.cols()));
  NodeRef picked = tape.dot_rows(tape.row_log_softmax(logits), target);
  return tape.scale(tape.mean(picked), -1.0);
}

NodeRef outlier_uniformity(Tape& tape, NodeRef logits) {
  const TensorBuf& l = tape.value(logits);
  if (l.rank() != 2 || l.cols() < 2) {
    throw InputError("outlier_uniformity: logits must be [batch, C] with C >= 2");
  }
  NodeRef uniform = tape.constant(TensorBuf(l.dims(), 1.0 / static_cast<double>(l.cols())));
  NodeRef row_mean = tape.dot_rows(logits, uniform);
  NodeRef per_row = tape.add(tape.row_logsumexp(logits), tape.scale(row_mean, -1.0));
  return tape.mean(per_row);
}

NodeRef pascl_contrastive(Tape& tape, NodeRef z, std::span<const int> labels,
                          std::span<const Domain> domains, const ContrastSpec& spec,
                          double tau, ContrastStats* stats) {
  const TensorBuf& zv = tape.value(z);
  const std::size_t n = labels.size();
  if (zv.rank() != 2 || zv.rows() != n || domains.size() != n) {
    throw InputError("pascl_contrastive: z, labels and domains disagree in length");
  }
  if (!(tau > 0.0)) throw InputError("pascl_contrastive: tau must be positive");
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (double v : zv.row(r)) ss += v * v;
    if (std::abs(std::sqrt(ss) - 1.0) > kUnitNormTolerance) {
      throw InputError("pascl_contrastive: row " + std::to_string(r) + " is not unit norm");
    }
    if (domains[r] == Domain::kIn && labels[r] < 0) {
      throw InputError("pascl_contrastive: negative in-distribution label");
    }
  }

  const ContrastVariant v = spec.variant;
  const bool ood_is_class = v == ContrastVariant::kSclAll || v == ContrastVariant::kPartial;
  auto is_ood = [&](std::size_t r) { return domains[r] == Domain::kOut; };
  auto is_tail = [&](std::size_t r) { return !is_ood(r) && spec.is_tail(labels[r]); };
  auto in_pool = [&](std::size_t r) {
    switch (v) {
      case ContrastVariant::kSclIn: return !is_ood(r);
      case ContrastVariant::kSclAll:
      case ContrastVariant::kAsymmetric: return true;
      case ContrastVariant::kPartial:
      case ContrastVariant::kPascl: return is_tail(r) || is_ood(r);
    }
    return false;
  };
  auto in_anchor_set = [&](std::size_t r) {
    switch (v) {
      case ContrastVariant::kSclIn:
      case ContrastVariant::kAsymmetric: return !is_ood(r);
      case ContrastVariant::kSclAll: return true;
      case ContrastVariant::kPartial: return is_tail(r) || is_ood(r);
      case ContrastVariant::kPascl: return is_tail(r);
    }
    return false;
  };
  auto key = [&](std::size_t r) {
    if (!is_ood(r)) return labels[r];
    return ood_is_class ? kOodPseudoClass : kNoPositiveRole;
  };

  std::vector<std::size_t> pool;
  for (std::size_t r = 0; r < n; ++r) {
    if (in_pool(r)) pool.push_back(r);
  }
  // Anchor rows (positions within `pool`) and their positive positions.
  std::vector<std::size_t> anchor_pos;
  std::vector<std::vector<std::size_t>> positives;
  for (std::size_t a = 0; a < pool.size(); ++a) {
    const std::size_t r = pool[a];
    if (!in_anchor_set(r) || key(r) == kNoPositiveRole) continue;
    std::vector<std::size_t> pos;
    for (std::size_t b = 0; b < pool.size(); ++b) {
      if (b != a && key(pool[b]) == key(r)) pos.push_back(b);
    }
    if (pos.empty()) continue;
    anchor_pos.push_back(a);
    positives.push_back(std::move(pos));
  }

  if (anchor_pos.empty()) return tape.constant(TensorBuf::scalar(0.0));

  if (stats != nullptr) {
    stats->anchors += anchor_pos.size();
    stats->participants += pool.size();
    for (std::size_t r : pool) {
      if (is_ood(r)) ++stats->ood_participants;
      else if (is_tail(r)) ++stats->tail_participants;
      else ++stats->head_participants;
    }
  }

  const std::size_t q = pool.size(), m = anchor_pos.size();
  NodeRef zp = tape.gather_rows(z, pool);
  NodeRef sim = tape.scale(tape.matmul(zp, tape.transpose(zp)), 1.0 / tau);
  NodeRef rows = tape.gather_rows(sim, anchor_pos);
  TensorBuf self_mask({m, q});
  TensorBuf weights({m, q});
  for (std::size_t i = 0; i < m; ++i) {
    self_mask.at(i, anchor_pos[i]) = kMaskedLogit;
    const double w = 1.0 / static_cast<double>(positives[i].size());
    for (std::size_t p : positives[i]) weights.at(i, p) = w;
  }
  NodeRef log_prob = tape.row_log_softmax(tape.add(rows, tape.constant(std::move(self_mask))));
  NodeRef per_anchor = tape.dot_rows(log_prob, tape.constant(std::move(weights)));
  return tape.scale(tape.mean(per_anchor), -1.0);
}

NodeRef logit_adjusted_ce(Tape& tape, NodeRef logits, std::span<const int> labels,
                          std::span<const double> priors, double tau_la) {
  const TensorBuf& l = tape.value(logits);
  if (priors.size() != l.cols()) {
    throw InputError("logit_adjusted_ce: one prior per class required");
  }
  if (!(tau_la >= 0.0)) throw InputError("logit_adjusted_ce: tau_la must be >= 0");
  std::vector<double> shift(priors.size());
  for (std::size_t c = 0; c < priors.size(); ++c) {
    if (!(priors[c] > 0.0)) throw InputError("logit_adjusted_ce: priors must be positive");
    shift[c] = tau_la * std::log(priors[c]);
  }
  NodeRef adjusted = tape.add(logits, tape.constant(TensorBuf::vector(std::move(shift))));
  return cross_entropy(tape, adjusted, labels);
}

Stage1Terms stage1_loss(Tape& tape, const Stage1Inputs& in, const ContrastSpec& spec,
                        const LossWeights& weights) {
  weights.validate();
  Stage1Terms terms;
  NodeRef ce = cross_entropy(tape, in.logits_in, in.labels_in);
  terms.cross_entropy = scalar_of(tape, ce);
  NodeRef total = ce;
  if (weights.lambda1 > 0.0) {
    if (!in.logits_out || in.n_out == 0) {
      throw InputError("stage1_loss: lambda1 > 0 needs a non-empty OOD batch");
    }
    NodeRef out = outlier_uniformity(tape, *in.logits_out);
    terms.outlier = scalar_of(tape, out);
    total = tape.add(total, tape.scale(out, weights.lambda1));
  }
  if (weights.lambda2 > 0.0) {
    if (!in.projection) throw InputError("stage1_loss: lambda2 > 0 needs projections");
    const std::size_t n_in = in.labels_in.size();
    std::vector<int> labels(in.labels_in.begin(), in.labels_in.end());
    labels.resize(n_in + in.n_out, kOodLabel);
    std::vector<Domain> domains(n_in, Domain::kIn);
    domains.resize(n_in + in.n_out, Domain::kOut);
    NodeRef c = pascl_contrastive(tape, *in.projection, labels, domains, spec,
                                  weights.tau, &terms.stats);
    terms.contrastive = scalar_of(tape, c);
    total = tape.add(total, tape.scale(c, weights.lambda2));
  }
  terms.total = total;
  return terms;
}

std::vector<double> msp_ood_score(const TensorBuf& logits) {
  std::vector<double> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - mx);
    out[r] = 1.0 - 1.0 / acc;  // max softmax = exp(mx - lse) = 1 / acc
  }
  return out;
}

std::vector<double> energy_ood_score(const TensorBuf& logits) {
  std::vector<double> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - mx);
    out[r] = -(mx + std::log(acc));
  }
  return out;
}

std::string_view score_name(ScoreFn s) { return s == ScoreFn::kMsp ? "msp" : "energy"; }

ScoreFn parse_score(std::string_view name) {
  if (name == "msp") return ScoreFn::kMsp;
  if (name == "energy") return ScoreFn::kEnergy;
  throw ConfigError("score", "unknown score function '" + std::string(name) + "'");
}

std::vector<double> ood_score(const TensorBuf& logits, ScoreFn fn) {
  return fn == ScoreFn::kMsp ? msp_ood_score(logits) : energy_ood_score(logits);
}

double cross_entropy(const TensorBuf& logits, std::span<const int> labels) {
  Tape tape;
  return scalar_of(tape, cross_entropy(tape, tape.constant(logits), labels));
}

double outlier_uniformity(const TensorBuf& logits) {
  Tape tape;
  return scalar_of(tape, outlier_uniformity(tape, tape.constant(logits)));
}

double pascl_contrastive(const TensorBuf& z, std::span<const int> labels,
                         std::span<const Domain> domains, const ContrastSpec& spec,
                         double tau) {
  Tape tape;
  return scalar_of(tape, pascl_contrastive(tape, tape.constant(z), labels, domains, spec, tau));
}

double logit_adjusted_ce(const TensorBuf& logits, std::span<const int> labels,
                         std::span<const double> priors, double tau_la) {
  Tape tape;
  return scalar_of(tape,
                   logit_adjusted_ce(tape, tape.constant(logits), labels, priors, tau_la));
}

}  // namespace pascl
