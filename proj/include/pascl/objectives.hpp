#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pascl/longtail.hpp"
#include "pascl/tape.hpp"
#include "pascl/tensor.hpp"

namespace pascl {

struct LossWeights {
  double lambda1 = 0.5;  // outlier-uniformity weight
  double lambda2 = 0.1;  // contrastive weight
  double tau = 0.1;      // contrastive temperature
  double tau_la = 1.0;   // logit-adjustment strength
  std::size_t num_classes = 10;

  void validate() const;
};

// Which samples are anchors (I) and which populate the contrast set A(x).
//   SCL_IN      I = D_in             A = D_in \ {x}
//   SCL_ALL     I = D_in u D_out     A = (D_in u D_out) \ {x}, OOD = extra class
//   PARTIAL     I = D_tail u D_out   A = (D_tail u D_out) \ {x}, OOD = extra class
//   ASYMMETRIC  I = D_in             A = (D_in u D_out) \ {x}
//   PASCL       I = D_tail           A = (D_tail u D_out) \ {x}
enum class ContrastVariant { kSclIn, kSclAll, kPartial, kAsymmetric, kPascl };

std::string_view variant_name(ContrastVariant v);  // "scl_in", ..., "pascl"
ContrastVariant parse_variant(std::string_view name);  // throws ConfigError

struct ContrastSpec {
  ContrastVariant variant = ContrastVariant::kPascl;
  std::vector<int> tail_set;  // ascending class ids

  bool is_tail(int label) const;
};

// Counts of what actually entered the contrastive term.
struct ContrastStats {
  std::size_t anchors = 0;
  std::size_t participants = 0;  // rows that reached the similarity matrix
  std::size_t head_participants = 0;
  std::size_t tail_participants = 0;
  std::size_t ood_participants = 0;

  ContrastStats& operator+=(const ContrastStats& o);
};

// mean over the batch of -log_softmax(logits)[label].
NodeRef cross_entropy(Tape& tape, NodeRef logits, std::span<const int> labels);

// mean over the batch of logsumexp(l) - mean(l): cross-entropy from the
// uniform target to softmax(l). Minimum ln C at equal logits.
NodeRef outlier_uniformity(Tape& tape, NodeRef logits);

// Supervised contrastive loss on unit rows `z` with anchors and contrast
// sets chosen by `spec`. Anchors whose positive set is empty are skipped;
// with no qualifying anchor the loss is the constant 0. OOD rows never read
// their label: under SCL_ALL/PARTIAL they all share one pseudo-class, under
// ASYMMETRIC/PASCL they are neither anchors nor positives.
NodeRef pascl_contrastive(Tape& tape, NodeRef z, std::span<const int> labels,
                          std::span<const Domain> domains, const ContrastSpec& spec,
                          double tau, ContrastStats* stats = nullptr);

// cross_entropy on l'_y = l_y + tau_la * ln(prior_y).
NodeRef logit_adjusted_ce(Tape& tape, NodeRef logits, std::span<const int> labels,
                          std::span<const double> priors, double tau_la);

struct Stage1Inputs {
  NodeRef logits_in;
  std::optional<NodeRef> logits_out;   // required when lambda1 > 0
  std::optional<NodeRef> projection;   // in rows then out rows; required when lambda2 > 0
  std::span<const int> labels_in;
  std::size_t n_out = 0;
};

struct Stage1Terms {
  NodeRef total;
  double cross_entropy = 0.0;
  double outlier = 0.0;
  double contrastive = 0.0;
  ContrastStats stats;
};

// CE(in) + lambda1 * outlier_uniformity(out) + lambda2 * contrastive(in u out).
// Each expectation is the mean over its own batch.
Stage1Terms stage1_loss(Tape& tape, const Stage1Inputs& in, const ContrastSpec& spec,
                        const LossWeights& weights);

// 1 - max softmax(l); higher = more OOD.
std::vector<double> msp_ood_score(const TensorBuf& logits);
// -logsumexp(l); higher = more OOD.
std::vector<double> energy_ood_score(const TensorBuf& logits);

enum class ScoreFn { kMsp, kEnergy };
std::string_view score_name(ScoreFn s);
ScoreFn parse_score(std::string_view name);
std::vector<double> ood_score(const TensorBuf& logits, ScoreFn fn);

// Value-level conveniences (no gradients).
double cross_entropy(const TensorBuf& logits, std::span<const int> labels);
double outlier_uniformity(const TensorBuf& logits);
double pascl_contrastive(const TensorBuf& z, std::span<const int> labels,
                         std::span<const Domain> domains, const ContrastSpec& spec,
                         double tau);
double logit_adjusted_ce(const TensorBuf& logits, std::span<const int> labels,
                         std::span<const double> priors, double tau_la);

}  // namespace pascl
