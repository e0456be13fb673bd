#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pascl {

// Detector output for one test example. Higher score = more OOD; OOD is the
// positive class. Class fields are ignored for OOD examples.
struct ScoredExample {
  double score = 0.0;
  bool is_ood = false;
  int pred_class = 0;
  int true_class = 0;
};

// Accuracies over an empty set are undefined rather than 0.
using MaybeRate = std::optional<double>;

inline constexpr std::array<double, 4> kTprTargets = {0.98, 0.95, 0.90, 0.80};
inline constexpr std::array<double, 4> kFprTargets = {0.0, 0.001, 0.01, 0.1};

// Mann-Whitney: (#{s_o > s_i} + 0.5 #{s_o = s_i}) / (N_ood N_in).
double auroc(std::span<const ScoredExample> examples);

// Step-wise average precision with OOD as positives. Ties in score are
// ordered in-distribution first.
double aupr(std::span<const ScoredExample> examples);

// The largest threshold t* whose OOD recall #{OOD: s >= t}/N_ood reaches n.
// Throws InputError when there is no OOD example or n is outside (0, 1].
double tpr_threshold(std::span<const ScoredExample> examples, double n);

// #{IN: s >= t*} / N_in.
double fpr_at_tpr(std::span<const ScoredExample> examples, double n);

// Accuracy over in-distribution examples with s < t*.
MaybeRate acc_at_tpr(std::span<const ScoredExample> examples, double n);

// n = 0: accuracy over every in-distribution example. n > 0: the
// ceil(n N_in) highest-scoring in-distribution examples (stable on ties)
// are rejected and accuracy is taken over the rest.
MaybeRate acc_at_fpr(std::span<const ScoredExample> examples, double n);

struct HeadTailAccuracy {
  MaybeRate head;
  MaybeRate tail;
};
HeadTailAccuracy head_tail_accuracy(std::span<const ScoredExample> examples,
                                    std::span<const int> tail_set);

struct MetricsReport {
  double auroc = 0.0;
  double aupr = 0.0;
  std::array<double, 4> fpr_at_tpr{};    // keyed by kTprTargets
  std::array<MaybeRate, 4> acc_at_tpr{};  // keyed by kTprTargets
  std::array<MaybeRate, 4> acc_at_fpr{};  // keyed by kFprTargets
  MaybeRate acc_head;
  MaybeRate acc_tail;
  // provenance
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string score_fn;
  bool abf = false;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport compute_report(std::span<const ScoredExample> examples,
                             std::span<const int> tail_set);

inline constexpr int kMetricsFormatVersion = 1;

// Fixed column order; undefined values are written as NA, numbers with 17
// significant digits.
std::vector<std::string> metrics_csv_columns();
std::vector<std::string> metrics_csv_values(const MetricsReport& r);
std::string format_rate(const MaybeRate& v);
std::string format_real(double v);

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& r);
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& r);
MetricsReport read_metrics_json(const std::filesystem::path& path);

// Human-readable percentages: AUROC, AUPR, FPR@TPR n, ACC@TPR n, ACC@FPR n,
// head/tail accuracy.
std::string format_metrics_table(const MetricsReport& r);

}  // namespace pascl
