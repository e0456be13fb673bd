#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pascl/config.hpp"
#include "pascl/dualnet.hpp"
#include "pascl/longtail.hpp"
#include "pascl/metrics.hpp"
#include "pascl/objectives.hpp"

namespace pascl {

// Adam or SGD with momentum over named parameters.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double momentum = 0.9);
  void step(TensorBuf& param, const std::string& name, const std::vector<double>& grad,
            double lr);

 private:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
  };
  OptimizerKind kind_;
  double momentum_;
  std::map<std::string, Slot> slots_;
};

// Learning rate at `step` of `total` steps.
double scheduled_lr(Schedule s, double base, std::size_t step, std::size_t total);

struct EpochLoss {
  int stage = 1;
  std::size_t epoch = 0;
  double loss = 0.0;  // mean over the epoch's steps
  double cross_entropy = 0.0;
  double outlier = 0.0;
  double contrastive = 0.0;

  friend bool operator==(const EpochLoss&, const EpochLoss&) = default;
};

// Instrumentation collected while training.
struct TrainStats {
  ContrastStats contrast;
  std::size_t stage1_steps = 0;
  std::size_t stage2_steps = 0;
  std::size_t stage2_examples = 0;
  std::size_t stage2_ood_examples = 0;
  // Epochs finished so far, both stages; survives a divergence.
  std::vector<EpochLoss> completed;
};

// Stage 1: n1 epochs of mixed in/out batches through the MAIN branch in
// TRAIN mode (in and out rows share one batch-norm pass), minimizing
// stage1_loss over the stage-1 parameters. The OOD batch is only drawn when
// lambda1 or lambda2 is positive. Throws NumericError on divergence.
std::vector<EpochLoss> run_stage1(DualBranchNetwork& net, const DatasetSplit& split,
                                  const ClassProfile& profile, const TrainConfig& cfg,
                                  TrainStats* stats = nullptr);

// Stage 2: clones AUX from MAIN, then n2 epochs of in-distribution batches
// through AUX in TRAIN mode minimizing logit-adjusted cross-entropy over the
// stage-2 parameters only. n2 = 0 leaves the network untouched.
std::vector<EpochLoss> run_stage2(DualBranchNetwork& net, const DatasetSplit& split,
                                  const ClassProfile& profile, const TrainConfig& cfg,
                                  TrainStats* stats = nullptr);

// Scores test_in u test_out with MAIN-branch EVAL logits; predicted classes
// come from AUX when abf_enabled, else from MAIN.
MetricsReport evaluate(const DualBranchNetwork& net, const DatasetSplit& split,
                       const ClassProfile& profile, ScoreFn score, bool abf_enabled);

struct RunRecord {
  ExperimentConfig config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<EpochLoss> trace;
  // msp then energy; each abf off, then abf on when stage 2 ran.
  std::vector<MetricsReport> reports;
  TrainStats stats;
  double wall_seconds = 0.0;  // not part of the serialized record

  const MetricsReport& report(ScoreFn score, bool abf) const;
};

struct RunOutputs {
  RunRecord record;
  DualBranchNetwork net;
};

// Full two-stage run on given data. When `live` is given, instrumentation
// accumulates there as training proceeds (and is still readable after a
// NumericError); the record receives a copy.
RunOutputs run_experiment(const ExperimentConfig& cfg, const DatasetSplit& split,
                          const ClassProfile& profile, TrainStats* live = nullptr);
// Generates the synthetic data from cfg.data first.
RunOutputs run_experiment(const ExperimentConfig& cfg, TrainStats* live = nullptr);

// Run-identifying columns followed by metrics_csv_columns().
std::vector<std::string> record_csv_columns();
std::vector<std::vector<std::string>> record_csv_rows(const RunRecord& r,
                                                      const std::string& cell = "run");
void write_record_csv(const std::filesystem::path& path, const RunRecord& r,
                      const std::string& cell = "run");
void write_record_json(const std::filesystem::path& path, const RunRecord& r);
void write_loss_trace(const std::filesystem::path& path, const std::vector<EpochLoss>& trace);

// One row per example: h(x) coordinates, label, domain, tail.
std::string embeddings_csv(const DualBranchNetwork& net,
                           const std::vector<LabeledExample>& examples, Branch branch);
void export_embeddings(const DualBranchNetwork& net, const std::vector<LabeledExample>& examples,
                       Branch branch, const std::filesystem::path& path);

TensorBuf features_of(const std::vector<LabeledExample>& examples);

}  // namespace pascl
