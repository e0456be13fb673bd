#pragma once

#include <cstddef>
#include <string_view>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pascl/tape.hpp"
#include "pascl/tensor.hpp"

namespace pascl {

// Which parameters stage 2 finetunes.
enum class AbfScope { kBnClf, kClfOnly, kAllLayers };
std::string_view abf_scope_name(AbfScope s);
AbfScope parse_abf_scope(std::string_view name);  // throws ConfigError


enum class Branch { kMain, kAux };
enum class Mode { kTrain, kEval };

struct BNParams {
  TensorBuf gamma;
  TensorBuf beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  // gamma = 1, beta = 0, running mean 0, running variance 1.
  static BNParams identity(std::size_t features, double eps = 1e-5,
                           double momentum = 0.1);
  std::size_t features() const noexcept { return running_mean.size(); }
  // r <- (1 - m) r + m * batch statistic.
  void update_running(const std::vector<double>& batch_mean,
                      const std::vector<double>& batch_var_unbiased);
};

struct BatchStatistics {
  std::vector<double> mean;
  std::vector<double> var_biased;
  std::vector<double> var_unbiased;
};

BatchStatistics batch_statistics(const TensorBuf& x);

// Standalone batch normalization on values. TRAIN normalizes with the
// biased batch variance and momentum-updates the running statistics (with
// the unbiased variance); EVAL uses the running statistics and leaves
// `params` untouched. TRAIN needs at least two rows.
TensorBuf batchnorm(const TensorBuf& x, BNParams& params, Mode mode);

struct Affine {
  TensorBuf weight;  // [in, out]
  TensorBuf bias;    // [out]
};

struct NetConfig {
  std::size_t input_dim = 2;
  std::size_t width = 64;
  std::size_t num_blocks = 3;
  std::size_t proj_dim = 16;
  std::size_t num_classes = 10;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct Block {
  Affine affine;  // shared by both branches
  BNParams bn_main;
  BNParams bn_aux;
};

struct ForwardOutputs {
  TensorBuf logits;       // f(x)
  TensorBuf penultimate;  // h(x)
  TensorBuf projection;   // z(x), unit rows
};

struct ForwardNodes {
  NodeRef logits;
  NodeRef penultimate;
  NodeRef projection;
  bool has_projection = false;
};

// Parameter name -> tape node it was bound to.
using ParamBinding = std::map<std::string, NodeRef>;

// Feed-forward encoder of `num_blocks` x (affine -> BN -> relu). The affines
// and the projection head are shared; every BN layer and the classifier
// exist twice, once per branch. The penultimate features h(x) are the
// post-activation output of the last block; the projection head
// (affine -> relu -> affine -> l2 normalize) reads h(x) and feeds only the
// contrastive loss.
class DualBranchNetwork {
 public:
  DualBranchNetwork(NetConfig cfg, std::uint64_t seed);

  const NetConfig& config() const noexcept { return cfg_; }
  bool aux_initialized() const noexcept { return aux_initialized_; }
  // Completed stage-1 epochs; stage 2 refuses to start while this is 0.
  std::size_t stage1_epochs() const noexcept { return stage1_epochs_; }
  void record_stage1_epoch() noexcept { ++stage1_epochs_; }

  // TRAIN mode mutates the active branch's running statistics only.
  ForwardOutputs forward(const TensorBuf& batch, Branch branch, Mode mode);
  // EVAL-mode forward; never mutates state.
  ForwardOutputs infer(const TensorBuf& batch, Branch branch) const;

  struct TapeOptions {
    Mode mode = Mode::kEval;
    bool with_projection = true;
    // Names bound as tape parameters; all other tensors enter as constants.
    const std::vector<std::string>* trainable = nullptr;
    ParamBinding* binding = nullptr;
  };
  ForwardNodes forward_on_tape(Tape& tape, NodeRef input, Branch branch,
                               const TapeOptions& opts);

  // bn_aux := bn_main and clf_aux := clf_main; marks AUX usable.
  void clone_aux_from_main();

  // Stage 1: shared affines, bn_main gamma/beta, projection head, clf_main.
  // Stage 2 by scope: bn_aux gamma/beta and clf_aux (kBnClf), clf_aux alone
  // (kClfOnly), or those plus the shared affines (kAllLayers, which gives up
  // main-branch isolation). Canonical order.
  std::vector<std::string> trainable_parameters(int stage,
                                                AbfScope scope = AbfScope::kBnClf) const;

  // All learnable tensor names in canonical order.
  std::vector<std::string> parameter_names() const;
  TensorBuf& parameter(const std::string& name);
  const TensorBuf& parameter(const std::string& name) const;

  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  std::vector<Block>& blocks() noexcept { return blocks_; }
  const Affine& classifier(Branch b) const {
    return b == Branch::kMain ? clf_main_ : clf_aux_;
  }
  const Affine& projection_layer(std::size_t i) const { return proj_.at(i); }

  // FNV-1a over every stage-1 parameter and every bn_main running statistic.
  std::uint64_t main_state_hash() const;
  // FNV-1a over the complete state, both branches included.
  std::uint64_t full_state_hash() const;

  // Squared L2 distance between the main and aux BN + classifier tensors.
  double branch_distance() const;

  void save(const std::filesystem::path& path) const;
  static DualBranchNetwork load(const std::filesystem::path& path);

  friend bool operator==(const DualBranchNetwork& a, const DualBranchNetwork& b);

 private:
  DualBranchNetwork() = default;
  void check_branch(Branch b) const;
  std::vector<std::pair<std::string, const std::vector<double>*>> all_vectors() const;

  NetConfig cfg_;
  std::vector<Block> blocks_;
  std::vector<Affine> proj_;  // two layers
  Affine clf_main_;
  Affine clf_aux_;
  bool aux_initialized_ = false;
  std::size_t stage1_epochs_ = 0;
};

inline constexpr int kCheckpointVersion = 1;

}  // namespace pascl
