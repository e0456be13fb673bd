#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace pascl {

enum class Domain { kIn, kOut };

// Label carried by out-of-distribution examples.
inline constexpr int kOodLabel = -1;

// Which angular gaps receive the OOD clusters: evenly spread around the
// ring, or packed into the gaps between the rarest classes first.
enum class OodPlacement { kSpread, kTail };

struct DataGenConfig {
  std::size_t num_classes = 10;
  std::size_t n_max = 500;
  double rho = 100.0;            // imbalance ratio: largest / smallest class count
  double tail_fraction = 0.5;    // k
  std::size_t dim = 2;
  double id_center_radius = 3.0;
  double id_cluster_std = 0.5;
  std::size_t n_ood_clusters = 10;
  OodPlacement ood_placement = OodPlacement::kSpread;
  double ood_cluster_std = 0.3;
  std::size_t n_ood_train = 1000;
  std::size_t n_test_per_class = 100;
  std::size_t n_ood_test = 1000;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

struct ClassProfile {
  std::vector<std::size_t> counts;
  std::vector<double> priors;   // counts / total
  std::vector<int> tail_set;    // ascending class ids

  std::size_t num_classes() const noexcept { return counts.size(); }
  bool is_tail(int label) const;
  std::size_t total() const;
  double realized_rho() const;
};

struct LabeledExample {
  std::vector<double> features;
  int label = kOodLabel;
  Domain domain = Domain::kOut;
  bool tail = false;
};

struct DatasetSplit {
  std::vector<LabeledExample> train_in;
  std::vector<LabeledExample> train_out;
  std::vector<LabeledExample> test_in;
  std::vector<LabeledExample> test_out;
};

// n_c = max(1, round(n_max * rho^(-c/(C-1)))); a single class gets n_max.
std::vector<std::size_t> longtailed_counts(std::size_t num_classes,
                                           std::size_t n_max, double rho);

// round-half-up(k*C) classes with the smallest counts, smaller id first on
// ties. Returned in ascending id order.
std::vector<int> tail_class_set(const std::vector<std::size_t>& counts,
                                double k);

ClassProfile make_profile(std::vector<std::size_t> counts, double k);

std::pair<ClassProfile, DatasetSplit> generate_synthetic(const DataGenConfig& cfg);

// Indices into DatasetSplit::train_in / train_out for one optimization step.
struct BatchPair {
  std::vector<std::size_t> in;
  std::vector<std::size_t> out;
};

// One epoch: a shuffled pass over train_in in chunks of `batch_in`, each
// paired with `batch_out` OOD indices drawn without replacement from a
// shuffled train_out that is reshuffled whenever it runs dry. A trailing
// chunk of one example is folded into the previous chunk so every batch can
// be batch-normalized. With `with_out` false the out lists stay empty.
std::vector<BatchPair> mixed_batches(const DatasetSplit& split,
                                     std::size_t batch_in,
                                     std::size_t batch_out,
                                     std::uint64_t seed, bool with_out = true);

// CSV: feat_0..feat_{d-1},label,domain,tail with 17 significant digits.
void write_examples_csv(const std::filesystem::path& path,
                        const std::vector<LabeledExample>& examples,
                        std::size_t dim);
std::vector<LabeledExample> read_examples_csv(const std::filesystem::path& path);

// JSON summary: counts, priors, tail_set, requested and realized rho.
void write_profile(const std::filesystem::path& path, const ClassProfile& profile,
                   double requested_rho, double k);
ClassProfile read_profile(const std::filesystem::path& path);

// Data directory layout written by `gen-data`.
void write_dataset(const std::filesystem::path& dir, const ClassProfile& profile,
                   const DatasetSplit& split, const DataGenConfig& cfg);
std::pair<ClassProfile, DatasetSplit> read_dataset(const std::filesystem::path& dir);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace pascl
