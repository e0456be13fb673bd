#include "pascl/longtail.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

std::size_t round_half_up(double x) {
  // The small bias absorbs representation error in products like 0.45 * 10.
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(derive_seed(seed, stream));
}

std::vector<double> on_circle(std::size_t dim, double radius, double angle) {
  std::vector<double> v(dim, 0.0);
  v[0] = radius * std::cos(angle);
  v[1] = radius * std::sin(angle);
  return v;
}

LabeledExample sample_around(const std::vector<double>& center, double stddev,
                             std::mt19937_64& rng) {
  LabeledExample ex;
  ex.features = center;
  if (stddev > 0.0) {
    std::normal_distribution<double> noise(0.0, stddev);
    for (double& v : ex.features) v += noise(rng);
  }
  return ex;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void DataGenConfig::validate() const {
  if (num_classes < 2) throw ConfigError("C", "class count must be at least 2");
  if (n_max < 1) throw ConfigError("n_max", "must be at least 1");
  if (!(rho >= 1.0)) throw ConfigError("rho", "imbalance ratio must be >= 1");
  if (!(tail_fraction >= 0.0 && tail_fraction <= 1.0))
    throw ConfigError("k", "tail fraction must lie in [0, 1]");
  if (dim < 2) throw ConfigError("d", "feature dimension must be at least 2");
  if (!(id_center_radius > 0.0))
    throw ConfigError("id_center_radius", "must be positive");
  if (!(id_cluster_std >= 0.0))
    throw ConfigError("id_cluster_std", "must be non-negative");
  if (n_ood_clusters < 1 || n_ood_clusters > num_classes)
    throw ConfigError("n_ood_clusters", "must lie in [1, C]");
  if (!(ood_cluster_std >= 0.0))
    throw ConfigError("ood_cluster_std", "must be non-negative");
  if (n_ood_train < 1) throw ConfigError("n_ood_train", "must be positive");
  if (n_test_per_class < 1) throw ConfigError("n_test_per_class", "must be positive");
  if (n_ood_test < 1) throw ConfigError("n_ood_test", "must be positive");
}

bool ClassProfile::is_tail(int label) const {
  return std::binary_search(tail_set.begin(), tail_set.end(), label);
}

std::size_t ClassProfile::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

double ClassProfile::realized_rho() const {
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

std::vector<std::size_t> longtailed_counts(std::size_t num_classes,
                                           std::size_t n_max, double rho) {
  if (num_classes < 1) throw InputError("longtailed_counts: C must be >= 1");
  if (n_max < 1) throw InputError("longtailed_counts: n_max must be >= 1");
  if (!(rho >= 1.0)) throw InputError("longtailed_counts: rho must be >= 1");
  if (num_classes == 1) return {n_max};
  std::vector<std::size_t> counts(num_classes);
  const double denom = static_cast<double>(num_classes - 1);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double n = static_cast<double>(n_max) *
                     std::pow(rho, -static_cast<double>(c) / denom);
    counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
  }
  return counts;
}

std::vector<int> tail_class_set(const std::vector<std::size_t>& counts, double k) {
  if (!(k >= 0.0 && k <= 1.0)) throw InputError("tail_class_set: k must lie in [0, 1]");
  const std::size_t m =
      std::min(counts.size(), round_half_up(k * static_cast<double>(counts.size())));
  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return counts[a] < counts[b]; });
  std::vector<int> tail(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(tail.begin(), tail.end());
  return tail;
}

ClassProfile make_profile(std::vector<std::size_t> counts, double k) {
  ClassProfile p;
  p.tail_set = tail_class_set(counts, k);
  const double total = static_cast<double>(
      std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  p.priors.reserve(counts.size());
  for (std::size_t n : counts) p.priors.push_back(static_cast<double>(n) / total);
  p.counts = std::move(counts);
  return p;
}

std::pair<ClassProfile, DatasetSplit> generate_synthetic(const DataGenConfig& cfg) {
  if (cfg.dim < 2) throw InputError("generate_synthetic: dimension must be >= 2");
  cfg.validate();
  ClassProfile profile =
      make_profile(longtailed_counts(cfg.num_classes, cfg.n_max, cfg.rho),
                   cfg.tail_fraction);

  const double step = 2.0 * std::numbers::pi / static_cast<double>(cfg.num_classes);
  std::vector<std::vector<double>> centers, ood_centers;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    centers.push_back(on_circle(cfg.dim, cfg.id_center_radius, step * static_cast<double>(c)));
  }
  // Gap g lies between classes g and g+1 (mod C). Spread: cluster j takes
  // gap floor(j*C/n_ood). Tail: gaps C-2, C-3, ... then C-1, i.e. between
  // the rarest classes first.
  for (std::size_t j = 0; j < cfg.n_ood_clusters; ++j) {
    const std::size_t C = cfg.num_classes;
    const std::size_t gap = cfg.ood_placement == OodPlacement::kSpread
                                ? j * C / cfg.n_ood_clusters
                                : (2 * C - 2 - j) % C;
    ood_centers.push_back(on_circle(cfg.dim, cfg.id_center_radius,
                                    step * (static_cast<double>(gap) + 0.5)));
  }

  auto draw_in = [&](std::uint64_t stream, auto per_class) {
    std::mt19937_64 rng = make_rng(cfg.seed, stream);
    std::vector<LabeledExample> out;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      for (std::size_t i = 0; i < per_class(c); ++i) {
        LabeledExample ex = sample_around(centers[c], cfg.id_cluster_std, rng);
        ex.label = static_cast<int>(c);
        ex.domain = Domain::kIn;
        ex.tail = profile.is_tail(ex.label);
        out.push_back(std::move(ex));
      }
    }
    return out;
  };
  auto draw_out = [&](std::uint64_t stream, std::size_t n) {
    std::mt19937_64 rng = make_rng(cfg.seed, stream);
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < n; ++i) {
      LabeledExample ex =
          sample_around(ood_centers[i % cfg.n_ood_clusters], cfg.ood_cluster_std, rng);
      ex.label = kOodLabel;
      ex.domain = Domain::kOut;
      ex.tail = false;
      out.push_back(std::move(ex));
    }
    return out;
  };

  DatasetSplit split;
  split.train_in = draw_in(1, [&](std::size_t c) { return profile.counts[c]; });
  split.train_out = draw_out(2, cfg.n_ood_train);
  split.test_in = draw_in(3, [&](std::size_t) { return cfg.n_test_per_class; });
  split.test_out = draw_out(4, cfg.n_ood_test);
  return {std::move(profile), std::move(split)};
}

std::vector<BatchPair> mixed_batches(const DatasetSplit& split,
                                     std::size_t batch_in, std::size_t batch_out,
                                     std::uint64_t seed, bool with_out) {
  if (batch_in < 1 || (with_out && batch_out < 1)) {
    throw InputError("mixed_batches: batch sizes must be >= 1");
  }
  if (with_out && split.train_out.empty()) {
    throw ConfigError("train_out", "OOD training set is empty but an OOD loss term is active");
  }
  if (split.train_in.empty()) throw InputError("mixed_batches: empty train_in");

  std::mt19937_64 rng(derive_seed(seed, 0x6d697865));
  std::vector<std::size_t> in_order(split.train_in.size());
  std::iota(in_order.begin(), in_order.end(), std::size_t{0});
  std::shuffle(in_order.begin(), in_order.end(), rng);

  std::vector<BatchPair> batches;
  for (std::size_t start = 0; start < in_order.size(); start += batch_in) {
    const std::size_t stop = std::min(in_order.size(), start + batch_in);
    if (stop - start == 1 && !batches.empty()) {
      batches.back().in.push_back(in_order[start]);
      break;
    }
    BatchPair pair;
    pair.in.assign(in_order.begin() + static_cast<std::ptrdiff_t>(start),
                   in_order.begin() + static_cast<std::ptrdiff_t>(stop));
    batches.push_back(std::move(pair));
  }

  if (with_out) {
    std::vector<std::size_t> out_order(split.train_out.size());
    std::iota(out_order.begin(), out_order.end(), std::size_t{0});
    std::size_t cursor = out_order.size();
    for (BatchPair& pair : batches) {
      for (std::size_t i = 0; i < batch_out; ++i) {
        if (cursor == out_order.size()) {
          std::shuffle(out_order.begin(), out_order.end(), rng);
          cursor = 0;
        }
        pair.out.push_back(out_order[cursor++]);
      }
    }
  }
  return batches;
}

void write_examples_csv(const std::filesystem::path& path,
                        const std::vector<LabeledExample>& examples,
                        std::size_t dim) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < dim; ++i) os << "feat_" << i << ',';
  os << "label,domain,tail\n";
  for (const LabeledExample& ex : examples) {
    if (ex.features.size() != dim) throw InputError("write_examples_csv: ragged features");
    for (double v : ex.features) os << format_double(v) << ',';
    if (ex.domain == Domain::kOut) {
      os << "OOD,OUT,";
    } else {
      os << ex.label << ",IN,";
    }
    os << (ex.tail ? 1 : 0) << '\n';
  }
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<LabeledExample> read_examples_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + ": missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 5 || header[header.size() - 3] != "label" ||
      header[header.size() - 2] != "domain" || header.back() != "tail") {
    throw DataError(path.string() + ": unexpected header");
  }
  const std::size_t dim = header.size() - 3;
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[i] != "feat_" + std::to_string(i)) {
      throw DataError(path.string() + ": unexpected header column " + header[i]);
    }
  }

  std::vector<LabeledExample> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) throw DataError(where + ": wrong column count");
    LabeledExample ex;
    ex.features.reserve(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      char* end = nullptr;
      const double v = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0') throw DataError(where + ": bad number");
      ex.features.push_back(v);
    }
    const std::string& domain = cells[dim + 1];
    if (domain == "OUT") {
      if (cells[dim] != "OOD") throw DataError(where + ": OUT row must have label OOD");
      ex.domain = Domain::kOut;
      ex.label = kOodLabel;
    } else if (domain == "IN") {
      ex.domain = Domain::kIn;
      try {
        ex.label = std::stoi(cells[dim]);
      } catch (const std::exception&) {
        throw DataError(where + ": bad label");
      }
      if (ex.label < 0) throw DataError(where + ": negative label");
    } else {
      throw DataError(where + ": domain must be IN or OUT");
    }
    if (cells[dim + 2] != "0" && cells[dim + 2] != "1") {
      throw DataError(where + ": tail must be 0 or 1");
    }
    ex.tail = cells[dim + 2] == "1";
    if (ex.domain == Domain::kOut && ex.tail) throw DataError(where + ": OOD row flagged tail");
    out.push_back(std::move(ex));
  }
  return out;
}

void write_profile(const std::filesystem::path& path, const ClassProfile& profile,
                   double requested_rho, double k) {
  nlohmann::ordered_json j;
  j["format"] = "pascl-profile";
  j["version"] = 1;
  j["num_classes"] = profile.num_classes();
  j["counts"] = profile.counts;
  j["priors"] = profile.priors;
  j["k"] = k;
  j["tail_set"] = profile.tail_set;
  j["requested_rho"] = requested_rho;
  j["realized_rho"] = profile.realized_rho();
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

ClassProfile read_profile(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(is);
    if (j.at("format") != "pascl-profile" || j.at("version") != 1) {
      throw DataError(path.string() + ": unsupported profile format");
    }
    ClassProfile p;
    p.counts = j.at("counts").get<std::vector<std::size_t>>();
    p.priors = j.at("priors").get<std::vector<double>>();
    p.tail_set = j.at("tail_set").get<std::vector<int>>();
    if (p.counts.size() != p.priors.size()) {
      throw DataError(path.string() + ": counts/priors length mismatch");
    }
    std::sort(p.tail_set.begin(), p.tail_set.end());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_dataset(const std::filesystem::path& dir, const ClassProfile& profile,
                   const DatasetSplit& split, const DataGenConfig& cfg) {
  std::filesystem::create_directories(dir);
  write_examples_csv(dir / "train_in.csv", split.train_in, cfg.dim);
  write_examples_csv(dir / "train_out.csv", split.train_out, cfg.dim);
  write_examples_csv(dir / "test_in.csv", split.test_in, cfg.dim);
  write_examples_csv(dir / "test_out.csv", split.test_out, cfg.dim);
  write_profile(dir / "profile.json", profile, cfg.rho, cfg.tail_fraction);
}

std::pair<ClassProfile, DatasetSplit> read_dataset(const std::filesystem::path& dir) {
  ClassProfile profile = read_profile(dir / "profile.json");
  DatasetSplit split;
  split.train_in = read_examples_csv(dir / "train_in.csv");
  split.train_out = read_examples_csv(dir / "train_out.csv");
  split.test_in = read_examples_csv(dir / "test_in.csv");
  split.test_out = read_examples_csv(dir / "test_out.csv");
  for (const auto* part : {&split.train_in, &split.test_in}) {
    for (const LabeledExample& ex : *part) {
      if (ex.domain != Domain::kIn ||
          static_cast<std::size_t>(ex.label) >= profile.num_classes()) {
        throw DataError("in-distribution file holds a label outside the profile");
      }
    }
  }
  for (const auto* part : {&split.train_out, &split.test_out}) {
    for (const LabeledExample& ex : *part) {
      if (ex.domain != Domain::kOut) throw DataError("OOD file holds an IN row");
    }
  }
  return {std::move(profile), std::move(split)};
}

}  // namespace pascl
