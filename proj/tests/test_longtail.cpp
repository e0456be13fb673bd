#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "pascl/errors.hpp"
#include "pascl/longtail.hpp"

using namespace pascl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pascl_longtail_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

DataGenConfig small_config() {
  DataGenConfig c;
  c.n_max = 60;
  c.rho = 10;
  c.n_ood_train = 50;
  c.n_test_per_class = 5;
  c.n_ood_test = 20;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(LongtailedCounts, TwoClassEndpoints) {
  EXPECT_EQ(longtailed_counts(2, 100, 100), (std::vector<std::size_t>{100, 1}));
}

TEST(LongtailedCounts, ThreeClassProfile) {
  EXPECT_EQ(longtailed_counts(3, 100, 100), (std::vector<std::size_t>{100, 10, 1}));
}

TEST(LongtailedCounts, BalancedWhenRhoIsOne) {
  EXPECT_EQ(longtailed_counts(10, 500, 1), std::vector<std::size_t>(10, 500));
}

TEST(LongtailedCounts, SingleClassGetsNMax) {
  EXPECT_EQ(longtailed_counts(1, 42, 7), std::vector<std::size_t>{42});
}

TEST(LongtailedCounts, RhoBelowOneRejected) {
  EXPECT_THROW(longtailed_counts(10, 500, 0.5), InputError);
}

TEST(LongtailedCounts, NonIncreasingAndPositive) {
  for (std::size_t C : {2u, 3u, 10u, 100u}) {
    for (double rho : {1.0, 2.5, 10.0, 50.0, 100.0, 1000.0}) {
      const auto counts = longtailed_counts(C, 200, rho);
      ASSERT_EQ(counts.size(), C);
      for (std::size_t i = 0; i < C; ++i) {
        EXPECT_GE(counts[i], 1u);
        if (i > 0) EXPECT_LE(counts[i], counts[i - 1]);
      }
    }
  }
}

// The realized ratio stays within rounding slack of rho. The one-sided
// upper bound does not survive rounding of the smallest class (e.g.
// n_max=140, rho=100 gives [140, ..., 1]), so the slack is two-sided.
TEST(LongtailedCounts, RealizedRatioWithinRoundingSlack) {
  for (std::size_t C : {2u, 10u, 100u}) {
    for (double rho : {1.0, 10.0, 50.0, 100.0}) {
      for (std::size_t n_max : {100u, 140u, 500u, 5000u}) {
        if (n_max < rho) continue;
        const auto counts = longtailed_counts(C, n_max, rho);
        const double mn = static_cast<double>(*std::min_element(counts.begin(), counts.end()));
        const double ratio = static_cast<double>(counts.front()) / mn;
        EXPECT_LE(std::abs(ratio - rho), rho * 2.0 / mn + 1e-9)
            << "C=" << C << " rho=" << rho << " n_max=" << n_max;
      }
    }
  }
}

TEST(TailClassSet, HalfOfTenClasses) {
  const auto counts = longtailed_counts(10, 500, 100);
  EXPECT_EQ(tail_class_set(counts, 0.5), (std::vector<int>{5, 6, 7, 8, 9}));
}

TEST(TailClassSet, EmptyAtZero) {
  EXPECT_TRUE(tail_class_set({100, 10, 1}, 0.0).empty());
}

TEST(TailClassSet, RoundsHalfUp) {
  EXPECT_EQ(tail_class_set({100, 10, 1}, 0.5), (std::vector<int>{1, 2}));
}

TEST(TailClassSet, TiesBrokenBySmallerId) {
  EXPECT_EQ(tail_class_set({5, 5, 5, 5}, 0.5), (std::vector<int>{0, 1}));
  EXPECT_EQ(tail_class_set({9, 3, 3, 3}, 0.25), (std::vector<int>{1}));
}

TEST(TailClassSet, SizeMatchesRoundHalfUpAcrossGrid) {
  for (std::size_t C : {2u, 3u, 5u, 10u, 100u}) {
    const auto counts = longtailed_counts(C, 500, 100);
    for (double k : {0.0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 1.0}) {
      const auto tail = tail_class_set(counts, k);
      const std::size_t expect =
          static_cast<std::size_t>(std::floor(k * static_cast<double>(C) + 0.5 + 1e-9));
      EXPECT_EQ(tail.size(), expect) << "C=" << C << " k=" << k;
      EXPECT_TRUE(std::is_sorted(tail.begin(), tail.end()));
      const std::set<int> s(tail.begin(), tail.end());
      for (std::size_t a = 0; a < C; ++a) {
        for (std::size_t b = 0; b < C; ++b) {
          if (s.count(static_cast<int>(a)) && !s.count(static_cast<int>(b))) {
            EXPECT_LE(counts[a], counts[b]);
          }
        }
      }
    }
  }
}

TEST(ClassProfile, PriorsSumToOne) {
  for (std::size_t C : {2u, 10u, 100u}) {
    for (double rho : {1.0, 10.0, 50.0, 100.0}) {
      const ClassProfile p = make_profile(longtailed_counts(C, 500, rho), 0.5);
      const double s = std::accumulate(p.priors.begin(), p.priors.end(), 0.0);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(DataGenConfig, ValidationNamesTheKey) {
  DataGenConfig c;
  c.rho = 0.5;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "rho");
  }
  c = DataGenConfig{};
  c.tail_fraction = 1.5;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "k");
  }
  c = DataGenConfig{};
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(GenerateSynthetic, RejectsOneDimension) {
  DataGenConfig c = small_config();
  c.dim = 1;
  EXPECT_ANY_THROW(generate_synthetic(c));
}

TEST(GenerateSynthetic, SameSeedIsBitIdentical) {
  const auto a = generate_synthetic(small_config());
  const auto b = generate_synthetic(small_config());
  ASSERT_EQ(a.second.train_in.size(), b.second.train_in.size());
  for (std::size_t i = 0; i < a.second.train_in.size(); ++i) {
    EXPECT_EQ(a.second.train_in[i].features, b.second.train_in[i].features);
  }
  for (std::size_t i = 0; i < a.second.test_out.size(); ++i) {
    EXPECT_EQ(a.second.test_out[i].features, b.second.test_out[i].features);
  }
}

TEST(GenerateSynthetic, DifferentSeedsDiffer) {
  DataGenConfig c = small_config();
  const auto a = generate_synthetic(c);
  c.seed = 4;
  const auto b = generate_synthetic(c);
  EXPECT_NE(a.second.train_in[0].features, b.second.train_in[0].features);
}

TEST(GenerateSynthetic, SplitSizesAndInvariants) {
  DataGenConfig c;
  const auto [profile, split] = generate_synthetic(c);
  const std::size_t total = std::accumulate(profile.counts.begin(), profile.counts.end(),
                                            std::size_t{0});
  EXPECT_EQ(split.train_in.size(), total);
  std::vector<std::size_t> seen(c.num_classes, 0), test_seen(c.num_classes, 0);
  for (const auto& ex : split.train_in) {
    ASSERT_EQ(ex.domain, Domain::kIn);
    ASSERT_EQ(ex.features.size(), c.dim);
    ++seen[static_cast<std::size_t>(ex.label)];
    EXPECT_EQ(ex.tail, profile.is_tail(ex.label));
  }
  EXPECT_EQ(seen, profile.counts);
  for (const auto& ex : split.test_in) ++test_seen[static_cast<std::size_t>(ex.label)];
  EXPECT_EQ(test_seen, std::vector<std::size_t>(c.num_classes, c.n_test_per_class));
  EXPECT_EQ(split.train_out.size(), c.n_ood_train);
  EXPECT_EQ(split.test_out.size(), c.n_ood_test);
  for (const auto* part : {&split.train_out, &split.test_out}) {
    for (const auto& ex : *part) {
      EXPECT_EQ(ex.domain, Domain::kOut);
      EXPECT_EQ(ex.label, kOodLabel);
      EXPECT_FALSE(ex.tail);
    }
  }
}

TEST(GenerateSynthetic, ZeroStdPutsSamplesOnCenters) {
  DataGenConfig c = small_config();
  c.id_cluster_std = 0.0;
  c.ood_cluster_std = 0.0;
  c.dim = 3;
  const auto [profile, split] = generate_synthetic(c);
  const double step = 2.0 * std::acos(-1.0) / static_cast<double>(c.num_classes);
  for (const auto& ex : split.train_in) {
    const double a = step * ex.label;
    EXPECT_NEAR(ex.features[0], c.id_center_radius * std::cos(a), 1e-12);
    EXPECT_NEAR(ex.features[1], c.id_center_radius * std::sin(a), 1e-12);
    EXPECT_EQ(ex.features[2], 0.0);
  }
  // OOD centers sit at angular midpoints on the same radius.
  for (const auto& ex : split.train_out) {
    const double r = std::hypot(ex.features[0], ex.features[1]);
    EXPECT_NEAR(r, c.id_center_radius, 1e-12);
    const double ang = std::atan2(ex.features[1], ex.features[0]);
    const double units = ang / step;
    EXPECT_NEAR(units - std::floor(units), 0.5, 1e-9);
  }
}

TEST(GenerateSynthetic, TailPlacementUsesGapsBetweenRarestClasses) {
  DataGenConfig c = small_config();
  c.ood_cluster_std = 0.0;
  c.n_ood_clusters = 3;
  c.ood_placement = OodPlacement::kTail;
  const auto [profile, split] = generate_synthetic(c);
  const double step = 2.0 * std::acos(-1.0) / static_cast<double>(c.num_classes);
  std::set<long> gaps;
  for (const auto& ex : split.train_out) {
    double ang = std::atan2(ex.features[1], ex.features[0]);
    if (ang < 0) ang += 2.0 * std::acos(-1.0);
    gaps.insert(std::lround(ang / step - 0.5));
  }
  EXPECT_EQ(gaps, (std::set<long>{6, 7, 8}));
}

TEST(GenerateSynthetic, TooManyOodClustersRejected) {
  DataGenConfig c = small_config();
  c.n_ood_clusters = c.num_classes + 1;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(MixedBatches, FullBatchGivesOnePair) {
  const auto [profile, split] = generate_synthetic(small_config());
  const auto b = mixed_batches(split, split.train_in.size(), 8, 1);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].in.size(), split.train_in.size());
  EXPECT_EQ(b[0].out.size(), 8u);
}

TEST(MixedBatches, SameSeedSameSequence) {
  const auto [profile, split] = generate_synthetic(small_config());
  const auto a = mixed_batches(split, 16, 16, 9);
  const auto b = mixed_batches(split, 16, 16, 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].in, b[i].in);
    EXPECT_EQ(a[i].out, b[i].out);
  }
  const auto c = mixed_batches(split, 16, 16, 10);
  EXPECT_NE(a[0].in, c[0].in);
}

TEST(MixedBatches, InBatchesPartitionTrainIn) {
  const auto [profile, split] = generate_synthetic(small_config());
  for (std::size_t bs : {2u, 7u, 16u, 33u}) {
    const auto batches = mixed_batches(split, bs, 5, 2);
    std::vector<std::size_t> all;
    for (const auto& b : batches) {
      EXPECT_GE(b.in.size(), 2u);
      EXPECT_EQ(b.out.size(), 5u);
      all.insert(all.end(), b.in.begin(), b.in.end());
      for (std::size_t o : b.out) EXPECT_LT(o, split.train_out.size());
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(split.train_in.size());
    std::iota(expect.begin(), expect.end(), 0);
    EXPECT_EQ(all, expect) << "batch " << bs;
  }
}

TEST(MixedBatches, OutIndicesCycleBeforeRepeating) {
  const auto [profile, split] = generate_synthetic(small_config());
  const auto batches = mixed_batches(split, 10, 10, 4);
  std::vector<std::size_t> outs;
  for (const auto& b : batches) outs.insert(outs.end(), b.out.begin(), b.out.end());
  ASSERT_GE(outs.size(), split.train_out.size());
  std::set<std::size_t> first(outs.begin(), outs.begin() + split.train_out.size());
  EXPECT_EQ(first.size(), split.train_out.size());
}

TEST(MixedBatches, EmptyOodWithOutRequestedIsConfigError) {
  auto [profile, split] = generate_synthetic(small_config());
  split.train_out.clear();
  EXPECT_THROW(mixed_batches(split, 8, 8, 1, true), ConfigError);
  EXPECT_NO_THROW(mixed_batches(split, 8, 8, 1, false));
}

TEST(DatasetFiles, RoundTripIsExact) {
  const DataGenConfig c = small_config();
  const auto [profile, split] = generate_synthetic(c);
  const fs::path dir = scratch("roundtrip");
  write_dataset(dir, profile, split, c);
  for (const char* f : {"train_in.csv", "train_out.csv", "test_in.csv", "test_out.csv",
                        "profile.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto [p2, s2] = read_dataset(dir);
  EXPECT_EQ(p2.counts, profile.counts);
  EXPECT_EQ(p2.tail_set, profile.tail_set);
  EXPECT_EQ(p2.priors, profile.priors);
  ASSERT_EQ(s2.train_in.size(), split.train_in.size());
  for (std::size_t i = 0; i < split.train_in.size(); ++i) {
    EXPECT_EQ(s2.train_in[i].features, split.train_in[i].features);
    EXPECT_EQ(s2.train_in[i].label, split.train_in[i].label);
    EXPECT_EQ(s2.train_in[i].tail, split.train_in[i].tail);
  }
  ASSERT_EQ(s2.test_out.size(), split.test_out.size());
  for (std::size_t i = 0; i < split.test_out.size(); ++i) {
    EXPECT_EQ(s2.test_out[i].features, split.test_out[i].features);
    EXPECT_EQ(s2.test_out[i].domain, Domain::kOut);
  }
}

TEST(DatasetFiles, RewriteIsByteIdentical) {
  const DataGenConfig c = small_config();
  const auto [profile, split] = generate_synthetic(c);
  const fs::path a = scratch("rewrite_a"), b = scratch("rewrite_b");
  write_dataset(a, profile, split, c);
  const auto again = generate_synthetic(c);
  write_dataset(b, again.first, again.second, c);
  for (const char* f : {"train_in.csv", "test_out.csv", "profile.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(DatasetFiles, CsvHeaderAndOodMarker) {
  const DataGenConfig c = small_config();
  const auto [profile, split] = generate_synthetic(c);
  const fs::path dir = scratch("header");
  write_examples_csv(dir / "x.csv", split.train_out, c.dim);
  std::ifstream is(dir / "x.csv");
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  EXPECT_EQ(header, "feat_0,feat_1,label,domain,tail");
  EXPECT_NE(first.find(",OOD,OUT,0"), std::string::npos);
}

TEST(DatasetFiles, MalformedCsvIsDataError) {
  const fs::path dir = scratch("bad");
  {
    std::ofstream os(dir / "bad.csv");
    os << "feat_0,feat_1,label,domain,tail\n1.0,abc,3,IN,0\n";
  }
  EXPECT_THROW(read_examples_csv(dir / "bad.csv"), DataError);
  {
    std::ofstream os(dir / "bad2.csv");
    os << "feat_0,feat_1,label,domain,tail\n1.0,2.0,OOD,IN,0\n";
  }
  EXPECT_THROW(read_examples_csv(dir / "bad2.csv"), DataError);
  EXPECT_THROW(read_dataset(dir / "missing"), DataError);
}

TEST(DatasetFiles, ProfileRecordsRealizedRho) {
  const DataGenConfig c;
  const auto [profile, split] = generate_synthetic(c);
  const fs::path dir = scratch("profile");
  write_profile(dir / "p.json", profile, c.rho, c.tail_fraction);
  const std::string text = slurp(dir / "p.json");
  EXPECT_NE(text.find("\"realized_rho\""), std::string::npos);
  EXPECT_NE(text.find("\"tail_set\""), std::string::npos);
  EXPECT_NEAR(read_profile(dir / "p.json").realized_rho(), 100.0, 1e-12);
}

TEST(DeriveSeed, StreamsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}
