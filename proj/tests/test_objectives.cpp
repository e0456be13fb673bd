#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "pascl/errors.hpp"
#include "pascl/objectives.hpp"

using namespace pascl;

namespace {

const double kLn3 = std::log(3.0);

TensorBuf unit_rows(std::size_t n, std::size_t p, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n * p);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < p; ++c) {
      v[r * p + c] = g(rng);
      s += v[r * p + c] * v[r * p + c];
    }
    s = std::sqrt(s);
    for (std::size_t c = 0; c < p; ++c) v[r * p + c] /= s;
  }
  return TensorBuf::matrix(n, p, std::move(v));
}

struct RandomBatch {
  TensorBuf z;
  std::vector<int> labels;
  std::vector<Domain> domains;
};

// n_in in-distribution rows with labels in [0, C) and n_out OOD rows whose
// label field carries junk.
RandomBatch random_batch(std::size_t n_in, std::size_t n_out, int C, std::mt19937_64& rng) {
  RandomBatch b;
  b.z = unit_rows(n_in + n_out, 4, rng);
  std::uniform_int_distribution<int> lab(0, C - 1), junk(-5, 50);
  for (std::size_t i = 0; i < n_in; ++i) {
    b.labels.push_back(lab(rng));
    b.domains.push_back(Domain::kIn);
  }
  for (std::size_t i = 0; i < n_out; ++i) {
    b.labels.push_back(junk(rng));
    b.domains.push_back(Domain::kOut);
  }
  return b;
}

ContrastSpec spec_of(ContrastVariant v, std::vector<int> tail = {2, 3}) {
  ContrastSpec s;
  s.variant = v;
  s.tail_set = std::move(tail);
  return s;
}

const ContrastVariant kAllVariants[] = {ContrastVariant::kSclIn, ContrastVariant::kSclAll,
                                        ContrastVariant::kPartial, ContrastVariant::kAsymmetric,
                                        ContrastVariant::kPascl};

}  // namespace

TEST(CrossEntropy, EqualLogits) {
  const int y[] = {2};
  EXPECT_NEAR(cross_entropy(TensorBuf::matrix(1, 3, {0, 0, 0}), y), kLn3, 1e-12);
}

TEST(CrossEntropy, ConfidentCorrect) {
  const int y[] = {0};
  EXPECT_NEAR(cross_entropy(TensorBuf::matrix(1, 3, {100, 0, 0}), y), 0.0, 1e-12);
}

TEST(CrossEntropy, DirectEvaluation) {
  const int y[] = {1};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  const double v = cross_entropy(TensorBuf::matrix(1, 3, {1, 2, 3}), y);
  EXPECT_NEAR(v, lse - 2.0, 1e-12);
  EXPECT_NEAR(v, 1.4076, 1e-4);
}

TEST(CrossEntropy, OutOfRangeLabelRejected) {
  const int y[] = {3};
  EXPECT_THROW(cross_entropy(TensorBuf::matrix(1, 3, {1, 2, 3}), y), InputError);
  const int neg[] = {-1};
  EXPECT_THROW(cross_entropy(TensorBuf::matrix(1, 3, {1, 2, 3}), neg), InputError);
}

TEST(OutlierUniformity, MinimumAtEqualLogits) {
  EXPECT_NEAR(outlier_uniformity(TensorBuf::matrix(1, 3, {0, 0, 0})), kLn3, 1e-12);
  EXPECT_NEAR(outlier_uniformity(TensorBuf::matrix(1, 3, {4, 4, 4})), kLn3, 1e-12);
}

TEST(OutlierUniformity, DirectEvaluation) {
  const double v = outlier_uniformity(TensorBuf::matrix(1, 3, {10, 0, 0}));
  EXPECT_NEAR(v, std::log(std::exp(10.0) + 2.0) - 10.0 / 3.0, 1e-12);
  EXPECT_NEAR(v, 6.667, 1e-3);
}

TEST(OutlierUniformity, NeverBelowLogC) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> l(5);
    for (double& v : l) v = g(rng);
    EXPECT_GE(outlier_uniformity(TensorBuf::matrix(1, 5, l)), std::log(5.0) - 1e-12);
  }
}

TEST(Contrastive, SinglePositiveGivesZero) {
  const TensorBuf z = TensorBuf::matrix(2, 2, {1, 0, 1, 0});
  const int y[] = {0, 0};
  const Domain d[] = {Domain::kIn, Domain::kIn};
  EXPECT_NEAR(pascl_contrastive(z, y, d, spec_of(ContrastVariant::kSclIn, {}), 0.5), 0.0, 1e-15);
}

TEST(Contrastive, OnePositiveOneNegative) {
  // Anchor x with z(x).z(p) = 1 and z(x).z(o) = 0 at tau = 1. Under PASCL
  // with tail {0}, x and p are the anchors and o (OOD) only contrasts.
  // x: anchor, positives {p}, contrast {p, o}: -log(e / (e + 1)).
  // p: same geometry. Mean over the two anchors equals the single value.
  const TensorBuf z = TensorBuf::matrix(3, 2, {1, 0, 1, 0, 0, 1});
  const int y[] = {0, 0, 7};
  const Domain d[] = {Domain::kIn, Domain::kIn, Domain::kOut};
  const double e = std::exp(1.0);
  const double v = pascl_contrastive(z, y, d, spec_of(ContrastVariant::kPascl, {0}), 1.0);
  EXPECT_NEAR(v, -std::log(e / (e + 1.0)), 1e-12);
  EXPECT_NEAR(v, 0.31326, 1e-5);
}

TEST(Contrastive, HeadAndOodOnlyBatchIsExactlyZero) {
  std::mt19937_64 rng(8);
  RandomBatch b = random_batch(0, 5, 4, rng);
  const TensorBuf head = unit_rows(6, 4, rng);
  // six head rows (labels 0, 1) then the OOD rows
  std::vector<double> v(head.values());
  v.insert(v.end(), b.z.values().begin(), b.z.values().end());
  const TensorBuf z = TensorBuf::matrix(11, 4, v);
  std::vector<int> y = {0, 1, 0, 1, 0, 1};
  std::vector<Domain> d(6, Domain::kIn);
  y.insert(y.end(), b.labels.begin(), b.labels.end());
  d.insert(d.end(), b.domains.begin(), b.domains.end());
  Tape tape;
  NodeRef zn = tape.parameter(z);
  ContrastStats st;
  NodeRef loss = pascl_contrastive(tape, zn, y, d, spec_of(ContrastVariant::kPascl), 0.1, &st);
  EXPECT_EQ(tape.value(loss)[0], 0.0);
  tape.backward(loss);
  for (double g : tape.grad(zn)) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(st.anchors, 0u);
  EXPECT_EQ(st.head_participants, 0u);
}

TEST(Contrastive, NonUnitRowsRejected) {
  const TensorBuf z = TensorBuf::matrix(2, 2, {2, 0, 1, 0});
  const int y[] = {0, 0};
  const Domain d[] = {Domain::kIn, Domain::kIn};
  EXPECT_THROW(pascl_contrastive(z, y, d, spec_of(ContrastVariant::kSclIn), 0.1), InputError);
}

TEST(Contrastive, NonPositiveTemperatureRejected) {
  const TensorBuf z = TensorBuf::matrix(2, 2, {1, 0, 1, 0});
  const int y[] = {0, 0};
  const Domain d[] = {Domain::kIn, Domain::kIn};
  EXPECT_THROW(pascl_contrastive(z, y, d, spec_of(ContrastVariant::kSclIn), 0.0), InputError);
}

// The PASCL set-semantics properties over many random batches.
TEST(Contrastive, PasclHeadGradientsAreExactlyZero) {
  std::mt19937_64 rng(101);
  for (int t = 0; t < 100; ++t) {
    RandomBatch b = random_batch(12, 6, 4, rng);
    Tape tape;
    NodeRef z = tape.parameter(b.z);
    NodeRef loss = pascl_contrastive(tape, z, b.labels, b.domains,
                                     spec_of(ContrastVariant::kPascl), 0.1);
    tape.backward(loss);
    const auto& g = tape.grad(z);
    for (std::size_t r = 0; r < 12; ++r) {
      if (b.labels[r] >= 2) continue;
      for (std::size_t c = 0; c < 4; ++c) ASSERT_EQ(g[r * 4 + c], 0.0) << "trial " << t;
    }
  }
}

TEST(Contrastive, OodLabelPermutationIsBitInvariant) {
  std::mt19937_64 rng(102);
  for (int t = 0; t < 100; ++t) {
    RandomBatch b = random_batch(12, 6, 4, rng);
    for (ContrastVariant v : kAllVariants) {
      const double a = pascl_contrastive(b.z, b.labels, b.domains, spec_of(v), 0.1);
      std::vector<int> perm = b.labels;
      std::shuffle(perm.begin() + 12, perm.end(), rng);
      for (std::size_t i = 12; i < perm.size(); ++i) perm[i] += 17;
      const double c = pascl_contrastive(b.z, perm, b.domains, spec_of(v), 0.1);
      ASSERT_EQ(a, c) << variant_name(v) << " trial " << t;
    }
  }
}

TEST(Contrastive, NoTailBatchIsExactlyZero) {
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<int> head(0, 1);
  for (int t = 0; t < 100; ++t) {
    RandomBatch b = random_batch(12, 6, 4, rng);
    for (std::size_t i = 0; i < 12; ++i) b.labels[i] = head(rng);
    ASSERT_EQ(pascl_contrastive(b.z, b.labels, b.domains, spec_of(ContrastVariant::kPascl), 0.1),
              0.0);
  }
}

TEST(Contrastive, ReorderInvariance) {
  std::mt19937_64 rng(104);
  for (int t = 0; t < 30; ++t) {
    RandomBatch b = random_batch(12, 6, 4, rng);
    std::vector<std::size_t> order(18);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    RandomBatch p;
    p.z = select_rows(b.z, order);
    for (std::size_t i : order) {
      p.labels.push_back(b.labels[i]);
      p.domains.push_back(b.domains[i]);
    }
    for (ContrastVariant v : kAllVariants) {
      EXPECT_NEAR(pascl_contrastive(b.z, b.labels, b.domains, spec_of(v), 0.1),
                  pascl_contrastive(p.z, p.labels, p.domains, spec_of(v), 0.1), 1e-12)
          << variant_name(v);
    }
  }
}

TEST(Contrastive, ParticipationCountsFollowVariant) {
  std::mt19937_64 rng(105);
  RandomBatch b = random_batch(12, 6, 4, rng);
  std::size_t tail = 0;
  for (std::size_t i = 0; i < 12; ++i) tail += b.labels[i] >= 2;
  auto stats = [&](ContrastVariant v) {
    Tape tape;
    ContrastStats st;
    pascl_contrastive(tape, tape.constant(b.z), b.labels, b.domains, spec_of(v), 0.1, &st);
    return st;
  };
  const ContrastStats p = stats(ContrastVariant::kPascl);
  EXPECT_EQ(p.head_participants, 0u);
  EXPECT_EQ(p.tail_participants, tail);
  EXPECT_EQ(p.ood_participants, 6u);
  const ContrastStats in = stats(ContrastVariant::kSclIn);
  EXPECT_EQ(in.ood_participants, 0u);
  EXPECT_EQ(in.head_participants + in.tail_participants, 12u);
  const ContrastStats all = stats(ContrastVariant::kSclAll);
  EXPECT_EQ(all.participants, 18u);
}

TEST(Contrastive, OodCountsAsClassOnlyUnderSclAllAndPartial) {
  // Two OOD rows pointing the same way with no in-distribution anchor:
  // SCL_ALL pulls them together (positive pair), ASYMMETRIC has no anchors.
  const TensorBuf z = TensorBuf::matrix(3, 2, {1, 0, 0.6, 0.8, 0, 1});
  const int y[] = {5, 9, 0};
  const Domain d[] = {Domain::kOut, Domain::kOut, Domain::kIn};
  EXPECT_GT(pascl_contrastive(z, y, d, spec_of(ContrastVariant::kSclAll), 0.5), 0.0);
  EXPECT_EQ(pascl_contrastive(z, y, d, spec_of(ContrastVariant::kAsymmetric), 0.5), 0.0);
  EXPECT_EQ(pascl_contrastive(z, y, d, spec_of(ContrastVariant::kPascl), 0.5), 0.0);
}

TEST(Contrastive, VariantNamesRoundTrip) {
  for (ContrastVariant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_THROW(parse_variant("supcon"), ConfigError);
}

TEST(LogitAdjusted, UniformPriorsMatchCrossEntropy) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  std::vector<double> l(12);
  for (double& v : l) v = g(rng);
  const TensorBuf logits = TensorBuf::matrix(3, 4, l);
  const int y[] = {0, 3, 1};
  const std::vector<double> uniform(4, 0.25);
  for (double tau : {0.0, 0.5, 1.0, 2.0}) {
    EXPECT_NEAR(logit_adjusted_ce(logits, y, uniform, tau), cross_entropy(logits, y), 1e-12);
  }
  const std::vector<double> skew = {0.7, 0.2, 0.05, 0.05};
  EXPECT_NEAR(logit_adjusted_ce(logits, y, skew, 0.0), cross_entropy(logits, y), 1e-15);
}

TEST(LogitAdjusted, TwoClassDirectEvaluation) {
  const int y[] = {1};
  const std::vector<double> pri = {0.9, 0.1};
  const double v = logit_adjusted_ce(TensorBuf::matrix(1, 2, {0, 0}), y, pri, 1.0);
  EXPECT_NEAR(v, std::log(10.0), 1e-12);
}

TEST(LogitAdjusted, NonPositivePriorRejected) {
  const int y[] = {0};
  const std::vector<double> pri = {1.0, 0.0};
  EXPECT_THROW(logit_adjusted_ce(TensorBuf::matrix(1, 2, {0, 0}), y, pri, 1.0), InputError);
}

TEST(Stage1Loss, ZeroWeightsReduceToCrossEntropy) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::vector<double> l(20);
  for (double& v : l) v = g(rng);
  const TensorBuf logits = TensorBuf::matrix(5, 4, l);
  const std::vector<int> y = {0, 1, 2, 3, 1};
  LossWeights w;
  w.lambda1 = 0.0;
  w.lambda2 = 0.0;
  w.num_classes = 4;
  Tape tape;
  Stage1Inputs in;
  in.logits_in = tape.constant(logits);
  in.labels_in = y;
  const Stage1Terms t = stage1_loss(tape, in, spec_of(ContrastVariant::kPascl), w);
  EXPECT_NEAR(tape.value(t.total)[0], cross_entropy(logits, y), 1e-15);
}

TEST(Stage1Loss, OeObjectiveWhenLambda2IsZero) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::vector<double> a(20), b(12);
  for (double& v : a) v = g(rng);
  for (double& v : b) v = g(rng);
  const TensorBuf li = TensorBuf::matrix(5, 4, a), lo = TensorBuf::matrix(3, 4, b);
  const std::vector<int> y = {0, 1, 2, 3, 1};
  LossWeights w;
  w.lambda1 = 0.5;
  w.lambda2 = 0.0;
  w.num_classes = 4;
  Tape tape;
  Stage1Inputs in;
  in.logits_in = tape.constant(li);
  in.logits_out = tape.constant(lo);
  in.labels_in = y;
  in.n_out = 3;
  const Stage1Terms t = stage1_loss(tape, in, spec_of(ContrastVariant::kPascl), w);
  EXPECT_NEAR(tape.value(t.total)[0], cross_entropy(li, y) + 0.5 * outlier_uniformity(lo), 1e-12);
  EXPECT_NEAR(t.outlier, outlier_uniformity(lo), 1e-12);
}

TEST(Stage1Loss, MissingTermInputsRejected) {
  Tape tape;
  const std::vector<int> y = {0, 1};
  Stage1Inputs in;
  in.logits_in = tape.constant(TensorBuf::matrix(2, 2, {0, 1, 1, 0}));
  in.labels_in = y;
  LossWeights w;
  w.num_classes = 2;
  EXPECT_THROW(stage1_loss(tape, in, spec_of(ContrastVariant::kPascl, {1}), w), InputError);
}

TEST(Scores, MspExamples) {
  const auto eq = msp_ood_score(TensorBuf::matrix(1, 10, std::vector<double>(10, 0.0)));
  EXPECT_NEAR(eq[0], 0.9, 1e-15);
  std::vector<double> conf(10, 0.0);
  conf[0] = 100.0;
  EXPECT_NEAR(msp_ood_score(TensorBuf::matrix(1, 10, conf))[0], 0.0, 1e-12);
}

TEST(Scores, EnergyExamples) {
  const auto e = energy_ood_score(TensorBuf::matrix(1, 10, std::vector<double>(10, 0.0)));
  EXPECT_NEAR(e[0], -std::log(10.0), 1e-12);
}

TEST(Scores, EnergyAndMspRankAgreeOnScaledProbes) {
  // Pairs that differ only by a shift of the top logit order the same way
  // under both scores.
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(5);
    for (double& v : a) v = g(rng);
    std::vector<double> b = a;
    const auto top = std::max_element(b.begin(), b.end()) - b.begin();
    b[static_cast<std::size_t>(top)] += u(rng);
    const TensorBuf L = TensorBuf::matrix(2, 5, [&] {
      std::vector<double> v = a;
      v.insert(v.end(), b.begin(), b.end());
      return v;
    }());
    const auto m = msp_ood_score(L);
    const auto e = energy_ood_score(L);
    EXPECT_EQ(m[0] > m[1], e[0] > e[1]);
  }
}

TEST(Scores, NamesRoundTrip) {
  EXPECT_EQ(parse_score("msp"), ScoreFn::kMsp);
  EXPECT_EQ(parse_score("energy"), ScoreFn::kEnergy);
  EXPECT_EQ(score_name(ScoreFn::kEnergy), "energy");
  EXPECT_THROW(parse_score("odin"), ConfigError);
}
