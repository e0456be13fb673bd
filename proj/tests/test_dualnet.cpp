#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "pascl/dualnet.hpp"
#include "pascl/errors.hpp"

using namespace pascl;
namespace fs = std::filesystem;

namespace {

TensorBuf random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 2.0);
  std::vector<double> v(n * d);
  for (double& x : v) x = g(rng);
  return TensorBuf::matrix(n, d, std::move(v));
}

NetConfig small_net() {
  NetConfig c;
  c.input_dim = 3;
  c.width = 8;
  c.num_blocks = 2;
  c.proj_dim = 4;
  c.num_classes = 5;
  return c;
}

// One SGD step on the stage-2 parameter set with a simple loss on AUX logits.
void one_stage2_step(DualBranchNetwork& net, const TensorBuf& x) {
  Tape tape;
  ParamBinding binding;
  const auto names = net.trainable_parameters(2);
  DualBranchNetwork::TapeOptions o;
  o.mode = Mode::kTrain;
  o.with_projection = false;
  o.trainable = &names;
  o.binding = &binding;
  const ForwardNodes f = net.forward_on_tape(tape, tape.constant(x), Branch::kAux, o);
  tape.backward(tape.mean(tape.row_logsumexp(f.logits)));
  for (const auto& [name, node] : binding) {
    TensorBuf& p = net.parameter(name);
    const auto& g = tape.grad(node);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 0.1 * g[i];
  }
}

}  // namespace

TEST(BatchNorm, ConstantBatchCollapsesToBeta) {
  BNParams p = BNParams::identity(2);
  p.beta = TensorBuf::vector({5.0, 5.0});
  const TensorBuf y = batchnorm(TensorBuf::matrix(3, 2, {1, 7, 1, 7, 1, 7}), p, Mode::kTrain);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 5.0);
}

TEST(BatchNorm, EvalWithIdentityStatsIsIdentity) {
  BNParams p = BNParams::identity(3, 1e-300);
  const TensorBuf x = random_batch(4, 3, 1);
  const TensorBuf y = batchnorm(x, p, Mode::kEval);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
}

TEST(BatchNorm, RunningMeanUpdate) {
  BNParams p = BNParams::identity(1, 1e-5, 0.1);
  batchnorm(TensorBuf::matrix(2, 1, {9.0, 11.0}), p, Mode::kTrain);
  EXPECT_NEAR(p.running_mean[0], 1.0, 1e-15);
  // unbiased variance of {9, 11} is 2
  EXPECT_NEAR(p.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, TrainUsesBiasedVariance) {
  BNParams p = BNParams::identity(1, 1e-300);
  const TensorBuf y = batchnorm(TensorBuf::matrix(2, 1, {-1.0, 1.0}), p, Mode::kTrain);
  EXPECT_NEAR(y[0], -1.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
}

TEST(BatchNorm, TrainWithOneRowRejected) {
  BNParams p = BNParams::identity(2);
  EXPECT_THROW(batchnorm(TensorBuf::matrix(1, 2, {1, 2}), p, Mode::kTrain), InputError);
}

TEST(BatchNorm, EvalDoesNotMutate) {
  BNParams p = BNParams::identity(3);
  p.running_mean = {0.5, -1.0, 2.0};
  const BNParams before = p;
  batchnorm(random_batch(5, 3, 2), p, Mode::kEval);
  EXPECT_EQ(p.running_mean, before.running_mean);
  EXPECT_EQ(p.running_var, before.running_var);
}

TEST(NetConfig, ValidationNamesKey) {
  NetConfig c;
  c.bn_momentum = 0.0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "bn_momentum");
  }
}

TEST(DualNet, AuxBeforeCloneIsStateError) {
  DualBranchNetwork net(small_net(), 1);
  EXPECT_FALSE(net.aux_initialized());
  EXPECT_THROW(net.infer(random_batch(4, 3, 1), Branch::kAux), StateError);
  EXPECT_THROW(net.forward(random_batch(4, 3, 1), Branch::kAux, Mode::kTrain), StateError);
  EXPECT_THROW(net.trainable_parameters(2), StateError);
}

TEST(DualNet, AfterCloneBranchesAgreeBitwise) {
  DualBranchNetwork net(small_net(), 2);
  const TensorBuf x = random_batch(6, 3, 3);
  net.forward(x, Branch::kMain, Mode::kTrain);  // move main running stats off identity
  net.clone_aux_from_main();
  EXPECT_EQ(net.branch_distance(), 0.0);
  const auto m = net.infer(x, Branch::kMain);
  const auto a = net.infer(x, Branch::kAux);
  EXPECT_EQ(m.logits, a.logits);
  EXPECT_EQ(m.penultimate, a.penultimate);
  EXPECT_EQ(m.projection, a.projection);
}

TEST(DualNet, CloneTwiceIsIdempotent) {
  DualBranchNetwork net(small_net(), 2);
  net.clone_aux_from_main();
  const auto h = net.full_state_hash();
  net.clone_aux_from_main();
  EXPECT_EQ(h, net.full_state_hash());
}

TEST(DualNet, EvalForwardIsPure) {
  DualBranchNetwork net(small_net(), 4);
  const TensorBuf x = random_batch(7, 3, 5);
  const auto h = net.full_state_hash();
  const auto a = net.forward(x, Branch::kMain, Mode::kEval);
  const auto b = net.forward(x, Branch::kMain, Mode::kEval);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(h, net.full_state_hash());
}

TEST(DualNet, TrainForwardMutatesOnlyActiveBranch) {
  DualBranchNetwork net(small_net(), 4);
  net.clone_aux_from_main();
  const auto main_hash = net.main_state_hash();
  net.forward(random_batch(8, 3, 6), Branch::kAux, Mode::kTrain);
  EXPECT_EQ(main_hash, net.main_state_hash());
  EXPECT_GT(net.branch_distance(), 0.0);
  const auto full = net.full_state_hash();
  net.forward(random_batch(8, 3, 7), Branch::kMain, Mode::kTrain);
  EXPECT_NE(main_hash, net.main_state_hash());
  EXPECT_NE(full, net.full_state_hash());
}

TEST(DualNet, MainOutputIgnoresAuxState) {
  DualBranchNetwork net(small_net(), 8);
  net.clone_aux_from_main();
  const TensorBuf x = random_batch(5, 3, 9);
  const auto before = net.infer(x, Branch::kMain);
  net.blocks()[0].bn_aux.gamma[0] = 42.0;
  net.parameter("clf_aux.bias")[1] = -3.0;
  EXPECT_EQ(before.logits, net.infer(x, Branch::kMain).logits);
}

TEST(DualNet, ProjectionRowsAreUnitNorm) {
  DualBranchNetwork net(small_net(), 10);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto out = net.infer(random_batch(9, 3, 100 + s), Branch::kMain);
    ASSERT_EQ(out.projection.cols(), 4u);
    for (std::size_t r = 0; r < out.projection.rows(); ++r) {
      double n2 = 0.0;
      for (double v : out.projection.row(r)) n2 += v * v;
      EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-9);
    }
  }
}

TEST(DualNet, OutputShapes) {
  DualBranchNetwork net(small_net(), 11);
  const auto out = net.infer(random_batch(6, 3, 1), Branch::kMain);
  EXPECT_EQ(out.logits.dims(), (std::vector<std::size_t>{6, 5}));
  EXPECT_EQ(out.penultimate.dims(), (std::vector<std::size_t>{6, 8}));
  EXPECT_THROW(net.infer(random_batch(6, 2, 1), Branch::kMain), InputError);
}

TEST(DualNet, TapeForwardMatchesValueForward) {
  DualBranchNetwork net(small_net(), 12);
  const TensorBuf x = random_batch(6, 3, 2);
  const auto v = net.infer(x, Branch::kMain);
  Tape tape;
  DualBranchNetwork::TapeOptions o;
  const ForwardNodes f = net.forward_on_tape(tape, tape.constant(x), Branch::kMain, o);
  for (std::size_t i = 0; i < v.logits.size(); ++i) {
    EXPECT_NEAR(tape.value(f.logits)[i], v.logits[i], 1e-12);
  }
}

TEST(DualNet, TrainableSetsAreDisjointAndSized) {
  DualBranchNetwork net(small_net(), 13);
  net.clone_aux_from_main();
  const auto s1 = net.trainable_parameters(1);
  const auto s2 = net.trainable_parameters(2);
  std::set<std::string> a(s1.begin(), s1.end());
  for (const auto& n : s2) EXPECT_EQ(a.count(n), 0u) << n;
  for (const auto& n : s1) {
    EXPECT_EQ(n.find("aux"), std::string::npos) << n;
  }
  std::size_t count2 = 0;
  for (const auto& n : s2) count2 += net.parameter(n).size();
  const NetConfig c = small_net();
  EXPECT_EQ(count2, c.num_blocks * 2 * c.width + (c.width * c.num_classes + c.num_classes));
  std::set<std::string> all(s1.begin(), s1.end());
  all.insert(s2.begin(), s2.end());
  const auto names = net.parameter_names();
  EXPECT_EQ(all, std::set<std::string>(names.begin(), names.end()));
  EXPECT_THROW(net.trainable_parameters(3), InputError);
}

TEST(DualNet, AbfScopeSets) {
  DualBranchNetwork net(small_net(), 13);
  net.clone_aux_from_main();
  EXPECT_EQ(net.trainable_parameters(2, AbfScope::kClfOnly),
            (std::vector<std::string>{"clf_aux.weight", "clf_aux.bias"}));
  const auto all = net.trainable_parameters(2, AbfScope::kAllLayers);
  EXPECT_EQ(all.size(), net.trainable_parameters(2).size() + 2 * small_net().num_blocks);
  EXPECT_NE(std::find(all.begin(), all.end(), "blocks.0.weight"), all.end());
  EXPECT_EQ(std::find(all.begin(), all.end(), "proj.0.weight"), all.end());
  EXPECT_EQ(parse_abf_scope(abf_scope_name(AbfScope::kAllLayers)), AbfScope::kAllLayers);
  EXPECT_THROW(parse_abf_scope("everything"), ConfigError);
}

TEST(DualNet, StageTwoStepMovesOnlyAux) {
  DualBranchNetwork net(small_net(), 14);
  net.clone_aux_from_main();
  const auto main_hash = net.main_state_hash();
  const TensorBuf clf_main_w = net.classifier(Branch::kMain).weight;
  one_stage2_step(net, random_batch(8, 3, 15));
  EXPECT_EQ(main_hash, net.main_state_hash());
  EXPECT_EQ(clf_main_w, net.classifier(Branch::kMain).weight);
  EXPECT_NE(net.classifier(Branch::kAux).weight, clf_main_w);
}

TEST(DualNet, SameSeedSameInit) {
  DualBranchNetwork a(small_net(), 99), b(small_net(), 99), c(small_net(), 100);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = fs::temp_directory_path() / "pascl_dualnet_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  DualBranchNetwork net(small_net(), 21);
  net.forward(random_batch(8, 3, 22), Branch::kMain, Mode::kTrain);
  net.record_stage1_epoch();
  net.clone_aux_from_main();
  one_stage2_step(net, random_batch(8, 3, 23));
  net.save(dir / "a.txt");
  const DualBranchNetwork back = DualBranchNetwork::load(dir / "a.txt");
  EXPECT_TRUE(back == net);
  EXPECT_EQ(back.full_state_hash(), net.full_state_hash());
  EXPECT_EQ(back.stage1_epochs(), 1u);
  EXPECT_TRUE(back.aux_initialized());
  back.save(dir / "b.txt");
  std::ifstream ia(dir / "a.txt"), ib(dir / "b.txt");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(ia), {}),
            std::string(std::istreambuf_iterator<char>(ib), {}));
}

TEST(Checkpoint, BadFilesAreDataErrors) {
  const fs::path dir = fs::temp_directory_path() / "pascl_dualnet_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  EXPECT_THROW(DualBranchNetwork::load(dir / "missing.txt"), DataError);
  {
    std::ofstream os(dir / "magic.txt");
    os << "not-a-checkpoint 1\n";
  }
  EXPECT_THROW(DualBranchNetwork::load(dir / "magic.txt"), DataError);
  {
    std::ofstream os(dir / "version.txt");
    os << "pascl-checkpoint 99\n";
  }
  EXPECT_THROW(DualBranchNetwork::load(dir / "version.txt"), DataError);
  DualBranchNetwork net(small_net(), 1);
  net.save(dir / "good.txt");
  std::ifstream is(dir / "good.txt");
  std::string text(std::istreambuf_iterator<char>(is), {});
  {
    std::ofstream os(dir / "truncated.txt");
    os << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(DualBranchNetwork::load(dir / "truncated.txt"), DataError);
}
