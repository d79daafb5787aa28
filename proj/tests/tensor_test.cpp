#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "op_cases.hpp"
#include "test_util.hpp"
#include "uasam/checkpoint.hpp"
#include "uasam/grad_check.hpp"
#include "uasam/kernels.hpp"
#include "uasam/ops.hpp"
#include "uasam/optimizer.hpp"

using namespace uasam;
using namespace uasam::testing;

namespace {

Tensor vec(std::vector<double> v) {
  const auto n = v.size();
  return Tensor({n}, std::move(v));
}

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.at(i), expected[i], tol) << "index " << i;
}

}  // namespace

TEST(Ops, ReluClampsNegatives) { expect_values(ops::relu(vec({-1, 0, 2})), {0, 0, 2}); }

TEST(Ops, IdentityMatmul) {
  Rng rng(1);
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor a = random_tensor({3, 4}, rng);
  EXPECT_TRUE(bit_equal(ops::matmul(eye, a), a));
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) { expect_values(ops::softmax(Tensor({1, 2}, {0, 0})), {0.5, 0.5}); }

TEST(Ops, ShapeErrorNamesOpAndDims) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    ops::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x5]"), std::string::npos);
  }
  EXPECT_THROW(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(ops::reshape(a, {5}), ShapeError);
  EXPECT_THROW(ops::slice(a, 1, 2, 2), ShapeError);
}

TEST(Ops, NonFiniteOutputIsAnError) {
  EXPECT_THROW(ops::log(vec({-1.0})), NumericError);
  EXPECT_THROW(ops::div(vec({1.0}), vec({0.0})), NumericError);
}

TEST(Ops, TileThenMeanRestoresInput) {
  Rng rng(2);
  for (std::size_t reps : {2u, 3u, 7u, 64u, 1000u}) {
    Tensor x = random_tensor({3, 1, 4}, rng, -1e3, 1e3);
    Tensor tiled = ops::tile(x, {1, reps, 1});
    EXPECT_EQ(tiled.shape(), (Shape{3, reps, 4}));
    EXPECT_TRUE(bit_equal(ops::mean_axis(tiled, 1, true), x)) << reps;
  }
}

TEST(Ops, NoOpMutatesItsInputs) {
  for (const auto& c : make_op_cases(7)) {
    std::vector<Tensor> before;
    for (const auto& t : c.inputs) before.push_back(t.clone());
    (void)c.fn(c.inputs);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bit_equal(before[i], c.inputs[i])) << c.name;
  }
}

TEST(Ops, BilinearUpsampleOfConstantIsConstant) {
  Tensor x = Tensor::full({2, 4, 4}, 0.75);
  Tensor y = ops::upsample_bilinear(x, 16, 16);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.75);
}

TEST(Ops, Conv2dMatchesDirectLoop) {
  Rng rng(3);
  Tensor x = random_tensor({2, 2, 5, 6}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor y = ops::conv2d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t co = 0; co < 3; ++co)
      for (std::size_t oy = 0; oy < 3; ++oy)
        for (std::size_t ox = 0; ox < 3; ++ox) {
          double acc = b.at(co);
          for (std::size_t ci = 0; ci < 2; ++ci)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long iy = static_cast<long>(oy * 2 + ky) - 1;
                const long ix = static_cast<long>(ox * 2 + kx) - 1;
                if (iy < 0 || ix < 0 || iy >= 5 || ix >= 6) continue;
                acc += x.at(((n * 2 + ci) * 5 + iy) * 6 + ix) * w.at(((co * 2 + ci) * 3 + ky) * 3 + kx);
              }
          EXPECT_NEAR(y.at(((n * 3 + co) * 3 + oy) * 3 + ox), acc, 1e-12);
        }
}

TEST(Backward, SumOfSquares) {
  Tensor x({2}, {1, 2}, true);
  backward(ops::sum(ops::square(x)));
  expect_values(Tensor({2}, std::vector<double>(x.grad().begin(), x.grad().end())), {2, 4});
  EXPECT_EQ(tape_size(), 0u);
}

TEST(Backward, ConstantLossGivesZeroGrad) {
  Tensor x({3}, {1, 2, 3}, true);
  x.zero_grad();
  Tensor c({3}, {4, 5, 6}, true);
  backward(ops::sum(c));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarOrUntrackedLoss) {
  Tensor x({2}, {1, 2}, true);
  EXPECT_THROW(backward(ops::square(x)), ShapeError);
  clear_tape();
  EXPECT_THROW(backward(Tensor::scalar(1.0)), Error);
  {
    NoGradGuard guard;
    Tensor y = ops::sum(x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(tape_size(), 0u);
  }
}

TEST(GradCheck, QuadraticAtThree) {
  ParamStore store;
  Tensor x = store.add("x", Tensor::scalar(3.0));
  auto r = grad_check([&] { return ops::sum(ops::mul(x, x)); }, store);
  EXPECT_LT(r.max_relative_error, 1e-7);
  EXPECT_EQ(r.checked_scalars, 1u);
}

TEST(GradCheck, LinearLayer) {
  Rng rng(4);
  ParamStore store;
  Tensor w = store.add("w", random_tensor({4, 3}, rng));
  Tensor b = store.add("b", random_tensor({3}, rng));
  Tensor x = random_tensor({5, 4}, rng);
  auto r = grad_check([&] { return weighted_sum(ops::linear(x, w, b)); }, store);
  EXPECT_LT(r.max_relative_error, 1e-6);
  EXPECT_EQ(r.checked_scalars, 15u);
}

TEST(GradCheck, FrozenParametersAreSkippedAndCounted) {
  Rng rng(5);
  ParamStore store;
  Tensor w = store.add("frozen.w", random_tensor({3, 2}, rng));
  Tensor v = store.add("live.v", random_tensor({2}, rng));
  store.freeze_prefix("frozen.");
  Tensor x = random_tensor({4, 3}, rng);
  auto r = grad_check([&] { return weighted_sum(ops::mul(ops::matmul(x, w), v)); }, store);
  EXPECT_EQ(r.frozen_skipped, 1u);
  EXPECT_EQ(r.checked_tensors, 1u);
  EXPECT_EQ(r.checked_scalars, 2u);
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(GradCheck, RejectsNonDeterministicLoss) {
  ParamStore store;
  Tensor x = store.add("x", Tensor::scalar(1.0));
  int calls = 0;
  EXPECT_THROW(grad_check([&] { return ops::scale(x, 1.0 + (calls++)); }, store), Error);
}

TEST(GradCheck, EveryOpPassesAtSmallRandomShapes) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    for (const auto& c : make_op_cases(seed)) {
      ParamStore store;
      std::vector<Tensor> inputs;
      for (std::size_t i = 0; i < c.inputs.size(); ++i) inputs.push_back(store.add("in" + std::to_string(i), c.inputs[i]));
      auto r = grad_check([&] { return weighted_sum(c.fn(inputs)); }, store);
      EXPECT_LT(r.max_relative_error, 1e-4) << c.name << " seed " << seed << " worst " << r.worst_parameter;
    }
  }
}

TEST(Adam, FrozenTensorIsBitIdenticalAfterStep) {
  Rng rng(6);
  ParamStore store;
  Tensor frozen = store.add("backbone.w", random_tensor({3}, rng));
  Tensor live = store.add("adapter.w", random_tensor({3}, rng));
  store.freeze_prefix("backbone.");
  const Tensor before = frozen.clone();
  auto state = OptimizerState::from_config({});
  store.zero_grad();
  backward(ops::sum(ops::mul(live, ops::add_scalar(frozen, 1.0))));
  adam_step(store, state);
  EXPECT_TRUE(bit_equal(before, frozen));
  EXPECT_FALSE(frozen.has_grad());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  Tensor x = store.add("x", Tensor::scalar(0.0));
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  auto state = OptimizerState::from_config(cfg);
  store.zero_grad();
  backward(ops::sum(x));  // f(x) = x, gradient 1
  adam_step(store, state);
  // mhat / sqrt(vhat) == sign(g) on the first step.
  EXPECT_NEAR(x.item(), -0.1, 1e-8);
  EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, StepLrDecay) {
  ParamStore store;
  Tensor x = store.add("x", Tensor::scalar(0.0));
  AdamConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.decay_every = 2;
  cfg.decay_factor = 0.5;
  auto state = OptimizerState::from_config(cfg);
  for (int i = 0; i < 2; ++i) {
    store.zero_grad();
    backward(ops::sum(x));
    adam_step(store, state);
  }
  EXPECT_DOUBLE_EQ(state.learning_rate, 5e-5);
}

TEST(Adam, MissingGradientIsAnError) {
  ParamStore store;
  store.add("x", Tensor::scalar(0.0));
  auto state = OptimizerState::from_config({});
  EXPECT_THROW(adam_step(store, state), Error);
}

TEST(Adam, RejectsBadConfig) {
  AdamConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(OptimizerState::from_config(cfg), ConfigError);
}

TEST(Determinism, IdenticalSeedsGiveBitIdenticalLossTrajectory) {
  auto run = [] {
    Rng rng(77);
    ParamStore store;
    Tensor w = store.add("w", random_tensor({4, 2}, rng));
    Tensor b = store.add("b", random_tensor({2}, rng));
    auto state = OptimizerState::from_config({0.05});
    std::vector<double> losses;
    for (int step = 0; step < 20; ++step) {
      Tensor x = random_tensor({8, 4}, rng);
      store.zero_grad();
      Tensor loss = ops::mean(ops::square(ops::sub(ops::gelu(ops::linear(x, w, b)), Tensor::scalar(0.3))));
      losses.push_back(loss.item());
      backward(loss);
      adam_step(store, state);
    }
    return losses;
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(std::memcmp(&a[i], &b[i], sizeof(double)), 0);
}

TEST(Rng, FixedSeedReplays) {
  Rng a(5), b(5), c(6);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
  EXPECT_NE(Rng(5)(), c());
  Rng n(9);
  double m = 0.0;
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) m += n.normal();
  EXPECT_NEAR(m / draws, 0.0, 4.0 / std::sqrt(static_cast<double>(draws)));
}

TEST(Kernels, OpenMPMatchesSerialBitForBit) {
  Rng rng(8);
  const std::size_t m = 67, n = 45, k = 33;
  Tensor a = random_tensor({m, k}, rng);
  Tensor b = random_tensor({k, n}, rng);
  std::vector<double> c1(m * n), c2(m * n);
  kernels::serial::gemm_nn(m, n, k, a.data().data(), b.data().data(), c1.data(), false);
  kernels::omp::gemm_nn(m, n, k, a.data().data(), b.data().data(), c2.data(), false);
  EXPECT_EQ(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)), 0);

  Tensor img = random_tensor({4, 9, 11}, rng);
  const auto oh = kernels::conv_out_extent(9, 3, 2, 1), ow = kernels::conv_out_extent(11, 3, 2, 1);
  std::vector<double> col1(4 * 9 * oh * ow), col2(col1.size());
  kernels::serial::im2col(img.data().data(), 4, 9, 11, 3, 2, 1, col1.data());
  kernels::omp::im2col(img.data().data(), 4, 9, 11, 3, 2, 1, col2.data());
  EXPECT_EQ(col1, col2);
  std::vector<double> back1(4 * 9 * 11, 0.0), back2(back1.size(), 0.0);
  kernels::serial::col2im(col1.data(), 4, 9, 11, 3, 2, 1, back1.data());
  kernels::omp::col2im(col1.data(), 4, 9, 11, 3, 2, 1, back2.data());
  EXPECT_EQ(back1, back2);
}

TEST(Kernels, TransposedGemmVariants) {
  Rng rng(9);
  Tensor a = random_tensor({3, 4}, rng);  // used as A^T for a 4x3 A
  Tensor b = random_tensor({5, 3}, rng);  // used as B^T for a 3x5 B
  std::vector<double> c(4 * 5);
  kernels::gemm(true, true, 4, 5, 3, a.data().data(), b.data().data(), c.data(), false);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < 3; ++p) acc += a.at(p * 4 + i) * b.at(j * 3 + p);
      EXPECT_NEAR(c[i * 5 + j], acc, 1e-14);
    }
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("uasam_ckpt_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  Rng rng(10);
  ParamStore store;
  store.add("a.w", random_tensor({3, 4}, rng, -1e300, 1e300));
  store.add("b.v", random_tensor({5}, rng, -1e-300, 1e-300));
  store.freeze_prefix("a.");
  auto state = OptimizerState::from_config({0.0123});
  store.zero_grad();
  backward(ops::sum(ops::square(store.get("b.v"))));
  adam_step(store, state);
  const auto path = (dir_ / "x.ckpt").string();
  save_checkpoint(path, store, &state, {{"stage", "finetune"}, {"val_dice", 0.1 + 0.2}});

  auto c = load_checkpoint(path);
  ParamStore other;
  other.add("a.w", Tensor::zeros({3, 4}));
  other.add("b.v", Tensor::zeros({5}));
  restore_params(other, c);
  EXPECT_TRUE(bit_equal(other.get("a.w"), store.get("a.w")));
  EXPECT_TRUE(bit_equal(other.get("b.v"), store.get("b.v")));
  EXPECT_TRUE(other.is_frozen("a.w"));
  ASSERT_TRUE(c.optimizer.has_value());
  EXPECT_EQ(c.optimizer->learning_rate, state.learning_rate);
  EXPECT_EQ(c.optimizer->step_count, 1u);
  EXPECT_EQ(c.optimizer->first_moment, state.first_moment);
  EXPECT_EQ(c.optimizer->second_moment, state.second_moment);
  EXPECT_EQ(c.meta["val_dice"].get<double>(), 0.1 + 0.2);

  // Saving the restored store again reproduces the same bytes.
  const auto path2 = (dir_ / "y.ckpt").string();
  save_checkpoint(path2, other, &*c.optimizer, c.meta);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(s1.substr(0, 6), "UASAM1");
}

TEST_F(CheckpointTest, CorruptMagicIsRejected) {
  ParamStore store;
  store.add("w", Tensor::zeros({2}));
  const auto path = (dir_ / "bad.ckpt").string();
  save_checkpoint(path, store, nullptr, {});
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(5);
    f.put('9');
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  EXPECT_THROW(load_checkpoint((dir_ / "absent.ckpt").string()), CheckpointError);
}

TEST_F(CheckpointTest, RestoreRejectsShapeMismatch) {
  ParamStore store;
  store.add("w", Tensor::zeros({2}));
  const auto path = (dir_ / "m.ckpt").string();
  save_checkpoint(path, store, nullptr, {});
  ParamStore other;
  other.add("w", Tensor::zeros({3}));
  EXPECT_THROW(restore_params(other, load_checkpoint(path)), CheckpointError);
}

TEST(ParamStoreTest, NamesAreUnique) {
  ParamStore store;
  store.add("w", Tensor::zeros({1}));
  EXPECT_THROW(store.add("w", Tensor::zeros({1})), Error);
}
