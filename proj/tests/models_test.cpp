#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "gradpath/gradcheck.hpp"
#include "gradpath/gradinput.hpp"
#include "gradpath/models.hpp"

namespace gradpath {
namespace {

// Walks the layer geometry by hand: conv 3x3 (cin*9*f + f), batchnorm (2f),
// pool halves h and w, dense (fin*fout + fout). Independent of the builders.
std::size_t shape_walk_params(std::size_t c, std::size_t h, std::size_t w,
                              std::vector<std::pair<std::size_t, bool>> blocks,
                              std::vector<std::size_t> dense) {
  std::size_t total = 0;
  for (auto [f, pool] : blocks) {
    total += c * 9 * f + f + 2 * f;
    c = f;
    if (pool) {
      h /= 2;
      w /= 2;
    }
  }
  std::size_t fin = c * h * w;
  for (std::size_t d : dense) {
    total += fin * d + d;
    fin = d;
  }
  return total;
}

std::vector<std::string> kinds_of(const ModelSpec<float>& m) {
  std::vector<std::string> out;
  for (const auto& l : m.trunk()) out.emplace_back(to_string(l->kind()));
  for (const auto& l : m.head()) out.emplace_back(to_string(l->kind()));
  return out;
}

Tensor random_images(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t(s);
  for (float& v : t.data()) v = u(rng);
  return t;
}

TEST(BuildBaseline, MnistLayerSequence) {
  const auto m = build_baseline<float>(DatasetKind::mnist, 1);
  const std::vector<std::string> expected{"conv2d",    "relu",    "maxpool2x2", "dropout",
                                          "batchnorm", "flatten", "dense",      "dense"};
  EXPECT_EQ(kinds_of(m), expected);
  EXPECT_EQ(m.trunk()[0]->describe(), "[3x3, 4], padding 1");
  EXPECT_EQ(m.trunk()[3]->describe(), "0.2");
  auto* d1 = dynamic_cast<Dense<float>*>(m.head()[0].get());
  auto* d2 = dynamic_cast<Dense<float>*>(m.head()[1].get());
  ASSERT_TRUE(d1 && d2);
  EXPECT_EQ(d1->in_features(), 4u * 14 * 14);
  EXPECT_EQ(d1->out_features(), 64u);
  EXPECT_EQ(d2->out_features(), 10u);
}

TEST(BuildBaseline, CifarLayerSequence) {
  const auto m = build_baseline<float>(DatasetKind::cifar10, 1);
  const std::vector<std::string> expected{
      "conv2d", "relu", "maxpool2x2", "dropout", "batchnorm",  // block 1
      "conv2d", "relu", "dropout",    "batchnorm",             // block 2
      "conv2d", "relu", "dropout",    "batchnorm",             // block 3
      "flatten", "dense", "dense", "dense"};
  EXPECT_EQ(kinds_of(m), expected);
  EXPECT_EQ(m.trunk()[5]->describe(), "[3x3, 32], padding 1");
  EXPECT_EQ(m.trunk()[9]->describe(), "[3x3, 64], padding 1");
  auto* last = dynamic_cast<Dense<float>*>(m.head().back().get());
  EXPECT_EQ(last->out_features(), 10u);
}

TEST(BuildBaseline, Cifar100FinalWidth) {
  const auto m = build_baseline<float>(DatasetKind::cifar100, 1);
  auto* last = dynamic_cast<Dense<float>*>(m.head().back().get());
  ASSERT_NE(last, nullptr);
  EXPECT_EQ(last->out_features(), 100u);
}

TEST(ParamCount, MatchesShapeWalkOracle) {
  const std::size_t mnist = shape_walk_params(1, 28, 28, {{4, true}}, {64, 10});
  const std::size_t c10 =
      shape_walk_params(3, 32, 32, {{16, true}, {32, false}, {64, false}}, {128, 128, 10});
  const std::size_t c100 =
      shape_walk_params(3, 32, 32, {{16, true}, {32, false}, {64, false}}, {128, 128, 100});
  EXPECT_EQ(mnist, 50938u);
  EXPECT_EQ(c10, 2138890u);
  EXPECT_EQ(c100, 2150500u);
  EXPECT_EQ(param_count(build_baseline<float>(DatasetKind::mnist, 3)), mnist);
  EXPECT_EQ(param_count(build_baseline<float>(DatasetKind::cifar10, 3)), c10);
  EXPECT_EQ(param_count(build_baseline<float>(DatasetKind::cifar100, 3)), c100);
}

TEST(ParamCount, DualEqualsSingleForEveryKind) {
  for (DatasetKind k : {DatasetKind::mnist, DatasetKind::cifar10, DatasetKind::cifar100,
                        DatasetKind::toy}) {
    EXPECT_EQ(param_count(build_dualpath<float>(k, 5)), param_count(build_baseline<float>(k, 5)))
        << to_string(k);
  }
}

TEST(BuildDualpath, SameInitialWeightsAsBaseline) {
  const auto single = build_baseline<float>(DatasetKind::mnist, 9);
  const auto dual = build_dualpath<float>(DatasetKind::mnist, 9);
  EXPECT_EQ(dual.topology(), Topology::dual);
  const auto a = single.named_tensors(), b = dual.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(*a[i].second, *b[i].second);
    EXPECT_EQ(a[i].second->shape(), b[i].second->shape());
  }
}

TEST(BuildDualpath, SingleAddPointAfterFlatten) {
  const auto rows = layer_table(build_dualpath<float>(DatasetKind::cifar10, 1));
  std::size_t adds = 0, add_at = 0, flatten_at = 0, dense1_at = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].kind == "add") {
      ++adds;
      add_at = i;
    }
    if (rows[i].name == "flatten_1") flatten_at = i;
    if (rows[i].name == "dense_1") dense1_at = i;
  }
  EXPECT_EQ(adds, 1u);
  EXPECT_EQ(add_at, flatten_at + 1);
  EXPECT_EQ(dense1_at, add_at + 1);
  EXPECT_EQ(rows.front().name, "lambda_1");

  for (const auto& r : layer_table(build_baseline<float>(DatasetKind::cifar10, 1))) {
    EXPECT_NE(r.kind, "add");
  }
}

TEST(WithTopology, SharesLayerObjects) {
  auto single = build_baseline<float>(DatasetKind::mnist, 2);
  auto dual = single.with_topology(Topology::dual);
  ASSERT_EQ(single.trunk().size(), dual.trunk().size());
  for (std::size_t i = 0; i < single.trunk().size(); ++i) {
    EXPECT_EQ(single.trunk()[i].get(), dual.trunk()[i].get());
  }
  // cloned specs own separate storage
  auto copy = single.clone();
  EXPECT_NE(copy.trunk()[0].get(), single.trunk()[0].get());
  EXPECT_EQ(copy.trunk()[0]->params()[0].value, single.trunk()[0]->params()[0].value);
}

TEST(Forward, MnistLogitShape) {
  auto m = build_baseline<float>(DatasetKind::mnist, 1);
  EXPECT_EQ(m.forward(random_images(Shape{3, 1, 28, 28}, 1), Mode::train).logits.shape(),
            (Shape{3, 10}));
  auto d = build_dualpath<float>(DatasetKind::mnist, 1);
  const auto out = d.forward(random_images(Shape{3, 1, 28, 28}, 1), Mode::train);
  EXPECT_EQ(out.logits.shape(), (Shape{3, 10}));
  ASSERT_TRUE(out.trace.branches.has_value());
  EXPECT_EQ((*out.trace.branches)[0].shape(), (Shape{3, 784}));
  EXPECT_EQ((*out.trace.branches)[1].shape(), (Shape{3, 784}));
  EXPECT_EQ(out.trace.features.shape(), (Shape{6, 784}));
}

TEST(Forward, WrongInputShape) {
  auto m = build_baseline<float>(DatasetKind::mnist, 1);
  EXPECT_THROW(m.forward(Tensor(Shape{2, 3, 28, 28}), Mode::eval), DimensionError);
  EXPECT_THROW(m.forward(Tensor(Shape{2, 1, 32, 32}), Mode::eval), DimensionError);
}

TEST(Forward, EvalIsDeterministic) {
  auto m = build_dualpath<float>(DatasetKind::cifar10, 4);
  const Tensor x = random_images(Shape{2, 3, 32, 32}, 3);
  EXPECT_EQ(m.forward(x, Mode::eval).logits, m.forward(x, Mode::eval).logits);
}

TEST(StubbedTransform, IdentityDoublesFlattenOutput) {
  auto single = build_baseline<float>(DatasetKind::mnist, 6);
  auto dual = single.with_topology(Topology::dual);
  dual.set_input_transform([](const Tensor& x) { return x; });
  const Tensor x = random_images(Shape{4, 1, 28, 28}, 8);
  const Tensor flat = single.forward(x, Mode::eval).trace.features;
  const Tensor fused = dual.forward(x, Mode::eval).trace.head_input;
  EXPECT_EQ(fused, scale(flat, 2.0f));
}

TEST(StubbedTransform, ZeroBranchAddsNothing) {
  auto single = build_baseline<float>(DatasetKind::cifar10, 6);
  auto dual = single.with_topology(Topology::dual);
  dual.set_input_transform([](const Tensor& x) { return Tensor(x.shape()); });
  const Tensor x = random_images(Shape{2, 3, 32, 32}, 8);
  EXPECT_EQ(dual.forward(x, Mode::eval).logits, single.forward(x, Mode::eval).logits);
}

TEST(Backward, StaleTraceIsStateError) {
  auto m = build_baseline<float>(DatasetKind::toy, 1);
  const Tensor x = random_images(Shape{2, 1, 8, 8}, 1);
  auto first = m.forward(x, Mode::train);
  auto second = m.forward(x, Mode::train);
  EXPECT_THROW(m.backward(first.trace, Tensor(Shape{2, 10})), StateError);
  m.backward(second.trace, Tensor(Shape{2, 10}));
  EXPECT_THROW(m.backward(second.trace, Tensor(Shape{2, 10})), StateError);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  for (Topology t : {Topology::single, Topology::dual}) {
    auto m = build_model<double>(architecture_for(DatasetKind::toy), t, 3);
    std::mt19937_64 rng(2);
    TensorD x(Shape{3, 1, 8, 8});
    for (double& v : x.data()) v = std::uniform_real_distribution<double>(0, 1)(rng);
    auto out = m.forward(x, Mode::train);
    m.backward(out.trace, TensorD(out.logits.shape()));
    for (const Param<double>* p : m.params()) EXPECT_EQ(p->grad, TensorD(p->value.shape()));
  }
}

TEST(Backward, DualEqualsSumOfBranchPasses) {
  // Eval-mode (frozen batchnorm, identity dropout) so each branch is an independent function.
  auto dual = build_model<double>(tiny_architecture(3, 8, 5), Topology::dual, 11);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  TensorD x(Shape{2, 1, 8, 8});
  for (double& v : x.data()) v = u(rng);
  const std::vector<std::int32_t> labels{1, 4};
  // give batchnorm non-trivial running stats
  dual.forward(x, Mode::train);

  dual.zero_grad();
  auto out = dual.forward(x, Mode::eval);
  const auto lv = softmax_cross_entropy(out.logits, std::span<const std::int32_t>(labels));
  dual.backward(out.trace, lv.logits_grad);
  std::vector<TensorD> dual_grads;
  for (const Param<double>* p : dual.params()) dual_grads.push_back(p->grad);

  // oracle: run each branch through the trunk separately with the same weights
  auto oracle = dual.clone();
  oracle.zero_grad();
  auto run_trunk = [&](const TensorD& in) {
    TensorD h = in;
    for (auto& l : oracle.trunk()) h = l->forward(h, Mode::eval);
    return h;
  };
  auto back_trunk = [&](TensorD d) {
    for (auto it = oracle.trunk().rbegin(); it != oracle.trunk().rend(); ++it) d = (*it)->backward(d);
  };
  const TensorD g = gradient_transform(x);
  TensorD fused = add_elementwise(run_trunk(x), run_trunk(g));
  TensorD h = fused;
  for (auto& l : oracle.head()) h = l->forward(h, Mode::eval);
  const auto lv2 = softmax_cross_entropy(h, std::span<const std::int32_t>(labels));
  TensorD d = lv2.logits_grad;
  for (auto it = oracle.head().rbegin(); it != oracle.head().rend(); ++it) d = (*it)->backward(d);
  run_trunk(x);
  back_trunk(d);
  run_trunk(g);
  back_trunk(d);

  const auto oracle_params = oracle.params();
  ASSERT_EQ(oracle_params.size(), dual_grads.size());
  for (std::size_t i = 0; i < dual_grads.size(); ++i) {
    const TensorD& want = oracle_params[i]->grad;
    for (std::size_t k = 0; k < want.size(); ++k) {
      EXPECT_NEAR(dual_grads[i][k], want[k], 1e-12) << oracle_params[i]->name;
    }
  }
}

TEST(Backward, TinyDualModelPassesFiniteDifferences) {
  GradcheckOptions opts;
  for (Topology t : {Topology::single, Topology::dual}) {
    auto m = build_model<double>(tiny_architecture(2, 8, 4), t, 21);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    TensorD x(Shape{2, 1, 8, 8});
    for (double& v : x.data()) v = u(rng);
    const std::vector<std::int32_t> labels{0, 3};
    for (const auto& e : check_model(m, x, labels, Mode::train, opts)) {
      EXPECT_LT(e.max_rel_error, 1e-4) << to_string(t) << " " << e.tensor;
    }
  }
}

TEST(Parsing, KindsAndTopologies) {
  EXPECT_EQ(parse_dataset_kind("cifar100"), DatasetKind::cifar100);
  EXPECT_EQ(parse_topology("dualpath"), Topology::dual);
  EXPECT_EQ(parse_topology("baseline"), Topology::single);
  EXPECT_THROW(parse_dataset_kind("imagenet"), ParameterError);
  EXPECT_THROW(parse_topology("triple"), ParameterError);
  EXPECT_THROW(architecture_for(static_cast<DatasetKind>(42)), ParameterError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path path_ =
      std::filesystem::temp_directory_path() /
      ("gradpath_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
       "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name() + ".bin");
  void TearDown() override { std::filesystem::remove(path_); }
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  auto m = build_dualpath<float>(DatasetKind::mnist, 13);
  m.forward(random_images(Shape{4, 1, 28, 28}, 2), Mode::train);  // move running stats
  save_checkpoint(m, path_);
  const auto loaded = load_checkpoint(path_);
  EXPECT_EQ(loaded.topology(), Topology::dual);
  EXPECT_EQ(loaded.dataset_kind(), DatasetKind::mnist);
  const auto a = m.named_tensors(), b = loaded.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(*a[i].second, *b[i].second);
  }
  // writing the loaded model reproduces the file byte for byte
  const auto again = path_.string() + ".2";
  save_checkpoint(loaded, again);
  std::ifstream f1(path_, std::ios::binary), f2(again, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}),
      s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(s1.substr(0, 5), "GPTH1");
  std::filesystem::remove(again);
}

TEST_F(CheckpointTest, CorruptFilesAreFormatErrors) {
  save_checkpoint(build_baseline<float>(DatasetKind::toy, 1), path_);
  std::string bytes;
  {
    std::ifstream f(path_, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(f)), {});
  }
  auto write = [&](const std::string& s) {
    std::ofstream f(path_, std::ios::binary | std::ios::trunc);
    f << s;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  write(bad_magic);
  EXPECT_THROW(load_checkpoint(path_), FormatError);

  write(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(path_), FormatError);

  std::string bad_kind = bytes;
  bad_kind[5] = 9;
  write(bad_kind);
  try {
    load_checkpoint(path_);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 5u);
  }
}

}  // namespace
}  // namespace gradpath
