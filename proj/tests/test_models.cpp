#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "oracles.hpp"

using namespace advgame;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "advgame-test-models";
  fs::create_directories(dir);
  return dir / name;
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(InitClassifier, SameSeedGivesBitIdenticalParameters) {
  const std::size_t hidden[] = {64, 64};
  const auto a = init_classifier(42, 20, hidden, 2);
  const auto b = init_classifier(42, 20, hidden, 2);
  EXPECT_EQ(encode_params(a), encode_params(b));
  EXPECT_NE(encode_params(a), encode_params(init_classifier(43, 20, hidden, 2)));
}

TEST(InitClassifier, NoHiddenLayersGivesOneAffineLayer) {
  const auto net = init_classifier(1, 7, {}, 3);
  ASSERT_EQ(net.layers.size(), 1u);
  EXPECT_EQ(net.input_dim(), 7u);
  EXPECT_EQ(net.output_dim(), 3u);
}

TEST(InitClassifier, LayersChainAndBiasesStartAtZero) {
  const std::size_t hidden[] = {8, 5};
  const auto net = init_classifier(3, 4, hidden, 3);
  ASSERT_EQ(net.layers.size(), 3u);
  EXPECT_EQ(net.layers[0].out(), net.layers[1].in());
  EXPECT_EQ(net.layers[1].out(), net.layers[2].in());
  EXPECT_EQ(net.output_dim(), 3u);
  for (const auto& l : net.layers)
    for (double b : l.bias.data()) EXPECT_EQ(b, 0.0);
}

TEST(InitClassifier, WeightScaleFollowsFanIn) {
  const std::size_t hidden[] = {8};
  const std::size_t fan_in[] = {4, 8};
  for (std::size_t layer = 0; layer < 2; ++layer) {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto net = init_classifier(seed, 4, hidden, 3);
      for (double w : net.layers[layer].weight.data()) {
        sum += w;
        sum_sq += w * w;
        ++n;
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(sum_sq / static_cast<double>(n) - mean * mean);
    const double target = std::sqrt(2.0 / static_cast<double>(fan_in[layer]));
    EXPECT_NEAR(sd, target, 0.2 * target) << "layer " << layer;
  }
}

TEST(InitClassifier, RejectsZeroSizes) {
  const std::size_t bad_hidden[] = {0};
  EXPECT_THROW(init_classifier(1, 0, {}, 2), DimensionError);
  EXPECT_THROW(init_classifier(1, 3, bad_hidden, 2), DimensionError);
}

TEST(InitAttNet, InputIsFeaturesPlusOneHotAndOutputIsFeatures) {
  const std::size_t hidden[] = {300, 300, 300};
  const auto v = init_attnet(9, 20, 2, hidden);
  EXPECT_EQ(v.input_dim(), 22u);
  EXPECT_EQ(v.output_dim(), 20u);
  EXPECT_EQ(v.layers.size(), 4u);
  EXPECT_EQ(attnet_feature_dim(v), 20u);
  EXPECT_EQ(attnet_label_classes(v), 2u);
}

TEST(AttNetForward, ZeroNetworkLeavesInputsUnchanged) {
  const std::size_t hidden[] = {6};
  const auto v = zeros_like(init_attnet(1, 4, 3, hidden));
  Rng rng(1);
  const Tensor x = random_tensor(rng, 5, 4, -1.0, 1.0);
  const std::vector<int> y{0, 1, 2, 0, 1};
  EXPECT_EQ(attnet_forward(v, x, y, 0.3).z, x);
}

TEST(AttNetForward, ZeroBudgetLeavesInputsUnchanged) {
  const std::size_t hidden[] = {6};
  const auto v = init_attnet(2, 4, 3, hidden);
  Rng rng(2);
  const Tensor x = random_tensor(rng, 5, 4, -1.0, 1.0);
  const std::vector<int> y{0, 1, 2, 0, 1};
  EXPECT_EQ(attnet_forward(v, x, y, 0.0).z, x);
}

TEST(AttNetForward, BudgetAndBoxHoldOverRandomDraws) {
  const std::size_t hidden[] = {6, 6};
  Rng rng(3);
  for (int draw = 0; draw < 1000; ++draw) {
    auto v = init_attnet(rng.next_u64(), 4, 3, hidden);
    // Large weights push tanh into saturation, the hardest case for the bounds.
    for (auto& l : v.layers)
      for (double& w : l.weight.data()) w *= 5.0;
    const Tensor x = random_tensor(rng, 3, 4, -1.0, 1.0);
    const auto y = verify::random_labels(rng, 3, 3);
    const auto z = attnet_forward(v, x, y, 0.2);
    double max_dev = 0.0, max_abs_z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      max_dev = std::max(max_dev, std::abs(z.z[i] - x[i]));
      max_abs_z = std::max(max_abs_z, std::abs(z.z[i]));
    }
    ASSERT_LE(max_dev, 0.2 + 1e-12);
    ASSERT_LE(max_abs_z, 1.0 + 1e-12);
  }
}

TEST(AttNetForward, MatchesDirectFormula) {
  const std::size_t hidden[] = {5};
  const auto v = init_attnet(4, 3, 2, hidden);
  Rng rng(4);
  const Tensor x = random_tensor(rng, 4, 3, -1.0, 1.0);
  const std::vector<int> y{1, 0, 0, 1};
  const auto z = attnet_forward(v, x, y, 0.25).z;
  const auto ref = oracle::to_ref(v);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<long double> in{x(i, 0), x(i, 1), x(i, 2), y[i] == 0 ? 1.0L : 0.0L, y[i] == 1 ? 1.0L : 0.0L};
    const auto dir = oracle::forward_row(ref, in);
    for (std::size_t k = 0; k < 3; ++k) {
      const long double want = std::clamp<long double>(x(i, k) + 0.25L * std::tanh(dir[k]), -1, 1);
      EXPECT_NEAR(z(i, k), static_cast<double>(want), 1e-15);
    }
  }
}

TEST(AttNetForward, RejectsMismatchedInputs) {
  const std::size_t hidden[] = {5};
  const auto v = init_attnet(4, 3, 2, hidden);
  const std::vector<int> y{0, 1};
  EXPECT_THROW(attnet_forward(v, Tensor::matrix(2, 4), y, 0.1), DimensionError);
  EXPECT_THROW(attnet_forward(v, Tensor::matrix(3, 3), y, 0.1), DimensionError);
}

// ---------------------------------------------------------------------------
// Parameter files
// ---------------------------------------------------------------------------

TEST(ParamFile, RoundTripsClassifierAndAttackNetwork) {
  const std::size_t hidden[] = {7, 3};
  auto u = init_classifier(5, 4, hidden, 3);
  Rng rng(5);
  for (auto& l : u.layers)
    for (double& b : l.bias.data()) b = rng.uniform(-1.0, 1.0);
  save_params(u, temp_path("u.advg"));
  EXPECT_EQ(load_classifier(temp_path("u.advg")), u);

  const auto v = init_attnet(6, 4, 3, hidden);
  save_params(v, temp_path("v.advg"));
  EXPECT_EQ(load_attnet(temp_path("v.advg")), v);
}

TEST(ParamFile, ByteLayoutMatchesIndependentWriter) {
  ClassifierParams net;
  net.layers.push_back({Tensor({1, 2}, std::vector<double>{1.5, -2.0}), Tensor({1, 2}, std::vector<double>{0.25, 0.0})});
  std::string want = "ADVG1";
  auto i32 = [&](std::int32_t v) {
    for (int k = 0; k < 4; ++k) want.push_back(static_cast<char>((static_cast<std::uint32_t>(v) >> (8 * k)) & 0xff));
  };
  auto f64 = [&](double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int k = 0; k < 8; ++k) want.push_back(static_cast<char>((u >> (8 * k)) & 0xff));
  };
  i32(1);
  i32(1);
  i32(2);
  f64(1.5);
  f64(-2.0);
  f64(0.25);
  f64(0.0);
  const auto bytes = encode_params(net);
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), want);
}

TEST(ParamFile, TruncatedFileIsAParseError) {
  const std::size_t hidden[] = {4};
  const auto bytes = encode_params(init_classifier(7, 3, hidden, 2));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, std::size_t{20}, bytes.size() - 1}) {
    const std::vector<unsigned char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_params<ClassifierTag>(part), ParseError) << "cut at " << cut;
  }
}

TEST(ParamFile, TrailingBytesAreAParseError) {
  const std::size_t hidden[] = {4};
  auto bytes = encode_params(init_classifier(7, 3, hidden, 2));
  bytes.push_back(0);
  EXPECT_THROW(decode_params<ClassifierTag>(bytes), ParseError);
}

TEST(ParamFile, BadMagicIsAParseError) {
  const std::size_t hidden[] = {4};
  auto bytes = encode_params(init_classifier(7, 3, hidden, 2));
  bytes[4] = '2';
  EXPECT_THROW(decode_params<ClassifierTag>(bytes), ParseError);
}

TEST(ParamFile, MismatchedDeclaredShapeNamesTheLayer) {
  try {
    load_classifier(oracle::fixture("params-mismatched.advg"));
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(ParamFile, NonFiniteParametersAreRejected) {
  const std::size_t hidden[] = {4};
  auto bytes = encode_params(init_classifier(7, 3, hidden, 2));
  const double nan = std::nan("");
  std::memcpy(bytes.data() + bytes.size() - 8, &nan, 8);
  EXPECT_THROW(decode_params<ClassifierTag>(bytes), ParseError);
}

TEST(ParamFile, ClassifierFileIsNotAnAttackNetwork) {
  const std::size_t hidden[] = {4};
  // Output at least as wide as the input cannot be a (d + C) -> d network.
  save_params(init_classifier(8, 2, hidden, 3), temp_path("c.advg"));
  EXPECT_THROW(load_attnet(temp_path("c.advg")), ShapeError);
}

TEST(Mlp, FromBlocksRejectsUnchainedLayers) {
  const std::vector<Tensor> blocks{Tensor::matrix(3, 4), Tensor::matrix(1, 4), Tensor::matrix(5, 2),
                                   Tensor::matrix(1, 2)};
  EXPECT_THROW(ClassifierParams::from_blocks(blocks), DimensionError);
}

TEST(Mlp, NonFiniteParametersViolateTheInvariant) {
  const std::size_t hidden[] = {4};
  auto net = init_classifier(1, 3, hidden, 2);
  net.layers[1].weight[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(net.validate(), NonFiniteError);
}
