#include <gtest/gtest.h>

#include <cmath>

#include "oracles_losses.hpp"
#include "unpairseg/errors.hpp"
#include "unpairseg/losses.hpp"

using namespace unpairseg;
using namespace oracles;

namespace {

torch::Tensor mat(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<torch::Tensor> r;
  for (auto row : rows) r.push_back(torch::tensor(std::vector<double>(row), torch::kFloat64));
  return torch::stack(r);
}

}  // namespace

TEST(PatchNce, TwoOrthogonalPairs) {
  const auto x = mat({{1, 0}, {0, 1}});
  const double got = patch_nce(x, x, 0.07).item<double>();
  const double expected = 2.0 * std::log1p(std::exp(-1.0 / 0.07));
  EXPECT_NEAR(got, expected, 1e-12);
  EXPECT_NEAR(got, 1.2e-6, 0.05e-6);
}

TEST(PatchNce, EqualSimilaritiesGiveNLogN) {
  for (std::int64_t n : {2, 3, 5, 8}) {
    // Every anchor has the same dot product with every candidate.
    const torch::Tensor x = torch::ones({n, 4}, torch::kFloat64) / 2.0;
    EXPECT_NEAR(patch_nce(x, x, 0.07).item<double>(), static_cast<double>(n) * std::log(static_cast<double>(n)), 1e-9);
  }
}

TEST(PatchNce, PermutationInvariantAndPositive) {
  torch::manual_seed(1);
  const auto x = unit_rows(6, 5), y = unit_rows(6, 5);
  const auto perm = torch::randperm(6);
  EXPECT_NEAR(patch_nce(x, y, 0.07).item<double>(), patch_nce(x.index_select(0, perm), y.index_select(0, perm), 0.07).item<double>(), 1e-9);
  EXPECT_NEAR(weight_nce(x, y, 0.07, 0.1).item<double>(),
              weight_nce(x.index_select(0, perm), y.index_select(0, perm), 0.07, 0.1).item<double>(), 1e-9);
  for (int t = 0; t < 20; ++t) {
    const auto a = unit_rows(2 + t % 7, 3), b = unit_rows(2 + t % 7, 3);
    EXPECT_GT(patch_nce(a, b, 0.07).item<double>(), 0.0);
    EXPECT_GT(weight_nce(a, b, 0.07, 0.1).item<double>(), 0.0);
  }
}

TEST(PatchNce, MatchesScalarOracle) {
  torch::manual_seed(2);
  for (int t = 0; t < 10; ++t) {
    const auto x = unit_rows(2 + t % 7, 2 + t), y = unit_rows(2 + t % 7, 2 + t);
    EXPECT_NEAR(patch_nce(x, y, 0.07).item<double>(), nce_oracle(to_mat(x), to_mat(y), 0.07), 1e-9);
  }
}

TEST(PatchNce, NeedsNegatives) {
  const auto x = mat({{1, 0}});
  try {
    patch_nce(x, x, 0.07);
    FAIL();
  } catch (const ContrastiveLossError& e) {
    EXPECT_NE(std::string(e.what()).find("contrastive loss needs negatives"), std::string::npos);
  }
  EXPECT_THROW(weight_nce(x, x, 0.07, 0.1), ContrastiveLossError);
}

TEST(PatchNce, FeatureSetValidation) {
  torch::manual_seed(3);
  PatchFeatureSet fs{unit_rows(4, 3), unit_rows(4, 3), 0, {0, 1, 2, 3}};
  EXPECT_NO_THROW(fs.validate());
  EXPECT_NEAR(patch_nce(fs, 0.07).item<double>(), patch_nce(fs.anchors, fs.positives, 0.07).item<double>(), 0);
  fs.anchors = fs.anchors * 2.0;
  EXPECT_THROW(fs.validate(), InvalidConfigError);
  fs.anchors = unit_rows(3, 3);
  EXPECT_THROW(fs.validate(), ShapeMismatchError);
}

TEST(ContrastWeights, RowsSumToOneOverNegatives) {
  torch::manual_seed(4);
  for (int t = 0; t < 10; ++t) {
    const std::int64_t n = 2 + t % 7;
    const auto sims = torch::randn({n, n}, torch::kFloat64);
    const auto w = contrast_weights(sims, 0.1);
    for (std::int64_t i = 0; i < n; ++i) {
      EXPECT_EQ(w[i][i].item<double>(), 0.0);
      EXPECT_NEAR(w[i].sum().item<double>(), 1.0, 1e-6);
    }
    EXPECT_GE(w.min().item<double>(), 0.0);
    const Mat expected = weights_oracle(to_mat(sims), 0.1);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) EXPECT_NEAR(w[i][j].item<double>(), expected[i][j], 1e-12);
    }
  }
}

TEST(ContrastWeights, UniformCases) {
  const auto equal = torch::full({5, 5}, 0.3, torch::kFloat64);
  const auto w = contrast_weights(equal, 0.1);
  torch::manual_seed(5);
  const auto wide = contrast_weights(torch::rand({6, 6}, torch::kFloat64) * 2 - 1, 1e6);
  for (std::int64_t i = 0; i < 5; ++i) {
    for (std::int64_t j = 0; j < 5; ++j) {
      if (i != j) EXPECT_NEAR(w[i][j].item<double>(), 0.25, 1e-12);
    }
  }
  for (std::int64_t i = 0; i < 6; ++i) {
    for (std::int64_t j = 0; j < 6; ++j) {
      if (i != j) EXPECT_LT(std::abs(wide[i][j].item<double>() - 0.2), 1e-6);
    }
  }
}

TEST(ContrastWeights, SoftmaxNineOne) {
  const auto sims = mat({{0.5, 0.9, 0.1}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}});
  const auto w = contrast_weights(sims, 0.1);
  const double a = std::exp(9.0) / (std::exp(9.0) + std::exp(1.0));
  EXPECT_NEAR(w[0][1].item<double>(), a, 1e-12);
  EXPECT_NEAR(w[0][2].item<double>(), 1.0 - a, 1e-12);
  EXPECT_NEAR(w[0][1].item<double>(), 0.99967, 1e-5);
  EXPECT_NEAR(w[0][2].item<double>(), 0.00034, 1e-5);
}

TEST(WeightNce, WorkedTwoByTwoExample) {
  const auto x = mat({{1, 0}, {0, 1}});
  const auto y = mat({{0.6, 0.8}, {0.8, 0.6}});
  // From scratch: with two pairs each anchor has one negative, weight 1.
  double expected = 0;
  const double s[2][2] = {{0.6, 0.8}, {0.8, 0.6}};
  for (int i = 0; i < 2; ++i) {
    const int j = 1 - i;
    const double wij = std::exp(s[i][j] / 0.1) / std::exp(s[i][j] / 0.1);
    expected += -std::log(std::exp(s[i][i] / 0.07) / (std::exp(s[i][i] / 0.07) + wij * std::exp(s[i][j] / 0.07)));
  }
  EXPECT_NEAR(weight_nce(x, y, 0.07, 0.1).item<double>(), expected, 1e-6);
}

TEST(WeightNce, UniformSimilaritiesReduceToUniformWeights) {
  const std::int64_t n = 4;
  // Off-diagonal similarities all equal, diagonal larger.
  torch::Tensor x = torch::zeros({n, n + 1}, torch::kFloat64);
  torch::Tensor y = torch::zeros({n, n + 1}, torch::kFloat64);
  for (std::int64_t i = 0; i < n; ++i) {
    x[i][i] = std::sqrt(0.5);
    x[i][n] = std::sqrt(0.5);
    y[i][i] = std::sqrt(0.5);
    y[i][n] = std::sqrt(0.5);
  }
  const Mat uniform(n, std::vector<double>(n, 1.0 / (n - 1)));
  EXPECT_NEAR(weight_nce(x, y, 0.07, 0.1).item<double>(), nce_oracle(to_mat(x), to_mat(y), 0.07, uniform), 1e-9);
}

TEST(WeightNce, MatchesOracleAndLargeBetaLimit) {
  torch::manual_seed(6);
  for (int t = 0; t < 10; ++t) {
    const std::int64_t n = 2 + t % 7;
    const auto x = unit_rows(n, 8), y = unit_rows(n, 8);
    const Mat w = weights_oracle(sims_of(to_mat(x), to_mat(y)), 0.1);
    EXPECT_NEAR(weight_nce(x, y, 0.07, 0.1).item<double>(), nce_oracle(to_mat(x), to_mat(y), 0.07, w), 1e-9);
    const Mat uniform(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n - 1)));
    EXPECT_NEAR(weight_nce(x, y, 0.07, 1e6).item<double>(), nce_oracle(to_mat(x), to_mat(y), 0.07, uniform), 1e-5);
  }
}

TEST(WeightNce, DecreasesAsPositiveSimilarityGrows) {
  // Raising y_0[0] changes x_0 . y_0 only; every other dot product is fixed.
  torch::Tensor xa = torch::zeros({3, 5}, torch::kFloat64);
  torch::Tensor ya = torch::zeros({3, 5}, torch::kFloat64);
  xa[0][0] = 1; xa[1][1] = 1; xa[2][2] = 1;
  ya[0][0] = 0.2; ya[0][1] = 0.3; ya[1][1] = 0.5; ya[1][2] = 0.1; ya[2][2] = 0.4; ya[2][0] = 0.2;
  double prev = weight_nce(xa, ya, 0.07, 0.1).item<double>();
  for (int step = 1; step <= 5; ++step) {
    torch::Tensor yb = ya.clone();
    yb[0][0] = 0.2 + 0.1 * step;
    const double cur = weight_nce(xa, yb, 0.07, 0.1).item<double>();
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(CycleLoss, ValuesAndShapeCheck) {
  torch::manual_seed(8);
  const auto a = torch::randn({2, 1, 5, 5}, torch::kFloat64);
  EXPECT_EQ(cycle_loss(a, a).item<double>(), 0.0);
  EXPECT_NEAR(cycle_loss(a, a + 0.3).item<double>(), 0.3, 1e-12);
  const auto b = torch::randn({2, 1, 5, 5}, torch::kFloat64);
  double sum = 0;
  auto fa = a.flatten(), fb = b.flatten();
  for (std::int64_t i = 0; i < fa.numel(); ++i) sum += std::abs(fa[i].item<double>() - fb[i].item<double>());
  EXPECT_NEAR(cycle_loss(a, b).item<double>(), sum / static_cast<double>(fa.numel()), 1e-6);
  EXPECT_THROW(cycle_loss(a, torch::zeros({2, 1, 5, 4}, torch::kFloat64)), ShapeMismatchError);
}

TEST(AdversarialLoss, Values) {
  EXPECT_EQ(adversarial_loss(torch::ones({1, 1, 4, 4}), true).item<double>(), 0.0);
  EXPECT_EQ(adversarial_loss(torch::zeros({1, 1, 4, 4}), true).item<double>(), 1.0);
  torch::manual_seed(9);
  const auto d = torch::randn({1, 1, 3, 4}, torch::kFloat64);
  for (bool real : {true, false}) {
    double sum = 0;
    auto f = d.flatten();
    for (std::int64_t i = 0; i < f.numel(); ++i) sum += std::pow(f[i].item<double>() - (real ? 1.0 : 0.0), 2);
    EXPECT_NEAR(adversarial_loss(d, real).item<double>(), sum / static_cast<double>(f.numel()), 1e-6);
  }
}

TEST(AuxSegLoss, SaturatedLogitsNearZero) {
  torch::manual_seed(10);
  const auto target = torch::randint(0, 3, {1, 6, 6}, torch::kLong);
  const auto logits = (torch::one_hot(target, 3).movedim(-1, 1).to(torch::kFloat64) * 100.0) - 50.0;
  EXPECT_LT(aux_seg_loss(logits, target).item<double>(), 1e-3);
}

TEST(AuxSegLoss, UniformLogitsBalancedTargetCrossEntropyIsLog2) {
  auto target = torch::zeros({1, 4, 4}, torch::kLong);
  target.index_put_({0, torch::indexing::Slice(0, 2)}, 1);
  const auto logits = torch::zeros({1, 2, 4, 4}, torch::kFloat64);
  const double ce = aux_seg_loss(logits, target).item<double>() - soft_dice_loss(logits, target).item<double>();
  EXPECT_NEAR(ce, std::log(2.0), 1e-12);
}

TEST(AuxSegLoss, MatchesScalarOracle) {
  torch::manual_seed(11);
  for (int t = 0; t < 5; ++t) {
    const auto logits = torch::randn({1, 3, 4, 4}, torch::kFloat64) * 2;
    const auto target = torch::randint(0, 3, {1, 4, 4}, torch::kLong);
    EXPECT_NEAR(aux_seg_loss(logits, target).item<double>(), dice_ce_oracle(logits, target), 1e-6);
  }
}

TEST(AuxSegLoss, ClassOutOfRangeRaises) {
  const auto logits = torch::zeros({1, 2, 2, 2});
  auto target = torch::zeros({1, 2, 2}, torch::kLong);
  target[0][0][0] = 2;
  EXPECT_THROW(aux_seg_loss(logits, target), ClassOutOfRangeError);
}

TEST(Gradients, AllLossesMatchCentralDifferences) {
  for (const auto& r : run_gradient_suite(10)) {
    EXPECT_GE(r.instances, 10) << r.loss;
    EXPECT_LT(r.worst_relative_error, 1e-4) << r.loss;
  }
}

TEST(ContrastConfig, Invariants) {
  ContrastConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 0;
  EXPECT_THROW(c.validate(), InvalidConfigError);
  c = {};
  c.beta = -1;
  EXPECT_THROW(c.validate(), InvalidConfigError);
  c = {};
  c.patches_per_layer = 1;
  EXPECT_THROW(c.validate(), InvalidConfigError);
}
