#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include <torch/torch.h>

#include "test_util.hpp"
#include "unpairseg/errors.hpp"
#include "unpairseg/inference.hpp"
#include "unpairseg/losses.hpp"
#include "unpairseg/phantom.hpp"
#include "unpairseg/segmenter.hpp"

using namespace unpairseg;

namespace {

SegConfig tiny_seg() {
  SegConfig c;
  c.patch_size = {16, 32, 32};
  c.base_width = 8;
  c.depth = 3;
  c.max_width = 32;
  return c;
}

std::vector<LabeledCase> phantom_cases(int n, Shape3 shape, std::uint64_t seed) {
  PhantomConfig pc;
  pc.shape = shape;
  pc.n_cases = n;
  pc.seed = seed;
  std::vector<LabeledCase> out;
  for (auto& c : generate_phantoms(pc)) out.push_back({std::move(c.volume), std::move(c.labels)});
  return out;
}

}  // namespace

TEST(PolyLr, EndpointsAndMonotone) {
  EXPECT_DOUBLE_EQ(poly_lr(0.01, 0, 100, 0.9), 0.01);
  EXPECT_NEAR(poly_lr(0.01, 100, 100, 0.9), 0.0, 1e-15);
  double prev = poly_lr(0.01, 0, 100, 0.9);
  for (int t = 1; t <= 100; ++t) {
    const double cur = poly_lr(0.01, t, 100, 0.9);
    EXPECT_LT(cur, prev) << t;
    prev = cur;
  }
  EXPECT_NEAR(poly_lr(1.0, 50, 100, 0.9), std::pow(0.5, 0.9), 1e-12);
}

TEST(SegScheduleTest, Validation) {
  SegSchedule s;
  EXPECT_NO_THROW(s.validate());
  s.momentum = 1.0;
  EXPECT_THROW(s.validate(), InvalidConfigError);
  s = {};
  s.lr = 0.0;
  EXPECT_THROW(s.validate(), InvalidConfigError);
}

TEST(SplitFolds, TenCasesFiveFolds) {
  const auto folds = split_folds(10, 5, 42);
  ASSERT_EQ(folds.size(), 5U);
  std::multiset<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.val.size(), 2U);
    EXPECT_EQ(f.train.size(), 8U);
    seen.insert(f.val.begin(), f.val.end());
    for (auto v : f.val) EXPECT_EQ(std::count(f.train.begin(), f.train.end(), v), 0);
  }
  EXPECT_EQ(seen.size(), 10U);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(seen.count(i), 1U);
}

TEST(SplitFolds, NearEqualAndDeterministic) {
  const auto a = split_folds(11, 3, 7);
  const auto b = split_folds(11, 3, 7);
  for (std::size_t f = 0; f < a.size(); ++f) {
    EXPECT_EQ(a[f].val, b[f].val);
    EXPECT_GE(a[f].val.size(), 3U);
    EXPECT_LE(a[f].val.size(), 4U);
  }
  EXPECT_THROW(split_folds(10, 1, 0), InvalidConfigError);
  EXPECT_THROW(split_folds(2, 3, 0), InvalidConfigError);
}

TEST(PatchSamplerTest, ForegroundOversamplingRate) {
  const auto cases = phantom_cases(1, {32, 64, 64}, 3);
  PatchSampler sampler(cases, {8, 16, 16}, 0.33, 11);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) hits += sampler.sample().contains_foreground ? 1 : 0;
  EXPECT_GE(hits, 300);
}

TEST(PatchSamplerTest, PadsSmallCasesWithMinimum) {
  const auto cases = phantom_cases(1, {8, 24, 24}, 1);
  PatchSampler sampler(cases, {16, 32, 32}, 0.0, 0);
  const PatchDraw d = sampler.sample();
  EXPECT_EQ(d.image.sizes(), (std::vector<std::int64_t>{1, 16, 32, 32}));
  const float lo = *std::min_element(cases[0].volume.data.begin(), cases[0].volume.data.end());
  EXPECT_EQ(d.image[0][15][31][31].item<float>(), lo);
  EXPECT_EQ(d.label[15][31][31].item<std::int64_t>(), 0);
}

TEST(PatchSamplerTest, AugmentKeepsLabelImagePairing) {
  // The image encodes its own label so any geometric transform must keep them aligned.
  LabeledCase c{Volume(Shape3{8, 16, 16}, {1, 1, 1}), LabelMap(Shape3{8, 16, 16}, {1, 1, 1})};
  std::mt19937_64 rng(2);
  for (std::size_t i = 0; i < c.labels.data.size(); ++i) {
    c.labels.data[i] = static_cast<std::uint8_t>(rng() % 4);
    c.volume.data[i] = static_cast<float>(c.labels.data[i]);
  }
  const std::vector<LabeledCase> cases{c};
  PatchSampler sampler(cases, {8, 16, 16}, 0.5, 5);
  for (int i = 0; i < 20; ++i) {
    const PatchDraw d = sampler.augment(sampler.sample());
    const torch::Tensor diff = d.image[0] - d.label.to(torch::kFloat32);
    EXPECT_LE((diff - diff.flatten()[0]).abs().max().item<float>(), 1e-5F);
    EXPECT_LE(diff.flatten()[0].abs().item<float>(), 0.1F + 1e-6F);
  }
}

TEST(DeepSupervision, WeightsHalveAndNormalise) {
  torch::manual_seed(0);
  const torch::Tensor target = torch::randint(0, 3, {1, 8, 8, 8}, torch::kLong);
  const torch::Tensor o0 = torch::randn({1, 3, 8, 8, 8});
  const torch::Tensor o1 = torch::randn({1, 3, 4, 4, 4});
  const auto sub = target.index({torch::indexing::Slice(), torch::indexing::Slice(0, 8, 2),
                                 torch::indexing::Slice(0, 8, 2), torch::indexing::Slice(0, 8, 2)});
  const double expected = (aux_seg_loss(o0, target).item<double>() + 0.5 * aux_seg_loss(o1, sub).item<double>()) / 1.5;
  EXPECT_NEAR(deep_supervision_loss({o0, o1}, target).item<double>(), expected, 1e-6);
}

TEST(SegmenterModel, LogitsShapeAndCheckpointRoundTrip) {
  testutil::TempDir dir;
  Segmenter m(tiny_seg(), 4, 2);
  const torch::Tensor x = torch::randn({1, 1, 16, 32, 32});
  const torch::Tensor y = m.logits(x);
  EXPECT_EQ(y.sizes(), (std::vector<std::int64_t>{1, 4, 16, 32, 32}));
  m.save(dir.path() / "m.pt");
  const auto loaded = Segmenter::load(dir.path() / "m.pt");
  EXPECT_EQ(loaded->config(), m.config());
  EXPECT_EQ(loaded->fold(), 2);
  EXPECT_EQ(loaded->id(), m.id());
  EXPECT_TRUE(torch::equal(loaded->logits(x), y));
  EXPECT_THROW(Segmenter::load(dir.path() / "missing.pt"), FileNotFoundError);
}

TEST(SegmenterTraining, HistoryLengthAndDeterminism) {
  const auto cases = phantom_cases(2, {16, 32, 32}, 5);
  SegSchedule s;
  s.epochs = 3;
  s.seed = 13;
  s.iterations_per_epoch = 2;
  auto run = [&] {
    Segmenter m(tiny_seg(), s.seed);
    auto h = train_segmenter(m, cases, s);
    return std::make_pair(h.epoch_loss, m.id());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first.size(), 3U);
  for (double l : a.first) EXPECT_TRUE(std::isfinite(l));
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(SegmenterTraining, ValidationTrace) {
  const auto cases = phantom_cases(2, {16, 32, 32}, 6);
  SegSchedule s;
  s.epochs = 2;
  s.iterations_per_epoch = 1;
  s.val_every = 1;
  Segmenter m(tiny_seg(), 0);
  const std::vector<LabeledCase> val{cases[1]};
  const auto h = train_segmenter(m, {cases[0]}, s, &val);
  ASSERT_EQ(h.val_dice.size(), 2U);
  EXPECT_EQ(h.val_dice[1].first, 2);
  EXPECT_GE(h.val_dice[1].second, 0.0);
  EXPECT_LE(h.val_dice[1].second, 1.0);
}

TEST(SegmenterTraining, OverfitsOneCase) {
  const auto cases = phantom_cases(1, {16, 32, 32}, 8);
  SegSchedule s;
  s.epochs = 50;
  s.seed = 1;
  s.iterations_per_epoch = 20;
  Segmenter m(tiny_seg(), s.seed);
  train_segmenter(m, cases, s);
  std::vector<std::shared_ptr<SegmentationModel>> models{std::shared_ptr<SegmentationModel>(&m, [](auto*) {})};
  const LabelMap pred = argmax_labels(predict_volume(models, cases[0].volume, {}));
  EXPECT_GT(mean_foreground_dice(pred, cases[0].labels), 0.90);
}
