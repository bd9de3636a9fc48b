#include <gtest/gtest.h>

#include <torch/torch.h>

#include "unpairseg/errors.hpp"
#include "unpairseg/networks.hpp"

using namespace unpairseg;

namespace {

// Layer-by-layer parameter arithmetic, written without reference to the
// module tree.
std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k, int dims) {
  std::int64_t kernel = 1;
  for (int d = 0; d < dims; ++d) kernel *= k;
  return in * out * kernel + out;
}

std::int64_t unet_oracle(const SegConfig& c) {
  const auto width = [&](int l) { return std::min<std::int64_t>(std::int64_t{c.base_width} << l, c.max_width); };
  const auto block = [&](std::int64_t in, std::int64_t out) {
    return conv_params(in, out, 3, 3) + 2 * out + conv_params(out, out, 3, 3) + 2 * out;
  };
  std::int64_t n = 0;
  std::int64_t in = 1;
  for (int l = 0; l < c.depth; ++l) {
    n += block(in, width(l));
    in = width(l);
  }
  for (int l = c.depth - 2; l >= 0; --l) {
    n += conv_params(width(l + 1), width(l), 2, 3);
    n += block(2 * width(l), width(l));
  }
  const int heads = c.depth > 2 ? c.depth - 2 : 1;
  for (int l = 0; l < heads; ++l) n += conv_params(width(l), c.n_classes, 1, 3);
  return n;
}

std::int64_t encoder_oracle(const GeneratorSpec& s) {
  std::int64_t n = conv_params(s.in_channels, s.base_width, 7, 2);
  std::int64_t c = s.base_width;
  for (int d = 0; d < s.downsamplings; ++d) {
    n += conv_params(c, 2 * c, 3, 2);
    c *= 2;
  }
  n += s.n_residual_blocks * 2 * conv_params(c, c, 3, 2);
  return n;
}

SegConfig small_seg() {
  SegConfig c;
  c.patch_size = {8, 16, 16};
  c.base_width = 4;
  c.depth = 4;
  c.max_width = 16;
  return c;
}

}  // namespace

TEST(UNet3D, DefaultParameterCountMatchesArithmetic) {
  const SegConfig cfg;
  UNet3D net(cfg);
  EXPECT_EQ(parameter_count(*net), unet_oracle(cfg));
}

TEST(UNet3D, CappedWidthParameterCountMatchesArithmetic) {
  SegConfig cfg = small_seg();
  cfg.max_width = 8;
  UNet3D net(cfg);
  EXPECT_EQ(parameter_count(*net), unet_oracle(cfg));
}

TEST(UNet3D, OutputShapesAtEveryHead) {
  const SegConfig cfg = small_seg();
  torch::manual_seed(0);
  UNet3D net(cfg);
  const auto outs = net->forward(torch::zeros({1, 1, 8, 16, 16}));
  ASSERT_EQ(static_cast<int>(outs.size()), cfg.num_heads());
  for (std::size_t l = 0; l < outs.size(); ++l) {
    const std::int64_t f = std::int64_t{1} << l;
    EXPECT_EQ(outs[l].sizes(), (std::vector<std::int64_t>{1, cfg.n_classes, 8 / f, 16 / f, 16 / f})) << "head " << l;
  }
}

TEST(UNet3D, SameSeedSameInitialParameters) {
  const SegConfig cfg = small_seg();
  torch::manual_seed(7);
  UNet3D a(cfg);
  torch::manual_seed(7);
  UNet3D b(cfg);
  const auto pa = a->parameters();
  const auto pb = b->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(torch::equal(pa[i], pb[i]));
}

TEST(SegConfigValidation, RejectsBadShapes) {
  SegConfig c = small_seg();
  c.patch_size = {12, 16, 16};
  EXPECT_THROW(c.validate(), InvalidConfigError);
  c = small_seg();
  c.patch_size = {4, 16, 16};
  EXPECT_THROW(c.validate(), InvalidConfigError);
  c = small_seg();
  c.n_classes = 1;
  EXPECT_THROW(c.validate(), InvalidConfigError);
  EXPECT_NO_THROW(small_seg().validate());
}

TEST(Generator, EncoderParameterCountMatchesArithmetic) {
  GeneratorSpec s;
  ResnetEncoder enc(s);
  EXPECT_EQ(parameter_count(*enc), encoder_oracle(s));
  s.in_channels = 3;
  s.base_width = 8;
  s.n_residual_blocks = 2;
  ResnetEncoder small(s);
  EXPECT_EQ(parameter_count(*small), encoder_oracle(s));
}

TEST(Generator, ShapesAndRange) {
  GeneratorSpec s;
  s.base_width = 8;
  s.n_residual_blocks = 2;
  torch::manual_seed(1);
  ResnetEncoder enc(s);
  TranslationDecoder dec(s);
  SegmentationDecoder seg(s, 4);
  const torch::Tensor x = torch::randn({2, 1, 32, 32});
  const EncoderOutput e = enc->forward(x);
  EXPECT_EQ(static_cast<int>(e.layers.size()), 2 + s.downsamplings + s.n_residual_blocks);
  EXPECT_EQ(enc->num_layers(), static_cast<int>(e.layers.size()));
  for (std::size_t i = 0; i < e.layers.size(); ++i) {
    EXPECT_EQ(e.layers[i].size(1), enc->layer_channels()[i]);
  }
  const torch::Tensor y = dec->forward(e.bottleneck);
  EXPECT_EQ(y.sizes(), x.sizes());
  EXPECT_LE(y.abs().max().item<float>(), 1.0F);
  EXPECT_EQ(seg->forward(e).sizes(), (std::vector<std::int64_t>{2, 4, 32, 32}));
}

TEST(Generator, RejectsInvalidSpec) {
  GeneratorSpec s;
  s.in_channels = 2;
  EXPECT_THROW(s.validate(), InvalidConfigError);
  s = {};
  s.n_residual_blocks = 0;
  EXPECT_THROW(s.validate(), InvalidConfigError);
}

TEST(Discriminator, PatchOutputFor256Input) {
  PatchDiscriminator d(1, 4);
  // 256 -> 128 -> 64 -> 32 -> 31 -> 30 for the 70x70 patch layout.
  EXPECT_EQ(d->forward(torch::zeros({1, 1, 256, 256})).sizes(), (std::vector<std::int64_t>{1, 1, 30, 30}));
}

TEST(ProjectionHeads, RowsAreUnitNorm) {
  torch::manual_seed(3);
  ProjectionHeads heads(std::vector<int>{3, 5}, 16);
  const torch::Tensor z = heads->forward(1, torch::randn({9, 5}));
  EXPECT_EQ(z.sizes(), (std::vector<std::int64_t>{9, 16}));
  EXPECT_TRUE(torch::allclose(z.norm(2, 1), torch::ones({9}), 1e-5, 1e-5));
}

TEST(InitGanWeights, NormalWeightsZeroBias) {
  torch::manual_seed(5);
  GeneratorSpec s;
  ResnetEncoder enc(s);
  init_gan_weights(*enc);
  for (const auto& p : enc->named_parameters()) {
    if (p.key().find("bias") != std::string::npos) {
      EXPECT_EQ(p.value().abs().max().item<float>(), 0.0F) << p.key();
    } else if (p.value().numel() > 10000) {
      EXPECT_NEAR(p.value().std().item<double>(), 0.02, 0.002) << p.key();
      EXPECT_NEAR(p.value().mean().item<double>(), 0.0, 0.002) << p.key();
    }
  }
}
