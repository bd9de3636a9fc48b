#include "unpairseg/networks.hpp"

#include <algorithm>

#include "unpairseg/errors.hpp"

namespace unpairseg {

namespace nn = torch::nn;

namespace {

nn::Sequential conv_norm_relu(int in, int out, int kernel, int stride, int padding) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding)),
                        nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out)), nn::ReLU(true));
}

nn::Sequential seg_block_2d(int in, int out) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)),
                        nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true)),
                        nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.01).inplace(true)),
                        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)),
                        nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true)),
                        nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.01).inplace(true)));
}

nn::Sequential block_3d(int in, int out, int stride) {
  return nn::Sequential(nn::Conv3d(nn::Conv3dOptions(in, out, 3).stride(stride).padding(1)),
                        nn::InstanceNorm3d(nn::InstanceNorm3dOptions(out).affine(true)),
                        nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.01).inplace(true)),
                        nn::Conv3d(nn::Conv3dOptions(out, out, 3).padding(1)),
                        nn::InstanceNorm3d(nn::InstanceNorm3dOptions(out).affine(true)),
                        nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.01).inplace(true)));
}

}  // namespace

void GeneratorSpec::validate() const {
  if (in_channels != 1 && in_channels != 3) throw InvalidConfigError("generator input must have 1 or 3 channels");
  if (out_channels < 1) throw InvalidConfigError("generator needs at least one output channel");
  if (base_width < 1) throw InvalidConfigError("generator width must be positive");
  if (n_residual_blocks < 1) throw InvalidConfigError("generator needs at least one residual block");
  if (downsamplings < 1) throw InvalidConfigError("generator needs at least one downsampling");
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  body_ = register_module(
      "body", nn::Sequential(nn::ReflectionPad2d(1), nn::Conv2d(nn::Conv2dOptions(channels, channels, 3)),
                             nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels)), nn::ReLU(true),
                             nn::ReflectionPad2d(1), nn::Conv2d(nn::Conv2dOptions(channels, channels, 3)),
                             nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels))));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

ResnetEncoderImpl::ResnetEncoderImpl(const GeneratorSpec& spec) {
  spec.validate();
  const int w = spec.base_width;
  stem_ = register_module("stem", nn::Sequential(nn::ReflectionPad2d(3), nn::Conv2d(nn::Conv2dOptions(spec.in_channels, w, 7)),
                                                 nn::InstanceNorm2d(nn::InstanceNorm2dOptions(w)), nn::ReLU(true)));
  layer_channels_ = {spec.in_channels, w};
  int c = w;
  for (int d = 0; d < spec.downsamplings; ++d) {
    downs_.push_back(register_module("down" + std::to_string(d), conv_norm_relu(c, 2 * c, 3, 2, 1)));
    c *= 2;
    layer_channels_.push_back(c);
  }
  for (int b = 0; b < spec.n_residual_blocks; ++b) {
    blocks_.push_back(register_module("block" + std::to_string(b), ResidualBlock(c)));
    layer_channels_.push_back(c);
  }
}

EncoderOutput ResnetEncoderImpl::forward(const torch::Tensor& x) {
  EncoderOutput out;
  out.layers.reserve(layer_channels_.size());
  out.layers.push_back(x);
  torch::Tensor h = stem_->forward(x);
  out.layers.push_back(h);
  out.skips.push_back(h);
  for (std::size_t d = 0; d < downs_.size(); ++d) {
    h = downs_[d]->forward(h);
    out.layers.push_back(h);
    if (d + 1 < downs_.size()) out.skips.push_back(h);
  }
  for (auto& b : blocks_) {
    h = b->forward(h);
    out.layers.push_back(h);
  }
  out.bottleneck = h;
  return out;
}

TranslationDecoderImpl::TranslationDecoderImpl(const GeneratorSpec& spec) {
  spec.validate();
  nn::Sequential body;
  int c = spec.base_width << spec.downsamplings;
  for (int d = 0; d < spec.downsamplings; ++d) {
    body->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, c / 2, 3).stride(2).padding(1).output_padding(1)));
    body->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c / 2)));
    body->push_back(nn::ReLU(true));
    c /= 2;
  }
  body->push_back(nn::ReflectionPad2d(3));
  body->push_back(nn::Conv2d(nn::Conv2dOptions(c, spec.out_channels, 7)));
  body->push_back(nn::Tanh());
  body_ = register_module("body", body);
}

torch::Tensor TranslationDecoderImpl::forward(const torch::Tensor& bottleneck) { return body_->forward(bottleneck); }

SegmentationDecoderImpl::SegmentationDecoderImpl(const GeneratorSpec& spec, int n_classes) {
  spec.validate();
  int c = spec.base_width << spec.downsamplings;
  for (int d = 0; d < spec.downsamplings; ++d) {
    ups_.push_back(register_module("up" + std::to_string(d),
                                   nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, c / 2, 2).stride(2))));
    blocks_.push_back(register_module("block" + std::to_string(d), seg_block_2d(c, c / 2)));
    c /= 2;
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(c, n_classes, 1)));
}

torch::Tensor SegmentationDecoderImpl::forward(const EncoderOutput& enc) {
  torch::Tensor h = enc.bottleneck;
  for (std::size_t d = 0; d < ups_.size(); ++d) {
    const torch::Tensor& skip = enc.skips[enc.skips.size() - 1 - d];
    h = blocks_[d]->forward(torch::cat({ups_[d]->forward(h), skip}, 1));
  }
  return head_->forward(h);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int in_channels, int base_width, int n_layers) {
  nn::Sequential body;
  const auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2).inplace(true)); };
  body->push_back(nn::Conv2d(nn::Conv2dOptions(in_channels, base_width, 4).stride(2).padding(1)));
  body->push_back(lrelu());
  int c = base_width;
  for (int n = 1; n < n_layers; ++n) {
    const int next = base_width * std::min(1 << n, 8);
    body->push_back(nn::Conv2d(nn::Conv2dOptions(c, next, 4).stride(2).padding(1)));
    body->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(next)));
    body->push_back(lrelu());
    c = next;
  }
  const int last = base_width * std::min(1 << n_layers, 8);
  body->push_back(nn::Conv2d(nn::Conv2dOptions(c, last, 4).stride(1).padding(1)));
  body->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(last)));
  body->push_back(lrelu());
  body->push_back(nn::Conv2d(nn::Conv2dOptions(last, 1, 4).stride(1).padding(1)));
  body_ = register_module("body", body);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

ProjectionHeadsImpl::ProjectionHeadsImpl(const std::vector<int>& in_channels, std::int64_t out_dim) {
  for (std::size_t i = 0; i < in_channels.size(); ++i) {
    heads_.push_back(register_module(
        "head" + std::to_string(i),
        nn::Sequential(nn::Linear(in_channels[i], out_dim), nn::ReLU(), nn::Linear(out_dim, out_dim))));
  }
}

torch::Tensor ProjectionHeadsImpl::forward(std::size_t i, const torch::Tensor& features) {
  const torch::Tensor z = heads_.at(i)->forward(features);
  return z / z.norm(2, 1, true).clamp_min(1e-12);
}

void init_gan_weights(nn::Module& m) {
  torch::NoGradGuard guard;
  for (auto& sub : m.modules(/*include_self=*/true)) {
    const bool conv = sub->as<nn::Conv2d>() || sub->as<nn::ConvTranspose2d>() || sub->as<nn::Linear>();
    if (!conv) continue;
    for (auto& p : sub->named_parameters(false)) {
      if (p.key() == "weight") {
        p.value().normal_(0.0, 0.02);
      } else if (p.key() == "bias") {
        p.value().zero_();
      }
    }
  }
}

std::int64_t parameter_count(const nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

void SegConfig::validate() const {
  if (n_classes < 2) throw InvalidConfigError("segmenter needs at least two classes");
  if (depth < 1) throw InvalidConfigError("segmenter depth must be positive");
  if (base_width < 1 || max_width < base_width) throw InvalidConfigError("invalid segmenter widths");
  const std::int64_t factor = std::int64_t{1} << (depth - 1);
  for (auto p : patch_size) {
    if (p < factor || p % factor != 0) {
      throw InvalidConfigError("patch size " + std::to_string(p) + " incompatible with depth " + std::to_string(depth));
    }
  }
}

int SegConfig::width_at(int level) const { return std::min(base_width << level, max_width); }

UNet3DImpl::UNet3DImpl(const SegConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  int in = 1;
  for (int l = 0; l < cfg.depth; ++l) {
    const int c = cfg.width_at(l);
    encoder_.push_back(register_module("enc" + std::to_string(l), block_3d(in, c, l == 0 ? 1 : 2)));
    in = c;
  }
  for (int l = cfg.depth - 2; l >= 0; --l) {
    const int c = cfg.width_at(l);
    const int below = cfg.width_at(l + 1);
    ups_.push_back(register_module("up" + std::to_string(l),
                                   nn::ConvTranspose3d(nn::ConvTranspose3dOptions(below, c, 2).stride(2))));
    decoder_.push_back(register_module("dec" + std::to_string(l), block_3d(2 * c, c, 1)));
  }
  for (int l = 0; l < cfg.num_heads(); ++l) {
    heads_.push_back(register_module("head" + std::to_string(l),
                                     nn::Conv3d(nn::Conv3dOptions(cfg.width_at(l), cfg.n_classes, 1))));
  }
}

std::vector<torch::Tensor> UNet3DImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> skips;
  torch::Tensor h = x;
  for (auto& block : encoder_) {
    h = block->forward(h);
    skips.push_back(h);
  }
  std::vector<torch::Tensor> outputs(static_cast<std::size_t>(cfg_.num_heads()));
  if (cfg_.depth == 1) {
    outputs[0] = heads_[0]->forward(h);
    return outputs;
  }
  for (std::size_t i = 0; i < ups_.size(); ++i) {
    const int level = cfg_.depth - 2 - static_cast<int>(i);
    h = decoder_[i]->forward(torch::cat({ups_[i]->forward(h), skips[static_cast<std::size_t>(level)]}, 1));
    if (level < cfg_.num_heads()) outputs[static_cast<std::size_t>(level)] = heads_[static_cast<std::size_t>(level)]->forward(h);
  }
  return outputs;
}

}  // namespace unpairseg
