#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace unpairseg {

// ---------------------------------------------------------------------------
// 2D translation networks
// ---------------------------------------------------------------------------

struct GeneratorSpec {
  int in_channels = 1;
  int out_channels = 1;
  int base_width = 64;
  int n_residual_blocks = 9;
  int downsamplings = 2;

  void validate() const;
  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct EncoderOutput {
  /// Every tapped layer: [0] input, [1] stem, then one per downsampling,
  /// then one per residual block.
  std::vector<torch::Tensor> layers;
  /// Features at full, 1/2, ... resolution used as skip connections.
  std::vector<torch::Tensor> skips;
  torch::Tensor bottleneck;
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Encoding half of a ResNet generator: 7x7 stem, strided downsamplings,
/// residual blocks.
class ResnetEncoderImpl : public torch::nn::Module {
 public:
  explicit ResnetEncoderImpl(const GeneratorSpec& spec);
  EncoderOutput forward(const torch::Tensor& x);

  [[nodiscard]] int num_layers() const { return static_cast<int>(layer_channels_.size()); }
  [[nodiscard]] const std::vector<int>& layer_channels() const { return layer_channels_; }
  [[nodiscard]] int bottleneck_channels() const { return layer_channels_.back(); }

 private:
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> downs_;
  std::vector<ResidualBlock> blocks_;
  std::vector<int> layer_channels_;
};
TORCH_MODULE(ResnetEncoder);

/// Decoding half of a ResNet generator, ending in tanh.
class TranslationDecoderImpl : public torch::nn::Module {
 public:
  explicit TranslationDecoderImpl(const GeneratorSpec& spec);
  torch::Tensor forward(const torch::Tensor& bottleneck);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(TranslationDecoder);

/// U-Net style decoder over the translation encoder's skips.
class SegmentationDecoderImpl : public torch::nn::Module {
 public:
  SegmentationDecoderImpl(const GeneratorSpec& spec, int n_classes);
  torch::Tensor forward(const EncoderOutput& enc);

 private:
  std::vector<torch::nn::ConvTranspose2d> ups_;
  std::vector<torch::nn::Sequential> blocks_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(SegmentationDecoder);

/// PatchGAN discriminator (70x70 receptive field at n_layers = 3).
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl(int in_channels, int base_width, int n_layers = 3);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// One two-layer perceptron per sampled encoder layer.
class ProjectionHeadsImpl : public torch::nn::Module {
 public:
  ProjectionHeadsImpl(const std::vector<int>& in_channels, std::int64_t out_dim);
  /// Projects [N, C] features of head `i` and L2-normalises the rows.
  torch::Tensor forward(std::size_t i, const torch::Tensor& features);

 private:
  std::vector<torch::nn::Sequential> heads_;
};
TORCH_MODULE(ProjectionHeads);

/// Normal(0, 0.02) weights and zero biases for every conv / linear layer.
void init_gan_weights(torch::nn::Module& m);

std::int64_t parameter_count(const torch::nn::Module& m);

// ---------------------------------------------------------------------------
// 3D segmentation network
// ---------------------------------------------------------------------------

using Patch3 = std::array<std::int64_t, 3>;

struct SegConfig {
  Patch3 patch_size{48, 192, 192};
  int n_classes = 4;
  int base_width = 32;
  int depth = 5;
  int folds = 5;
  int max_width = 320;

  void validate() const;
  [[nodiscard]] int width_at(int level) const;
  /// Decoder levels that carry an output head; level 0 is the main output.
  [[nodiscard]] int num_heads() const { return depth > 2 ? depth - 2 : 1; }
  friend bool operator==(const SegConfig&, const SegConfig&) = default;
};

/// 3D U-Net: `depth` levels of (conv, instance norm, leaky ReLU) x 2 with
/// strided-conv downsampling and transposed-conv upsampling. Returns the
/// main output followed by the deep-supervision heads, highest resolution
/// first.
class UNet3DImpl : public torch::nn::Module {
 public:
  explicit UNet3DImpl(const SegConfig& cfg);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  SegConfig cfg_;
  std::vector<torch::nn::Sequential> encoder_;
  std::vector<torch::nn::ConvTranspose3d> ups_;
  std::vector<torch::nn::Sequential> decoder_;
  std::vector<torch::nn::Conv3d> heads_;
};
TORCH_MODULE(UNet3D);

}  // namespace unpairseg
