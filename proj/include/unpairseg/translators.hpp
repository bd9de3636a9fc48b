#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "unpairseg/losses.hpp"
#include "unpairseg/networks.hpp"
#include "unpairseg/preprocess.hpp"
#include "unpairseg/volume.hpp"

namespace unpairseg {

enum class Style { kWcut, kCycleGan, kCut };

std::string style_name(Style s);
Style parse_style(const std::string& name);

// ---------------------------------------------------------------------------
// Slice datasets
// ---------------------------------------------------------------------------

struct SliceSample {
  torch::Tensor image;   // [C, H, W]
  torch::Tensor center;  // [1, H, W]
  torch::Tensor label;   // [H, W] int64, undefined when unlabeled
  std::size_t volume_index = 0;
  std::int64_t slice_index = 0;
};

/// Axial slices (1 channel) or replicate-padded adjacent-slice stacks
/// (3 channels) drawn lazily from a set of volumes.
class SliceDataset {
 public:
  SliceDataset() = default;
  SliceDataset(std::vector<std::pair<Volume, std::optional<LabelMap>>> volumes, int channels);

  [[nodiscard]] std::size_t size() const { return index_.size(); }
  [[nodiscard]] bool empty() const { return index_.empty(); }
  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] bool labeled() const;
  [[nodiscard]] PlaneSize plane() const;
  [[nodiscard]] SliceSample get(std::size_t i) const;

 private:
  std::shared_ptr<const std::vector<std::pair<Volume, std::optional<LabelMap>>>> volumes_;
  std::vector<std::pair<std::size_t, std::int64_t>> index_;
  int channels_ = 1;
};

SliceDataset make_slice_dataset(std::vector<std::pair<Volume, std::optional<LabelMap>>> volumes, int channels);

/// Input tensor [C, H, W] for slice `k` of `v`.
torch::Tensor slice_input(const Volume& v, std::int64_t k, int channels);

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

struct LossWeights {
  double adv = 1.0;
  double contrast = 1.0;
  double cycle = 10.0;
  double seg = 1.0;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct TrainSchedule {
  int epochs = 400;
  double lr = 2e-4;
  int batch_size = 1;
  int decay_start_epoch = 200;
  std::uint64_t seed = 0;
  /// Iterations per epoch; 0 means one pass over the larger dataset.
  int iterations_per_epoch = 0;
  /// Save a checkpoint every N epochs into `checkpoint_dir` (0 disables).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
  /// Learning rate multiplier for `epoch`: 1 until the decay starts, then
  /// linear toward 0 at `epochs`.
  [[nodiscard]] double lr_factor(int epoch) const;
};

struct TranslatorOptions {
  int base_width = 64;
  int n_residual_blocks = 9;
  int downsamplings = 2;
  int disc_width = 64;
  int disc_layers = 3;
  int n_classes = 4;
  ContrastConfig contrast;
  LossWeights weights;
};

/// Translation networks for one style. Module handles share parameters on
/// copy; use `clone()` for an independent copy.
struct TranslatorBundle {
  Style style = Style::kWcut;
  GeneratorSpec gen_spec;
  ContrastConfig contrast;
  LossWeights weights;
  int n_classes = 4;
  int disc_width = 64;
  int disc_layers = 3;
  /// In-plane size seen during training; (0, 0) until trained.
  PlaneSize train_hw{0, 0};
  int epochs_trained = 0;

  ResnetEncoder encoder{nullptr};
  TranslationDecoder decoder{nullptr};
  SegmentationDecoder seg_decoder{nullptr};
  PatchDiscriminator discriminator{nullptr};
  ProjectionHeads heads{nullptr};
  // CycleGAN's target-to-source direction.
  ResnetEncoder encoder_b{nullptr};
  TranslationDecoder decoder_b{nullptr};
  PatchDiscriminator discriminator_b{nullptr};

  [[nodiscard]] std::vector<torch::Tensor> generator_parameters() const;
  [[nodiscard]] std::vector<torch::Tensor> discriminator_parameters() const;
  [[nodiscard]] std::int64_t generator_parameter_count() const;
  [[nodiscard]] std::int64_t discriminator_parameter_count() const;
  [[nodiscard]] int num_generators() const { return style == Style::kCycleGan ? 2 : 1; }
  [[nodiscard]] int num_discriminators() const { return style == Style::kCycleGan ? 2 : 1; }
  /// Encoder layers the contrastive loss taps.
  [[nodiscard]] std::vector<int> nce_layers() const;

  /// Source-to-target generator output [B, 1, H, W] for input [B, C, H, W].
  torch::Tensor translate(const torch::Tensor& x);

  void save(const std::filesystem::path& path) const;
  static TranslatorBundle load(const std::filesystem::path& path);
};

/// Builds a freshly initialised bundle. WCUT takes 1-channel slices, the
/// 2.5D styles take 3-channel stacks. Initialisation is seeded by `seed`.
TranslatorBundle make_translator(Style style, const TranslatorOptions& opts, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training and translation
// ---------------------------------------------------------------------------

/// Per-epoch means of each loss term.
struct TranslatorEpochLosses {
  double generator = 0.0;
  double discriminator = 0.0;
  double adversarial = 0.0;
  double contrast = 0.0;
  double cycle = 0.0;
  double segmentation = 0.0;
  friend bool operator==(const TranslatorEpochLosses&, const TranslatorEpochLosses&) = default;
};

struct TranslatorHistory {
  std::vector<TranslatorEpochLosses> epochs;
};

TranslatorHistory train_translator(TranslatorBundle& bundle, const SliceDataset& src, const SliceDataset& tgt,
                                   const TrainSchedule& sched);

/// Samples `patches_per_layer` locations per configured encoder layer (the
/// same locations in both images), projects them and L2-normalises. Anchors
/// come from `fake`, positives from `real`. Expects single images [1, C, H, W].
std::vector<PatchFeatureSet> sample_patch_features(ResnetEncoder& encoder, ProjectionHeads& heads,
                                                   const torch::Tensor& real, const torch::Tensor& fake,
                                                   const ContrastConfig& cfg, const std::vector<int>& layer_ids,
                                                   std::mt19937_64& rng);

/// Five evenly spaced layer indices in [0, num_layers).
std::vector<int> default_nce_layers(int num_layers);

/// Translates every axial slice independently; 2.5D bundles read the
/// adjacent-slice stack and emit the centre slice. Output is clamped to
/// [-1, 1] and keeps the input's geometry.
Volume translate_volume(TranslatorBundle& bundle, const Volume& v);

struct StyledCase {
  Volume volume;
  LabelMap labels;
  Style style = Style::kWcut;
};

/// Translates every labeled source case with every bundle; labels pass
/// through unchanged.
std::vector<StyledCase> generate_multistyle_dataset(std::vector<TranslatorBundle>& bundles,
                                                    const std::vector<std::pair<Volume, LabelMap>>& labeled_src);

}  // namespace unpairseg
