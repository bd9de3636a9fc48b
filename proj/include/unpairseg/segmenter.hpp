#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "unpairseg/networks.hpp"
#include "unpairseg/volume.hpp"

namespace unpairseg {

struct SegSchedule {
  int epochs = 300;
  double lr = 0.01;
  double momentum = 0.99;
  int batch_size = 1;
  double poly_power = 0.9;
  std::uint64_t seed = 0;
  /// Iterations per epoch; 0 means one per training case.
  int iterations_per_epoch = 0;
  double foreground_oversample = 0.33;
  /// Run validation every N epochs when validation cases are given (0 = never).
  int val_every = 0;

  void validate() const;
};

/// lr * (1 - t / T)^power.
double poly_lr(double base_lr, int t, int total, double power);

struct LabeledCase {
  Volume volume;
  LabelMap labels;
};

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded shuffle followed by a near-equal partition into k validation folds.
std::vector<FoldSplit> split_folds(std::size_t n_cases, int k, std::uint64_t seed);

struct PatchDraw {
  torch::Tensor image;  // [1, D, H, W]
  torch::Tensor label;  // [D, H, W] int64
  bool contains_foreground = false;
};

/// Random patch crops; with probability `foreground_prob` the patch is
/// centred on a random foreground voxel. Cases smaller than the patch are
/// padded (image with its minimum, labels with background).
class PatchSampler {
 public:
  PatchSampler(const std::vector<LabeledCase>& cases, Patch3 patch, double foreground_prob, std::uint64_t seed);
  PatchDraw sample();
  /// Random flips, in-plane 90-degree rotations (square patches only) and
  /// an additive intensity offset in [-0.1, 0.1].
  PatchDraw augment(PatchDraw d);

 private:
  const std::vector<LabeledCase>* cases_;
  Patch3 patch_;
  double fg_prob_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::int64_t>> foreground_;
};

/// Anything that maps a [1, 1, D, H, W] patch to [1, C, D, H, W] logits.
class SegmentationModel {
 public:
  virtual ~SegmentationModel() = default;
  [[nodiscard]] virtual Patch3 patch_size() const = 0;
  [[nodiscard]] virtual int n_classes() const = 0;
  virtual torch::Tensor logits(const torch::Tensor& patch) = 0;
  [[nodiscard]] virtual std::string id() const { return {}; }
};

/// A 3D U-Net with its configuration and provenance.
class Segmenter : public SegmentationModel {
 public:
  Segmenter(const SegConfig& cfg, std::uint64_t seed, int fold = 0);

  [[nodiscard]] Patch3 patch_size() const override { return cfg_.patch_size; }
  [[nodiscard]] int n_classes() const override { return cfg_.n_classes; }
  torch::Tensor logits(const torch::Tensor& patch) override;
  /// Content hash of the serialised parameters and metadata.
  [[nodiscard]] std::string id() const override;

  [[nodiscard]] const SegConfig& config() const { return cfg_; }
  UNet3D& net() { return net_; }
  [[nodiscard]] int fold() const { return fold_; }
  [[nodiscard]] int epochs_trained() const { return epochs_; }
  void set_epochs_trained(int e) { epochs_ = e; }

  [[nodiscard]] std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<Segmenter> load(const std::filesystem::path& path);

 private:
  SegConfig cfg_;
  UNet3D net_{nullptr};
  int fold_ = 0;
  int epochs_ = 0;
};

struct SegHistory {
  std::vector<double> epoch_loss;
  /// (epoch, mean foreground Dice) pairs.
  std::vector<std::pair<int, double>> val_dice;
};

/// Deep-supervision Dice + cross-entropy, head weights halving per level and
/// normalised to sum to one.
torch::Tensor deep_supervision_loss(const std::vector<torch::Tensor>& outputs, const torch::Tensor& target);

/// Momentum SGD (Nesterov) with a per-epoch polynomial learning rate.
SegHistory train_segmenter(Segmenter& model, const std::vector<LabeledCase>& train, const SegSchedule& sched,
                           const std::vector<LabeledCase>* val = nullptr);

/// Mean foreground Dice between a prediction and ground truth (intra,
/// extra, cochlea).
double mean_foreground_dice(const LabelMap& pred, const LabelMap& gt);

}  // namespace unpairseg
