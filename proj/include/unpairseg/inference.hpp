#pragma once

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "unpairseg/preprocess.hpp"
#include "unpairseg/segmenter.hpp"
#include "unpairseg/volume.hpp"

namespace unpairseg {

enum class Blend { kGaussian, kUniform };

struct InferenceConfig {
  double overlap = 0.5;
  Blend blend = Blend::kGaussian;
  bool flip_tta = false;

  void validate() const;
};

/// Window origins along one axis: stride ceil(patch * (1 - overlap)), the
/// last window clamped flush to the end. A single origin 0 when the axis is
/// no longer than the patch.
std::vector<std::int64_t> tile_positions_1d(std::int64_t length, std::int64_t patch, double overlap);

std::vector<std::array<std::int64_t, 3>> tile_positions(const Shape3& volume, const Patch3& patch, double overlap);

/// Per-voxel blend weights for one patch, [D, H, W]. The Gaussian mode uses
/// sigma = patch / 8 per axis, peak 1 and no zero entries.
torch::Tensor blend_weights(const Patch3& patch, Blend mode);

/// Class probabilities over a grid, laid out [class][slice][row][col].
struct ProbabilityMap {
  int n_classes = 0;
  Shape3 shape;
  Spacing spacing_mm{1, 1, 1};
  std::string orientation = "LPS";
  std::array<double, 3> origin_mm{0.0, 0.0, 0.0};
  std::string source_id;
  std::vector<float> data;

  [[nodiscard]] float at(int cls, std::int64_t k, std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(((cls * shape.slices + k) * shape.rows + r) * shape.cols + c)];
  }
};

/// Sliding-window softmax stitching per model, then the unweighted mean over
/// models.
ProbabilityMap predict_volume(const std::vector<std::shared_ptr<SegmentationModel>>& models, const Volume& v,
                              const InferenceConfig& cfg);

/// Voxelwise argmax; ties go to the lower class index.
LabelMap argmax_labels(const ProbabilityMap& probs);

/// Argmax, then the crop/resample/reorientation of preprocessing undone.
LabelMap finalize_labels(const ProbabilityMap& probs, const std::optional<CropRecord>& record);

}  // namespace unpairseg
