#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace unpairseg {

/// Paired patch embeddings from one encoder layer. Row i of `anchors` comes
/// from the synthetic image, row i of `positives` from the original image at
/// the same spatial location.
struct PatchFeatureSet {
  torch::Tensor anchors;    // [N, D]
  torch::Tensor positives;  // [N, D]
  int layer_id = 0;
  std::vector<std::int64_t> locations;

  [[nodiscard]] std::int64_t size() const { return anchors.defined() ? anchors.size(0) : 0; }
  /// Throws unless both sets are [N, D] with N >= 2 and unit-length rows.
  void validate(double tol = 1e-5) const;
};

struct ContrastConfig {
  double tau = 0.07;
  double beta = 0.1;
  std::int64_t patches_per_layer = 256;
  /// Encoder layers to sample; empty selects five evenly spaced depths.
  std::vector<int> layer_ids;
  /// Width of the projection head.
  std::int64_t head_dim = 256;
  /// Weight of the contrastive term on target images passed through the
  /// generator (0 disables it).
  double identity_weight = 1.0;

  void validate() const;
};

/// Contrastive loss with uniform negatives, summed over the N anchors.
torch::Tensor patch_nce(const torch::Tensor& anchors, const torch::Tensor& positives, double tau);
torch::Tensor patch_nce(const PatchFeatureSet& fs, double tau);

/// Softmax of `sims / beta` over the off-diagonal entries of each row; the
/// diagonal is zero so every row sums to one over its negatives.
torch::Tensor contrast_weights(const torch::Tensor& sims, double beta);

/// Contrastive loss whose negatives are reweighted by `contrast_weights` of
/// the detached anchor/positive similarities.
torch::Tensor weight_nce(const torch::Tensor& anchors, const torch::Tensor& positives, double tau, double beta);
torch::Tensor weight_nce(const PatchFeatureSet& fs, double tau, double beta);

/// Mean absolute difference.
torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_reconstructed);

/// Least-squares GAN objective: mean((d - t)^2), t = 1 for real, 0 for fake.
torch::Tensor adversarial_loss(const torch::Tensor& disc_out, bool target_is_real);

/// Mean over classes of (1 - soft Dice), with smoothing 1e-5, aggregated over
/// the batch and all spatial positions.
torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& target);

/// Soft Dice loss plus voxelwise cross-entropy. `logits` is [B, C, ...] and
/// `target` holds class indices of shape [B, ...].
torch::Tensor aux_seg_loss(const torch::Tensor& logits, const torch::Tensor& target);

}  // namespace unpairseg
