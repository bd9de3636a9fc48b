#include "unpairseg/losses.hpp"

#include "unpairseg/errors.hpp"

namespace unpairseg {
namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

// -sum_i log softmax_i(s_ii) where row i has logits s_ij = x_i.y_j / tau +
// log_w_ij and log_w_ii = 0. The gradient w.r.t. the logits is p - I.
struct LogWeightedNce : public torch::autograd::Function<LogWeightedNce> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& x, const torch::Tensor& y,
                               const torch::Tensor& log_w, double tau) {
    const torch::Tensor logits = x.mm(y.t()) / tau + log_w;
    const torch::Tensor lse = logits.logsumexp(1, /*keepdim=*/true);
    const torch::Tensor loss = (lse.squeeze(1) - logits.diagonal()).sum();
    const torch::Tensor p = (logits - lse).exp();
    ctx->save_for_backward({x, y, p});
    ctx->saved_data["tau"] = tau;
    return loss;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_out) {
    const auto saved = ctx->get_saved_variables();
    const torch::Tensor& x = saved[0];
    const torch::Tensor& y = saved[1];
    const torch::Tensor& p = saved[2];
    const double tau = ctx->saved_data["tau"].toDouble();
    const torch::Tensor eye = torch::eye(p.size(0), p.options());
    const torch::Tensor d_logits = (p - eye) * (grad_out[0] / tau);
    return {d_logits.mm(y), d_logits.t().mm(x), torch::Tensor(), torch::Tensor()};
  }
};

void check_pair(const torch::Tensor& x, const torch::Tensor& y) {
  if (x.dim() != 2 || y.dim() != 2 || x.sizes() != y.sizes()) {
    throw ShapeMismatchError("anchor and positive sets must both be [N, D]");
  }
  if (x.size(0) < 2) throw ContrastiveLossError();
}

torch::Tensor off_diagonal_log_softmax(const torch::Tensor& sims, double beta) {
  if (sims.dim() != 2 || sims.size(0) != sims.size(1)) throw ShapeMismatchError("similarities must be N x N");
  if (sims.size(0) < 2) throw ContrastiveLossError();
  const auto n = sims.size(0);
  const torch::Tensor diag = torch::eye(n, sims.options().dtype(torch::kBool));
  const torch::Tensor masked = (sims / beta).masked_fill(diag, -std::numeric_limits<double>::infinity());
  return masked.log_softmax(1);
}

}  // namespace

void PatchFeatureSet::validate(double tol) const {
  check_pair(anchors, positives);
  const auto check_norms = [tol](const torch::Tensor& t) {
    const double dev = (t.to(torch::kDouble).norm(2, 1) - 1.0).abs().max().item<double>();
    if (dev > tol) throw InvalidConfigError("patch features are not L2-normalised");
  };
  check_norms(anchors);
  check_norms(positives);
}

void ContrastConfig::validate() const {
  if (!(tau > 0.0) || !(beta > 0.0)) throw InvalidConfigError("contrast temperatures must be positive");
  if (patches_per_layer < 2) throw InvalidConfigError("need at least two patches per layer");
  if (head_dim < 1) throw InvalidConfigError("projection head width must be positive");
  if (identity_weight < 0.0) throw InvalidConfigError("identity weight must be non-negative");
}

torch::Tensor patch_nce(const torch::Tensor& anchors, const torch::Tensor& positives, double tau) {
  check_pair(anchors, positives);
  const torch::Tensor log_w = torch::zeros({anchors.size(0), anchors.size(0)}, anchors.options().requires_grad(false));
  return LogWeightedNce::apply(anchors, positives, log_w, tau);
}

torch::Tensor patch_nce(const PatchFeatureSet& fs, double tau) { return patch_nce(fs.anchors, fs.positives, tau); }

torch::Tensor contrast_weights(const torch::Tensor& sims, double beta) {
  return off_diagonal_log_softmax(sims, beta).exp();
}

torch::Tensor weight_nce(const torch::Tensor& anchors, const torch::Tensor& positives, double tau, double beta) {
  check_pair(anchors, positives);
  const torch::Tensor sims = anchors.detach().mm(positives.detach().t());
  const auto n = sims.size(0);
  const torch::Tensor diag = torch::eye(n, sims.options().dtype(torch::kBool));
  const torch::Tensor log_w = off_diagonal_log_softmax(sims, beta).masked_fill(diag, 0.0);
  return LogWeightedNce::apply(anchors, positives, log_w, tau);
}

torch::Tensor weight_nce(const PatchFeatureSet& fs, double tau, double beta) {
  return weight_nce(fs.anchors, fs.positives, tau, beta);
}

torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_reconstructed) {
  if (x.sizes() != x_reconstructed.sizes()) throw ShapeMismatchError("cycle loss inputs differ in shape");
  return (x - x_reconstructed).abs().mean();
}

torch::Tensor adversarial_loss(const torch::Tensor& disc_out, bool target_is_real) {
  const double t = target_is_real ? 1.0 : 0.0;
  return (disc_out - t).pow(2).mean();
}

namespace {

void check_segmentation_inputs(const torch::Tensor& logits, const torch::Tensor& target) {
  if (logits.dim() < 3 || target.dim() != logits.dim() - 1 || target.size(0) != logits.size(0) ||
      !std::equal(target.sizes().begin() + 1, target.sizes().end(), logits.sizes().begin() + 2)) {
    throw ShapeMismatchError("segmentation logits and target have incompatible shapes");
  }
  if (target.numel() > 0) {
    const auto lo = target.min().item<std::int64_t>();
    const auto hi = target.max().item<std::int64_t>();
    if (lo < 0 || hi >= logits.size(1)) throw ClassOutOfRangeError("target class outside [0, C)");
  }
}

}  // namespace

torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& target) {
  check_segmentation_inputs(logits, target);
  constexpr double kSmooth = 1e-5;
  const auto n_classes = logits.size(1);
  const torch::Tensor probs = logits.softmax(1);
  // one-hot target moved to channel dim: [B, C, ...]
  const torch::Tensor onehot =
      torch::one_hot(target.to(torch::kLong), n_classes).movedim(-1, 1).to(probs.scalar_type());
  std::vector<std::int64_t> reduce_dims{0};
  for (std::int64_t d = 2; d < probs.dim(); ++d) reduce_dims.push_back(d);
  const torch::Tensor inter = (probs * onehot).sum(reduce_dims);
  const torch::Tensor denom = probs.sum(reduce_dims) + onehot.sum(reduce_dims);
  const torch::Tensor dice = (2.0 * inter + kSmooth) / (denom + kSmooth);
  return 1.0 - dice.mean();
}

torch::Tensor aux_seg_loss(const torch::Tensor& logits, const torch::Tensor& target) {
  const torch::Tensor dice = soft_dice_loss(logits, target);
  const torch::Tensor ce = torch::nn::functional::cross_entropy(logits, target.to(torch::kLong));
  return dice + ce;
}

}  // namespace unpairseg
