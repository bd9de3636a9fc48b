#include "unpairseg/inference.hpp"

#include <algorithm>
#include <cmath>

#include "unpairseg/errors.hpp"

namespace unpairseg {

void InferenceConfig::validate() const {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidConfigError("overlap must lie in [0, 1)");
}

std::vector<std::int64_t> tile_positions_1d(std::int64_t length, std::int64_t patch, double overlap) {
  if (patch < 1) throw InvalidConfigError("patch extent must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidConfigError("overlap must lie in [0, 1)");
  if (length <= patch) return {0};
  const auto stride = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(patch * (1.0 - overlap) - 1e-9)));
  std::vector<std::int64_t> out;
  for (std::int64_t o = 0; o + patch < length; o += stride) out.push_back(o);
  if (out.empty() || out.back() != length - patch) out.push_back(length - patch);
  return out;
}

std::vector<std::array<std::int64_t, 3>> tile_positions(const Shape3& volume, const Patch3& patch, double overlap) {
  const auto ks = tile_positions_1d(volume.slices, patch[0], overlap);
  const auto rs = tile_positions_1d(volume.rows, patch[1], overlap);
  const auto cs = tile_positions_1d(volume.cols, patch[2], overlap);
  std::vector<std::array<std::int64_t, 3>> out;
  out.reserve(ks.size() * rs.size() * cs.size());
  for (auto k : ks) {
    for (auto r : rs) {
      for (auto c : cs) out.push_back({k, r, c});
    }
  }
  return out;
}

torch::Tensor blend_weights(const Patch3& patch, Blend mode) {
  if (mode == Blend::kUniform) return torch::ones({patch[0], patch[1], patch[2]}, torch::kFloat32);
  std::array<torch::Tensor, 3> axes;
  for (std::size_t a = 0; a < 3; ++a) {
    const double sigma = static_cast<double>(patch[a]) / 8.0;
    const double centre = (static_cast<double>(patch[a]) - 1.0) / 2.0;
    auto x = torch::arange(patch[a], torch::kFloat64) - centre;
    axes[a] = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  }
  auto w = axes[0].view({-1, 1, 1}) * axes[1].view({1, -1, 1}) * axes[2].view({1, 1, -1});
  w = w / w.max();
  // Far corners underflow towards zero; keep every voxel strictly weighted.
  const double floor = w.masked_select(w > 0).min().item<double>();
  w = w.clamp_min(std::max(floor, 1e-8));
  return w.to(torch::kFloat32);
}

namespace {

torch::Tensor window_probs(SegmentationModel& model, const torch::Tensor& patch, bool flip_tta) {
  if (!flip_tta) return torch::softmax(model.logits(patch), 1);
  torch::Tensor acc;
  for (int mask = 0; mask < 8; ++mask) {
    std::vector<std::int64_t> dims;
    for (int a = 0; a < 3; ++a) {
      if (mask & (1 << a)) dims.push_back(a + 2);
    }
    torch::Tensor in = dims.empty() ? patch : patch.flip(dims);
    torch::Tensor p = torch::softmax(model.logits(in), 1);
    if (!dims.empty()) p = p.flip(dims);
    acc = acc.defined() ? acc + p : p;
  }
  return acc / 8.0;
}

}  // namespace

ProbabilityMap predict_volume(const std::vector<std::shared_ptr<SegmentationModel>>& models, const Volume& v,
                              const InferenceConfig& cfg) {
  cfg.validate();
  if (models.empty()) throw InvalidConfigError("inference needs at least one model");
  validate(v);
  const Patch3 patch = models.front()->patch_size();
  const int n_classes = models.front()->n_classes();
  for (const auto& m : models) {
    if (m->patch_size() != patch || m->n_classes() != n_classes) {
      throw ShapeMismatchError("ensemble members disagree on patch size or class count");
    }
  }

  torch::NoGradGuard guard;
  const Shape3 s = v.shape;
  const Shape3 padded{std::max(s.slices, patch[0]), std::max(s.rows, patch[1]), std::max(s.cols, patch[2])};
  const float pad_value = *std::min_element(v.data.begin(), v.data.end());
  torch::Tensor image = torch::full({padded.slices, padded.rows, padded.cols}, pad_value, torch::kFloat32);
  image.narrow(0, 0, s.slices).narrow(1, 0, s.rows).narrow(2, 0, s.cols)
      .copy_(torch::from_blob(const_cast<float*>(v.data.data()), {s.slices, s.rows, s.cols}, torch::kFloat32));

  const auto origins = tile_positions(padded, patch, cfg.overlap);
  const torch::Tensor w = blend_weights(patch, cfg.blend);
  torch::Tensor ensemble = torch::zeros({n_classes, padded.slices, padded.rows, padded.cols}, torch::kFloat32);

  for (const auto& model : models) {
    torch::Tensor acc = torch::zeros_like(ensemble);
    torch::Tensor wsum = torch::zeros({padded.slices, padded.rows, padded.cols}, torch::kFloat32);
    for (const auto& o : origins) {
      const torch::Tensor window =
          image.narrow(0, o[0], patch[0]).narrow(1, o[1], patch[1]).narrow(2, o[2], patch[2]).unsqueeze(0).unsqueeze(0);
      const torch::Tensor p = window_probs(*model, window.contiguous(), cfg.flip_tta)[0];
      if (p.size(0) != n_classes) throw ShapeMismatchError("model emitted an unexpected class count");
      acc.narrow(1, o[0], patch[0]).narrow(2, o[1], patch[1]).narrow(3, o[2], patch[2]).add_(p * w);
      wsum.narrow(0, o[0], patch[0]).narrow(1, o[1], patch[1]).narrow(2, o[2], patch[2]).add_(w);
    }
    ensemble += acc / wsum.unsqueeze(0);
  }
  ensemble /= static_cast<double>(models.size());

  const torch::Tensor cropped =
      ensemble.narrow(1, 0, s.slices).narrow(2, 0, s.rows).narrow(3, 0, s.cols).contiguous();
  ProbabilityMap out;
  out.n_classes = n_classes;
  out.shape = s;
  out.spacing_mm = v.spacing_mm;
  out.orientation = v.orientation;
  out.origin_mm = v.origin_mm;
  out.source_id = v.source_id;
  out.data.assign(cropped.data_ptr<float>(), cropped.data_ptr<float>() + cropped.numel());
  return out;
}

LabelMap argmax_labels(const ProbabilityMap& probs) {
  LabelMap out;
  out.shape = probs.shape;
  out.spacing_mm = probs.spacing_mm;
  out.orientation = probs.orientation;
  out.origin_mm = probs.origin_mm;
  out.source_id = probs.source_id;
  const auto n = static_cast<std::size_t>(probs.shape.numel());
  out.data.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    float best = probs.data[i];
    std::uint8_t arg = 0;
    for (int c = 1; c < probs.n_classes; ++c) {
      const float p = probs.data[static_cast<std::size_t>(c) * n + i];
      if (p > best) {
        best = p;
        arg = static_cast<std::uint8_t>(c);
      }
    }
    out.data[i] = arg;
  }
  return out;
}

LabelMap finalize_labels(const ProbabilityMap& probs, const std::optional<CropRecord>& record) {
  if (!record) throw MissingCropRecordError("no crop record supplied for label finalisation");
  return invert_labels(argmax_labels(probs), *record);
}

}  // namespace unpairseg
