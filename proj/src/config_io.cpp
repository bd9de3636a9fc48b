#include "unpairseg/config_io.hpp"

#include <set>

#include "unpairseg/errors.hpp"

namespace unpairseg {

using nlohmann::json;

namespace {

// Copies j[key] into `field` when present; remembers which keys were seen.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw InvalidConfigError(section_ + ": expected a mapping");
  }

  template <typename T>
  Reader& operator()(const char* key, T& field) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        field = it->template get<T>();
      } catch (const json::exception& e) {
        throw InvalidConfigError(section_ + "." + key + ": " + e.what());
      }
    }
    return *this;
  }

  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw InvalidConfigError(section_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

void to_json(json& j, const PreprocessConfig& c) {
  j = {{"target_spacing_mm", c.target_spacing_mm}, {"target_orientation", c.target_orientation},
       {"crop_hw", c.crop_hw}, {"percentile", c.percentile}, {"intensity_range", c.intensity_range}};
}
void from_json(const json& j, PreprocessConfig& c) {
  Reader(j, "preprocess")("target_spacing_mm", c.target_spacing_mm)("target_orientation", c.target_orientation)(
      "crop_hw", c.crop_hw)("percentile", c.percentile)("intensity_range", c.intensity_range);
}

void to_json(json& j, const ContrastConfig& c) {
  j = {{"tau", c.tau}, {"beta", c.beta}, {"patches_per_layer", c.patches_per_layer}, {"layer_ids", c.layer_ids},
       {"head_dim", c.head_dim}, {"identity_weight", c.identity_weight}};
}
void from_json(const json& j, ContrastConfig& c) {
  Reader(j, "contrast")("tau", c.tau)("beta", c.beta)("patches_per_layer", c.patches_per_layer)(
      "layer_ids", c.layer_ids)("head_dim", c.head_dim)("identity_weight", c.identity_weight);
}

void to_json(json& j, const LossWeights& c) {
  j = {{"adv", c.adv}, {"contrast", c.contrast}, {"cycle", c.cycle}, {"seg", c.seg}};
}
void from_json(const json& j, LossWeights& c) {
  Reader(j, "weights")("adv", c.adv)("contrast", c.contrast)("cycle", c.cycle)("seg", c.seg);
}

void to_json(json& j, const TrainSchedule& c) {
  j = {{"epochs", c.epochs},
       {"lr", c.lr},
       {"batch_size", c.batch_size},
       {"decay_start_epoch", c.decay_start_epoch},
       {"seed", c.seed},
       {"iterations_per_epoch", c.iterations_per_epoch},
       {"checkpoint_every", c.checkpoint_every},
       {"checkpoint_dir", c.checkpoint_dir.string()}};
}
void from_json(const json& j, TrainSchedule& c) {
  std::string dir = c.checkpoint_dir.string();
  Reader(j, "translate_schedule")("epochs", c.epochs)("lr", c.lr)("batch_size", c.batch_size)(
      "decay_start_epoch", c.decay_start_epoch)("seed", c.seed)("iterations_per_epoch", c.iterations_per_epoch)(
      "checkpoint_every", c.checkpoint_every)("checkpoint_dir", dir);
  c.checkpoint_dir = dir;
}

void to_json(json& j, const TranslatorOptions& c) {
  j = {{"base_width", c.base_width}, {"n_residual_blocks", c.n_residual_blocks},
       {"downsamplings", c.downsamplings}, {"disc_width", c.disc_width},
       {"disc_layers", c.disc_layers}, {"n_classes", c.n_classes},
       {"contrast", c.contrast}, {"weights", c.weights}};
}
void from_json(const json& j, TranslatorOptions& c) {
  Reader(j, "translator")("base_width", c.base_width)("n_residual_blocks", c.n_residual_blocks)(
      "downsamplings", c.downsamplings)("disc_width", c.disc_width)("disc_layers", c.disc_layers)(
      "n_classes", c.n_classes)("contrast", c.contrast)("weights", c.weights);
}

void to_json(json& j, const SegConfig& c) {
  j = {{"patch_size", c.patch_size}, {"n_classes", c.n_classes}, {"base_width", c.base_width},
       {"depth", c.depth},           {"folds", c.folds},         {"max_width", c.max_width}};
}
void from_json(const json& j, SegConfig& c) {
  Reader(j, "segmenter")("patch_size", c.patch_size)("n_classes", c.n_classes)("base_width", c.base_width)(
      "depth", c.depth)("folds", c.folds)("max_width", c.max_width);
}

void to_json(json& j, const SegSchedule& c) {
  j = {{"epochs", c.epochs},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"batch_size", c.batch_size},
       {"poly_power", c.poly_power},
       {"seed", c.seed},
       {"iterations_per_epoch", c.iterations_per_epoch},
       {"foreground_oversample", c.foreground_oversample},
       {"val_every", c.val_every}};
}
void from_json(const json& j, SegSchedule& c) {
  Reader(j, "seg_schedule")("epochs", c.epochs)("lr", c.lr)("momentum", c.momentum)("batch_size", c.batch_size)(
      "poly_power", c.poly_power)("seed", c.seed)("iterations_per_epoch", c.iterations_per_epoch)(
      "foreground_oversample", c.foreground_oversample)("val_every", c.val_every);
}

void to_json(json& j, const InferenceConfig& c) {
  j = {{"overlap", c.overlap},
       {"blend", c.blend == Blend::kGaussian ? "gaussian" : "uniform"},
       {"flip_tta", c.flip_tta}};
}
void from_json(const json& j, InferenceConfig& c) {
  std::string blend = c.blend == Blend::kGaussian ? "gaussian" : "uniform";
  Reader(j, "inference")("overlap", c.overlap)("blend", blend)("flip_tta", c.flip_tta);
  if (blend == "gaussian") {
    c.blend = Blend::kGaussian;
  } else if (blend == "uniform") {
    c.blend = Blend::kUniform;
  } else {
    throw InvalidConfigError("inference.blend must be gaussian or uniform");
  }
}

}  // namespace unpairseg
