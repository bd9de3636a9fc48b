#include "unpairseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unpairseg/config_io.hpp"
#include "unpairseg/errors.hpp"
#include "unpairseg/hashing.hpp"
#include "unpairseg/inference.hpp"
#include "unpairseg/losses.hpp"
#include "unpairseg/metrics.hpp"

namespace unpairseg {

using nlohmann::json;

void SegSchedule::validate() const {
  if (epochs < 0) throw InvalidConfigError("epochs must be non-negative");
  if (!(lr > 0.0)) throw InvalidConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfigError("momentum must lie in [0, 1)");
  if (batch_size < 1) throw InvalidConfigError("batch size must be positive");
  if (iterations_per_epoch < 0) throw InvalidConfigError("iterations per epoch must be non-negative");
  if (!(foreground_oversample >= 0.0 && foreground_oversample <= 1.0)) {
    throw InvalidConfigError("foreground oversampling must be a probability");
  }
}

double poly_lr(double base_lr, int t, int total, double power) {
  if (total <= 0) return base_lr;
  const double frac = std::clamp(1.0 - static_cast<double>(t) / static_cast<double>(total), 0.0, 1.0);
  return base_lr * std::pow(frac, power);
}

std::vector<FoldSplit> split_folds(std::size_t n_cases, int k, std::uint64_t seed) {
  if (k < 2) throw InvalidConfigError("need at least two folds");
  if (n_cases < static_cast<std::size_t>(k)) throw InvalidConfigError("fewer cases than folds");
  std::vector<std::size_t> order(n_cases);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::size_t lo = f * n_cases / folds.size();
    const std::size_t hi = (f + 1) * n_cases / folds.size();
    for (std::size_t i = 0; i < n_cases; ++i) {
      (i >= lo && i < hi ? folds[f].val : folds[f].train).push_back(order[i]);
    }
    std::sort(folds[f].val.begin(), folds[f].val.end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

// ---------------------------------------------------------------------------

PatchSampler::PatchSampler(const std::vector<LabeledCase>& cases, Patch3 patch, double foreground_prob,
                           std::uint64_t seed)
    : cases_(&cases), patch_(patch), fg_prob_(foreground_prob), rng_(seed) {
  if (cases.empty()) throw InvalidConfigError("patch sampler needs at least one case");
  for (const auto& c : cases) {
    if (!(c.volume.shape == c.labels.shape)) throw ShapeMismatchError("label map does not match its volume");
    std::vector<std::int64_t> fg;
    for (std::size_t i = 0; i < c.labels.data.size(); ++i) {
      if (c.labels.data[i] != 0) fg.push_back(static_cast<std::int64_t>(i));
    }
    foreground_.push_back(std::move(fg));
  }
}

PatchDraw PatchSampler::sample() {
  const std::size_t ci = std::uniform_int_distribution<std::size_t>(0, cases_->size() - 1)(rng_);
  const LabeledCase& c = (*cases_)[ci];
  const Shape3& s = c.volume.shape;
  const std::array<std::int64_t, 3> dims{s.slices, s.rows, s.cols};

  std::array<std::int64_t, 3> origin{};
  const auto& fg = foreground_[ci];
  const bool want_fg = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < fg_prob_;
  if (want_fg && !fg.empty()) {
    const std::int64_t v = fg[std::uniform_int_distribution<std::size_t>(0, fg.size() - 1)(rng_)];
    const std::array<std::int64_t, 3> centre{v / (s.rows * s.cols), (v / s.cols) % s.rows, v % s.cols};
    for (int a = 0; a < 3; ++a) {
      origin[static_cast<std::size_t>(a)] =
          std::clamp<std::int64_t>(centre[static_cast<std::size_t>(a)] - patch_[static_cast<std::size_t>(a)] / 2, 0,
                                   std::max<std::int64_t>(0, dims[static_cast<std::size_t>(a)] - patch_[static_cast<std::size_t>(a)]));
    }
  } else {
    for (std::size_t a = 0; a < 3; ++a) {
      const std::int64_t room = std::max<std::int64_t>(0, dims[a] - patch_[a]);
      origin[a] = std::uniform_int_distribution<std::int64_t>(0, room)(rng_);
    }
  }

  const float pad = *std::min_element(c.volume.data.begin(), c.volume.data.end());
  torch::Tensor image = torch::full({patch_[0], patch_[1], patch_[2]}, pad, torch::kFloat32);
  torch::Tensor label = torch::zeros({patch_[0], patch_[1], patch_[2]}, torch::kLong);
  auto* ip = image.data_ptr<float>();
  auto* lp = label.data_ptr<std::int64_t>();
  bool any_fg = false;
  for (std::int64_t k = 0; k < std::min(patch_[0], s.slices - origin[0]); ++k) {
    for (std::int64_t r = 0; r < std::min(patch_[1], s.rows - origin[1]); ++r) {
      for (std::int64_t q = 0; q < std::min(patch_[2], s.cols - origin[2]); ++q) {
        const std::int64_t dst = (k * patch_[1] + r) * patch_[2] + q;
        ip[dst] = c.volume.at(origin[0] + k, origin[1] + r, origin[2] + q);
        const auto l = c.labels.at(origin[0] + k, origin[1] + r, origin[2] + q);
        lp[dst] = l;
        any_fg = any_fg || l != 0;
      }
    }
  }
  return {image.unsqueeze(0), label, any_fg};
}

PatchDraw PatchSampler::augment(PatchDraw d) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::int64_t axis = 0; axis < 3; ++axis) {
    if (coin(rng_) < 0.5) {
      d.image = d.image.flip({axis + 1});
      d.label = d.label.flip({axis});
    }
  }
  if (patch_[1] == patch_[2]) {
    const int k = std::uniform_int_distribution<int>(0, 3)(rng_);
    if (k != 0) {
      d.image = d.image.rot90(k, {2, 3});
      d.label = d.label.rot90(k, {1, 2});
    }
  }
  const double offset = std::uniform_real_distribution<double>(-0.1, 0.1)(rng_);
  d.image = (d.image + offset).contiguous();
  d.label = d.label.contiguous();
  return d;
}

// ---------------------------------------------------------------------------

Segmenter::Segmenter(const SegConfig& cfg, std::uint64_t seed, int fold) : cfg_(cfg), fold_(fold) {
  cfg.validate();
  torch::manual_seed(seed);
  net_ = UNet3D(cfg);
}

torch::Tensor Segmenter::logits(const torch::Tensor& patch) {
  torch::NoGradGuard guard;
  net_->eval();
  return net_->forward(patch).front();
}

std::string Segmenter::serialize() const {
  torch::serialize::OutputArchive archive;
  const json meta{{"config", cfg_}, {"fold", fold_}, {"epochs", epochs_}};
  archive.write("meta", c10::IValue(meta.dump()));
  torch::serialize::OutputArchive sub;
  net_->save(sub);
  archive.write("net", sub);
  std::ostringstream os;
  archive.save_to(os);
  return os.str();
}

std::string Segmenter::id() const { return sha256_hex(serialize()); }

void Segmenter::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UnwritablePathError(path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UnwritablePathError(path.string());
}

std::shared_ptr<Segmenter> Segmenter::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw FileNotFoundError(path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue meta_value;
  archive.read("meta", meta_value);
  const json meta = json::parse(meta_value.toStringRef());
  auto model = std::make_shared<Segmenter>(meta.at("config").get<SegConfig>(), 0, meta.at("fold").get<int>());
  model->epochs_ = meta.at("epochs");
  torch::serialize::InputArchive sub;
  archive.read("net", sub);
  model->net_->load(sub);
  return model;
}

// ---------------------------------------------------------------------------

torch::Tensor deep_supervision_loss(const std::vector<torch::Tensor>& outputs, const torch::Tensor& target) {
  torch::Tensor total = torch::zeros({}, outputs.front().options());
  double weight_sum = 0.0;
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    const double w = 1.0 / static_cast<double>(std::int64_t{1} << l);
    weight_sum += w;
    const std::int64_t step = std::int64_t{1} << l;
    using torch::indexing::Slice;
    const torch::Tensor t = target.index({Slice(), Slice(torch::indexing::None, torch::indexing::None, step), Slice(torch::indexing::None, torch::indexing::None, step), Slice(torch::indexing::None, torch::indexing::None, step)});
    total = total + w * aux_seg_loss(outputs[l], t);
  }
  return total / weight_sum;
}

double mean_foreground_dice(const LabelMap& pred, const LabelMap& gt) {
  return evaluate_case(pred, gt).mean_foreground_dsc();
}

SegHistory train_segmenter(Segmenter& model, const std::vector<LabeledCase>& train, const SegSchedule& sched,
                           const std::vector<LabeledCase>* val) {
  sched.validate();
  if (train.empty()) throw InvalidConfigError("segmenter training needs at least one case");
  for (const auto& c : train) {
    validate(c.volume);
    validate_labels(c.labels);
  }
  torch::manual_seed(sched.seed);
  PatchSampler sampler(train, model.patch_size(), sched.foreground_oversample, sched.seed);
  UNet3D& net = model.net();
  torch::optim::SGD opt(net->parameters(),
                        torch::optim::SGDOptions(sched.lr).momentum(sched.momentum).nesterov(true).weight_decay(3e-5));
  const int iters = sched.iterations_per_epoch > 0 ? sched.iterations_per_epoch : static_cast<int>(train.size());

  SegHistory history;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    const double lr = poly_lr(sched.lr, epoch, sched.epochs, sched.poly_power);
    for (auto& group : opt.param_groups()) static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
    net->train();
    double sum = 0.0;
    for (int it = 0; it < iters; ++it) {
      std::vector<torch::Tensor> images, labels;
      for (int b = 0; b < sched.batch_size; ++b) {
        PatchDraw d = sampler.augment(sampler.sample());
        images.push_back(d.image);
        labels.push_back(d.label);
      }
      const torch::Tensor loss = deep_supervision_loss(net->forward(torch::stack(images)), torch::stack(labels));
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        const auto snap = std::filesystem::temp_directory_path() /
                          ("diverged_segmenter_fold" + std::to_string(model.fold()) + "_epoch" + std::to_string(epoch) + ".pt");
        model.save(snap);
        throw DivergenceError("non-finite segmentation loss at epoch " + std::to_string(epoch), snap.string());
      }
      opt.zero_grad();
      loss.backward();
      torch::nn::utils::clip_grad_norm_(net->parameters(), 12.0);
      opt.step();
      sum += value;
    }
    history.epoch_loss.push_back(sum / iters);
    model.set_epochs_trained(model.epochs_trained() + 1);

    if (val != nullptr && !val->empty() && sched.val_every > 0 && (epoch + 1) % sched.val_every == 0) {
      std::vector<std::shared_ptr<SegmentationModel>> models{
          std::shared_ptr<SegmentationModel>(&model, [](SegmentationModel*) {})};
      double dice = 0.0;
      for (const auto& c : *val) dice += mean_foreground_dice(argmax_labels(predict_volume(models, c.volume, {})), c.labels);
      history.val_dice.emplace_back(epoch + 1, dice / static_cast<double>(val->size()));
    }
  }
  net->eval();
  return history;
}

}  // namespace unpairseg
