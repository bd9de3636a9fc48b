#include "unpairseg/translators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unpairseg/errors.hpp"

namespace unpairseg {

namespace {

using nlohmann::json;

json spec_json(const GeneratorSpec& s) {
  return {{"in_channels", s.in_channels},
          {"out_channels", s.out_channels},
          {"base_width", s.base_width},
          {"n_residual_blocks", s.n_residual_blocks},
          {"downsamplings", s.downsamplings}};
}

GeneratorSpec spec_from(const json& j) {
  GeneratorSpec s;
  s.in_channels = j.at("in_channels");
  s.out_channels = j.at("out_channels");
  s.base_width = j.at("base_width");
  s.n_residual_blocks = j.at("n_residual_blocks");
  s.downsamplings = j.at("downsamplings");
  return s;
}

void build_modules(TranslatorBundle& b) {
  b.encoder = ResnetEncoder(b.gen_spec);
  b.decoder = TranslationDecoder(b.gen_spec);
  b.seg_decoder = SegmentationDecoder(b.gen_spec, b.n_classes);
  b.discriminator = PatchDiscriminator(b.gen_spec.out_channels, b.disc_width, b.disc_layers);
  if (b.style == Style::kCycleGan) {
    b.encoder_b = ResnetEncoder(b.gen_spec);
    b.decoder_b = TranslationDecoder(b.gen_spec);
    b.discriminator_b = PatchDiscriminator(b.gen_spec.out_channels, b.disc_width, b.disc_layers);
    b.heads = nullptr;
  } else {
    std::vector<int> channels;
    for (int id : b.nce_layers()) channels.push_back(b.encoder->layer_channels()[static_cast<std::size_t>(id)]);
    b.heads = ProjectionHeads(channels, b.contrast.head_dim);
  }
}

// Named sub-modules present in a bundle, in a fixed order.
std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> named_modules(const TranslatorBundle& b) {
  std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> out;
  auto add = [&](const std::string& name, auto holder) {
    if (holder) out.emplace_back(name, holder.ptr());
  };
  add("encoder", b.encoder);
  add("decoder", b.decoder);
  add("seg_decoder", b.seg_decoder);
  add("discriminator", b.discriminator);
  add("heads", b.heads);
  add("encoder_b", b.encoder_b);
  add("decoder_b", b.decoder_b);
  add("discriminator_b", b.discriminator_b);
  return out;
}

torch::Tensor to_arity(const torch::Tensor& single, int channels) {
  return channels == 1 ? single : single.repeat({1, channels, 1, 1});
}

struct BatchTensors {
  torch::Tensor image;
  torch::Tensor center;
  torch::Tensor label;
};

BatchTensors stack(const std::vector<SliceSample>& samples) {
  std::vector<torch::Tensor> images, centers, labels;
  for (const auto& s : samples) {
    images.push_back(s.image);
    centers.push_back(s.center);
    if (s.label.defined()) labels.push_back(s.label);
  }
  BatchTensors b{torch::stack(images), torch::stack(centers), {}};
  if (labels.size() == samples.size()) b.label = torch::stack(labels);
  return b;
}

std::vector<PatchFeatureSet> features_from(ProjectionHeads& heads, const std::vector<torch::Tensor>& real_layers,
                                           const std::vector<torch::Tensor>& fake_layers, const ContrastConfig& cfg,
                                           const std::vector<int>& layer_ids, std::int64_t batch_index,
                                           std::mt19937_64& rng) {
  std::vector<PatchFeatureSet> out;
  for (std::size_t i = 0; i < layer_ids.size(); ++i) {
    const int id = layer_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= real_layers.size()) {
      throw InvalidConfigError("encoder layer " + std::to_string(id) + " out of range");
    }
    const torch::Tensor real = real_layers[static_cast<std::size_t>(id)][batch_index];
    const torch::Tensor fake = fake_layers[static_cast<std::size_t>(id)][batch_index];
    const std::int64_t channels = real.size(0);
    const std::int64_t positions = real.size(1) * real.size(2);
    const std::int64_t n = std::min(cfg.patches_per_layer, positions);

    std::vector<std::int64_t> all(static_cast<std::size_t>(positions));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(n));
    const torch::Tensor idx = torch::tensor(all, torch::kLong);

    PatchFeatureSet fs;
    fs.layer_id = id;
    fs.locations = all;
    fs.anchors = heads->forward(i, fake.reshape({channels, positions}).index_select(1, idx).t());
    fs.positives = heads->forward(i, real.reshape({channels, positions}).index_select(1, idx).t());
    out.push_back(std::move(fs));
  }
  return out;
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

void set_requires_grad(const std::vector<torch::Tensor>& params, bool flag) {
  for (const auto& p : params) const_cast<torch::Tensor&>(p).requires_grad_(flag);
}

}  // namespace

std::string style_name(Style s) {
  switch (s) {
    case Style::kWcut: return "wcut";
    case Style::kCycleGan: return "cyclegan";
    case Style::kCut: return "cut";
  }
  return "?";
}

Style parse_style(const std::string& name) {
  if (name == "wcut") return Style::kWcut;
  if (name == "cyclegan") return Style::kCycleGan;
  if (name == "cut") return Style::kCut;
  throw InvalidConfigError("unknown translation style '" + name + "'");
}

// ---------------------------------------------------------------------------

torch::Tensor slice_input(const Volume& v, std::int64_t k, int channels) {
  const std::int64_t h = v.shape.rows;
  const std::int64_t w = v.shape.cols;
  auto slice = [&](std::int64_t s) {
    s = std::clamp<std::int64_t>(s, 0, v.shape.slices - 1);
    return torch::from_blob(const_cast<float*>(v.data.data()) + s * h * w, {h, w}, torch::kFloat32);
  };
  if (channels == 1) return slice(k).unsqueeze(0).clone();
  return torch::stack({slice(k - 1), slice(k), slice(k + 1)}).clone();
}

SliceDataset::SliceDataset(std::vector<std::pair<Volume, std::optional<LabelMap>>> volumes, int channels)
    : channels_(channels) {
  if (channels != 1 && channels != 3) throw InvalidConfigError("slice datasets have 1 or 3 channels");
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    const auto& [v, l] = volumes[i];
    if (v.shape.slices < 1) throw ShapeMismatchError("volume '" + v.source_id + "' has no slices");
    if (l && !(l->shape == v.shape)) throw ShapeMismatchError("label map does not match volume '" + v.source_id + "'");
    if (i > 0 && (v.shape.rows != volumes[0].first.shape.rows || v.shape.cols != volumes[0].first.shape.cols)) {
      throw ShapeMismatchError("slice datasets need a common in-plane size");
    }
    for (std::int64_t k = 0; k < v.shape.slices; ++k) index_.emplace_back(i, k);
  }
  volumes_ = std::make_shared<const std::vector<std::pair<Volume, std::optional<LabelMap>>>>(std::move(volumes));
}

bool SliceDataset::labeled() const {
  return volumes_ && !volumes_->empty() &&
         std::all_of(volumes_->begin(), volumes_->end(), [](const auto& p) { return p.second.has_value(); });
}

PlaneSize SliceDataset::plane() const {
  if (!volumes_ || volumes_->empty()) return {0, 0};
  return {volumes_->front().first.shape.rows, volumes_->front().first.shape.cols};
}

SliceSample SliceDataset::get(std::size_t i) const {
  const auto [vi, k] = index_.at(i);
  const auto& [v, l] = (*volumes_)[vi];
  SliceSample s;
  s.volume_index = vi;
  s.slice_index = k;
  s.image = slice_input(v, k, channels_);
  s.center = channels_ == 1 ? s.image : s.image.slice(0, 1, 2).clone();
  if (l) {
    const std::int64_t h = l->shape.rows;
    const std::int64_t w = l->shape.cols;
    s.label = torch::from_blob(const_cast<std::uint8_t*>(l->data.data()) + k * h * w, {h, w}, torch::kUInt8)
                  .to(torch::kLong);
  }
  return s;
}

SliceDataset make_slice_dataset(std::vector<std::pair<Volume, std::optional<LabelMap>>> volumes, int channels) {
  return SliceDataset(std::move(volumes), channels);
}

// ---------------------------------------------------------------------------

void TrainSchedule::validate() const {
  if (epochs < 0 || decay_start_epoch < 0) throw InvalidConfigError("epoch counts must be non-negative");
  if (decay_start_epoch > epochs) throw InvalidConfigError("decay must start before the last epoch");
  if (!(lr > 0.0)) throw InvalidConfigError("learning rate must be positive");
  if (batch_size < 1) throw InvalidConfigError("batch size must be positive");
  if (iterations_per_epoch < 0) throw InvalidConfigError("iterations per epoch must be non-negative");
}

double TrainSchedule::lr_factor(int epoch) const {
  if (epoch < decay_start_epoch || epochs == decay_start_epoch) return 1.0;
  return 1.0 - static_cast<double>(epoch - decay_start_epoch) / static_cast<double>(epochs - decay_start_epoch);
}

std::vector<int> default_nce_layers(int num_layers) {
  std::vector<int> ids;
  if (num_layers <= 0) return ids;
  const int count = std::min(5, num_layers);
  for (int i = 0; i < count; ++i) {
    const int id = count == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(i) * (num_layers - 1) / (count - 1)));
    if (ids.empty() || ids.back() != id) ids.push_back(id);
  }
  return ids;
}

std::vector<int> TranslatorBundle::nce_layers() const {
  const int n = encoder->num_layers();
  if (contrast.layer_ids.empty()) return default_nce_layers(n);
  for (int id : contrast.layer_ids) {
    if (id < 0 || id >= n) throw InvalidConfigError("encoder layer " + std::to_string(id) + " out of range");
  }
  return contrast.layer_ids;
}

std::vector<torch::Tensor> TranslatorBundle::generator_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& [name, m] : named_modules(*this)) {
    if (name.rfind("discriminator", 0) == 0) continue;
    for (auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<torch::Tensor> TranslatorBundle::discriminator_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& [name, m] : named_modules(*this)) {
    if (name.rfind("discriminator", 0) != 0) continue;
    for (auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

std::int64_t TranslatorBundle::generator_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : generator_parameters()) n += p.numel();
  return n;
}

std::int64_t TranslatorBundle::discriminator_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : discriminator_parameters()) n += p.numel();
  return n;
}

torch::Tensor TranslatorBundle::translate(const torch::Tensor& x) {
  return decoder->forward(encoder->forward(x).bottleneck);
}

void TranslatorBundle::save(const std::filesystem::path& path) const {
  json meta{{"style", style_name(style)},
            {"generator", spec_json(gen_spec)},
            {"contrast",
             {{"tau", contrast.tau},
              {"beta", contrast.beta},
              {"patches_per_layer", contrast.patches_per_layer},
              {"layer_ids", contrast.layer_ids},
              {"head_dim", contrast.head_dim},
              {"identity_weight", contrast.identity_weight}}},
            {"loss_weights", {{"adv", weights.adv}, {"contrast", weights.contrast}, {"cycle", weights.cycle}, {"seg", weights.seg}}},
            {"n_classes", n_classes},
            {"disc_width", disc_width},
            {"disc_layers", disc_layers},
            {"train_hw", train_hw},
            {"epochs_trained", epochs_trained}};
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(meta.dump()));
  for (const auto& [name, m] : named_modules(*this)) {
    torch::serialize::OutputArchive sub;
    m->save(sub);
    archive.write(name, sub);
  }
  try {
    archive.save_to(path.string());
  } catch (const c10::Error&) {
    throw UnwritablePathError(path.string());
  }
}

TranslatorBundle TranslatorBundle::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw FileNotFoundError(path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue meta_value;
  archive.read("meta", meta_value);
  const json meta = json::parse(meta_value.toStringRef());

  TranslatorBundle b;
  b.style = parse_style(meta.at("style"));
  b.gen_spec = spec_from(meta.at("generator"));
  const json& c = meta.at("contrast");
  b.contrast.tau = c.at("tau");
  b.contrast.beta = c.at("beta");
  b.contrast.patches_per_layer = c.at("patches_per_layer");
  b.contrast.layer_ids = c.at("layer_ids").get<std::vector<int>>();
  b.contrast.head_dim = c.at("head_dim");
  b.contrast.identity_weight = c.at("identity_weight");
  const json& w = meta.at("loss_weights");
  b.weights = {w.at("adv"), w.at("contrast"), w.at("cycle"), w.at("seg")};
  b.n_classes = meta.at("n_classes");
  b.disc_width = meta.at("disc_width");
  b.disc_layers = meta.at("disc_layers");
  b.train_hw = meta.at("train_hw").get<PlaneSize>();
  b.epochs_trained = meta.at("epochs_trained");
  build_modules(b);
  for (const auto& [name, m] : named_modules(b)) {
    torch::serialize::InputArchive sub;
    archive.read(name, sub);
    m->load(sub);
  }
  return b;
}

TranslatorBundle make_translator(Style style, const TranslatorOptions& opts, std::uint64_t seed) {
  opts.contrast.validate();
  TranslatorBundle b;
  b.style = style;
  b.gen_spec.in_channels = style == Style::kWcut ? 1 : 3;
  b.gen_spec.out_channels = 1;
  b.gen_spec.base_width = opts.base_width;
  b.gen_spec.n_residual_blocks = opts.n_residual_blocks;
  b.gen_spec.downsamplings = opts.downsamplings;
  b.gen_spec.validate();
  b.contrast = opts.contrast;
  b.weights = opts.weights;
  b.n_classes = opts.n_classes;
  b.disc_width = opts.disc_width;
  b.disc_layers = opts.disc_layers;
  torch::manual_seed(seed);
  build_modules(b);
  for (const auto& [name, m] : named_modules(b)) init_gan_weights(*m);
  return b;
}

// ---------------------------------------------------------------------------

std::vector<PatchFeatureSet> sample_patch_features(ResnetEncoder& encoder, ProjectionHeads& heads,
                                                   const torch::Tensor& real, const torch::Tensor& fake,
                                                   const ContrastConfig& cfg, const std::vector<int>& layer_ids,
                                                   std::mt19937_64& rng) {
  if (real.sizes() != fake.sizes()) throw ShapeMismatchError("real and fake images differ in shape");
  const EncoderOutput er = encoder->forward(real);
  const EncoderOutput ef = encoder->forward(fake);
  return features_from(heads, er.layers, ef.layers, cfg, layer_ids, 0, rng);
}

TranslatorHistory train_translator(TranslatorBundle& bundle, const SliceDataset& src, const SliceDataset& tgt,
                                   const TrainSchedule& sched) {
  sched.validate();
  if (src.empty() || tgt.empty()) throw InvalidConfigError("translator training needs non-empty datasets");
  if (!src.labeled()) throw InvalidConfigError("source slices must carry labels");
  const int in_ch = bundle.gen_spec.in_channels;
  if (src.channels() != in_ch || tgt.channels() != in_ch) {
    throw ShapeMismatchError("dataset channel count does not match the generator input");
  }
  if (src.plane() != tgt.plane()) throw ShapeMismatchError("source and target slices differ in size");

  torch::manual_seed(sched.seed);
  std::mt19937_64 rng(sched.seed);

  const auto gen_params = bundle.generator_parameters();
  const auto disc_params = bundle.discriminator_parameters();
  torch::optim::Adam opt_g(gen_params, torch::optim::AdamOptions(sched.lr).betas({0.5, 0.999}));
  torch::optim::Adam opt_d(disc_params, torch::optim::AdamOptions(sched.lr).betas({0.5, 0.999}));

  const bool contrastive = bundle.style != Style::kCycleGan;
  const std::vector<int> layer_ids = contrastive ? bundle.nce_layers() : std::vector<int>{};
  const double idt_w = bundle.contrast.identity_weight;

  const std::size_t n_src = src.size();
  const std::size_t n_tgt = tgt.size();
  const int iters = sched.iterations_per_epoch > 0 ? sched.iterations_per_epoch
                                                   : static_cast<int>(std::max(n_src, n_tgt) + sched.batch_size - 1) /
                                                         sched.batch_size;
  std::vector<std::size_t> order(n_src);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n_src;

  auto nce_term = [&](const EncoderOutput& real_enc, const EncoderOutput& fake_enc, std::int64_t batch) {
    torch::Tensor total = torch::zeros({});
    for (std::int64_t b = 0; b < batch; ++b) {
      auto sets = features_from(bundle.heads, real_enc.layers, fake_enc.layers, bundle.contrast, layer_ids, b, rng);
      for (auto& fs : sets) {
        const auto n = static_cast<double>(fs.size());
        const torch::Tensor pos = fs.positives.detach();
        const torch::Tensor l = bundle.style == Style::kWcut
                                    ? weight_nce(fs.anchors, pos, bundle.contrast.tau, bundle.contrast.beta)
                                    : patch_nce(fs.anchors, pos, bundle.contrast.tau);
        total = total + l / n;
      }
    }
    return total / static_cast<double>(layer_ids.size() * static_cast<std::size_t>(batch));
  };

  TranslatorHistory history;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    const double lr = sched.lr * sched.lr_factor(epoch);
    set_lr(opt_g, lr);
    set_lr(opt_d, lr);
    TranslatorEpochLosses sum;

    for (int it = 0; it < iters; ++it) {
      std::vector<SliceSample> a_samples, b_samples;
      for (int j = 0; j < sched.batch_size; ++j) {
        if (cursor >= n_src) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        a_samples.push_back(src.get(order[cursor++]));
        b_samples.push_back(tgt.get(std::uniform_int_distribution<std::size_t>(0, n_tgt - 1)(rng)));
      }
      const BatchTensors a = stack(a_samples);
      const BatchTensors b = stack(b_samples);
      const std::int64_t batch = a.image.size(0);

      // Generator step.
      set_requires_grad(disc_params, false);
      const EncoderOutput enc_a = bundle.encoder->forward(a.image);
      const torch::Tensor fake_b = bundle.decoder->forward(enc_a.bottleneck);
      const EncoderOutput enc_fake = bundle.encoder->forward(to_arity(fake_b, in_ch));

      torch::Tensor adv = adversarial_loss(bundle.discriminator->forward(fake_b), true);
      torch::Tensor contrast = torch::zeros({});
      torch::Tensor cycle = torch::zeros({});
      torch::Tensor fake_a;

      if (contrastive) {
        contrast = nce_term(enc_a, enc_fake, batch);
        if (idt_w > 0.0) {
          const EncoderOutput enc_b = bundle.encoder->forward(b.image);
          const torch::Tensor idt_b = bundle.decoder->forward(enc_b.bottleneck);
          const EncoderOutput enc_idt = bundle.encoder->forward(to_arity(idt_b, in_ch));
          contrast = (contrast + idt_w * nce_term(enc_b, enc_idt, batch)) / (1.0 + idt_w);
        }
      } else {
        const torch::Tensor rec_a = bundle.decoder_b->forward(bundle.encoder_b->forward(to_arity(fake_b, in_ch)).bottleneck);
        fake_a = bundle.decoder_b->forward(bundle.encoder_b->forward(b.image).bottleneck);
        const torch::Tensor rec_b = bundle.decoder->forward(bundle.encoder->forward(to_arity(fake_a, in_ch)).bottleneck);
        adv = adv + adversarial_loss(bundle.discriminator_b->forward(fake_a), true);
        cycle = cycle_loss(rec_a, a.center) + cycle_loss(rec_b, b.center);
      }

      const torch::Tensor seg = 0.5 * (aux_seg_loss(bundle.seg_decoder->forward(enc_a), a.label) +
                                       aux_seg_loss(bundle.seg_decoder->forward(enc_fake), a.label));

      const torch::Tensor total = bundle.weights.adv * adv + bundle.weights.contrast * contrast +
                                  bundle.weights.cycle * cycle + bundle.weights.seg * seg;
      if (!std::isfinite(total.item<double>())) {
        const auto snap = (sched.checkpoint_dir.empty() ? std::filesystem::temp_directory_path() : sched.checkpoint_dir) /
                          ("diverged_" + style_name(bundle.style) + "_epoch" + std::to_string(epoch) + ".pt");
        bundle.save(snap);
        throw DivergenceError("non-finite translator loss at epoch " + std::to_string(epoch) + ", iteration " +
                                  std::to_string(it),
                              snap.string());
      }
      opt_g.zero_grad();
      total.backward();
      opt_g.step();

      // Discriminator step.
      set_requires_grad(disc_params, true);
      torch::Tensor d_loss = 0.5 * (adversarial_loss(bundle.discriminator->forward(b.center), true) +
                                    adversarial_loss(bundle.discriminator->forward(fake_b.detach()), false));
      if (fake_a.defined()) {
        d_loss = d_loss + 0.5 * (adversarial_loss(bundle.discriminator_b->forward(a.center), true) +
                                 adversarial_loss(bundle.discriminator_b->forward(fake_a.detach()), false));
      }
      if (!std::isfinite(d_loss.item<double>())) {
        const auto snap = (sched.checkpoint_dir.empty() ? std::filesystem::temp_directory_path() : sched.checkpoint_dir) /
                          ("diverged_" + style_name(bundle.style) + "_epoch" + std::to_string(epoch) + ".pt");
        bundle.save(snap);
        throw DivergenceError("non-finite discriminator loss at epoch " + std::to_string(epoch), snap.string());
      }
      opt_d.zero_grad();
      d_loss.backward();
      opt_d.step();

      sum.generator += total.item<double>();
      sum.discriminator += d_loss.item<double>();
      sum.adversarial += adv.item<double>();
      sum.contrast += contrast.item<double>();
      sum.cycle += cycle.item<double>();
      sum.segmentation += seg.item<double>();
    }

    const double n = static_cast<double>(iters);
    history.epochs.push_back({sum.generator / n, sum.discriminator / n, sum.adversarial / n, sum.contrast / n,
                              sum.cycle / n, sum.segmentation / n});
    bundle.epochs_trained += 1;
    bundle.train_hw = src.plane();
    if (sched.checkpoint_every > 0 && !sched.checkpoint_dir.empty() && (epoch + 1) % sched.checkpoint_every == 0) {
      std::filesystem::create_directories(sched.checkpoint_dir);
      bundle.save(sched.checkpoint_dir / (style_name(bundle.style) + "_epoch" + std::to_string(epoch + 1) + ".pt"));
    }
  }
  set_requires_grad(disc_params, true);
  return history;
}

Volume translate_volume(TranslatorBundle& bundle, const Volume& v) {
  validate(v);
  const PlaneSize plane{v.shape.rows, v.shape.cols};
  if (bundle.train_hw != PlaneSize{0, 0} && plane != bundle.train_hw) {
    throw ShapeMismatchError("volume in-plane size " + std::to_string(plane[0]) + "x" + std::to_string(plane[1]) +
                             " differs from the translator's training size");
  }
  const std::int64_t factor = std::int64_t{1} << bundle.gen_spec.downsamplings;
  if (plane[0] % factor != 0 || plane[1] % factor != 0) {
    throw ShapeMismatchError("in-plane size must be divisible by " + std::to_string(factor));
  }

  torch::NoGradGuard no_grad;
  Volume out = v;
  const int channels = bundle.gen_spec.in_channels;
  constexpr std::int64_t kChunk = 8;
  const std::int64_t plane_size = plane[0] * plane[1];
  for (std::int64_t k0 = 0; k0 < v.shape.slices; k0 += kChunk) {
    const std::int64_t k1 = std::min(v.shape.slices, k0 + kChunk);
    std::vector<torch::Tensor> inputs;
    for (std::int64_t k = k0; k < k1; ++k) inputs.push_back(slice_input(v, k, channels));
    const torch::Tensor y = bundle.translate(torch::stack(inputs)).clamp(-1.0, 1.0).contiguous();
    std::copy_n(y.data_ptr<float>(), (k1 - k0) * plane_size, out.data.begin() + k0 * plane_size);
  }
  return out;
}

std::vector<StyledCase> generate_multistyle_dataset(std::vector<TranslatorBundle>& bundles,
                                                    const std::vector<std::pair<Volume, LabelMap>>& labeled_src) {
  if (bundles.empty() || bundles.size() > 3) throw InvalidConfigError("expected one to three translators");
  std::vector<StyledCase> out;
  out.reserve(bundles.size() * labeled_src.size());
  for (auto& bundle : bundles) {
    for (const auto& [v, l] : labeled_src) {
      StyledCase c;
      c.volume = translate_volume(bundle, v);
      c.volume.source_id = v.source_id + "_" + style_name(bundle.style);
      c.labels = l;
      c.style = bundle.style;
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace unpairseg
