#include "unpairseg/self_training.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "unpairseg/config_io.hpp"
#include "unpairseg/errors.hpp"
#include "unpairseg/hashing.hpp"
#include "unpairseg/log.hpp"
#include "unpairseg/nifti_io.hpp"

namespace unpairseg {

namespace fs = std::filesystem;
using nlohmann::json;

void SelfTrainConfig::validate() const {
  if (rounds < 1) throw InvalidConfigError("self-training needs at least one round");
  seg.validate();
  sched.validate();
  inference.validate();
  if (folds.empty()) throw InvalidConfigError("self-training needs at least one fold");
  for (int f : folds) {
    if (f < -1 || f >= seg.folds) throw InvalidConfigError("fold id out of range");
  }
  if (confidence_threshold && !(*confidence_threshold >= 0.0 && *confidence_threshold <= 1.0)) {
    throw InvalidConfigError("confidence threshold must lie in [0, 1]");
  }
}

namespace {

std::vector<std::shared_ptr<SegmentationModel>> as_models(const std::vector<std::shared_ptr<Segmenter>>& models) {
  return {models.begin(), models.end()};
}

std::vector<std::string> ids_of(const std::vector<std::shared_ptr<Segmenter>>& models) {
  std::vector<std::string> out;
  for (const auto& m : models) out.push_back(m->id());
  return out;
}

std::string case_key(const Volume& v, std::size_t i) {
  return v.source_id.empty() ? "case_" + std::to_string(i) : v.source_id;
}

// Hash of everything a round's outcome depends on apart from earlier rounds.
std::string fingerprint(const SelfTrainConfig& cfg, const std::vector<LabeledCase>& fake,
                        const std::vector<Volume>& real) {
  json j{{"seg", cfg.seg}, {"sched", cfg.sched}, {"folds", cfg.folds}, {"inference", cfg.inference}};
  if (cfg.confidence_threshold) j["confidence_threshold"] = *cfg.confidence_threshold;
  std::string blob = j.dump();
  auto add = [&blob](const void* p, std::size_t n) { blob.append(static_cast<const char*>(p), n); };
  for (const auto& c : fake) {
    add(c.volume.data.data(), c.volume.data.size() * sizeof(float));
    add(c.labels.data.data(), c.labels.data.size());
  }
  for (const auto& v : real) add(v.data.data(), v.data.size() * sizeof(float));
  return sha256_hex(blob);
}

fs::path round_dir(const SelfTrainConfig& cfg, int r) { return cfg.out_dir / ("round_" + std::to_string(r)); }

std::string fold_name(int f) { return f < 0 ? "all" : "fold_" + std::to_string(f); }

// Loads a finished round if its report matches the current fingerprint and
// the checkpoints on disk still hash to the recorded ids.
std::optional<std::vector<std::shared_ptr<Segmenter>>> try_resume(const SelfTrainConfig& cfg, int r,
                                                                  const std::string& fp,
                                                                  const std::vector<std::string>& prev_ids,
                                                                  RoundReport& report) {
  if (cfg.out_dir.empty()) return std::nullopt;
  const fs::path report_path = round_dir(cfg, r) / "report.json";
  if (!fs::is_regular_file(report_path)) return std::nullopt;
  json j;
  try {
    std::ifstream in(report_path);
    j = json::parse(in);
    if (j.at("fingerprint") != fp || j.at("pseudo_labels_generated_by").get<std::vector<std::string>>() != prev_ids) {
      return std::nullopt;
    }
    std::vector<std::shared_ptr<Segmenter>> models;
    for (const auto& m : j.at("models")) {
      const fs::path p = round_dir(cfg, r) / m.at("path").get<std::string>();
      if (!fs::is_regular_file(p) || sha256_file(p) != m.at("id").get<std::string>()) return std::nullopt;
      models.push_back(Segmenter::load(p));
    }
    report.train_size = j.at("train_size");
    report.folds = j.at("folds").get<std::vector<int>>();
    report.model_ids = ids_of(models);
    if (j.contains("val_dice") && !j["val_dice"].is_null()) report.val_dice = j["val_dice"].get<double>();
    report.resumed = true;
    return models;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void persist_round(const SelfTrainConfig& cfg, const std::string& fp, const RoundReport& report,
                   const std::vector<std::shared_ptr<Segmenter>>& models, const std::vector<std::string>& prev_ids,
                   const std::map<std::string, PseudoLabel>& pseudo) {
  const fs::path dir = round_dir(cfg, report.round);
  fs::create_directories(dir / "ckpts");
  json models_json = json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const fs::path rel = fs::path("ckpts") / (fold_name(report.folds[i]) + ".pt");
    models[i]->save(dir / rel);
    models_json.push_back({{"fold", report.folds[i]}, {"path", rel.string()}, {"id", report.model_ids[i]}});
  }
  json pseudo_json = json::array();
  if (!pseudo.empty()) fs::create_directories(dir / "pseudo");
  for (const auto& [id, pl] : pseudo) {
    const fs::path rel = fs::path("pseudo") / (id + "_seg.nii.gz");
    save_label_map(pl.labels, dir / rel);
    pseudo_json.push_back({{"case_id", id}, {"path", rel.string()}, {"round_generated", pl.round_generated},
                           {"generated_by", pl.generated_by}});
  }
  json j{{"round", report.round},
         {"fingerprint", fp},
         {"train_size", report.train_size},
         {"folds", report.folds},
         {"models", models_json},
         {"pseudo_labels_generated_by", prev_ids},
         {"pseudo_labels", pseudo_json},
         {"val_dice", report.val_dice ? json(*report.val_dice) : json(nullptr)}};
  // Written last so a half-finished round is never mistaken for a finished one.
  const fs::path tmp = dir / "report.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw UnwritablePathError(tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, dir / "report.json");
}

}  // namespace

std::map<std::string, PseudoLabel> generate_pseudo_labels(const std::vector<std::shared_ptr<Segmenter>>& models,
                                                          const std::vector<Volume>& unlabeled,
                                                          const InferenceConfig& cfg, int round,
                                                          std::optional<double> confidence_threshold) {
  if (models.empty()) throw MissingPrerequisiteError("pseudo-labelling needs trained models");
  const auto ids = ids_of(models);
  const auto ensemble = as_models(models);
  std::map<std::string, PseudoLabel> out;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    const ProbabilityMap probs = predict_volume(ensemble, unlabeled[i], cfg);
    LabelMap labels = argmax_labels(probs);
    if (confidence_threshold) {
      const auto n = labels.data.size();
      for (std::size_t v = 0; v < n; ++v) {
        if (probs.data[labels.data[v] * n + v] < *confidence_threshold) labels.data[v] = kBackground;
      }
    }
    labels.origin_mm = unlabeled[i].origin_mm;
    labels.source_id = unlabeled[i].source_id;
    out[case_key(unlabeled[i], i)] = PseudoLabel{std::move(labels), round, ids};
  }
  return out;
}

double ensemble_dice(const std::vector<std::shared_ptr<Segmenter>>& models, const std::vector<LabeledCase>& cases,
                     const InferenceConfig& cfg) {
  if (cases.empty()) throw InvalidConfigError("no cases to evaluate");
  const auto ensemble = as_models(models);
  double sum = 0.0;
  for (const auto& c : cases) sum += mean_foreground_dice(argmax_labels(predict_volume(ensemble, c.volume, cfg)), c.labels);
  return sum / static_cast<double>(cases.size());
}

SelfTrainState self_train(const std::vector<LabeledCase>& fake_labeled, const std::vector<Volume>& real_unlabeled,
                          const SelfTrainConfig& cfg, const std::vector<LabeledCase>* validation) {
  return self_train_through(fake_labeled, real_unlabeled, cfg, cfg.rounds, validation);
}

SelfTrainState self_train_through(const std::vector<LabeledCase>& fake_labeled,
                                  const std::vector<Volume>& real_unlabeled, const SelfTrainConfig& cfg,
                                  int last_round, const std::vector<LabeledCase>* validation) {
  cfg.validate();
  if (last_round < 0 || last_round > cfg.rounds) throw InvalidConfigError("last round out of range");
  if (fake_labeled.empty()) throw InvalidConfigError("self-training needs fake-labelled cases");
  const std::string fp = fingerprint(cfg, fake_labeled, real_unlabeled);

  SelfTrainState state;
  state.max_rounds = cfg.rounds;
  std::vector<std::string> prev_ids;

  for (int r = 0; r <= last_round; ++r) {
    state.round = r;
    std::map<std::string, PseudoLabel> pseudo;
    std::vector<LabeledCase> train = fake_labeled;
    if (r > 0) {
      pseudo = generate_pseudo_labels(state.models.at(r - 1), real_unlabeled, cfg.inference, r,
                                      cfg.confidence_threshold);
      for (std::size_t i = 0; i < real_unlabeled.size(); ++i) {
        train.push_back({real_unlabeled[i], pseudo.at(case_key(real_unlabeled[i], i)).labels});
      }
    }

    RoundReport report;
    report.round = r;
    std::vector<std::shared_ptr<Segmenter>> models;
    if (auto resumed = try_resume(cfg, r, fp, prev_ids, report)) {
      log::info("self-training round ", r, ": resumed from ", round_dir(cfg, r).string());
      models = std::move(*resumed);
    } else {
      log::info("self-training round ", r, ": training on ", train.size(), " cases");
      report.train_size = train.size();
      const auto splits = cfg.folds == std::vector<int>{-1} ? std::vector<FoldSplit>{}
                                                            : split_folds(train.size(), cfg.seg.folds, cfg.sched.seed);
      for (int f : cfg.folds) {
        std::vector<LabeledCase> subset;
        if (f < 0) {
          subset = train;
        } else {
          for (auto i : splits[static_cast<std::size_t>(f)].train) subset.push_back(train[i]);
        }
        SegSchedule sched = cfg.sched;
        sched.seed = cfg.sched.seed + 1000u * static_cast<std::uint64_t>(r) + static_cast<std::uint64_t>(f + 1);
        auto model = std::make_shared<Segmenter>(cfg.seg, sched.seed, f);
        try {
          train_segmenter(*model, subset, sched);
        } catch (const DivergenceError& e) {
          throw DivergenceError("round " + std::to_string(r) + ": " + e.what(), e.snapshot_path);
        }
        models.push_back(model);
        report.folds.push_back(f);
      }
      report.model_ids = ids_of(models);
      if (validation != nullptr && !validation->empty()) report.val_dice = ensemble_dice(models, *validation, cfg.inference);
      if (!cfg.out_dir.empty()) persist_round(cfg, fp, report, models, prev_ids, pseudo);
      ++state.training_runs;
    }
    for (auto& [id, pl] : pseudo) state.pseudo_labels[id] = std::move(pl);
    prev_ids = report.model_ids;
    state.models[r] = std::move(models);
    state.reports.push_back(std::move(report));
  }
  return state;
}

}  // namespace unpairseg
