#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "unpairseg/inference.hpp"
#include "unpairseg/segmenter.hpp"

namespace unpairseg {

struct SelfTrainConfig {
  /// Maximum number of self-training rounds K after the initial round 0.
  int rounds = 3;
  SegConfig seg;
  SegSchedule sched;
  /// Folds trained each round and ensembled for pseudo-labelling. A fold id
  /// of -1 trains one model on every case.
  std::vector<int> folds{0, 1, 2};
  InferenceConfig inference;
  /// Voxels whose winning probability falls below this become background.
  std::optional<double> confidence_threshold;
  /// Run directory; empty keeps everything in memory.
  std::filesystem::path out_dir;

  void validate() const;
};

struct PseudoLabel {
  LabelMap labels;
  int round_generated = 0;
  /// Ids of the checkpoints that produced the label.
  std::vector<std::string> generated_by;
};

struct RoundReport {
  int round = 0;
  std::size_t train_size = 0;
  std::vector<int> folds;
  std::vector<std::string> model_ids;
  std::optional<double> val_dice;
  /// Loaded from a finished run directory rather than trained.
  bool resumed = false;
};

struct SelfTrainState {
  int round = 0;
  int max_rounds = 3;
  std::map<std::string, PseudoLabel> pseudo_labels;
  std::map<int, std::vector<std::shared_ptr<Segmenter>>> models;
  std::vector<RoundReport> reports;
  /// Rounds whose models were trained (not resumed) by this call.
  int training_runs = 0;
};

/// Ensemble prediction over each volume, keyed by `source_id` (or
/// "case_<i>" when empty).
std::map<std::string, PseudoLabel> generate_pseudo_labels(const std::vector<std::shared_ptr<Segmenter>>& models,
                                                          const std::vector<Volume>& unlabeled,
                                                          const InferenceConfig& cfg, int round,
                                                          std::optional<double> confidence_threshold = std::nullopt);

/// Round 0 trains on the fake-labelled cases; each later round relabels the
/// real cases with the previous round's ensemble and retrains from scratch
/// on the union. With an output directory set, finished rounds found there
/// under the same configuration and data are loaded instead of retrained.
SelfTrainState self_train(const std::vector<LabeledCase>& fake_labeled, const std::vector<Volume>& real_unlabeled,
                          const SelfTrainConfig& cfg, const std::vector<LabeledCase>* validation = nullptr);

/// As `self_train`, stopping after `last_round` (0 runs only the initial
/// training on fake data).
SelfTrainState self_train_through(const std::vector<LabeledCase>& fake_labeled,
                                  const std::vector<Volume>& real_unlabeled, const SelfTrainConfig& cfg,
                                  int last_round, const std::vector<LabeledCase>* validation = nullptr);

/// Mean foreground Dice of an ensemble on labelled cases.
double ensemble_dice(const std::vector<std::shared_ptr<Segmenter>>& models, const std::vector<LabeledCase>& cases,
                     const InferenceConfig& cfg);

}  // namespace unpairseg
