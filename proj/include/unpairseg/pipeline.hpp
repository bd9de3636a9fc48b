#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unpairseg/inference.hpp"
#include "unpairseg/preprocess.hpp"
#include "unpairseg/segmenter.hpp"
#include "unpairseg/translators.hpp"

namespace unpairseg {

// ---------------------------------------------------------------------------
// Case directories
// ---------------------------------------------------------------------------
//
// A case directory holds `<id>.nii.gz` volumes with optional companions
// `<id>_seg.nii.gz`, `<id>_crop.json` and `<id>_pred.nii.gz`.

/// Sorted ids of the volumes in `dir` (companion files excluded).
std::vector<std::string> list_cases(const std::filesystem::path& dir);
std::filesystem::path volume_path(const std::filesystem::path& dir, const std::string& id);
std::filesystem::path label_path(const std::filesystem::path& dir, const std::string& id);
std::filesystem::path crop_path(const std::filesystem::path& dir, const std::string& id);
std::filesystem::path prediction_path(const std::filesystem::path& dir, const std::string& id);

/// Loads every case of `dir`; labels are attached when present.
std::vector<std::pair<Volume, std::optional<LabelMap>>> load_cases(const std::filesystem::path& dir);
/// Loads every case of `dir`, requiring labels.
std::vector<LabeledCase> load_labeled_cases(const std::filesystem::path& dir);
std::vector<Volume> load_volumes(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::filesystem::path raw_src;
  std::filesystem::path raw_tgt;
  /// Target ground truth for evaluation; empty means `<raw_tgt>/gt`.
  std::filesystem::path raw_tgt_gt;
  std::filesystem::path workdir;

  PreprocessConfig preprocess;
  std::vector<std::string> styles{"wcut"};
  TranslatorOptions translator;
  TrainSchedule translate_schedule;
  SegConfig seg;
  SegSchedule seg_schedule;
  int self_train_rounds = 3;
  std::vector<int> folds{0, 1, 2};
  std::optional<double> confidence_threshold;
  InferenceConfig inference;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] std::filesystem::path gt_dir() const;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// YAML text <-> JSON, with plain scalars typed as bool, integer, float or
/// string in that order of preference.
nlohmann::json yaml_to_json(const std::string& text);
std::string json_to_yaml(const nlohmann::json& j);

PipelineConfig load_pipeline_config(const std::filesystem::path& path);
/// Every setting with its default value, as YAML.
std::string default_config_yaml();

// ---------------------------------------------------------------------------
// Stages and manifest
// ---------------------------------------------------------------------------

enum class Stage { kPreprocess, kTranslateTrain, kTranslate, kSegTrain, kSelfTrain, kPredict, kEvaluate };

inline constexpr std::array<Stage, 7> kAllStages{Stage::kPreprocess, Stage::kTranslateTrain, Stage::kTranslate,
                                                 Stage::kSegTrain,   Stage::kSelfTrain,      Stage::kPredict,
                                                 Stage::kEvaluate};

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);
/// Comma-separated stage names, or "all".
std::vector<Stage> parse_stages(const std::string& list);

struct StageRecord {
  std::string config_hash;
  std::map<std::string, std::string> input_hashes;
  std::vector<std::string> outputs;
  double wall_time_s = 0.0;
};

struct Manifest {
  std::map<std::string, StageRecord> stages;

  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Holds `<workdir>/.lock` for its lifetime. A lock left by a dead process
/// is taken over.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct PipelineResult {
  std::vector<Stage> executed;
  std::vector<Stage> skipped;
  Manifest manifest;
};

/// Runs the requested stages in canonical order, skipping those whose
/// manifest entry matches the current configuration and input contents and
/// whose outputs all exist.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::vector<Stage>& stages);

}  // namespace unpairseg
