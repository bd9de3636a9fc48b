#pragma once

#include <nlohmann/json.hpp>

#include "unpairseg/inference.hpp"
#include "unpairseg/losses.hpp"
#include "unpairseg/networks.hpp"
#include "unpairseg/preprocess.hpp"
#include "unpairseg/segmenter.hpp"
#include "unpairseg/translators.hpp"

namespace unpairseg {

// JSON mappings for the configuration structs. Readers accept partial
// objects: missing keys keep their defaults, unknown keys are rejected.

void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);
void to_json(nlohmann::json& j, const ContrastConfig& c);
void from_json(const nlohmann::json& j, ContrastConfig& c);
void to_json(nlohmann::json& j, const LossWeights& c);
void from_json(const nlohmann::json& j, LossWeights& c);
void to_json(nlohmann::json& j, const TrainSchedule& c);
void from_json(const nlohmann::json& j, TrainSchedule& c);
void to_json(nlohmann::json& j, const TranslatorOptions& c);
void from_json(const nlohmann::json& j, TranslatorOptions& c);
void to_json(nlohmann::json& j, const SegConfig& c);
void from_json(const nlohmann::json& j, SegConfig& c);
void to_json(nlohmann::json& j, const SegSchedule& c);
void from_json(const nlohmann::json& j, SegSchedule& c);
void to_json(nlohmann::json& j, const InferenceConfig& c);
void from_json(const nlohmann::json& j, InferenceConfig& c);

}  // namespace unpairseg
