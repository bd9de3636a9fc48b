#include "unpairseg/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "unpairseg/config_io.hpp"
#include "unpairseg/errors.hpp"
#include "unpairseg/hashing.hpp"
#include "unpairseg/log.hpp"
#include "unpairseg/metrics.hpp"
#include "unpairseg/nifti_io.hpp"
#include "unpairseg/self_training.hpp"

namespace unpairseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Case directories

namespace {

constexpr std::array<const char*, 2> kCompanionSuffixes{"_pred", "_seg"};

std::optional<std::string> volume_id(const fs::path& p) {
  std::string name = p.filename().string();
  for (const char* ext : {".nii.gz", ".nii"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      name.resize(name.size() - e.size());
      for (const char* suffix : kCompanionSuffixes) {
        const std::string s(suffix);
        if (name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) return std::nullopt;
      }
      return name;
    }
  }
  return std::nullopt;
}

}  // namespace

std::vector<std::string> list_cases(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FileNotFoundError(dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (auto id = volume_id(entry.path())) ids.push_back(*id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

fs::path volume_path(const fs::path& dir, const std::string& id) {
  const fs::path plain = dir / (id + ".nii");
  return fs::exists(plain) ? plain : dir / (id + ".nii.gz");
}
fs::path label_path(const fs::path& dir, const std::string& id) { return dir / (id + "_seg.nii.gz"); }
fs::path crop_path(const fs::path& dir, const std::string& id) { return dir / (id + "_crop.json"); }
fs::path prediction_path(const fs::path& dir, const std::string& id) { return dir / (id + "_pred.nii.gz"); }

std::vector<std::pair<Volume, std::optional<LabelMap>>> load_cases(const fs::path& dir) {
  std::vector<std::pair<Volume, std::optional<LabelMap>>> out;
  for (const auto& id : list_cases(dir)) {
    Volume v = load_volume(volume_path(dir, id));
    v.source_id = id;
    std::optional<LabelMap> l;
    if (fs::exists(label_path(dir, id))) {
      l = load_label_map(label_path(dir, id));
      l->source_id = id;
    }
    out.emplace_back(std::move(v), std::move(l));
  }
  return out;
}

std::vector<LabeledCase> load_labeled_cases(const fs::path& dir) {
  std::vector<LabeledCase> out;
  for (auto& [v, l] : load_cases(dir)) {
    if (!l) throw MissingPrerequisiteError("case '" + v.source_id + "' in " + dir.string() + " has no label map");
    out.push_back({std::move(v), std::move(*l)});
  }
  return out;
}

std::vector<Volume> load_volumes(const fs::path& dir) {
  std::vector<Volume> out;
  for (const auto& id : list_cases(dir)) {
    Volume v = load_volume(volume_path(dir, id));
    v.source_id = id;
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
  if (raw_src.empty() || raw_tgt.empty() || workdir.empty()) {
    throw InvalidConfigError("paths.raw_src, paths.raw_tgt and paths.workdir are required");
  }
  std::set<std::string> distinct;
  for (const auto& p : {raw_src, raw_tgt, workdir}) {
    if (!distinct.insert(fs::weakly_canonical(p).string()).second) throw InvalidConfigError("configured paths must be distinct");
  }
  preprocess.validate();
  if (styles.empty()) throw InvalidConfigError("at least one translation style is required");
  std::set<std::string> seen;
  for (const auto& s : styles) {
    parse_style(s);
    if (!seen.insert(s).second) throw InvalidConfigError("duplicate style '" + s + "'");
  }
  translate_schedule.validate();
  translator.contrast.validate();
  SelfTrainConfig st;
  st.rounds = self_train_rounds;
  st.seg = seg;
  st.sched = seg_schedule;
  st.folds = folds;
  st.inference = inference;
  st.confidence_threshold = confidence_threshold;
  st.validate();
}

fs::path PipelineConfig::gt_dir() const { return raw_tgt_gt.empty() ? raw_tgt / "gt" : raw_tgt_gt; }

json to_json(const PipelineConfig& c) {
  json self{{"rounds", c.self_train_rounds}, {"folds", c.folds}};
  self["confidence_threshold"] = c.confidence_threshold ? json(*c.confidence_threshold) : json(nullptr);
  return {{"paths",
           {{"raw_src", c.raw_src.string()},
            {"raw_tgt", c.raw_tgt.string()},
            {"raw_tgt_gt", c.raw_tgt_gt.string()},
            {"workdir", c.workdir.string()}}},
          {"seed", c.seed},
          {"preprocess", c.preprocess},
          {"styles", c.styles},
          {"translator", c.translator},
          {"translate_schedule", c.translate_schedule},
          {"segmenter", c.seg},
          {"seg_schedule", c.seg_schedule},
          {"self_training", self},
          {"inference", c.inference}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidConfigError("configuration must be a mapping");
  PipelineConfig c;
  static const std::set<std::string> known{"paths",      "seed",         "preprocess",    "styles",   "translator",
                                           "translate_schedule", "segmenter", "seg_schedule", "self_training",
                                           "inference"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw InvalidConfigError("unknown configuration section '" + k + "'");
  }
  try {
    if (j.contains("paths")) {
      const json& p = j["paths"];
      for (const auto& [k, v] : p.items()) {
        if (k == "raw_src") {
          c.raw_src = v.get<std::string>();
        } else if (k == "raw_tgt") {
          c.raw_tgt = v.get<std::string>();
        } else if (k == "raw_tgt_gt") {
          c.raw_tgt_gt = v.get<std::string>();
        } else if (k == "workdir") {
          c.workdir = v.get<std::string>();
        } else {
          throw InvalidConfigError("paths: unknown key '" + k + "'");
        }
      }
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("preprocess")) j["preprocess"].get_to(c.preprocess);
    if (j.contains("styles")) c.styles = j["styles"].get<std::vector<std::string>>();
    if (j.contains("translator")) j["translator"].get_to(c.translator);
    if (j.contains("translate_schedule")) j["translate_schedule"].get_to(c.translate_schedule);
    if (j.contains("segmenter")) j["segmenter"].get_to(c.seg);
    if (j.contains("seg_schedule")) j["seg_schedule"].get_to(c.seg_schedule);
    if (j.contains("inference")) j["inference"].get_to(c.inference);
    if (j.contains("self_training")) {
      for (const auto& [k, v] : j["self_training"].items()) {
        if (k == "rounds") {
          c.self_train_rounds = v.get<int>();
        } else if (k == "folds") {
          c.folds = v.get<std::vector<int>>();
        } else if (k == "confidence_threshold") {
          c.confidence_threshold = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
        } else {
          throw InvalidConfigError("self_training: unknown key '" + k + "'");
        }
      }
    }
  } catch (const json::exception& e) {
    throw InvalidConfigError(std::string("malformed configuration: ") + e.what());
  }
  return c;
}

namespace {

json yaml_node_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& item : n) arr.push_back(yaml_node_to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : n) obj[kv.first.as<std::string>()] = yaml_node_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar: {
      const std::string s = n.Scalar();
      if (n.Tag() == "!") return s;  // quoted
      if (s == "true" || s == "True") return true;
      if (s == "false" || s == "False") return false;
      if (s == "null" || s == "~") return nullptr;
      std::int64_t i = 0;
      if (YAML::convert<std::int64_t>::decode(n, i)) return i;
      double d = 0.0;
      if (YAML::convert<double>::decode(n, d)) return d;
      return s;
    }
  }
  return nullptr;
}

void emit_json(YAML::Emitter& out, const json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (const auto& [k, v] : j.items()) {
      out << YAML::Key << k << YAML::Value;
      emit_json(out, v);
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : j) emit_json(out, v);
    out << YAML::EndSeq;
  } else if (j.is_null()) {
    out << YAML::Null;
  } else if (j.is_boolean()) {
    out << j.get<bool>();
  } else if (j.is_number_unsigned()) {
    out << j.get<std::uint64_t>();
  } else if (j.is_number_integer()) {
    out << j.get<std::int64_t>();
  } else if (j.is_number_float()) {
    // Shortest text that reads back to the same double.
    out << j.dump();
  } else {
    out << YAML::DoubleQuoted << j.get<std::string>();
  }
}

}  // namespace

json yaml_to_json(const std::string& text) {
  try {
    return yaml_node_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw InvalidConfigError(std::string("malformed YAML: ") + e.what());
  }
}

std::string json_to_yaml(const json& j) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  emit_json(out, j);
  return std::string(out.c_str()) + "\n";
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFoundError(path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const json j = yaml_to_json(ss.str());
  return pipeline_config_from_json(j.is_null() ? json::object() : j);
}

std::string default_config_yaml() { return json_to_yaml(to_json(PipelineConfig{})); }

// ---------------------------------------------------------------------------
// Stages and manifest

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kPreprocess: return "preprocess";
    case Stage::kTranslateTrain: return "translate-train";
    case Stage::kTranslate: return "translate";
    case Stage::kSegTrain: return "seg-train";
    case Stage::kSelfTrain: return "self-train";
    case Stage::kPredict: return "predict";
    case Stage::kEvaluate: return "evaluate";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : kAllStages) {
    if (stage_name(s) == name) return s;
  }
  throw InvalidConfigError("unknown stage '" + name + "'");
}

std::vector<Stage> parse_stages(const std::string& list) {
  if (list.empty() || list == "all") return {kAllStages.begin(), kAllStages.end()};
  std::set<Stage> chosen;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) chosen.insert(parse_stage(item));
  }
  if (chosen.empty()) throw InvalidConfigError("no stages selected");
  return {chosen.begin(), chosen.end()};
}

Manifest Manifest::load(const fs::path& path) {
  Manifest m;
  if (!fs::exists(path)) return m;
  try {
    std::ifstream in(path);
    const json j = json::parse(in);
    for (const auto& [name, e] : j.at("stages").items()) {
      StageRecord r;
      r.config_hash = e.at("config_hash");
      r.input_hashes = e.at("input_hashes").get<std::map<std::string, std::string>>();
      r.outputs = e.at("outputs").get<std::vector<std::string>>();
      r.wall_time_s = e.at("wall_time_s");
      m.stages[name] = std::move(r);
    }
  } catch (const json::exception& e) {
    log::warn("ignoring unreadable manifest ", path.string(), ": ", e.what());
    return {};
  }
  return m;
}

void Manifest::save(const fs::path& path) const {
  json stages_json = json::object();
  for (const auto& [name, r] : stages) {
    stages_json[name] = {{"config_hash", r.config_hash},
                         {"input_hashes", r.input_hashes},
                         {"outputs", r.outputs},
                         {"wall_time_s", r.wall_time_s}};
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw UnwritablePathError(tmp.string());
    out << json{{"stages", stages_json}}.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

WorkdirLock::WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
  fs::create_directories(workdir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid());
      (void)!::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    if (errno != EEXIST) throw UnwritablePathError(path_.string());
    long owner = 0;
    std::ifstream(path_) >> owner;
    const bool alive = owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM);
    if (alive) throw WorkdirLockedError("workdir " + workdir.string() + " is in use by process " + std::to_string(owner));
    log::warn("removing stale lock left by process ", owner);
    fs::remove(path_);
  }
  throw WorkdirLockedError("could not acquire " + path_.string());
}

WorkdirLock::~WorkdirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

struct Layout {
  fs::path root;
  fs::path pre_src() const { return root / "preprocessed" / "src"; }
  fs::path pre_tgt() const { return root / "preprocessed" / "tgt"; }
  fs::path translators() const { return root / "translators"; }
  fs::path fake() const { return root / "fake"; }
  fs::path selftrain() const { return root / "selftrain"; }
  fs::path round(int r) const { return selftrain() / ("round_" + std::to_string(r)); }
  fs::path predictions() const { return root / "predictions"; }
  fs::path report_txt() const { return root / "report.txt"; }
  fs::path report_json() const { return root / "report.json"; }
  fs::path manifest() const { return root / "manifest.json"; }
};

std::vector<fs::path> files_under(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(p)) {
    out.push_back(p);
  } else if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() != ".tmp") out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string rel(const Layout& L, const fs::path& p) { return fs::relative(p, L.root).string(); }

std::string hash_json(const json& j) { return sha256_hex(j.dump()); }

SelfTrainConfig self_train_config(const PipelineConfig& cfg, const Layout& L) {
  SelfTrainConfig st;
  st.rounds = cfg.self_train_rounds;
  st.seg = cfg.seg;
  st.sched = cfg.seg_schedule;
  st.sched.seed = cfg.seed;
  st.folds = cfg.folds;
  st.inference = cfg.inference;
  st.confidence_threshold = cfg.confidence_threshold;
  st.out_dir = L.selftrain();
  return st;
}

struct StagePlan {
  Stage stage;
  json config;
  std::vector<fs::path> inputs;
  // Inputs named here must exist before the stage can run.
  std::vector<std::pair<fs::path, Stage>> prerequisites;
};

StagePlan plan_stage(Stage s, const PipelineConfig& cfg, const Layout& L) {
  StagePlan p{s, json::object(), {}, {}};
  auto need = [&](const fs::path& path, Stage producer) {
    p.inputs.push_back(path);
    p.prerequisites.emplace_back(path, producer);
  };
  switch (s) {
    case Stage::kPreprocess:
      p.config = {{"preprocess", cfg.preprocess}};
      p.inputs = {cfg.raw_src, cfg.raw_tgt};
      break;
    case Stage::kTranslateTrain:
      p.config = {{"styles", cfg.styles}, {"translator", cfg.translator},
                  {"schedule", cfg.translate_schedule}, {"seed", cfg.seed}};
      need(L.pre_src(), Stage::kPreprocess);
      need(L.pre_tgt(), Stage::kPreprocess);
      break;
    case Stage::kTranslate:
      p.config = {{"styles", cfg.styles}};
      need(L.translators(), Stage::kTranslateTrain);
      need(L.pre_src(), Stage::kPreprocess);
      break;
    case Stage::kSegTrain:
    case Stage::kSelfTrain: {
      p.config = {{"segmenter", cfg.seg},
                  {"schedule", cfg.seg_schedule},
                  {"folds", cfg.folds},
                  {"inference", cfg.inference},
                  {"seed", cfg.seed},
                  {"confidence_threshold",
                   cfg.confidence_threshold ? json(*cfg.confidence_threshold) : json(nullptr)}};
      need(L.fake(), Stage::kTranslate);
      need(L.pre_tgt(), Stage::kPreprocess);
      if (s == Stage::kSelfTrain) {
        p.config["rounds"] = cfg.self_train_rounds;
        need(L.round(0), Stage::kSegTrain);
      }
      break;
    }
    case Stage::kPredict:
      p.config = {{"inference", cfg.inference}, {"rounds", cfg.self_train_rounds}};
      need(L.round(cfg.self_train_rounds) / "ckpts", Stage::kSelfTrain);
      need(L.pre_tgt(), Stage::kPreprocess);
      break;
    case Stage::kEvaluate:
      need(L.predictions(), Stage::kPredict);
      p.inputs.push_back(cfg.gt_dir());
      break;
  }
  return p;
}

std::map<std::string, std::string> hash_inputs(const StagePlan& plan, const Layout& L) {
  std::map<std::string, std::string> out;
  for (const auto& root : plan.inputs) {
    for (const auto& f : files_under(root)) {
      const bool inside = f.string().rfind(L.root.string(), 0) == 0;
      out[inside ? rel(L, f) : f.string()] = sha256_file(f);
    }
  }
  return out;
}

std::vector<Style> configured_styles(const PipelineConfig& cfg) {
  std::vector<Style> out;
  for (const auto& s : cfg.styles) out.push_back(parse_style(s));
  return out;
}

std::vector<LabeledCase> load_fake(const PipelineConfig& cfg, const Layout& L) {
  std::vector<LabeledCase> out;
  for (const auto& s : cfg.styles) {
    for (auto& c : load_labeled_cases(L.fake() / s)) {
      c.volume.source_id = s + "_" + c.volume.source_id;
      out.push_back(std::move(c));
    }
  }
  return out;
}

void clear_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
}

// Each runner returns the files it produced.
std::vector<fs::path> run_preprocess(const PipelineConfig& cfg, const Layout& L) {
  std::vector<fs::path> outputs;
  for (const auto& [raw, out] : {std::pair{cfg.raw_src, L.pre_src()}, std::pair{cfg.raw_tgt, L.pre_tgt()}}) {
    clear_dir(out);
    const auto cases = load_cases(raw);
    if (cases.empty()) throw MissingPrerequisiteError("no input volumes in " + raw.string());
    for (const auto& [v, l] : cases) {
      const PreprocessedCase pc = preprocess_case(v, l, cfg.preprocess);
      if (pc.constant_input) log::warn("case ", v.source_id, " has constant intensity");
      save_volume(pc.volume, volume_path(out, v.source_id));
      outputs.push_back(volume_path(out, v.source_id));
      if (pc.labels) {
        save_label_map(*pc.labels, label_path(out, v.source_id));
        outputs.push_back(label_path(out, v.source_id));
      }
      save_crop_record(pc.record, crop_path(out, v.source_id));
      outputs.push_back(crop_path(out, v.source_id));
    }
  }
  return outputs;
}

std::vector<fs::path> run_translate_train(const PipelineConfig& cfg, const Layout& L) {
  clear_dir(L.translators());
  const auto src = load_cases(L.pre_src());
  const auto tgt = load_cases(L.pre_tgt());
  std::vector<fs::path> outputs;
  const auto styles = configured_styles(cfg);
  for (std::size_t i = 0; i < styles.size(); ++i) {
    const std::uint64_t seed = cfg.seed + 100u * i;
    TranslatorBundle bundle = make_translator(styles[i], cfg.translator, seed);
    const int ch = bundle.gen_spec.in_channels;
    TrainSchedule sched = cfg.translate_schedule;
    sched.seed = seed;
    log::info("training ", cfg.styles[i], " translator");
    train_translator(bundle, make_slice_dataset(src, ch), make_slice_dataset(tgt, ch), sched);
    const fs::path path = L.translators() / (cfg.styles[i] + ".pt");
    bundle.save(path);
    outputs.push_back(path);
  }
  return outputs;
}

std::vector<fs::path> run_translate(const PipelineConfig& cfg, const Layout& L) {
  clear_dir(L.fake());
  std::vector<std::pair<Volume, LabelMap>> labeled;
  for (auto& [v, l] : load_cases(L.pre_src())) {
    if (!l) throw MissingPrerequisiteError("source case '" + v.source_id + "' has no label map");
    labeled.emplace_back(std::move(v), std::move(*l));
  }
  std::vector<fs::path> outputs;
  for (const auto& style : cfg.styles) {
    const fs::path ckpt = L.translators() / (style + ".pt");
    if (!fs::exists(ckpt)) throw MissingPrerequisiteError("translate needs " + ckpt.string() + " from translate-train");
    std::vector<TranslatorBundle> bundles{TranslatorBundle::load(ckpt)};
    const auto styled = generate_multistyle_dataset(bundles, labeled);
    const fs::path dir = L.fake() / style;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < styled.size(); ++i) {
      const std::string& id = labeled[i].first.source_id;
      save_volume(styled[i].volume, volume_path(dir, id));
      save_label_map(styled[i].labels, label_path(dir, id));
      outputs.push_back(volume_path(dir, id));
      outputs.push_back(label_path(dir, id));
    }
  }
  return outputs;
}

std::vector<fs::path> run_self_training(const PipelineConfig& cfg, const Layout& L, int last_round) {
  const SelfTrainConfig st = self_train_config(cfg, L);
  const auto state = self_train_through(load_fake(cfg, L), load_volumes(L.pre_tgt()), st, last_round);
  std::vector<fs::path> outputs;
  for (int r = last_round == 0 ? 0 : 1; r <= last_round; ++r) {
    for (auto& f : files_under(L.round(r))) outputs.push_back(std::move(f));
  }
  for (int r = last_round + 1; fs::exists(L.round(r)); ++r) fs::remove_all(L.round(r));
  return outputs;
}

std::vector<std::shared_ptr<SegmentationModel>> load_round_models(const Layout& L, int round) {
  const fs::path report = L.round(round) / "report.json";
  if (!fs::exists(report)) throw MissingPrerequisiteError("predict needs " + report.string() + " from self-train");
  std::ifstream in(report);
  const json j = json::parse(in);
  std::vector<std::shared_ptr<SegmentationModel>> models;
  for (const auto& m : j.at("models")) models.push_back(Segmenter::load(L.round(round) / m.at("path").get<std::string>()));
  return models;
}

std::vector<fs::path> run_predict(const PipelineConfig& cfg, const Layout& L) {
  clear_dir(L.predictions());
  const auto models = load_round_models(L, cfg.self_train_rounds);
  std::vector<fs::path> outputs;
  for (const auto& id : list_cases(L.pre_tgt())) {
    Volume v = load_volume(volume_path(L.pre_tgt(), id));
    v.source_id = id;
    const CropRecord record = load_crop_record(crop_path(L.pre_tgt(), id));
    const LabelMap labels = finalize_labels(predict_volume(models, v, cfg.inference), record);
    save_label_map(labels, prediction_path(L.predictions(), id));
    outputs.push_back(prediction_path(L.predictions(), id));
  }
  return outputs;
}

json report_to_json(const std::vector<RegionReport>& reports) {
  json cases = json::array();
  for (const auto& r : reports) {
    json regions = json::object();
    for (Region reg : kAllRegions) {
      const auto& s = r[reg];
      regions[region_name(reg)] = {{"dsc", s.dsc}, {"assd_mm", s.assd_mm ? json(*s.assd_mm) : json(nullptr)}};
    }
    cases.push_back({{"case_id", r.case_id}, {"regions", regions}});
  }
  const ReportSummary sum = summarize(reports);
  json summary = json::object();
  for (Region reg : kAllRegions) {
    const auto i = static_cast<std::size_t>(reg);
    summary[region_name(reg)] = {{"dsc_mean", sum.dsc[i].mean}, {"dsc_std", sum.dsc[i].std},
                                 {"assd_mean", sum.assd[i].mean}, {"assd_std", sum.assd[i].std},
                                 {"assd_count", sum.assd[i].count}};
  }
  return {{"cases", cases}, {"summary", summary}};
}

std::vector<fs::path> run_evaluate(const PipelineConfig& cfg, const Layout& L) {
  const fs::path gt = cfg.gt_dir();
  if (!fs::is_directory(gt)) throw MissingPrerequisiteError("evaluate needs ground truth in " + gt.string());
  std::vector<RegionReport> reports;
  for (const auto& id : list_cases(cfg.raw_tgt)) {
    const fs::path pred = prediction_path(L.predictions(), id);
    if (!fs::exists(pred)) throw MissingPrerequisiteError("no prediction for case '" + id + "'");
    if (!fs::exists(label_path(gt, id))) throw MissingPrerequisiteError("no ground truth for case '" + id + "'");
    LabelMap g = load_label_map(label_path(gt, id));
    g.source_id = id;
    reports.push_back(evaluate_case(load_label_map(pred), g));
  }
  {
    std::ofstream out(L.report_txt());
    out << format_report(reports);
  }
  {
    std::ofstream out(L.report_json());
    out << report_to_json(reports).dump(2) << '\n';
  }
  return {L.report_txt(), L.report_json()};
}

std::vector<fs::path> run_stage(Stage s, const PipelineConfig& cfg, const Layout& L) {
  switch (s) {
    case Stage::kPreprocess: return run_preprocess(cfg, L);
    case Stage::kTranslateTrain: return run_translate_train(cfg, L);
    case Stage::kTranslate: return run_translate(cfg, L);
    case Stage::kSegTrain: return run_self_training(cfg, L, 0);
    case Stage::kSelfTrain: return run_self_training(cfg, L, cfg.self_train_rounds);
    case Stage::kPredict: return run_predict(cfg, L);
    case Stage::kEvaluate: return run_evaluate(cfg, L);
  }
  return {};
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::vector<Stage>& stages) {
  cfg.validate();
  const Layout L{fs::absolute(cfg.workdir)};
  WorkdirLock lock(L.root);
  PipelineResult result;
  result.manifest = Manifest::load(L.manifest());

  for (Stage s : kAllStages) {
    if (std::find(stages.begin(), stages.end(), s) == stages.end()) continue;
    const std::string name = stage_name(s);
    const StagePlan plan = plan_stage(s, cfg, L);
    for (const auto& [path, producer] : plan.prerequisites) {
      if (files_under(path).empty()) {
        throw MissingPrerequisiteError("stage '" + name + "' needs the output of stage '" + stage_name(producer) +
                                       "' (" + path.string() + " is missing)");
      }
    }
    const std::string config_hash = hash_json(plan.config);
    auto input_hashes = hash_inputs(plan, L);

    auto it = result.manifest.stages.find(name);
    bool fresh = it != result.manifest.stages.end() && it->second.config_hash == config_hash &&
                 it->second.input_hashes == input_hashes;
    if (fresh) {
      for (const auto& o : it->second.outputs) fresh = fresh && fs::exists(L.root / o);
    }
    if (fresh) {
      log::info("stage ", name, ": up to date");
      result.skipped.push_back(s);
      continue;
    }

    log::info("stage ", name, ": running");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<fs::path> produced;
    try {
      produced = run_stage(s, cfg, L);
    } catch (const Error&) {
      result.manifest.stages.erase(name);
      result.manifest.save(L.manifest());
      throw;
    }
    StageRecord record;
    record.config_hash = config_hash;
    record.input_hashes = std::move(input_hashes);
    for (const auto& p : produced) record.outputs.push_back(rel(L, p));
    record.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.manifest.stages[name] = std::move(record);
    result.manifest.save(L.manifest());
    result.executed.push_back(s);
  }
  return result;
}

}  // namespace unpairseg
