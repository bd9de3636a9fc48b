#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "unpairseg/errors.hpp"
#include "unpairseg/hashing.hpp"
#include "unpairseg/nifti_io.hpp"
#include "unpairseg/phantom.hpp"
#include "unpairseg/pipeline.hpp"

using namespace unpairseg;
namespace fs = std::filesystem;

namespace {

void write_phantoms(const fs::path& dir, Domain domain, int n, std::uint64_t seed) {
  PhantomConfig pc;
  pc.shape = {8, 24, 24};
  pc.n_cases = n;
  pc.seed = seed;
  pc.domain = domain;
  const fs::path label_dir = domain == Domain::kTarget ? dir / "gt" : dir;
  fs::create_directories(label_dir);
  for (const auto& c : generate_phantoms(pc)) {
    save_volume(c.volume, volume_path(dir, c.case_id));
    save_label_map(c.labels, label_path(label_dir, c.case_id));
  }
}

PipelineConfig tiny_pipeline(const fs::path& root) {
  PipelineConfig c;
  c.raw_src = root / "raw_src";
  c.raw_tgt = root / "raw_tgt";
  c.workdir = root / "work";
  c.preprocess.target_spacing_mm = {1.5, 0.41, 0.41};
  c.preprocess.crop_hw = {32, 32};
  c.translator.base_width = 4;
  c.translator.n_residual_blocks = 1;
  c.translator.disc_width = 4;
  c.translator.disc_layers = 2;
  c.translator.contrast.patches_per_layer = 8;
  c.translator.contrast.head_dim = 8;
  c.translate_schedule.epochs = 1;
  c.translate_schedule.decay_start_epoch = 1;
  c.translate_schedule.iterations_per_epoch = 2;
  c.seg.patch_size = {8, 32, 32};
  c.seg.base_width = 4;
  c.seg.depth = 2;
  c.seg.folds = 2;
  c.seg_schedule.epochs = 1;
  c.seg_schedule.iterations_per_epoch = 1;
  c.folds = {0, 1};
  c.self_train_rounds = 1;
  c.seed = 5;
  return c;
}

struct Fixture {
  testutil::TempDir dir;
  PipelineConfig cfg;
  Fixture() : cfg(tiny_pipeline(dir.path())) {
    write_phantoms(cfg.raw_src, Domain::kSource, 2, 1);
    write_phantoms(cfg.raw_tgt, Domain::kTarget, 2, 2);
  }
};

std::vector<Stage> all() { return {kAllStages.begin(), kAllStages.end()}; }

std::set<std::string> names(const std::vector<Stage>& stages) {
  std::set<std::string> out;
  for (Stage s : stages) out.insert(stage_name(s));
  return out;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = sha256_file(e.path());
  }
  return out;
}

// Directories each stage reads, relative to the workdir; written down
// independently of the pipeline's own plan.
const std::map<std::string, std::vector<std::string>>& stage_reads() {
  static const std::map<std::string, std::vector<std::string>> reads{
      {"translate-train", {"preprocessed/src", "preprocessed/tgt"}},
      {"translate", {"translators", "preprocessed/src"}},
      {"seg-train", {"fake", "preprocessed/tgt"}},
      {"self-train", {"fake", "preprocessed/tgt", "selftrain/round_0"}},
      {"predict", {"selftrain/round_1/ckpts", "preprocessed/tgt"}},
      {"evaluate", {"predictions"}},
  };
  return reads;
}

// Stages whose inputs changed relative to `before`, walking the stage order.
std::set<std::string> expected_reruns(const std::map<std::string, std::string>& before,
                                      const std::map<std::string, std::string>& after) {
  std::set<std::string> out;
  for (const auto& [stage, dirs] : stage_reads()) {
    for (const auto& d : dirs) {
      for (const auto& [path, hash] : after) {
        if (path.rfind(d + "/", 0) != 0) continue;
        auto it = before.find(path);
        if (it == before.end() || it->second != hash) out.insert(stage);
      }
      for (const auto& [path, hash] : before) {
        if (path.rfind(d + "/", 0) == 0 && !after.count(path)) out.insert(stage);
      }
    }
  }
  return out;
}

std::string run_cli(const std::string& args, int* status) {
  const std::string cmd = std::string(UNPAIRSEG_CLI) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (pipe != nullptr && std::fgets(buf, sizeof buf, pipe) != nullptr) out += buf;
  const int rc = ::pclose(pipe);
  *status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return out;
}

}  // namespace

TEST(Stages, NamesRoundTripAndOrder) {
  EXPECT_EQ(kAllStages.size(), 7U);
  for (Stage s : kAllStages) EXPECT_EQ(parse_stage(stage_name(s)), s);
  EXPECT_EQ(parse_stages("evaluate,preprocess"), (std::vector<Stage>{Stage::kPreprocess, Stage::kEvaluate}));
  EXPECT_EQ(parse_stages("all").size(), 7U);
  EXPECT_THROW(parse_stage("bogus"), InvalidConfigError);
}

TEST(Config, DefaultsRoundTripThroughYaml) {
  const std::string yaml = default_config_yaml();
  const PipelineConfig c = pipeline_config_from_json(yaml_to_json(yaml));
  EXPECT_EQ(to_json(c), to_json(PipelineConfig{}));
  EXPECT_NE(yaml.find("self_training"), std::string::npos);
  EXPECT_THROW(pipeline_config_from_json(yaml_to_json("bogus: 1\n")), InvalidConfigError);
  EXPECT_THROW(pipeline_config_from_json(yaml_to_json("segmenter: {depth: 3, colour: red}\n")), InvalidConfigError);
}

TEST(Config, PartialFileKeepsDefaults) {
  testutil::TempDir dir;
  {
    std::ofstream out(dir.path() / "c.yaml");
    out << "seed: 9\nsegmenter:\n  depth: 3\nself_training:\n  rounds: 5\n";
  }
  const PipelineConfig c = load_pipeline_config(dir.path() / "c.yaml");
  EXPECT_EQ(c.seed, 9U);
  EXPECT_EQ(c.seg.depth, 3);
  EXPECT_EQ(c.seg.base_width, SegConfig{}.base_width);
  EXPECT_EQ(c.self_train_rounds, 5);
  EXPECT_THROW(load_pipeline_config(dir.path() / "none.yaml"), FileNotFoundError);
}

TEST(Config, PathsMustBeDistinct) {
  testutil::TempDir dir;
  PipelineConfig c = tiny_pipeline(dir.path());
  c.workdir = c.raw_src;
  EXPECT_THROW(c.validate(), InvalidConfigError);
}

TEST(Lock, SecondHolderIsRejected) {
  testutil::TempDir dir;
  WorkdirLock lock(dir.path());
  EXPECT_THROW(WorkdirLock again(dir.path()), WorkdirLockedError);
}

TEST(Lock, StaleLockIsTakenOver) {
  testutil::TempDir dir;
  const pid_t child = ::fork();
  if (child == 0) ::_exit(0);
  ::waitpid(child, nullptr, 0);
  {
    std::ofstream out(dir.path() / ".lock");
    out << child;
  }
  EXPECT_NO_THROW(WorkdirLock lock(dir.path()));
  EXPECT_FALSE(fs::exists(dir.path() / ".lock"));
}

TEST(Pipeline, MissingPrerequisiteIsNamed) {
  Fixture f;
  try {
    run_pipeline(f.cfg, {Stage::kTranslate});
    FAIL() << "expected MissingPrerequisiteError";
  } catch (const MissingPrerequisiteError& e) {
    EXPECT_NE(std::string(e.what()).find("translate-train"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, FullRunIdempotenceAndCorruption) {
  Fixture f;
  const PipelineResult first = run_pipeline(f.cfg, all());
  EXPECT_EQ(first.executed.size(), 7U);
  EXPECT_EQ(first.manifest.stages.size(), 7U);
  const fs::path work = f.cfg.workdir;
  EXPECT_TRUE(fs::exists(work / "report.txt"));
  EXPECT_TRUE(fs::exists(work / "manifest.json"));
  EXPECT_FALSE(fs::exists(work / ".lock"));
  for (const auto& [name, rec] : first.manifest.stages) {
    EXPECT_FALSE(rec.config_hash.empty()) << name;
    EXPECT_FALSE(rec.outputs.empty()) << name;
    for (const auto& o : rec.outputs) EXPECT_TRUE(fs::exists(work / o)) << o;
  }
  for (const auto& id : list_cases(f.cfg.raw_tgt)) {
    const LabelMap pred = load_label_map(prediction_path(work / "predictions", id));
    const Volume raw = load_volume(volume_path(f.cfg.raw_tgt, id));
    EXPECT_TRUE(same_geometry(pred, raw, 1e-5)) << id;
  }

  const PipelineResult again = run_pipeline(f.cfg, all());
  EXPECT_TRUE(again.executed.empty());
  EXPECT_EQ(again.skipped.size(), 7U);

  // A corrupted prediction only invalidates evaluation.
  auto before = snapshot(work);
  const std::string id = list_cases(f.cfg.raw_tgt).front();
  {
    LabelMap pred = load_label_map(prediction_path(work / "predictions", id));
    pred.data[0] = static_cast<std::uint8_t>((pred.data[0] + 1) % 4);
    save_label_map(pred, prediction_path(work / "predictions", id));
  }
  const PipelineResult fixed = run_pipeline(f.cfg, all());
  EXPECT_EQ(names(fixed.executed), (std::set<std::string>{"evaluate"}));
  EXPECT_EQ(names(fixed.executed), expected_reruns(before, snapshot(work)));

  // A modified fake volume reruns segmentation onwards but nothing upstream.
  before = snapshot(work);
  {
    const fs::path fake_dir = work / "fake" / "wcut";
    const std::string fid = list_cases(fake_dir).front();
    Volume v = load_volume(volume_path(fake_dir, fid));
    for (auto& x : v.data) x = -x;
    save_volume(v, volume_path(fake_dir, fid));
  }
  const PipelineResult downstream = run_pipeline(f.cfg, all());
  const auto ran = names(downstream.executed);
  EXPECT_EQ(ran, expected_reruns(before, snapshot(work)));
  EXPECT_TRUE(ran.count("seg-train"));
  EXPECT_TRUE(ran.count("self-train"));
  EXPECT_FALSE(ran.count("preprocess"));
  EXPECT_FALSE(ran.count("translate-train"));
  EXPECT_FALSE(ran.count("translate"));

  // A changed setting reruns the stages it configures.
  PipelineConfig changed = f.cfg;
  changed.inference.overlap = 0.25;
  const auto after_cfg = names(run_pipeline(changed, all()).executed);
  EXPECT_TRUE(after_cfg.count("predict"));
  EXPECT_FALSE(after_cfg.count("translate-train"));
}

TEST(Pipeline, DeletedOutputTriggersRerun) {
  Fixture f;
  run_pipeline(f.cfg, {Stage::kPreprocess});
  fs::remove(f.cfg.workdir / "preprocessed" / "src" / "src_0_crop.json");
  const PipelineResult r = run_pipeline(f.cfg, {Stage::kPreprocess});
  EXPECT_EQ(names(r.executed), (std::set<std::string>{"preprocess"}));
  EXPECT_TRUE(fs::exists(f.cfg.workdir / "preprocessed" / "src" / "src_0_crop.json"));
}

TEST(Cli, PrintConfigAndErrors) {
  int status = 0;
  const std::string yaml = run_cli("--print-config", &status);
  EXPECT_EQ(status, 0);
  EXPECT_EQ(to_json(pipeline_config_from_json(yaml_to_json(yaml))), to_json(PipelineConfig{}));

  testutil::TempDir dir;
  run_cli("evaluate --pred-dir " + (dir.path() / "nope").string() + " --gt-dir " + dir.path().string(), &status);
  EXPECT_NE(status, 0);
  run_cli("run", &status);
  EXPECT_NE(status, 0);
}

TEST(Cli, PhantomPreprocessPredictEvaluate) {
  testutil::TempDir dir;
  int status = 0;
  const std::string d = dir.path().string();
  {
    std::ofstream out(dir.path() / "c.yaml");
    out << "preprocess:\n  crop_hw: [32, 32]\n";
  }
  const std::string conf = "--config " + d + "/c.yaml ";
  run_cli("--seed 3 phantom --n 2 --domain tgt --shape 8 24 24 --out " + d + "/raw", &status);
  ASSERT_EQ(status, 0);
  EXPECT_EQ(list_cases(dir.path() / "raw").size(), 2U);
  EXPECT_TRUE(fs::exists(dir.path() / "raw" / "gt" / "tgt_0_seg.nii.gz"));
  run_cli(conf + "preprocess --in-dir " + d + "/raw --out-dir " + d + "/pre", &status);
  ASSERT_EQ(status, 0);
  EXPECT_TRUE(fs::exists(dir.path() / "pre" / "tgt_0_crop.json"));

  SegConfig sc;
  sc.patch_size = {8, 32, 32};
  sc.base_width = 4;
  sc.depth = 2;
  Segmenter(sc, 1).save(dir.path() / "m.pt");
  run_cli(conf + "predict --ckpts " + d + "/m.pt," + d + "/m.pt --in-dir " + d + "/pre --out-dir " + d + "/pred", &status);
  ASSERT_EQ(status, 0);
  const LabelMap pred = load_label_map(prediction_path(dir.path() / "pred", "tgt_0"));
  EXPECT_TRUE(same_geometry(pred, load_volume(volume_path(dir.path() / "raw", "tgt_0")), 1e-5));
  const std::string report = run_cli("evaluate --pred-dir " + d + "/pred --gt-dir " + d + "/raw/gt --out " + d + "/r.txt", &status);
  EXPECT_EQ(status, 0);
  EXPECT_NE(report.find("tgt_1"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir.path() / "r.txt"));
}
