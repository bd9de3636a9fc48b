#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "unpairseg/errors.hpp"
#include "unpairseg/inference.hpp"
#include "unpairseg/log.hpp"
#include "unpairseg/metrics.hpp"
#include "unpairseg/nifti_io.hpp"
#include "unpairseg/phantom.hpp"
#include "unpairseg/pipeline.hpp"
#include "unpairseg/preprocess.hpp"
#include "unpairseg/segmenter.hpp"
#include "unpairseg/self_training.hpp"
#include "unpairseg/translators.hpp"

namespace fs = std::filesystem;
using namespace unpairseg;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string log_level = "info";
};

PipelineConfig base_config(const Globals& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_folds(const std::string& s) {
  if (s == "all") return {-1};
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(std::stoi(item));
  return out;
}

std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UnwritablePathError(path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unpaired cross-modality segmentation: translation, 3D segmentation and self-training"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global random seed");
  app.add_option("--config", g.config, "YAML configuration file");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or off");
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the full default configuration and exit");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Write synthetic labelled phantoms");
  fs::path ph_out;
  int ph_n = 20;
  std::string ph_domain = "src";
  std::vector<std::int64_t> ph_shape{32, 64, 64};
  std::vector<double> ph_spacing{1.5, 0.41, 0.41};
  std::string ph_orientation = "LPS";
  phantom->add_option("--out", ph_out, "Output directory")->required();
  phantom->add_option("--n", ph_n, "Number of cases");
  phantom->add_option("--domain", ph_domain, "src or tgt")->check(CLI::IsMember({"src", "tgt", "source", "target"}));
  phantom->add_option("--shape", ph_shape, "slices rows cols")->expected(3);
  phantom->add_option("--spacing", ph_spacing, "Voxel spacing in mm (slice row col)")->expected(3);
  phantom->add_option("--orientation", ph_orientation, "Three-letter orientation code");

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "Reorient, resample, scale and crop a case directory");
  fs::path prep_in, prep_out;
  prep->add_option("--in-dir", prep_in)->required();
  prep->add_option("--out-dir", prep_out)->required();

  // train-translate
  auto* ttrain = app.add_subcommand("train-translate", "Train a source-to-target translator");
  fs::path tt_src, tt_tgt, tt_out;
  std::string tt_style = "wcut";
  std::optional<int> tt_epochs;
  ttrain->add_option("--src-dir", tt_src, "Preprocessed labelled source cases")->required();
  ttrain->add_option("--tgt-dir", tt_tgt, "Preprocessed target cases")->required();
  ttrain->add_option("--style", tt_style)->check(CLI::IsMember({"wcut", "cyclegan", "cut"}));
  ttrain->add_option("--epochs", tt_epochs);
  ttrain->add_option("--out", tt_out, "Checkpoint directory (or a .pt file path)")->required();

  // translate
  auto* trans = app.add_subcommand("translate", "Translate source volumes with a trained translator");
  fs::path tr_ckpt, tr_in, tr_out;
  trans->add_option("--ckpt", tr_ckpt)->required();
  trans->add_option("--in-dir", tr_in)->required();
  trans->add_option("--out-dir", tr_out)->required();

  // train-seg
  auto* tseg = app.add_subcommand("train-seg", "Train 3D segmenters on labelled volumes");
  fs::path ts_data, ts_out;
  std::optional<int> ts_folds, ts_epochs;
  std::string ts_train_folds;
  tseg->add_option("--data-dir", ts_data)->required();
  tseg->add_option("--folds", ts_folds, "Number of cross-validation folds");
  tseg->add_option("--train-folds", ts_train_folds, "Comma-separated fold ids to train, or 'all' for one model on every case");
  tseg->add_option("--epochs", ts_epochs);
  tseg->add_option("--out", ts_out, "Checkpoint directory")->required();

  // self-train
  auto* strain = app.add_subcommand("self-train", "Iterative pseudo-label self-training");
  fs::path st_fake, st_real, st_out, st_val;
  std::optional<int> st_rounds;
  strain->add_option("--fake-dir", st_fake)->required();
  strain->add_option("--real-dir", st_real)->required();
  strain->add_option("--rounds", st_rounds);
  strain->add_option("--val-dir", st_val, "Labelled cases scored after every round");
  strain->add_option("--out", st_out, "Run directory")->required();

  // predict
  auto* pred = app.add_subcommand("predict", "Sliding-window ensemble prediction");
  std::string pr_ckpts;
  fs::path pr_in, pr_out;
  std::optional<double> pr_overlap;
  std::string pr_blend;
  bool pr_flip = false, pr_no_record = false;
  pred->add_option("--ckpts", pr_ckpts, "Comma-separated checkpoint files")->required();
  pred->add_option("--in-dir", pr_in)->required();
  pred->add_option("--out-dir", pr_out)->required();
  pred->add_option("--overlap", pr_overlap);
  pred->add_option("--blend", pr_blend)->check(CLI::IsMember({"gaussian", "uniform"}));
  pred->add_flag("--flip-tta", pr_flip);
  pred->add_flag("--no-crop-record", pr_no_record, "Write labels on the input grid instead of the original geometry");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Dice and ASSD of predictions against ground truth");
  fs::path ev_pred, ev_gt, ev_out;
  eval->add_option("--pred-dir", ev_pred)->required();
  eval->add_option("--gt-dir", ev_gt)->required();
  eval->add_option("--out", ev_out, "Also write the report to this file");

  // run
  auto* run = app.add_subcommand("run", "Run pipeline stages with manifest-based resumption");
  std::string run_stages = "all";
  fs::path run_workdir;
  run->add_option("--stages", run_stages, "Comma-separated stages or 'all'");
  run->add_option("--workdir", run_workdir, "Override paths.workdir");

  CLI11_PARSE(app, argc, argv);
  try {
    log::set_level(g.log_level);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }

  if (print_config) {
    std::cout << default_config_yaml();
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return 2;
  }

  try {
    PipelineConfig cfg = base_config(g);

    if (phantom->parsed()) {
      PhantomConfig pc;
      pc.shape = {ph_shape[0], ph_shape[1], ph_shape[2]};
      pc.n_cases = ph_n;
      pc.seed = cfg.seed;
      pc.domain = ph_domain == "tgt" || ph_domain == "target" ? Domain::kTarget : Domain::kSource;
      pc.spacing_mm = {ph_spacing[0], ph_spacing[1], ph_spacing[2]};
      pc.orientation = ph_orientation;
      const fs::path label_dir = pc.domain == Domain::kTarget ? ph_out / "gt" : ph_out;
      fs::create_directories(label_dir);
      for (const auto& c : generate_phantoms(pc)) {
        save_volume(c.volume, volume_path(ph_out, c.case_id));
        save_label_map(c.labels, label_path(label_dir, c.case_id));
      }
      log::info("wrote ", ph_n, " ", ph_domain, " phantoms to ", ph_out.string());
    } else if (prep->parsed()) {
      fs::create_directories(prep_out);
      for (const auto& [v, l] : load_cases(prep_in)) {
        const PreprocessedCase pc = preprocess_case(v, l, cfg.preprocess);
        save_volume(pc.volume, volume_path(prep_out, v.source_id));
        if (pc.labels) save_label_map(*pc.labels, label_path(prep_out, v.source_id));
        save_crop_record(pc.record, crop_path(prep_out, v.source_id));
      }
    } else if (ttrain->parsed()) {
      TranslatorBundle bundle = make_translator(parse_style(tt_style), cfg.translator, cfg.seed);
      TrainSchedule sched = cfg.translate_schedule;
      sched.seed = cfg.seed;
      if (tt_epochs) sched.epochs = *tt_epochs;
      const int ch = bundle.gen_spec.in_channels;
      const auto history = train_translator(bundle, make_slice_dataset(load_cases(tt_src), ch),
                                            make_slice_dataset(load_cases(tt_tgt), ch), sched);
      if (tt_out.extension() != ".pt") tt_out = tt_out / (tt_style + ".pt");
      if (tt_out.has_parent_path()) fs::create_directories(tt_out.parent_path());
      bundle.save(tt_out);
      for (std::size_t e = 0; e < history.epochs.size(); ++e) {
        const auto& h = history.epochs[e];
        log::info("epoch ", e + 1, ": G ", fixed4(h.generator), " D ", fixed4(h.discriminator), " contrast ",
                  fixed4(h.contrast), " seg ", fixed4(h.segmentation));
      }
    } else if (trans->parsed()) {
      TranslatorBundle bundle = TranslatorBundle::load(tr_ckpt);
      fs::create_directories(tr_out);
      for (const auto& [v, l] : load_cases(tr_in)) {
        Volume out = translate_volume(bundle, v);
        save_volume(out, volume_path(tr_out, v.source_id));
        if (l) save_label_map(*l, label_path(tr_out, v.source_id));
      }
    } else if (tseg->parsed()) {
      SegConfig seg = cfg.seg;
      if (ts_folds) seg.folds = *ts_folds;
      SegSchedule sched = cfg.seg_schedule;
      sched.seed = cfg.seed;
      if (ts_epochs) sched.epochs = *ts_epochs;
      const std::vector<int> folds = ts_train_folds.empty() ? cfg.folds : parse_folds(ts_train_folds);
      const auto cases = load_labeled_cases(ts_data);
      fs::create_directories(ts_out);
      const auto splits = folds == std::vector<int>{-1} ? std::vector<FoldSplit>{}
                                                        : split_folds(cases.size(), seg.folds, sched.seed);
      for (int f : folds) {
        if (f >= seg.folds) throw InvalidConfigError("fold id out of range");
        std::vector<LabeledCase> train, val;
        if (f < 0) {
          train = cases;
        } else {
          for (auto i : splits[static_cast<std::size_t>(f)].train) train.push_back(cases[i]);
          for (auto i : splits[static_cast<std::size_t>(f)].val) val.push_back(cases[i]);
        }
        SegSchedule fs_sched = sched;
        fs_sched.seed = sched.seed + static_cast<std::uint64_t>(f + 1);
        Segmenter model(seg, fs_sched.seed, f);
        const auto history = train_segmenter(model, train, fs_sched, val.empty() ? nullptr : &val);
        const fs::path path = ts_out / (f < 0 ? std::string("all.pt") : "fold_" + std::to_string(f) + ".pt");
        model.save(path);
        log::info("fold ", f, ": final loss ", fixed4(history.epoch_loss.empty() ? 0.0 : history.epoch_loss.back()),
                  ", saved ", path.string());
      }
    } else if (strain->parsed()) {
      SelfTrainConfig st;
      st.rounds = st_rounds.value_or(cfg.self_train_rounds);
      st.seg = cfg.seg;
      st.sched = cfg.seg_schedule;
      st.sched.seed = cfg.seed;
      st.folds = cfg.folds;
      st.inference = cfg.inference;
      st.confidence_threshold = cfg.confidence_threshold;
      st.out_dir = st_out;
      std::vector<LabeledCase> val;
      if (!st_val.empty()) val = load_labeled_cases(st_val);
      const auto state = self_train(load_labeled_cases(st_fake), load_volumes(st_real), st, val.empty() ? nullptr : &val);
      for (const auto& r : state.reports) {
        log::info("round ", r.round, ": ", r.train_size, " training cases", r.resumed ? " (resumed)" : "",
                  r.val_dice ? ", validation Dice " + fixed4(*r.val_dice) : std::string());
      }
    } else if (pred->parsed()) {
      InferenceConfig ic = cfg.inference;
      if (pr_overlap) ic.overlap = *pr_overlap;
      if (!pr_blend.empty()) ic.blend = pr_blend == "uniform" ? Blend::kUniform : Blend::kGaussian;
      if (pr_flip) ic.flip_tta = true;
      std::vector<std::shared_ptr<SegmentationModel>> models;
      for (const auto& p : split_list(pr_ckpts)) models.push_back(Segmenter::load(p));
      fs::create_directories(pr_out);
      for (const auto& id : list_cases(pr_in)) {
        Volume v = load_volume(volume_path(pr_in, id));
        v.source_id = id;
        const ProbabilityMap probs = predict_volume(models, v, ic);
        std::optional<CropRecord> record;
        if (pr_no_record) {
          record = CropRecord::identity(v);
        } else if (fs::exists(crop_path(pr_in, id))) {
          record = load_crop_record(crop_path(pr_in, id));
        }
        save_label_map(finalize_labels(probs, record), prediction_path(pr_out, id));
      }
    } else if (eval->parsed()) {
      std::vector<RegionReport> reports;
      for (const auto& entry : fs::directory_iterator(ev_pred)) {
        const std::string name = entry.path().filename().string();
        const std::string suffix = "_pred.nii.gz";
        if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
        const std::string id = name.substr(0, name.size() - suffix.size());
        LabelMap gt = load_label_map(label_path(ev_gt, id));
        gt.source_id = id;
        reports.push_back(evaluate_case(load_label_map(entry.path()), gt));
      }
      std::sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
      const std::string text = format_report(reports);
      std::cout << text;
      if (!ev_out.empty()) write_text(ev_out, text);
    } else if (run->parsed()) {
      if (g.config.empty()) throw InvalidConfigError("run needs --config");
      if (!run_workdir.empty()) cfg.workdir = run_workdir;
      const auto result = run_pipeline(cfg, parse_stages(run_stages));
      for (Stage s : result.executed) std::cout << "ran " << stage_name(s) << '\n';
      for (Stage s : result.skipped) std::cout << "up to date " << stage_name(s) << '\n';
    }
  } catch (const DivergenceError& e) {
    log::error(e.what(), " (snapshot: ", e.snapshot_path, ")");
    return 1;
  } catch (const Error& e) {
    log::error(e.what());
    return 1;
  } catch (const std::exception& e) {
    log::error("unexpected failure: ", e.what());
    return 1;
  }
  return 0;
}
