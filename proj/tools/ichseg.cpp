// Command-line front end: one subcommand per pipeline stage plus phantom
// generation, ad-hoc prediction/evaluation and the full run.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ichseg/config.hpp"
#include "ichseg/log.hpp"
#include "ichseg/nifti.hpp"
#include "ichseg/phantom.hpp"
#include "ichseg/pipeline.hpp"
#include "ichseg/segmenter.hpp"

#include <boost/property_tree/ini_parser.hpp>

namespace fs = std::filesystem;
using namespace ichseg;

namespace {

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (char& c : s)
    if (c == '.' || c == '_') c = '-';
  return s;
}

void print_summary(const pipeline::RunResult& r) {
  for (const auto& s : r.stages)
    std::cout << pipeline::stage_name(s.stage) << (s.skipped ? "  skipped" : "  ran") << "  "
              << s.fingerprint.substr(0, 12) << '\n';
  std::cout << "run directory: " << r.run_dir.string() << '\n';
}

int predict_files(const RunConfig& cfg, const fs::path& model_path, const fs::path& input, const fs::path& out) {
  const auto model = segmenter::SegmenterModel::load(model_path);
  segmenter::PredictConfig pc = cfg.predict;
  pc.patch_overlap = cfg.unet.patch_overlap;
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      const std::string n = e.path().filename().string();
      if (n.ends_with(".nii") || n.ends_with(".nii.gz")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  fs::create_directories(out / "prob");
  fs::create_directories(out / "masks");
  for (const auto& f : files) {
    const CTVolume raw = load_volume(f);
    const auto seg = segmenter::predict_volume(model, raw, cfg.preprocess, pc);
    const std::string id = volume_id_from_path(f);
    save_volume(CTVolume{id, seg.probabilities, raw.spacing, raw.meta}, out / "prob" / (id + ".nii.gz"));
    BinaryMask m = seg.binarized;
    m.id = id;
    save_mask(m, out / "masks" / (id + ".nii.gz"));
    std::cout << id << ": " << m.count() << " lesion voxels\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (!std::getenv("ICHSEG_LOG")) log::set_level(log::Level::kInfo);

  CLI::App app{"Weakly supervised hemorrhage segmentation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool force = false;
  bool save_overlays = false;
  app.add_option("-c,--config", config_path, "INI run configuration")->check(CLI::ExistingFile);
  app.add_flag("--force", force, "Replace stage outputs produced with a different configuration");
  app.add_flag("--save-overlays", save_overlays, "Write per-slice PNG composites (pipeline.save_overlays)");

  // Every config key is a flag: section.key -> --section-key.
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> key_options;
  const std::map<std::string, std::string> aliases{{"pipeline.variant", "--variant"},
                                                   {"pipeline.seed", "--seed"},
                                                   {"paths.data_dir", "--data-dir"},
                                                   {"paths.work_dir", "--work-dir"},
                                                   {"metrics.tolerance_mm", "--tolerance-mm"}};
  for (const auto& key : config_keys()) {
    if (key == "pipeline.save_overlays") continue;
    std::string names = "--" + flag_name(key);
    if (const auto a = aliases.find(key); a != aliases.end()) names = a->second + "," + names;
    key_options[key] = app.add_option(names, values[key], "config " + key)->group("Config overrides");
  }

  auto* gen = app.add_subcommand("gen-phantoms", "Write a synthetic phantom cohort");
  std::string gen_out;
  gen->add_option("-o,--out", gen_out, "Output directory (default: paths.data_dir)");

  struct StageCmd {
    const char* name;
    pipeline::StageId stage;
    const char* help;
  };
  const StageCmd stage_cmds[] = {
      {"preprocess", pipeline::StageId::kPreprocess, "Skull strip, equalize and split the cohort"},
      {"train-classifier", pipeline::StageId::kClassifier, "Train the slice classifier backbone"},
      {"finetune-lstm", pipeline::StageId::kSequence, "Train the sequence head, then restore the FC head"},
      {"extract-cam", pipeline::StageId::kCam, "Compute class activation maps"},
      {"gen-pseudolabels", pipeline::StageId::kPseudolabels, "Build pseudo-lesion masks from the CAMs"},
      {"train-unet", pipeline::StageId::kUnet, "Train the segmenter on pseudo-masks"},
  };
  std::map<CLI::App*, pipeline::StageId> stage_of;
  for (const auto& s : stage_cmds) stage_of[app.add_subcommand(s.name, s.help)] = s.stage;

  auto* predict = app.add_subcommand("predict", "Segment test volumes (pipeline stage, or files with --input)");
  std::string model_path, input_path, predict_out;
  predict->add_option("--model", model_path, "Segmenter checkpoint (default: <work_dir>/unet/unet.ckpt)");
  predict->add_option("--input", input_path, "NIfTI volume or directory of volumes");
  predict->add_option("-o,--out", predict_out, "Output directory for --input mode")->default_val("predictions");

  auto* evaluate = app.add_subcommand("evaluate", "Score masks (pipeline stage, or --pred-dir/--gt-dir)");
  std::string pred_dir, gt_dir, eval_out;
  evaluate->add_option("--pred-dir", pred_dir, "Directory of predicted masks");
  evaluate->add_option("--gt-dir", gt_dir, "Directory of ground-truth masks");
  evaluate->add_option("-o,--out", eval_out, "Report directory")->default_val(".");

  auto* run_all = app.add_subcommand("run-all", "Run every stage of the configured variant");
  auto* show = app.add_subcommand("show-config", "Print the effective configuration");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    std::map<std::string, std::string> overrides;
    for (const auto& [key, opt] : key_options)
      if (opt->count() > 0) overrides[key] = values[key];
    if (save_overlays) overrides["pipeline.save_overlays"] = "true";
    cfg = apply_overrides(cfg, overrides);

    if (show->parsed()) {
      boost::property_tree::ptree tree = to_ptree(cfg);
      boost::property_tree::ini_parser::write_ini(std::cout, tree);
      return 0;
    }
    if (gen->parsed()) {
      const fs::path out = gen_out.empty() ? cfg.data_dir : fs::path(gen_out);
      const auto ids = phantom::write_cohort(cfg.phantoms, out);
      std::cout << "wrote " << ids.size() << " phantoms to " << out.string() << '\n';
      return 0;
    }
    pipeline::RunOptions opt;
    opt.force = force;
    if (predict->parsed() && !input_path.empty()) {
      const fs::path m = model_path.empty() ? cfg.work_dir / "unet" / "unet.ckpt" : fs::path(model_path);
      return predict_files(cfg, m, input_path, predict_out);
    }
    if (evaluate->parsed() && (!pred_dir.empty() || !gt_dir.empty())) {
      if (pred_dir.empty() || gt_dir.empty()) throw Error("--pred-dir and --gt-dir must be given together");
      metrics::ReportConfig rc;
      rc.tolerance_mm = cfg.tolerance_mm;
      rc.threshold = cfg.predict.threshold;
      const auto r = pipeline::evaluate_dirs(pred_dir, gt_dir, rc, eval_out);
      std::cout << "scored " << r.per_volume.size() << " volumes; report in " << eval_out << '\n';
      if (const auto it = r.aggregate.find("dice"); it != r.aggregate.end())
        std::cout << "dice " << it->second.mean << " +- " << it->second.std << '\n';
      return 0;
    }
    if (predict->parsed()) opt.only = pipeline::StageId::kPredict;
    if (evaluate->parsed()) opt.only = pipeline::StageId::kEvaluate;
    for (const auto& [cmd, stage] : stage_of)
      if (cmd->parsed()) opt.only = stage;
    if (!run_all->parsed() && !opt.only) throw Error("no subcommand selected");
    print_summary(pipeline::run_pipeline(cfg, opt));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
