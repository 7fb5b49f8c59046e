#include "ichseg/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ichseg/cam.hpp"
#include "ichseg/classifier.hpp"
#include "ichseg/hash.hpp"
#include "ichseg/log.hpp"
#include "ichseg/nifti.hpp"
#include "ichseg/overlay.hpp"
#include "ichseg/pseudolabel.hpp"
#include "ichseg/segmenter.hpp"
#include "ichseg/volume_io.hpp"

namespace ichseg::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string stage_name(StageId s) {
  switch (s) {
    case StageId::kPreprocess: return "preprocess";
    case StageId::kClassifier: return "classifier";
    case StageId::kSequence: return "sequence";
    case StageId::kCam: return "cam";
    case StageId::kPseudolabels: return "pseudolabels";
    case StageId::kUnet: return "unet";
    case StageId::kPredict: return "predict";
    case StageId::kEvaluate: return "evaluate";
    case StageId::kOverlays: return "overlays";
  }
  return "?";
}

std::vector<StageId> stages_for(const RunConfig& c) {
  std::vector<StageId> s{StageId::kPreprocess, StageId::kClassifier};
  if (uses_lstm(c.variant)) s.push_back(StageId::kSequence);
  for (StageId t : {StageId::kCam, StageId::kPseudolabels, StageId::kUnet, StageId::kPredict, StageId::kEvaluate})
    s.push_back(t);
  if (c.save_overlays) s.push_back(StageId::kOverlays);
  return s;
}

std::vector<std::string> cohort_ids(const fs::path& data_dir) {
  const fs::path dir = data_dir / "volumes";
  if (!fs::is_directory(dir)) throw Error(dir.string() + ": volume directory does not exist");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && (name.ends_with(".nii") || name.ends_with(".nii.gz")))
      ids.push_back(volume_id_from_path(e.path()));
  }
  if (ids.empty()) throw Error(dir.string() + ": no NIfTI volumes found");
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

fs::path nifti_in(const fs::path& dir, const std::string& id) {
  for (const char* ext : {".nii.gz", ".nii"})
    if (fs::exists(dir / (id + ext))) return dir / (id + ext);
  return {};
}

}  // namespace

std::map<std::string, BinaryMask> load_mask_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(dir.string() + ": mask directory does not exist");
  std::map<std::string, BinaryMask> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (!e.is_regular_file() || !(name.ends_with(".nii") || name.ends_with(".nii.gz"))) continue;
    BinaryMask m = load_mask(e.path());
    out.emplace(volume_id_from_path(e.path()), std::move(m));
  }
  return out;
}

metrics::MetricsReport evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir,
                                     const metrics::ReportConfig& config, const fs::path& out_dir) {
  const auto preds = load_mask_dir(pred_dir);
  if (preds.empty()) throw Error(pred_dir.string() + ": no predicted masks found");
  std::map<std::string, BinaryMask> gts;
  for (const auto& [id, mask] : preds) {
    const fs::path gt = nifti_in(gt_dir, id);
    if (gt.empty()) throw Error("no ground-truth mask for volume '" + id + "' in " + gt_dir.string());
    gts.emplace(id, load_mask(gt));
  }
  const auto r = metrics::report(preds, gts, config);
  fs::create_directories(out_dir);
  metrics::write_report(r, out_dir / "metrics.json", out_dir / "metrics.csv");
  return r;
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return seed * 1000003ull + tag; }

class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST)
        throw Error("run directory " + dir.string() + " is locked by another run (delete " + path_.string() +
                    " if no run is active)");
      throw Error(path_.string() + ": cannot create lock file: " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(p.string() + ": cannot read");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(tmp.string() + ": cannot write");
    out << text;
  }
  fs::rename(tmp, p);
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// Rewrites only when the content differs, so a resumed run leaves the file alone.
void write_if_changed(const fs::path& p, const std::string& text) {
  if (fs::exists(p)) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() == text) return;
  }
  write_text(p, text);
}

std::map<std::string, std::string> hash_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

json config_entries(const std::string& canon) {
  json j = json::object();
  std::istringstream in(canon);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

class Runner {
 public:
  Runner(const RunConfig& cfg, const RunOptions& opt) : cfg_(cfg), opt_(opt), run_(cfg.work_dir) {}

  RunResult run() {
    cfg_.validate();
    fs::create_directories(run_);
    RunLock lock(run_);
    for (const auto& e : fs::directory_iterator(run_))
      if (e.is_directory() && e.path().filename().string().ends_with(".tmp")) fs::remove_all(e.path());
    RunResult result{run_, {}};
    const auto stages = stages_for(cfg_);
    if (opt_.only && std::find(stages.begin(), stages.end(), *opt_.only) == stages.end())
      throw Error("stage " + stage_name(*opt_.only) + " is not part of variant " + to_string(cfg_.variant));
    json run_manifest{{"variant", to_string(cfg_.variant)}, {"stages", json::array()}};
    for (StageId s : stages) {
      StageOutcome o = (opt_.only && s != *opt_.only) ? require(s) : ensure(s);
      run_manifest["stages"].push_back({{"stage", stage_name(s)}, {"fingerprint", o.fingerprint}});
      result.stages.push_back(o);
      if (opt_.only && s == *opt_.only) break;
    }
    // Written last so a refused or failed run leaves the previous record intact.
    if (!opt_.only) {
      save_config(cfg_, run_ / "config.ini.new");
      std::ifstream in(run_ / "config.ini.new");
      std::stringstream ss;
      ss << in.rdbuf();
      in.close();
      fs::remove(run_ / "config.ini.new");
      write_if_changed(run_ / "config.ini", ss.str());
      write_if_changed(run_ / "run.json", run_manifest.dump(2) + "\n");
    }
    return result;
  }

 private:
  // ------------------------------------------------------------ plumbing

  fs::path dir(StageId s) const { return run_ / stage_name(s); }

  StageId cam_model_stage() const { return uses_lstm(cfg_.variant) ? StageId::kSequence : StageId::kClassifier; }
  fs::path cam_model_path() const {
    return uses_lstm(cfg_.variant) ? dir(StageId::kSequence) / "final.ckpt" : dir(StageId::kClassifier) / "backbone.ckpt";
  }

  std::vector<StageId> deps(StageId s) const {
    switch (s) {
      case StageId::kPreprocess: return {};
      case StageId::kClassifier: return {StageId::kPreprocess};
      case StageId::kSequence: return {StageId::kPreprocess, StageId::kClassifier};
      case StageId::kCam: return {StageId::kPreprocess, cam_model_stage()};
      case StageId::kPseudolabels: return {StageId::kPreprocess, cam_model_stage(), StageId::kCam};
      case StageId::kUnet: return {StageId::kPreprocess, StageId::kPseudolabels};
      case StageId::kPredict: return {StageId::kPreprocess, StageId::kUnet};
      case StageId::kEvaluate: return {StageId::kPreprocess, StageId::kPredict};
      case StageId::kOverlays: return {StageId::kPreprocess, StageId::kCam, StageId::kPseudolabels, StageId::kPredict};
    }
    return {};
  }

  std::string settings(StageId s) const {
    switch (s) {
      case StageId::kPreprocess:
        return canonical(cfg_, {"preprocess", "pipeline.seed", "pipeline.fold_count", "pipeline.fold"});
      case StageId::kClassifier: return canonical(cfg_, {"classifier", "pipeline.seed"});
      case StageId::kSequence: return canonical(cfg_, {"sequence", "finalize", "pipeline.seed"});
      case StageId::kCam: return canonical(cfg_, {"cam"});
      case StageId::kPseudolabels:
        return uses_kmeans(cfg_.variant)
                   ? "mode=kmeans\n" + canonical(cfg_, {"cam.threshold", "cluster", "pipeline.seed"})
                   : "mode=threshold\n" + canonical(cfg_, {"cam.threshold"});
      case StageId::kUnet:
        return canonical(cfg_, {"unet.depth", "unet.base_channels", "unet.patch_x", "unet.patch_y", "unet.patch_z",
                                "unet.epsilon", "unet.learning_rate", "unet.batch_size", "unet.max_epochs",
                                "unet.patience", "unet.patches_per_epoch", "unet.val_patches_per_volume",
                                "pipeline.seed"});
      case StageId::kPredict:
        return canonical(cfg_, {"preprocess", "unet.patch_overlap", "unet.threshold", "unet.min_component_size",
                                "unet.air_hu"});
      case StageId::kEvaluate: return canonical(cfg_, {"metrics", "unet.threshold"});
      case StageId::kOverlays: return canonical(cfg_, {"pipeline.save_overlays"});
    }
    return {};
  }

  std::map<std::string, std::string> inputs(StageId s) const {
    std::map<std::string, std::string> in;
    if (s == StageId::kPreprocess) {
      for (const auto& id : cohort_ids(cfg_.data_dir)) {
        for (const char* sub : {"volumes", "masks"}) {
          const fs::path p = nifti_in(cfg_.data_dir / sub, id);
          if (p.empty()) throw Error("volume '" + id + "' has no file in " + (cfg_.data_dir / sub).string());
          in[std::string("data/") + sub + "/" + p.filename().string()] = sha256_file(p);
        }
      }
    }
    for (StageId d : deps(s)) {
      const json m = read_json(dir(d) / "manifest.json");
      for (const auto& [rel, h] : m.at("outputs").items()) in[stage_name(d) + "/" + rel] = h.get<std::string>();
    }
    return in;
  }

  std::string fingerprint(StageId s, const std::string& set, const std::map<std::string, std::string>& in) const {
    std::string text = "stage=" + stage_name(s) + "\n" + set + "inputs:\n";
    for (const auto& [rel, h] : in) text += rel + " " + h + "\n";
    return sha256_hex(text);
  }

  /// Upstream stage for a single-stage run: must exist and match the config.
  StageOutcome require(StageId s) {
    const fs::path mpath = dir(s) / "manifest.json";
    if (!fs::exists(mpath))
      throw Error("stage " + stage_name(s) + " has not been run in " + run_.string() + "; run it first");
    const std::string set = settings(s);
    const std::string fp = fingerprint(s, set, inputs(s));
    if (read_json(mpath).value("fingerprint", "") != fp)
      throw Error("stage " + stage_name(s) + " in " + run_.string() +
                  " was produced with a different configuration or inputs; rerun it first");
    return {s, true, fp, 0.0};
  }

  StageOutcome ensure(StageId s) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string name = stage_name(s);
    const std::string set = settings(s);
    const auto in = inputs(s);
    const std::string fp = fingerprint(s, set, in);
    const fs::path final_dir = dir(s);
    const fs::path mpath = final_dir / "manifest.json";
    if (fs::exists(mpath)) {
      const json m = read_json(mpath);
      if (m.value("fingerprint", "") == fp) {
        std::map<std::string, std::string> recorded;
        for (const auto& [rel, h] : m.at("outputs").items()) recorded[rel] = h.get<std::string>();
        if (hash_tree(final_dir) == recorded) {
          log::info("stage " + name + ": up to date, skipped");
          return {s, true, fp, 0.0};
        }
        log::warn("stage " + name + ": outputs differ from the manifest, rerunning");
      } else if (!opt_.force) {
        throw Error("stage " + name + ": existing outputs in " + final_dir.string() +
                    " were produced with a different configuration or inputs; use --force to replace them");
      }
    }
    const fs::path tmp = final_dir.string() + ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    log::info("stage " + name + ": running");
    try {
      body(s, tmp);
    } catch (const std::exception& e) {
      std::error_code ec;
      fs::remove_all(tmp, ec);
      throw Error("stage " + name + " failed: " + e.what());
    }
    json manifest{{"stage", name},
                  {"fingerprint", fp},
                  {"variant", to_string(cfg_.variant)},
                  {"config", config_entries(set)},
                  {"inputs", in},
                  {"outputs", hash_tree(tmp)}};
    write_json(tmp / "manifest.json", manifest);
    fs::remove_all(final_dir);
    fs::rename(tmp, final_dir);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log::info("stage " + name + ": done in " + std::to_string(secs) + " s");
    return {s, false, fp, secs};
  }

  // ---------------------------------------------------------- artifacts

  DatasetSplit split() const {
    const auto splits = read_split_manifest(dir(StageId::kPreprocess) / "splits.json");
    if (cfg_.fold >= static_cast<int>(splits.size())) throw Error("fold index exceeds the split manifest");
    return splits[static_cast<std::size_t>(cfg_.fold)];
  }

  std::vector<std::string> val_ids(const DatasetSplit& sp) const {
    if (!sp.val_ids.empty()) return sp.val_ids;
    log::warn("validation split is empty; training volumes double as validation");
    return sp.train_ids;
  }

  fs::path pre(const std::string& id, const char* what) const {
    return dir(StageId::kPreprocess) / id / (std::string(what) + ".nii.gz");
  }

  classifier::LabeledStack labeled(const std::string& id) const {
    const CTVolume stripped = load_volume(pre(id, "stripped"));
    const BrainMask brain = load_mask(pre(id, "brain"));
    const json labels = read_json(dir(StageId::kPreprocess) / "labels.json");
    SliceLabelSet l{id, labels.at(id).get<std::vector<std::uint8_t>>()};
    return {classifier_input(stripped, brain, default_windows()), std::move(l)};
  }

  classifier::SliceDataset dataset(const std::vector<std::string>& ids) const {
    classifier::SliceDataset ds;
    for (const auto& id : ids) ds.push_back(labeled(id));
    return ds;
  }

  // -------------------------------------------------------------- stages

  void body(StageId s, const fs::path& out) {
    switch (s) {
      case StageId::kPreprocess: return run_preprocess(out);
      case StageId::kClassifier: return run_classifier(out);
      case StageId::kSequence: return run_sequence(out);
      case StageId::kCam: return run_cam(out);
      case StageId::kPseudolabels: return run_pseudolabels(out);
      case StageId::kUnet: return run_unet(out);
      case StageId::kPredict: return run_predict(out);
      case StageId::kEvaluate: return run_evaluate(out);
      case StageId::kOverlays: return run_overlays(out);
    }
  }

  void run_preprocess(const fs::path& out) {
    const auto ids = cohort_ids(cfg_.data_dir);
    write_split_manifest(make_splits(ids, cfg_.fold_count, cfg_.seed), cfg_.seed, out / "splits.json");
    json labels = json::object(), warnings = json::object();
    for (const auto& id : ids) {
      const CTVolume raw = load_volume(nifti_in(cfg_.data_dir / "volumes", id));
      const BinaryMask truth = load_mask(nifti_in(cfg_.data_dir / "masks", id));
      if (!(truth.dims() == raw.dims())) throw Error("mask of volume '" + id + "' does not match the volume grid");
      const Preprocessed p = preprocess_volume(raw, cfg_.preprocess);
      fs::create_directories(out / id);
      save_volume(p.strip.stripped, out / id / "stripped.nii.gz");
      save_mask(p.strip.brain, out / id / "brain.nii.gz");
      save_volume(p.equalized, out / id / "equalized.nii.gz");
      labels[id] = derive_slice_labels(truth, cfg_.label_min_voxels).labels;
      if (!p.strip.warnings.empty()) warnings[id] = p.strip.warnings;
    }
    write_json(out / "labels.json", labels);
    write_json(out / "warnings.json", warnings);
  }

  void run_classifier(const fs::path& out) {
    const DatasetSplit sp = split();
    classifier::TrainConfig tc = cfg_.classifier_train;
    tc.seed = derive_seed(cfg_.seed, 1);
    classifier::TrainLog tlog;
    const auto model = classifier::train_backbone(dataset(sp.train_ids), dataset(val_ids(sp)), cfg_.backbone, tc, &tlog);
    model.save(out / "backbone.ckpt");
    tlog.write_csv(out / "train_log.csv");
  }

  void run_sequence(const fs::path& out) {
    const DatasetSplit sp = split();
    const auto train = dataset(sp.train_ids);
    auto model = classifier::ClassifierModel::load(dir(StageId::kClassifier) / "backbone.ckpt");
    model = classifier::attach_sequence_head(std::move(model), cfg_.sequence, derive_seed(cfg_.seed, 2));
    classifier::TrainConfig tc = cfg_.sequence_train;
    tc.seed = derive_seed(cfg_.seed, 3);
    classifier::TrainLog tlog;
    model = classifier::train_sequence(std::move(model), train, dataset(val_ids(sp)), tc, &tlog);
    model.save(out / "sequence.ckpt");
    tlog.write_csv(out / "train_log.csv");
    model = classifier::finalize(std::move(model), train, cfg_.finalize);
    model.save(out / "final.ckpt");
  }

  void run_cam(const fs::path& out) {
    const auto model = classifier::ClassifierModel::load(cam_model_path());
    for (const auto& id : cohort_ids(cfg_.data_dir)) {
      const CTVolume eq = load_volume(pre(id, "equalized"));
      const auto c = cam::assemble_cam(model, labeled(id).stack, eq, cfg_.cam);
      save_volume(CTVolume{id, c.saliency, c.spacing, c.meta}, out / (id + ".nii.gz"));
    }
  }

  void run_pseudolabels(const fs::path& out) {
    const DatasetSplit sp = split();
    std::vector<std::string> ids = sp.train_ids;
    ids.insert(ids.end(), sp.val_ids.begin(), sp.val_ids.end());
    const auto model = classifier::ClassifierModel::load(cam_model_path());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::string& id = ids[i];
      const CTVolume saliency = load_volume(dir(StageId::kCam) / (id + ".nii.gz"));
      const cam::CAMVolume c{id, saliency.voxels, saliency.spacing, saliency.meta};
      BinaryMask region = cam::threshold_cam(c, cfg_.cam.threshold);
      region.id = id;
      json side{{"volume_id", id}, {"region_voxels", region.count()}};
      BinaryMask mask = region;
      if (!uses_kmeans(cfg_.variant)) {
        side["mode"] = "threshold";
      } else if (region.count() < static_cast<std::size_t>(std::max(cfg_.cluster.k, 1))) {
        side["mode"] = "kmeans";
        side["note"] = "CAM region smaller than k; region kept as is";
      } else {
        const CTVolume eq = load_volume(pre(id, "equalized"));
        pseudolabel::ClusterConfig cc = cfg_.cluster;
        cc.seed = derive_seed(cfg_.seed, 100 + i);
        const auto a = pseudolabel::kmeans_region(eq, region, cc);
        try {
          const auto sel = pseudolabel::differential_select(a, labeled(id).stack, model);
          mask = pseudolabel::build_pseudomask(a, sel.selected).mask;
          side = pseudolabel::sidecar(cc, a, sel);
          side["region_voxels"] = region.count();
        } catch (const Error& e) {
          mask = mask_like(region, id);
          side["note"] = std::string("no cluster selected: ") + e.what();
        }
        side["mode"] = "kmeans";
      }
      mask.id = id;
      side["pseudo_voxels"] = mask.count();
      save_mask(mask, out / (id + ".nii.gz"));
      write_json(out / (id + ".json"), side);
    }
  }

  void run_unet(const fs::path& out) {
    const DatasetSplit sp = split();
    auto load = [&](const std::vector<std::string>& ids) {
      std::vector<segmenter::TrainingVolume> v;
      for (const auto& id : ids)
        v.push_back({load_volume(pre(id, "equalized")), load_mask(dir(StageId::kPseudolabels) / (id + ".nii.gz"))});
      return v;
    };
    segmenter::SegTrainConfig tc = cfg_.unet_train;
    tc.seed = derive_seed(cfg_.seed, 4);
    segmenter::SegTrainLog tlog;
    const auto model = segmenter::train_unet(load(sp.train_ids), load(sp.val_ids), cfg_.unet, tc, &tlog);
    model.save(out / "unet.ckpt");
    tlog.write_csv(out / "train_log.csv");
  }

  void run_predict(const fs::path& out) {
    const auto model = segmenter::SegmenterModel::load(dir(StageId::kUnet) / "unet.ckpt");
    segmenter::PredictConfig pc = cfg_.predict;
    pc.patch_overlap = cfg_.unet.patch_overlap;
    fs::create_directories(out / "prob");
    fs::create_directories(out / "masks");
    for (const auto& id : split().test_ids) {
      const CTVolume raw = load_volume(nifti_in(cfg_.data_dir / "volumes", id));
      const auto seg = segmenter::predict_volume(model, raw, cfg_.preprocess, pc);
      save_volume(CTVolume{id, seg.probabilities, raw.spacing, raw.meta}, out / "prob" / (id + ".nii.gz"));
      BinaryMask m = seg.binarized;
      m.id = id;
      save_mask(m, out / "masks" / (id + ".nii.gz"));
    }
  }

  void run_evaluate(const fs::path& out) {
    metrics::ReportConfig rc;
    rc.tolerance_mm = cfg_.tolerance_mm;
    rc.threshold = cfg_.predict.threshold;
    evaluate_dirs(dir(StageId::kPredict) / "masks", cfg_.data_dir / "masks", rc, out);
  }

  void run_overlays(const fs::path& out) {
    for (const auto& id : cohort_ids(cfg_.data_dir)) {
      const CTVolume eq = load_volume(pre(id, "equalized"));
      const BinaryMask truth = load_mask(nifti_in(cfg_.data_dir / "masks", id));
      std::optional<CTVolume> c;
      std::optional<BinaryMask> pseudo, pred;
      if (const fs::path p = dir(StageId::kCam) / (id + ".nii.gz"); fs::exists(p)) c = load_volume(p);
      if (const fs::path p = dir(StageId::kPseudolabels) / (id + ".nii.gz"); fs::exists(p)) pseudo = load_mask(p);
      if (const fs::path p = dir(StageId::kPredict) / "masks" / (id + ".nii.gz"); fs::exists(p)) pred = load_mask(p);
      overlay::Panels panels;
      panels.image = &eq;
      panels.cam = c ? &c->voxels : nullptr;
      panels.pseudo = pseudo ? &*pseudo : nullptr;
      panels.prediction = pred ? &*pred : nullptr;
      panels.truth = &truth;
      overlay::write_slices(panels, out / id);
    }
  }

  RunConfig cfg_;
  RunOptions opt_;
  fs::path run_;
};

}  // namespace

RunResult run_pipeline(const RunConfig& config, const RunOptions& options) { return Runner(config, options).run(); }

}  // namespace ichseg::pipeline
