#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ichseg/config.hpp"
#include "ichseg/hash.hpp"
#include "ichseg/nifti.hpp"
#include "ichseg/overlay.hpp"
#include "ichseg/phantom.hpp"
#include "ichseg/pipeline.hpp"
#include "ichseg/volume_io.hpp"
#include "test_support.hpp"

using namespace ichseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A cohort and config small enough for a full pipeline run in seconds.
RunConfig tiny_run(const fs::path& root) {
  RunConfig c;
  c.data_dir = root / "data";
  c.work_dir = root / "work";
  c.seed = 3;
  c.phantoms.count = 10;
  c.phantoms.nx = c.phantoms.ny = 32;
  c.phantoms.nz = 8;
  c.phantoms.blob_radius_min = 5;
  c.phantoms.blob_radius_max = 7;
  c.phantoms.seed = 5;
  c.classifier_train.optimizer = nn::OptimizerKind::kAdam;
  c.classifier_train.learning_rate = 3e-3;
  c.classifier_train.batch_size = 16;
  c.classifier_train.max_epochs = 30;
  c.classifier_train.patience = 30;
  c.sequence_train.optimizer = nn::OptimizerKind::kAdam;
  c.sequence_train.batch_size = 4;
  c.sequence_train.max_epochs = 1;
  c.sequence_train.patience = 1;
  c.finalize.epochs = 5;
  c.cam.threshold = 0.3;
  c.unet.depth = 2;
  c.unet.base_channels = 2;
  c.unet.patch_x = c.unet.patch_y = 16;
  c.unet.patch_z = 8;
  c.unet_train.max_epochs = 1;
  c.unet_train.patience = 1;
  c.unet_train.patches_per_epoch = 4;
  c.unet_train.val_patches_per_volume = 1;
  return c;
}

}  // namespace

TEST_CASE("sha256 digests") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const auto dir = testing::temp_dir("hash");
  std::ofstream(dir / "f") << "abc";
  CHECK(sha256_file(dir / "f") == sha256_hex("abc"));
  CHECK_THROWS_AS(sha256_file(dir / "missing"), Error);
}

TEST_CASE("run config round trip and overrides") {
  const auto dir = testing::temp_dir("config");
  RunConfig c;
  c.variant = Variant::kResNetKmeans;
  c.cam.threshold = 0.55;
  c.unet.patch_overlap = 0.25;
  c.classifier_train.optimizer = nn::OptimizerKind::kAdam;
  save_config(c, dir / "run.ini");
  const RunConfig back = load_config(dir / "run.ini");
  CHECK(to_ptree(back) == to_ptree(c));
  CHECK(back.variant == Variant::kResNetKmeans);
  CHECK(back.cam.threshold == 0.55);

  const RunConfig o = apply_overrides(c, {{"cam.threshold", "0.8"}, {"pipeline.variant", "resnet+unet"}});
  CHECK(o.cam.threshold == 0.8);
  CHECK(o.variant == Variant::kResNet);
  CHECK_THROWS_WITH_AS(apply_overrides(c, {{"cam.thresh", "0.8"}}), doctest::Contains("unknown config key"), Error);
  CHECK_THROWS_AS(apply_overrides(c, {{"pipeline.variant", "resnet"}}), Error);
  CHECK_THROWS_AS(apply_overrides(c, {{"unet.depth", "two"}}), Error);

  std::ofstream(dir / "typo.ini") << "[cam]\nthreshhold = 0.5\n";
  CHECK_THROWS_WITH_AS(load_config(dir / "typo.ini"), doctest::Contains("cam.threshhold"), Error);

  const auto keys = config_keys();
  CHECK(std::find(keys.begin(), keys.end(), "cam.threshold") != keys.end());
  CHECK(std::find(keys.begin(), keys.end(), "pipeline.variant") != keys.end());
  CHECK(canonical(c, {"cam.threshold"}) == "cam.threshold=0.55\n");

  for (Variant v : all_variants()) CHECK(parse_variant(to_string(v)) == v);
}

TEST_CASE("shipped configs load and validate") {
  for (const char* name : {"desk.ini", "fullscale.ini"}) {
    CAPTURE(name);
    const RunConfig c = load_config(fs::path(ICHSEG_SOURCE_DIR) / "configs" / name);
    CHECK_NOTHROW(c.validate());
  }
  const RunConfig full = load_config(fs::path(ICHSEG_SOURCE_DIR) / "configs" / "fullscale.ini");
  CHECK(full.backbone.architecture_id == "resnet101");
  CHECK(full.classifier_train.optimizer == nn::OptimizerKind::kSgd);
  CHECK(full.classifier_train.momentum == 0.9);
  CHECK(full.classifier_train.batch_size == 32);
  CHECK(full.classifier_train.learning_rate == 1e-4);
  CHECK(full.sequence_train.learning_rate == 1e-3);
  CHECK(full.cam.threshold == 0.7);
  CHECK(full.cluster.k == 4);
  CHECK(full.unet_train.batch_size == 4);
  CHECK(full.unet_train.learning_rate == 1e-3);
}

TEST_CASE("phantom generation") {
  phantom::PhantomSpec spec;
  spec.nx = spec.ny = 40;
  spec.nz = 10;
  spec.persistence_min = spec.persistence_max = 3;
  spec.seed = 9;

  SUBCASE("one blob persisting three slices gives three positive slices") {
    for (std::size_t i = 0; i < 10; ++i) {
      const auto p = phantom::generate(spec, i);
      CHECK(derive_slice_labels(p.lesion).positives() == 3);
    }
  }
  SUBCASE("same seed, same volume") {
    const auto a = phantom::generate(spec, 4);
    const auto b = phantom::generate(spec, 4);
    CHECK(a.volume.voxels == b.volume.voxels);
    CHECK(a.lesion.voxels == b.lesion.voxels);
    spec.seed = 10;
    CHECK_FALSE(phantom::generate(spec, 4).volume.voxels == a.volume.voxels);
  }
  SUBCASE("the mask marks exactly the blob voxels") {
    spec.noise_sd = 0.0;
    spec.blob_hu_min = spec.blob_hu_max = 70.0;
    const auto p = phantom::generate(spec, 2);
    bool exact = true;
    for (std::size_t i = 0; i < p.volume.voxels.size(); ++i)
      exact = exact && ((p.volume.voxels[i] == 70.0f) == (p.lesion.voxels[i] == 1));
    CHECK(exact);
    CHECK(p.lesion.count() > 0);
  }
  SUBCASE("skull stripping removes the ring and keeps every lesion voxel") {
    for (std::size_t i = 0; i < 5; ++i) {
      const auto p = phantom::generate(spec, i);
      const auto s = strip_skull(p.volume, {});
      CHECK(s.warnings.empty());
      std::size_t ring_kept = 0, lesion_lost = 0;
      for (std::size_t v = 0; v < p.volume.voxels.size(); ++v) {
        ring_kept += p.volume.voxels[v] >= 1000.0f && s.brain.voxels[v];
        lesion_lost += p.lesion.voxels[v] && !s.brain.voxels[v];
      }
      CHECK(ring_kept == 0);
      CHECK(lesion_lost == 0);
    }
  }
  SUBCASE("impossible geometry is rejected") {
    spec.blob_radius_min = spec.blob_radius_max = 30.0;
    CHECK_THROWS_WITH_AS(phantom::generate(spec, 0), doctest::Contains("blob larger"), Error);
    spec.blob_radius_min = spec.blob_radius_max = 4.0;
    spec.blob_hu_min = 20.0;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec.blob_hu_min = 65.0;
    spec.persistence_min = 0;
    CHECK_THROWS_AS(spec.validate(), Error);
  }
}

TEST_CASE("png overlays") {
  const auto dir = testing::temp_dir("overlay");
  phantom::PhantomSpec spec;
  spec.nx = spec.ny = 24;
  spec.nz = 3;
  spec.persistence_min = spec.persistence_max = 2;
  spec.blob_radius_min = spec.blob_radius_max = 3.0;
  const auto p = phantom::generate(spec, 0);
  CTVolume img = p.volume;
  for (float& v : img.voxels.data()) v = std::clamp((v + 100.0f) / 200.0f, 0.0f, 1.0f);
  overlay::Panels panels;
  panels.image = &img;
  panels.truth = &p.lesion;
  panels.prediction = &p.lesion;
  CHECK(overlay::write_slices(panels, dir) == 3);
  const std::string png = slurp(dir / (img.id + "_z001.png"));
  REQUIRE(png.size() > 24);
  CHECK(png.substr(1, 3) == "PNG");
  auto be32 = [&](std::size_t at) {
    return (static_cast<unsigned>(static_cast<unsigned char>(png[at])) << 24) |
           (static_cast<unsigned>(static_cast<unsigned char>(png[at + 1])) << 16) |
           (static_cast<unsigned>(static_cast<unsigned char>(png[at + 2])) << 8) |
           static_cast<unsigned>(static_cast<unsigned char>(png[at + 3]));
  };
  CHECK(be32(16) == 4 * 24);  // IHDR width: four panels
  CHECK(be32(20) == 24);
  BinaryMask wrong{"w", Grid3<std::uint8_t>({5, 5, 3}, 0), {}, {}};
  panels.pseudo = &wrong;
  CHECK_THROWS_AS(overlay::write_slices(panels, dir), Error);
}

TEST_CASE("evaluate over mask directories") {
  const auto dir = testing::temp_dir("evaluate");
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");
  std::mt19937 rng(4);
  for (const char* id : {"a", "b"}) {
    BinaryMask g = testing::random_mask({8, 8, 4}, 0.3, rng, {1, 1, 5});
    g.id = id;
    save_mask(g, dir / "gt" / (std::string(id) + ".nii.gz"));
    save_mask(g, dir / "pred" / (std::string(id) + ".nii.gz"));
  }
  metrics::ReportConfig rc;
  rc.tolerance_mm = 2.0;
  const auto r = pipeline::evaluate_dirs(dir / "pred", dir / "gt", rc, dir / "out");
  CHECK(r.per_volume.size() == 2);
  CHECK(r.aggregate.at("dice").mean == 1.0);
  CHECK(fs::exists(dir / "out" / "metrics.json"));
  CHECK(fs::exists(dir / "out" / "metrics.csv"));
  CHECK(slurp(dir / "out" / "metrics.json").find("\"tolerance_mm\": 2.0") != std::string::npos);

  BinaryMask extra = load_mask(dir / "pred" / "a.nii.gz");
  save_mask(extra, dir / "pred" / "c.nii.gz");
  CHECK_THROWS_WITH_AS(pipeline::evaluate_dirs(dir / "pred", dir / "gt", rc, dir / "out"), doctest::Contains("'c'"),
                       Error);
}

TEST_CASE("stage lists follow the variant") {
  RunConfig c;
  using pipeline::StageId;
  c.variant = Variant::kResNet;
  auto s = pipeline::stages_for(c);
  CHECK(std::find(s.begin(), s.end(), StageId::kSequence) == s.end());
  c.variant = Variant::kResNetLstmKmeans;
  c.save_overlays = true;
  s = pipeline::stages_for(c);
  CHECK(s.size() == 9);
  CHECK(s.front() == StageId::kPreprocess);
  CHECK(s.back() == StageId::kOverlays);
}

TEST_CASE("pipeline staging: resume, refusal, force and locking") {
  const auto root = testing::temp_dir("pipeline");
  RunConfig c = tiny_run(root);
  phantom::write_cohort(c.phantoms, c.data_dir);

  const auto first = pipeline::run_pipeline(c);
  for (const auto& s : first.stages) CHECK_FALSE(s.skipped);
  CHECK(fs::exists(c.work_dir / "evaluate" / "metrics.json"));
  CHECK(fs::exists(c.work_dir / "run.json"));
  {
    const auto m = slurp(c.work_dir / "unet" / "manifest.json");
    CHECK(m.find("\"unet.learning_rate\"") != std::string::npos);
    CHECK(m.find("pseudolabels/") != std::string::npos);
  }

  const auto before = testing::snapshot(c.work_dir);
  const auto again = pipeline::run_pipeline(c);
  for (const auto& s : again.stages) CHECK(s.skipped);
  CHECK(testing::snapshot(c.work_dir) == before);

  RunConfig changed = c;
  changed.cam.threshold = 0.6;
  CHECK_THROWS_WITH_AS(pipeline::run_pipeline(changed), doctest::Contains("--force"), Error);
  CHECK(testing::snapshot(c.work_dir) == before);
  pipeline::RunOptions force;
  force.force = true;
  const auto forced = pipeline::run_pipeline(changed, force);
  CHECK(forced.stages[0].skipped);  // preprocess is unaffected by the CAM threshold
  CHECK(forced.stages[1].skipped);

  std::ofstream(c.work_dir / ".lock") << "1\n";
  CHECK_THROWS_WITH_AS(pipeline::run_pipeline(changed), doctest::Contains("locked"), Error);
  fs::remove(c.work_dir / ".lock");

  RunConfig other = tiny_run(root / "other");
  other.data_dir = c.data_dir;
  pipeline::RunOptions only;
  only.only = pipeline::StageId::kUnet;
  CHECK_THROWS_WITH_AS(pipeline::run_pipeline(other, only), doctest::Contains("has not been run"), Error);
}

TEST_CASE("all four variants run on a small cohort") {
  const auto root = testing::temp_dir("variants");
  RunConfig base = tiny_run(root);
  phantom::write_cohort(base.phantoms, base.data_dir);
  for (Variant v : all_variants()) {
    RunConfig c = base;
    c.variant = v;
    c.work_dir = root / to_string(v);
    CAPTURE(to_string(v));
    const auto r = pipeline::run_pipeline(c);
    CHECK(r.stages.size() == (uses_lstm(v) ? 8u : 7u));
    CHECK(fs::exists(c.work_dir / "evaluate" / "metrics.csv"));
  }
}

TEST_CASE("command-line front end") {
  const auto dir = testing::temp_dir("cli_exe");
  const std::string exe = ICHSEG_CLI_PATH;
  auto run = [&](const std::string& args) {
    const std::string cmd = "cd " + dir.string() + " && " + exe + " " + args + " >out.txt 2>err.txt";
    return std::system(cmd.c_str());
  };
  CHECK(run("--help") == 0);
  CHECK(run("gen-phantoms --out ph --phantoms-count 3 --phantoms-nx 24 --phantoms-ny 24 --phantoms-nz 6 "
            "--phantoms-blob-radius-min 3 --phantoms-blob-radius-max 4") == 0);
  CHECK(fs::exists(dir / "ph" / "volumes" / "phantom_002.nii.gz"));
  CHECK(run("evaluate --pred-dir ph/masks --gt-dir ph/masks --tolerance-mm 2.0 --out rep") == 0);
  CHECK(slurp(dir / "rep" / "metrics.json").find("\"tolerance_mm\": 2.0") != std::string::npos);
  fs::create_directories(dir / "gt");
  fs::copy(dir / "ph" / "masks" / "phantom_000.nii.gz", dir / "gt" / "phantom_000.nii.gz");
  CHECK(run("evaluate --pred-dir ph/masks --gt-dir gt --out rep2") != 0);
  CHECK(slurp(dir / "err.txt").find("phantom_001") != std::string::npos);
  CHECK(run("run-all --variant nonsense") != 0);
  CHECK(run("show-config --cam-threshold 0.65") == 0);
  CHECK(slurp(dir / "out.txt").find("threshold=0.65") != std::string::npos);
  CHECK(run("train-unet --work-dir nowhere --data-dir ph") != 0);
}
