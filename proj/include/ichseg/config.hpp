#pragma once
// Run configuration: one INI file (sections of key = value) fully determines
// a pipeline run. Every key can be overridden as "section.key".

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "ichseg/cam.hpp"
#include "ichseg/classifier.hpp"
#include "ichseg/phantom.hpp"
#include "ichseg/preprocess.hpp"
#include "ichseg/pseudolabel.hpp"
#include "ichseg/segmenter.hpp"

namespace ichseg {

enum class Variant { kResNet, kResNetLstm, kResNetKmeans, kResNetLstmKmeans };
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
const std::vector<Variant>& all_variants();
inline bool uses_lstm(Variant v) { return v == Variant::kResNetLstm || v == Variant::kResNetLstmKmeans; }
inline bool uses_kmeans(Variant v) { return v == Variant::kResNetKmeans || v == Variant::kResNetLstmKmeans; }

struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path work_dir = "work";

  Variant variant = Variant::kResNetLstmKmeans;
  std::uint64_t seed = 0;
  int fold_count = 5;
  int fold = 0;
  bool save_overlays = false;

  SkullStripConfig preprocess;
  std::size_t label_min_voxels = 0;
  classifier::BackboneConfig backbone;
  classifier::TrainConfig classifier_train;
  classifier::SequenceHeadConfig sequence;
  classifier::TrainConfig sequence_train;
  classifier::FinalizeConfig finalize;
  cam::CAMConfig cam;
  pseudolabel::ClusterConfig cluster;
  segmenter::UNetConfig unet;
  segmenter::SegTrainConfig unet_train;
  segmenter::PredictConfig predict;
  double tolerance_mm = 1.0;
  phantom::PhantomSpec phantoms;

  RunConfig();
  void validate() const;
};

boost::property_tree::ptree to_ptree(const RunConfig& c);
RunConfig from_ptree(const boost::property_tree::ptree& tree);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& c, const std::filesystem::path& path);

/// Applies "section.key" -> value overrides; unknown keys throw.
RunConfig apply_overrides(const RunConfig& c, const std::map<std::string, std::string>& overrides);

/// Every "section.key" the INI format accepts, in file order.
std::vector<std::string> config_keys();

/// Canonical "section.key=value" lines for whole sections ("unet") or single
/// keys ("pipeline.seed"), in the order given.
std::string canonical(const RunConfig& c, const std::vector<std::string>& entries);

}  // namespace ichseg
