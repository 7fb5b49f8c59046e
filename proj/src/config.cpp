#include "ichseg/config.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

namespace ichseg {

namespace pt = boost::property_tree;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kResNet: return "resnet+unet";
    case Variant::kResNetLstm: return "resnet-lstm+unet";
    case Variant::kResNetKmeans: return "resnet+kmeans+unet";
    case Variant::kResNetLstmKmeans: return "resnet-lstm+kmeans+unet";
  }
  return "?";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::kResNet, Variant::kResNetLstm, Variant::kResNetKmeans,
                                      Variant::kResNetLstmKmeans};
  return v;
}

Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants())
    if (to_string(v) == s) return v;
  throw Error("unknown pipeline variant '" + s +
              "' (expected resnet+unet, resnet-lstm+unet, resnet+kmeans+unet or resnet-lstm+kmeans+unet)");
}

RunConfig::RunConfig() {
  sequence_train.learning_rate = 1e-3;
  unet_train.max_epochs = 100;
  unet_train.patience = 25;
}

void RunConfig::validate() const {
  if (fold_count < 2) throw Error("pipeline.fold_count must be at least 2");
  if (fold < 0 || fold >= fold_count) throw Error("pipeline.fold must lie in [0, fold_count)");
  preprocess.validate();
  backbone.validate();
  classifier_train.validate();
  if (uses_lstm(variant)) {
    sequence.validate();
    sequence_train.validate();
  }
  if (finalize.epochs < 0 || !(finalize.learning_rate >= 0.0)) throw Error("finalize settings must be non-negative");
  cam.validate();
  if (uses_kmeans(variant)) cluster.validate();
  unet.validate();
  unet_train.validate();
  if (!(predict.threshold > 0.0 && predict.threshold < 1.0)) throw Error("unet.threshold must lie in (0, 1)");
  if (!(tolerance_mm >= 0.0)) throw Error("metrics.tolerance_mm must be non-negative");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw Error("config key " + key + ": invalid value '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error("config key " + key + ": expected true or false, got '" + s + "'");
}

std::string format_optimizer(nn::OptimizerKind k) { return nn::to_string(k); }

// Visits every configurable field once; the writer and reader share this list.
template <class V>
void visit(RunConfig& c, V& v) {
  v.str("paths", "data_dir", c.data_dir);
  v.str("paths", "work_dir", c.work_dir);

  v.enumerated("pipeline", "variant", c.variant, [](Variant x) { return to_string(x); }, parse_variant);
  v.num("pipeline", "seed", c.seed);
  v.num("pipeline", "fold_count", c.fold_count);
  v.num("pipeline", "fold", c.fold);
  v.flag("pipeline", "save_overlays", c.save_overlays);

  v.num("preprocess", "bilateral_spatial_sigma", c.preprocess.bilateral_spatial_sigma);
  v.num("preprocess", "bilateral_range_sigma", c.preprocess.bilateral_range_sigma);
  v.num("preprocess", "intensity_percentile", c.preprocess.intensity_percentile);
  v.num("preprocess", "label_min_voxels", c.label_min_voxels);

  v.str("classifier", "architecture", c.backbone.architecture_id);
  v.enumerated("classifier", "optimizer", c.classifier_train.optimizer, format_optimizer, nn::parse_optimizer);
  v.num("classifier", "momentum", c.classifier_train.momentum);
  v.num("classifier", "batch_size", c.classifier_train.batch_size);
  v.num("classifier", "learning_rate", c.classifier_train.learning_rate);
  v.num("classifier", "weight_decay", c.classifier_train.weight_decay);
  v.num("classifier", "max_epochs", c.classifier_train.max_epochs);
  v.num("classifier", "patience", c.classifier_train.patience);
  v.flag("classifier", "rebalance", c.classifier_train.rebalance);

  v.num("sequence", "hidden_dim", c.sequence.hidden_dim);
  v.num("sequence", "window_length", c.sequence.window_length);
  v.enumerated("sequence", "direction", c.sequence.direction,
               [](classifier::Direction d) { return classifier::to_string(d); }, classifier::parse_direction);
  v.enumerated("sequence", "optimizer", c.sequence_train.optimizer, format_optimizer, nn::parse_optimizer);
  v.num("sequence", "momentum", c.sequence_train.momentum);
  v.num("sequence", "batch_size", c.sequence_train.batch_size);
  v.num("sequence", "learning_rate", c.sequence_train.learning_rate);
  v.num("sequence", "weight_decay", c.sequence_train.weight_decay);
  v.num("sequence", "max_epochs", c.sequence_train.max_epochs);
  v.num("sequence", "patience", c.sequence_train.patience);

  v.num("finalize", "epochs", c.finalize.epochs);
  v.num("finalize", "learning_rate", c.finalize.learning_rate);

  v.num("cam", "threshold", c.cam.threshold);
  v.enumerated("cam", "normalization", c.cam.normalization, [](cam::Normalization n) { return cam::to_string(n); },
               cam::parse_normalization);
  v.flag("cam", "gate_by_probability", c.cam.gate_by_probability);

  v.num("cluster", "k", c.cluster.k);
  v.enumerated("cluster", "feature_space", c.cluster.feature_space,
               [](pseudolabel::FeatureSpace f) { return pseudolabel::to_string(f); }, pseudolabel::parse_feature_space);
  v.num("cluster", "max_iters", c.cluster.max_iters);
  v.num("cluster", "tol", c.cluster.tol);

  v.num("unet", "depth", c.unet.depth);
  v.num("unet", "base_channels", c.unet.base_channels);
  v.num("unet", "patch_x", c.unet.patch_x);
  v.num("unet", "patch_y", c.unet.patch_y);
  v.num("unet", "patch_z", c.unet.patch_z);
  v.num("unet", "patch_overlap", c.unet.patch_overlap);
  v.num("unet", "epsilon", c.unet.epsilon);
  v.num("unet", "learning_rate", c.unet_train.learning_rate);
  v.num("unet", "batch_size", c.unet_train.batch_size);
  v.num("unet", "max_epochs", c.unet_train.max_epochs);
  v.num("unet", "patience", c.unet_train.patience);
  v.num("unet", "patches_per_epoch", c.unet_train.patches_per_epoch);
  v.num("unet", "val_patches_per_volume", c.unet_train.val_patches_per_volume);
  v.num("unet", "threshold", c.predict.threshold);
  v.num("unet", "min_component_size", c.predict.min_component_size);
  v.num("unet", "air_hu", c.predict.air_hu);

  v.num("metrics", "tolerance_mm", c.tolerance_mm);

  v.num("phantoms", "count", c.phantoms.count);
  v.num("phantoms", "seed", c.phantoms.seed);
  v.num("phantoms", "nx", c.phantoms.nx);
  v.num("phantoms", "ny", c.phantoms.ny);
  v.num("phantoms", "nz", c.phantoms.nz);
  v.num("phantoms", "dx", c.phantoms.spacing.dx);
  v.num("phantoms", "dy", c.phantoms.spacing.dy);
  v.num("phantoms", "dz", c.phantoms.spacing.dz);
  v.num("phantoms", "blob_count", c.phantoms.blob_count);
  v.num("phantoms", "blob_radius_min", c.phantoms.blob_radius_min);
  v.num("phantoms", "blob_radius_max", c.phantoms.blob_radius_max);
  v.num("phantoms", "blob_hu_min", c.phantoms.blob_hu_min);
  v.num("phantoms", "blob_hu_max", c.phantoms.blob_hu_max);
  v.num("phantoms", "tissue_hu", c.phantoms.tissue_hu);
  v.num("phantoms", "noise_sd", c.phantoms.noise_sd);
  v.flag("phantoms", "skull_ring", c.phantoms.skull_ring);
  v.num("phantoms", "persistence_min", c.phantoms.persistence_min);
  v.num("phantoms", "persistence_max", c.phantoms.persistence_max);
}

struct Writer {
  pt::ptree tree;
  void put(const std::string& s, const std::string& k, const std::string& value) { tree.put(pt::ptree::path_type(s + "." + k, '.'), value); }
  template <class T>
  void str(const std::string& s, const std::string& k, T& v) {
    if constexpr (std::is_same_v<T, std::filesystem::path>)
      put(s, k, v.string());
    else
      put(s, k, v);
  }
  template <class T>
  void num(const std::string& s, const std::string& k, T& v) {
    if constexpr (std::is_floating_point_v<T>)
      put(s, k, format_double(v));
    else
      put(s, k, std::to_string(v));
  }
  void flag(const std::string& s, const std::string& k, bool& v) { put(s, k, v ? "true" : "false"); }
  template <class T, class F, class P>
  void enumerated(const std::string& s, const std::string& k, T& v, F fmt, P) {
    put(s, k, fmt(v));
  }
};

struct Reader {
  const pt::ptree& tree;
  std::set<std::string> known;

  const std::string* get(const std::string& s, const std::string& k) {
    known.insert(s + "." + k);
    const auto sec = tree.get_child_optional(pt::ptree::path_type(s, '.'));
    if (!sec) return nullptr;
    const auto node = sec->get_child_optional(pt::ptree::path_type(k, '.'));
    if (!node) return nullptr;
    return &node->data();
  }
  template <class T>
  void str(const std::string& s, const std::string& k, T& v) {
    if (const auto* x = get(s, k)) v = *x;
  }
  template <class T>
  void num(const std::string& s, const std::string& k, T& v) {
    if (const auto* x = get(s, k)) v = parse_number<T>(s + "." + k, *x);
  }
  void flag(const std::string& s, const std::string& k, bool& v) {
    if (const auto* x = get(s, k)) v = parse_bool(s + "." + k, *x);
  }
  template <class T, class F, class P>
  void enumerated(const std::string& s, const std::string& k, T& v, F, P parse) {
    if (const auto* x = get(s, k)) v = parse(*x);
  }
};

}  // namespace

pt::ptree to_ptree(const RunConfig& c) {
  RunConfig copy = c;
  Writer w;
  visit(copy, w);
  return w.tree;
}

RunConfig from_ptree(const pt::ptree& tree) {
  RunConfig c;
  Reader r{tree, {}};
  visit(c, r);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw Error("config key '" + section + "' lies outside any section");
    for (const auto& [key, value] : body)
      if (!r.known.count(section + "." + key)) throw Error("unknown config key " + section + "." + key);
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(path.string() + ": config file does not exist");
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(path.string() + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return from_ptree(tree);
}

void save_config(const RunConfig& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  pt::write_ini(path.string(), to_ptree(c));
}

RunConfig apply_overrides(const RunConfig& c, const std::map<std::string, std::string>& overrides) {
  pt::ptree tree = to_ptree(c);
  for (const auto& [key, value] : overrides) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw Error("override '" + key + "' must look like section.key");
    if (!tree.get_child_optional(pt::ptree::path_type(key, '.'))) throw Error("unknown config key " + key);
    tree.put(pt::ptree::path_type(key, '.'), value);
  }
  return from_ptree(tree);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [section, body] : to_ptree(RunConfig{}))
    for (const auto& [key, value] : body) keys.push_back(section + "." + key);
  return keys;
}

std::string canonical(const RunConfig& c, const std::vector<std::string>& entries) {
  const pt::ptree tree = to_ptree(c);
  std::ostringstream out;
  for (const auto& e : entries) {
    const auto node = tree.get_child_optional(pt::ptree::path_type(e, '.'));
    if (!node) throw Error("unknown config entry " + e);
    if (node->empty())
      out << e << '=' << node->data() << '\n';
    else
      for (const auto& [key, value] : *node) out << e << '.' << key << '=' << value.data() << '\n';
  }
  return out.str();
}

}  // namespace ichseg
