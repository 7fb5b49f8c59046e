#include "ichseg/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

namespace ichseg {

std::size_t SliceLabelSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

SliceLabelSet derive_slice_labels(const LesionMask& mask, std::size_t min_voxels) {
  validate_binary(mask, "lesion mask");
  SliceLabelSet out;
  out.volume_id = mask.id;
  out.labels.resize(mask.dims().nz);
  for (std::size_t z = 0; z < mask.dims().nz; ++z) {
    auto s = mask.voxels.slice(z);
    const auto n = static_cast<std::size_t>(std::count(s.begin(), s.end(), std::uint8_t{1}));
    out.labels[z] = n > min_voxels ? 1 : 0;
  }
  return out;
}

std::vector<DatasetSplit> make_splits(const std::vector<std::string>& ids, int fold_count, std::uint64_t seed) {
  if (fold_count < 2) throw Error("make_splits: fold_count must be >= 2");
  const std::size_t n = ids.size();
  if (n < static_cast<std::size_t>(fold_count))
    throw Error("make_splits: " + std::to_string(n) + " ids are too few for " + std::to_string(fold_count) + " folds");
  {
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw Error("make_splits: duplicate ids");
  }

  std::vector<std::string> order = ids;
  std::sort(order.begin(), order.end());
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }

  const auto folds = static_cast<std::size_t>(fold_count);
  std::size_t n_test = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n / folds);
  std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  n_val = std::max<std::size_t>(n_val, 1);
  if (n_test + n_val >= n) n_val = n - n_test > 1 ? 1 : 0;

  std::vector<DatasetSplit> out;
  for (std::size_t f = 0; f < folds; ++f) {
    DatasetSplit s;
    s.fold_index = static_cast<int>(f);
    std::vector<bool> used(n, false);
    for (std::size_t i = 0; i < n_test; ++i) {
      const std::size_t idx = f * n_test + i;
      s.test_ids.push_back(order[idx]);
      used[idx] = true;
    }
    for (std::size_t i = 0; i < n_val; ++i) {
      const std::size_t idx = ((f + 1) * n_test + i) % n;
      s.val_ids.push_back(order[idx]);
      used[idx] = true;
    }
    for (std::size_t i = 0; i < n; ++i)
      if (!used[i]) s.train_ids.push_back(order[i]);
    out.push_back(std::move(s));
  }
  return out;
}

void write_split_manifest(const std::vector<DatasetSplit>& splits, std::uint64_t seed,
                          const std::filesystem::path& path) {
  nlohmann::json j;
  j["seed"] = seed;
  j["folds"] = nlohmann::json::array();
  for (const auto& s : splits) {
    j["folds"].push_back({{"fold_index", s.fold_index},
                          {"train_ids", s.train_ids},
                          {"val_ids", s.val_ids},
                          {"test_ids", s.test_ids}});
  }
  std::ofstream out(path);
  if (!out) throw Error(path.string() + ": cannot write split manifest");
  out << j.dump(2) << '\n';
}

std::vector<DatasetSplit> read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(path.string() + ": cannot read split manifest");
  const auto j = nlohmann::json::parse(in);
  std::vector<DatasetSplit> out;
  for (const auto& f : j.at("folds")) {
    DatasetSplit s;
    s.fold_index = f.at("fold_index").get<int>();
    s.train_ids = f.at("train_ids").get<std::vector<std::string>>();
    s.val_ids = f.at("val_ids").get<std::vector<std::string>>();
    s.test_ids = f.at("test_ids").get<std::vector<std::string>>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ichseg
