#include "ichseg/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ichseg::pseudolabel {

namespace {

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

int nearest(const std::vector<double>& f, const std::vector<std::vector<double>>& centroids) {
  int best = 0;
  double bd = dist2(f, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = dist2(f, centroids[c]);
    if (d < bd) {
      bd = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<std::vector<double>> seed_plus_plus(const std::vector<std::vector<double>>& f, int k,
                                                std::mt19937_64& rng) {
  std::vector<std::vector<double>> c;
  c.push_back(f[std::uniform_int_distribution<std::size_t>(0, f.size() - 1)(rng)]);
  std::vector<double> d(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) d[i] = dist2(f[i], c[0]);
  while (static_cast<int>(c.size()) < k) {
    double total = 0.0;
    for (double v : d) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < f.size(); ++pick) {
        r -= d[pick];
        if (r < 0.0) break;
      }
      // Never pick a zero-distance point through rounding at the tail.
      while (d[pick] == 0.0 && pick > 0) --pick;
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, f.size() - 1)(rng);
    }
    c.push_back(f[pick]);
    for (std::size_t i = 0; i < f.size(); ++i) d[i] = std::min(d[i], dist2(f[i], c.back()));
  }
  return c;
}

}  // namespace

std::string to_string(FeatureSpace f) { return f == FeatureSpace::kIntensity ? "intensity" : "intensity+xy"; }

FeatureSpace parse_feature_space(const std::string& s) {
  if (s == "intensity") return FeatureSpace::kIntensity;
  if (s == "intensity+xy") return FeatureSpace::kIntensityXY;
  throw Error("unknown cluster feature space '" + s + "' (expected intensity or intensity+xy)");
}

void ClusterConfig::validate() const {
  if (k < 2) throw Error("k must be at least 2");
  if (max_iters < 1) throw Error("max_iters must be at least 1");
  if (!(tol >= 0.0)) throw Error("tol must be non-negative");
}

std::vector<std::size_t> ClusterAssignment::cluster_sizes() const {
  std::vector<std::size_t> s(centroids.size(), 0);
  for (int l : labels) ++s[static_cast<std::size_t>(l)];
  return s;
}

std::vector<std::vector<double>> region_features(const CTVolume& volume, const std::vector<std::size_t>& voxels,
                                                 FeatureSpace space) {
  const Dims d = volume.dims();
  std::vector<std::vector<double>> f;
  f.reserve(voxels.size());
  for (std::size_t idx : voxels) {
    std::vector<double> v{volume.voxels.data()[idx]};
    if (space == FeatureSpace::kIntensityXY) {
      v.push_back(static_cast<double>(idx % d.nx) / d.nx);
      v.push_back(static_cast<double>((idx / d.nx) % d.ny) / d.ny);
    }
    f.push_back(std::move(v));
  }
  return f;
}

double wcss(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
            const std::vector<std::vector<double>>& centroids) {
  double s = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) s += dist2(features[i], centroids[static_cast<std::size_t>(labels[i])]);
  return s;
}

ClusterAssignment kmeans_region(const CTVolume& volume, const BinaryMask& region, const ClusterConfig& config) {
  config.validate();
  if (region.voxels.dims() != volume.dims())
    throw Error("CAM region grid " + to_string(region.voxels.dims()) + " does not match volume " + to_string(volume.dims()));
  ClusterAssignment a;
  a.volume_id = volume.id;
  a.region = region;
  const auto& r = region.voxels.data();
  for (std::size_t i = 0; i < r.size(); ++i)
    if (r[i]) a.voxels.push_back(i);
  if (a.voxels.empty()) throw Error("empty CAM region in volume " + volume.id);
  if (static_cast<std::size_t>(config.k) > a.voxels.size())
    throw Error("k = " + std::to_string(config.k) + " exceeds the " + std::to_string(a.voxels.size()) +
                " voxels of the CAM region");

  const auto f = region_features(volume, a.voxels, config.feature_space);
  std::mt19937_64 rng(config.seed);
  a.centroids = seed_plus_plus(f, config.k, rng);
  a.labels.assign(f.size(), -1);
  const std::size_t dim = f[0].size();

  for (int it = 1; it <= config.max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const int l = nearest(f[i], a.centroids);
      changed |= l != a.labels[i];
      a.labels[i] = l;
    }
    a.wcss_history.push_back(wcss(f, a.labels, a.centroids));
    a.iterations = it;
    if (!changed) {
      a.converged = true;
      break;
    }
    std::vector<std::vector<double>> sum(a.centroids.size(), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(a.centroids.size(), 0);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto l = static_cast<std::size_t>(a.labels[i]);
      ++count[l];
      for (std::size_t j = 0; j < dim; ++j) sum[l][j] += f[i][j];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < a.centroids.size(); ++c) {
      std::vector<double> next = a.centroids[c];
      if (count[c] > 0) {
        for (std::size_t j = 0; j < dim; ++j) next[j] = sum[c][j] / static_cast<double>(count[c]);
      } else {
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
          const double d = dist2(f[i], a.centroids[static_cast<std::size_t>(a.labels[i])]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        if (fd > 0.0) next = f[far];
      }
      shift = std::max(shift, std::sqrt(dist2(next, a.centroids[c])));
      a.centroids[c] = std::move(next);
    }
    if (shift <= config.tol) {
      for (std::size_t i = 0; i < f.size(); ++i) a.labels[i] = nearest(f[i], a.centroids);
      a.wcss_history.push_back(wcss(f, a.labels, a.centroids));
      a.converged = true;
      break;
    }
  }
  return a;
}

Selection differential_select(const ClusterAssignment& a, const SliceStack& input, const classifier::SliceScorer& scorer) {
  const Dims d = a.region.voxels.dims();
  if (input.nx != d.nx || input.ny != d.ny || input.nz != d.nz)
    throw Error("classifier input for " + input.volume_id + " does not match the cluster grid");
  if (a.labels.size() != a.voxels.size() || a.centroids.empty()) throw Error("invalid cluster assignment");
  const std::size_t k = a.centroids.size();
  const std::size_t plane = d.slice_voxels();

  Selection s;
  s.sizes = a.cluster_sizes();
  const auto base = scorer.slice_logits(classifier::slice_tensor(input, 0, input.nz));
  s.positive_slices.resize(d.nz);
  for (std::size_t z = 0; z < d.nz; ++z) s.positive_slices[z] = base[z] >= 0.0f ? 1 : 0;

  s.scores.assign(k, std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::vector<std::size_t>> per_slice(d.nz);
    for (std::size_t i = 0; i < a.voxels.size(); ++i)
      if (static_cast<std::size_t>(a.labels[i]) == c) per_slice[a.voxels[i] / plane].push_back(a.voxels[i] % plane);
    std::vector<std::size_t> slices;
    for (std::size_t z = 0; z < d.nz; ++z)
      if (!per_slice[z].empty() && s.positive_slices[z]) slices.push_back(z);
    if (slices.empty()) continue;
    nn::Tensor batch(slices.size(), SliceStack::kChannels, 1, d.ny, d.nx);
    for (std::size_t j = 0; j < slices.size(); ++j) {
      float* dst = batch.sample(j);
      std::copy(input.slice(slices[j]), input.slice(slices[j]) + input.slice_floats(), dst);
      for (std::size_t ch = 0; ch < SliceStack::kChannels; ++ch)
        for (std::size_t p : per_slice[slices[j]]) dst[ch * plane + p] = 0.0f;
    }
    const auto logits = scorer.slice_logits(batch);
    double sum = 0.0;
    for (float v : logits) sum += v;
    s.scores[c] = sum / static_cast<double>(logits.size());
  }

  for (std::size_t c = 0; c < k; ++c) {
    if (std::isinf(s.scores[c])) continue;
    if (s.selected < 0) {
      s.selected = static_cast<int>(c);
      continue;
    }
    const auto b = static_cast<std::size_t>(s.selected);
    if (s.scores[c] < s.scores[b] || (s.scores[c] == s.scores[b] && s.sizes[c] > s.sizes[b]))
      s.selected = static_cast<int>(c);
  }
  if (s.selected < 0)
    throw Error("no cluster of volume " + a.volume_id + " touches a slice the classifier scores positive");
  return s;
}

PseudoMask build_pseudomask(const ClusterAssignment& a, int selected) {
  if (selected < 0 || selected >= a.k())
    throw Error("cluster index " + std::to_string(selected) + " out of range [0, " + std::to_string(a.k()) + ")");
  PseudoMask m{mask_like(a.region, a.volume_id), selected};
  for (std::size_t i = 0; i < a.voxels.size(); ++i)
    if (a.labels[i] == selected) m.mask.voxels.data()[a.voxels[i]] = 1;
  return m;
}

nlohmann::json sidecar(const ClusterConfig& config, const ClusterAssignment& a, const Selection& s) {
  nlohmann::json scores = nlohmann::json::array();
  for (double v : s.scores) scores.push_back(std::isinf(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"volume_id", a.volume_id},
          {"k", config.k},
          {"seed", config.seed},
          {"feature_space", to_string(config.feature_space)},
          {"iterations", a.iterations},
          {"converged", a.converged},
          {"region_voxels", a.voxels.size()},
          {"cluster_sizes", s.sizes},
          {"scores", scores},
          {"selected", s.selected}};
}

}  // namespace ichseg::pseudolabel
