#pragma once
// Independent reference implementations shared by the unit tests and the
// acceptance runner. None of these call into the library code they check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ichseg/classifier.hpp"
#include "ichseg/pseudolabel.hpp"
#include "ichseg/volume.hpp"

namespace ichseg::oracle {

// ---------------------------------------------------------------- losses

inline long double bce_mean(const std::vector<float>& y, const std::vector<float>& p) {
  long double sum = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double q = std::min<long double>(std::max<long double>(p[i], 1e-7L), 1.0L - 1e-7L);
    sum += y[i] == 1.0f ? -std::log(q) : -std::log(1.0L - q);
  }
  return sum / static_cast<long double>(y.size());
}

// Straight transcription of the segmentation objective in long double.
inline long double combined_loss(const std::vector<float>& y, const std::vector<float>& p, double eps) {
  long double inter = 0, sy = 0, sp = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    inter += static_cast<long double>(y[i]) * p[i];
    sy += y[i];
    sp += p[i];
  }
  return 1.0L - (2.0L * inter + eps) / (sy + sp + eps) + bce_mean(y, p);
}

// --------------------------------------------------------------- metrics

struct Point {
  double x, y, z;
};

// Face-connected boundary voxels in millimetres, found by direct neighbour
// lookup rather than erosion.
inline std::vector<Point> surface_points(const BinaryMask& m, const Spacing& sp) {
  const Dims& d = m.dims();
  auto on = [&](long x, long y, long z) {
    if (x < 0 || y < 0 || z < 0 || x >= static_cast<long>(d.nx) || y >= static_cast<long>(d.ny) ||
        z >= static_cast<long>(d.nz))
      return false;
    return m.voxels(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) != 0;
  };
  std::vector<Point> pts;
  for (long z = 0; z < static_cast<long>(d.nz); ++z)
    for (long y = 0; y < static_cast<long>(d.ny); ++y)
      for (long x = 0; x < static_cast<long>(d.nx); ++x) {
        if (!on(x, y, z)) continue;
        if (!on(x - 1, y, z) || !on(x + 1, y, z) || !on(x, y - 1, z) || !on(x, y + 1, z) || !on(x, y, z - 1) ||
            !on(x, y, z + 1))
          pts.push_back({static_cast<double>(x) * sp.dx, static_cast<double>(y) * sp.dy, static_cast<double>(z) * sp.dz});
      }
  return pts;
}

// All-pairs nearest distances.
inline std::vector<double> nearest(const std::vector<Point>& from, const std::vector<Point>& to) {
  std::vector<double> out;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to)
      best = std::min(best, std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z)));
    out.push_back(best);
  }
  return out;
}

inline double hausdorff(const BinaryMask& p, const BinaryMask& g, const Spacing& sp) {
  const auto sp_ = surface_points(p, sp), sg = surface_points(g, sp);
  const auto a = nearest(sp_, sg), b = nearest(sg, sp_);
  return std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
}

inline double surface_dice(const BinaryMask& p, const BinaryMask& g, const Spacing& sp, double tau) {
  const auto sp_ = surface_points(p, sp), sg = surface_points(g, sp);
  const auto a = nearest(sp_, sg), b = nearest(sg, sp_);
  double in = 0;
  for (double x : a) in += x <= tau + 1e-12;
  for (double x : b) in += x <= tau + 1e-12;
  return in / static_cast<double>(a.size() + b.size());
}

struct Counts {
  double p = 0, g = 0, pg = 0;
};
inline Counts counts(const BinaryMask& p, const BinaryMask& g) {
  Counts c;
  for (std::size_t i = 0; i < p.voxels.size(); ++i) {
    c.p += p.voxels[i];
    c.g += g.voxels[i];
    c.pg += p.voxels[i] && g.voxels[i];
  }
  return c;
}

// ---------------------------------------------------- differential select

// logit = (sum of channel-0 intensity in the slice) - offset
class IntensitySumScorer final : public classifier::SliceScorer {
 public:
  explicit IntensitySumScorer(double offset) : offset_(offset) {}
  std::vector<float> slice_logits(const nn::Tensor& s) const override {
    std::vector<float> out;
    const std::size_t plane = s.h() * s.w();
    for (std::size_t n = 0; n < s.n(); ++n) {
      double sum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) sum += s.sample(n)[i];
      out.push_back(static_cast<float>(sum - offset_));
    }
    return out;
  }

 private:
  double offset_;
};

// The volume copied into all three channels.
inline SliceStack stack_from(const CTVolume& v) {
  const Dims d = v.dims();
  SliceStack s{v.id, d.nx, d.ny, d.nz, std::vector<float>(d.nz * 3 * d.slice_voxels())};
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t c = 0; c < 3; ++c)
      std::copy(v.voxels.slice(z).begin(), v.voxels.slice(z).end(), s.slice(z) + c * d.slice_voxels());
  return s;
}

// Closed-form selection under IntensitySumScorer: subtracting a cluster lowers
// each touched slice's logit by the intensity it removes. -1 when no cluster
// touches a positive slice.
inline int select_cluster(const pseudolabel::ClusterAssignment& a, const CTVolume& v, double offset) {
  const Dims d = v.dims();
  const std::size_t plane = d.slice_voxels();
  std::vector<double> slice_sum(d.nz, 0.0);
  for (std::size_t z = 0; z < d.nz; ++z)
    for (float x : v.voxels.slice(z)) slice_sum[z] += x;
  int best = -1;
  double best_score = 0.0;
  std::size_t best_size = 0;
  for (int c = 0; c < a.k(); ++c) {
    std::vector<double> removed(d.nz, 0.0);
    std::vector<int> touched(d.nz, 0);
    std::size_t size = 0;
    for (std::size_t i = 0; i < a.voxels.size(); ++i)
      if (a.labels[i] == c) {
        removed[a.voxels[i] / plane] += v.voxels.data()[a.voxels[i]];
        touched[a.voxels[i] / plane] = 1;
        ++size;
      }
    double total = 0.0;
    int n = 0;
    for (std::size_t z = 0; z < d.nz; ++z)
      if (touched[z] && static_cast<float>(slice_sum[z] - offset) >= 0.0f) {
        total += slice_sum[z] - removed[z] - offset;
        ++n;
      }
    if (n == 0) continue;
    const double score = total / n;
    if (best < 0 || score < best_score - 1e-6 || (std::fabs(score - best_score) <= 1e-6 && size > best_size)) {
      best = c;
      best_score = score;
      best_size = size;
    }
  }
  return best;
}

// Relabels clusters: old label c becomes perm[c].
inline pseudolabel::ClusterAssignment permuted(const pseudolabel::ClusterAssignment& a, const std::vector<int>& perm) {
  pseudolabel::ClusterAssignment b = a;
  for (auto& l : b.labels) l = perm[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < perm.size(); ++c) b.centroids[static_cast<std::size_t>(perm[c])] = a.centroids[c];
  return b;
}

// ------------------------------------------------------------- phantoms

// Air outside, a bright ring and a soft-tissue disc (40 HU) inside.
inline CTVolume ring_phantom(std::size_t n, std::size_t nz, double r_in, double r_out) {
  CTVolume v{"ring", Grid3<float>({n, n, nz}, -1000.0f), {1, 1, 5}, {}};
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double r = std::hypot(static_cast<double>(x) - c, static_cast<double>(y) - c);
        if (r < r_in) v.voxels(x, y, z) = 40.0f;
        else if (r < r_out) v.voxels(x, y, z) = 1000.0f;
      }
  return v;
}

}  // namespace ichseg::oracle
