#include "ichseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "ichseg/kernels/kernels.hpp"

namespace ichseg::metrics {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.dims() != b.dims())
    throw Error(std::string(what) + ": shape mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
}

kernels::OverlapCounts counts(const BinaryMask& p, const BinaryMask& g) {
  return kernels::active().overlap(p.voxels.data().data(), g.voxels.data().data(), p.voxels.size());
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line
// with sample spacing `step`. f holds squared distances, kInf for "no site".
void edt_1d(const double* f, double* out, std::size_t n, double step, std::vector<std::size_t>& v,
            std::vector<double>& zb) {
  v.resize(n);
  zb.resize(n + 1);
  const double s2 = step * step;
  auto height = [&](std::size_t p) { return f[p] + s2 * static_cast<double>(p) * static_cast<double>(p); };
  std::ptrdiff_t k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s = -kInf;
    while (k >= 0) {
      const std::size_t p = v[static_cast<std::size_t>(k)];
      s = (height(q) - height(p)) / (2.0 * s2 * (static_cast<double>(q) - static_cast<double>(p)));
      if (s > zb[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    const auto uk = static_cast<std::size_t>(k);
    v[uk] = q;
    zb[uk] = k == 0 ? -kInf : s;
    zb[uk + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (zb[j + 1] < static_cast<double>(q)) ++j;
    const double d = static_cast<double>(q) - static_cast<double>(v[j]);
    out[q] = s2 * d * d + f[v[j]];
  }
}

std::vector<double> directed(const Grid3<std::uint8_t>& from_surface, const std::vector<double>& dist) {
  std::vector<double> out;
  for (std::size_t i = 0; i < from_surface.size(); ++i)
    if (from_surface[i]) out.push_back(dist[i]);
  return out;
}

double linear_percentile(std::vector<double> v, double pct) {
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct SurfaceDistances {
  std::vector<double> pred_to_gt;
  std::vector<double> gt_to_pred;
};

SurfaceDistances surface_distances(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing) {
  const auto bp = boundary(pred.voxels);
  const auto bg = boundary(gt.voxels);
  return {directed(bp, distance_to(bg, spacing)), directed(bg, distance_to(bp, spacing))};
}

}  // namespace

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "dice");
  const auto c = counts(pred, gt);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double rvd(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "rvd");
  const auto c = counts(pred, gt);
  if (c.b == 0) throw Error("RVD undefined: ground truth mask '" + gt.id + "' is empty");
  return std::fabs(static_cast<double>(c.a) - static_cast<double>(c.b)) / static_cast<double>(c.b);
}

double tpr(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "tpr");
  const auto c = counts(pred, gt);
  if (c.b == 0) throw Error("TPR undefined: ground truth mask '" + gt.id + "' is empty");
  return static_cast<double>(c.both) / static_cast<double>(c.b);
}

Grid3<std::uint8_t> boundary(const Grid3<std::uint8_t>& mask) {
  const Dims& d = mask.dims();
  Grid3<std::uint8_t> out(d, 0);
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        if (!mask(x, y, z)) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x + 1 == d.nx || y + 1 == d.ny || z + 1 == d.nz ||
                          !mask(x - 1, y, z) || !mask(x + 1, y, z) || !mask(x, y - 1, z) || !mask(x, y + 1, z) ||
                          !mask(x, y, z - 1) || !mask(x, y, z + 1);
        out(x, y, z) = edge ? 1 : 0;
      }
  return out;
}

std::vector<double> distance_to(const Grid3<std::uint8_t>& features, const Spacing& spacing) {
  const Dims& d = features.dims();
  std::vector<double> sq(features.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = features[i] ? 0.0 : kInf;

  std::vector<double> line;
  std::vector<double> res;
  std::vector<std::size_t> v;
  std::vector<double> zb;
  auto pass = [&](std::size_t n, std::size_t stride, double step, auto&& starts) {
    line.resize(n);
    res.resize(n);
    for (std::size_t base : starts) {
      for (std::size_t i = 0; i < n; ++i) line[i] = sq[base + i * stride];
      edt_1d(line.data(), res.data(), n, step, v, zb);
      for (std::size_t i = 0; i < n; ++i) sq[base + i * stride] = res[i];
    }
  };
  std::vector<std::size_t> starts;
  starts.clear();
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y) starts.push_back(features.index(0, y, z));
  pass(d.nx, 1, spacing.dx, starts);
  starts.clear();
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t x = 0; x < d.nx; ++x) starts.push_back(features.index(x, 0, z));
  pass(d.ny, d.nx, spacing.dy, starts);
  starts.clear();
  for (std::size_t y = 0; y < d.ny; ++y)
    for (std::size_t x = 0; x < d.nx; ++x) starts.push_back(features.index(x, y, 0));
  pass(d.nz, d.nx * d.ny, spacing.dz, starts);

  for (double& s : sq) s = std::sqrt(s);
  return sq;
}

double hausdorff(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing) {
  require_same_shape(pred, gt, "hausdorff");
  if (pred.count() == 0 || gt.count() == 0) throw Error("HD undefined: empty mask for '" + gt.id + "'");
  const auto sd = surface_distances(pred, gt, spacing);
  return std::max(*std::max_element(sd.pred_to_gt.begin(), sd.pred_to_gt.end()),
                  *std::max_element(sd.gt_to_pred.begin(), sd.gt_to_pred.end()));
}

double hausdorff95(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing) {
  require_same_shape(pred, gt, "hausdorff95");
  if (pred.count() == 0 || gt.count() == 0) throw Error("HD95 undefined: empty mask for '" + gt.id + "'");
  auto sd = surface_distances(pred, gt, spacing);
  sd.pred_to_gt.insert(sd.pred_to_gt.end(), sd.gt_to_pred.begin(), sd.gt_to_pred.end());
  return linear_percentile(std::move(sd.pred_to_gt), 95.0);
}

double surface_dice(const BinaryMask& pred, const BinaryMask& gt, const Spacing& spacing, double tau_mm) {
  require_same_shape(pred, gt, "surface_dice");
  if (!(tau_mm >= 0.0)) throw Error("surface_dice: tolerance must be >= 0");
  const bool ep = pred.count() == 0;
  const bool eg = gt.count() == 0;
  if (ep && eg) return 1.0;
  if (ep || eg) return 0.0;
  const auto sd = surface_distances(pred, gt, spacing);
  const double limit = tau_mm * tau_mm;
  auto within = [&](const std::vector<double>& v) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double x) { return x * x <= limit + 1e-9; }));
  };
  return (within(sd.pred_to_gt) + within(sd.gt_to_pred)) /
         static_cast<double>(sd.pred_to_gt.size() + sd.gt_to_pred.size());
}

TTest paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("paired_ttest: score vectors differ in length");
  if (a.size() < 2) throw Error("paired_ttest: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : diff) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (!(var > 0.0)) throw Error("paired_ttest: differences have zero variance");
  TTest r;
  r.dof = n - 1;
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  const boost::math::students_t dist(static_cast<double>(r.dof));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

VolumeScores score_volume(const BinaryMask& pred, const BinaryMask& gt, const ReportConfig& config) {
  VolumeScores s;
  s.dice = dice(pred, gt);
  auto attempt = [&](std::optional<double>& slot, const char* name, auto&& fn) {
    try {
      slot = fn();
    } catch (const Error& e) {
      s.undefined[name] = e.what();
    }
  };
  attempt(s.rvd, "rvd", [&] { return rvd(pred, gt); });
  attempt(s.tpr, "tpr", [&] { return tpr(pred, gt); });
  attempt(s.hd_mm, "hd_mm", [&] { return hausdorff(pred, gt, gt.spacing); });
  attempt(s.hd95_mm, "hd95_mm", [&] { return hausdorff95(pred, gt, gt.spacing); });
  s.surface_dice = surface_dice(pred, gt, gt.spacing, config.tolerance_mm);
  return s;
}

MetricsReport report(const std::map<std::string, BinaryMask>& preds, const std::map<std::string, BinaryMask>& gts,
                     const ReportConfig& config) {
  MetricsReport r;
  r.config = config;
  for (const auto& [id, gt] : gts) {
    auto it = preds.find(id);
    if (it == preds.end()) continue;
    r.per_volume[id] = score_volume(it->second, gt, config);
  }
  if (r.per_volume.empty()) throw Error("report: no volume id is present in both prediction and ground truth sets");

  const std::vector<std::pair<std::string, std::optional<double> VolumeScores::*>> fields{
      {"dice", &VolumeScores::dice},       {"rvd", &VolumeScores::rvd},         {"tpr", &VolumeScores::tpr},
      {"hd_mm", &VolumeScores::hd_mm},     {"hd95_mm", &VolumeScores::hd95_mm},
      {"surface_dice", &VolumeScores::surface_dice}};
  for (const auto& [name, member] : fields) {
    std::vector<double> vals;
    for (const auto& [id, s] : r.per_volume)
      if (s.*member) vals.push_back(*(s.*member));
    Aggregate a;
    a.n = vals.size();
    if (!vals.empty()) {
      a.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      double ss = 0.0;
      for (double v : vals) ss += (v - a.mean) * (v - a.mean);
      a.std = std::sqrt(ss / static_cast<double>(vals.size()));
    }
    r.aggregate[name] = a;
  }
  return r;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::string report_json(const MetricsReport& r) {
  nlohmann::json j;
  j["config"] = {{"tolerance_mm", r.config.tolerance_mm}, {"threshold", r.config.threshold}};
  j["per_volume"] = nlohmann::json::object();
  for (const auto& [id, s] : r.per_volume) {
    nlohmann::json v{{"dice", opt_json(s.dice)},       {"rvd", opt_json(s.rvd)},
                     {"tpr", opt_json(s.tpr)},         {"hd_mm", opt_json(s.hd_mm)},
                     {"hd95_mm", opt_json(s.hd95_mm)}, {"surface_dice", opt_json(s.surface_dice)}};
    if (!s.undefined.empty()) v["undefined"] = s.undefined;
    j["per_volume"][id] = v;
  }
  j["aggregate"] = nlohmann::json::object();
  for (const auto& [name, a] : r.aggregate) j["aggregate"][name] = {{"mean", a.mean}, {"std", a.std}, {"n", a.n}};
  return j.dump(2);
}

std::string report_csv(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(17);
  auto cell = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  out << "volume_id,dice,rvd,tpr,hd_mm,hd95_mm,surface_dice\n";
  for (const auto& [id, s] : r.per_volume) {
    out << id << ',';
    cell(s.dice);
    out << ',';
    cell(s.rvd);
    out << ',';
    cell(s.tpr);
    out << ',';
    cell(s.hd_mm);
    out << ',';
    cell(s.hd95_mm);
    out << ',';
    cell(s.surface_dice);
    out << '\n';
  }
  return out.str();
}

void write_report(const MetricsReport& r, const std::filesystem::path& json_path, const std::filesystem::path& csv_path) {
  std::ofstream j(json_path);
  std::ofstream c(csv_path);
  if (!j || !c) throw Error("cannot write metrics report to " + json_path.parent_path().string());
  j << report_json(r) << '\n';
  c << report_csv(r);
}

}  // namespace ichseg::metrics
