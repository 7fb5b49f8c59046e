#include "ichseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ichseg/kernels/kernels.hpp"

namespace ichseg {

WindowSet default_windows() { return {WindowSpec{40.0, 80.0}, WindowSpec{80.0, 200.0}, WindowSpec{600.0, 2800.0}}; }

void SkullStripConfig::validate() const {
  if (!(bilateral_spatial_sigma > 0.0) || !(bilateral_range_sigma > 0.0))
    throw Error("skull strip: bilateral sigmas must be positive");
  if (!(intensity_percentile > 0.0 && intensity_percentile < 100.0))
    throw Error("skull strip: percentile must lie in (0, 100)");
}

ThreeChannelImage to_three_channel(const Image2D& slice, const WindowSet& windows) {
  for (const auto& w : windows)
    if (!(w.width > 0.0)) throw Error("window width must be positive");
  ThreeChannelImage out{slice.nx, slice.ny, std::vector<float>(3 * slice.nx * slice.ny)};
  const std::size_t n = slice.nx * slice.ny;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = slice.data[i];
    if (!std::isfinite(x)) throw Error("to_three_channel: non-finite intensity");
    for (std::size_t c = 0; c < 3; ++c) {
      const double lo = windows[c].center - windows[c].width / 2.0;
      out.data[c * n + i] = static_cast<float>(std::clamp((x - lo) / windows[c].width, 0.0, 1.0));
    }
  }
  return out;
}

Image2D bilateral_smooth(const Image2D& slice, const SkullStripConfig& config) {
  config.validate();
  const double ss = config.bilateral_spatial_sigma;
  const double rs = config.bilateral_range_sigma;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * ss));
  const std::size_t taps = static_cast<std::size_t>(2 * radius + 1);
  std::vector<double> spatial(taps * taps);
  for (std::ptrdiff_t dy = -radius; dy <= radius; ++dy)
    for (std::ptrdiff_t dx = -radius; dx <= radius; ++dx)
      spatial[static_cast<std::size_t>((dy + radius) * static_cast<std::ptrdiff_t>(taps) + dx + radius)] =
          std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * ss * ss));
  const double inv_range = 1.0 / (2.0 * rs * rs);

  const auto nx = static_cast<std::ptrdiff_t>(slice.nx);
  const auto ny = static_cast<std::ptrdiff_t>(slice.ny);
  Image2D out(slice.nx, slice.ny);
  for (std::ptrdiff_t y = 0; y < ny; ++y) {
    for (std::ptrdiff_t x = 0; x < nx; ++x) {
      const double center = slice(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      double wsum = 0.0;
      double vsum = 0.0;
      const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, y - radius);
      const std::ptrdiff_t y1 = std::min(ny - 1, y + radius);
      const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, x - radius);
      const std::ptrdiff_t x1 = std::min(nx - 1, x + radius);
      for (std::ptrdiff_t yy = y0; yy <= y1; ++yy) {
        const double* srow = spatial.data() + (yy - y + radius) * static_cast<std::ptrdiff_t>(taps) + radius - x;
        const float* row = slice.data.data() + yy * nx;
        for (std::ptrdiff_t xx = x0; xx <= x1; ++xx) {
          const double v = row[xx];
          const double d = v - center;
          const double w = srow[xx] * std::exp(-d * d * inv_range);
          wsum += w;
          vsum += w * v;
        }
      }
      out(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = static_cast<float>(vsum / wsum);
    }
  }
  return out;
}

double percentile(std::vector<float> values, double pct) {
  if (values.empty()) throw Error("percentile of an empty range");
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  double vhi = vlo;
  if (hi != lo) vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

namespace {

struct Pt {
  std::int64_t x;
  std::int64_t y;
  friend bool operator<(const Pt& a, const Pt& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); }
  friend bool operator==(const Pt& a, const Pt& b) = default;
};

std::int64_t cross(const Pt& o, const Pt& a, const Pt& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain; counter-clockwise, collinear points dropped.
std::vector<Pt> convex_hull(std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Pt> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Pt& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    const Pt& p = pts[i - 1];
    while (k >= t && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

// Marks pixel centers inside or on the hull.
void fill_hull(const std::vector<Pt>& hull, std::size_t nx, std::size_t ny, std::span<std::uint8_t> out) {
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  if (hull.empty()) return;
  if (hull.size() == 1) {
    out[static_cast<std::size_t>(hull[0].x) + nx * static_cast<std::size_t>(hull[0].y)] = 1;
    return;
  }
  for (std::size_t y = 0; y < ny; ++y) {
    const auto yy = static_cast<std::int64_t>(y);
    for (std::size_t x = 0; x < nx; ++x) {
      const Pt p{static_cast<std::int64_t>(x), yy};
      bool inside = true;
      if (hull.size() == 2) {
        const Pt& a = hull[0];
        const Pt& b = hull[1];
        inside = cross(a, b, p) == 0 && std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
                 std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
      } else {
        for (std::size_t i = 0; i < hull.size() && inside; ++i)
          inside = cross(hull[i], hull[(i + 1) % hull.size()], p) >= 0;
      }
      out[x + nx * y] = inside ? 1 : 0;
    }
  }
}

// Hull rows are convex, so each row is one interval; find it per row from
// the hull edges instead of testing every pixel against every edge.
void fill_hull_rows(const std::vector<Pt>& hull, std::size_t nx, std::size_t ny, std::span<std::uint8_t> out) {
  if (hull.size() < 3) {
    fill_hull(hull, nx, ny, out);
    return;
  }
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  for (std::size_t y = 0; y < ny; ++y) {
    const auto yy = static_cast<double>(y);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < hull.size(); ++i) {
      const Pt& a = hull[i];
      const Pt& b = hull[(i + 1) % hull.size()];
      const double ya = static_cast<double>(a.y);
      const double yb = static_cast<double>(b.y);
      if (yy < std::min(ya, yb) || yy > std::max(ya, yb)) continue;
      if (ya == yb) {
        lo = std::min({lo, static_cast<double>(a.x), static_cast<double>(b.x)});
        hi = std::max({hi, static_cast<double>(a.x), static_cast<double>(b.x)});
      } else {
        const double x = static_cast<double>(a.x) + (yy - ya) * static_cast<double>(b.x - a.x) / (yb - ya);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    if (lo > hi) continue;
    const auto x0 = static_cast<std::int64_t>(std::ceil(lo - 1e-9));
    const auto x1 = static_cast<std::int64_t>(std::floor(hi + 1e-9));
    for (std::int64_t x = std::max<std::int64_t>(0, x0); x <= std::min<std::int64_t>(static_cast<std::int64_t>(nx) - 1, x1); ++x)
      out[static_cast<std::size_t>(x) + nx * y] = 1;
  }
}

}  // namespace

SkullStripResult strip_skull(const CTVolume& volume, const SkullStripConfig& config) {
  validate(volume);
  config.validate();
  const Dims& d = volume.dims();
  SkullStripResult r;
  r.stripped = volume;
  r.brain = mask_like(volume);
  std::vector<std::uint8_t> hull_mask(d.slice_voxels());

  for (std::size_t z = 0; z < d.nz; ++z) {
    const Image2D smooth = bilateral_smooth(slice_image(volume, z), config);
    const double thr = percentile(smooth.data, config.intensity_percentile);
    float lo = 0.0f;
    float hi = 0.0f;
    kernels::active().min_max(smooth.data.data(), smooth.data.size(), &lo, &hi);

    std::vector<Pt> skull;
    std::vector<std::uint8_t> is_skull(d.slice_voxels(), 0);
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const float v = smooth(x, y);
        if (v >= thr && v > lo) {
          is_skull[x + d.nx * y] = 1;
          skull.push_back({static_cast<std::int64_t>(x), static_cast<std::int64_t>(y)});
        }
      }

    auto brain = r.brain.voxels.slice(z);
    auto out = r.stripped.voxels.slice(z);
    if (skull.empty()) {
      std::fill(brain.begin(), brain.end(), std::uint8_t{1});
      r.slices_without_skull.push_back(z);
      r.warnings.push_back("volume '" + volume.id + "' slice " + std::to_string(z) +
                           ": no suprathreshold pixels, skull not detected");
      continue;
    }
    fill_hull_rows(convex_hull(std::move(skull)), d.nx, d.ny, hull_mask);
    for (std::size_t i = 0; i < d.slice_voxels(); ++i) {
      brain[i] = hull_mask[i] && !is_skull[i] ? 1 : 0;
      out[i] = brain[i] ? out[i] : 0.0f;
    }
  }
  return r;
}

CTVolume equalize(const CTVolume& volume, const BrainMask& mask) {
  if (volume.dims() != mask.dims()) throw Error("equalize: mask is not aligned with volume '" + volume.id + "'");
  CTVolume out = volume;
  std::vector<float> sorted;
  for (std::size_t z = 0; z < volume.dims().nz; ++z) {
    auto src = volume.voxels.slice(z);
    auto m = mask.voxels.slice(z);
    auto dst = out.voxels.slice(z);
    sorted.clear();
    for (std::size_t i = 0; i < src.size(); ++i)
      if (m[i]) sorted.push_back(src[i]);
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!m[i]) {
        dst[i] = 0.0f;
        continue;
      }
      const auto rank = std::upper_bound(sorted.begin(), sorted.end(), src[i]) - sorted.begin();
      dst[i] = static_cast<float>(static_cast<double>(rank) / n);
    }
  }
  return out;
}

SliceStack classifier_input(const CTVolume& stripped, const BrainMask& brain, const WindowSet& windows) {
  if (stripped.dims() != brain.dims()) throw Error("classifier_input: brain mask not aligned with volume");
  const Dims& d = stripped.dims();
  SliceStack s{stripped.id, d.nx, d.ny, d.nz, std::vector<float>(d.nz * 3 * d.slice_voxels())};
  for (std::size_t z = 0; z < d.nz; ++z) {
    const ThreeChannelImage img = to_three_channel(slice_image(stripped, z), windows);
    auto m = brain.voxels.slice(z);
    float* dst = s.slice(z);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < d.slice_voxels(); ++i)
        dst[c * d.slice_voxels() + i] = m[i] ? img.channel(c)[i] : 0.0f;
  }
  return s;
}

Preprocessed preprocess_volume(const CTVolume& volume, const SkullStripConfig& config) {
  Preprocessed p;
  p.strip = strip_skull(volume, config);
  p.equalized = equalize(p.strip.stripped, p.strip.brain);
  return p;
}

}  // namespace ichseg
