#include "ichseg/cam.hpp"

#include <algorithm>
#include <cmath>

namespace ichseg::cam {

std::string to_string(Normalization n) { return n == Normalization::kPerVolume ? "per-volume" : "per-slice"; }

Normalization parse_normalization(const std::string& s) {
  if (s == "per-volume") return Normalization::kPerVolume;
  if (s == "per-slice") return Normalization::kPerSlice;
  throw Error("unknown CAM normalization '" + s + "' (expected per-volume or per-slice)");
}

void CAMConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("CAM threshold must lie in (0, 1)");
}

Image2D cam_from_features(const nn::Tensor& f, std::span<const float> weights) {
  if (f.n() != 1 || f.d() != 1) throw Error("CAM expects a single 2D feature map");
  if (weights.size() != f.c()) throw Error("CAM weight count does not match feature channels");
  Image2D out(f.w(), f.h(), 0.0f);
  const std::size_t plane = f.spatial();
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < f.c(); ++c) s += static_cast<double>(weights[c]) * f.data[c * plane + i];
    out.data[i] = s > 0.0 ? static_cast<float>(s) : 0.0f;
  }
  return out;
}

Image2D slice_cam(const classifier::ClassifierModel& model, const nn::Tensor& slice) {
  if (model.stage() == classifier::Stage::kBackboneSequence)
    throw Error("CAM needs the pooled-feature/FC structure; the model is in stage backbone+sequence");
  if (slice.n() != 1) throw Error("slice_cam takes exactly one slice");
  const nn::Linear& fc = model.fc();
  return cam_from_features(model.feature_map(slice), fc.weight.value);
}

Image2D upsample_bilinear(const Image2D& src, std::size_t nx, std::size_t ny) {
  if (src.nx == 0 || src.ny == 0) throw Error("cannot upsample an empty map");
  Image2D out(nx, ny);
  const double sx = static_cast<double>(src.nx) / nx, sy = static_cast<double>(src.ny) / ny;
  for (std::size_t y = 0; y < ny; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.ny - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, src.ny - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < nx; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.nx - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, src.nx - 1);
      const double tx = fx - x0;
      const double top = src(x0, y0) * (1 - tx) + src(x1, y0) * tx;
      const double bot = src(x0, y1) * (1 - tx) + src(x1, y1) * tx;
      out(x, y) = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
  return out;
}

namespace {

void minmax_range(float* v, std::size_t n) {
  if (n == 0) return;
  const auto [lo, hi] = std::minmax_element(v, v + n);
  const float a = *lo, b = *hi;
  if (!(b > a)) {
    std::fill(v, v + n, 0.0f);
    return;
  }
  const float inv = 1.0f / (b - a);
  for (std::size_t i = 0; i < n; ++i) v[i] = v[i] == b ? 1.0f : std::clamp((v[i] - a) * inv, 0.0f, 1.0f);
}

}  // namespace

void normalize(Grid3<float>& s, Normalization scope) {
  if (scope == Normalization::kPerVolume) {
    minmax_range(s.data().data(), s.size());
    return;
  }
  const std::size_t plane = s.dims().slice_voxels();
  for (std::size_t z = 0; z < s.dims().nz; ++z) minmax_range(s.data().data() + z * plane, plane);
}

CAMVolume assemble_cam(const classifier::ClassifierModel& model, const SliceStack& stack, const CTVolume& reference,
                       const CAMConfig& config) {
  config.validate();
  const Dims d = reference.dims();
  if (d.nx != stack.nx || d.ny != stack.ny || d.nz != stack.nz)
    throw Error("CAM stack " + stack.volume_id + " does not match the reference volume grid");
  CAMVolume out{reference.id, Grid3<float>(d, 0.0f), reference.spacing, reference.meta};
  std::vector<float> logits;
  if (config.gate_by_probability) logits = model.slice_logits(classifier::slice_tensor(stack, 0, stack.nz));
  for (std::size_t z = 0; z < d.nz; ++z) {
    if (config.gate_by_probability && logits[z] < 0.0f) continue;
    const Image2D up = upsample_bilinear(slice_cam(model, classifier::slice_tensor(stack, z, 1)), d.nx, d.ny);
    std::copy(up.data.begin(), up.data.end(), out.saliency.slice(z).begin());
  }
  normalize(out.saliency, config.normalization);
  return out;
}

BinaryMask threshold_cam(const CAMVolume& cam, double threshold) {
  BinaryMask m{cam.volume_id, Grid3<std::uint8_t>(cam.saliency.dims(), 0), cam.spacing, cam.meta};
  const auto& s = cam.saliency.data();
  auto& o = m.voxels.data();
  const float t = static_cast<float>(threshold);
  for (std::size_t i = 0; i < s.size(); ++i) o[i] = s[i] >= t ? 1 : 0;
  return m;
}

}  // namespace ichseg::cam
