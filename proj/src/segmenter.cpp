#include "ichseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "ichseg/classifier.hpp"
#include "ichseg/log.hpp"
#include "ichseg/nn/checkpoint.hpp"
#include "ichseg/nn/optim.hpp"

namespace ichseg::segmenter {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw Error("combined_loss: shape mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  if (a == 0) throw Error("combined_loss: empty patch");
}

double clamp_prob(double p) { return std::clamp(p, classifier::kBceEps, 1.0 - classifier::kBceEps); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void UNetConfig::validate() const {
  if (depth < 1) throw Error("depth must be at least 1");
  if (base_channels == 0) throw Error("base_channels must be positive");
  if (patch_x < 8 || patch_y < 8 || patch_z < 8) throw Error("patch dimensions must be at least 8");
  if (!(patch_overlap >= 0.0 && patch_overlap < 1.0)) throw Error("patch_overlap must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw Error("epsilon must be positive");
  nn::unet_pools(patch(), depth);
}

// ------------------------------------------------------------------ loss

LossTerms combined_loss(std::span<const float> y, std::span<const float> y_hat, double epsilon) {
  check_sizes(y.size(), y_hat.size());
  double inter = 0.0, sum_y = 0.0, sum_p = 0.0, bce = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = y[i];
    const double p = y_hat[i];
    if (!(p >= 0.0 && p <= 1.0)) throw Error("combined_loss: probability outside [0, 1]");
    inter += t * p;
    sum_y += t;
    sum_p += p;
    const double q = clamp_prob(p);
    bce -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
  }
  LossTerms out;
  out.dice = 1.0 - (2.0 * inter + epsilon) / (sum_y + sum_p + epsilon);
  out.bce = bce / static_cast<double>(y.size());
  return out;
}

std::vector<double> combined_loss_grad(std::span<const float> y, std::span<const float> y_hat, double epsilon) {
  check_sizes(y.size(), y_hat.size());
  double inter = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    inter += static_cast<double>(y[i]) * y_hat[i];
    sum += static_cast<double>(y[i]) + y_hat[i];
  }
  const double num = 2.0 * inter + epsilon;
  const double den = sum + epsilon;
  const double n = static_cast<double>(y.size());
  std::vector<double> g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double ddice = -(2.0 * y[i] * den - num) / (den * den);
    g[i] = ddice + classifier::bce_grad(y[i], y_hat[i]) / n;
  }
  return g;
}

LossTerms combined_loss_logits(std::span<const float> y, std::span<const float> z, double epsilon,
                               std::span<float> dz) {
  check_sizes(y.size(), z.size());
  check_sizes(y.size(), dz.size());
  std::vector<float> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = static_cast<float>(sigmoid(z[i]));
  const LossTerms loss = combined_loss(y, p, epsilon);
  double inter = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    inter += static_cast<double>(y[i]) * p[i];
    sum += static_cast<double>(y[i]) + p[i];
  }
  const double num = 2.0 * inter + epsilon;
  const double den = sum + epsilon;
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double s = p[i];
    const double ddice = -(2.0 * y[i] * den - num) / (den * den);
    dz[i] = static_cast<float>(ddice * s * (1.0 - s) + (s - y[i]) / n);
  }
  return loss;
}

// --------------------------------------------------------------- patches

Patch extract_patch(const CTVolume& image, const BinaryMask& mask, long x0, long y0, long z0, nn::Dim3 size) {
  const Dims d = image.dims();
  if (!(mask.dims() == d)) throw Error("patch source: mask and image dims differ");
  if (d.voxels() == 0) throw Error("patch source: empty volume");
  const Dims pd{size.w, size.h, size.d};
  Patch p{Grid3<float>(pd), Grid3<std::uint8_t>(pd), false};
  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  for (std::size_t z = 0; z < size.d; ++z) {
    const std::size_t sz = clampi(z0 + static_cast<long>(z), d.nz);
    for (std::size_t y = 0; y < size.h; ++y) {
      const std::size_t sy = clampi(y0 + static_cast<long>(y), d.ny);
      for (std::size_t x = 0; x < size.w; ++x) {
        const std::size_t sx = clampi(x0 + static_cast<long>(x), d.nx);
        p.image(x, y, z) = image.voxels(sx, sy, sz);
        p.mask(x, y, z) = mask.voxels(sx, sy, sz);
      }
    }
  }
  return p;
}

PatchSampler::PatchSampler(const CTVolume& image, const BinaryMask& mask, nn::Dim3 size, std::uint64_t seed)
    : image_(&image), mask_(&mask), size_(size), rng_(seed) {
  if (!(mask.dims() == image.dims())) throw Error("patch source: mask and image dims differ");
  const auto& m = mask.voxels.data();
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) lesion_.push_back(i);
}

long PatchSampler::uniform_start(std::size_t extent, std::size_t patch) {
  if (extent <= patch) return 0;
  return static_cast<long>(std::uniform_int_distribution<std::size_t>(0, extent - patch)(rng_));
}

Patch PatchSampler::next() {
  const Dims d = image_->dims();
  const bool lesion = !lesion_.empty() && draws_ % 2 == 0;
  ++draws_;
  long x0, y0, z0;
  if (lesion) {
    const std::size_t v = lesion_[std::uniform_int_distribution<std::size_t>(0, lesion_.size() - 1)(rng_)];
    const std::size_t c[3] = {v % d.nx, (v / d.nx) % d.ny, v / d.slice_voxels()};
    const std::size_t ext[3] = {d.nx, d.ny, d.nz};
    const std::size_t ps[3] = {size_.w, size_.h, size_.d};
    long s[3];
    for (int a = 0; a < 3; ++a) {
      const auto off = static_cast<long>(std::uniform_int_distribution<std::size_t>(0, ps[a] - 1)(rng_));
      const long hi = ext[a] > ps[a] ? static_cast<long>(ext[a] - ps[a]) : 0;
      s[a] = std::clamp<long>(static_cast<long>(c[a]) - off, 0, hi);
    }
    x0 = s[0];
    y0 = s[1];
    z0 = s[2];
  } else {
    x0 = uniform_start(d.nx, size_.w);
    y0 = uniform_start(d.ny, size_.h);
    z0 = uniform_start(d.nz, size_.d);
  }
  Patch p = extract_patch(*image_, *mask_, x0, y0, z0, size_);
  p.lesion_centred = lesion;
  return p;
}

std::vector<Patch> sample_patches(const CTVolume& image, const BinaryMask& mask, const UNetConfig& config,
                                  std::uint64_t seed, std::size_t count) {
  PatchSampler s(image, mask, config.patch(), seed);
  std::vector<Patch> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(s.next());
  return out;
}

// ----------------------------------------------------------------- model

SegmenterModel::SegmenterModel(const UNetConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  nn::UNetSpec spec;
  spec.depth = config.depth;
  spec.base_channels = config.base_channels;
  spec.in_channels = 1;
  spec.pools = nn::unet_pools(config.patch(), config.depth);
  std::mt19937_64 rng(seed);
  net_ = nn::UNet3d(spec, rng);
}

nn::Tensor SegmenterModel::logits(const nn::Tensor& patches, nn::UNet3d::Trace* trace) const {
  const nn::Dim3 p = patch();
  if (patches.c() != 1 || patches.d() != p.d || patches.h() != p.h || patches.w() != p.w)
    throw Error("segmenter expects N x 1 x " + std::to_string(p.d) + " x " + std::to_string(p.h) + " x " +
                std::to_string(p.w) + " patches");
  return net_.forward(patches, trace);
}

nn::Tensor SegmenterModel::probabilities(const nn::Tensor& patches) const {
  nn::Tensor out = logits(patches);
  for (float& v : out.data) v = static_cast<float>(sigmoid(v));
  return out;
}

nn::ParamRefs SegmenterModel::parameters() {
  nn::ParamRefs ps;
  net_.collect(ps);
  return ps;
}

nn::ConstParamRefs SegmenterModel::parameters() const {
  nn::ConstParamRefs ps;
  net_.collect(ps);
  return ps;
}

std::uint64_t SegmenterModel::checksum() const { return nn::checksum(parameters()); }

void SegmenterModel::save(const std::filesystem::path& path) const {
  const nlohmann::json meta{{"kind", "unet"},
                            {"depth", config_.depth},
                            {"base_channels", config_.base_channels},
                            {"patch", {config_.patch_x, config_.patch_y, config_.patch_z}},
                            {"patch_overlap", config_.patch_overlap},
                            {"epsilon", config_.epsilon}};
  nn::save_checkpoint(path, meta, parameters());
}

SegmenterModel SegmenterModel::load(const std::filesystem::path& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  if (meta.value("kind", "") != "unet") throw Error(path.string() + ": not a segmenter checkpoint");
  UNetConfig c;
  c.depth = meta.at("depth").get<std::size_t>();
  c.base_channels = meta.at("base_channels").get<std::size_t>();
  const auto& p = meta.at("patch");
  c.patch_x = p.at(0).get<std::size_t>();
  c.patch_y = p.at(1).get<std::size_t>();
  c.patch_z = p.at(2).get<std::size_t>();
  c.patch_overlap = meta.at("patch_overlap").get<double>();
  c.epsilon = meta.at("epsilon").get<double>();
  SegmenterModel m(c, 0);
  nn::load_checkpoint(path, m.parameters());
  return m;
}

// -------------------------------------------------------------- training

void SegTrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw Error("learning_rate must be non-negative");
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (max_epochs < 1) throw Error("max_epochs must be at least 1");
  if (patience < 1 || patience > max_epochs) throw Error("patience must lie in [1, max_epochs]");
  if (patches_per_epoch == 0) throw Error("patches_per_epoch must be positive");
}

void SegTrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(path.string() + ": cannot write training log");
  out << "epoch,train_loss,val_loss,val_dice_term\n";
  out.precision(10);
  for (const auto& e : epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_dice_term << '\n';
}

namespace {

nn::Tensor pack_images(const std::vector<Patch>& ps, std::size_t first, std::size_t count, nn::Dim3 size) {
  nn::Tensor t({count, 1, size.d, size.h, size.w});
  for (std::size_t i = 0; i < count; ++i)
    std::copy(ps[first + i].image.data().begin(), ps[first + i].image.data().end(), t.sample(i));
  return t;
}

std::vector<float> mask_floats(const Patch& p) { return {p.mask.data().begin(), p.mask.data().end()}; }

/// Mean combined loss per patch; fills dlogits (scaled by 1 / count) when given.
LossTerms batch_loss(const nn::Tensor& logits, const std::vector<Patch>& ps, std::size_t first, double epsilon,
                     nn::Tensor* dlogits) {
  const std::size_t count = logits.n();
  const std::size_t vox = logits.sample_size();
  LossTerms sum;
  std::vector<float> dz(vox);
  for (std::size_t i = 0; i < count; ++i) {
    const auto y = mask_floats(ps[first + i]);
    const std::span<const float> z(logits.sample(i), vox);
    const LossTerms l = combined_loss_logits(y, z, epsilon, dz);
    sum.dice += l.dice;
    sum.bce += l.bce;
    if (dlogits)
      for (std::size_t v = 0; v < vox; ++v) dlogits->sample(i)[v] = dz[v] / static_cast<float>(count);
  }
  sum.dice /= static_cast<double>(count);
  sum.bce /= static_cast<double>(count);
  return sum;
}

LossTerms evaluate(const SegmenterModel& model, const std::vector<Patch>& ps, std::size_t batch) {
  LossTerms sum;
  for (std::size_t first = 0; first < ps.size(); first += batch) {
    const std::size_t count = std::min(batch, ps.size() - first);
    const nn::Tensor logits = model.logits(pack_images(ps, first, count, model.patch()));
    const LossTerms l = batch_loss(logits, ps, first, model.config().epsilon, nullptr);
    sum.dice += l.dice * static_cast<double>(count);
    sum.bce += l.bce * static_cast<double>(count);
  }
  sum.dice /= static_cast<double>(ps.size());
  sum.bce /= static_cast<double>(ps.size());
  return sum;
}

}  // namespace

SegmenterModel train_unet(const std::vector<TrainingVolume>& train, const std::vector<TrainingVolume>& val,
                          const UNetConfig& config, const SegTrainConfig& tc, SegTrainLog* out_log) {
  config.validate();
  tc.validate();
  const bool any_positive =
      std::any_of(train.begin(), train.end(), [](const TrainingVolume& v) { return v.target.count() > 0; });
  if (!any_positive) throw Error("no positive supervision: every training mask is empty");

  const nn::Dim3 size = config.patch();
  std::vector<PatchSampler> samplers;
  samplers.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    samplers.emplace_back(train[i].image, train[i].target, size, tc.seed * 1000003ull + i + 1);

  std::vector<Patch> val_patches;
  const auto& val_source = val.empty() ? train : val;
  const std::size_t per_volume = std::max<std::size_t>(tc.val_patches_per_volume, 1);
  for (std::size_t i = 0; i < val_source.size(); ++i) {
    auto ps = sample_patches(val_source[i].image, val_source[i].target, config, tc.seed * 7919ull + 31 * i + 17,
                             per_volume);
    std::move(ps.begin(), ps.end(), std::back_inserter(val_patches));
  }

  SegmenterModel model(config, tc.seed);
  nn::ParamRefs params = model.parameters();
  nn::OptimizerConfig oc;
  oc.kind = nn::OptimizerKind::kAdam;
  oc.learning_rate = tc.learning_rate;
  nn::Optimizer opt(params, oc);
  std::mt19937_64 pick(tc.seed ^ 0x5e6d3a1full);
  std::uniform_int_distribution<std::size_t> which(0, train.size() - 1);

  SegTrainLog local;
  SegTrainLog& out = out_log ? *out_log : local;
  out = SegTrainLog{};
  std::vector<std::vector<float>> best;
  for (const auto* p : params) best.push_back(p->value);
  double best_loss = std::numeric_limits<double>::infinity();
  int since = 0;

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    double train_loss = 0.0;
    std::size_t seen = 0;
    while (seen < tc.patches_per_epoch) {
      const std::size_t count = std::min(tc.batch_size, tc.patches_per_epoch - seen);
      std::vector<Patch> batch;
      for (std::size_t i = 0; i < count; ++i) batch.push_back(samplers[which(pick)].next());
      nn::UNet3d::Trace trace;
      const nn::Tensor logits = model.logits(pack_images(batch, 0, count, size), &trace);
      nn::Tensor dlogits(logits.n(), 1, size.d, size.h, size.w);
      const LossTerms l = batch_loss(logits, batch, 0, config.epsilon, &dlogits);
      opt.zero_grad();
      model.backward(trace, dlogits);
      opt.step();
      train_loss += l.total() * static_cast<double>(count);
      seen += count;
    }
    train_loss /= static_cast<double>(seen);
    const LossTerms v = evaluate(model, val_patches, tc.batch_size);
    out.epochs.push_back({epoch, train_loss, v.total(), v.dice});
    log::info("unet epoch " + std::to_string(epoch) + " train_loss=" + std::to_string(train_loss) +
              " val_loss=" + std::to_string(v.total()));
    if (v.total() < best_loss) {
      best_loss = v.total();
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i]->value;
      out.best_epoch = epoch;
      since = 0;
    } else if (++since >= tc.patience) {
      out.stopped_early = epoch < tc.max_epochs;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return model;
}

// ------------------------------------------------------------- inference

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, double overlap) {
  if (patch == 0) throw Error("window size must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw Error("patch_overlap must lie in [0, 1)");
  if (extent <= patch) return {0};
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(patch * (1.0 - overlap))));
  std::vector<std::size_t> s;
  for (std::size_t p = 0; p + patch < extent; p += stride) s.push_back(p);
  s.push_back(extent - patch);
  return s;
}

SegMask predict_equalized(const PatchPredictor& model, const CTVolume& equalized, const BrainMask& brain,
                          const PredictConfig& config) {
  const Dims d = equalized.dims();
  if (!(brain.dims() == d)) throw Error("predict: brain mask dims differ from the volume");
  if (!(config.threshold > 0.0 && config.threshold < 1.0)) throw Error("threshold must lie in (0, 1)");
  const nn::Dim3 size = model.patch();
  const auto xs = window_starts(d.nx, size.w, config.patch_overlap);
  const auto ys = window_starts(d.ny, size.h, config.patch_overlap);
  const auto zs = window_starts(d.nz, size.d, config.patch_overlap);

  std::vector<double> sum(d.voxels(), 0.0);
  std::vector<std::uint32_t> hits(d.voxels(), 0);
  const BinaryMask none = mask_like(equalized);
  for (std::size_t z0 : zs)
    for (std::size_t y0 : ys)
      for (std::size_t x0 : xs) {
        const Patch p = extract_patch(equalized, none, static_cast<long>(x0), static_cast<long>(y0),
                                      static_cast<long>(z0), size);
        nn::Tensor t({1, 1, size.d, size.h, size.w});
        std::copy(p.image.data().begin(), p.image.data().end(), t.data.begin());
        const nn::Tensor prob = model.probabilities(t);
        for (std::size_t z = 0; z < size.d && z0 + z < d.nz; ++z)
          for (std::size_t y = 0; y < size.h && y0 + y < d.ny; ++y)
            for (std::size_t x = 0; x < size.w && x0 + x < d.nx; ++x) {
              const std::size_t i = equalized.voxels.index(x0 + x, y0 + y, z0 + z);
              sum[i] += prob.data[x + size.w * (y + size.h * z)];
              ++hits[i];
            }
      }

  SegMask out;
  out.volume_id = equalized.id;
  out.threshold = config.threshold;
  out.probabilities = Grid3<float>(d);
  out.binarized = mask_like(equalized, equalized.id);
  for (std::size_t i = 0; i < d.voxels(); ++i) {
    const float p = brain.voxels[i] ? static_cast<float>(sum[i] / hits[i]) : 0.0f;
    out.probabilities[i] = p;
    out.binarized.voxels[i] = p >= static_cast<float>(config.threshold) ? 1 : 0;
  }
  if (config.min_component_size > 0) {
    remove_small_components(out.binarized, config.min_component_size);
    for (std::size_t i = 0; i < d.voxels(); ++i)
      if (!out.binarized.voxels[i]) out.probabilities[i] = 0.0f;
  }
  return out;
}

SegMask predict_volume(const SegmenterModel& model, const CTVolume& raw, const SkullStripConfig& strip,
                       const PredictConfig& config) {
  const Preprocessed pre = preprocess_volume(raw, strip);
  BrainMask brain = pre.strip.brain;
  for (std::size_t i = 0; i < brain.voxels.size(); ++i)
    if (raw.voxels[i] <= config.air_hu) brain.voxels[i] = 0;
  return predict_equalized(model, pre.equalized, brain, config);
}

void remove_small_components(BinaryMask& mask, std::size_t min_size) {
  if (min_size <= 1) return;
  const Dims d = mask.dims();
  auto& m = mask.voxels.data();
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<std::size_t> comp, stack;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (!m[start] || seen[start]) continue;
    comp.clear();
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      comp.push_back(v);
      const long x = static_cast<long>(v % d.nx), y = static_cast<long>((v / d.nx) % d.ny),
                 z = static_cast<long>(v / d.slice_voxels());
      for (long dz = -1; dz <= 1; ++dz)
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long nx = x + dx, ny = y + dy, nz = z + dz;
            if (nx < 0 || ny < 0 || nz < 0 || nx >= static_cast<long>(d.nx) || ny >= static_cast<long>(d.ny) ||
                nz >= static_cast<long>(d.nz))
              continue;
            const std::size_t u = mask.voxels.index(nx, ny, nz);
            if (m[u] && !seen[u]) {
              seen[u] = 1;
              stack.push_back(u);
            }
          }
    }
    if (comp.size() < min_size)
      for (std::size_t v : comp) m[v] = 0;
  }
}

}  // namespace ichseg::segmenter
