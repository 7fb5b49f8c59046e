#include "ichseg/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "ichseg/log.hpp"
#include "ichseg/nn/checkpoint.hpp"

namespace ichseg::classifier {

namespace {

constexpr std::size_t kInferenceChunk = 16;

float sigmoid(float z) {
  if (z >= 0.0f) return 1.0f / (1.0f + std::exp(-z));
  const float e = std::exp(z);
  return e / (1.0f + e);
}

void check_target(double y) {
  if (y != 0.0f && y != 1.0f) throw Error("BCE target must be 0 or 1, got " + std::to_string(y));
}

void check_probability(double p) {
  if (!(p >= 0.0f && p <= 1.0f)) throw Error("BCE probability outside [0, 1]: " + std::to_string(p));
}

struct SliceRef {
  std::size_t volume;
  std::size_t z;
};

void check_dataset(const SliceDataset& ds, const char* what, std::size_t& nx, std::size_t& ny) {
  for (const auto& item : ds) {
    if (item.labels.labels.size() != item.stack.nz)
      throw Error(std::string(what) + " volume " + item.stack.volume_id + ": label count does not match slice count");
    if (nx == 0) {
      nx = item.stack.nx;
      ny = item.stack.ny;
    } else if (item.stack.nx != nx || item.stack.ny != ny) {
      throw Error(std::string(what) + " volume " + item.stack.volume_id + ": slice size differs from the cohort");
    }
  }
}

/// Logit-space BCE for one slice: the loss on the clamped probability.
double logit_loss(float z, float y) { return bce_loss(y, sigmoid(z)); }

using Snapshot = std::vector<std::vector<float>>;

Snapshot snapshot(const nn::ParamRefs& ps) {
  Snapshot s;
  s.reserve(ps.size());
  for (const nn::Parameter* p : ps) s.push_back(p->value);
  return s;
}

void restore(const nn::ParamRefs& ps, const Snapshot& s) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = s[i];
}

struct ValResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

ValResult validate_model(const ClassifierModel& model, const SliceDataset& val) {
  double loss = 0.0;
  std::size_t correct = 0, count = 0;
  for (const auto& item : val) {
    const auto logits = model.stack_logits(item.stack);
    for (std::size_t z = 0; z < logits.size(); ++z) {
      const float y = item.labels.labels[z] ? 1.0f : 0.0f;
      loss += logit_loss(logits[z], y);
      correct += (logits[z] >= 0.0f) == (y == 1.0f);
      ++count;
    }
  }
  if (count == 0) throw Error("validation set is empty");
  return {loss / static_cast<double>(count), static_cast<double>(correct) / static_cast<double>(count)};
}

/// Shared epoch loop with early stopping on validation loss; restores the best parameters.
template <class EpochFn, class ValFn>
void fit(const nn::ParamRefs& params, const TrainConfig& tc, TrainLog* out_log, const std::string& stage, EpochFn epoch_fn,
         ValFn val_fn) {
  nn::OptimizerConfig oc;
  oc.kind = tc.optimizer;
  oc.learning_rate = tc.learning_rate;
  oc.momentum = tc.momentum;
  oc.weight_decay = tc.weight_decay;
  nn::Optimizer opt(params, oc);
  TrainLog local;
  TrainLog& out = out_log ? *out_log : local;
  out = TrainLog{};
  Snapshot best = snapshot(params);
  double best_loss = std::numeric_limits<double>::infinity();
  int since = 0;
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const double train_loss = epoch_fn(opt);
    const ValResult v = val_fn();
    out.epochs.push_back({epoch, train_loss, v.loss, v.accuracy});
    log::info(stage + " epoch " + std::to_string(epoch) + " train_loss=" + std::to_string(train_loss) +
              " val_loss=" + std::to_string(v.loss) + " val_acc=" + std::to_string(v.accuracy));
    if (v.loss < best_loss) {
      best_loss = v.loss;
      best = snapshot(params);
      out.best_epoch = epoch;
      since = 0;
    } else if (++since >= tc.patience) {
      out.stopped_early = epoch < tc.max_epochs;
      break;
    }
  }
  restore(params, best);
}

void fill_slice(const SliceStack& stack, std::size_t z, float* dst) {
  std::copy(stack.slice(z), stack.slice(z) + stack.slice_floats(), dst);
}

}  // namespace

// ------------------------------------------------------------------ loss

double bce_loss(double y, double y_hat) {
  check_target(y);
  check_probability(y_hat);
  const double p = std::clamp(y_hat, kBceEps, 1.0 - kBceEps);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

double bce_loss(std::span<const float> y, std::span<const float> y_hat) {
  if (y.size() != y_hat.size()) throw Error("BCE target and prediction sizes differ");
  if (y.empty()) throw Error("BCE over an empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += bce_loss(y[i], y_hat[i]);
  return s / static_cast<double>(y.size());
}

double bce_grad(double y, double y_hat) {
  check_target(y);
  check_probability(y_hat);
  const double p = y_hat;
  if (p < kBceEps || p > 1.0 - kBceEps) return 0.0;
  return -y / p + (1.0 - y) / (1.0 - p);
}

// --------------------------------------------------------------- configs

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kBackbone: return "backbone";
    case Stage::kBackboneSequence: return "backbone+sequence";
    default: return "final";
  }
}

Stage parse_stage(const std::string& s) {
  if (s == "backbone") return Stage::kBackbone;
  if (s == "backbone+sequence") return Stage::kBackboneSequence;
  if (s == "final") return Stage::kFinal;
  throw Error("unknown classifier stage '" + s + "'");
}

std::string to_string(Direction d) { return d == Direction::kForward ? "forward" : "bidirectional"; }

Direction parse_direction(const std::string& s) {
  if (s == "forward") return Direction::kForward;
  if (s == "bidirectional") return Direction::kBidirectional;
  throw Error("unknown sequence direction '" + s + "' (expected forward or bidirectional)");
}

std::size_t BackboneConfig::feature_dim() const { return nn::resnet_spec(architecture_id).feature_dim(); }

void BackboneConfig::validate() const {
  if (input_channels != 3) throw Error("classifier input must have 3 channels");
  if (feature_dim() == 0) throw Error("feature_dim must be positive");
}

void SequenceHeadConfig::validate() const {
  if (window_length < 2) throw Error("window_length must be at least 2");
  if (hidden_dim == 0) throw Error("hidden_dim must be positive");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw Error("learning_rate must be non-negative");
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be non-negative");
  if (max_epochs < 1) throw Error("max_epochs must be at least 1");
  if (patience < 1 || patience > max_epochs) throw Error("patience must lie in [1, max_epochs]");
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(path.string() + ": cannot write training log");
  out << "epoch,train_loss,val_loss,val_accuracy\n";
  out.precision(10);
  for (const auto& e : epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_accuracy << '\n';
}

nn::Tensor slice_tensor(const SliceStack& stack, std::size_t first, std::size_t count) {
  if (first + count > stack.nz) throw Error("slice range exceeds stack depth");
  nn::Tensor t(count, SliceStack::kChannels, 1, stack.ny, stack.nx);
  std::copy(stack.slice(first), stack.slice(first) + count * stack.slice_floats(), t.data.begin());
  return t;
}

std::vector<std::size_t> window_starts(std::size_t slices, std::size_t window_length) {
  if (window_length == 0) throw Error("window_length must be positive");
  std::vector<std::size_t> s;
  for (std::size_t z = 0; z < slices; z += window_length) s.push_back(z);
  return s;
}

// ----------------------------------------------------------------- model

struct ClassifierModel::SeqTrace {
  nn::Lstm::Trace forward;
  nn::Lstm::Trace backward;
  nn::Tensor hidden;
};

ClassifierModel::ClassifierModel(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  std::mt19937_64 rng(seed);
  backbone_ = nn::ResNet(nn::resnet_spec(config.architecture_id), config.input_channels, rng);
  fc_ = nn::Linear("fc", backbone_.feature_dim(), 1, rng);
}

void ClassifierModel::check_slices(const nn::Tensor& slices) const {
  if (slices.c() != config_.input_channels || slices.d() != 1)
    throw Error("classifier expects N x 3 x 1 x H x W slices, got " + std::to_string(slices.c()) + " channels and depth " +
                std::to_string(slices.d()));
}

nn::Tensor ClassifierModel::feature_map(const nn::Tensor& slices) const {
  check_slices(slices);
  return backbone_.forward(slices);
}

std::vector<float> ClassifierModel::slice_logits(const nn::Tensor& slices) const {
  check_slices(slices);
  if (stage_ == Stage::kBackboneSequence)
    throw Error("stage mismatch: per-slice FC logits are unavailable while the sequence head is attached");
  std::vector<float> out;
  out.reserve(slices.n());
  const std::size_t per = slices.sample_size();
  for (std::size_t first = 0; first < slices.n(); first += kInferenceChunk) {
    const std::size_t count = std::min(kInferenceChunk, slices.n() - first);
    nn::Tensor chunk(count, slices.c(), 1, slices.h(), slices.w());
    std::copy(slices.sample(first), slices.sample(first) + count * per, chunk.data.begin());
    const nn::Tensor z = fc_.forward(nn::global_avg_pool(backbone_.forward(chunk)));
    out.insert(out.end(), z.data.begin(), z.data.end());
  }
  return out;
}

float ClassifierModel::predict_logit(const nn::Tensor& slice) const {
  if (slice.n() != 1) throw Error("predict_logit takes exactly one slice");
  return slice_logits(slice)[0];
}

nn::Tensor ClassifierModel::sequence_forward(const nn::Tensor& pooled, std::size_t batch, std::size_t steps,
                                             SeqTrace* trace) const {
  nn::Tensor seq = pooled;
  seq.shape = {batch, steps, pooled.c(), 1, 1};
  nn::Tensor h = seq_->forward_lstm.forward(seq, trace ? &trace->forward : nullptr);
  const std::size_t hd = seq_->forward_lstm.hidden_size();
  h.shape = {batch * steps, hd, 1, 1, 1};
  if (seq_->backward_lstm) {
    nn::Tensor hb = nn::reverse_time(seq_->backward_lstm->forward(nn::reverse_time(seq), trace ? &trace->backward : nullptr));
    hb.shape = {batch * steps, hd, 1, 1, 1};
    h = nn::concat_channels(h, hb);
  }
  nn::Tensor z = seq_->out.forward(h);
  if (trace) trace->hidden = std::move(h);
  return z;
}

nn::Tensor ClassifierModel::sequence_backward(const nn::Tensor& pooled, std::size_t batch, std::size_t steps,
                                              const SeqTrace& trace, const nn::Tensor& dlogits) {
  nn::Tensor dh = seq_->out.backward(trace.hidden, dlogits);
  const std::size_t hd = seq_->forward_lstm.hidden_size();
  nn::Tensor seq = pooled;
  seq.shape = {batch, steps, pooled.c(), 1, 1};
  nn::Tensor dhf, dhb;
  if (seq_->backward_lstm)
    nn::split_channels(dh, hd, dhf, dhb);
  else
    dhf = std::move(dh);
  dhf.shape = {batch, steps, hd, 1, 1};
  nn::Tensor dseq = seq_->forward_lstm.backward(seq, trace.forward, dhf);
  if (seq_->backward_lstm) {
    dhb.shape = {batch, steps, hd, 1, 1};
    const nn::Tensor d = seq_->backward_lstm->backward(nn::reverse_time(seq), trace.backward, nn::reverse_time(dhb));
    nn::add_inplace(dseq, nn::reverse_time(d));
  }
  dseq.shape = pooled.shape;
  return dseq;
}

std::vector<float> ClassifierModel::window_logits(const nn::Tensor& window) const {
  check_slices(window);
  if (stage_ != Stage::kBackboneSequence) throw Error("stage mismatch: no sequence head attached");
  const nn::Tensor pooled = nn::global_avg_pool(backbone_.forward(window));
  return sequence_forward(pooled, 1, window.n(), nullptr).data;
}

std::vector<float> ClassifierModel::stack_logits(const SliceStack& stack) const {
  if (stage_ != Stage::kBackboneSequence) return slice_logits(slice_tensor(stack, 0, stack.nz));
  const std::size_t len = seq_config_->window_length;
  std::vector<float> out;
  out.reserve(stack.nz);
  for (std::size_t start : window_starts(stack.nz, len)) {
    nn::Tensor w(len, SliceStack::kChannels, 1, stack.ny, stack.nx);
    for (std::size_t j = 0; j < len; ++j) fill_slice(stack, std::min(start + j, stack.nz - 1), w.sample(j));
    const auto z = window_logits(w);
    for (std::size_t j = 0; j < len && start + j < stack.nz; ++j) out.push_back(z[j]);
  }
  return out;
}

const nn::Linear& ClassifierModel::fc() const {
  if (stage_ == Stage::kBackboneSequence) throw Error("stage mismatch: FC head is detached in stage backbone+sequence");
  return fc_;
}

nn::Linear& ClassifierModel::mutable_fc() {
  if (stage_ == Stage::kBackboneSequence) throw Error("stage mismatch: FC head is detached in stage backbone+sequence");
  return fc_;
}

std::uint64_t ClassifierModel::backbone_checksum() const {
  nn::ConstParamRefs ps;
  backbone_.collect(ps);
  return nn::checksum(ps);
}

nn::ConstParamRefs ClassifierModel::parameters() const {
  nn::ConstParamRefs ps;
  backbone_.collect(ps);
  fc_.collect(ps);
  if (seq_) {
    seq_->forward_lstm.collect(ps);
    if (seq_->backward_lstm) seq_->backward_lstm->collect(ps);
    seq_->out.collect(ps);
  }
  return ps;
}

nn::ParamRefs ClassifierModel::trainable_params() {
  nn::ParamRefs ps;
  backbone_.collect(ps);
  if (stage_ == Stage::kBackboneSequence) {
    seq_->forward_lstm.collect(ps);
    if (seq_->backward_lstm) seq_->backward_lstm->collect(ps);
    seq_->out.collect(ps);
  } else {
    fc_.collect(ps);
  }
  return ps;
}

void ClassifierModel::save(const std::filesystem::path& path) const {
  nlohmann::json meta{{"kind", "classifier"},
                      {"stage", to_string(stage_)},
                      {"architecture_id", config_.architecture_id},
                      {"input_channels", config_.input_channels}};
  if (seq_config_)
    meta["sequence"] = {{"hidden_dim", seq_config_->hidden_dim},
                        {"window_length", seq_config_->window_length},
                        {"direction", to_string(seq_config_->direction)}};
  nn::save_checkpoint(path, meta, parameters());
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  if (meta.value("kind", "") != "classifier") throw Error(path.string() + ": not a classifier checkpoint");
  BackboneConfig bc;
  bc.architecture_id = meta.at("architecture_id").get<std::string>();
  bc.input_channels = meta.at("input_channels").get<std::size_t>();
  ClassifierModel m(bc, 0);
  m.stage_ = parse_stage(meta.at("stage").get<std::string>());
  if (meta.contains("sequence")) {
    SequenceHeadConfig sc;
    sc.hidden_dim = meta["sequence"].at("hidden_dim").get<std::size_t>();
    sc.window_length = meta["sequence"].at("window_length").get<std::size_t>();
    sc.direction = parse_direction(meta["sequence"].at("direction").get<std::string>());
    const Stage stage = m.stage_;
    m.stage_ = Stage::kBackbone;
    m = attach_sequence_head(std::move(m), sc, 0);
    m.stage_ = stage;
  }
  nn::ParamRefs ps;
  m.backbone_.collect(ps);
  m.fc_.collect(ps);
  if (m.seq_) {
    m.seq_->forward_lstm.collect(ps);
    if (m.seq_->backward_lstm) m.seq_->backward_lstm->collect(ps);
    m.seq_->out.collect(ps);
  }
  nn::load_checkpoint(path, ps);
  return m;
}

// -------------------------------------------------------------- training

ClassifierModel train_backbone(const SliceDataset& train, const SliceDataset& val, const BackboneConfig& config,
                               const TrainConfig& tc, TrainLog* log) {
  tc.validate();
  std::size_t nx = 0, ny = 0;
  check_dataset(train, "training", nx, ny);
  check_dataset(val, "validation", nx, ny);
  std::vector<SliceRef> pos, neg;
  for (std::size_t v = 0; v < train.size(); ++v)
    for (std::size_t z = 0; z < train[v].stack.nz; ++z) (train[v].labels.labels[z] ? pos : neg).push_back({v, z});
  if (pos.empty() || neg.empty())
    throw Error("training set has a single class (" + std::to_string(pos.size()) + " positive, " +
                std::to_string(neg.size()) + " negative slices); binary cross-entropy is degenerate");

  ClassifierModel model(config, tc.seed);
  const nn::ParamRefs params = model.trainable_params();
  std::mt19937_64 rng(tc.seed ^ 0x5eedULL);

  auto epoch_fn = [&](nn::Optimizer& opt) {
    std::vector<SliceRef> order = neg;
    order.insert(order.end(), pos.begin(), pos.end());
    if (tc.rebalance) {
      const auto& minority = pos.size() < neg.size() ? pos : neg;
      const std::size_t deficit = std::max(pos.size(), neg.size()) - minority.size();
      for (std::size_t i = 0; i < deficit; ++i) order.push_back(minority[i % minority.size()]);
    }
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t first = 0; first < order.size(); first += tc.batch_size) {
      const std::size_t count = std::min(tc.batch_size, order.size() - first);
      nn::Tensor x(count, SliceStack::kChannels, 1, ny, nx);
      std::vector<float> y(count);
      for (std::size_t i = 0; i < count; ++i) {
        const SliceRef r = order[first + i];
        fill_slice(train[r.volume].stack, r.z, x.sample(i));
        y[i] = train[r.volume].labels.labels[r.z] ? 1.0f : 0.0f;
      }
      opt.zero_grad();
      nn::ResNet::Trace trace;
      const nn::Tensor feat = model.backbone_.forward(x, &trace);
      const nn::Tensor pooled = nn::global_avg_pool(feat);
      const nn::Tensor z = model.fc_.forward(pooled);
      nn::Tensor dz = nn::Tensor::matrix(count, 1);
      for (std::size_t i = 0; i < count; ++i) {
        total += logit_loss(z.data[i], y[i]);
        dz.data[i] = (sigmoid(z.data[i]) - y[i]) / static_cast<float>(count);
      }
      const nn::Tensor dpooled = model.fc_.backward(pooled, dz);
      model.backbone_.backward(trace, nn::global_avg_pool_backward(feat, dpooled));
      opt.step();
    }
    return total / static_cast<double>(order.size());
  };
  fit(params, tc, log, "backbone", epoch_fn, [&] { return validate_model(model, val); });
  return model;
}

ClassifierModel attach_sequence_head(ClassifierModel model, const SequenceHeadConfig& config, std::uint64_t seed) {
  if (model.stage_ != Stage::kBackbone)
    throw Error("stage mismatch: attach_sequence_head needs a backbone-stage model, got " + to_string(model.stage_));
  config.validate();
  std::mt19937_64 rng(seed ^ 0x5e9ULL);
  const std::size_t c = model.backbone_.feature_dim();
  const bool bi = config.direction == Direction::kBidirectional;
  ClassifierModel::SequenceHead head{nn::Lstm("seq.forward", c, config.hidden_dim, rng), std::nullopt, {}};
  if (bi) head.backward_lstm.emplace("seq.backward", c, config.hidden_dim, rng);
  head.out = nn::Linear("seq.out", (bi ? 2 : 1) * config.hidden_dim, 1, rng);
  model.seq_ = std::move(head);
  model.seq_config_ = config;
  model.stage_ = Stage::kBackboneSequence;
  return model;
}

ClassifierModel train_sequence(ClassifierModel model, const SliceDataset& train, const SliceDataset& val,
                               const TrainConfig& tc, TrainLog* log) {
  if (model.stage_ != Stage::kBackboneSequence)
    throw Error("stage mismatch: train_sequence needs a backbone+sequence model, got " + to_string(model.stage_));
  tc.validate();
  std::size_t nx = 0, ny = 0;
  check_dataset(train, "training", nx, ny);
  check_dataset(val, "validation", nx, ny);
  const std::size_t len = model.seq_config_->window_length;
  std::vector<SliceRef> windows;
  for (std::size_t v = 0; v < train.size(); ++v)
    for (std::size_t s : window_starts(train[v].stack.nz, len)) windows.push_back({v, s});
  if (windows.empty()) throw Error("no training windows");

  const nn::ParamRefs params = model.trainable_params();
  std::mt19937_64 rng(tc.seed ^ 0x5e0ULL);
  auto epoch_fn = [&](nn::Optimizer& opt) {
    std::vector<SliceRef> order = windows;
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t first = 0; first < order.size(); first += tc.batch_size) {
      const std::size_t count = std::min(tc.batch_size, order.size() - first);
      nn::Tensor x(count * len, SliceStack::kChannels, 1, ny, nx);
      std::vector<float> y(count * len, 0.0f);
      std::vector<std::uint8_t> valid(count * len, 0);
      std::size_t nvalid = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const SliceRef w = order[first + i];
        const LabeledStack& item = train[w.volume];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t z = w.z + j;
          fill_slice(item.stack, std::min(z, item.stack.nz - 1), x.sample(i * len + j));
          if (z < item.stack.nz) {
            valid[i * len + j] = 1;
            y[i * len + j] = item.labels.labels[z] ? 1.0f : 0.0f;
            ++nvalid;
          }
        }
      }
      opt.zero_grad();
      nn::ResNet::Trace trace;
      const nn::Tensor feat = model.backbone_.forward(x, &trace);
      const nn::Tensor pooled = nn::global_avg_pool(feat);
      ClassifierModel::SeqTrace st;
      const nn::Tensor z = model.sequence_forward(pooled, count, len, &st);
      nn::Tensor dz = nn::Tensor::matrix(count * len, 1);
      for (std::size_t i = 0; i < count * len; ++i) {
        if (!valid[i]) continue;
        total += logit_loss(z.data[i], y[i]);
        dz.data[i] = (sigmoid(z.data[i]) - y[i]) / static_cast<float>(nvalid);
      }
      counted += nvalid;
      const nn::Tensor dpooled = model.sequence_backward(pooled, count, len, st, dz);
      model.backbone_.backward(trace, nn::global_avg_pool_backward(feat, dpooled));
      opt.step();
    }
    return total / static_cast<double>(counted);
  };
  fit(params, tc, log, "sequence", epoch_fn, [&] { return validate_model(model, val); });
  return model;
}

ClassifierModel finalize(ClassifierModel model, const SliceDataset& train, const FinalizeConfig& config) {
  if (model.stage_ != Stage::kBackboneSequence)
    throw Error("stage mismatch: finalize needs a backbone+sequence model, got " + to_string(model.stage_));
  if (config.epochs < 0) throw Error("finalize epochs must be non-negative");
  std::size_t nx = 0, ny = 0;
  check_dataset(train, "training", nx, ny);

  std::vector<float> feats, labels;
  const std::size_t c = model.backbone_.feature_dim();
  for (const auto& item : train)
    for (std::size_t first = 0; first < item.stack.nz; first += kInferenceChunk) {
      const std::size_t count = std::min(kInferenceChunk, item.stack.nz - first);
      const nn::Tensor pooled = nn::global_avg_pool(model.backbone_.forward(slice_tensor(item.stack, first, count)));
      feats.insert(feats.end(), pooled.data.begin(), pooled.data.end());
      for (std::size_t z = first; z < first + count; ++z) labels.push_back(item.labels.labels[z] ? 1.0f : 0.0f);
    }
  const std::size_t n = labels.size();
  if (n == 0) throw Error("finalize needs training slices");

  model.seq_.reset();
  model.seq_config_.reset();
  model.stage_ = Stage::kFinal;

  nn::Tensor f = nn::Tensor::matrix(n, c);
  f.data = std::move(feats);
  nn::ParamRefs head;
  model.fc_.collect(head);
  nn::OptimizerConfig oc;
  oc.kind = nn::OptimizerKind::kAdam;
  oc.learning_rate = config.learning_rate;
  nn::Optimizer opt(head, oc);
  for (int e = 0; e < config.epochs; ++e) {
    opt.zero_grad();
    const nn::Tensor z = model.fc_.forward(f);
    nn::Tensor dz = nn::Tensor::matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) dz.data[i] = (sigmoid(z.data[i]) - labels[i]) / static_cast<float>(n);
    model.fc_.backward(f, dz, false);
    opt.step();
  }
  return model;
}

}  // namespace ichseg::classifier
