#include "ichseg/nn/optim.hpp"

#include <cmath>

#include "ichseg/volume.hpp"

namespace ichseg::nn {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw Error("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

Optimizer::Optimizer(ParamRefs params, OptimizerConfig config) : config_(config) {
  if (!(config.learning_rate >= 0.0)) throw Error("learning rate must be non-negative");
  for (Parameter* p : params)
    if (p->trainable) params_.push_back(p);
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->size(), 0.0f);
    if (config_.kind == OptimizerKind::kAdam) v_[i].assign(params_[i]->size(), 0.0f);
  }
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Optimizer::scale_grad(float factor) {
  for (Parameter* p : params_)
    for (float& g : p->grad) g *= factor;
}

void Optimizer::step() {
  ++step_;
  const float lr = static_cast<float>(config_.learning_rate);
  const float wd = static_cast<float>(config_.weight_decay);
  if (config_.kind == OptimizerKind::kSgd) {
    const float mu = static_cast<float>(config_.momentum);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const float g = p.grad[j] + wd * p.value[j];
        m_[i][j] = mu * m_[i][j] + g;
        p.value[j] -= lr * m_[i][j];
      }
    }
    return;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const float c1 = static_cast<float>(1.0 - std::pow(b1, static_cast<double>(step_)));
  const float c2 = static_cast<float>(1.0 - std::pow(b2, static_cast<double>(step_)));
  const float eps = static_cast<float>(config_.epsilon);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const float g = p.grad[j] + wd * p.value[j];
      m_[i][j] = static_cast<float>(b1) * m_[i][j] + static_cast<float>(1.0 - b1) * g;
      v_[i][j] = static_cast<float>(b2) * v_[i][j] + static_cast<float>(1.0 - b2) * g * g;
      const float mh = m_[i][j] / c1;
      const float vh = v_[i][j] / c2;
      p.value[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

}  // namespace ichseg::nn
