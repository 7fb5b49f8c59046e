#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ichseg/nn/layers.hpp"

namespace ichseg::nn {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Applies updates to every trainable parameter it was built with.
class Optimizer {
 public:
  Optimizer(ParamRefs params, OptimizerConfig config);

  void zero_grad();
  void step();
  /// Divides every gradient by the given count before stepping.
  void scale_grad(float factor);

  const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  ParamRefs params_;
  OptimizerConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long step_ = 0;
};

}  // namespace ichseg::nn
