#pragma once

#include <string>
#include <vector>

#include "sviqa/tensor.hpp"

namespace sviqa {

enum class OptimizerKind { sgd, momentum, adam };

OptimizerKind parse_optimizer_kind(const std::string& s);
std::string to_string(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Single-writer: at most one step mutates the parameters and state at a time.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig cfg = {});

  // Applies one update with learning rate lr and clears every gradient.
  // Throws MissingGradError naming each parameter that has no gradient.
  void step(double lr);

  // Sets every gradient to zeros so parameters unreached by a backward pass
  // still carry a (zero) gradient into step().
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }
  const OptimizerConfig& config() const { return cfg_; }
  long long steps_taken() const { return steps_; }

  // Per-parameter state buffers (velocity, or Adam first/second moments),
  // flattened in parameter order for checkpointing.
  std::vector<Tensor> state() const;
  void load_state(const std::vector<Tensor>& state, long long steps);

 private:
  std::vector<Tensor> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long long steps_ = 0;
};

}  // namespace sviqa
