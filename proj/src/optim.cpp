#include "sviqa/optim.hpp"

#include <cmath>

#include "sviqa/error.hpp"

namespace sviqa {

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "momentum") return OptimizerKind::momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd, momentum or adam)");
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "sgd";
}

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(cfg_.kind == OptimizerKind::sgd ? 0 : p.numel(), 0.0);
    v_.emplace_back(cfg_.kind == OptimizerKind::adam ? p.numel() : 0, 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) {
    p.clear_grad();
    auto& g = p.node()->grad;
    g.emplace(p.numel(), 0.0);
  }
}

void Optimizer::step(double lr) {
  std::string missing;
  for (const auto& p : params_) {
    if (!p.has_grad()) missing += (missing.empty() ? "" : ", ") + (p.name().empty() ? "<unnamed>" : p.name());
  }
  if (!missing.empty()) throw MissingGradError("optimizer step: no gradient for " + missing);
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto data = params_[k].mutable_data();
    const auto grad = params_[k].grad();
    switch (cfg_.kind) {
      case OptimizerKind::sgd:
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
        break;
      case OptimizerKind::momentum: {
        auto& vel = m_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
          vel[i] = cfg_.momentum * vel[i] + grad[i];
          data[i] -= lr * vel[i];
        }
        break;
      }
      case OptimizerKind::adam: {
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
          data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
        break;
      }
    }
    params_[k].clear_grad();
  }
}

std::vector<Tensor> Optimizer::state() const {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (!m_[k].empty()) out.emplace_back(Shape{m_[k].size()}, m_[k]);
    if (!v_[k].empty()) out.emplace_back(Shape{v_[k].size()}, v_[k]);
  }
  return out;
}

void Optimizer::load_state(const std::vector<Tensor>& state, long long steps) {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (auto* buf : {&m_[k], &v_[k]}) {
      if (buf->empty()) continue;
      if (idx >= state.size() || state[idx].numel() != buf->size())
        throw CompatibilityError("optimizer state does not match parameter layout");
      buf->assign(state[idx].data().begin(), state[idx].data().end());
      ++idx;
    }
  }
  if (idx != state.size()) throw CompatibilityError("optimizer state has extra buffers");
  steps_ = steps;
}

}  // namespace sviqa
