#include "fedsim/optim.hpp"

#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim {

std::string optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::string scheduler_name(SchedulerKind k) {
  return k == SchedulerKind::none ? "none" : "cosine";
}

SchedulerKind parse_scheduler(const std::string& name) {
  if (name == "none") return SchedulerKind::none;
  if (name == "cosine") return SchedulerKind::cosine;
  throw ConfigError("unknown scheduler '" + name + "'");
}

ClientOptimizer::ClientOptimizer(OptimizerKind kind, double momentum,
                                 double beta1, double beta2, double eps)
    : kind_(kind), momentum_(momentum), beta1_(beta1), beta2_(beta2),
      eps_(eps) {}

void ClientOptimizer::step(std::vector<nn::NamedTensor>& params,
                           const std::vector<std::vector<double>>& grads,
                           double lr) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer: parameter/gradient count mismatch");
  }
  if (kind_ == OptimizerKind::adam) ++t_;
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, tensor] = params[i];
    auto& values = tensor.mutable_values();
    const auto& g = grads[i];
    if (g.size() != values.size()) {
      throw ShapeError("optimizer: gradient size mismatch for '" + name + "'");
    }
    if (kind_ == OptimizerKind::sgd) {
      if (momentum_ > 0.0) {
        auto& vel = vel_[name];
        if (vel.empty()) vel.assign(values.size(), 0.0);
        for (size_t j = 0; j < values.size(); ++j) {
          vel[j] = momentum_ * vel[j] + g[j];
          values[j] -= lr * vel[j];
        }
      } else {
        for (size_t j = 0; j < values.size(); ++j) values[j] -= lr * g[j];
      }
    } else {
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) m.assign(values.size(), 0.0);
      if (v.empty()) v.assign(values.size(), 0.0);
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
      for (size_t j = 0; j < values.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        values[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }
}

ParamVec ClientOptimizer::export_state() const {
  ParamVec out;
  out.push_back({"t", {1}, {static_cast<double>(t_)}});
  for (const auto& [name, v] : m_) {
    out.push_back({"m:" + name, {static_cast<int64_t>(v.size())}, v});
  }
  for (const auto& [name, v] : v_) {
    out.push_back({"v:" + name, {static_cast<int64_t>(v.size())}, v});
  }
  for (const auto& [name, v] : vel_) {
    out.push_back({"vel:" + name, {static_cast<int64_t>(v.size())}, v});
  }
  return out;
}

void ClientOptimizer::import_state(const ParamVec& state) {
  for (const auto& e : state) {
    if (e.name == "t") {
      t_ = static_cast<int64_t>(e.values[0]);
    } else if (e.name.rfind("m:", 0) == 0) {
      m_[e.name.substr(2)] = e.values;
    } else if (e.name.rfind("v:", 0) == 0) {
      v_[e.name.substr(2)] = e.values;
    } else if (e.name.rfind("vel:", 0) == 0) {
      vel_[e.name.substr(4)] = e.values;
    }
  }
}

double scheduled_lr(SchedulerKind kind, double base_lr, int64_t step,
                    int64_t total_steps) {
  if (kind == SchedulerKind::none || total_steps <= 0) return base_lr;
  const double frac = std::min(
      1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

}  // namespace fedsim
