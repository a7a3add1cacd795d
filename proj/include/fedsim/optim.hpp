#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedsim/nn.hpp"
#include "fedsim/params.hpp"

namespace fedsim {

enum class OptimizerKind { sgd, adam };
enum class SchedulerKind { none, cosine };

std::string optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);
std::string scheduler_name(SchedulerKind k);
SchedulerKind parse_scheduler(const std::string& name);

// Client-side optimizer over named parameters. Moment buffers are keyed by
// parameter name and can be exported/imported, which lets a federation
// persist them on each client between rounds.
class ClientOptimizer {
 public:
  ClientOptimizer() = default;
  ClientOptimizer(OptimizerKind kind, double momentum = 0.0,
                  double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

  // grads[i] pairs with params[i]; applies one step at the given rate.
  void step(std::vector<nn::NamedTensor>& params,
            const std::vector<std::vector<double>>& grads, double lr);

  ParamVec export_state() const;
  void import_state(const ParamVec& state);

 private:
  OptimizerKind kind_ = OptimizerKind::sgd;
  double momentum_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_, vel_;
};

// Cosine annealing over total_steps; none keeps the base rate.
double scheduled_lr(SchedulerKind kind, double base_lr, int64_t step,
                    int64_t total_steps);

}  // namespace fedsim
