#pragma once

#include <cstdint>
#include <vector>

#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"

namespace fedsim::dp {

// {1.25, 1.5} plus the integer orders 2..512.
std::vector<double> default_order_grid();

struct DpConfig {
  double clip_norm = 1.0;
  double noise_multiplier = 1.1;
  double delta = 0.0;  // 0 resolves to 0.1/|D_i| per client
  bool operator==(const DpConfig&) const = default;
};

// One-step RDP of the subsampled Gaussian mechanism at a given order.
// q == 1 is the plain Gaussian mechanism, order/(2 z^2), valid at any real
// order; integer orders use the binomial expansion in log space; fractional
// orders are bounded by the next integer order (RDP is non-decreasing in
// the order).
double rdp_subsampled_gaussian(double order, double q, double z);

// Linear composition over steps of a fixed subsampled Gaussian mechanism.
struct PrivacyLedger {
  std::vector<double> orders;
  double q = 0.0;
  double z = 0.0;
  int64_t steps = 0;
  std::vector<double> per_step;  // RDP of one step at each order

  static PrivacyLedger make(std::vector<double> orders, double q, double z);
  void add_steps(int64_t n = 1) { steps += n; }
  std::vector<double> totals() const;
};

struct EpsilonResult {
  double epsilon = 0.0;
  double order = 0.0;  // the optimal order
};

// Converts accumulated RDP to (epsilon, delta)-DP by minimizing
// rdp(order) + log(1/delta)/(order-1) over the grid.
EpsilonResult rdp_epsilon(const PrivacyLedger& ledger, double delta);

// Per-sample gradients scaled by min(1, C/||g||_2), then summed.
std::vector<double> clip_per_sample(
    const std::vector<std::vector<double>>& per_sample, double clip_norm);

// (clipped_sum + N(0, z^2 C^2 I)) / batch_size, seeded.
std::vector<double> noise_and_average(const std::vector<double>& clipped_sum,
                                      double z, double clip_norm,
                                      int batch_size, uint64_t seed);

// One DP-SGD step: per-sample backward passes, clip, noise, optimizer step,
// ledger advanced by one. Models carrying batch norm are rejected before
// any training happens.
void dp_local_step(nn::Model& model, const Tensor& images,
                   const Tensor& targets, ops::LossKind loss_kind,
                   const Tensor& class_weights, double focal_gamma,
                   ClientOptimizer& opt, double lr, const DpConfig& cfg,
                   PrivacyLedger& ledger, uint64_t noise_seed);

}  // namespace fedsim::dp
