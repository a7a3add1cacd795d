#include "fedsim/dp.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::dp {

std::vector<double> default_order_grid() {
  std::vector<double> orders{1.25, 1.5};
  for (int n = 2; n <= 512; ++n) orders.push_back(static_cast<double>(n));
  return orders;
}

double rdp_subsampled_gaussian(double order, double q, double z) {
  if (order <= 1.0) throw ConfigError("rdp: order must exceed 1");
  if (z <= 0.0) throw ConfigError("rdp: noise multiplier must be positive");
  if (q < 0.0 || q > 1.0) throw ConfigError("rdp: sample rate must lie in [0,1]");
  if (q == 0.0) return 0.0;
  if (q == 1.0) return order / (2.0 * z * z);
  const double rounded = std::nearbyint(order);
  if (std::abs(order - rounded) > 1e-9) {
    // Bound fractional orders by the next integer order.
    return rdp_subsampled_gaussian(std::ceil(order - 1e-9), q, z);
  }
  const int n = static_cast<int>(rounded);
  // log A(n) = logsumexp_k [ log C(n,k) + k log q + (n-k) log(1-q)
  //                          + k(k-1)/(2 z^2) ],
  // with the binomial coefficient updated incrementally in log space.
  const double logq = std::log(q);
  const double log1mq = std::log1p(-q);
  double log_binom = 0.0;  // log C(n,0)
  double max_term = -1e308;
  std::vector<double> terms(static_cast<size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    if (k > 0) {
      log_binom += std::log(static_cast<double>(n - k + 1)) -
                   std::log(static_cast<double>(k));
    }
    const double t = log_binom + k * logq + (n - k) * log1mq +
                     (static_cast<double>(k) * (k - 1)) / (2.0 * z * z);
    terms[static_cast<size_t>(k)] = t;
    max_term = std::max(max_term, t);
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - max_term);
  const double log_a = max_term + std::log(acc);
  return std::max(0.0, log_a) / (static_cast<double>(n) - 1.0);
}

PrivacyLedger PrivacyLedger::make(std::vector<double> orders, double q,
                                  double z) {
  if (orders.empty()) throw ConfigError("ledger: order grid is empty");
  PrivacyLedger l;
  l.orders = std::move(orders);
  l.q = q;
  l.z = z;
  l.per_step.reserve(l.orders.size());
  for (double a : l.orders) {
    l.per_step.push_back(rdp_subsampled_gaussian(a, q, z));
  }
  return l;
}

std::vector<double> PrivacyLedger::totals() const {
  std::vector<double> out(per_step.size());
  for (size_t i = 0; i < per_step.size(); ++i) {
    out[i] = static_cast<double>(steps) * per_step[i];
  }
  return out;
}

EpsilonResult rdp_epsilon(const PrivacyLedger& ledger, double delta) {
  if (delta <= 0.0 || delta >= 1.0) {
    throw ConfigError("rdp_epsilon: delta must lie in (0,1)");
  }
  if (ledger.steps == 0) return {0.0, 0.0};
  const double log_inv_delta = std::log(1.0 / delta);
  EpsilonResult best{1e308, 0.0};
  const auto totals = ledger.totals();
  for (size_t i = 0; i < ledger.orders.size(); ++i) {
    const double a = ledger.orders[i];
    const double eps = totals[i] + log_inv_delta / (a - 1.0);
    if (eps < best.epsilon) best = {eps, a};
  }
  return best;
}

std::vector<double> clip_per_sample(
    const std::vector<std::vector<double>>& per_sample, double clip_norm) {
  if (clip_norm <= 0.0) throw ConfigError("clip: norm bound must be positive");
  if (per_sample.empty()) throw ConfigError("clip: no gradients");
  std::vector<double> sum(per_sample[0].size(), 0.0);
  for (const auto& g : per_sample) {
    if (g.size() != sum.size()) throw ShapeError("clip: ragged gradients");
    double norm2 = 0.0;
    for (double v : g) norm2 += v * v;
    const double norm = std::sqrt(norm2);
    const double factor = norm > 0.0 ? std::min(1.0, clip_norm / norm) : 1.0;
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += factor * g[i];
  }
  return sum;
}

std::vector<double> noise_and_average(const std::vector<double>& clipped_sum,
                                      double z, double clip_norm,
                                      int batch_size, uint64_t seed) {
  if (batch_size < 1) throw ConfigError("noise: batch size must be >= 1");
  if (!std::isfinite(clip_norm)) {
    throw ConfigError("noise: clip norm must be finite");
  }
  Rng rng(seed);
  std::vector<double> out(clipped_sum.size());
  const double scale = z * clip_norm;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = (clipped_sum[i] + scale * rng.normal()) /
             static_cast<double>(batch_size);
  }
  return out;
}

namespace {

Tensor slice_sample(const Tensor& batch, int64_t index) {
  const auto& s = batch.shape();
  std::vector<int64_t> dims = s.dims();
  dims[0] = 1;
  const int64_t stride = s.numel() / s.dim(0);
  std::vector<double> vals(
      batch.values().begin() + index * stride,
      batch.values().begin() + (index + 1) * stride);
  return Tensor::from_values(Shape(dims), std::move(vals));
}

}  // namespace

void dp_local_step(nn::Model& model, const Tensor& images,
                   const Tensor& targets, ops::LossKind loss_kind,
                   const Tensor& class_weights, double focal_gamma,
                   ClientOptimizer& opt, double lr, const DpConfig& cfg,
                   PrivacyLedger& ledger, uint64_t noise_seed) {
  if (model.spec().has_batch_norm()) {
    throw ConfigError(
        "dp: batch normalization computes mini-batch statistics and cannot "
        "be trained with sample-level privacy");
  }
  const int64_t batch = images.shape().dim(0);
  auto params = model.named_parameters();
  std::vector<std::vector<double>> per_sample;
  per_sample.reserve(static_cast<size_t>(batch));
  for (int64_t s = 0; s < batch; ++s) {
    Tensor x = slice_sample(images, s);
    Tensor y = slice_sample(targets, s);
    model.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::loss(model.forward(x, true), y, loss_kind,
                            class_weights, focal_gamma);
    if (!std::isfinite(loss.item())) {
      throw NumericError("dp: non-finite per-sample loss");
    }
    backward(loss);
    std::vector<double> flat;
    for (auto& [name, t] : params) {
      if (t.has_grad()) {
        flat.insert(flat.end(), t.grad().begin(), t.grad().end());
      } else {
        flat.insert(flat.end(), t.values().size(), 0.0);
      }
    }
    per_sample.push_back(std::move(flat));
  }
  model.zero_grad();
  const auto clipped = clip_per_sample(per_sample, cfg.clip_norm);
  const auto noisy =
      noise_and_average(clipped, cfg.noise_multiplier, cfg.clip_norm,
                        static_cast<int>(batch), noise_seed);
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  size_t off = 0;
  for (auto& [name, t] : params) {
    grads.emplace_back(noisy.begin() + static_cast<std::ptrdiff_t>(off),
                       noisy.begin() + static_cast<std::ptrdiff_t>(
                                           off + t.values().size()));
    off += t.values().size();
  }
  opt.step(params, grads, lr);
  ledger.add_steps(1);
}

}  // namespace fedsim::dp
