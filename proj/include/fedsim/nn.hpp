#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/ops.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim::nn {

using NamedTensor = std::pair<std::string, Tensor>;

enum class NormKind { batch, group, layer, none };
enum class Nonlinearity { relu, identity };

// Fixed variance-compensation scalar per nonlinearity: identity -> 1,
// relu -> sqrt(2 / (1 - 1/pi)), which makes Var(relu(g * z)) = 1 for
// z ~ N(0,1) when the convolution carries this gain.
double gamma_for_nonlinearity(Nonlinearity kind);

struct NormConfig {
  NormKind kind = NormKind::batch;
  int groups = 8;         // group kind only
  double eps = 1e-5;
  double momentum = 0.1;  // batch kind only
};

// Activation normalization layer with learnable per-channel affine. The
// batch kind owns running statistics used at inference.
class NormLayer {
 public:
  NormLayer() = default;
  static NormLayer make(const NormConfig& cfg, int channels);

  // x is [B,C,H,W]. Train mode with the batch kind updates running stats;
  // eval mode applies a fixed affine map from them.
  Tensor forward(const Tensor& x, bool train);

  const NormConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

 private:
  NormConfig cfg_;
  int channels_ = 0;
  Tensor gamma_, beta_;
  Tensor running_mean_, running_var_;  // batch kind buffers
  Tensor affine(const Tensor& xhat) const;
};

// Raw weight plus the affine pieces of scaled weight standardization.
struct SwsParams {
  Tensor raw_weight;   // [C_out, fan_in]
  Tensor gain;         // learnable per-output-channel scale g
  double gamma_nl = 1.0;  // fixed nonlinearity scalar
  double eps = 1e-5;
};

// W_hat[r,:] = gamma_eff_r / max(sigma_r, eps) * (W[r,:] - mu_r), with
// gamma_eff = g * gamma_nl / sqrt(fan_in). Recomputed from the raw weight on
// every call; gradients flow through the standardization.
Tensor sws_standardize(const SwsParams& p);

// Convolution layer; either a plain conv or a weight-standardized one.
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  static Conv2dLayer make(int cin, int cout, int kernel, int stride, int pad,
                          bool standardized, Nonlinearity nl, bool with_bias,
                          Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);
  const Tensor& weight() const { return weight_; }
  const Tensor& gain() const { return gain_; }

 private:
  Tensor weight_;  // [Cout, Cin, kH, kW]
  Tensor bias_;    // optional [Cout]
  Tensor gain_;    // standardized only [Cout]
  bool standardized_ = false;
  double gamma_nl_ = 1.0;
  double eps_ = 1e-5;
  int stride_ = 1, pad_ = 0;
};

enum class AttentionKind { none, se, eca, cbam };

struct AttentionConfig {
  AttentionKind kind = AttentionKind::none;
  int reduction = 4;       // se, cbam
  int eca_kernel = 3;      // eca; odd
  int spatial_kernel = 7;  // cbam; odd
};

// Channel-attention blocks. forward() returns the recalibrated map and
// writes the per-channel gate S in (0,1)^{B x C} to *gate when requested.
class SeBlock {
 public:
  static SeBlock make(int channels, int reduction, Rng& rng);
  Tensor forward(const Tensor& x, Tensor* gate) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

 private:
  Tensor w1_, b1_, w2_, b2_;
};

class EcaBlock {
 public:
  static EcaBlock make(int kernel, Rng& rng);
  Tensor forward(const Tensor& x, Tensor* gate) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

 private:
  Tensor kernel_;
};

class CbamBlock {
 public:
  static CbamBlock make(int channels, int reduction, int spatial_kernel,
                        Rng& rng);
  Tensor forward(const Tensor& x, Tensor* gate) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

 private:
  Tensor w1_, b1_, w2_, b2_;          // shared channel MLP
  Tensor spatial_w_, spatial_b_;      // [1,2,k,k], [1]
  int spatial_kernel_ = 7;
};

// Pluggable attention wrapper used inside residual blocks.
class Attention {
 public:
  static Attention make(AttentionKind kind, int channels,
                        const AttentionConfig& cfg, Rng& rng);
  AttentionKind kind() const { return kind_; }
  Tensor forward(const Tensor& x, Tensor* gate) const;  // identity when none
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

 private:
  AttentionKind kind_ = AttentionKind::none;
  std::optional<SeBlock> se_;
  std::optional<EcaBlock> eca_;
  std::optional<CbamBlock> cbam_;
};

// Dual-route check for the channel descriptor of a 1x1 convolution layer:
// route one pools the actual layer output, route two evaluates the closed
// form that expands the normalization statistics against the raw input.
struct GapProbeLayer {
  Tensor weight;                    // [Cout, Cin, 1, 1]
  bool sws = false;                 // standardized weights instead of a norm
  NormKind norm = NormKind::none;   // used when !sws
  int groups = 1;
  Tensor gamma, beta;               // norm affine [Cout]
  Tensor gain, bias;                // sws pieces [Cout]
  double gamma_nl = 1.0;
  double eps = 1e-5;
};

std::pair<std::vector<double>, std::vector<double>> gap_closed_form(
    const Tensor& x, const GapProbeLayer& layer);

}  // namespace fedsim::nn
