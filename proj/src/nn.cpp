#include "fedsim/nn.hpp"

#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim::nn {

double gamma_for_nonlinearity(Nonlinearity kind) {
  switch (kind) {
    case Nonlinearity::identity:
      return 1.0;
    case Nonlinearity::relu:
      // Var(relu(z)) = (1 - 1/pi)/2 for z ~ N(0,1); this gain undoes it.
      return std::sqrt(2.0 / (1.0 - 1.0 / 3.14159265358979323846));
  }
  throw ConfigError("gamma_for_nonlinearity: unknown nonlinearity");
}

NormLayer NormLayer::make(const NormConfig& cfg, int channels) {
  if (cfg.eps <= 0.0) throw ConfigError("norm: eps must be positive");
  if (cfg.kind == NormKind::group) {
    if (cfg.groups < 1 || channels % cfg.groups != 0) {
      throw ConfigError("norm: channel count " + std::to_string(channels) +
                        " not divisible by " + std::to_string(cfg.groups) +
                        " groups");
    }
  }
  if (cfg.kind == NormKind::batch &&
      (cfg.momentum <= 0.0 || cfg.momentum >= 1.0)) {
    throw ConfigError("norm: momentum must lie in (0,1)");
  }
  NormLayer n;
  n.cfg_ = cfg;
  n.channels_ = channels;
  if (cfg.kind != NormKind::none) {
    n.gamma_ = Tensor::full(Shape{channels}, 1.0, true);
    n.beta_ = Tensor::zeros(Shape{channels}, true);
  }
  if (cfg.kind == NormKind::batch) {
    n.running_mean_ = Tensor::zeros(Shape{channels});
    n.running_var_ = Tensor::full(Shape{channels}, 1.0);
  }
  return n;
}

Tensor NormLayer::affine(const Tensor& xhat) const {
  const auto& s = xhat.shape();
  Tensor g = ops::broadcast_to(
      ops::reshape(gamma_, Shape{1, channels_, 1, 1}), s);
  Tensor b = ops::broadcast_to(
      ops::reshape(beta_, Shape{1, channels_, 1, 1}), s);
  return ops::add(ops::mul(xhat, g), b);
}

Tensor NormLayer::forward(const Tensor& x, bool train) {
  if (cfg_.kind == NormKind::none) return x;
  if (x.shape().rank() != 4 || x.shape().dim(1) != channels_) {
    throw ShapeError("norm: expected [B," + std::to_string(channels_) +
                     ",H,W], got " + x.shape().str());
  }
  const int64_t B = x.shape().dim(0), C = x.shape().dim(1),
                H = x.shape().dim(2), W = x.shape().dim(3);

  if (cfg_.kind == NormKind::batch) {
    if (train) {
      if (B == 1) {
        throw NumericError(
            "batch norm: train mode with batch size 1 has undefined "
            "variance");
      }
      Tensor mu = ops::reduce_mean(x, {0, 2, 3});
      Tensor xc = ops::sub(x, ops::broadcast_to(mu, x.shape()));
      Tensor var = ops::reduce_mean(ops::square(xc), {0, 2, 3});
      Tensor invstd =
          ops::reciprocal(ops::sqrt(ops::add_scalar(var, cfg_.eps)));
      Tensor xhat = ops::mul(xc, ops::broadcast_to(invstd, x.shape()));
      auto& rm = running_mean_.mutable_values();
      auto& rv = running_var_.mutable_values();
      for (int64_t c = 0; c < C; ++c) {
        rm[static_cast<size_t>(c)] =
            (1.0 - cfg_.momentum) * rm[static_cast<size_t>(c)] +
            cfg_.momentum * mu.values()[static_cast<size_t>(c)];
        rv[static_cast<size_t>(c)] =
            (1.0 - cfg_.momentum) * rv[static_cast<size_t>(c)] +
            cfg_.momentum * var.values()[static_cast<size_t>(c)];
      }
      return affine(xhat);
    }
    // Eval: fixed affine map from running statistics.
    std::vector<double> inv(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
      inv[static_cast<size_t>(c)] =
          1.0 / std::sqrt(running_var_.values()[static_cast<size_t>(c)] +
                          cfg_.eps);
    }
    Tensor rm = Tensor::from_values(Shape{1, C, 1, 1},
                                    running_mean_.values());
    Tensor istd = Tensor::from_values(Shape{1, C, 1, 1}, std::move(inv));
    Tensor xc = ops::sub(x, ops::broadcast_to(rm, x.shape()));
    Tensor xhat = ops::mul(xc, ops::broadcast_to(istd, x.shape()));
    return affine(xhat);
  }

  if (cfg_.kind == NormKind::group) {
    const int64_t G = cfg_.groups;
    Tensor xg = ops::reshape(x, Shape{B, G, C / G, H * W});
    Tensor mu = ops::reduce_mean(xg, {2, 3});
    Tensor xc = ops::sub(xg, ops::broadcast_to(mu, xg.shape()));
    Tensor var = ops::reduce_mean(ops::square(xc), {2, 3});
    Tensor invstd =
        ops::reciprocal(ops::sqrt(ops::add_scalar(var, cfg_.eps)));
    Tensor xhat = ops::mul(xc, ops::broadcast_to(invstd, xg.shape()));
    return affine(ops::reshape(xhat, x.shape()));
  }

  // Layer norm: statistics over (C,H,W) per sample.
  Tensor mu = ops::reduce_mean(x, {1, 2, 3});
  Tensor xc = ops::sub(x, ops::broadcast_to(mu, x.shape()));
  Tensor var = ops::reduce_mean(ops::square(xc), {1, 2, 3});
  Tensor invstd = ops::reciprocal(ops::sqrt(ops::add_scalar(var, cfg_.eps)));
  Tensor xhat = ops::mul(xc, ops::broadcast_to(invstd, x.shape()));
  return affine(xhat);
}

void NormLayer::collect(const std::string& prefix,
                        std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& buffers) {
  if (cfg_.kind == NormKind::none) return;
  params.emplace_back(prefix + ".gamma", gamma_);
  params.emplace_back(prefix + ".beta", beta_);
  if (cfg_.kind == NormKind::batch) {
    buffers.emplace_back(prefix + ".running_mean", running_mean_);
    buffers.emplace_back(prefix + ".running_var", running_var_);
  }
}

Tensor sws_standardize(const SwsParams& p) {
  if (!p.raw_weight.defined() || p.raw_weight.shape().rank() != 2) {
    throw ShapeError("sws_standardize: raw weight must be [C_out, fan_in]");
  }
  const int64_t cout = p.raw_weight.shape().dim(0);
  const int64_t fan_in = p.raw_weight.shape().dim(1);
  if (fan_in < 2) {
    throw ConfigError("sws_standardize: fan_in must be >= 2");
  }
  if (!p.gain.defined() || p.gain.shape() != Shape{cout}) {
    throw ShapeError("sws_standardize: gain must be [C_out]");
  }
  Tensor y = ops::row_standardize(p.raw_weight, p.eps);
  Tensor geff = ops::mul_scalar(
      p.gain, p.gamma_nl / std::sqrt(static_cast<double>(fan_in)));
  Tensor scale = ops::broadcast_to(ops::reshape(geff, Shape{cout, 1}),
                                   p.raw_weight.shape());
  return ops::mul(y, scale);
}

Conv2dLayer Conv2dLayer::make(int cin, int cout, int kernel, int stride,
                              int pad, bool standardized, Nonlinearity nl,
                              bool with_bias, Rng& rng) {
  Conv2dLayer l;
  const int64_t fan_in = static_cast<int64_t>(cin) * kernel * kernel;
  l.weight_ = Tensor::randn(Shape{cout, cin, kernel, kernel}, rng,
                            std::sqrt(2.0 / static_cast<double>(fan_in)),
                            true);
  if (with_bias) l.bias_ = Tensor::zeros(Shape{cout}, true);
  l.standardized_ = standardized;
  if (standardized) {
    l.gain_ = Tensor::full(Shape{cout}, 1.0, true);
    l.gamma_nl_ = gamma_for_nonlinearity(nl);
  }
  l.stride_ = stride;
  l.pad_ = pad;
  return l;
}

Tensor Conv2dLayer::forward(const Tensor& x) const {
  if (!standardized_) {
    return ops::conv2d(x, weight_, bias_, stride_, pad_);
  }
  const auto& ws = weight_.shape();
  const int64_t cout = ws.dim(0);
  const int64_t fan_in = ws.dim(1) * ws.dim(2) * ws.dim(3);
  SwsParams p;
  p.raw_weight = ops::reshape(weight_, Shape{cout, fan_in});
  p.gain = gain_;
  p.gamma_nl = gamma_nl_;
  p.eps = eps_;
  Tensor w_hat = ops::reshape(sws_standardize(p), ws);
  return ops::conv2d(x, w_hat, bias_, stride_, pad_);
}

void Conv2dLayer::collect(const std::string& prefix,
                          std::vector<NamedTensor>& params,
                          std::vector<NamedTensor>& buffers) {
  (void)buffers;
  params.emplace_back(prefix + ".weight", weight_);
  if (bias_.defined()) params.emplace_back(prefix + ".bias", bias_);
  if (standardized_) params.emplace_back(prefix + ".gain", gain_);
}

SeBlock SeBlock::make(int channels, int reduction, Rng& rng) {
  if (reduction < 1 || reduction > channels) {
    throw ConfigError("se: reduction must lie in [1, channels]");
  }
  const int hidden = std::max(1, channels / reduction);
  SeBlock b;
  b.w1_ = Tensor::randn(Shape{hidden, channels}, rng,
                        std::sqrt(2.0 / channels), true);
  b.b1_ = Tensor::zeros(Shape{hidden}, true);
  b.w2_ = Tensor::randn(Shape{channels, hidden}, rng,
                        std::sqrt(2.0 / hidden), true);
  b.b2_ = Tensor::zeros(Shape{channels}, true);
  return b;
}

Tensor SeBlock::forward(const Tensor& x, Tensor* gate) const {
  const int64_t B = x.shape().dim(0), C = x.shape().dim(1);
  Tensor z = ops::global_avg_pool(x);
  Tensor h = ops::relu(ops::linear(z, w1_, b1_));
  Tensor s = ops::sigmoid(ops::linear(h, w2_, b2_));
  if (gate) *gate = s;
  Tensor scale =
      ops::broadcast_to(ops::reshape(s, Shape{B, C, 1, 1}), x.shape());
  return ops::mul(x, scale);
}

void SeBlock::collect(const std::string& prefix,
                      std::vector<NamedTensor>& params,
                      std::vector<NamedTensor>& buffers) {
  (void)buffers;
  params.emplace_back(prefix + ".fc1.weight", w1_);
  params.emplace_back(prefix + ".fc1.bias", b1_);
  params.emplace_back(prefix + ".fc2.weight", w2_);
  params.emplace_back(prefix + ".fc2.bias", b2_);
}

EcaBlock EcaBlock::make(int kernel, Rng& rng) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("eca: kernel length must be odd and positive");
  }
  EcaBlock b;
  b.kernel_ = Tensor::randn(Shape{kernel}, rng,
                            1.0 / std::sqrt(static_cast<double>(kernel)),
                            true);
  return b;
}

Tensor EcaBlock::forward(const Tensor& x, Tensor* gate) const {
  const int64_t B = x.shape().dim(0), C = x.shape().dim(1);
  Tensor z = ops::global_avg_pool(x);
  Tensor s = ops::sigmoid(ops::conv1d_same(z, kernel_));
  if (gate) *gate = s;
  Tensor scale =
      ops::broadcast_to(ops::reshape(s, Shape{B, C, 1, 1}), x.shape());
  return ops::mul(x, scale);
}

void EcaBlock::collect(const std::string& prefix,
                       std::vector<NamedTensor>& params,
                       std::vector<NamedTensor>& buffers) {
  (void)buffers;
  params.emplace_back(prefix + ".kernel", kernel_);
}

CbamBlock CbamBlock::make(int channels, int reduction, int spatial_kernel,
                          Rng& rng) {
  if (reduction < 1 || reduction > channels) {
    throw ConfigError("cbam: reduction must lie in [1, channels]");
  }
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0) {
    throw ConfigError("cbam: spatial kernel must be odd");
  }
  const int hidden = std::max(1, channels / reduction);
  CbamBlock b;
  b.w1_ = Tensor::randn(Shape{hidden, channels}, rng,
                        std::sqrt(2.0 / channels), true);
  b.b1_ = Tensor::zeros(Shape{hidden}, true);
  b.w2_ = Tensor::randn(Shape{channels, hidden}, rng,
                        std::sqrt(2.0 / hidden), true);
  b.b2_ = Tensor::zeros(Shape{channels}, true);
  const int64_t fan_in = 2LL * spatial_kernel * spatial_kernel;
  b.spatial_w_ =
      Tensor::randn(Shape{1, 2, spatial_kernel, spatial_kernel}, rng,
                    std::sqrt(2.0 / static_cast<double>(fan_in)), true);
  b.spatial_b_ = Tensor::zeros(Shape{1}, true);
  b.spatial_kernel_ = spatial_kernel;
  return b;
}

Tensor CbamBlock::forward(const Tensor& x, Tensor* gate) const {
  const int64_t B = x.shape().dim(0), C = x.shape().dim(1);
  auto mlp = [&](const Tensor& z) {
    return ops::linear(ops::relu(ops::linear(z, w1_, b1_)), w2_, b2_);
  };
  Tensor s =
      ops::sigmoid(ops::add(mlp(ops::global_avg_pool(x)),
                            mlp(ops::spatial_max(x))));
  if (gate) *gate = s;
  Tensor x1 = ops::mul(
      x, ops::broadcast_to(ops::reshape(s, Shape{B, C, 1, 1}), x.shape()));
  Tensor pooled = ops::concat_channels(ops::channel_mean(x1),
                                       ops::channel_max(x1));
  Tensor a = ops::sigmoid(ops::conv2d(pooled, spatial_w_, spatial_b_, 1,
                                      (spatial_kernel_ - 1) / 2));
  return ops::mul(x1, ops::broadcast_to(a, x1.shape()));
}

void CbamBlock::collect(const std::string& prefix,
                        std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& buffers) {
  (void)buffers;
  params.emplace_back(prefix + ".fc1.weight", w1_);
  params.emplace_back(prefix + ".fc1.bias", b1_);
  params.emplace_back(prefix + ".fc2.weight", w2_);
  params.emplace_back(prefix + ".fc2.bias", b2_);
  params.emplace_back(prefix + ".spatial.weight", spatial_w_);
  params.emplace_back(prefix + ".spatial.bias", spatial_b_);
}

Attention Attention::make(AttentionKind kind, int channels,
                          const AttentionConfig& cfg, Rng& rng) {
  Attention a;
  a.kind_ = kind;
  switch (kind) {
    case AttentionKind::none:
      break;
    case AttentionKind::se:
      a.se_ = SeBlock::make(channels, cfg.reduction, rng);
      break;
    case AttentionKind::eca:
      a.eca_ = EcaBlock::make(cfg.eca_kernel, rng);
      break;
    case AttentionKind::cbam:
      a.cbam_ = CbamBlock::make(channels, cfg.reduction, cfg.spatial_kernel,
                                rng);
      break;
  }
  return a;
}

Tensor Attention::forward(const Tensor& x, Tensor* gate) const {
  switch (kind_) {
    case AttentionKind::none:
      return x;
    case AttentionKind::se:
      return se_->forward(x, gate);
    case AttentionKind::eca:
      return eca_->forward(x, gate);
    case AttentionKind::cbam:
      return cbam_->forward(x, gate);
  }
  throw ConfigError("attention: unknown kind");
}

void Attention::collect(const std::string& prefix,
                        std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& buffers) {
  switch (kind_) {
    case AttentionKind::none:
      return;
    case AttentionKind::se:
      se_->collect(prefix, params, buffers);
      return;
    case AttentionKind::eca:
      eca_->collect(prefix, params, buffers);
      return;
    case AttentionKind::cbam:
      cbam_->collect(prefix, params, buffers);
      return;
  }
}

std::pair<std::vector<double>, std::vector<double>> gap_closed_form(
    const Tensor& x, const GapProbeLayer& layer) {
  if (!layer.weight.defined() || layer.weight.shape().rank() != 4 ||
      layer.weight.shape().dim(2) != 1 || layer.weight.shape().dim(3) != 1) {
    throw ShapeError("gap_closed_form: layer kernel must be 1x1, got " +
                     (layer.weight.defined() ? layer.weight.shape().str()
                                             : std::string("undefined")));
  }
  if (x.shape().rank() != 4 ||
      x.shape().dim(1) != layer.weight.shape().dim(1)) {
    throw ShapeError("gap_closed_form: input " + x.shape().str() +
                     " does not match weight " + layer.weight.shape().str());
  }
  const int64_t B = x.shape().dim(0), Cin = x.shape().dim(1),
                H = x.shape().dim(2), W = x.shape().dim(3);
  const int64_t Cout = layer.weight.shape().dim(0);
  const double hw = static_cast<double>(H * W);

  // Route one: pool the actual layer output.
  std::vector<double> route_pool;
  if (layer.sws) {
    SwsParams p;
    p.raw_weight = ops::reshape(layer.weight, Shape{Cout, Cin});
    p.gain = layer.gain;
    p.gamma_nl = layer.gamma_nl;
    p.eps = layer.eps;
    Tensor w_hat =
        ops::reshape(sws_standardize(p), layer.weight.shape());
    Tensor out = ops::conv2d(x, w_hat, layer.bias, 1, 0);
    route_pool = ops::global_avg_pool(out).values();
  } else {
    Tensor a = ops::conv2d(x, layer.weight, {}, 1, 0);
    NormConfig cfg;
    cfg.kind = layer.norm;
    cfg.groups = layer.groups;
    cfg.eps = layer.eps;
    if (layer.norm != NormKind::none) {
      NormLayer n = NormLayer::make(cfg, static_cast<int>(Cout));
      NormLayer built = std::move(n);
      std::vector<NamedTensor> ps, bs;
      built.collect("n", ps, bs);
      for (auto& [name, t] : ps) {
        if (name == "n.gamma") t.mutable_values() = layer.gamma.values();
        if (name == "n.beta") t.mutable_values() = layer.beta.values();
      }
      a = built.forward(a, /*train=*/true);
    }
    route_pool = ops::global_avg_pool(a).values();
  }

  // Route two: the closed form against the raw input. conv_sum[b,co] is the
  // double sum over pixels and input channels of W X.
  const auto& xv = x.values();
  const auto& wv = layer.weight.values();
  std::vector<double> conv_sum(static_cast<size_t>(B * Cout), 0.0);
  std::vector<double> x_sum(static_cast<size_t>(B), 0.0);
  std::vector<double> ch_sum(static_cast<size_t>(B * Cin), 0.0);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < Cin; ++c) {
      double acc = 0.0;
      const double* plane = xv.data() + ((b * Cin + c) * H * W);
      for (int64_t p = 0; p < H * W; ++p) acc += plane[p];
      ch_sum[static_cast<size_t>(b * Cin + c)] = acc;
      x_sum[static_cast<size_t>(b)] += acc;
    }
    for (int64_t co = 0; co < Cout; ++co) {
      double acc = 0.0;
      for (int64_t c = 0; c < Cin; ++c) {
        acc += wv[static_cast<size_t>(co * Cin + c)] *
               ch_sum[static_cast<size_t>(b * Cin + c)];
      }
      conv_sum[static_cast<size_t>(b * Cout + co)] = acc;
    }
  }

  std::vector<double> route_closed(static_cast<size_t>(B * Cout), 0.0);
  if (layer.sws) {
    const auto& gv = layer.gain.values();
    for (int64_t co = 0; co < Cout; ++co) {
      double mu = 0.0;
      for (int64_t c = 0; c < Cin; ++c) {
        mu += wv[static_cast<size_t>(co * Cin + c)];
      }
      mu /= static_cast<double>(Cin);
      double var = 0.0;
      for (int64_t c = 0; c < Cin; ++c) {
        const double d = wv[static_cast<size_t>(co * Cin + c)] - mu;
        var += d * d;
      }
      var /= static_cast<double>(Cin);
      const double denom = std::max(std::sqrt(var), layer.eps);
      const double geff = gv[static_cast<size_t>(co)] * layer.gamma_nl /
                          std::sqrt(static_cast<double>(Cin));
      const double bias =
          layer.bias.defined() ? layer.bias.values()[static_cast<size_t>(co)]
                               : 0.0;
      for (int64_t b = 0; b < B; ++b) {
        route_closed[static_cast<size_t>(b * Cout + co)] =
            geff / (denom * hw) * conv_sum[static_cast<size_t>(b * Cout + co)] -
            mu * geff / (denom * hw) * x_sum[static_cast<size_t>(b)] + bias;
      }
    }
    return {route_pool, route_closed};
  }

  if (layer.norm == NormKind::none) {
    for (size_t i = 0; i < route_closed.size(); ++i) {
      route_closed[i] = conv_sum[i] / hw;
    }
    return {route_pool, route_closed};
  }

  // Activation statistics of A = conv(x), recomputed directly.
  std::vector<double> a(static_cast<size_t>(B * Cout * H * W), 0.0);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t co = 0; co < Cout; ++co) {
      for (int64_t p = 0; p < H * W; ++p) {
        double acc = 0.0;
        for (int64_t c = 0; c < Cin; ++c) {
          acc += wv[static_cast<size_t>(co * Cin + c)] *
                 xv[static_cast<size_t>((b * Cin + c) * H * W + p)];
        }
        a[static_cast<size_t>((b * Cout + co) * H * W + p)] = acc;
      }
    }
  }
  auto moments = [&](auto&& in_set) {
    // in_set enumerates flat indices of `a`; returns (mu, sigma_eps).
    double mu = 0.0;
    int64_t n = 0;
    in_set([&](int64_t i) {
      mu += a[static_cast<size_t>(i)];
      ++n;
    });
    mu /= static_cast<double>(n);
    double var = 0.0;
    in_set([&](int64_t i) {
      const double d = a[static_cast<size_t>(i)] - mu;
      var += d * d;
    });
    var /= static_cast<double>(n);
    return std::pair<double, double>(mu, std::sqrt(var + layer.eps));
  };
  const auto& gv = layer.gamma.values();
  const auto& bv = layer.beta.values();

  if (layer.norm == NormKind::batch) {
    for (int64_t co = 0; co < Cout; ++co) {
      auto [mu, sd] = moments([&](auto&& f) {
        for (int64_t b = 0; b < B; ++b)
          for (int64_t p = 0; p < H * W; ++p) f((b * Cout + co) * H * W + p);
      });
      for (int64_t b = 0; b < B; ++b) {
        route_closed[static_cast<size_t>(b * Cout + co)] =
            gv[static_cast<size_t>(co)] / (sd * hw) *
                conv_sum[static_cast<size_t>(b * Cout + co)] -
            mu * gv[static_cast<size_t>(co)] / sd +
            bv[static_cast<size_t>(co)];
      }
    }
  } else if (layer.norm == NormKind::layer) {
    for (int64_t b = 0; b < B; ++b) {
      auto [mu, sd] = moments([&](auto&& f) {
        for (int64_t co = 0; co < Cout; ++co)
          for (int64_t p = 0; p < H * W; ++p) f((b * Cout + co) * H * W + p);
      });
      for (int64_t co = 0; co < Cout; ++co) {
        route_closed[static_cast<size_t>(b * Cout + co)] =
            gv[static_cast<size_t>(co)] / (sd * hw) *
                conv_sum[static_cast<size_t>(b * Cout + co)] -
            mu * gv[static_cast<size_t>(co)] / sd +
            bv[static_cast<size_t>(co)];
      }
    }
  } else {  // group
    const int64_t G = layer.groups;
    const int64_t per = Cout / G;
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t g = 0; g < G; ++g) {
        auto [mu, sd] = moments([&](auto&& f) {
          for (int64_t co = g * per; co < (g + 1) * per; ++co)
            for (int64_t p = 0; p < H * W; ++p) {
              f((b * Cout + co) * H * W + p);
            }
        });
        for (int64_t co = g * per; co < (g + 1) * per; ++co) {
          route_closed[static_cast<size_t>(b * Cout + co)] =
              gv[static_cast<size_t>(co)] / (sd * hw) *
                  conv_sum[static_cast<size_t>(b * Cout + co)] -
              mu * gv[static_cast<size_t>(co)] / sd +
              bv[static_cast<size_t>(co)];
        }
      }
    }
  }
  return {route_pool, route_closed};
}

}  // namespace fedsim::nn
