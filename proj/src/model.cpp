#include "fedsim/model.hpp"

#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim::nn {

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::bn_resnet: return "bn_resnet";
    case Arch::gn_resnet: return "gn_resnet";
    case Arch::se_resnet: return "se_resnet";
    case Arch::nf_resnet: return "nf_resnet";
    case Arch::anfr: return "anfr";
  }
  throw ConfigError("unknown architecture");
}

Arch parse_arch(const std::string& name) {
  if (name == "bn_resnet") return Arch::bn_resnet;
  if (name == "gn_resnet") return Arch::gn_resnet;
  if (name == "se_resnet") return Arch::se_resnet;
  if (name == "nf_resnet") return Arch::nf_resnet;
  if (name == "anfr") return Arch::anfr;
  throw ConfigError("unknown architecture '" + name + "'");
}

std::string attention_name(AttentionKind k) {
  switch (k) {
    case AttentionKind::none: return "none";
    case AttentionKind::se: return "se";
    case AttentionKind::eca: return "eca";
    case AttentionKind::cbam: return "cbam";
  }
  throw ConfigError("unknown attention kind");
}

AttentionKind parse_attention(const std::string& name) {
  if (name == "none") return AttentionKind::none;
  if (name == "se") return AttentionKind::se;
  if (name == "eca") return AttentionKind::eca;
  if (name == "cbam") return AttentionKind::cbam;
  throw ConfigError("unknown attention kind '" + name + "'");
}

ModelSpec ModelSpec::for_arch(Arch a) {
  ModelSpec s;
  s.arch = a;
  switch (a) {
    case Arch::bn_resnet:
      s.norm = NormKind::batch;
      s.attention = AttentionKind::none;
      break;
    case Arch::gn_resnet:
      s.norm = NormKind::group;
      s.attention = AttentionKind::none;
      break;
    case Arch::se_resnet:
      s.norm = NormKind::batch;
      s.attention = AttentionKind::se;
      break;
    case Arch::nf_resnet:
      s.norm = NormKind::none;
      s.attention = AttentionKind::none;
      break;
    case Arch::anfr:
      s.norm = NormKind::none;
      s.attention = AttentionKind::se;
      break;
  }
  return s;
}

bool ModelSpec::uses_sws() const {
  return arch == Arch::nf_resnet || arch == Arch::anfr;
}

void ModelSpec::validate() const {
  if (widths.empty() || widths.size() != depths.size()) {
    throw ConfigError("model: widths and depths must be non-empty and match");
  }
  for (int w : widths) {
    if (w < 1) throw ConfigError("model: stage widths must be positive");
  }
  for (int d : depths) {
    if (d < 1) throw ConfigError("model: stage depths must be positive");
  }
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (in_channels < 1 || in_height < 1 || in_width < 1) {
    throw ConfigError("model: invalid input shape");
  }
  switch (arch) {
    case Arch::bn_resnet:
    case Arch::se_resnet:
      if (norm != NormKind::batch) {
        throw ConfigError("model: " + arch_name(arch) +
                          " requires batch normalization");
      }
      break;
    case Arch::gn_resnet:
      if (norm != NormKind::group) {
        throw ConfigError("model: gn_resnet requires group normalization");
      }
      break;
    case Arch::nf_resnet:
    case Arch::anfr:
      if (norm != NormKind::none) {
        throw ConfigError("model: " + arch_name(arch) +
                          " is normalization-free; norm kind must be none");
      }
      break;
  }
  if (arch == Arch::se_resnet && attention != AttentionKind::se) {
    throw ConfigError("model: se_resnet carries an SE block by construction");
  }
  if ((arch == Arch::bn_resnet || arch == Arch::gn_resnet ||
       arch == Arch::nf_resnet) &&
      attention != AttentionKind::none) {
    throw ConfigError("model: attention blocks are configurable on anfr only");
  }
  if (norm == NormKind::group) {
    for (int w : widths) {
      if (w % groups != 0) {
        throw ConfigError("model: width " + std::to_string(w) +
                          " not divisible by " + std::to_string(groups) +
                          " groups");
      }
    }
  }
  if (attention == AttentionKind::se || attention == AttentionKind::cbam) {
    for (int w : widths) {
      if (se_reduction < 1 || se_reduction > w) {
        throw ConfigError("model: attention reduction must lie in [1,width]");
      }
    }
  }
  if (attention == AttentionKind::eca &&
      (eca_kernel < 1 || eca_kernel % 2 == 0)) {
    throw ConfigError("model: eca kernel must be odd");
  }
  if (attention == AttentionKind::cbam && cbam_spatial_kernel % 2 == 0) {
    throw ConfigError("model: cbam spatial kernel must be odd");
  }
}

namespace {

// Residual branch scale for the normalization-free stacks.
constexpr double kNfAlpha = 0.2;

std::string norm_name(NormKind k) {
  switch (k) {
    case NormKind::batch: return "bn";
    case NormKind::group: return "gn";
    case NormKind::layer: return "ln";
    case NormKind::none: return "norm";
  }
  return "norm";
}

NormConfig norm_config(const ModelSpec& spec) {
  NormConfig cfg;
  cfg.kind = spec.norm;
  cfg.groups = spec.groups;
  cfg.eps = spec.norm_eps;
  cfg.momentum = spec.norm_momentum;
  return cfg;
}

AttentionConfig attention_config(const ModelSpec& spec) {
  AttentionConfig cfg;
  cfg.kind = spec.attention;
  cfg.reduction = spec.se_reduction;
  cfg.eca_kernel = spec.eca_kernel;
  cfg.spatial_kernel = spec.cbam_spatial_kernel;
  return cfg;
}

}  // namespace

ResidualBlock ResidualBlock::make(const ModelSpec& spec, int cin, int cout,
                                  bool transition, double beta_in,
                                  const std::string& name, Rng& rng) {
  ResidualBlock b;
  b.name_ = name;
  b.nf_ = spec.uses_sws();
  b.transition_ = transition;
  b.beta_in_ = beta_in;
  b.norm_prefix_ = norm_name(spec.norm);
  const bool sws = spec.uses_sws();
  // Downsampling uses 2x2 stride-2 kernels so output extents stay integral.
  if (transition) {
    b.conv1_ = Conv2dLayer::make(cin, cout, 2, 2, 0, sws, Nonlinearity::relu,
                                 sws, rng);
    b.proj_ = Conv2dLayer::make(cin, cout, 2, 2, 0, sws,
                                Nonlinearity::identity, sws, rng);
  } else {
    b.conv1_ = Conv2dLayer::make(cin, cout, 3, 1, 1, sws, Nonlinearity::relu,
                                 sws, rng);
  }
  b.conv2_ = Conv2dLayer::make(cout, cout, 3, 1, 1, sws, Nonlinearity::relu,
                               sws, rng);
  if (!sws) {
    NormConfig cfg = norm_config(spec);
    b.n1_ = NormLayer::make(cfg, cout);
    b.n2_ = NormLayer::make(cfg, cout);
    if (transition) b.nproj_ = NormLayer::make(cfg, cout);
  }
  b.att_ = Attention::make(spec.attention, cout, attention_config(spec), rng);
  return b;
}

Tensor ResidualBlock::forward(const Tensor& x, bool train, ProbeSink* sink) {
  Tensor gate;
  Tensor* gate_ptr = sink ? &gate : nullptr;
  if (!nf_) {
    Tensor t = ops::relu(n1_.forward(conv1_.forward(x), train));
    if (sink) sink->capture(name_ + ".pre_att", t);
    t = n2_.forward(conv2_.forward(t), train);
    t = att_.forward(t, gate_ptr);
    if (sink && gate.defined()) sink->capture(name_ + ".gate", gate);
    Tensor shortcut =
        transition_ ? nproj_.forward(proj_->forward(x), train) : x;
    Tensor y = ops::relu(ops::add(t, shortcut));
    if (sink) {
      sink->capture(name_ + ".post_att", y);
      sink->capture(name_ + ".out", y);
    }
    return y;
  }
  // Normalization-free stack: standardize the input by its tracked standard
  // deviation, keep the residual branch variance-preserving, and add it back
  // with a fixed small scale.
  Tensor xh = ops::mul_scalar(x, 1.0 / beta_in_);
  Tensor t = conv1_.forward(ops::relu(xh));
  t = ops::relu(t);
  if (sink) sink->capture(name_ + ".pre_att", t);
  t = conv2_.forward(t);
  if (att_.kind() != AttentionKind::none) {
    t = att_.forward(t, gate_ptr);
    // Gates average one half at init; the factor keeps the attended branch
    // variance-preserving within the normalization-free stack.
    t = ops::mul_scalar(t, 2.0);
  }
  if (sink && gate.defined()) sink->capture(name_ + ".gate", gate);
  Tensor shortcut = transition_ ? proj_->forward(xh) : x;
  Tensor y = ops::add(shortcut, ops::mul_scalar(t, alpha_));
  if (sink) {
    sink->capture(name_ + ".post_att", ops::relu(y));
    sink->capture(name_ + ".out", y);
  }
  return y;
}

void ResidualBlock::collect(std::vector<NamedTensor>& params,
                            std::vector<NamedTensor>& buffers) {
  conv1_.collect(name_ + ".conv1", params, buffers);
  if (!nf_) n1_.collect(name_ + "." + norm_prefix_ + "1", params, buffers);
  conv2_.collect(name_ + ".conv2", params, buffers);
  if (!nf_) n2_.collect(name_ + "." + norm_prefix_ + "2", params, buffers);
  if (proj_) {
    proj_->collect(name_ + ".proj", params, buffers);
    if (!nf_) {
      nproj_.collect(name_ + "." + norm_prefix_ + "proj", params, buffers);
    }
  }
  att_.collect(name_ + ".att", params, buffers);
}

Model build_model(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  Rng rng(seed);
  const bool sws = spec.uses_sws();
  m.stem_ = Conv2dLayer::make(spec.in_channels, spec.widths[0], 3, 1, 1, sws,
                              Nonlinearity::identity, sws, rng);
  if (!sws) {
    m.stem_norm_ = NormLayer::make(norm_config(spec), spec.widths[0]);
  }
  double var = 1.0;
  int cin = spec.widths[0];
  for (size_t s = 0; s < spec.widths.size(); ++s) {
    const int cout = spec.widths[s];
    for (int b = 0; b < spec.depths[s]; ++b) {
      const bool transition = (b == 0) && (s > 0);
      const std::string name =
          "stage" + std::to_string(s) + ".block" + std::to_string(b);
      m.blocks_.push_back(ResidualBlock::make(spec, cin, cout, transition,
                                              std::sqrt(var), name, rng));
      var = transition ? 1.0 + kNfAlpha * kNfAlpha : var + kNfAlpha * kNfAlpha;
      cin = cout;
    }
  }
  m.final_beta_ = std::sqrt(var);
  const int feat = spec.widths.back();
  m.head_w_ = Tensor::randn(Shape{spec.num_classes, feat}, rng,
                            std::sqrt(2.0 / feat), true);
  m.head_b_ = Tensor::zeros(Shape{spec.num_classes}, true);
  return m;
}

Tensor Model::forward(const Tensor& x, bool train, ProbeSink* sink) {
  if (x.shape().rank() != 4 || x.shape().dim(1) != spec_.in_channels) {
    throw ShapeError("model: expected [B," + std::to_string(spec_.in_channels) +
                     ",H,W] input, got " + x.shape().str());
  }
  Tensor h = stem_.forward(x);
  if (!spec_.uses_sws()) {
    h = ops::relu(stem_norm_.forward(h, train));
  }
  for (auto& block : blocks_) {
    h = block.forward(h, train, sink);
  }
  if (spec_.uses_sws()) {
    h = ops::relu(ops::mul_scalar(h, 1.0 / final_beta_));
  }
  Tensor z = ops::global_avg_pool(h);
  return ops::linear(z, head_w_, head_b_);
}

std::vector<NamedTensor> Model::named_parameters() {
  std::vector<NamedTensor> params, buffers;
  stem_.collect("stem.conv", params, buffers);
  if (!spec_.uses_sws()) {
    stem_norm_.collect("stem." + norm_name(spec_.norm), params, buffers);
  }
  for (auto& b : blocks_) b.collect(params, buffers);
  params.emplace_back("head.weight", head_w_);
  params.emplace_back("head.bias", head_b_);
  return params;
}

std::vector<NamedTensor> Model::named_buffers() {
  std::vector<NamedTensor> params, buffers;
  stem_.collect("stem.conv", params, buffers);
  if (!spec_.uses_sws()) {
    stem_norm_.collect("stem." + norm_name(spec_.norm), params, buffers);
  }
  for (auto& b : blocks_) b.collect(params, buffers);
  return buffers;
}

ParamVec Model::export_state() {
  ParamVec out;
  for (auto& [name, t] : named_parameters()) {
    out.push_back({name, t.shape().dims(), t.values()});
  }
  for (auto& [name, t] : named_buffers()) {
    out.push_back({name, t.shape().dims(), t.values()});
  }
  return out;
}

void Model::import_state(const ParamVec& state) {
  auto apply = [&](std::vector<NamedTensor> tensors) {
    for (auto& [name, t] : tensors) {
      const NamedVector* src = find_param(state, name);
      if (!src) continue;  // partial imports are allowed (personal overlays)
      if (src->shape != t.shape().dims() ||
          src->values.size() != t.values().size()) {
        throw ShapeError("import_state: shape mismatch for parameter '" +
                         name + "'");
      }
      t.mutable_values() = src->values;
    }
  };
  apply(named_parameters());
  apply(named_buffers());
}

void Model::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

std::vector<std::string> Model::block_names() const {
  std::vector<std::string> names;
  for (const auto& b : blocks_) names.push_back(b.name());
  return names;
}

std::vector<std::string> Model::attention_block_names() const {
  std::vector<std::string> names;
  for (const auto& b : blocks_) {
    if (b.has_attention()) names.push_back(b.name());
  }
  return names;
}

}  // namespace fedsim::nn
