#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedsim/nn.hpp"
#include "fedsim/params.hpp"

namespace fedsim::nn {

enum class Arch { bn_resnet, gn_resnet, se_resnet, nf_resnet, anfr };

std::string arch_name(Arch a);
Arch parse_arch(const std::string& name);
std::string attention_name(AttentionKind k);
AttentionKind parse_attention(const std::string& name);

// Declarative architecture description. Norm kind and attention placement are
// tied to the architecture family; validate() rejects combinations such as
// weight-standardized models carrying batch norm.
struct ModelSpec {
  Arch arch = Arch::anfr;
  NormKind norm = NormKind::none;  // set by for_arch; must stay consistent
  AttentionKind attention = AttentionKind::none;
  std::vector<int> widths{16, 32, 64};
  std::vector<int> depths{2, 2, 2};
  int num_classes = 4;
  int groups = 8;
  int se_reduction = 4;
  int eca_kernel = 3;
  int cbam_spatial_kernel = 7;
  int in_channels = 3;
  int in_height = 16;
  int in_width = 16;
  double norm_eps = 1e-5;
  double norm_momentum = 0.1;

  static ModelSpec for_arch(Arch a);
  bool uses_sws() const;
  bool has_batch_norm() const { return norm == NormKind::batch; }
  bool has_attention() const { return attention != AttentionKind::none; }
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

// Receives intermediate activations during a forward pass. Block probes are
// published as "<block>.pre_att" / "<block>.post_att"; channel-attention
// gates as "<block>.gate".
struct ProbeSink {
  virtual ~ProbeSink() = default;
  virtual void capture(const std::string& name, const Tensor& value) = 0;
};

class ResidualBlock {
 public:
  static ResidualBlock make(const ModelSpec& spec, int cin, int cout,
                            bool transition, double beta_in,
                            const std::string& name, Rng& rng);
  Tensor forward(const Tensor& x, bool train, ProbeSink* sink);
  void collect(std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);
  const std::string& name() const { return name_; }
  bool has_attention() const {
    return att_.kind() != AttentionKind::none;
  }

 private:
  std::string name_;
  bool nf_ = false;
  bool transition_ = false;
  double alpha_ = 0.2;
  double beta_in_ = 1.0;
  Conv2dLayer conv1_, conv2_;
  std::optional<Conv2dLayer> proj_;
  NormLayer n1_, n2_, nproj_;
  Attention att_;
  std::string norm_prefix_;
};

class Model {
 public:
  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  Tensor forward(const Tensor& x, bool train, ProbeSink* sink = nullptr);

  const ModelSpec& spec() const { return spec_; }
  std::vector<NamedTensor> named_parameters();
  std::vector<NamedTensor> named_buffers();
  ParamVec export_state();                  // parameters then buffers
  void import_state(const ParamVec& state); // by name, shape-checked
  void zero_grad();

  std::vector<std::string> block_names() const;
  std::vector<std::string> attention_block_names() const;

 private:
  friend Model build_model(const ModelSpec& spec, uint64_t seed);
  ModelSpec spec_;
  Conv2dLayer stem_;
  NormLayer stem_norm_;
  std::vector<ResidualBlock> blocks_;
  Tensor head_w_, head_b_;
  double final_beta_ = 1.0;
};

// He-normal initialization from the seed; identical seeds produce
// bit-identical parameter sets.
Model build_model(const ModelSpec& spec, uint64_t seed);

}  // namespace fedsim::nn
