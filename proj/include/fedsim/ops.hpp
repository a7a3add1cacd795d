#pragma once

#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim::ops {

// Elementwise; operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor relu(const Tensor& a);     // subgradient at 0 is 0
Tensor sigmoid(const Tensor& a);

// Layout ops. There is no implicit broadcasting anywhere; these are the
// explicit routes between shapes, which keeps every gradient rule auditable.
Tensor reshape(const Tensor& a, const Shape& s);
Tensor broadcast_to(const Tensor& a, const Shape& s);  // extents 1 expand
Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes);  // keepdims
Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes);   // keepdims
Tensor reduce_sum_all(const Tensor& a);  // -> shape [1]

// Rank-4 helpers used by the attention blocks.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor channel_mean(const Tensor& a);  // [B,C,H,W] -> [B,1,H,W]
Tensor channel_max(const Tensor& a);   // [B,C,H,W] -> [B,1,H,W]
Tensor spatial_max(const Tensor& a);   // [B,C,H,W] -> [B,C]

// Z[b,c] = mean over (h,w) of input[b,c,h,w].
Tensor global_avg_pool(const Tensor& a);  // [B,C,H,W] -> [B,C]

// input [B,Cin,H,W], weight [Cout,Cin,kH,kW], optional bias [Cout].
// Output extents must come out integral or a ConfigError is raised.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// input [B,F_in], weight [F_out,F_in], optional bias [F_out].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// 1-D convolution over the channel axis of a [B,C] descriptor with an
// odd-length kernel and zero same-padding.
Tensor conv1d_same(const Tensor& input, const Tensor& kernel);

// Per-row (w - mean) / max(std, eps) for a [R,N] matrix; rows with std below
// eps are centered and divided by eps, which maps constant rows to zero.
Tensor row_standardize(const Tensor& w, double eps);

enum class LossKind { cross_entropy, bce, focal };

// logits [B,K], targets [B] holding integral class indices.
Tensor cross_entropy(const Tensor& logits, const Tensor& targets,
                     const Tensor& class_weights = {});
// logits and targets [B,K]; targets in [0,1].
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets,
                       const Tensor& class_weights = {});
// Multi-class focal loss; focusing == 0 reduces exactly to cross_entropy.
Tensor focal_loss(const Tensor& logits, const Tensor& targets, double focusing,
                  const Tensor& class_weights = {});

Tensor loss(const Tensor& pred, const Tensor& target, LossKind kind,
            const Tensor& class_weights = {}, double focusing = 2.0);

}  // namespace fedsim::ops
