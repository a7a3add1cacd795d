#pragma once

// Independent reference implementations used as test oracles. These are
// deliberately written as plain nested loops, with no code shared with the
// library paths they check.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracles {

// Direct six-nested-loop convolution.
inline std::vector<double> conv2d_loops(const std::vector<double>& x,
                                        int64_t B, int64_t Cin, int64_t H,
                                        int64_t W, const std::vector<double>& w,
                                        int64_t Cout, int64_t kH, int64_t kW,
                                        const std::vector<double>& bias,
                                        int stride, int pad) {
  const int64_t Ho = (H + 2 * pad - kH) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kW) / stride + 1;
  std::vector<double> out(static_cast<size_t>(B * Cout * Ho * Wo), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
          for (int64_t ci = 0; ci < Cin; ++ci)
            for (int64_t kh = 0; kh < kH; ++kh)
              for (int64_t kw = 0; kw < kW; ++kw) {
                const int64_t ih = oh * stride + kh - pad;
                const int64_t iw = ow * stride + kw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[static_cast<size_t>(((b * Cin + ci) * H + ih) * W +
                                             iw)] *
                       w[static_cast<size_t>(((co * Cin + ci) * kH + kh) * kW +
                                             kw)];
              }
          out[static_cast<size_t>(((b * Cout + co) * Ho + oh) * Wo + ow)] =
              acc;
        }
  return out;
}

// Naive triple-loop x[B,Fin] * w[Fout,Fin]^T + b.
inline std::vector<double> linear_loops(const std::vector<double>& x,
                                        int64_t B, int64_t Fin,
                                        const std::vector<double>& w,
                                        int64_t Fout,
                                        const std::vector<double>& bias) {
  std::vector<double> out(static_cast<size_t>(B * Fout), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t j = 0; j < Fout; ++j) {
      double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(j)];
      for (int64_t i = 0; i < Fin; ++i) {
        acc += x[static_cast<size_t>(b * Fin + i)] *
               w[static_cast<size_t>(j * Fin + i)];
      }
      out[static_cast<size_t>(b * Fout + j)] = acc;
    }
  return out;
}

// Explicit double-loop spatial mean.
inline std::vector<double> gap_loops(const std::vector<double>& x, int64_t B,
                                     int64_t C, int64_t H, int64_t W) {
  std::vector<double> out(static_cast<size_t>(B * C), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w_ = 0; w_ < W; ++w_) {
          acc += x[static_cast<size_t>(((b * C + c) * H + h) * W + w_)];
        }
      out[static_cast<size_t>(b * C + c)] =
          acc / static_cast<double>(H * W);
    }
  return out;
}

// Same-padded 1-D convolution over the channel axis of z[B,C].
inline std::vector<double> conv1d_loops(const std::vector<double>& z,
                                        int64_t B, int64_t C,
                                        const std::vector<double>& k) {
  const int64_t klen = static_cast<int64_t>(k.size());
  const int64_t p = (klen - 1) / 2;
  std::vector<double> out(static_cast<size_t>(B * C), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t j = 0; j < klen; ++j) {
        const int64_t cc = c + j - p;
        if (cc >= 0 && cc < C) {
          acc += k[static_cast<size_t>(j)] *
                 z[static_cast<size_t>(b * C + cc)];
        }
      }
      out[static_cast<size_t>(b * C + c)] = acc;
    }
  return out;
}

}  // namespace oracles
