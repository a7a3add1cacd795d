#include "fedsim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fedsim/error.hpp"
#include "fedsim/linalg.hpp"

namespace fedsim::ops {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;

namespace {

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw Error(std::string(op) + ": undefined input tensor");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  check_defined(a, op);
  check_defined(b, op);
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Pads dims with leading 1s to rank 4 for uniform nested iteration.
struct Dims4 {
  int64_t d[4] = {1, 1, 1, 1};
  int64_t stride[4] = {0, 0, 0, 0};
};

Dims4 padded(const Shape& s) {
  Dims4 r;
  const int off = 4 - s.rank();
  for (int i = 0; i < s.rank(); ++i) r.d[off + i] = s.dim(i);
  int64_t st = 1;
  for (int i = 3; i >= 0; --i) {
    r.stride[i] = st;
    st *= r.d[i];
  }
  return r;
}

// Strides into `inner` for iteration over `outer`, with 0 where inner has
// extent 1 (the broadcast / reduced axes).
Dims4 aligned_strides(const Shape& outer, const Shape& inner) {
  Dims4 out = padded(outer);
  Dims4 in = padded(inner);
  Dims4 r = out;
  for (int i = 0; i < 4; ++i) r.stride[i] = (in.d[i] == 1) ? 0 : in.stride[i];
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] + bv[i];
  auto bw = [o = out, ai = a.impl(), bi = b.impl()]() {
    const auto& g = o->grad;
    if (ai->requires_grad) {
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
    }
    if (bi->requires_grad) {
      detail::ensure_grad(*bi);
      for (size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i];
    }
  };
  return detail::attach(out, {a.impl(), b.impl()}, bw);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] - bv[i];
  auto bw = [o = out, ai = a.impl(), bi = b.impl()]() {
    const auto& g = o->grad;
    if (ai->requires_grad) {
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
    }
    if (bi->requires_grad) {
      detail::ensure_grad(*bi);
      for (size_t i = 0; i < g.size(); ++i) bi->grad[i] -= g[i];
    }
  };
  return detail::attach(out, {a.impl(), b.impl()}, bw);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] * bv[i];
  auto bw = [o = out, ai = a.impl(), bi = b.impl()]() {
    const auto& g = o->grad;
    if (ai->requires_grad) {
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] * bi->values[i];
    }
    if (bi->requires_grad) {
      detail::ensure_grad(*bi);
      for (size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i] * ai->values[i];
    }
  };
  return detail::attach(out, {a.impl(), b.impl()}, bw);
}

Tensor add_scalar(const Tensor& a, double c) {
  check_defined(a, "add_scalar");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] + c;
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) ai->grad[i] += o->grad[i];
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor mul_scalar(const Tensor& a, double c) {
  check_defined(a, "mul_scalar");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] * c;
  auto bw = [o = out, ai = a.impl(), c]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) ai->grad[i] += c * o->grad[i];
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor square(const Tensor& a) {
  check_defined(a, "square");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] * av[i];
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) {
      ai->grad[i] += 2.0 * ai->values[i] * o->grad[i];
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor sqrt(const Tensor& a) {
  check_defined(a, "sqrt");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = std::sqrt(av[i]);
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) {
      ai->grad[i] += o->grad[i] / (2.0 * o->values[i]);
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor exp(const Tensor& a) {
  check_defined(a, "exp");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = std::exp(av[i]);
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) {
      ai->grad[i] += o->grad[i] * o->values[i];
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor log(const Tensor& a) {
  check_defined(a, "log");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = std::log(av[i]);
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) {
      ai->grad[i] += o->grad[i] / ai->values[i];
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor reciprocal(const Tensor& a) {
  check_defined(a, "reciprocal");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = 1.0 / av[i];
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) {
      ai->grad[i] -= o->grad[i] * o->values[i] * o->values[i];
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor relu(const Tensor& a) {
  check_defined(a, "relu");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = std::max(0.0, av[i]);
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) {
      if (ai->values[i] > 0.0) ai->grad[i] += o->grad[i];
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor sigmoid(const Tensor& a) {
  check_defined(a, "sigmoid");
  auto out = detail::alloc(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) {
    out->values[i] = stable_sigmoid(av[i]);
  }
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) {
      const double s = o->values[i];
      ai->grad[i] += o->grad[i] * s * (1.0 - s);
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor reshape(const Tensor& a, const Shape& s) {
  check_defined(a, "reshape");
  if (a.numel() != s.numel()) {
    throw ShapeError("reshape: element count mismatch " + a.shape().str() +
                     " -> " + s.str());
  }
  auto out = detail::alloc(s);
  out->values = a.values();
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (size_t i = 0; i < o->grad.size(); ++i) ai->grad[i] += o->grad[i];
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor broadcast_to(const Tensor& a, const Shape& s) {
  check_defined(a, "broadcast_to");
  if (a.shape().rank() != s.rank()) {
    throw ShapeError("broadcast_to: rank mismatch " + a.shape().str() +
                     " -> " + s.str());
  }
  for (int i = 0; i < s.rank(); ++i) {
    if (a.shape().dim(i) != s.dim(i) && a.shape().dim(i) != 1) {
      throw ShapeError("broadcast_to: incompatible " + a.shape().str() +
                       " -> " + s.str());
    }
  }
  auto out = detail::alloc(s);
  const Dims4 od = padded(s);
  const Dims4 in = aligned_strides(s, a.shape());
  const auto& av = a.values();
  size_t idx = 0;
  for (int64_t i0 = 0; i0 < od.d[0]; ++i0)
    for (int64_t i1 = 0; i1 < od.d[1]; ++i1)
      for (int64_t i2 = 0; i2 < od.d[2]; ++i2)
        for (int64_t i3 = 0; i3 < od.d[3]; ++i3) {
          out->values[idx++] = av[static_cast<size_t>(
              i0 * in.stride[0] + i1 * in.stride[1] + i2 * in.stride[2] +
              i3 * in.stride[3])];
        }
  auto bw = [o = out, ai = a.impl(), od, in]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    size_t idx = 0;
    for (int64_t i0 = 0; i0 < od.d[0]; ++i0)
      for (int64_t i1 = 0; i1 < od.d[1]; ++i1)
        for (int64_t i2 = 0; i2 < od.d[2]; ++i2)
          for (int64_t i3 = 0; i3 < od.d[3]; ++i3) {
            ai->grad[static_cast<size_t>(
                i0 * in.stride[0] + i1 * in.stride[1] + i2 * in.stride[2] +
                i3 * in.stride[3])] += o->grad[idx++];
          }
  };
  return detail::attach(out, {a.impl()}, bw);
}

namespace {

Tensor reduce_impl(const Tensor& a, const std::vector<int>& axes, bool mean) {
  check_defined(a, "reduce");
  std::vector<int64_t> out_dims = a.shape().dims();
  int64_t count = 1;
  for (int ax : axes) {
    if (ax < 0 || ax >= a.shape().rank()) {
      throw ShapeError("reduce: axis " + std::to_string(ax) +
                       " out of range for " + a.shape().str());
    }
    count *= out_dims[static_cast<size_t>(ax)];
    out_dims[static_cast<size_t>(ax)] = 1;
  }
  Shape out_shape(out_dims);
  auto out = detail::alloc(out_shape);
  const Dims4 id = padded(a.shape());
  const Dims4 os = aligned_strides(a.shape(), out_shape);
  const auto& av = a.values();
  const double scale = mean ? 1.0 / static_cast<double>(count) : 1.0;
  size_t idx = 0;
  for (int64_t i0 = 0; i0 < id.d[0]; ++i0)
    for (int64_t i1 = 0; i1 < id.d[1]; ++i1)
      for (int64_t i2 = 0; i2 < id.d[2]; ++i2)
        for (int64_t i3 = 0; i3 < id.d[3]; ++i3) {
          out->values[static_cast<size_t>(
              i0 * os.stride[0] + i1 * os.stride[1] + i2 * os.stride[2] +
              i3 * os.stride[3])] += av[idx++];
        }
  if (mean) {
    for (double& v : out->values) v *= scale;
  }
  auto bw = [o = out, ai = a.impl(), id, os, scale]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    size_t idx = 0;
    for (int64_t i0 = 0; i0 < id.d[0]; ++i0)
      for (int64_t i1 = 0; i1 < id.d[1]; ++i1)
        for (int64_t i2 = 0; i2 < id.d[2]; ++i2)
          for (int64_t i3 = 0; i3 < id.d[3]; ++i3) {
            ai->grad[idx++] += scale * o->grad[static_cast<size_t>(
                                           i0 * os.stride[0] +
                                           i1 * os.stride[1] +
                                           i2 * os.stride[2] +
                                           i3 * os.stride[3])];
          }
  };
  return detail::attach(out, {a.impl()}, bw);
}

}  // namespace

Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes) {
  return reduce_impl(a, axes, true);
}

Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes) {
  return reduce_impl(a, axes, false);
}

Tensor reduce_sum_all(const Tensor& a) {
  check_defined(a, "reduce_sum_all");
  auto out = detail::alloc(Shape{1});
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  out->values[0] = acc;
  auto bw = [o = out, ai = a.impl()]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    const double g = o->grad[0];
    for (double& v : ai->grad) v += g;
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_defined(a, "concat_channels");
  check_defined(b, "concat_channels");
  if (a.shape().rank() != 4 || b.shape().rank() != 4 ||
      a.shape().dim(0) != b.shape().dim(0) ||
      a.shape().dim(2) != b.shape().dim(2) ||
      a.shape().dim(3) != b.shape().dim(3)) {
    throw ShapeError("concat_channels: incompatible " + a.shape().str() +
                     " and " + b.shape().str());
  }
  const int64_t B = a.shape().dim(0), Ca = a.shape().dim(1),
                Cb = b.shape().dim(1), H = a.shape().dim(2),
                W = a.shape().dim(3);
  auto out = detail::alloc(Shape{B, Ca + Cb, H, W});
  const int64_t plane = H * W;
  for (int64_t n = 0; n < B; ++n) {
    std::memcpy(out->values.data() + (n * (Ca + Cb)) * plane,
                a.values().data() + n * Ca * plane,
                sizeof(double) * static_cast<size_t>(Ca * plane));
    std::memcpy(out->values.data() + (n * (Ca + Cb) + Ca) * plane,
                b.values().data() + n * Cb * plane,
                sizeof(double) * static_cast<size_t>(Cb * plane));
  }
  auto bw = [o = out, ai = a.impl(), bi = b.impl(), B, Ca, Cb, plane]() {
    for (int64_t n = 0; n < B; ++n) {
      if (ai->requires_grad) {
        detail::ensure_grad(*ai);
        const double* g = o->grad.data() + (n * (Ca + Cb)) * plane;
        double* d = ai->grad.data() + n * Ca * plane;
        for (int64_t i = 0; i < Ca * plane; ++i) d[i] += g[i];
      }
      if (bi->requires_grad) {
        detail::ensure_grad(*bi);
        const double* g = o->grad.data() + (n * (Ca + Cb) + Ca) * plane;
        double* d = bi->grad.data() + n * Cb * plane;
        for (int64_t i = 0; i < Cb * plane; ++i) d[i] += g[i];
      }
    }
  };
  return detail::attach(out, {a.impl(), b.impl()}, bw);
}

namespace {

void check_rank4(const Tensor& a, const char* op) {
  check_defined(a, op);
  if (a.shape().rank() != 4) {
    throw ShapeError(std::string(op) + ": rank-4 input required, got " +
                     a.shape().str());
  }
}

}  // namespace

Tensor channel_mean(const Tensor& a) {
  check_rank4(a, "channel_mean");
  return reduce_mean(a, {1});
}

Tensor channel_max(const Tensor& a) {
  check_rank4(a, "channel_max");
  const int64_t B = a.shape().dim(0), C = a.shape().dim(1),
                H = a.shape().dim(2), W = a.shape().dim(3);
  auto out = detail::alloc(Shape{B, 1, H, W});
  const int64_t plane = H * W;
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(B * plane));
  const auto& av = a.values();
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t p = 0; p < plane; ++p) {
      int64_t best_c = 0;
      double best = av[static_cast<size_t>((n * C) * plane + p)];
      for (int64_t c = 1; c < C; ++c) {
        const double v = av[static_cast<size_t>((n * C + c) * plane + p)];
        if (v > best) {
          best = v;
          best_c = c;
        }
      }
      out->values[static_cast<size_t>(n * plane + p)] = best;
      (*argmax)[static_cast<size_t>(n * plane + p)] = best_c;
    }
  }
  auto bw = [o = out, ai = a.impl(), argmax, B, C, plane]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (int64_t n = 0; n < B; ++n) {
      for (int64_t p = 0; p < plane; ++p) {
        const int64_t c = (*argmax)[static_cast<size_t>(n * plane + p)];
        ai->grad[static_cast<size_t>((n * C + c) * plane + p)] +=
            o->grad[static_cast<size_t>(n * plane + p)];
      }
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor spatial_max(const Tensor& a) {
  check_rank4(a, "spatial_max");
  const int64_t B = a.shape().dim(0), C = a.shape().dim(1),
                H = a.shape().dim(2), W = a.shape().dim(3);
  auto out = detail::alloc(Shape{B, C});
  const int64_t plane = H * W;
  auto argmax =
      std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * C));
  const auto& av = a.values();
  for (int64_t n = 0; n < B * C; ++n) {
    int64_t best_p = 0;
    double best = av[static_cast<size_t>(n * plane)];
    for (int64_t p = 1; p < plane; ++p) {
      const double v = av[static_cast<size_t>(n * plane + p)];
      if (v > best) {
        best = v;
        best_p = p;
      }
    }
    out->values[static_cast<size_t>(n)] = best;
    (*argmax)[static_cast<size_t>(n)] = best_p;
  }
  auto bw = [o = out, ai = a.impl(), argmax, B, C, plane]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (int64_t n = 0; n < B * C; ++n) {
      ai->grad[static_cast<size_t>(n * plane + (*argmax)[n])] +=
          o->grad[static_cast<size_t>(n)];
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

Tensor global_avg_pool(const Tensor& a) {
  check_rank4(a, "global_avg_pool");
  const int64_t B = a.shape().dim(0), C = a.shape().dim(1),
                H = a.shape().dim(2), W = a.shape().dim(3);
  auto out = detail::alloc(Shape{B, C});
  const int64_t plane = H * W;
  const double inv = 1.0 / static_cast<double>(plane);
  const auto& av = a.values();
  for (int64_t n = 0; n < B * C; ++n) {
    double acc = 0.0;
    for (int64_t p = 0; p < plane; ++p) {
      acc += av[static_cast<size_t>(n * plane + p)];
    }
    out->values[static_cast<size_t>(n)] = acc * inv;
  }
  auto bw = [o = out, ai = a.impl(), B, C, plane, inv]() {
    if (!ai->requires_grad) return;
    detail::ensure_grad(*ai);
    for (int64_t n = 0; n < B * C; ++n) {
      const double g = o->grad[static_cast<size_t>(n)] * inv;
      for (int64_t p = 0; p < plane; ++p) {
        ai->grad[static_cast<size_t>(n * plane + p)] += g;
      }
    }
  };
  return detail::attach(out, {a.impl()}, bw);
}

namespace {

struct ConvDims {
  int64_t B, Cin, H, W, Cout, kH, kW, Ho, Wo;
  int stride, pad;
  int64_t K() const { return Cin * kH * kW; }
  int64_t N() const { return Ho * Wo; }
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, int stride,
                   int padding) {
  if (input.shape().rank() != 4 || weight.shape().rank() != 4) {
    throw ShapeError("conv2d: input " + input.shape().str() + " and weight " +
                     weight.shape().str() + " must be rank 4");
  }
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  ConvDims d;
  d.B = input.shape().dim(0);
  d.Cin = input.shape().dim(1);
  d.H = input.shape().dim(2);
  d.W = input.shape().dim(3);
  d.Cout = weight.shape().dim(0);
  d.kH = weight.shape().dim(2);
  d.kW = weight.shape().dim(3);
  d.stride = stride;
  d.pad = padding;
  if (weight.shape().dim(1) != d.Cin) {
    throw ShapeError("conv2d: channel mismatch between input " +
                     input.shape().str() + " and weight " +
                     weight.shape().str());
  }
  const int64_t eh = d.H + 2 * padding - d.kH;
  const int64_t ew = d.W + 2 * padding - d.kW;
  if (eh < 0 || ew < 0 || eh % stride != 0 || ew % stride != 0) {
    throw ConfigError("conv2d: output extent is not a positive integer for "
                      "input " +
                      input.shape().str() + ", kernel " +
                      weight.shape().str() + ", stride " +
                      std::to_string(stride) + ", padding " +
                      std::to_string(padding));
  }
  d.Ho = eh / stride + 1;
  d.Wo = ew / stride + 1;
  return d;
}

void im2col(const double* x, const ConvDims& d, double* cols) {
  // cols is [K, N] with K = Cin*kH*kW and N = Ho*Wo.
  for (int64_t c = 0; c < d.Cin; ++c) {
    for (int64_t kh = 0; kh < d.kH; ++kh) {
      for (int64_t kw = 0; kw < d.kW; ++kw) {
        double* row = cols + ((c * d.kH + kh) * d.kW + kw) * d.N();
        for (int64_t oh = 0; oh < d.Ho; ++oh) {
          const int64_t ih = oh * d.stride + kh - d.pad;
          for (int64_t ow = 0; ow < d.Wo; ++ow) {
            const int64_t iw = ow * d.stride + kw - d.pad;
            row[oh * d.Wo + ow] =
                (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W)
                    ? x[(c * d.H + ih) * d.W + iw]
                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc(const double* cols, const ConvDims& d, double* dx) {
  for (int64_t c = 0; c < d.Cin; ++c) {
    for (int64_t kh = 0; kh < d.kH; ++kh) {
      for (int64_t kw = 0; kw < d.kW; ++kw) {
        const double* row = cols + ((c * d.kH + kh) * d.kW + kw) * d.N();
        for (int64_t oh = 0; oh < d.Ho; ++oh) {
          const int64_t ih = oh * d.stride + kh - d.pad;
          if (ih < 0 || ih >= d.H) continue;
          for (int64_t ow = 0; ow < d.Wo; ++ow) {
            const int64_t iw = ow * d.stride + kw - d.pad;
            if (iw < 0 || iw >= d.W) continue;
            dx[(c * d.H + ih) * d.W + iw] += row[oh * d.Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  check_defined(input, "conv2d");
  check_defined(weight, "conv2d");
  const ConvDims d = conv_dims(input, weight, stride, padding);
  if (bias.defined() &&
      (bias.shape().rank() != 1 || bias.shape().dim(0) != d.Cout)) {
    throw ShapeError("conv2d: bias " + bias.shape().str() +
                     " does not match output channels " +
                     std::to_string(d.Cout));
  }
  auto out = detail::alloc(Shape{d.B, d.Cout, d.Ho, d.Wo});
  std::vector<double> cols(static_cast<size_t>(d.K() * d.N()));
  const double* x = input.values().data();
  const double* w = weight.values().data();
  for (int64_t n = 0; n < d.B; ++n) {
    im2col(x + n * d.Cin * d.H * d.W, d, cols.data());
    double* out_n = out->values.data() + n * d.Cout * d.N();
    linalg::gemm(w, cols.data(), out_n, static_cast<int>(d.Cout),
                 static_cast<int>(d.K()), static_cast<int>(d.N()));
    if (bias.defined()) {
      const double* bv = bias.values().data();
      for (int64_t c = 0; c < d.Cout; ++c) {
        double* row = out_n + c * d.N();
        for (int64_t i = 0; i < d.N(); ++i) row[i] += bv[c];
      }
    }
  }
  auto bi = bias.defined() ? bias.impl() : nullptr;
  auto bw = [o = out, xi = input.impl(), wi = weight.impl(), bi, d]() {
    std::vector<double> cols(static_cast<size_t>(d.K() * d.N()));
    std::vector<double> dcols;
    if (xi->requires_grad) {
      detail::ensure_grad(*xi);
      dcols.assign(static_cast<size_t>(d.K() * d.N()), 0.0);
    }
    if (wi->requires_grad) detail::ensure_grad(*wi);
    if (bi && bi->requires_grad) detail::ensure_grad(*bi);
    for (int64_t n = 0; n < d.B; ++n) {
      const double* g_n = o->grad.data() + n * d.Cout * d.N();
      if (wi->requires_grad || xi->requires_grad) {
        im2col(xi->values.data() + n * d.Cin * d.H * d.W, d, cols.data());
      }
      if (wi->requires_grad) {
        linalg::gemm_a_bt_acc(g_n, cols.data(), wi->grad.data(),
                              static_cast<int>(d.Cout),
                              static_cast<int>(d.N()),
                              static_cast<int>(d.K()));
      }
      if (xi->requires_grad) {
        linalg::gemm_at_b(wi->values.data(), g_n, dcols.data(),
                          static_cast<int>(d.K()), static_cast<int>(d.Cout),
                          static_cast<int>(d.N()));
        col2im_acc(dcols.data(), d, xi->grad.data() + n * d.Cin * d.H * d.W);
      }
      if (bi && bi->requires_grad) {
        for (int64_t c = 0; c < d.Cout; ++c) {
          const double* row = g_n + c * d.N();
          double acc = 0.0;
          for (int64_t i = 0; i < d.N(); ++i) acc += row[i];
          bi->grad[static_cast<size_t>(c)] += acc;
        }
      }
    }
  };
  std::vector<Impl> inputs{input.impl(), weight.impl()};
  if (bi) inputs.push_back(bi);
  return detail::attach(out, std::move(inputs), bw);
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  check_defined(input, "linear");
  check_defined(weight, "linear");
  if (input.shape().rank() != 2 || weight.shape().rank() != 2 ||
      input.shape().dim(1) != weight.shape().dim(1)) {
    throw ShapeError("linear: dimension mismatch between input " +
                     input.shape().str() + " and weight " +
                     weight.shape().str());
  }
  const int64_t B = input.shape().dim(0), Fin = input.shape().dim(1),
                Fout = weight.shape().dim(0);
  if (bias.defined() &&
      (bias.shape().rank() != 1 || bias.shape().dim(0) != Fout)) {
    throw ShapeError("linear: bias " + bias.shape().str() +
                     " does not match output features " +
                     std::to_string(Fout));
  }
  auto out = detail::alloc(Shape{B, Fout});
  linalg::gemm_a_bt_acc(input.values().data(), weight.values().data(),
                        out->values.data(), static_cast<int>(B),
                        static_cast<int>(Fin), static_cast<int>(Fout));
  if (bias.defined()) {
    const double* bv = bias.values().data();
    for (int64_t n = 0; n < B; ++n) {
      double* row = out->values.data() + n * Fout;
      for (int64_t j = 0; j < Fout; ++j) row[j] += bv[j];
    }
  }
  auto bi = bias.defined() ? bias.impl() : nullptr;
  auto bw = [o = out, xi = input.impl(), wi = weight.impl(), bi, B, Fin,
             Fout]() {
    if (xi->requires_grad) {
      detail::ensure_grad(*xi);
      linalg::gemm_acc(o->grad.data(), wi->values.data(), xi->grad.data(),
                       static_cast<int>(B), static_cast<int>(Fout),
                       static_cast<int>(Fin));
    }
    if (wi->requires_grad) {
      detail::ensure_grad(*wi);
      for (int64_t n = 0; n < B; ++n) {
        const double* g = o->grad.data() + n * Fout;
        const double* x = xi->values.data() + n * Fin;
        for (int64_t j = 0; j < Fout; ++j) {
          double* wrow = wi->grad.data() + j * Fin;
          const double gj = g[j];
          for (int64_t i = 0; i < Fin; ++i) wrow[i] += gj * x[i];
        }
      }
    }
    if (bi && bi->requires_grad) {
      detail::ensure_grad(*bi);
      for (int64_t n = 0; n < B; ++n) {
        const double* g = o->grad.data() + n * Fout;
        for (int64_t j = 0; j < Fout; ++j) bi->grad[static_cast<size_t>(j)] += g[j];
      }
    }
  };
  std::vector<Impl> inputs{input.impl(), weight.impl()};
  if (bi) inputs.push_back(bi);
  return detail::attach(out, std::move(inputs), bw);
}

Tensor conv1d_same(const Tensor& input, const Tensor& kernel) {
  check_defined(input, "conv1d_same");
  check_defined(kernel, "conv1d_same");
  if (input.shape().rank() != 2 || kernel.shape().rank() != 1) {
    throw ShapeError("conv1d_same: expected [B,C] input and rank-1 kernel, "
                     "got " +
                     input.shape().str() + " and " + kernel.shape().str());
  }
  const int64_t k = kernel.shape().dim(0);
  if (k % 2 == 0) {
    throw ConfigError("conv1d_same: kernel length must be odd, got " +
                      std::to_string(k));
  }
  const int64_t B = input.shape().dim(0), C = input.shape().dim(1);
  const int64_t p = (k - 1) / 2;
  auto out = detail::alloc(Shape{B, C});
  const auto& xv = input.values();
  const auto& kv = kernel.values();
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        const int64_t cc = c + j - p;
        if (cc >= 0 && cc < C) acc += kv[static_cast<size_t>(j)] *
                                      xv[static_cast<size_t>(n * C + cc)];
      }
      out->values[static_cast<size_t>(n * C + c)] = acc;
    }
  }
  auto bw = [o = out, xi = input.impl(), ki = kernel.impl(), B, C, k, p]() {
    if (xi->requires_grad) detail::ensure_grad(*xi);
    if (ki->requires_grad) detail::ensure_grad(*ki);
    for (int64_t n = 0; n < B; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        const double g = o->grad[static_cast<size_t>(n * C + c)];
        for (int64_t j = 0; j < k; ++j) {
          const int64_t cc = c + j - p;
          if (cc < 0 || cc >= C) continue;
          if (xi->requires_grad) {
            xi->grad[static_cast<size_t>(n * C + cc)] +=
                g * ki->values[static_cast<size_t>(j)];
          }
          if (ki->requires_grad) {
            ki->grad[static_cast<size_t>(j)] +=
                g * xi->values[static_cast<size_t>(n * C + cc)];
          }
        }
      }
    }
  };
  return detail::attach(out, {input.impl(), kernel.impl()}, bw);
}

Tensor row_standardize(const Tensor& w, double eps) {
  check_defined(w, "row_standardize");
  if (w.shape().rank() != 2) {
    throw ShapeError("row_standardize: rank-2 input required, got " +
                     w.shape().str());
  }
  if (eps <= 0.0) throw ConfigError("row_standardize: eps must be positive");
  const int64_t R = w.shape().dim(0), N = w.shape().dim(1);
  auto out = detail::alloc(w.shape());
  auto sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(R));
  const auto& wv = w.values();
  for (int64_t r = 0; r < R; ++r) {
    const double* row = wv.data() + r * N;
    double mu = 0.0;
    for (int64_t i = 0; i < N; ++i) mu += row[i];
    mu /= static_cast<double>(N);
    double var = 0.0;
    for (int64_t i = 0; i < N; ++i) {
      const double c = row[i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(N);
    const double sd = std::sqrt(var);
    (*sigma)[static_cast<size_t>(r)] = sd;
    const double denom = std::max(sd, eps);
    double* orow = out->values.data() + r * N;
    for (int64_t i = 0; i < N; ++i) orow[i] = (row[i] - mu) / denom;
  }
  auto bw = [o = out, wi = w.impl(), sigma, R, N, eps]() {
    if (!wi->requires_grad) return;
    detail::ensure_grad(*wi);
    const double inv_n = 1.0 / static_cast<double>(N);
    for (int64_t r = 0; r < R; ++r) {
      const double* g = o->grad.data() + r * N;
      const double* y = o->values.data() + r * N;
      const double sd = (*sigma)[static_cast<size_t>(r)];
      const double denom = std::max(sd, eps);
      double mean_g = 0.0, mean_gy = 0.0;
      for (int64_t i = 0; i < N; ++i) {
        mean_g += g[i];
        mean_gy += g[i] * y[i];
      }
      mean_g *= inv_n;
      mean_gy *= inv_n;
      double* d = wi->grad.data() + r * N;
      if (sd > eps) {
        for (int64_t i = 0; i < N; ++i) {
          d[i] += (g[i] - mean_g - y[i] * mean_gy) / denom;
        }
      } else {
        for (int64_t i = 0; i < N; ++i) d[i] += (g[i] - mean_g) / denom;
      }
    }
  };
  return detail::attach(out, {w.impl()}, bw);
}

namespace {

struct CeTargets {
  std::vector<int64_t> idx;
  std::vector<double> w;  // per-sample weight
  double wsum = 0.0;
};

CeTargets resolve_targets(const Tensor& logits, const Tensor& targets,
                          const Tensor& class_weights, const char* op) {
  if (logits.shape().rank() != 2) {
    throw ShapeError(std::string(op) + ": logits must be [B,K], got " +
                     logits.shape().str());
  }
  const int64_t B = logits.shape().dim(0), K = logits.shape().dim(1);
  if (targets.shape().rank() != 1 || targets.shape().dim(0) != B) {
    throw ShapeError(std::string(op) + ": targets must be [B], got " +
                     targets.shape().str());
  }
  if (class_weights.defined() &&
      (class_weights.shape().rank() != 1 ||
       class_weights.shape().dim(0) != K)) {
    throw ShapeError(std::string(op) + ": class_weights must be [K], got " +
                     class_weights.shape().str());
  }
  CeTargets r;
  r.idx.resize(static_cast<size_t>(B));
  r.w.resize(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    const double t = targets.values()[static_cast<size_t>(b)];
    if (t != std::floor(t) || t < 0.0 || t >= static_cast<double>(K)) {
      throw NumericError(std::string(op) + ": target class index " +
                         std::to_string(t) + " out of range [0," +
                         std::to_string(K) + ") at row " + std::to_string(b));
    }
    r.idx[static_cast<size_t>(b)] = static_cast<int64_t>(t);
    r.w[static_cast<size_t>(b)] =
        class_weights.defined()
            ? class_weights.values()[static_cast<size_t>(
                  static_cast<int64_t>(t))]
            : 1.0;
    r.wsum += r.w[static_cast<size_t>(b)];
  }
  if (r.wsum <= 0.0) {
    throw NumericError(std::string(op) +
                       ": sum of applied class weights is not positive");
  }
  return r;
}

void softmax_row(const double* z, int64_t K, double* p) {
  double m = z[0];
  for (int64_t j = 1; j < K; ++j) m = std::max(m, z[j]);
  double s = 0.0;
  for (int64_t j = 0; j < K; ++j) {
    p[j] = std::exp(z[j] - m);
    s += p[j];
  }
  for (int64_t j = 0; j < K; ++j) p[j] /= s;
}

double log_sum_exp_row(const double* z, int64_t K) {
  double m = z[0];
  for (int64_t j = 1; j < K; ++j) m = std::max(m, z[j]);
  double s = 0.0;
  for (int64_t j = 0; j < K; ++j) s += std::exp(z[j] - m);
  return m + std::log(s);
}

}  // namespace

Tensor focal_loss(const Tensor& logits, const Tensor& targets, double focusing,
                  const Tensor& class_weights) {
  check_defined(logits, "focal_loss");
  check_defined(targets, "focal_loss");
  if (focusing < 0.0) {
    throw ConfigError("focal_loss: focusing parameter must be >= 0");
  }
  const auto t = resolve_targets(logits, targets, class_weights, "focal_loss");
  const int64_t B = logits.shape().dim(0), K = logits.shape().dim(1);
  auto out = detail::alloc(Shape{1});
  const auto& zv = logits.values();
  double acc = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    const double* z = zv.data() + b * K;
    const double lse = log_sum_exp_row(z, K);
    const double ce = lse - z[t.idx[static_cast<size_t>(b)]];
    double mod = 1.0;
    if (focusing != 0.0) {
      const double pt = std::exp(z[t.idx[static_cast<size_t>(b)]] - lse);
      mod = std::pow(1.0 - pt, focusing);
    }
    acc += t.w[static_cast<size_t>(b)] * mod * ce;
  }
  out->values[0] = acc / t.wsum;
  auto bw = [o = out, zi = logits.impl(), t, focusing, B, K]() {
    if (!zi->requires_grad) return;
    detail::ensure_grad(*zi);
    const double gout = o->grad[0] / t.wsum;
    std::vector<double> p(static_cast<size_t>(K));
    for (int64_t b = 0; b < B; ++b) {
      const double* z = zi->values.data() + b * K;
      softmax_row(z, K, p.data());
      const int64_t ti = t.idx[static_cast<size_t>(b)];
      const double pt = p[static_cast<size_t>(ti)];
      double factor = 1.0;
      if (focusing != 0.0) {
        const double u = 1.0 - pt;
        if (u < 1e-14) {
          factor = 0.0;
        } else {
          factor = std::pow(u, focusing) -
                   focusing * std::pow(u, focusing - 1.0) * pt * std::log(pt);
        }
      }
      const double scale = gout * t.w[static_cast<size_t>(b)] * factor;
      double* d = zi->grad.data() + b * K;
      for (int64_t j = 0; j < K; ++j) {
        const double delta = (j == ti) ? 1.0 : 0.0;
        d[j] += scale * (p[static_cast<size_t>(j)] - delta);
      }
    }
  };
  return detail::attach(out, {logits.impl()}, bw);
}

Tensor cross_entropy(const Tensor& logits, const Tensor& targets,
                     const Tensor& class_weights) {
  return focal_loss(logits, targets, 0.0, class_weights);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets,
                       const Tensor& class_weights) {
  check_defined(logits, "bce_with_logits");
  check_defined(targets, "bce_with_logits");
  if (logits.shape().rank() != 2 || !(logits.shape() == targets.shape())) {
    throw ShapeError("bce_with_logits: logits " + logits.shape().str() +
                     " and targets " + targets.shape().str() +
                     " must both be [B,K]");
  }
  const int64_t B = logits.shape().dim(0), K = logits.shape().dim(1);
  if (class_weights.defined() &&
      (class_weights.shape().rank() != 1 ||
       class_weights.shape().dim(0) != K)) {
    throw ShapeError("bce_with_logits: class_weights must be [K], got " +
                     class_weights.shape().str());
  }
  for (double tv : targets.values()) {
    if (tv < 0.0 || tv > 1.0) {
      throw NumericError("bce_with_logits: targets must lie in [0,1]");
    }
  }
  auto out = detail::alloc(Shape{1});
  const auto& zv = logits.values();
  const auto& tv = targets.values();
  const double inv = 1.0 / static_cast<double>(B * K);
  double acc = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t j = 0; j < K; ++j) {
      const size_t i = static_cast<size_t>(b * K + j);
      const double w =
          class_weights.defined()
              ? class_weights.values()[static_cast<size_t>(j)]
              : 1.0;
      const double z = zv[i];
      acc += w * (std::max(z, 0.0) - z * tv[i] +
                  std::log1p(std::exp(-std::abs(z))));
    }
  }
  out->values[0] = acc * inv;
  auto cw = class_weights.defined() ? class_weights.impl() : nullptr;
  auto bw = [o = out, zi = logits.impl(), ti = targets.impl(), cw, B, K,
             inv]() {
    if (!zi->requires_grad) return;
    detail::ensure_grad(*zi);
    const double gout = o->grad[0] * inv;
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t j = 0; j < K; ++j) {
        const size_t i = static_cast<size_t>(b * K + j);
        const double w = cw ? cw->values[static_cast<size_t>(j)] : 1.0;
        zi->grad[i] +=
            gout * w * (stable_sigmoid(zi->values[i]) - ti->values[i]);
      }
    }
  };
  return detail::attach(out, {logits.impl()}, bw);
}

Tensor loss(const Tensor& pred, const Tensor& target, LossKind kind,
            const Tensor& class_weights, double focusing) {
  switch (kind) {
    case LossKind::cross_entropy:
      return cross_entropy(pred, target, class_weights);
    case LossKind::bce:
      return bce_with_logits(pred, target, class_weights);
    case LossKind::focal:
      return focal_loss(pred, target, focusing, class_weights);
  }
  throw ConfigError("loss: unknown loss kind");
}

}  // namespace fedsim::ops
