#include "fedsim/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim {

double grad_check(const TensorFn& f, const Tensor& point, double h) {
  if (h <= 0.0) throw ConfigError("grad_check: step must be positive");
  Tensor x = Tensor::from_values(point.shape(), point.values(), true);
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(x);
    if (y.numel() != 1) {
      throw ShapeError("grad_check: function must be scalar-valued, got " +
                       y.shape().str());
    }
    backward(y);
    analytic = x.grad();
  }
  double worst = 0.0;
  std::vector<double> base = point.values();
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<double> vp = base, vm = base;
    vp[i] += h;
    vm[i] -= h;
    const double fp = f(Tensor::from_values(point.shape(), vp)).item();
    const double fm = f(Tensor::from_values(point.shape(), vm)).item();
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fedsim
