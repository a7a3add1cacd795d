#include "fedsim/rng.hpp"

#include <cmath>

namespace fedsim {

double Rng::normal() {
  // Box-Muller on two fresh uniforms; discard the second branch.
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

double Rng::gamma(double shape) {
  if (shape < 1.0) {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return d * v;
    }
  }
}

std::vector<double> Rng::dirichlet(double alpha, int n) {
  std::vector<double> p(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    p[i] = gamma(alpha);
    total += p[i];
  }
  if (total <= 0.0) total = 1.0;
  for (double& v : p) v /= total;
  return p;
}

}  // namespace fedsim
