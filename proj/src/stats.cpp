#include "fedsim/stats.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/error.hpp"

namespace fedsim::stats {

double kahan_sum(const std::vector<double>& v) {
  double sum = 0.0, comp = 0.0;
  for (double x : v) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return kahan_sum(v) / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) { return std::sqrt(variance(v)); }

double skewness(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double m2 = 0.0, m3 = 0.0;
  for (double x : v) {
    const double d = x - m;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(v.size());
  m3 /= static_cast<double>(v.size());
  if (m2 <= 0.0) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

namespace {

// Regularized incomplete gamma functions, series + continued fraction.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw NumericError("gamma_q: invalid arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

}  // namespace

double chi2_sf(double x, int df) {
  if (df <= 0) throw NumericError("chi2_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * df, 0.5 * x);
}

double ks_2sample_p(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) {
    throw NumericError("ks_2sample_p: empty sample");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na -
                             static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  const double lambda = (ne + 0.12 + 0.11 / ne) * d;
  double p = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    p += sign * 2.0 * std::exp(-2.0 * k * k * lambda * lambda);
    sign = -sign;
  }
  return std::clamp(p, 0.0, 1.0);
}

double chi2_homogeneity_p(const std::vector<std::vector<int64_t>>& counts) {
  if (counts.empty()) throw NumericError("chi2_homogeneity_p: empty table");
  const size_t rows = counts.size();
  const size_t cols = counts[0].size();
  std::vector<double> row_tot(rows, 0.0), col_tot(cols, 0.0);
  double total = 0.0;
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      row_tot[r] += static_cast<double>(counts[r][c]);
      col_tot[c] += static_cast<double>(counts[r][c]);
      total += static_cast<double>(counts[r][c]);
    }
  }
  int used_cols = 0;
  double stat = 0.0;
  for (size_t c = 0; c < cols; ++c) {
    if (col_tot[c] <= 0.0) continue;
    ++used_cols;
    for (size_t r = 0; r < rows; ++r) {
      const double expected = row_tot[r] * col_tot[c] / total;
      if (expected <= 0.0) continue;
      const double diff = static_cast<double>(counts[r][c]) - expected;
      stat += diff * diff / expected;
    }
  }
  const int df = (static_cast<int>(rows) - 1) * (used_cols - 1);
  if (df <= 0) return 1.0;
  return chi2_sf(stat, df);
}

double mutual_information(const std::vector<std::vector<int64_t>>& joint) {
  if (joint.empty()) return 0.0;
  const size_t rows = joint.size();
  const size_t cols = joint[0].size();
  std::vector<double> pr(rows, 0.0), pc(cols, 0.0);
  double total = 0.0;
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) total += static_cast<double>(joint[r][c]);
  }
  if (total <= 0.0) return 0.0;
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      pr[r] += static_cast<double>(joint[r][c]) / total;
      pc[c] += static_cast<double>(joint[r][c]) / total;
    }
  }
  double mi = 0.0;
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      const double p = static_cast<double>(joint[r][c]) / total;
      if (p > 0.0 && pr[r] > 0.0 && pc[c] > 0.0) {
        mi += p * std::log(p / (pr[r] * pc[c]));
      }
    }
  }
  return std::max(0.0, mi);
}

}  // namespace fedsim::stats
