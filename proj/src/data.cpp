#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/stats.hpp"

namespace fedsim::data {

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::pair<double, double> Dataset::scalar_stats() const {
  double sum = 0.0, sq = 0.0;
  int64_t n = 0;
  for (const auto& s : samples) {
    for (double v : s.image.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  if (n == 0) return {0.0, 1.0};
  const double m = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - m * m);
  return {m, std::max(1e-8, std::sqrt(var))};
}

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::colorshift: return "colorshift";
    case Scheme::dirichlet: return "dirichlet";
    case Scheme::k_classes: return "k_classes";
    case Scheme::quantity_skew: return "quantity_skew";
  }
  throw ConfigError("unknown partition scheme");
}

Scheme parse_scheme(const std::string& name) {
  if (name == "colorshift") return Scheme::colorshift;
  if (name == "dirichlet") return Scheme::dirichlet;
  if (name == "k_classes") return Scheme::k_classes;
  if (name == "quantity_skew") return Scheme::quantity_skew;
  throw ConfigError("unknown partition scheme '" + name + "'");
}

namespace {

constexpr int kMaxShapes = 10;
constexpr double kPixelNoise = 0.10;
// Foreground pixels brighten the background instead of replacing it, so
// shape detection requires contrast over an unknown base color.
constexpr double kForegroundDelta = 0.4;
// Interior background pixels carry a diagonal stripe texture in a darker
// shade of the same color; stripe-tuned filters respond in a client-specific
// way, which is the inconsistent-feature axis of the task. Borders stay at
// the base color.
constexpr double kStripeFactor = 0.75;

bool stripe_at(int r, int c, int image_size) {
  if (r < 1 || c < 1 || r >= image_size - 1 || c >= image_size - 1) {
    return false;
  }
  return ((r + c) % 4) < 2;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

std::vector<int64_t> largest_remainder(const std::vector<double>& weights,
                                       int64_t total) {
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  const size_t n = weights.size();
  std::vector<int64_t> counts(n, 0);
  std::vector<std::pair<double, size_t>> rema(n);
  int64_t assigned = 0;
  for (size_t i = 0; i < n; ++i) {
    const double target = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<int64_t>(std::floor(target));
    assigned += counts[i];
    rema[i] = {target - std::floor(target), i};
  }
  // Ties break toward the lower index so rounding stays deterministic.
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int64_t r = 0; r < total - assigned; ++r) {
    counts[rema[static_cast<size_t>(r)].second] += 1;
  }
  return counts;
}

std::vector<ClientShard> shards_from_assignment(
    const std::vector<std::vector<int64_t>>& assigned,
    const std::vector<int>& labels, int num_classes) {
  std::vector<ClientShard> shards;
  for (size_t c = 0; c < assigned.size(); ++c) {
    ClientShard s;
    s.client_id = static_cast<int>(c);
    s.indices = assigned[c];
    std::sort(s.indices.begin(), s.indices.end());
    s.label_histogram.assign(static_cast<size_t>(num_classes), 0);
    for (int64_t idx : s.indices) {
      s.label_histogram[static_cast<size_t>(
          labels[static_cast<size_t>(idx)])] += 1;
    }
    shards.push_back(std::move(s));
  }
  return shards;
}

int infer_num_classes(const std::vector<int>& labels) {
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw DataError("labels must be non-negative");
    k = std::max(k, l + 1);
  }
  return k;
}

}  // namespace

int colorshift_palette_size(int num_clients) { return 2 * num_clients; }

int colorshift_jitter(int image_size) { return image_size >= 12 ? 2 : 1; }

bool colorshift_stripe_at(int r, int c, int image_size) {
  return stripe_at(r, c, image_size);
}

std::array<double, 3> colorshift_palette_color(int num_clients, int index) {
  const int total = colorshift_palette_size(num_clients);
  // Hue separates colors; brightness tracks the owning client so the shift
  // moves both the mean and the scale of client inputs.
  const int owner = index / 2;
  const double value =
      num_clients > 1
          ? 0.30 + 0.65 * static_cast<double>(owner) / (num_clients - 1)
          : 0.85;
  return hsv_to_rgb(static_cast<double>(index) / total, 0.9, value);
}

std::vector<bool> colorshift_shape_mask(int class_id, int image_size) {
  if (class_id < 0 || class_id >= kMaxShapes) {
    throw DataError("colorshift supports at most " +
                    std::to_string(kMaxShapes) + " classes");
  }
  const int s = image_size;
  if (s < 8) throw DataError("colorshift needs image_size >= 8");
  std::vector<bool> mask(static_cast<size_t>(s * s), false);
  // Margin leaves room for the per-sample jitter while keeping borders
  // pure background.
  const int m = s >= 12 ? 3 : 2;
  const int lo = m, hi = s - 1 - m;
  const int mid = s / 2;
  const double cen = (s - 1) / 2.0;
  auto set = [&](int r, int c) {
    if (r >= lo && r <= hi && c >= lo && c <= hi) {
      mask[static_cast<size_t>(r * s + c)] = true;
    }
  };
  switch (class_id) {
    case 0:  // horizontal bar
      for (int c = lo; c <= hi; ++c) { set(mid - 1, c); set(mid, c); }
      break;
    case 1:  // vertical bar
      for (int r = lo; r <= hi; ++r) { set(r, mid - 1); set(r, mid); }
      break;
    case 2:  // cross
      for (int c = lo; c <= hi; ++c) { set(mid - 1, c); set(mid, c); }
      for (int r = lo; r <= hi; ++r) { set(r, mid - 1); set(r, mid); }
      break;
    case 3:  // diagonal X
      for (int r = lo; r <= hi; ++r) { set(r, r); set(r, s - 1 - r); }
      break;
    case 4:  // square outline
      for (int c = lo + 1; c <= hi - 1; ++c) { set(lo + 1, c); set(hi - 1, c); }
      for (int r = lo + 1; r <= hi - 1; ++r) { set(r, lo + 1); set(r, hi - 1); }
      break;
    case 5: {  // filled center square
      const int q = std::max(2, s / 5);
      for (int r = mid - q; r < mid + q; ++r) {
        for (int c = mid - q; c < mid + q; ++c) set(r, c);
      }
      break;
    }
    case 6: {  // disc
      const double rad = s / 4.0;
      for (int r = lo; r <= hi; ++r) {
        for (int c = lo; c <= hi; ++c) {
          if ((r - cen) * (r - cen) + (c - cen) * (c - cen) <= rad * rad) {
            set(r, c);
          }
        }
      }
      break;
    }
    case 7: {  // ring
      const double ro = s / 4.0 + 0.5, ri = s / 4.0 - 1.5;
      for (int r = lo; r <= hi; ++r) {
        for (int c = lo; c <= hi; ++c) {
          const double d2 = (r - cen) * (r - cen) + (c - cen) * (c - cen);
          if (d2 <= ro * ro && d2 >= ri * ri) set(r, c);
        }
      }
      break;
    }
    case 8:  // corner L
      for (int r = lo; r <= hi; ++r) { set(r, lo); set(r, lo + 1); }
      for (int c = lo; c <= hi; ++c) { set(hi - 1, c); set(hi, c); }
      break;
    case 9:  // T
      for (int c = lo; c <= hi; ++c) { set(lo, c); set(lo + 1, c); }
      for (int r = lo; r <= hi; ++r) { set(r, mid - 1); set(r, mid); }
      break;
    default:
      break;
  }
  return mask;
}

int colorshift_background_index(const Tensor& image, int num_clients) {
  const auto& s = image.shape();
  if (s.rank() != 3 || s.dim(0) != 3) {
    throw DataError("colorshift image must be [3,H,W]");
  }
  const int64_t h = s.dim(1), w = s.dim(2);
  const int64_t plane = h * w;
  // Corner pixels are pure background by construction of the shape masks;
  // average all four to stay robust against pixel noise.
  std::array<double, 3> px{};
  const int64_t corners[4] = {0, w - 1, (h - 1) * w, (h - 1) * w + w - 1};
  for (int c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (int64_t corner : corners) {
      acc += image.values()[static_cast<size_t>(c * plane + corner)];
    }
    px[static_cast<size_t>(c)] = acc / 4.0;
  }
  const int total = colorshift_palette_size(num_clients);
  int best = 0;
  double best_d = 1e300;
  for (int j = 0; j < total; ++j) {
    const auto ref = colorshift_palette_color(num_clients, j);
    double d = 0.0;
    for (int c = 0; c < 3; ++c) {
      d += (px[static_cast<size_t>(c)] - ref[static_cast<size_t>(c)]) *
           (px[static_cast<size_t>(c)] - ref[static_cast<size_t>(c)]);
    }
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

std::pair<Dataset, std::vector<ClientShard>> gen_colorshift(
    int num_clients, int num_classes, int samples_per_client,
    double shift_strength, int image_size, uint64_t seed) {
  if (num_clients < 1 || num_classes < 2 || samples_per_client < 1) {
    throw DataError("gen_colorshift: counts must be positive");
  }
  if (num_classes > kMaxShapes) {
    throw DataError("gen_colorshift: at most " + std::to_string(kMaxShapes) +
                    " classes are supported");
  }
  if (shift_strength < 0.0 || shift_strength > 1.0) {
    throw DataError("gen_colorshift: shift_strength must lie in [0,1]");
  }
  Dataset ds;
  ds.num_classes = num_classes;
  ds.seed = seed;
  Rng rng(seed);
  const int total_colors = colorshift_palette_size(num_clients);
  std::vector<std::vector<bool>> masks;
  for (int c = 0; c < num_classes; ++c) {
    masks.push_back(colorshift_shape_mask(c, image_size));
  }
  const int64_t plane = static_cast<int64_t>(image_size) * image_size;
  std::vector<std::vector<int64_t>> assigned(
      static_cast<size_t>(num_clients));
  for (int ci = 0; ci < num_clients; ++ci) {
    for (int j = 0; j < samples_per_client; ++j) {
      const int label = j % num_classes;
      int color;
      if (rng.uniform() < shift_strength) {
        color = 2 * ci + static_cast<int>(rng.uniform_int(2));
      } else {
        color = static_cast<int>(rng.uniform_int(total_colors));
      }
      const auto bg = colorshift_palette_color(num_clients, color);
      const int jitter = colorshift_jitter(image_size);
      const int dy = static_cast<int>(rng.uniform_int(2 * jitter + 1)) - jitter;
      const int dx = static_cast<int>(rng.uniform_int(2 * jitter + 1)) - jitter;
      std::vector<double> pix(static_cast<size_t>(3 * plane));
      const auto& mask = masks[static_cast<size_t>(label)];
      auto on = [&](int64_t p) {
        const int r = static_cast<int>(p) / image_size - dy;
        const int c = static_cast<int>(p) % image_size - dx;
        return r >= 0 && r < image_size && c >= 0 && c < image_size &&
               mask[static_cast<size_t>(r * image_size + c)];
      };
      for (int ch = 0; ch < 3; ++ch) {
        for (int64_t p = 0; p < plane; ++p) {
          const int r = static_cast<int>(p) / image_size;
          const int c = static_cast<int>(p) % image_size;
          const double shade =
              stripe_at(r, c, image_size) ? kStripeFactor : 1.0;
          const double base = bg[static_cast<size_t>(ch)] * shade +
                              (on(p) ? kForegroundDelta : 0.0);
          pix[static_cast<size_t>(ch * plane + p)] =
              base + rng.normal(0.0, kPixelNoise);
        }
      }
      assigned[static_cast<size_t>(ci)].push_back(
          static_cast<int64_t>(ds.samples.size()));
      ds.samples.push_back(
          {Tensor::from_values(Shape{3, image_size, image_size},
                               std::move(pix)),
           label});
    }
  }
  auto shards =
      shards_from_assignment(assigned, ds.labels(), num_classes);
  return {std::move(ds), std::move(shards)};
}

std::vector<ClientShard> partition_dirichlet(const std::vector<int>& labels,
                                             int num_clients, double alpha,
                                             uint64_t seed) {
  if (labels.empty()) throw DataError("partition_dirichlet: empty labels");
  if (num_clients < 1) throw DataError("partition_dirichlet: need >= 1 client");
  if (alpha <= 0.0) throw DataError("partition_dirichlet: alpha must be > 0");
  const int num_classes = infer_num_classes(labels);
  std::vector<std::vector<int64_t>> by_class(
      static_cast<size_t>(num_classes));
  for (size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<size_t>(labels[i])].push_back(
        static_cast<int64_t>(i));
  }
  Rng rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::vector<int64_t>> assigned(
        static_cast<size_t>(num_clients));
    for (int c = 0; c < num_classes; ++c) {
      auto idx = by_class[static_cast<size_t>(c)];
      if (idx.empty()) continue;
      rng.shuffle(idx);
      const auto p = rng.dirichlet(alpha, num_clients);
      const auto counts =
          largest_remainder(p, static_cast<int64_t>(idx.size()));
      size_t off = 0;
      for (int i = 0; i < num_clients; ++i) {
        for (int64_t n = 0; n < counts[static_cast<size_t>(i)]; ++n) {
          assigned[static_cast<size_t>(i)].push_back(idx[off++]);
        }
      }
    }
    bool ok = true;
    for (const auto& a : assigned) ok = ok && !a.empty();
    if (ok) return shards_from_assignment(assigned, labels, num_classes);
  }
  throw DataError(
      "partition_dirichlet: could not produce non-empty shards in 100 draws");
}

std::vector<ClientShard> partition_k_classes(const std::vector<int>& labels,
                                             int num_clients, int k,
                                             uint64_t seed) {
  if (labels.empty()) throw DataError("partition_k_classes: empty labels");
  const int num_classes = infer_num_classes(labels);
  if (k < 1 || k > num_classes) {
    throw DataError("partition_k_classes: k must lie in [1, " +
                    std::to_string(num_classes) + "]");
  }
  if (static_cast<int64_t>(num_clients) * k < num_classes) {
    throw DataError(
        "partition_k_classes: num_clients * k must cover every class");
  }
  Rng rng(seed);
  std::vector<int> perm(static_cast<size_t>(num_classes));
  for (int i = 0; i < num_classes; ++i) perm[static_cast<size_t>(i)] = i;
  rng.shuffle(perm);
  // Client i owns the k consecutive entries of the cyclic class list that
  // start at slot i*k; k <= num_classes keeps them distinct within a client.
  std::vector<std::vector<int>> owners(static_cast<size_t>(num_classes));
  for (int i = 0; i < num_clients; ++i) {
    for (int j = 0; j < k; ++j) {
      const int cls = perm[static_cast<size_t>((i * k + j) % num_classes)];
      owners[static_cast<size_t>(cls)].push_back(i);
    }
  }
  std::vector<std::vector<int64_t>> by_class(
      static_cast<size_t>(num_classes));
  for (size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<size_t>(labels[i])].push_back(
        static_cast<int64_t>(i));
  }
  std::vector<std::vector<int64_t>> assigned(
      static_cast<size_t>(num_clients));
  for (int c = 0; c < num_classes; ++c) {
    auto idx = by_class[static_cast<size_t>(c)];
    if (idx.empty()) continue;
    rng.shuffle(idx);
    const auto& own = owners[static_cast<size_t>(c)];
    const int64_t n = static_cast<int64_t>(idx.size());
    const int64_t base = n / static_cast<int64_t>(own.size());
    const int64_t rem = n % static_cast<int64_t>(own.size());
    size_t off = 0;
    for (size_t o = 0; o < own.size(); ++o) {
      const int64_t take = base + (static_cast<int64_t>(o) < rem ? 1 : 0);
      for (int64_t t = 0; t < take; ++t) {
        assigned[static_cast<size_t>(own[o])].push_back(idx[off++]);
      }
    }
  }
  for (const auto& a : assigned) {
    if (a.empty()) {
      throw DataError("partition_k_classes: a client received no samples");
    }
  }
  return shards_from_assignment(assigned, labels, num_classes);
}

std::vector<ClientShard> partition_quantity_skew(
    const std::vector<int>& labels, int num_clients, double skew_exponent,
    uint64_t seed) {
  if (labels.empty()) throw DataError("partition_quantity_skew: empty labels");
  if (num_clients < 2) {
    throw DataError("partition_quantity_skew: need >= 2 clients");
  }
  const int num_classes = infer_num_classes(labels);
  std::vector<double> weights(static_cast<size_t>(num_clients));
  for (int i = 0; i < num_clients; ++i) {
    weights[static_cast<size_t>(i)] =
        std::pow(static_cast<double>(i + 1), -skew_exponent);
  }
  const auto quotas =
      largest_remainder(weights, static_cast<int64_t>(labels.size()));
  for (int64_t q : quotas) {
    if (q <= 0) {
      throw DataError("partition_quantity_skew: a shard would be empty");
    }
  }
  Rng rng(seed);
  std::vector<int64_t> perm(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) perm[i] = static_cast<int64_t>(i);
  rng.shuffle(perm);
  std::vector<std::vector<int64_t>> assigned(
      static_cast<size_t>(num_clients));
  size_t off = 0;
  for (int i = 0; i < num_clients; ++i) {
    for (int64_t t = 0; t < quotas[static_cast<size_t>(i)]; ++t) {
      assigned[static_cast<size_t>(i)].push_back(perm[off++]);
    }
  }
  return shards_from_assignment(assigned, labels, num_classes);
}

PartitionReport partition_stats(const std::vector<ClientShard>& shards,
                                const std::vector<int>& labels,
                                int num_classes) {
  PartitionReport r;
  const double total = static_cast<double>(labels.size());
  for (const auto& s : shards) {
    std::vector<int64_t> hist(static_cast<size_t>(num_classes), 0);
    for (int64_t idx : s.indices) {
      hist[static_cast<size_t>(labels[static_cast<size_t>(idx)])] += 1;
    }
    r.histograms.push_back(std::move(hist));
    r.size_fractions.push_back(static_cast<double>(s.size()) / total);
  }
  const size_t n = shards.size();
  r.tv_distance.assign(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double tv = 0.0;
      for (int c = 0; c < num_classes; ++c) {
        const double pi = static_cast<double>(r.histograms[i][static_cast<size_t>(c)]) /
                          std::max<int64_t>(1, shards[i].size());
        const double pj = static_cast<double>(r.histograms[j][static_cast<size_t>(c)]) /
                          std::max<int64_t>(1, shards[j].size());
        tv += std::abs(pi - pj);
      }
      r.tv_distance[i][j] = 0.5 * tv;
    }
  }
  return r;
}

std::string shard_index_text(const std::vector<ClientShard>& shards) {
  std::string out;
  for (const auto& s : shards) {
    out += std::to_string(s.client_id) + ":";
    for (int64_t idx : s.indices) out += " " + std::to_string(idx);
    out += "\n";
  }
  return out;
}

}  // namespace fedsim::data
