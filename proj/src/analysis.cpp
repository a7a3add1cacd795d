#include "fedsim/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/error.hpp"
#include "fedsim/fed.hpp"
#include "fedsim/stats.hpp"

namespace fedsim::analysis {

namespace {

// Accumulates per-class sums of spatially averaged activations for a set of
// probe names during forward passes.
struct AccumulatingSink : nn::ProbeSink {
  const std::vector<std::string>* wanted = nullptr;
  const std::vector<int>* batch_labels = nullptr;
  int num_classes = 0;
  // probe -> [class][channel] running sums
  std::vector<std::pair<std::string, std::vector<std::vector<double>>>> sums;

  std::vector<std::vector<double>>* sums_for(const std::string& name,
                                             int64_t channels) {
    for (auto& [n, s] : sums) {
      if (n == name) return &s;
    }
    sums.push_back({name, std::vector<std::vector<double>>(
                              static_cast<size_t>(num_classes),
                              std::vector<double>(
                                  static_cast<size_t>(channels), 0.0))});
    return &sums.back().second;
  }

  void capture(const std::string& name, const Tensor& value) override {
    if (std::find(wanted->begin(), wanted->end(), name) == wanted->end()) {
      return;
    }
    const auto& shape = value.shape();
    const int64_t b = shape.dim(0);
    const int64_t c = shape.dim(1);
    const int64_t plane = shape.rank() == 4 ? shape.dim(2) * shape.dim(3) : 1;
    auto* acc = sums_for(name, c);
    for (int64_t s = 0; s < b; ++s) {
      const int cls = (*batch_labels)[static_cast<size_t>(s)];
      for (int64_t ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        for (int64_t p = 0; p < plane; ++p) {
          mean += value.values()[static_cast<size_t>((s * c + ch) * plane + p)];
        }
        (*acc)[static_cast<size_t>(cls)][static_cast<size_t>(ch)] +=
            mean / static_cast<double>(plane);
      }
    }
  }
};

std::vector<int64_t> class_counts(const data::Dataset& dataset) {
  std::vector<int64_t> counts(static_cast<size_t>(dataset.num_classes), 0);
  for (const auto& s : dataset.samples) {
    counts[static_cast<size_t>(s.label)] += 1;
  }
  return counts;
}

}  // namespace

std::vector<ProbeActivations> capture_class_conditional(
    nn::Model& model, const data::Dataset& dataset,
    const std::vector<std::string>& probes,
    std::pair<double, double> input_stats, int batch_size) {
  if (dataset.samples.empty()) {
    throw DataError("capture: empty dataset");
  }
  const auto counts = class_counts(dataset);
  for (int c = 0; c < dataset.num_classes; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) {
      throw DataError("capture: class " + std::to_string(c) +
                      " has no samples");
    }
  }
  AccumulatingSink sink;
  sink.wanted = &probes;
  sink.num_classes = dataset.num_classes;
  const int64_t n = static_cast<int64_t>(dataset.samples.size());
  std::vector<int> labels;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min(n, start + static_cast<int64_t>(batch_size));
    std::vector<int64_t> idx;
    labels.clear();
    for (int64_t i = start; i < stop; ++i) {
      idx.push_back(i);
      labels.push_back(dataset.samples[static_cast<size_t>(i)].label);
    }
    sink.batch_labels = &labels;
    Tensor x = fed::make_batch_images(dataset, idx, input_stats);
    model.forward(x, /*train=*/false, &sink);
  }
  std::vector<ProbeActivations> out;
  for (const auto& name : probes) {
    bool found = false;
    for (auto& [n2, sums] : sink.sums) {
      if (n2 != name) continue;
      found = true;
      ProbeActivations pa;
      pa.probe = name;
      pa.class_mean = sums;
      for (int c = 0; c < dataset.num_classes; ++c) {
        for (auto& v : pa.class_mean[static_cast<size_t>(c)]) {
          v /= static_cast<double>(counts[static_cast<size_t>(c)]);
        }
      }
      out.push_back(std::move(pa));
    }
    if (!found) {
      throw ConfigError("capture: probe '" + name +
                        "' was never published by the model");
    }
  }
  return out;
}

double csi(const std::vector<double>& per_class_mean) {
  if (per_class_mean.size() < 2) {
    throw ConfigError("csi: need at least two classes");
  }
  size_t arg = 0;
  for (size_t i = 1; i < per_class_mean.size(); ++i) {
    if (per_class_mean[i] > per_class_mean[arg]) arg = i;
  }
  const double mu_max = per_class_mean[arg];
  double rest = 0.0;
  for (size_t i = 0; i < per_class_mean.size(); ++i) {
    if (i != arg) rest += per_class_mean[i];
  }
  rest /= static_cast<double>(per_class_mean.size() - 1);
  const double denom = mu_max + rest;
  if (denom == 0.0) return 0.0;  // dead neuron counts as non-selective
  return (mu_max - rest) / denom;
}

CsiDistribution csi_distribution(const std::vector<double>& values) {
  if (values.empty()) throw DataError("csi_distribution: no records");
  CsiDistribution d;
  d.count = static_cast<int64_t>(values.size());
  d.hist.assign(64, 0);
  for (double v : values) {
    const int bin = std::clamp(static_cast<int>(std::floor(v * 64.0)), 0, 63);
    d.hist[static_cast<size_t>(bin)] += 1;
  }
  d.skewness = stats::skewness(values);
  // Silverman's rule of thumb for the Gaussian kernel.
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double sd = stats::stddev(values);
  const double q1 = sorted[sorted.size() / 4];
  const double q3 = sorted[(3 * sorted.size()) / 4];
  const double spread = std::min(sd, (q3 - q1) / 1.34);
  d.bandwidth = std::max(
      1e-3, 0.9 * spread *
                std::pow(static_cast<double>(values.size()), -0.2));
  const int grid = 201;
  d.density_grid.resize(grid);
  d.density.resize(grid);
  const double norm = 1.0 / (static_cast<double>(values.size()) *
                             d.bandwidth * std::sqrt(2.0 * 3.14159265358979));
  for (int g = 0; g < grid; ++g) {
    const double x = static_cast<double>(g) / (grid - 1);
    d.density_grid[static_cast<size_t>(g)] = x;
    double acc = 0.0;
    for (double v : values) {
      const double t = (x - v) / d.bandwidth;
      acc += std::exp(-0.5 * t * t);
    }
    d.density[static_cast<size_t>(g)] = acc * norm;
  }
  return d;
}

std::vector<AttentionRecord> attention_stats(
    nn::Model& model, const data::Dataset& dataset,
    std::pair<double, double> input_stats, int batch_size) {
  const auto blocks = model.attention_block_names();
  if (blocks.empty()) {
    throw ConfigError("attention_stats: the model has no attention blocks");
  }
  std::vector<std::string> probes;
  for (const auto& b : blocks) probes.push_back(b + ".gate");
  const auto captured = capture_class_conditional(model, dataset, probes,
                                                  input_stats, batch_size);
  std::vector<AttentionRecord> out;
  for (const auto& pa : captured) {
    AttentionRecord r;
    r.layer = pa.probe.substr(0, pa.probe.size() - 5);  // strip ".gate"
    r.mean_gate = pa.class_mean;
    std::vector<double> flat;
    for (const auto& row : pa.class_mean) {
      flat.insert(flat.end(), row.begin(), row.end());
    }
    r.variability = stats::stddev(flat);
    const auto [mn, mx] = std::minmax_element(flat.begin(), flat.end());
    r.degenerate = (*mx - *mn) <= 0.04;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fedsim::analysis
