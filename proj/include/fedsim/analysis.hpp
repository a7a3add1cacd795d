#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/model.hpp"

namespace fedsim::analysis {

// Class-conditional mean of spatially averaged activations at one probe;
// "neuron" means channel throughout.
struct ProbeActivations {
  std::string probe;
  std::vector<std::vector<double>> class_mean;  // [num_classes][channels]
};

// One deterministic pass over the dataset in index order. Every requested
// probe must be published by the model; classes without samples are an
// error.
std::vector<ProbeActivations> capture_class_conditional(
    nn::Model& model, const data::Dataset& dataset,
    const std::vector<std::string>& probes,
    std::pair<double, double> input_stats, int batch_size = 64);

// (mu_max - mu_rest) / (mu_max + mu_rest) where mu_rest is the mean of the
// non-argmax classes; a zero denominator (dead neuron) scores 0.
double csi(const std::vector<double>& per_class_mean);

struct CsiDistribution {
  std::vector<int64_t> hist;          // 64 bins on [0,1]
  std::vector<double> density_grid;   // KDE evaluation points
  std::vector<double> density;        // Gaussian KDE, Silverman bandwidth
  double skewness = 0.0;
  double bandwidth = 0.0;
  int64_t count = 0;
};

CsiDistribution csi_distribution(const std::vector<double>& values);

struct AttentionRecord {
  std::string layer;
  std::vector<std::vector<double>> mean_gate;  // [num_classes][channels]
  double variability = 0.0;  // std over (class, channel)
  bool degenerate = false;   // all means within +/-0.02 of a single value
};

// Per-layer per-class mean channel gates; models without attention blocks
// are rejected.
std::vector<AttentionRecord> attention_stats(
    nn::Model& model, const data::Dataset& dataset,
    std::pair<double, double> input_stats, int batch_size = 64);

}  // namespace fedsim::analysis
