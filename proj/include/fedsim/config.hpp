#pragma once

#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/fed.hpp"
#include "fedsim/model.hpp"

namespace fedsim::harness {

struct DataConfig {
  data::Scheme scheme = data::Scheme::colorshift;
  int clients = 4;
  int classes = 4;
  int samples_per_client = 256;
  int test_samples = 512;
  int image_size = 16;
  double shift_strength = 0.9;
  double alpha = 0.5;       // dirichlet
  int k = 2;                // k_classes
  double skew_exponent = 1.7;
  bool operator==(const DataConfig&) const = default;
};

struct AnalysisConfig {
  bool csi = false;
  bool attention = false;
  bool operator==(const AnalysisConfig&) const = default;
};

// Full experiment description. The model's class count and input geometry
// are resolved from the data section so they can never disagree.
struct ExperimentConfig {
  nn::ModelSpec model = nn::ModelSpec::for_arch(nn::Arch::anfr);
  DataConfig data;
  fed::FedConfig fed;  // per-run seed is filled in by the driver
  AnalysisConfig analysis;
  std::vector<uint64_t> seeds{1};
  std::string output_dir = "runs/exp";
  bool operator==(const ExperimentConfig&) const = default;

  void resolve_and_validate();  // derives model geometry, then validates
};

// Sectioned key=value text; '#' starts a comment. Unknown keys, malformed
// values and invalid combinations raise ConfigError with the line number.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Canonical serialization; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace fedsim::harness
