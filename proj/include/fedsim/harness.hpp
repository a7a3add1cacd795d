#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedsim/analysis.hpp"
#include "fedsim/config.hpp"

namespace fedsim::harness {

inline constexpr const char* kEngineVersion = "fedsim 0.1.0";

// Lossless binary checkpoint of named f64 vectors:
// magic "FSIMCKPT", u32 version, u32 count, then per record
// (u32 name length, name bytes, u32 rank, i64 dims, f64 payload),
// all little-endian.
void write_checkpoint(const std::string& path, const ParamVec& state);
ParamVec read_checkpoint(const std::string& path);

void write_metrics_csv(const std::string& path,
                       const std::vector<fed::RoundMetrics>& rounds,
                       bool include_personal);

struct SeedOutcome {
  uint64_t seed = 0;
  std::string dir;
  double final_accuracy = 0.0;
  bool ok = false;
  std::string error;
};

struct RunOutcome {
  std::string dir;
  std::vector<SeedOutcome> seeds;
  bool ok = false;
};

// Generated train/test datasets plus shards for one seed.
struct SeedData {
  data::Dataset train;
  std::vector<data::ClientShard> shards;
  data::Dataset test;
};

SeedData build_seed_data(const ExperimentConfig& cfg, uint64_t seed);

// Executes every configured seed (optionally in parallel workers), writing
// per-seed artifacts, a manifest and a summary. The manifest is written
// before any training starts and finalized with the completion status.
RunOutcome run_experiment(ExperimentConfig cfg, int parallel_seeds = 1,
                          const std::optional<std::vector<uint64_t>>&
                              seed_override = std::nullopt);

struct ReportCell {
  double mean = 0.0;
  double stddev = 0.0;
  int count = 0;
};

struct ReportTable {
  std::vector<std::string> aggregations;   // rows
  std::vector<std::string> architectures;  // columns
  std::vector<std::vector<std::optional<ReportCell>>> cells;
};

// Scans a directory of run outputs (or a single run directory) and builds
// the architecture x aggregation accuracy grid.
ReportTable report(const std::string& root);
std::string render_report_text(const ReportTable& table);
std::string render_report_csv(const ReportTable& table);

// Formats a double with full round-trip precision (%.17g), the format used
// by every CSV writer here.
std::string csv_double(double v);

}  // namespace fedsim::harness
