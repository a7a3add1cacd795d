#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/harness.hpp"

using namespace fedsim;

namespace {

int do_run(const std::string& config_path, uint64_t seed_override,
           bool has_seed, const std::string& output_override) {
  harness::ExperimentConfig cfg = harness::parse_config_file(config_path);
  if (!output_override.empty()) cfg.output_dir = output_override;
  std::optional<std::vector<uint64_t>> seeds;
  if (has_seed) seeds = std::vector<uint64_t>{seed_override};
  const auto outcome = harness::run_experiment(cfg, 1, seeds);
  for (const auto& s : outcome.seeds) {
    if (s.ok) {
      std::printf("seed %llu: final accuracy %.4f (%s)\n",
                  static_cast<unsigned long long>(s.seed), s.final_accuracy,
                  s.dir.c_str());
    } else {
      std::fprintf(stderr, "seed %llu failed: %s\n",
                   static_cast<unsigned long long>(s.seed), s.error.c_str());
    }
  }
  std::printf("artifacts: %s\n", outcome.dir.c_str());
  return outcome.ok ? 0 : 1;
}

int do_sweep(const std::string& config_path, const std::vector<uint64_t>& seeds,
             int parallel, const std::string& output_override) {
  harness::ExperimentConfig cfg = harness::parse_config_file(config_path);
  if (!output_override.empty()) cfg.output_dir = output_override;
  std::optional<std::vector<uint64_t>> override;
  if (!seeds.empty()) override = seeds;
  const auto outcome = harness::run_experiment(cfg, parallel, override);
  for (const auto& s : outcome.seeds) {
    if (s.ok) {
      std::printf("seed %llu: final accuracy %.4f\n",
                  static_cast<unsigned long long>(s.seed), s.final_accuracy);
    } else {
      std::fprintf(stderr, "seed %llu failed: %s\n",
                   static_cast<unsigned long long>(s.seed), s.error.c_str());
    }
  }
  std::printf("artifacts: %s\n", outcome.dir.c_str());
  return outcome.ok ? 0 : 1;
}

int do_report(const std::string& dir, const std::string& csv_out) {
  const auto table = harness::report(dir);
  std::printf("%s", harness::render_report_text(table).c_str());
  if (!csv_out.empty()) {
    const std::string csv = harness::render_report_csv(table);
    FILE* f = std::fopen(csv_out.c_str(), "wb");
    if (!f) {
      std::fprintf(stderr, "cannot write %s\n", csv_out.c_str());
      return 1;
    }
    std::fwrite(csv.data(), 1, csv.size(), f);
    std::fclose(f);
  }
  return 0;
}

int do_inspect(const std::string& path) {
  const auto state = harness::read_checkpoint(path);
  std::printf("%-40s %-16s %s\n", "name", "shape", "l2_norm");
  for (const auto& e : state) {
    std::string shape = "[";
    for (size_t i = 0; i < e.shape.size(); ++i) {
      if (i) shape += ",";
      shape += std::to_string(e.shape[i]);
    }
    shape += "]";
    double norm = 0.0;
    for (double v : e.values) norm += v * v;
    std::printf("%-40s %-16s %.6g\n", e.name.c_str(), shape.c_str(),
                std::sqrt(norm));
  }
  std::printf("%zu entries\n", state.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, output_override, report_dir, report_csv, ckpt;
  uint64_t seed = 0;
  std::vector<uint64_t> seeds;
  int parallel = 1;

  auto* run = app.add_subcommand("run", "run every seed of a config");
  run->add_option("config", config_path, "experiment config file")
      ->required();
  auto* seed_opt = run->add_option("--seed", seed, "override with one seed");
  run->add_option("--output", output_override, "override the output dir");

  auto* sweep = app.add_subcommand("sweep", "run a seed sweep in parallel");
  sweep->add_option("config", config_path, "experiment config file")
      ->required();
  sweep->add_option("--seeds", seeds, "comma separated seeds")
      ->delimiter(',');
  sweep->add_option("--parallel", parallel, "parallel seed workers");
  sweep->add_option("--output", output_override, "override the output dir");

  auto* rep = app.add_subcommand("report", "aggregate runs into a table");
  rep->add_option("dir", report_dir, "directory of run outputs")->required();
  rep->add_option("--csv", report_csv, "also write the table as CSV");

  auto* inspect = app.add_subcommand("inspect", "list checkpoint contents");
  inspect->add_option("checkpoint", ckpt, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return do_run(config_path, seed, seed_opt->count() > 0,
                    output_override);
    }
    if (sweep->parsed()) {
      return do_sweep(config_path, seeds, parallel, output_override);
    }
    if (rep->parsed()) return do_report(report_dir, report_csv);
    if (inspect->parsed()) return do_inspect(ckpt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
