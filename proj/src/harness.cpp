#include "fedsim/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/stats.hpp"

namespace fs = std::filesystem;

namespace fedsim::harness {

std::string csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

constexpr char kMagic[8] = {'F', 'S', 'I', 'M', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint '" + path + "' is truncated");
  return v;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
}

}  // namespace

void write_checkpoint(const std::string& path, const ParamVec& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kCkptVersion);
  write_raw(out, static_cast<uint32_t>(state.size()));
  for (const auto& e : state) {
    write_raw(out, static_cast<uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_raw(out, static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) write_raw(out, d);
    out.write(reinterpret_cast<const char*>(e.values.data()),
              static_cast<std::streamsize>(e.values.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

ParamVec read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint '" + path + "' has a corrupt header");
  }
  const auto version = read_raw<uint32_t>(in, path);
  if (version != kCkptVersion) {
    throw IoError("checkpoint '" + path + "' has unsupported version " +
                  std::to_string(version));
  }
  const auto count = read_raw<uint32_t>(in, path);
  ParamVec state;
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("checkpoint '" + path + "' is truncated");
    const auto rank = read_raw<uint32_t>(in, path);
    std::vector<int64_t> dims;
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      dims.push_back(read_raw<int64_t>(in, path));
      numel *= dims.back();
    }
    if (numel < 0 || numel > (1LL << 32)) {
      throw IoError("checkpoint '" + path + "' has a corrupt record");
    }
    std::vector<double> values(static_cast<size_t>(numel));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint '" + path + "' is truncated");
    state.push_back({std::move(name), std::move(dims), std::move(values)});
  }
  return state;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<fed::RoundMetrics>& rounds,
                       bool include_personal) {
  std::string out = "round,scope,metric,value\n";
  for (const auto& r : rounds) {
    for (const auto& [id, loss] : r.client_loss) {
      out += std::to_string(r.round) + ",client_" + std::to_string(id) +
             ",train_loss," + csv_double(loss) + "\n";
    }
    out += std::to_string(r.round) + ",global,test_accuracy," +
           csv_double(r.global_accuracy) + "\n";
    out += std::to_string(r.round) + ",global,test_loss," +
           csv_double(r.global_loss) + "\n";
    if (include_personal) {
      for (const auto& [id, acc] : r.client_best_accuracy) {
        out += std::to_string(r.round) + ",client_" + std::to_string(id) +
               ",best_local_accuracy," + csv_double(acc) + "\n";
      }
    }
  }
  write_text_file(path, out);
}

SeedData build_seed_data(const ExperimentConfig& cfg, uint64_t seed) {
  SeedData out;
  const uint64_t data_seed = seed_for(seed, 0xda7a);
  const uint64_t test_seed = seed_for(seed, 0x7e57);
  const int test_per_client =
      (cfg.data.test_samples + cfg.data.clients - 1) / cfg.data.clients;
  if (cfg.data.scheme == data::Scheme::colorshift) {
    auto [train, shards] = data::gen_colorshift(
        cfg.data.clients, cfg.data.classes, cfg.data.samples_per_client,
        cfg.data.shift_strength, cfg.data.image_size, data_seed);
    out.train = std::move(train);
    out.shards = std::move(shards);
  } else {
    // An IID pool (uniform backgrounds) split by the configured scheme.
    auto [train, shards] = data::gen_colorshift(
        cfg.data.clients, cfg.data.classes, cfg.data.samples_per_client,
        0.0, cfg.data.image_size, data_seed);
    out.train = std::move(train);
    const auto labels = out.train.labels();
    switch (cfg.data.scheme) {
      case data::Scheme::dirichlet:
        out.shards = data::partition_dirichlet(labels, cfg.data.clients,
                                               cfg.data.alpha, data_seed);
        break;
      case data::Scheme::k_classes:
        out.shards = data::partition_k_classes(labels, cfg.data.clients,
                                               cfg.data.k, data_seed);
        break;
      case data::Scheme::quantity_skew:
        out.shards = data::partition_quantity_skew(
            labels, cfg.data.clients, cfg.data.skew_exponent, data_seed);
        break;
      default:
        throw ConfigError("unexpected partition scheme");
    }
  }
  // Test split: same palette, globally uniform backgrounds.
  auto [test, test_shards] =
      data::gen_colorshift(cfg.data.clients, cfg.data.classes,
                           test_per_client, 0.0, cfg.data.image_size,
                           test_seed);
  out.test = std::move(test);
  return out;
}

namespace {

std::string manifest_text(const ExperimentConfig& cfg,
                          const std::vector<uint64_t>& seeds,
                          const std::string& status,
                          const std::string& error) {
  std::string out;
  out += std::string("engine: ") + kEngineVersion + "\n";
  out += "status: " + status + "\n";
  std::string seed_list;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (i) seed_list += ",";
    seed_list += std::to_string(seeds[i]);
  }
  out += "seeds: " + seed_list + "\n";
  for (uint64_t s : seeds) {
    out += "seed_dir: seed_" + std::to_string(s) + "\n";
  }
  if (!error.empty()) out += "error: " + error + "\n";
  out += "config:\n";
  out += serialize_config(cfg);
  return out;
}

void write_analysis_artifacts(const std::string& dir,
                              const ExperimentConfig& cfg,
                              const ParamVec& state, const std::string& phase,
                              const data::Dataset& dataset,
                              std::pair<double, double> input_stats,
                              std::string& csi_csv, std::string& csi_summary,
                              std::string& csi_hist, std::string& csi_density,
                              std::string& att_csv,
                              std::string& att_summary) {
  (void)dir;
  nn::Model model = nn::build_model(cfg.model, 0);
  model.import_state(state);
  if (cfg.analysis.csi) {
    std::vector<std::string> probes;
    for (const auto& b : model.block_names()) {
      probes.push_back(b + ".pre_att");
      probes.push_back(b + ".post_att");
    }
    const auto caps = analysis::capture_class_conditional(
        model, dataset, probes, input_stats);
    for (const auto& pa : caps) {
      std::vector<double> values;
      const size_t channels = pa.class_mean.empty() ? 0 : pa.class_mean[0].size();
      for (size_t ch = 0; ch < channels; ++ch) {
        std::vector<double> per_class;
        for (const auto& row : pa.class_mean) per_class.push_back(row[ch]);
        const double v = analysis::csi(per_class);
        values.push_back(v);
        csi_csv += phase + "," + pa.probe + "," + std::to_string(ch) + "," +
                   csv_double(v) + "\n";
      }
      const auto dist = analysis::csi_distribution(values);
      csi_summary += phase + "," + pa.probe + "," +
                     std::to_string(dist.count) + "," +
                     csv_double(dist.skewness) + "," +
                     csv_double(dist.bandwidth) + "\n";
      for (size_t b = 0; b < dist.hist.size(); ++b) {
        csi_hist += phase + "," + pa.probe + "," +
                    csv_double(static_cast<double>(b) / 64.0) + "," +
                    csv_double(static_cast<double>(b + 1) / 64.0) + "," +
                    std::to_string(dist.hist[b]) + "\n";
      }
      for (size_t g = 0; g < dist.density_grid.size(); ++g) {
        csi_density += phase + "," + pa.probe + "," +
                       csv_double(dist.density_grid[g]) + "," +
                       csv_double(dist.density[g]) + "\n";
      }
    }
  }
  if (cfg.analysis.attention && cfg.model.has_attention()) {
    const auto records =
        analysis::attention_stats(model, dataset, input_stats);
    for (const auto& r : records) {
      for (size_t cls = 0; cls < r.mean_gate.size(); ++cls) {
        for (size_t ch = 0; ch < r.mean_gate[cls].size(); ++ch) {
          att_csv += phase + "," + r.layer + "," + std::to_string(cls) + "," +
                     std::to_string(ch) + "," +
                     csv_double(r.mean_gate[cls][ch]) + "\n";
        }
      }
      att_summary += phase + "," + r.layer + "," + csv_double(r.variability) +
                     "," + (r.degenerate ? "true" : "false") + "\n";
    }
  }
}

SeedOutcome run_single_seed(const ExperimentConfig& cfg, uint64_t seed,
                            const std::string& dir) {
  SeedOutcome outcome;
  outcome.seed = seed;
  outcome.dir = dir;
  try {
    fs::create_directories(dir);
    SeedData data = build_seed_data(cfg, seed);
    write_text_file(dir + "/partition.txt",
                    data::shard_index_text(data.shards));

    fed::FedConfig fed_cfg = cfg.fed;
    fed_cfg.seed = seed;

    // Initial checkpoint before any training.
    {
      nn::Model init = nn::build_model(cfg.model, model_init_seed(fed_cfg));
      write_checkpoint(dir + "/initial.ckpt", init.export_state());
    }

    auto result = fed::run_federation(cfg.model, data.train, data.shards,
                                      data.test, fed_cfg);
    const bool personal =
        cfg.fed.aggregation == fed::Aggregation::fedper ||
        cfg.fed.aggregation == fed::Aggregation::fedbn;
    write_metrics_csv(dir + "/metrics.csv", result.rounds, personal);
    write_checkpoint(dir + "/final.ckpt", result.final_state);

    if (cfg.analysis.csi || cfg.analysis.attention) {
      std::string csi_csv = "phase,probe,channel,csi\n";
      std::string csi_summary = "phase,probe,count,skewness,bandwidth\n";
      std::string csi_hist = "phase,probe,bin_lo,bin_hi,count\n";
      std::string csi_density = "phase,probe,x,density\n";
      std::string att_csv = "phase,layer,class,channel,mean_gate\n";
      std::string att_summary = "phase,layer,variability,degenerate\n";
      nn::Model init = nn::build_model(cfg.model, model_init_seed(fed_cfg));
      write_analysis_artifacts(dir, cfg, init.export_state(), "pre_fl",
                               data.test, result.input_stats, csi_csv,
                               csi_summary, csi_hist, csi_density, att_csv,
                               att_summary);
      write_analysis_artifacts(dir, cfg, result.final_state, "post_fl",
                               data.test, result.input_stats, csi_csv,
                               csi_summary, csi_hist, csi_density, att_csv,
                               att_summary);
      if (cfg.analysis.csi) {
        write_text_file(dir + "/csi.csv", csi_csv);
        write_text_file(dir + "/csi_summary.csv", csi_summary);
        write_text_file(dir + "/csi_hist.csv", csi_hist);
        write_text_file(dir + "/csi_density.csv", csi_density);
      }
      if (cfg.analysis.attention && cfg.model.has_attention()) {
        write_text_file(dir + "/attention.csv", att_csv);
        write_text_file(dir + "/attention_summary.csv", att_summary);
      }
    }

    if (cfg.fed.dp) {
      std::string privacy =
          "client,steps,sample_rate,noise_multiplier,delta,epsilon,order\n";
      std::string orders = "client,order,rdp_total\n";
      for (const auto& client : result.clients) {
        if (client.ledger.orders.empty()) continue;
        const double delta =
            cfg.fed.dp->delta > 0.0
                ? cfg.fed.dp->delta
                : 0.1 / static_cast<double>(client.shard.size());
        const auto eps = dp::rdp_epsilon(client.ledger, delta);
        privacy += std::to_string(client.id) + "," +
                   std::to_string(client.ledger.steps) + "," +
                   csv_double(client.ledger.q) + "," +
                   csv_double(client.ledger.z) + "," + csv_double(delta) +
                   "," + csv_double(eps.epsilon) + "," +
                   csv_double(eps.order) + "\n";
        const auto totals = client.ledger.totals();
        for (size_t i = 0; i < client.ledger.orders.size(); ++i) {
          orders += std::to_string(client.id) + "," +
                    csv_double(client.ledger.orders[i]) + "," +
                    csv_double(totals[i]) + "\n";
        }
      }
      write_text_file(dir + "/privacy.csv", privacy);
      write_text_file(dir + "/privacy_orders.csv", orders);
    }

    outcome.final_accuracy =
        result.rounds.empty() ? 0.0 : result.rounds.back().global_accuracy;
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.ok = false;
    outcome.error = e.what();
  }
  return outcome;
}

}  // namespace

RunOutcome run_experiment(ExperimentConfig cfg, int parallel_seeds,
                          const std::optional<std::vector<uint64_t>>&
                              seed_override) {
  cfg.resolve_and_validate();
  if (seed_override) {
    if (seed_override->empty()) {
      throw ConfigError("run: the seed override is empty");
    }
    cfg.seeds = *seed_override;
  }
  std::string out_dir = cfg.output_dir;
  if (const char* root = std::getenv("FEDSIM_OUTPUT_ROOT");
      root && *root && !fs::path(out_dir).is_absolute()) {
    out_dir = (fs::path(root) / out_dir).string();
  }
  fs::create_directories(out_dir);

  RunOutcome outcome;
  outcome.dir = out_dir;
  write_text_file(out_dir + "/manifest.txt",
                  manifest_text(cfg, cfg.seeds, "running", ""));

  outcome.seeds.resize(cfg.seeds.size());
  const int pool = std::max(
      1, std::min<int>(parallel_seeds, static_cast<int>(cfg.seeds.size())));
  auto work = [&](int worker) {
    for (size_t i = static_cast<size_t>(worker); i < cfg.seeds.size();
         i += static_cast<size_t>(pool)) {
      const uint64_t seed = cfg.seeds[i];
      outcome.seeds[i] = run_single_seed(
          cfg, seed, out_dir + "/seed_" + std::to_string(seed));
    }
  };
  if (pool <= 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < pool; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }

  outcome.ok = true;
  std::string error;
  std::vector<double> accs;
  for (const auto& s : outcome.seeds) {
    outcome.ok = outcome.ok && s.ok;
    if (!s.ok && error.empty()) error = s.error;
    if (s.ok) accs.push_back(s.final_accuracy);
  }

  std::string summary = "seed,final_accuracy\n";
  for (const auto& s : outcome.seeds) {
    summary += std::to_string(s.seed) + "," +
               (s.ok ? csv_double(s.final_accuracy) : "failed") + "\n";
  }
  if (!accs.empty()) {
    summary += "mean," + csv_double(stats::mean(accs)) + "\n";
    summary += "stddev," + csv_double(stats::stddev(accs)) + "\n";
  }
  write_text_file(out_dir + "/summary.csv", summary);
  write_text_file(out_dir + "/manifest.txt",
                  manifest_text(cfg, cfg.seeds,
                                outcome.ok ? "completed" : "failed", error));
  return outcome;
}

namespace {

struct RunInfo {
  ExperimentConfig cfg;
  std::vector<double> accuracies;
};

std::optional<RunInfo> load_run(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  if (!fs::exists(manifest)) return std::nullopt;
  std::ifstream in(manifest);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const std::string marker = "config:\n";
  const auto pos = text.find(marker);
  if (pos == std::string::npos) return std::nullopt;
  RunInfo info;
  info.cfg = parse_config_text(text.substr(pos + marker.size()));
  for (uint64_t seed : info.cfg.seeds) {
    const fs::path metrics = dir / ("seed_" + std::to_string(seed)) /
                             "metrics.csv";
    if (!fs::exists(metrics)) continue;
    std::ifstream mf(metrics);
    std::string line;
    double last = -1.0;
    while (std::getline(mf, line)) {
      if (line.find(",global,test_accuracy,") != std::string::npos) {
        last = std::stod(line.substr(line.rfind(',') + 1));
      }
    }
    if (last >= 0.0) info.accuracies.push_back(last);
  }
  return info;
}

std::string arch_label(const nn::ModelSpec& spec) {
  std::string label = nn::arch_name(spec.arch);
  if (spec.arch == nn::Arch::anfr) {
    label += "(" + nn::attention_name(spec.attention) + ")";
  }
  return label;
}

}  // namespace

ReportTable report(const std::string& root) {
  std::vector<RunInfo> runs;
  if (auto self = load_run(root)) {
    runs.push_back(std::move(*self));
  } else {
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) subdirs.push_back(entry.path());
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& sub : subdirs) {
      if (auto run = load_run(sub)) runs.push_back(std::move(*run));
    }
  }
  if (runs.empty()) {
    throw IoError("report: no completed runs under '" + root + "'");
  }
  ReportTable table;
  // Accumulate all accuracies per (aggregation, architecture) cell.
  std::vector<std::vector<std::vector<double>>> pooled;
  for (const auto& run : runs) {
    const std::string row = fed::aggregation_name(run.cfg.fed.aggregation);
    const std::string col = arch_label(run.cfg.model);
    size_t r = std::find(table.aggregations.begin(), table.aggregations.end(),
                         row) -
               table.aggregations.begin();
    if (r == table.aggregations.size()) {
      table.aggregations.push_back(row);
      pooled.emplace_back();
    }
    size_t c = std::find(table.architectures.begin(),
                         table.architectures.end(), col) -
               table.architectures.begin();
    if (c == table.architectures.size()) table.architectures.push_back(col);
    for (auto& rowv : pooled) rowv.resize(table.architectures.size());
    pooled[r][c].insert(pooled[r][c].end(), run.accuracies.begin(),
                        run.accuracies.end());
  }
  table.cells.assign(table.aggregations.size(),
                     std::vector<std::optional<ReportCell>>(
                         table.architectures.size()));
  for (size_t r = 0; r < pooled.size(); ++r) {
    for (size_t c = 0; c < pooled[r].size(); ++c) {
      if (pooled[r][c].empty()) continue;
      ReportCell cell;
      cell.mean = stats::mean(pooled[r][c]);
      cell.stddev = stats::stddev(pooled[r][c]);
      cell.count = static_cast<int>(pooled[r][c].size());
      table.cells[r][c] = cell;
    }
  }
  return table;
}

std::string render_report_csv(const ReportTable& table) {
  std::string out = "aggregation,architecture,mean,stddev,seeds\n";
  for (size_t r = 0; r < table.aggregations.size(); ++r) {
    for (size_t c = 0; c < table.architectures.size(); ++c) {
      if (!table.cells[r][c]) continue;
      const auto& cell = *table.cells[r][c];
      out += table.aggregations[r] + "," + table.architectures[c] + "," +
             csv_double(cell.mean) + "," + csv_double(cell.stddev) + "," +
             std::to_string(cell.count) + "\n";
    }
  }
  return out;
}

std::string render_report_text(const ReportTable& table) {
  auto cell_text = [](const std::optional<ReportCell>& cell, bool best) {
    if (!cell) return std::string("-");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f +/- %.2f", 100.0 * cell->mean,
                  100.0 * cell->stddev);
    std::string s = buf;
    if (best) s = "*" + s + "*";
    return s;
  };
  const size_t rows = table.aggregations.size();
  const size_t cols = table.architectures.size();
  std::vector<std::vector<std::string>> grid(rows + 1);
  grid[0].push_back("aggregation");
  for (const auto& a : table.architectures) grid[0].push_back(a);
  for (size_t r = 0; r < rows; ++r) {
    // Best cell per row gets highlighted.
    size_t best = cols;
    for (size_t c = 0; c < cols; ++c) {
      if (!table.cells[r][c]) continue;
      if (best == cols || table.cells[r][c]->mean > table.cells[r][best]->mean) {
        best = c;
      }
    }
    grid[r + 1].push_back(table.aggregations[r]);
    for (size_t c = 0; c < cols; ++c) {
      grid[r + 1].push_back(cell_text(table.cells[r][c], c == best));
    }
  }
  std::vector<size_t> width(cols + 1, 0);
  for (const auto& row : grid) {
    for (size_t c = 0; c < row.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::string out;
  for (const auto& row : grid) {
    for (size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      out.append(width[c] - row[c].size() + 2, ' ');
    }
    out += "\n";
  }
  return out;
}

}  // namespace fedsim::harness
