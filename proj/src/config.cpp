#include "fedsim/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedsim/error.hpp"

namespace fedsim::harness {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Cursor {
  int line = 0;
  std::string section;
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
  }
};

int parse_int(const Cursor& c, const std::string& v) {
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    c.fail("expected an integer, got '" + v + "'");
  }
}

double parse_double(const Cursor& c, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    c.fail("expected a number, got '" + v + "'");
  }
}

bool parse_bool(const Cursor& c, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  c.fail("expected true/false, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : v) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<int> parse_int_list(const Cursor& c, const std::string& v) {
  std::vector<int> out;
  for (const auto& tok : split_commas(v)) out.push_back(parse_int(c, tok));
  return out;
}

std::vector<uint64_t> parse_u64_list(const Cursor& c, const std::string& v) {
  std::vector<uint64_t> out;
  for (const auto& tok : split_commas(v)) {
    try {
      size_t pos = 0;
      out.push_back(std::stoull(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      c.fail("expected an unsigned integer list, got '" + v + "'");
    }
  }
  return out;
}

template <typename Fn>
auto guarded(const Cursor& c, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    c.fail(e.what());
  }
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_u64(const std::vector<uint64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

void ExperimentConfig::resolve_and_validate() {
  if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  if (output_dir.empty()) throw ConfigError("config: output dir is empty");
  if (data.clients < 1) throw ConfigError("config: clients must be >= 1");
  if (data.classes < 2) throw ConfigError("config: classes must be >= 2");
  if (data.samples_per_client < 1 || data.test_samples < 1) {
    throw ConfigError("config: sample counts must be positive");
  }
  if (data.image_size < 8) throw ConfigError("config: image_size must be >= 8");
  if (data.shift_strength < 0.0 || data.shift_strength > 1.0) {
    throw ConfigError("config: shift_strength must lie in [0,1]");
  }
  if (data.alpha <= 0.0) throw ConfigError("config: alpha must be positive");
  if (data.k < 1) throw ConfigError("config: k must be >= 1");
  model.num_classes = data.classes;
  model.in_channels = 3;
  model.in_height = data.image_size;
  model.in_width = data.image_size;
  fed.validate(model);
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  bool arch_set = false;
  bool attention_set = false;
  bool dp_enabled = false;
  dp::DpConfig dp_cfg;

  std::istringstream in(text);
  std::string raw;
  Cursor cur;
  while (std::getline(in, raw)) {
    ++cur.line;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') cur.fail("unterminated section header");
      cur.section = trim(line.substr(1, line.size() - 2));
      if (cur.section != "model" && cur.section != "data" &&
          cur.section != "fed" && cur.section != "dp" &&
          cur.section != "analysis" && cur.section != "run") {
        cur.fail("unknown section '" + cur.section + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) cur.fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (cur.section.empty()) cur.fail("key outside of any section");

    if (cur.section == "model") {
      if (key == "arch") {
        guarded(cur, [&] {
          const auto arch = nn::parse_arch(value);
          const auto keep = cfg.model;
          cfg.model = nn::ModelSpec::for_arch(arch);
          cfg.model.widths = keep.widths;
          cfg.model.depths = keep.depths;
          cfg.model.groups = keep.groups;
          cfg.model.se_reduction = keep.se_reduction;
          cfg.model.eca_kernel = keep.eca_kernel;
          cfg.model.cbam_spatial_kernel = keep.cbam_spatial_kernel;
          if (attention_set && arch == nn::Arch::anfr) {
            cfg.model.attention = keep.attention;
          }
          arch_set = true;
          return 0;
        });
      } else if (key == "attention") {
        guarded(cur, [&] {
          cfg.model.attention = nn::parse_attention(value);
          attention_set = true;
          return 0;
        });
      } else if (key == "widths") {
        cfg.model.widths = parse_int_list(cur, value);
      } else if (key == "depths") {
        cfg.model.depths = parse_int_list(cur, value);
      } else if (key == "groups") {
        cfg.model.groups = parse_int(cur, value);
      } else if (key == "se_reduction") {
        cfg.model.se_reduction = parse_int(cur, value);
      } else if (key == "eca_kernel") {
        cfg.model.eca_kernel = parse_int(cur, value);
      } else if (key == "cbam_spatial_kernel") {
        cfg.model.cbam_spatial_kernel = parse_int(cur, value);
      } else {
        cur.fail("unknown key '" + key + "' in [model]");
      }
    } else if (cur.section == "data") {
      if (key == "scheme") {
        guarded(cur, [&] {
          cfg.data.scheme = data::parse_scheme(value);
          return 0;
        });
      } else if (key == "clients") {
        cfg.data.clients = parse_int(cur, value);
      } else if (key == "classes") {
        cfg.data.classes = parse_int(cur, value);
      } else if (key == "samples_per_client") {
        cfg.data.samples_per_client = parse_int(cur, value);
      } else if (key == "test_samples") {
        cfg.data.test_samples = parse_int(cur, value);
      } else if (key == "image_size") {
        cfg.data.image_size = parse_int(cur, value);
      } else if (key == "shift_strength") {
        cfg.data.shift_strength = parse_double(cur, value);
      } else if (key == "alpha") {
        cfg.data.alpha = parse_double(cur, value);
      } else if (key == "k") {
        cfg.data.k = parse_int(cur, value);
      } else if (key == "skew_exponent") {
        cfg.data.skew_exponent = parse_double(cur, value);
      } else {
        cur.fail("unknown key '" + key + "' in [data]");
      }
    } else if (cur.section == "fed") {
      if (key == "rounds") {
        cfg.fed.rounds = parse_int(cur, value);
      } else if (key == "local_steps") {
        cfg.fed.local_steps = parse_int(cur, value);
      } else if (key == "batch_size") {
        cfg.fed.batch_size = parse_int(cur, value);
      } else if (key == "optimizer") {
        guarded(cur, [&] {
          cfg.fed.optimizer = parse_optimizer(value);
          return 0;
        });
      } else if (key == "lr") {
        cfg.fed.lr = parse_double(cur, value);
      } else if (key == "momentum") {
        cfg.fed.momentum = parse_double(cur, value);
      } else if (key == "scheduler") {
        guarded(cur, [&] {
          cfg.fed.scheduler = parse_scheduler(value);
          return 0;
        });
      } else if (key == "aggregation") {
        guarded(cur, [&] {
          cfg.fed.aggregation = fed::parse_aggregation(value);
          return 0;
        });
      } else if (key == "prox_mu") {
        cfg.fed.prox_mu = parse_double(cur, value);
      } else if (key == "server_lr") {
        cfg.fed.server_lr = parse_double(cur, value);
      } else if (key == "server_beta1") {
        cfg.fed.server_beta1 = parse_double(cur, value);
      } else if (key == "server_beta2") {
        cfg.fed.server_beta2 = parse_double(cur, value);
      } else if (key == "server_eps") {
        cfg.fed.server_eps = parse_double(cur, value);
      } else if (key == "participation") {
        cfg.fed.participation = parse_double(cur, value);
      } else if (key == "clip_grad_norm") {
        cfg.fed.clip_grad_norm = parse_double(cur, value);
      } else if (key == "loss") {
        guarded(cur, [&] {
          cfg.fed.loss = fed::parse_loss(value);
          return 0;
        });
      } else if (key == "focal_gamma") {
        cfg.fed.focal_gamma = parse_double(cur, value);
      } else if (key == "class_weighted") {
        cfg.fed.class_weighted = parse_bool(cur, value);
      } else if (key == "normalize_input") {
        cfg.fed.normalize_input = parse_bool(cur, value);
      } else if (key == "parallel_clients") {
        cfg.fed.parallel_clients = parse_int(cur, value);
      } else {
        cur.fail("unknown key '" + key + "' in [fed]");
      }
    } else if (cur.section == "dp") {
      if (key == "enabled") {
        dp_enabled = parse_bool(cur, value);
      } else if (key == "clip_norm") {
        dp_cfg.clip_norm = parse_double(cur, value);
      } else if (key == "noise_multiplier") {
        dp_cfg.noise_multiplier = parse_double(cur, value);
      } else if (key == "delta") {
        dp_cfg.delta = parse_double(cur, value);
      } else {
        cur.fail("unknown key '" + key + "' in [dp]");
      }
    } else if (cur.section == "analysis") {
      if (key == "csi") {
        cfg.analysis.csi = parse_bool(cur, value);
      } else if (key == "attention") {
        cfg.analysis.attention = parse_bool(cur, value);
      } else {
        cur.fail("unknown key '" + key + "' in [analysis]");
      }
    } else {  // run
      if (key == "seeds") {
        cfg.seeds = parse_u64_list(cur, value);
      } else if (key == "output") {
        cfg.output_dir = value;
      } else {
        cur.fail("unknown key '" + key + "' in [run]");
      }
    }
  }
  (void)arch_set;
  if (dp_enabled) cfg.fed.dp = dp_cfg;
  cfg.resolve_and_validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  out += "[model]\n";
  out += "arch = " + nn::arch_name(cfg.model.arch) + "\n";
  out += "attention = " + nn::attention_name(cfg.model.attention) + "\n";
  out += "widths = " + join_ints(cfg.model.widths) + "\n";
  out += "depths = " + join_ints(cfg.model.depths) + "\n";
  out += "groups = " + std::to_string(cfg.model.groups) + "\n";
  out += "se_reduction = " + std::to_string(cfg.model.se_reduction) + "\n";
  out += "eca_kernel = " + std::to_string(cfg.model.eca_kernel) + "\n";
  out += "cbam_spatial_kernel = " +
         std::to_string(cfg.model.cbam_spatial_kernel) + "\n";
  out += "\n[data]\n";
  out += "scheme = " + data::scheme_name(cfg.data.scheme) + "\n";
  out += "clients = " + std::to_string(cfg.data.clients) + "\n";
  out += "classes = " + std::to_string(cfg.data.classes) + "\n";
  out += "samples_per_client = " +
         std::to_string(cfg.data.samples_per_client) + "\n";
  out += "test_samples = " + std::to_string(cfg.data.test_samples) + "\n";
  out += "image_size = " + std::to_string(cfg.data.image_size) + "\n";
  out += "shift_strength = " + fmt_double(cfg.data.shift_strength) + "\n";
  out += "alpha = " + fmt_double(cfg.data.alpha) + "\n";
  out += "k = " + std::to_string(cfg.data.k) + "\n";
  out += "skew_exponent = " + fmt_double(cfg.data.skew_exponent) + "\n";
  out += "\n[fed]\n";
  out += "rounds = " + std::to_string(cfg.fed.rounds) + "\n";
  out += "local_steps = " + std::to_string(cfg.fed.local_steps) + "\n";
  out += "batch_size = " + std::to_string(cfg.fed.batch_size) + "\n";
  out += "optimizer = " + optimizer_name(cfg.fed.optimizer) + "\n";
  out += "lr = " + fmt_double(cfg.fed.lr) + "\n";
  out += "momentum = " + fmt_double(cfg.fed.momentum) + "\n";
  out += "scheduler = " + scheduler_name(cfg.fed.scheduler) + "\n";
  out += "aggregation = " + fed::aggregation_name(cfg.fed.aggregation) + "\n";
  out += "prox_mu = " + fmt_double(cfg.fed.prox_mu) + "\n";
  out += "server_lr = " + fmt_double(cfg.fed.server_lr) + "\n";
  out += "server_beta1 = " + fmt_double(cfg.fed.server_beta1) + "\n";
  out += "server_beta2 = " + fmt_double(cfg.fed.server_beta2) + "\n";
  out += "server_eps = " + fmt_double(cfg.fed.server_eps) + "\n";
  out += "participation = " + fmt_double(cfg.fed.participation) + "\n";
  out += "clip_grad_norm = " + fmt_double(cfg.fed.clip_grad_norm) + "\n";
  out += "loss = " + fed::loss_name(cfg.fed.loss) + "\n";
  out += "focal_gamma = " + fmt_double(cfg.fed.focal_gamma) + "\n";
  out += std::string("class_weighted = ") +
         (cfg.fed.class_weighted ? "true" : "false") + "\n";
  out += std::string("normalize_input = ") +
         (cfg.fed.normalize_input ? "true" : "false") + "\n";
  out += "parallel_clients = " + std::to_string(cfg.fed.parallel_clients) +
         "\n";
  out += "\n[dp]\n";
  out += std::string("enabled = ") + (cfg.fed.dp ? "true" : "false") + "\n";
  const dp::DpConfig dpc = cfg.fed.dp ? *cfg.fed.dp : dp::DpConfig{};
  out += "clip_norm = " + fmt_double(dpc.clip_norm) + "\n";
  out += "noise_multiplier = " + fmt_double(dpc.noise_multiplier) + "\n";
  out += "delta = " + fmt_double(dpc.delta) + "\n";
  out += "\n[analysis]\n";
  out += std::string("csi = ") + (cfg.analysis.csi ? "true" : "false") + "\n";
  out += std::string("attention = ") +
         (cfg.analysis.attention ? "true" : "false") + "\n";
  out += "\n[run]\n";
  out += "seeds = " + join_u64(cfg.seeds) + "\n";
  out += "output = " + cfg.output_dir + "\n";
  return out;
}

}  // namespace fedsim::harness
