#pragma once

// Run configuration: a flat "key = value" file ('#' comments, blank lines
// allowed) with a strict schema: unknown keys are a hard error so typos
// cannot silently change a run. CLI flags override file values; the
// resolved set is echoed into the run directory.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gorqat/dynamics.hpp"
#include "gorqat/errors.hpp"
#include "gorqat/trainer.hpp"

namespace gorqat {

struct DataConfig {
  std::string kind = "blobs";  // blobs | csv | idx
  // blobs
  int classes = 2;
  int points = 2000;
  double sigma = 0.4;
  std::uint64_t seed = 7;
  // csv / idx
  std::string path;
  std::string labels_path;
  std::string test_path;
  std::string test_labels_path;
};

struct DynamicsConfig {
  DynamicsVariant variant = DynamicsVariant::gor;
  std::string script = "constant";  // constant | piecewise | noisy
  double l_task = 4.0;
  double l_kd = 1.0;
  std::string pieces;  // "step:l_task:l_kd;..."
  double noise_sigma = 0.1;
  std::uint64_t noise_seed = 1;
  long steps = 10000;
  double init_alpha_task = 1.0;
  double init_alpha_kd = 1.0;
  bool basin = false;
  double basin_lo = 0.1;
  double basin_hi = 10.0;
  int basin_cells = 5;
  bool plot = false;
};

struct SweepConfig {
  std::vector<double> alpha_grid{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;
  DynamicsConfig dynamics;
  SweepConfig sweep;
  std::vector<std::string> teacher_paths;
  std::string out_dir;
  int jobs = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + v + "'");
  }
}

inline long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-integer value '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-integer value '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' has non-boolean value '" + v + "'");
}

}  // namespace detail

// Applies one key/value pair; throws ConfigError for unknown keys.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_long;
  using detail::parse_u64;

  if (key == "mode") {
    cfg.train.mode = parse_train_mode(value);
  } else if (key == "model.student") {
    cfg.train.student_widths.clear();
    for (const auto& w : detail::split_list(value, ',')) {
      const long width = parse_long(key, w);
      if (width < 1) throw ConfigError("config: non-positive width in model.student");
      cfg.train.student_widths.push_back(static_cast<std::size_t>(width));
    }
  } else if (key == "eta_theta") {
    cfg.train.eta_theta = parse_double(key, value);
  } else if (key == "momentum") {
    cfg.train.momentum = parse_double(key, value);
  } else if (key == "eta_alpha") {
    cfg.train.eta_alpha = parse_double(key, value);
  } else if (key == "tau") {
    cfg.train.tau = parse_double(key, value);
  } else if (key == "wbits") {
    cfg.train.wbits = static_cast<int>(parse_long(key, value));
  } else if (key == "abits") {
    cfg.train.abits = static_cast<int>(parse_long(key, value));
  } else if (key == "epochs") {
    cfg.train.epochs = static_cast<int>(parse_long(key, value));
  } else if (key == "batch_size") {
    cfg.train.batch_size = static_cast<int>(parse_long(key, value));
  } else if (key == "seed") {
    cfg.train.seed = parse_u64(key, value);
  } else if (key == "alpha") {
    cfg.train.static_alpha = parse_double(key, value);
  } else if (key == "kd.distance") {
    if (value == "kl") {
      cfg.train.kd_distance = KdDistance::kl_on_softmax;
    } else if (value == "mse") {
      cfg.train.kd_distance = KdDistance::mse_on_logits;
    } else {
      throw ConfigError("config: kd.distance must be 'kl' or 'mse', got '" + value + "'");
    }
  } else if (key == "kd.tau_correction") {
    cfg.train.tau_correction = parse_bool(key, value);
  } else if (key == "clip_floor") {
    cfg.train.clip_floor = parse_double(key, value);
  } else if (key == "ste") {
    if (value == "clipped") {
      cfg.train.ste = StePolicy::clipped;
    } else if (value == "passthrough") {
      cfg.train.ste = StePolicy::passthrough;
    } else {
      throw ConfigError("config: ste must be 'clipped' or 'passthrough', got '" + value + "'");
    }
  } else if (key == "act_momentum") {
    cfg.train.act_momentum = parse_double(key, value);
  } else if (key == "act_warmup_batches") {
    cfg.train.act_warmup_batches = static_cast<int>(parse_long(key, value));
  } else if (key == "exempt_edge_layers") {
    cfg.train.exempt_edge_layers = parse_bool(key, value);
  } else if (key == "learnable_tau") {
    cfg.train.learnable_tau = parse_bool(key, value);
  } else if (key == "teachers") {
    cfg.teacher_paths = detail::split_list(value, ',');
  } else if (key == "out") {
    cfg.out_dir = value;
  } else if (key == "jobs") {
    cfg.jobs = static_cast<int>(parse_long(key, value));
    if (cfg.jobs < 1) throw ConfigError("config: jobs must be >= 1");
  } else if (key == "data.kind") {
    if (value != "blobs" && value != "csv" && value != "idx") {
      throw ConfigError("config: data.kind must be blobs|csv|idx, got '" + value + "'");
    }
    cfg.data.kind = value;
  } else if (key == "data.classes") {
    cfg.data.classes = static_cast<int>(parse_long(key, value));
  } else if (key == "data.points") {
    cfg.data.points = static_cast<int>(parse_long(key, value));
  } else if (key == "data.sigma") {
    cfg.data.sigma = parse_double(key, value);
  } else if (key == "data.seed") {
    cfg.data.seed = parse_u64(key, value);
  } else if (key == "data.path") {
    cfg.data.path = value;
  } else if (key == "data.labels_path") {
    cfg.data.labels_path = value;
  } else if (key == "data.test_path") {
    cfg.data.test_path = value;
  } else if (key == "data.test_labels_path") {
    cfg.data.test_labels_path = value;
  } else if (key == "sweep.alpha_grid") {
    cfg.sweep.alpha_grid.clear();
    for (const auto& a : detail::split_list(value, ','))
      cfg.sweep.alpha_grid.push_back(parse_double(key, a));
  } else if (key == "sweep.seeds") {
    cfg.sweep.seeds.clear();
    for (const auto& s : detail::split_list(value, ','))
      cfg.sweep.seeds.push_back(parse_u64(key, s));
  } else if (key == "dynamics.variant") {
    if (value == "gor") {
      cfg.dynamics.variant = DynamicsVariant::gor;
    } else if (value == "single_scalar") {
      cfg.dynamics.variant = DynamicsVariant::single_scalar;
    } else {
      throw ConfigError("config: dynamics.variant must be gor|single_scalar, got '" + value + "'");
    }
  } else if (key == "dynamics.script") {
    if (value != "constant" && value != "piecewise" && value != "noisy") {
      throw ConfigError("config: dynamics.script must be constant|piecewise|noisy");
    }
    cfg.dynamics.script = value;
  } else if (key == "dynamics.l_task") {
    cfg.dynamics.l_task = parse_double(key, value);
  } else if (key == "dynamics.l_kd") {
    cfg.dynamics.l_kd = parse_double(key, value);
  } else if (key == "dynamics.pieces") {
    cfg.dynamics.pieces = value;
  } else if (key == "dynamics.noise_sigma") {
    cfg.dynamics.noise_sigma = parse_double(key, value);
  } else if (key == "dynamics.noise_seed") {
    cfg.dynamics.noise_seed = parse_u64(key, value);
  } else if (key == "dynamics.steps") {
    cfg.dynamics.steps = parse_long(key, value);
  } else if (key == "dynamics.init_alpha_task") {
    cfg.dynamics.init_alpha_task = parse_double(key, value);
  } else if (key == "dynamics.init_alpha_kd") {
    cfg.dynamics.init_alpha_kd = parse_double(key, value);
  } else if (key == "dynamics.basin") {
    cfg.dynamics.basin = parse_bool(key, value);
  } else if (key == "dynamics.basin_lo") {
    cfg.dynamics.basin_lo = parse_double(key, value);
  } else if (key == "dynamics.basin_hi") {
    cfg.dynamics.basin_hi = parse_double(key, value);
  } else if (key == "dynamics.basin_cells") {
    cfg.dynamics.basin_cells = static_cast<int>(parse_long(key, value));
  } else if (key == "dynamics.plot") {
    cfg.dynamics.plot = parse_bool(key, value);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

inline RunConfig parse_config_text(const std::string& text, RunConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config: empty key on line " + std::to_string(line_no));
    }
    apply_config_key(cfg, key, value);
  }
  return cfg;
}

inline RunConfig load_config_file(const std::string& path, RunConfig cfg = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::move(cfg));
}

inline LossScript make_loss_script(const DynamicsConfig& d) {
  if (d.script == "constant") return LossScript::constant(d.l_task, d.l_kd);
  if (d.script == "noisy") return LossScript::noisy(d.l_task, d.l_kd, d.noise_sigma, d.noise_seed);
  std::vector<LossScript::Piece> pieces;
  for (const auto& piece : detail::split_list(d.pieces, ';')) {
    const auto parts = detail::split_list(piece, ':');
    if (parts.size() != 3) {
      throw ConfigError("config: dynamics.pieces entries must be step:l_task:l_kd");
    }
    pieces.push_back({detail::parse_long("dynamics.pieces", parts[0]),
                      detail::parse_double("dynamics.pieces", parts[1]),
                      detail::parse_double("dynamics.pieces", parts[2])});
  }
  return LossScript::piecewise(std::move(pieces));
}

inline Dataset load_dataset(const DataConfig& d) {
  if (d.kind == "blobs") return make_blobs(d.classes, d.points, d.sigma, d.seed);
  if (d.kind == "csv") {
    if (d.path.empty()) throw ConfigError("config: data.path required for csv data");
    return load_csv(d.path, d.seed);
  }
  if (d.path.empty() || d.labels_path.empty()) {
    throw ConfigError("config: data.path and data.labels_path required for idx data");
  }
  return load_idx(d.path, d.labels_path, d.test_path, d.test_labels_path, d.seed);
}

// Canonical echo of the resolved configuration, sorted by key.
inline std::string resolved_config_text(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["mode"] = to_string(cfg.train.mode);
  {
    std::string widths;
    for (std::size_t i = 0; i < cfg.train.student_widths.size(); ++i) {
      if (i) widths += ",";
      widths += std::to_string(cfg.train.student_widths[i]);
    }
    kv["model.student"] = widths;
  }
  kv["eta_theta"] = format_double(cfg.train.eta_theta);
  kv["momentum"] = format_double(cfg.train.momentum);
  kv["eta_alpha"] = format_double(cfg.train.eta_alpha);
  kv["tau"] = format_double(cfg.train.tau);
  kv["wbits"] = std::to_string(cfg.train.wbits);
  kv["abits"] = std::to_string(cfg.train.abits);
  kv["epochs"] = std::to_string(cfg.train.epochs);
  kv["batch_size"] = std::to_string(cfg.train.batch_size);
  kv["seed"] = std::to_string(cfg.train.seed);
  kv["alpha"] = format_double(cfg.train.static_alpha);
  kv["kd.distance"] = cfg.train.kd_distance == KdDistance::kl_on_softmax ? "kl" : "mse";
  kv["kd.tau_correction"] = cfg.train.tau_correction ? "true" : "false";
  kv["clip_floor"] = format_double(cfg.train.clip_floor);
  kv["ste"] = cfg.train.ste == StePolicy::clipped ? "clipped" : "passthrough";
  kv["act_momentum"] = format_double(cfg.train.act_momentum);
  kv["act_warmup_batches"] = std::to_string(cfg.train.act_warmup_batches);
  kv["exempt_edge_layers"] = cfg.train.exempt_edge_layers ? "true" : "false";
  kv["learnable_tau"] = cfg.train.learnable_tau ? "true" : "false";
  {
    std::string teachers;
    for (std::size_t i = 0; i < cfg.teacher_paths.size(); ++i) {
      if (i) teachers += ",";
      teachers += cfg.teacher_paths[i];
    }
    kv["teachers"] = teachers;
  }
  kv["out"] = cfg.out_dir;
  kv["jobs"] = std::to_string(cfg.jobs);
  kv["data.kind"] = cfg.data.kind;
  kv["data.classes"] = std::to_string(cfg.data.classes);
  kv["data.points"] = std::to_string(cfg.data.points);
  kv["data.sigma"] = format_double(cfg.data.sigma);
  kv["data.seed"] = std::to_string(cfg.data.seed);
  kv["data.path"] = cfg.data.path;
  kv["data.labels_path"] = cfg.data.labels_path;
  kv["data.test_path"] = cfg.data.test_path;
  kv["data.test_labels_path"] = cfg.data.test_labels_path;
  {
    std::string grid;
    for (std::size_t i = 0; i < cfg.sweep.alpha_grid.size(); ++i) {
      if (i) grid += ",";
      grid += format_double(cfg.sweep.alpha_grid[i]);
    }
    kv["sweep.alpha_grid"] = grid;
    std::string seeds;
    for (std::size_t i = 0; i < cfg.sweep.seeds.size(); ++i) {
      if (i) seeds += ",";
      seeds += std::to_string(cfg.sweep.seeds[i]);
    }
    kv["sweep.seeds"] = seeds;
  }
  kv["dynamics.variant"] =
      cfg.dynamics.variant == DynamicsVariant::gor ? "gor" : "single_scalar";
  kv["dynamics.script"] = cfg.dynamics.script;
  kv["dynamics.l_task"] = format_double(cfg.dynamics.l_task);
  kv["dynamics.l_kd"] = format_double(cfg.dynamics.l_kd);
  kv["dynamics.pieces"] = cfg.dynamics.pieces;
  kv["dynamics.noise_sigma"] = format_double(cfg.dynamics.noise_sigma);
  kv["dynamics.noise_seed"] = std::to_string(cfg.dynamics.noise_seed);
  kv["dynamics.steps"] = std::to_string(cfg.dynamics.steps);
  kv["dynamics.init_alpha_task"] = format_double(cfg.dynamics.init_alpha_task);
  kv["dynamics.init_alpha_kd"] = format_double(cfg.dynamics.init_alpha_kd);
  kv["dynamics.basin"] = cfg.dynamics.basin ? "true" : "false";
  kv["dynamics.basin_lo"] = format_double(cfg.dynamics.basin_lo);
  kv["dynamics.basin_hi"] = format_double(cfg.dynamics.basin_hi);
  kv["dynamics.basin_cells"] = std::to_string(cfg.dynamics.basin_cells);
  kv["dynamics.plot"] = cfg.dynamics.plot ? "true" : "false";

  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace gorqat
