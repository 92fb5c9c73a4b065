// gorqat: quantization-aware training with distillation balanced by two
// competing learnable regularizer scalars, plus a dynamics simulator for
// the scalar game itself.
//
// Exit codes: 0 ok, 2 config error, 3 divergence, 4 I/O error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gorqat/checkpoint.hpp"
#include "gorqat/config.hpp"
#include "gorqat/dynamics.hpp"
#include "gorqat/plot.hpp"
#include "gorqat/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

std::string default_out_root() {
  const char* env = std::getenv("GORQAT_OUT");
  return env != nullptr && *env != '\0' ? env : "runs";
}

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string teachers;
  std::string mode;
  std::uint64_t seed = 0;
  int wbits = 0;
  int abits = 0;
  double alpha = -1.0;
  double eta_theta = 0.0;
  double eta_alpha = 0.0;
  double tau = 0.0;
  int jobs = 0;

  bool seed_set = false, wbits_set = false, abits_set = false, alpha_set = false;
  bool eta_theta_set = false, eta_alpha_set = false, tau_set = false, jobs_set = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "run configuration file (key = value)");
  cmd->add_option("--out", f.out_dir, "output directory for run artifacts");
  cmd->add_option("--teachers", f.teachers, "comma-separated teacher checkpoint paths");
  cmd->add_option("--mode", f.mode, "training mode");
  cmd->add_option("--seed", f.seed, "run seed")->each([&f](const std::string&) { f.seed_set = true; });
  cmd->add_option("--wbits", f.wbits, "weight bit-width (2..8, 32=off)")
      ->each([&f](const std::string&) { f.wbits_set = true; });
  cmd->add_option("--abits", f.abits, "activation bit-width (2..8, 32=off)")
      ->each([&f](const std::string&) { f.abits_set = true; });
  cmd->add_option("--alpha", f.alpha, "static weighting alpha")
      ->each([&f](const std::string&) { f.alpha_set = true; });
  cmd->add_option("--eta-theta", f.eta_theta, "parameter learning rate")
      ->each([&f](const std::string&) { f.eta_theta_set = true; });
  cmd->add_option("--eta-alpha", f.eta_alpha, "regularizer learning rate")
      ->each([&f](const std::string&) { f.eta_alpha_set = true; });
  cmd->add_option("--tau", f.tau, "distillation temperature")
      ->each([&f](const std::string&) { f.tau_set = true; });
  cmd->add_option("--jobs", f.jobs, "parallel workers for sweep arms / basin cells")
      ->each([&f](const std::string&) { f.jobs_set = true; });
}

gorqat::RunConfig resolve_config(const CommonFlags& f, const std::string& subcommand) {
  gorqat::RunConfig cfg;
  if (!f.config_path.empty()) cfg = gorqat::load_config_file(f.config_path, std::move(cfg));
  if (!f.mode.empty()) gorqat::apply_config_key(cfg, "mode", f.mode);
  if (!f.teachers.empty()) gorqat::apply_config_key(cfg, "teachers", f.teachers);
  if (f.seed_set) cfg.train.seed = f.seed;
  if (f.wbits_set) cfg.train.wbits = f.wbits;
  if (f.abits_set) cfg.train.abits = f.abits;
  if (f.alpha_set) cfg.train.static_alpha = f.alpha;
  if (f.eta_theta_set) cfg.train.eta_theta = f.eta_theta;
  if (f.eta_alpha_set) cfg.train.eta_alpha = f.eta_alpha;
  if (f.tau_set) cfg.train.tau = f.tau;
  if (f.jobs_set) {
    if (f.jobs < 1) throw gorqat::ConfigError("--jobs must be >= 1");
    cfg.jobs = f.jobs;
  }
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  if (cfg.out_dir.empty()) cfg.out_dir = default_out_root() + "/" + subcommand;
  return cfg;
}

gorqat::TeacherEnsemble load_teachers(const gorqat::RunConfig& cfg) {
  gorqat::TeacherEnsemble ensemble;
  for (const auto& path : cfg.teacher_paths) {
    if (!std::filesystem::exists(path)) {
      throw gorqat::ConfigError("teacher checkpoint not found: " + path);
    }
    gorqat::Checkpoint ck = gorqat::load_checkpoint(path);
    ck.model.role = gorqat::Role::teacher;
    ck.model.freeze();
    ensemble.teachers.push_back(std::move(ck.model));
  }
  ensemble.validate();
  return ensemble;
}

void write_resolved_config(const gorqat::RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  gorqat::write_text_file(cfg.out_dir + "/config.resolved", gorqat::resolved_config_text(cfg));
}

int cmd_train(const CommonFlags& flags) {
  gorqat::RunConfig cfg = resolve_config(flags, "train");
  write_resolved_config(cfg);
  const gorqat::Dataset data = gorqat::load_dataset(cfg.data);
  const gorqat::TeacherEnsemble teachers = load_teachers(cfg);
  cfg.train.out_dir = cfg.out_dir;
  const gorqat::TrainResult result = gorqat::train(cfg.train, data, teachers);
  std::cout << "train: mode=" << gorqat::to_string(cfg.train.mode) << " seed=" << cfg.train.seed
            << " test_acc=" << result.final_test_acc << " alpha_task=" << result.gor.alpha_task
            << " alpha_kd=" << result.gor.alpha_kd << "\n"
            << "run directory: " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_sweep(const CommonFlags& flags) {
  gorqat::RunConfig cfg = resolve_config(flags, "sweep");
  write_resolved_config(cfg);
  const gorqat::Dataset data = gorqat::load_dataset(cfg.data);
  const gorqat::TeacherEnsemble teachers = load_teachers(cfg);
  if (teachers.size() != 1) {
    throw gorqat::ConfigError("sweep requires exactly one teacher checkpoint");
  }
  cfg.train.out_dir.clear();
  const auto arms = gorqat::static_sweep(cfg.train, data, teachers, cfg.sweep.alpha_grid,
                                         cfg.sweep.seeds, /*include_gor=*/true, cfg.jobs);
  gorqat::write_text_file(cfg.out_dir + "/sweep.csv", gorqat::sweep_csv(arms, cfg.sweep.seeds));
  gorqat::write_text_file(cfg.out_dir + "/sweep_summary.csv", gorqat::sweep_summary_csv(arms));
  std::cout << gorqat::sweep_table_text(arms) << "run directory: " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_dynamics(const CommonFlags& flags) {
  gorqat::RunConfig cfg = resolve_config(flags, "dynamics");
  write_resolved_config(cfg);
  const gorqat::LossScript script = gorqat::make_loss_script(cfg.dynamics);
  gorqat::GoRState init;
  init.alpha_task = cfg.dynamics.init_alpha_task;
  init.alpha_kd = cfg.dynamics.init_alpha_kd;
  init.eta_alpha = cfg.train.eta_alpha;
  init.clip_floor = cfg.train.clip_floor;

  const gorqat::Trajectory traj =
      gorqat::simulate(init, script, cfg.dynamics.steps, cfg.dynamics.variant);
  gorqat::write_text_file(cfg.out_dir + "/trajectory.csv", gorqat::trajectory_csv(traj));
  const auto& last = traj.final_row();
  std::cout << "dynamics: steps=" << cfg.dynamics.steps
            << " final_alpha_task=" << last.alpha_task << " final_alpha_kd=" << last.alpha_kd
            << " final_residual=" << last.eq_residual << "\n";

  if (cfg.dynamics.plot) {
    std::vector<gorqat::PlotSeries> series(2);
    series[0] = {"alpha_task", "#c0392b", {}};
    series[1] = {"alpha_kd", "#2980b9", {}};
    for (const auto& r : traj.rows) {
      series[0].values.push_back(r.alpha_task);
      series[1].values.push_back(r.alpha_kd);
    }
    gorqat::write_text_file(cfg.out_dir + "/trajectory.svg",
                            gorqat::svg_line_chart("regularizer trajectory", series));
  }

  if (cfg.dynamics.basin) {
    const auto grid =
        gorqat::log_grid(cfg.dynamics.basin_lo, cfg.dynamics.basin_hi, cfg.dynamics.basin_cells);
    const auto cells = gorqat::basin_scan(grid, script, cfg.dynamics.steps, init, cfg.jobs);
    gorqat::write_text_file(cfg.out_dir + "/basin.csv", gorqat::basin_csv(cells));
    if (cfg.dynamics.plot) {
      gorqat::write_text_file(
          cfg.out_dir + "/basin.svg",
          gorqat::svg_basin_heatmap("final equilibrium residual", cells,
                                    cfg.dynamics.basin_cells));
    }
    std::size_t converged = 0;
    for (const auto& c : cells) {
      if (c.final_residual <= 0.05) ++converged;
    }
    std::cout << "basin: " << converged << "/" << cells.size()
              << " cells with residual <= 0.05\n";
  }
  std::cout << "run directory: " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& checkpoint_path, bool use_quant,
                 bool as_json) {
  gorqat::RunConfig cfg = resolve_config(flags, "evaluate");
  gorqat::Checkpoint ck = gorqat::load_checkpoint(checkpoint_path);
  const gorqat::Dataset data = gorqat::load_dataset(cfg.data);
  gorqat::ModelQuant* quant =
      use_quant && ck.quant.has_value() ? &ck.quant.value() : nullptr;
  const double train_acc = gorqat::evaluate(ck.model, data.train, quant);
  const double test_acc = gorqat::evaluate(ck.model, data.test, quant);
  if (as_json) {
    nlohmann::json j;
    j["checkpoint"] = checkpoint_path;
    j["quantized"] = quant != nullptr;
    j["train_acc"] = train_acc;
    j["test_acc"] = test_acc;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "train_acc=" << train_acc << " test_acc=" << test_acc
              << (quant != nullptr ? " (quantized)" : " (full precision)") << "\n";
  }
  return kExitOk;
}

int cmd_inspect(const std::string& checkpoint_path, bool as_json) {
  gorqat::Checkpoint ck = gorqat::load_checkpoint(checkpoint_path);
  if (as_json) {
    nlohmann::json j;
    j["role"] = ck.model.role == gorqat::Role::teacher ? "teacher" : "student";
    j["frozen"] = ck.model.frozen;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : ck.model.layers) {
      nlohmann::json lj;
      lj["name"] = layer.name;
      lj["in"] = layer.weight.shape()[0];
      lj["out"] = layer.weight.shape()[1];
      lj["activation"] = layer.act == gorqat::Activation::relu ? "relu" : "none";
      j["layers"].push_back(lj);
    }
    j["gor"]["alpha_task"] = ck.gor.alpha_task;
    j["gor"]["alpha_kd"] = ck.gor.alpha_kd;
    j["gor"]["eta_alpha"] = ck.gor.eta_alpha;
    j["gor"]["clip_floor"] = ck.gor.clip_floor;
    j["gor"]["step_count"] = ck.gor.step_count;
    if (ck.quant.has_value()) {
      const auto& q = *ck.quant;
      j["quant"]["wbits"] = q.wbits;
      j["quant"]["abits"] = q.abits;
      j["quant"]["weight_specs"] = nlohmann::json::array();
      for (const auto& s : q.weight_specs) {
        j["quant"]["weight_specs"].push_back(
            {{"bits", s.bits}, {"x_min", s.x_min}, {"x_max", s.x_max}, {"scale", s.scale()}});
      }
      j["quant"]["act_specs"] = nlohmann::json::array();
      for (const auto& s : q.act_specs) {
        j["quant"]["act_specs"].push_back({{"bits", s.bits},
                                           {"x_min", s.x_min},
                                           {"x_max", s.x_max},
                                           {"scale", s.scale()},
                                           {"calib_count", s.calib_count}});
      }
    }
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }

  std::cout << "checkpoint: " << checkpoint_path << "\n"
            << "role: " << (ck.model.role == gorqat::Role::teacher ? "teacher" : "student")
            << (ck.model.frozen ? " (frozen)" : "") << "\n";
  for (const auto& layer : ck.model.layers) {
    std::cout << "  " << layer.name << ": [" << layer.weight.shape()[0] << " x "
              << layer.weight.shape()[1] << "]"
              << (layer.act == gorqat::Activation::relu ? " relu" : "") << "\n";
  }
  std::cout << "gor: alpha_task=" << ck.gor.alpha_task << " alpha_kd=" << ck.gor.alpha_kd
            << " eta_alpha=" << ck.gor.eta_alpha << " steps=" << ck.gor.step_count << "\n";
  if (ck.quant.has_value()) {
    const auto& q = *ck.quant;
    std::cout << "quant: wbits=" << q.wbits << " abits=" << q.abits << "\n";
    for (std::size_t i = 0; i < q.weight_specs.size(); ++i) {
      const auto& s = q.weight_specs[i];
      std::cout << "  weight[" << i << "]: n=" << s.bits << " range=[" << s.x_min << ", "
                << s.x_max << "] s=" << s.scale() << "\n";
    }
    for (std::size_t i = 0; i < q.act_specs.size(); ++i) {
      const auto& s = q.act_specs[i];
      std::cout << "  act[" << i << "]: n=" << s.bits << " range=[" << s.x_min << ", " << s.x_max
                << "] s=" << s.scale() << " batches=" << s.calib_count << "\n";
    }
  } else {
    std::cout << "quant: none\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QAT + distillation with competing learnable regularizers"};
  app.require_subcommand(1);

  CommonFlags train_flags, sweep_flags, dyn_flags, eval_flags;
  std::string eval_checkpoint, inspect_checkpoint;
  bool eval_fp = false, eval_json = false, inspect_json = false;

  CLI::App* train_cmd = app.add_subcommand("train", "run one training configuration");
  add_common_flags(train_cmd, train_flags);

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "compare static weighting arms against the learnable pair");
  add_common_flags(sweep_cmd, sweep_flags);

  CLI::App* dyn_cmd = app.add_subcommand("dynamics", "simulate the two-scalar game");
  add_common_flags(dyn_cmd, dyn_flags);

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  add_common_flags(eval_cmd, eval_flags);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();
  eval_cmd->add_flag("--fp", eval_fp, "ignore stored quant specs (full-precision eval)");
  eval_cmd->add_flag("--json", eval_json, "machine-readable output");

  CLI::App* inspect_cmd = app.add_subcommand("inspect", "print checkpoint contents");
  inspect_cmd->add_option("--checkpoint", inspect_checkpoint, "checkpoint to inspect")->required();
  inspect_cmd->add_flag("--json", inspect_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_flags);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags);
    if (dyn_cmd->parsed()) return cmd_dynamics(dyn_flags);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_flags, eval_checkpoint, !eval_fp, eval_json);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_checkpoint, inspect_json);
  } catch (const gorqat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const gorqat::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const gorqat::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const gorqat::ValueError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
