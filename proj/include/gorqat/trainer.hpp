#pragma once

// The training loop: per mini-batch the student runs a fake-quantized
// forward pass, the task and (ensemble) distillation losses are combined
// per the configured mode, parameters take an SGD-momentum step from the
// tape gradients, and in the coupled modes the two regularizer scalars
// take their closed-form step from the same batch losses. Runs are
// deterministic per seed; non-finite losses abort with the last good state.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "gorqat/checkpoint.hpp"
#include "gorqat/dataset.hpp"
#include "gorqat/errors.hpp"
#include "gorqat/losses.hpp"
#include "gorqat/metrics.hpp"
#include "gorqat/models.hpp"
#include "gorqat/regularizer.hpp"
#include "gorqat/rng.hpp"
#include "gorqat/tensor.hpp"

namespace gorqat {

enum class TrainMode { ptq_eval, qat_only, qat_kd_static, qat_kd_gor, qat_ekd_gor };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::ptq_eval: return "ptq_eval";
    case TrainMode::qat_only: return "qat_only";
    case TrainMode::qat_kd_static: return "qat_kd_static";
    case TrainMode::qat_kd_gor: return "qat_kd_gor";
    case TrainMode::qat_ekd_gor: return "qat_ekd_gor";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "ptq_eval") return TrainMode::ptq_eval;
  if (s == "qat_only") return TrainMode::qat_only;
  if (s == "qat_kd_static") return TrainMode::qat_kd_static;
  if (s == "qat_kd_gor") return TrainMode::qat_kd_gor;
  if (s == "qat_ekd_gor") return TrainMode::qat_ekd_gor;
  throw ConfigError("unknown mode '" + s + "'");
}

inline bool mode_uses_kd(TrainMode m) {
  return m == TrainMode::qat_kd_static || m == TrainMode::qat_kd_gor ||
         m == TrainMode::qat_ekd_gor;
}

inline bool mode_uses_gor(TrainMode m) {
  return m == TrainMode::qat_kd_gor || m == TrainMode::qat_ekd_gor;
}

struct TrainConfig {
  std::vector<std::size_t> student_widths{2, 16, 2};
  TrainMode mode = TrainMode::qat_kd_gor;
  double eta_theta = 0.05;
  double momentum = 0.9;
  double eta_alpha = 1e-3;
  double tau = 4.0;
  int wbits = 8;
  int abits = 8;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 1;
  double static_alpha = 0.5;
  KdDistance kd_distance = KdDistance::kl_on_softmax;
  bool tau_correction = true;
  double clip_floor = 1e-4;
  StePolicy ste = StePolicy::clipped;
  double act_momentum = 0.9;
  int act_warmup_batches = 20;
  bool exempt_edge_layers = false;  // leave first/last layers unquantized
  bool learnable_tau = false;  // experimental; off by default
  std::string out_dir;         // when set, run artifacts are written here
};

struct TrainResult {
  ModelParams student;
  GoRState gor;
  ModelQuant quant;
  std::vector<MetricsRecord> metrics;
  double fp_test_acc = 0.0;
  double final_train_acc = 0.0;
  double final_test_acc = 0.0;
  double final_tau = 0.0;
  double wall_time_s = 0.0;
};

// Fraction of argmax-correct predictions; ties resolve to the lowest class
// index.
inline double evaluate(const ModelParams& model, const std::vector<Sample>& split,
                       ModelQuant* quant = nullptr) {
  if (split.empty()) throw ValueError("evaluate: empty split");
  const std::size_t chunk = 256;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < split.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, split.size());
    std::vector<std::size_t> rows(end - begin);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
    auto [x, y] = make_batch(split, rows);
    const Tensor logits = forward(model, x, quant, /*training=*/false);
    const std::size_t classes = logits.shape()[1];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* row = logits.values().data() + i * classes;
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (static_cast<int>(best) == y[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

namespace detail {

inline void validate_train_config(const TrainConfig& cfg, const Dataset& data,
                                  const TeacherEnsemble& teachers) {
  if (cfg.eta_theta <= 0.0 || cfg.eta_alpha <= 0.0) throw ConfigError("learning rates must be > 0");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum outside [0, 1)");
  if (cfg.tau <= 0.0) throw ConfigError("tau must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.student_widths.size() < 2) throw ConfigError("student needs at least 2 widths");
  if (cfg.wbits != kFullPrecisionBits && (cfg.wbits < 2 || cfg.wbits > 8)) {
    throw ConfigError("wbits must be in {2..8} or 32");
  }
  if (cfg.abits != kFullPrecisionBits && (cfg.abits < 2 || cfg.abits > 8)) {
    throw ConfigError("abits must be in {2..8} or 32");
  }
  if (cfg.mode == TrainMode::qat_kd_static &&
      (cfg.static_alpha < 0.0 || cfg.static_alpha > 1.0)) {
    throw ConfigError("alpha outside [0, 1]");
  }
  if (cfg.student_widths.front() != data.feature_dim) {
    throw ConfigError("student input width " + std::to_string(cfg.student_widths.front()) +
                      " != feature dim " + std::to_string(data.feature_dim));
  }
  if (cfg.student_widths.back() != data.num_classes) {
    throw ConfigError("student output width " + std::to_string(cfg.student_widths.back()) +
                      " != class count " + std::to_string(data.num_classes));
  }
  if (data.train.empty() || data.test.empty()) throw ConfigError("empty train or test split");

  const bool kd = mode_uses_kd(cfg.mode);
  if (kd && teachers.empty()) {
    throw ConfigError(std::string("mode ") + to_string(cfg.mode) + " requires a teacher");
  }
  if ((cfg.mode == TrainMode::qat_kd_static || cfg.mode == TrainMode::qat_kd_gor) &&
      teachers.size() != 1) {
    throw ConfigError(std::string("mode ") + to_string(cfg.mode) +
                      " takes exactly one teacher; use qat_ekd_gor for ensembles");
  }
  if (!kd && !teachers.empty()) {
    throw ConfigError(std::string("mode ") + to_string(cfg.mode) + " takes no teachers");
  }
  teachers.validate();
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    const ModelParams& t = teachers.teachers[i];
    if (!t.frozen) throw ConfigError("teacher " + std::to_string(i) + " is not frozen");
    if (t.input_dim() != data.feature_dim) {
      throw ConfigError("teacher " + std::to_string(i) + " expects " +
                        std::to_string(t.input_dim()) + " features, data has " +
                        std::to_string(data.feature_dim));
    }
    if (t.output_dim() != data.num_classes) {
      throw ConfigError("teacher " + std::to_string(i) + " emits " +
                        std::to_string(t.output_dim()) + " classes, data has " +
                        std::to_string(data.num_classes));
    }
  }
}

inline nlohmann::json config_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["mode"] = to_string(cfg.mode);
  j["student_widths"] = cfg.student_widths;
  j["eta_theta"] = cfg.eta_theta;
  j["momentum"] = cfg.momentum;
  j["eta_alpha"] = cfg.eta_alpha;
  j["tau"] = cfg.tau;
  j["wbits"] = cfg.wbits;
  j["abits"] = cfg.abits;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["static_alpha"] = cfg.static_alpha;
  j["kd_distance"] = cfg.kd_distance == KdDistance::kl_on_softmax ? "kl" : "mse";
  j["tau_correction"] = cfg.tau_correction;
  j["clip_floor"] = cfg.clip_floor;
  j["ste"] = cfg.ste == StePolicy::clipped ? "clipped" : "passthrough";
  j["act_momentum"] = cfg.act_momentum;
  j["act_warmup_batches"] = cfg.act_warmup_batches;
  j["exempt_edge_layers"] = cfg.exempt_edge_layers;
  j["learnable_tau"] = cfg.learnable_tau;
  return j;
}

struct ParamSnapshot {
  std::vector<std::vector<double>> values;
  GoRState gor;

  static ParamSnapshot take(ModelParams& m, const GoRState& gor) {
    ParamSnapshot s;
    for (const Tensor& p : m.parameters()) {
      s.values.emplace_back(p.values().begin(), p.values().end());
    }
    s.gor = gor;
    return s;
  }

  void restore(ModelParams& m) const {
    auto params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].values_mut();
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }
};

}  // namespace detail

// Full training run. Returns the trained student, the final regularizer
// state and the per-step metrics stream; writes metrics.csv, summary.json
// and checkpoint.bin into cfg.out_dir when set.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data,
                         const TeacherEnsemble& teachers) {
  detail::validate_train_config(cfg, data, teachers);
  const auto t_start = std::chrono::steady_clock::now();

  std::vector<std::uint64_t> teacher_sums;
  for (const auto& t : teachers.teachers) teacher_sums.push_back(params_checksum(t));

  TrainResult result;
  result.student = build_mlp(cfg.student_widths, cfg.seed);
  result.gor.eta_alpha = cfg.eta_alpha;
  result.gor.clip_floor = cfg.clip_floor;

  const bool qat = cfg.mode != TrainMode::ptq_eval;
  result.quant = quantize_model(result.student, qat ? cfg.wbits : kFullPrecisionBits,
                                qat ? cfg.abits : kFullPrecisionBits, cfg.ste, cfg.act_momentum,
                                cfg.act_warmup_batches, cfg.exempt_edge_layers);
  ModelQuant* quant = qat && (result.quant.quantizes_weights() || result.quant.quantizes_acts())
                          ? &result.quant
                          : nullptr;

  auto params = result.student.parameters();
  std::vector<std::vector<double>> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i].numel(), 0.0);

  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  double tau = cfg.tau;

  double train_acc = evaluate(result.student, data.train, quant);
  double test_acc = evaluate(result.student, data.test, quant);

  detail::ParamSnapshot last_good = detail::ParamSnapshot::take(result.student, result.gor);
  long step = 0;

  auto handle_divergence = [&](long at_step, const LossBundle& bundle) {
    if (!cfg.out_dir.empty()) {
      std::filesystem::create_directories(cfg.out_dir);
      ModelParams rollback = result.student;
      last_good.restore(rollback);
      save_checkpoint(cfg.out_dir + "/checkpoint.bin", rollback, last_good.gor,
                      quant != nullptr ? &result.quant : nullptr);
      nlohmann::json diag;
      diag["diverged_at_step"] = at_step;
      diag["loss_task"] = bundle.l_task;
      diag["loss_kd"] = bundle.l_kd;
      diag["loss_total"] = bundle.l_total;
      diag["config"] = detail::config_json(cfg);
      write_text_file(cfg.out_dir + "/divergence.json", diag.dump(2) + "\n");
      write_text_file(cfg.out_dir + "/metrics.csv", metrics_csv(result.metrics));
    }
    throw DivergenceError("train: non-finite loss at step " + std::to_string(at_step) +
                          " (loss_task=" + std::to_string(bundle.l_task) +
                          ", loss_kd=" + std::to_string(bundle.l_kd) + ")");
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      std::vector<std::size_t> rows(order.begin() + begin, order.begin() + end);
      auto [x, y] = make_batch(data.train, rows);

      for (auto& p : params) p.zero_grad();

      Tape tape;
      Tensor total, l_task_t, l_kd_t;
      LossBundle bundle;
      {
        Tape::Scope scope(tape);
        const Tensor logits = forward(result.student, x, quant, /*training=*/true);
        l_task_t = task_loss(logits, y);
        bundle.l_task = l_task_t.value();

        Tensor teacher_logits;
        if (mode_uses_kd(cfg.mode)) {
          if (cfg.mode == TrainMode::qat_ekd_gor) {
            std::vector<Tensor> per_teacher;
            per_teacher.reserve(teachers.size());
            for (const auto& t : teachers.teachers) per_teacher.push_back(forward(t, x));
            teacher_logits = ensemble_logits(per_teacher);
          } else {
            teacher_logits = forward(teachers.teachers[0], x);
          }
          KDConfig kd_cfg{tau, cfg.kd_distance, cfg.tau_correction};
          l_kd_t = kd_loss(logits, teacher_logits, kd_cfg);
          bundle.l_kd = l_kd_t.value();
        }

        switch (cfg.mode) {
          case TrainMode::ptq_eval:
          case TrainMode::qat_only:
            bundle.w_task = 1.0;
            bundle.w_kd = 0.0;
            total = l_task_t;
            break;
          case TrainMode::qat_kd_static:
            bundle.w_task = 1.0 - cfg.static_alpha;
            bundle.w_kd = cfg.static_alpha;
            total = static_joint(l_task_t, l_kd_t, StaticWeightConfig{cfg.static_alpha});
            break;
          case TrainMode::qat_kd_gor:
          case TrainMode::qat_ekd_gor:
            bundle.w_task = result.gor.weight_task();
            bundle.w_kd = result.gor.weight_kd();
            total = gor_joint(l_task_t, l_kd_t, result.gor);
            break;
        }
        bundle.l_total = total.value();
        if (!bundle.finite()) handle_divergence(step, bundle);
        backward(total);

        if (cfg.learnable_tau && mode_uses_kd(cfg.mode) &&
            cfg.kd_distance == KdDistance::kl_on_softmax) {
          // Central finite difference on the KD term; the objective carries
          // the same weight the loss had this step.
          const Tensor zs = logits.detach();
          const Tensor zt = teacher_logits.detach();
          const double h = 1e-4 * std::max(1.0, tau);
          auto kd_at = [&](double t) {
            return kd_loss(zs, zt, KDConfig{t, cfg.kd_distance, cfg.tau_correction}).value();
          };
          const double g_tau = bundle.w_kd * (kd_at(tau + h) - kd_at(tau - h)) / (2.0 * h);
          tau = std::max(tau - cfg.eta_alpha * g_tau, 0.1);
        }
      }

      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) continue;
        auto g = params[i].grad();
        auto v = velocity[i].data();
        auto w = params[i].values_mut();
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = cfg.momentum * v[k] + g[k];
          w[k] -= cfg.eta_theta * v[k];
        }
      }

      if (mode_uses_gor(cfg.mode)) {
        result.gor = gor_step(result.gor, bundle.l_task, bundle.l_kd);
      }

      ++step;
      MetricsRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.loss_task = bundle.l_task;
      rec.loss_kd = bundle.l_kd;
      rec.loss_total = bundle.l_total;
      rec.w_task = bundle.w_task;
      rec.w_kd = bundle.w_kd;
      rec.alpha_task = result.gor.alpha_task;
      rec.alpha_kd = result.gor.alpha_kd;
      rec.eq_residual =
          mode_uses_kd(cfg.mode) ? equilibrium_residual(result.gor, bundle.l_task, bundle.l_kd)
                                 : 0.0;
      rec.train_acc = train_acc;
      rec.test_acc = test_acc;
      result.metrics.push_back(rec);

      last_good = detail::ParamSnapshot::take(result.student, result.gor);
    }

    train_acc = evaluate(result.student, data.train, quant);
    test_acc = evaluate(result.student, data.test, quant);
    if (!result.metrics.empty()) {
      result.metrics.back().train_acc = train_acc;
      result.metrics.back().test_acc = test_acc;
    }
  }

  result.fp_test_acc = evaluate(result.student, data.test, nullptr);

  if (cfg.mode == TrainMode::ptq_eval) {
    // Post-training quantization: calibrate once on a deterministic slice
    // of the training data, then evaluate without retraining.
    result.quant = quantize_model(result.student, cfg.wbits, cfg.abits, cfg.ste,
                                  cfg.act_momentum, cfg.act_warmup_batches,
                                  cfg.exempt_edge_layers);
    quant = &result.quant;
    Rng calib_rng(cfg.seed ^ 0xca11b7a7e5ull);
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    calib_rng.shuffle(order);
    std::size_t begin = 0;
    for (int b = 0; b < cfg.act_warmup_batches; ++b) {
      if (begin >= order.size()) begin = 0;  // small sets cycle
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      std::vector<std::size_t> rows(order.begin() + begin, order.begin() + end);
      begin = end;
      auto [x, y] = make_batch(data.train, rows);
      (void)y;
      (void)forward(result.student, x, quant, /*training=*/true);
    }
  }

  result.final_train_acc = evaluate(result.student, data.train, quant);
  result.final_test_acc = evaluate(result.student, data.test, quant);
  result.final_tau = tau;
  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  for (std::size_t i = 0; i < teachers.size(); ++i) {
    if (params_checksum(teachers.teachers[i]) != teacher_sums[i]) {
      throw StateError("train: teacher " + std::to_string(i) + " was mutated during the run");
    }
  }

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/metrics.csv", metrics_csv(result.metrics));
    save_checkpoint(cfg.out_dir + "/checkpoint.bin", result.student, result.gor,
                    quant != nullptr ? &result.quant : nullptr);
    nlohmann::json summary;
    summary["config"] = detail::config_json(cfg);
    summary["steps"] = step;
    summary["final_train_acc"] = result.final_train_acc;
    summary["final_test_acc"] = result.final_test_acc;
    summary["fp_test_acc"] = result.fp_test_acc;
    summary["alpha_task"] = result.gor.alpha_task;
    summary["alpha_kd"] = result.gor.alpha_kd;
    summary["final_tau"] = result.final_tau;
    summary["wall_time_s"] = result.wall_time_s;
    write_text_file(cfg.out_dir + "/summary.json", summary.dump(2) + "\n");
    write_text_file(cfg.out_dir + "/checkpoint.bin.json",
                    detail::config_json(cfg).dump(2) + "\n");
  }
  return result;
}

struct SweepArm {
  std::string label;       // "static" or "gor"
  bool has_alpha = false;  // false for the gor arm
  double alpha = 0.0;
  std::vector<double> test_accs;  // one per seed
  double mean_acc = 0.0;
};

// One full training run per (arm, seed); arms share the dataset and the
// frozen teachers, so they may execute on a worker pool.
inline std::vector<SweepArm> static_sweep(const TrainConfig& base, const Dataset& data,
                                          const TeacherEnsemble& teachers,
                                          const std::vector<double>& alpha_grid,
                                          const std::vector<std::uint64_t>& seeds,
                                          bool include_gor = true, int jobs = 1) {
  if (seeds.empty()) throw ConfigError("static_sweep: no seeds");
  std::vector<double> grid;
  for (double a : alpha_grid) {
    if (a < 0.0 || a > 1.0) throw ConfigError("static_sweep: alpha outside [0, 1]");
    bool dup = false;
    for (double b : grid) dup = dup || b == a;
    if (dup) {
      std::cerr << "static_sweep: duplicate alpha " << a << " ignored\n";
      continue;
    }
    grid.push_back(a);
  }
  if (grid.empty() && !include_gor) throw ConfigError("static_sweep: empty grid");

  std::vector<SweepArm> arms;
  for (double a : grid) arms.push_back({"static", true, a, {}, 0.0});
  if (include_gor) arms.push_back({"gor", false, 0.0, {}, 0.0});
  for (auto& arm : arms) arm.test_accs.assign(seeds.size(), 0.0);

  struct Job {
    std::size_t arm;
    std::size_t seed_index;
  };
  std::vector<Job> queue;
  for (std::size_t a = 0; a < arms.size(); ++a)
    for (std::size_t s = 0; s < seeds.size(); ++s) queue.push_back({a, s});

  auto run_one = [&](const Job& job) {
    TrainConfig cfg = base;
    cfg.out_dir.clear();
    cfg.seed = seeds[job.seed_index];
    if (arms[job.arm].has_alpha) {
      cfg.mode = TrainMode::qat_kd_static;
      cfg.static_alpha = arms[job.arm].alpha;
    } else {
      cfg.mode = TrainMode::qat_kd_gor;
    }
    arms[job.arm].test_accs[job.seed_index] = train(cfg, data, teachers).final_test_acc;
  };

  if (jobs <= 1) {
    for (const Job& job : queue) run_one(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min<int>(jobs, static_cast<int>(queue.size()));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= queue.size()) return;
          run_one(queue[i]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  for (auto& arm : arms) {
    double total = 0.0;
    for (double acc : arm.test_accs) total += acc;
    arm.mean_acc = total / static_cast<double>(arm.test_accs.size());
  }
  return arms;
}

// Long-form CSV: arm,alpha,seed,test_acc.
inline std::string sweep_csv(const std::vector<SweepArm>& arms,
                             const std::vector<std::uint64_t>& seeds) {
  std::string out = "arm,alpha,seed,test_acc\n";
  for (const auto& arm : arms) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      out += arm.label;
      out += ",";
      out += arm.has_alpha ? format_double(arm.alpha) : std::string();
      out += "," + std::to_string(seeds[s]) + "," + format_double(arm.test_accs[s]) + "\n";
    }
  }
  return out;
}

inline std::string sweep_summary_csv(const std::vector<SweepArm>& arms) {
  std::string out = "arm,alpha,mean_test_acc\n";
  for (const auto& arm : arms) {
    out += arm.label;
    out += ",";
    out += arm.has_alpha ? format_double(arm.alpha) : std::string();
    out += "," + format_double(arm.mean_acc) + "\n";
  }
  return out;
}

inline std::string sweep_table_text(const std::vector<SweepArm>& arms) {
  std::string out = "arm        alpha      mean test acc\n";
  char buf[96];
  for (const auto& arm : arms) {
    if (arm.has_alpha) {
      std::snprintf(buf, sizeof(buf), "%-10s %-10.4g %.4f\n", arm.label.c_str(), arm.alpha,
                    arm.mean_acc);
    } else {
      std::snprintf(buf, sizeof(buf), "%-10s %-10s %.4f\n", arm.label.c_str(), "learnable",
                    arm.mean_acc);
    }
    out += buf;
  }
  return out;
}

}  // namespace gorqat
