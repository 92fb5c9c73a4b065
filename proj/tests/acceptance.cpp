// Acceptance suite: each criterion prints one PASS/FAIL line with its
// measured runtime. Exit code 0 only if every criterion passes.
//
//  1. Gradient fidelity: scalar gradients of the coupled objective match
//     their closed forms to 1e-10; parameter gradients through fake-quant
//     match central finite differences to 1e-5 on a [2,8,2] student.
//  2. Equilibrium law: constant losses (4,1) from (1,1) at eta 1e-2
//     converge to residual <= 0.01 with alpha_kd/alpha_task = 2 +/- 1%.
//  3. Single-scalar instability: the learnable single-scalar ablation
//     drifts monotonically (or clips) while the pair converges.
//  4. Static-vs-learnable sweep on 4-bit blobs students.
//  5. Single-teacher ensemble run reproduces the pair run bit for bit.
//  6. Heterogeneous three-teacher ensemble is competitive with the best
//     single teacher.
//  7. Quantizer contract: round-trip bound, idempotence, monotonicity,
//     STE Jacobian.
//  8. Clip floor survives adversarial fuzzing.
//  9. Byte-identical CSV outputs for repeated seeded runs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "gorqat/dynamics.hpp"
#include "gorqat/losses.hpp"
#include "gorqat/models.hpp"
#include "gorqat/quantizer.hpp"
#include "gorqat/regularizer.hpp"
#include "gorqat/rng.hpp"
#include "gorqat/tensor.hpp"
#include "gorqat/trainer.hpp"

using namespace gorqat;

namespace {

// Relative error with an absolute floor: gradients below the floor are
// compared absolutely, which keeps central-difference cancellation noise
// (~1e-10 here) from dominating near-zero entries.
double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi, bool rg = false) {
  std::vector<double> v(detail::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), rg);
}

// Fixed quant spec padded around the tensor's values, then the tensor is
// snapped onto the grid with codes clamped to the interior (never the
// extreme codes, whose dequantized values can round an ulp past the range).
// After snapping, fake_quant is exactly the identity at the nominal point
// and every element sits strictly inside the range, so the
// quantization-free forward is the correct smooth surrogate for finite
// differences against the straight-through gradients.
QuantSpec snap_to_padded_grid(Tensor& w, int bits, double pad) {
  QuantSpec spec = make_weight_spec(bits);
  spec = calibrate(spec, w);
  spec.x_min -= pad;
  spec.x_max += pad;
  const double s = spec.scale();
  auto vals = w.values_mut();
  for (double& v : vals) {
    double code = std::round((v - spec.x_min) / s);
    code = std::max(1.0, std::min(code, static_cast<double>(spec.levels() - 1)));
    v = s * code + spec.x_min;
  }
  return spec;
}

// --- criterion 1 -----------------------------------------------------------

bool criterion_gradient_fidelity(std::string& detail) {
  Rng rng(1001);
  double worst_alpha = 0.0, worst_theta = 0.0;
  const int bit_choices[3] = {2, 4, 8};
  for (int config = 0; config < 100; ++config) {
    Tensor w1 = random_tensor(rng, {2, 8}, -0.8, 0.8, true);
    Tensor b1 = random_tensor(rng, {8}, -0.2, 0.2, true);
    Tensor w2 = random_tensor(rng, {8, 2}, -0.8, 0.8, true);
    Tensor b2 = random_tensor(rng, {2}, -0.2, 0.2, true);
    const QuantSpec s1 = snap_to_padded_grid(w1, bit_choices[config % 3], 0.25);
    const QuantSpec s2 = snap_to_padded_grid(w2, bit_choices[(config + 1) % 3], 0.25);

    const double at = rng.uniform(0.4, 2.5);
    const double ak = rng.uniform(0.4, 2.5);
    Tensor alpha_task = Tensor::scalar(at, true);
    Tensor alpha_kd = Tensor::scalar(ak, true);

    const Tensor x = random_tensor(rng, {4, 2}, -1.0, 1.0);
    const std::vector<int> targets{static_cast<int>(rng.below(2)),
                                   static_cast<int>(rng.below(2)),
                                   static_cast<int>(rng.below(2)),
                                   static_cast<int>(rng.below(2))};
    const Tensor teacher_logits = random_tensor(rng, {4, 2}, -2.0, 2.0);
    const double tau = rng.uniform(1.0, 5.0);

    auto losses = [&](const Tensor& z) {
      const Tensor l_task = cross_entropy(z, targets);
      const Tensor l_kd =
          mul(kl_div(softmax(teacher_logits, tau), softmax(z, tau)), tau * tau);
      return std::pair{l_task, l_kd};
    };
    auto quantized_loss = [&]() {
      const Tensor h = relu(add(matmul(x, fake_quant(w1, s1)), b1));
      const Tensor z = add(matmul(h, fake_quant(w2, s2)), b2);
      auto [l_task, l_kd] = losses(z);
      return gor_joint(l_task, l_kd, alpha_task, alpha_kd);
    };
    auto surrogate_loss = [&]() {
      const Tensor h = relu(add(matmul(x, w1), b1));
      const Tensor z = add(matmul(h, w2), b2);
      auto [l_task, l_kd] = losses(z);
      return gor_joint(l_task, l_kd, alpha_task, alpha_kd);
    };

    double lt = 0.0, lk = 0.0;
    Tape tape;
    {
      Tape::Scope scope(tape);
      const Tensor h = relu(add(matmul(x, fake_quant(w1, s1)), b1));
      const Tensor z = add(matmul(h, fake_quant(w2, s2)), b2);
      auto [l_task, l_kd] = losses(z);
      lt = l_task.value();
      lk = l_kd.value();
      backward(gor_joint(l_task, l_kd, alpha_task, alpha_kd));
    }

    worst_alpha = std::max(
        worst_alpha, rel_err(alpha_task.grad_value(), gor_grad_task(at, ak, lt, lk), 1e-12));
    worst_alpha = std::max(
        worst_alpha, rel_err(alpha_kd.grad_value(), gor_grad_kd(at, ak, lt, lk), 1e-12));

    const double quantized = quantized_loss().value();
    const double smooth = surrogate_loss().value();
    if (quantized != smooth) {
      detail = "snapped forward diverged from surrogate";
      return false;
    }

    for (Tensor* p : {&w1, &b1, &w2, &b2}) {
      auto vals = p->values_mut();
      auto grad = p->grad();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        const double h = 1e-5;
        vals[i] = orig + h;
        const double up = surrogate_loss().value();
        vals[i] = orig - h;
        const double down = surrogate_loss().value();
        vals[i] = orig;
        worst_theta = std::max(worst_theta, rel_err(grad[i], (up - down) / (2.0 * h)));
      }
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "100 configs; worst scalar-grad rel err %.2e (<=1e-10), worst theta rel err "
                "%.2e (<=1e-5)",
                worst_alpha, worst_theta);
  detail = buf;
  return worst_alpha <= 1e-10 && worst_theta <= 1e-5;
}

// --- criteria 2 and 3 ------------------------------------------------------

bool criterion_equilibrium_law(std::string& detail) {
  GoRState init;
  init.eta_alpha = 1e-2;
  const Trajectory t = simulate(init, LossScript::constant(4.0, 1.0), 10000);
  const auto& last = t.final_row();
  const double ratio = last.alpha_kd / last.alpha_task;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "residual %.3e (<=0.01), ratio %.4f (2 +/- 1%%)",
                last.eq_residual, ratio);
  detail = buf;
  return last.eq_residual <= 0.01 && std::abs(ratio - 2.0) <= 0.02;
}

bool criterion_single_scalar_instability(std::string& detail) {
  GoRState init;
  init.eta_alpha = 1e-2;
  const LossScript script = LossScript::constant(4.0, 1.0);

  const Trajectory single = simulate(init, script, 10000, DynamicsVariant::single_scalar);
  bool clipped = false;
  bool strictly_increasing = true;
  for (std::size_t i = 1; i < single.rows.size(); ++i) {
    clipped = clipped || single.rows[i].clipped;
    strictly_increasing =
        strictly_increasing && single.rows[i].alpha_task > single.rows[i - 1].alpha_task;
  }
  const Trajectory pair = simulate(init, script, 10000, DynamicsVariant::gor);

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "single scalar: %s (final %.2f); pair residual %.3e (<=0.01)",
                clipped ? "clipped" : (strictly_increasing ? "strictly increasing" : "NEITHER"),
                single.final_row().alpha_task, pair.final_row().eq_residual);
  detail = buf;
  return (clipped || strictly_increasing) && pair.final_row().eq_residual <= 0.01;
}

// --- criteria 4, 5, 6 ------------------------------------------------------

Dataset acceptance_data() { return make_blobs(2, 2000, 0.4, 7); }

TeacherEnsemble train_teacher(const Dataset& data, std::vector<std::size_t> widths,
                              std::uint64_t seed) {
  TrainConfig cfg;
  cfg.student_widths = std::move(widths);
  cfg.mode = TrainMode::qat_only;
  cfg.wbits = kFullPrecisionBits;
  cfg.abits = kFullPrecisionBits;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.seed = seed;
  TrainResult r = train(cfg, data, {});
  r.student.role = Role::teacher;
  r.student.freeze();
  TeacherEnsemble e;
  e.teachers.push_back(std::move(r.student));
  return e;
}

TrainConfig student_cfg(TrainMode mode, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.student_widths = {2, 16, 2};
  cfg.mode = mode;
  cfg.wbits = 4;
  cfg.abits = 4;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.seed = seed;
  return cfg;
}

const std::vector<std::uint64_t> kSweepSeeds{1, 2, 3, 4, 5};

bool criterion_static_sweep(std::string& detail) {
  const Dataset data = acceptance_data();
  const TeacherEnsemble teacher = train_teacher(data, {2, 64, 64, 2}, 1);
  const double teacher_acc =
      evaluate(const_cast<ModelParams&>(teacher.teachers[0]), data.test);
  if (teacher_acc < 0.97) {
    detail = "teacher accuracy " + std::to_string(teacher_acc) + " < 0.97";
    return false;
  }

  const auto arms = static_sweep(student_cfg(TrainMode::qat_kd_static, 1), data, teacher,
                                 {0.0, 0.25, 0.5, 0.75, 1.0}, kSweepSeeds);
  double best_static = 0.0, gor_mean = 0.0;
  std::string means;
  for (const auto& arm : arms) {
    if (arm.has_alpha) {
      best_static = std::max(best_static, arm.mean_acc);
    } else {
      gor_mean = arm.mean_acc;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%s=%.4f",
                  means.empty() ? "" : " ", arm.has_alpha
                      ? ("a" + std::to_string(arm.alpha).substr(0, 4)).c_str()
                      : "gor",
                  arm.mean_acc);
    means += buf;
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "teacher %.4f; %s; learnable %.4f >= best static %.4f - 0.005", teacher_acc,
                means.c_str(), gor_mean, best_static);
  detail = buf;
  return gor_mean >= best_static - 0.005;
}

bool criterion_ekd_reduction(std::string& detail) {
  const Dataset data = acceptance_data();
  const TeacherEnsemble teacher = train_teacher(data, {2, 64, 64, 2}, 1);
  const TrainResult kd = train(student_cfg(TrainMode::qat_kd_gor, 1), data, teacher);
  const TrainResult ekd = train(student_cfg(TrainMode::qat_ekd_gor, 1), data, teacher);
  const bool equal = metrics_csv(kd.metrics) == metrics_csv(ekd.metrics);
  detail = equal ? "single-teacher ensemble metrics stream is byte-identical"
                 : "metric streams differ";
  return equal;
}

bool criterion_ensemble_sanity(std::string& detail) {
  const Dataset data = acceptance_data();
  std::vector<TeacherEnsemble> singles;
  singles.push_back(train_teacher(data, {2, 32, 32, 2}, 11));
  singles.push_back(train_teacher(data, {2, 64, 64, 2}, 12));
  singles.push_back(train_teacher(data, {2, 128, 128, 2}, 13));

  TeacherEnsemble trio;
  for (const auto& s : singles) trio.teachers.push_back(s.teachers[0]);

  auto arm_mean = [&](TrainMode mode, const TeacherEnsemble& teachers) {
    double total = 0.0;
    for (std::uint64_t seed : kSweepSeeds) {
      total += train(student_cfg(mode, seed), data, teachers).final_test_acc;
    }
    return total / static_cast<double>(kSweepSeeds.size());
  };

  double best_single = 0.0;
  std::string means;
  for (std::size_t i = 0; i < singles.size(); ++i) {
    const double mean = arm_mean(TrainMode::qat_kd_gor, singles[i]);
    best_single = std::max(best_single, mean);
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%sT%zu=%.4f", means.empty() ? "" : " ", i, mean);
    means += buf;
  }
  const double ensemble_mean = arm_mean(TrainMode::qat_ekd_gor, trio);

  char buf[224];
  std::snprintf(buf, sizeof(buf), "%s; ensemble %.4f >= best single %.4f - 0.005",
                means.c_str(), ensemble_mean, best_single);
  detail = buf;
  return ensemble_mean >= best_single - 0.005;
}

// --- criterion 7 ------------------------------------------------------------

bool criterion_quantizer_contract(std::string& detail) {
  Rng rng(4242);
  for (int bits : {2, 4, 8}) {
    QuantSpec spec = make_weight_spec(bits);
    spec.x_min = -1.3;
    spec.x_max = 2.1;
    spec.has_range = true;
    const double s = spec.scale();
    double prev_x = -10.0, prev_q = -10.0;
    for (int i = 0; i < 1000000; ++i) {
      const double x = rng.uniform(-3.0, 4.0);
      const double q = detail::fake_quant_value(x, spec.x_min, s, spec.levels());
      if (x >= spec.x_min && x <= spec.x_max && std::abs(x - q) > s / 2.0 + 1e-12) {
        detail = "round-trip bound violated";
        return false;
      }
      if (detail::fake_quant_value(q, spec.x_min, s, spec.levels()) != q) {
        detail = "idempotence violated";
        return false;
      }
      if (x >= prev_x && q < prev_q) {
        detail = "monotonicity violated";
        return false;
      }
      if (x >= prev_x) {
        prev_x = x;
        prev_q = q;
      }
      if (q < spec.x_min || q > spec.x_min + s * spec.levels() + 1e-12) {
        detail = "dequantized value outside the representable range";
        return false;
      }
    }

    // STE Jacobian through the tape on 10^4 points.
    std::vector<double> xs(10000);
    for (double& v : xs) v = rng.uniform(-3.0, 4.0);
    xs[0] = spec.x_min;  // boundary points pass gradient through
    xs[1] = spec.x_max;
    Tensor x = Tensor::from({xs.size()}, xs, true);
    Tape tape;
    {
      Tape::Scope scope(tape);
      backward(sum(fake_quant(x, spec)));
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const bool inside = xs[i] >= spec.x_min && xs[i] <= spec.x_max;
      if (x.grad()[i] != (inside ? 1.0 : 0.0)) {
        detail = "STE Jacobian mismatch at n=" + std::to_string(bits);
        return false;
      }
    }
  }
  detail = "3e6 round-trip/idempotence/monotonicity points, 3e4 STE Jacobian points";
  return true;
}

// --- criterion 8 ------------------------------------------------------------

bool criterion_clip_floor(std::string& detail) {
  Rng rng(888);
  GoRState s;
  s.eta_alpha = 1e-2;
  double min_seen = 1.0;
  for (int i = 0; i < 100000; ++i) {
    const double scale = std::pow(10.0, rng.uniform(-8.0, 8.0));
    const double l_task = rng.uniform() < 0.1 ? 0.0 : scale * rng.uniform();
    const double l_kd = rng.uniform() < 0.1 ? 0.0 : scale * rng.uniform();
    s = gor_step(s, l_task, l_kd);
    min_seen = std::min(min_seen, std::min(s.alpha_task, s.alpha_kd));
    if (s.alpha_task < 1e-4 || s.alpha_kd < 1e-4) {
      detail = "scalar fell below the floor at step " + std::to_string(i);
      return false;
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "1e5 adversarial steps, minimum scalar %.6g >= 1e-4",
                min_seen);
  detail = buf;
  return true;
}

// --- criterion 9 ------------------------------------------------------------

bool criterion_determinism(std::string& detail) {
  const Dataset data = make_blobs(2, 400, 0.4, 7);
  const TeacherEnsemble teacher = train_teacher(data, {2, 32, 32, 2}, 3);

  TrainConfig cfg = student_cfg(TrainMode::qat_kd_gor, 1);
  cfg.epochs = 4;
  const std::string train_a = metrics_csv(train(cfg, data, teacher).metrics);
  const std::string train_b = metrics_csv(train(cfg, data, teacher).metrics);
  if (train_a != train_b) {
    detail = "train metrics differ between identical runs";
    return false;
  }

  GoRState init;
  init.eta_alpha = 1e-2;
  const LossScript noisy = LossScript::noisy(2.0, 1.0, 0.5, 99);
  const std::string dyn_a = trajectory_csv(simulate(init, noisy, 5000));
  const std::string dyn_b = trajectory_csv(simulate(init, noisy, 5000));
  if (dyn_a != dyn_b) {
    detail = "dynamics trajectories differ between identical runs";
    return false;
  }

  TrainConfig sweep_cfg = cfg;
  sweep_cfg.epochs = 2;
  const auto arms_a = static_sweep(sweep_cfg, data, teacher, {0.0, 1.0}, {1, 2});
  const auto arms_b = static_sweep(sweep_cfg, data, teacher, {0.0, 1.0}, {1, 2});
  if (sweep_csv(arms_a, {1, 2}) != sweep_csv(arms_b, {1, 2})) {
    detail = "sweep tables differ between identical runs";
    return false;
  }
  detail = "train, dynamics and sweep CSV outputs byte-identical across repeats";
  return true;
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<bool(std::string&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", 30.0, criterion_gradient_fidelity},
      {2, "equilibrium law", 5.0, criterion_equilibrium_law},
      {3, "single-scalar instability", 5.0, criterion_single_scalar_instability},
      {4, "static-vs-learnable sweep", 1800.0, criterion_static_sweep},
      {5, "ensemble reduction at n=1", 60.0, criterion_ekd_reduction},
      {6, "heterogeneous ensemble sanity", 600.0, criterion_ensemble_sanity},
      {7, "quantizer contract", 30.0, criterion_quantizer_contract},
      {8, "clip floor", 10.0, criterion_clip_floor},
      {9, "determinism", 120.0, criterion_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed > c.limit_s) {
      ok = false;
      detail += " [over time budget]";
    }
    std::printf("%s criterion %d (%s): %s [%.1fs <= %.0fs]\n", ok ? "PASS" : "FAIL", c.id,
                c.name, detail.c_str(), elapsed, c.limit_s);
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
