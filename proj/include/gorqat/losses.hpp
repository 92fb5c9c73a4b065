#pragma once

// Loss compositions: task loss, single- and ensemble-teacher distillation,
// static weighting, and the coupled two-scalar objective. All of them build
// on the tape so gradients flow into whatever inputs participate.

#include <cmath>
#include <string>
#include <vector>

#include "gorqat/errors.hpp"
#include "gorqat/regularizer.hpp"
#include "gorqat/tensor.hpp"

namespace gorqat {

enum class KdDistance {
  kl_on_softmax,  // KL between temperature-scaled softmax outputs
  mse_on_logits,
};

struct KDConfig {
  double temperature = 4.0;
  KdDistance distance = KdDistance::kl_on_softmax;
  // Multiply the KL term by temperature^2 so its gradient magnitude stays
  // temperature-invariant in the soft limit.
  bool temperature_scaling_correction = true;
};

struct StaticWeightConfig {
  double alpha = 0.5;  // in [0, 1]
};

// Per-step scalar snapshot for metrics and divergence checks.
struct LossBundle {
  double l_task = 0.0;
  double l_kd = 0.0;
  double l_total = 0.0;
  double w_task = 1.0;
  double w_kd = 0.0;

  bool finite() const {
    return std::isfinite(l_task) && std::isfinite(l_kd) && std::isfinite(l_total) &&
           std::isfinite(w_task) && std::isfinite(w_kd);
  }
};

inline Tensor task_loss(const Tensor& student_logits, const std::vector<int>& targets) {
  return cross_entropy(student_logits, targets);
}

inline Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      const KDConfig& cfg) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("kd_loss: student " + detail::shape_str(student_logits.shape()) +
                     " vs teacher " + detail::shape_str(teacher_logits.shape()));
  }
  if (cfg.temperature <= 0.0) {
    throw ValueError("kd_loss: temperature must be positive");
  }
  const Tensor teacher = teacher_logits.detach();
  if (cfg.distance == KdDistance::mse_on_logits) {
    return mse(student_logits, teacher);
  }
  const Tensor p_teacher = softmax(teacher, cfg.temperature);
  const Tensor p_student = softmax(student_logits, cfg.temperature);
  Tensor kl = kl_div(p_teacher, p_student);
  if (cfg.temperature_scaling_correction) {
    kl = mul(kl, cfg.temperature * cfg.temperature);
  }
  return kl;
}

inline Tensor static_joint(const Tensor& l_task, const Tensor& l_kd,
                           const StaticWeightConfig& cfg) {
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0) {
    throw ValueError("static_joint: alpha " + std::to_string(cfg.alpha) + " outside [0, 1]");
  }
  return add(mul(l_task, 1.0 - cfg.alpha), mul(l_kd, cfg.alpha));
}

// Coupled objective with the scalars as tape tensors: backward() yields the
// scalar gradients alongside everything upstream of the losses.
inline Tensor gor_joint(const Tensor& l_task, const Tensor& l_kd, const Tensor& alpha_task,
                        const Tensor& alpha_kd) {
  if (alpha_task.numel() != 1 || alpha_kd.numel() != 1) {
    throw ShapeError("gor_joint: regularizer scalars must be scalar tensors");
  }
  if (alpha_task.value() <= 0.0 || alpha_kd.value() <= 0.0) {
    throw StateError("gor_joint: non-positive regularizer scalar (alpha_task=" +
                     std::to_string(alpha_task.value()) + ", alpha_kd=" +
                     std::to_string(alpha_kd.value()) + ")");
  }
  const Tensor w_task = div(alpha_task, alpha_kd);
  const Tensor w_kd = div(alpha_kd, alpha_task);
  return add(mul(w_task, l_task), mul(w_kd, l_kd));
}

// State form: the scalars enter as constants, so backward() yields the
// theta-gradients while the scalar updates stay with gor_step.
inline Tensor gor_joint(const Tensor& l_task, const Tensor& l_kd, const GoRState& state) {
  if (state.alpha_task <= 0.0 || state.alpha_kd <= 0.0) {
    throw StateError("gor_joint: non-positive regularizer scalar (alpha_task=" +
                     std::to_string(state.alpha_task) + ", alpha_kd=" +
                     std::to_string(state.alpha_kd) + ")");
  }
  return add(mul(l_task, state.weight_task()), mul(l_kd, state.weight_kd()));
}

// Element-wise mean of the teachers' logits, detached.
inline Tensor ensemble_logits(const std::vector<Tensor>& teacher_logits) {
  if (teacher_logits.empty()) {
    throw ValueError("ensemble_logits: empty teacher list");
  }
  const Shape& shape = teacher_logits[0].shape();
  for (std::size_t t = 1; t < teacher_logits.size(); ++t) {
    if (teacher_logits[t].shape() != shape) {
      throw ShapeError("ensemble_logits: teacher 0 is " + detail::shape_str(shape) +
                       " but teacher " + std::to_string(t) + " is " +
                       detail::shape_str(teacher_logits[t].shape()));
    }
  }
  std::vector<double> acc(teacher_logits[0].values().begin(), teacher_logits[0].values().end());
  for (std::size_t t = 1; t < teacher_logits.size(); ++t) {
    const auto vals = teacher_logits[t].values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += vals[i];
  }
  const double n = static_cast<double>(teacher_logits.size());
  for (double& v : acc) v /= n;
  return Tensor::from(shape, std::move(acc));
}

inline Tensor ekd_loss(const Tensor& student_logits, const Tensor& ensemble,
                       const KDConfig& cfg) {
  return kd_loss(student_logits, ensemble, cfg);
}

inline Tensor gor_ekd_joint(const Tensor& l_task, const Tensor& l_ekd, const Tensor& alpha_task,
                            const Tensor& alpha_kd) {
  return gor_joint(l_task, l_ekd, alpha_task, alpha_kd);
}

inline Tensor gor_ekd_joint(const Tensor& l_task, const Tensor& l_ekd, const GoRState& state) {
  return gor_joint(l_task, l_ekd, state);
}

}  // namespace gorqat
