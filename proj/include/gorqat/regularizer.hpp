#pragma once

// The two-scalar regularizer game: alpha_task and alpha_kd descend the
// gradient of the coupled objective
//   L = (alpha_task/alpha_kd) * L_task + (alpha_kd/alpha_task) * L_kd
// by plain gradient steps, evaluated simultaneously at the pre-update
// values and clipped to [clip_floor, +inf). Stationary points satisfy
// alpha_task^2 * L_task == alpha_kd^2 * L_kd.
//
// A single-scalar variant (static or learnable beta weighting
// (1-beta)*L_task + beta*L_kd) exists for the instability ablation.

#include <algorithm>
#include <cmath>
#include <string>

#include "gorqat/errors.hpp"

namespace gorqat {

struct GoRState {
  double alpha_task = 1.0;
  double alpha_kd = 1.0;
  double eta_alpha = 1e-3;
  double clip_floor = 1e-4;
  long step_count = 0;

  double weight_task() const { return alpha_task / alpha_kd; }
  double weight_kd() const { return alpha_kd / alpha_task; }
};

// Per-step byproducts for trajectory recording.
struct GorStepInfo {
  double grad_task = 0.0;
  double grad_kd = 0.0;
  bool clipped_task = false;
  bool clipped_kd = false;
  bool clipped() const { return clipped_task || clipped_kd; }
};

namespace detail {

inline void check_losses(double l_task, double l_kd, const char* where) {
  if (!std::isfinite(l_task) || !std::isfinite(l_kd)) {
    throw DivergenceError(std::string(where) + ": non-finite loss (L_task=" +
                          std::to_string(l_task) + ", L_kd=" + std::to_string(l_kd) + ")");
  }
  if (l_task < 0.0 || l_kd < 0.0) {
    throw ValueError(std::string(where) + ": losses must be non-negative");
  }
}

}  // namespace detail

// Closed-form scalar gradients of the coupled objective.
inline double gor_grad_task(double alpha_task, double alpha_kd, double l_task, double l_kd) {
  return l_task / alpha_kd - alpha_kd / (alpha_task * alpha_task) * l_kd;
}

inline double gor_grad_kd(double alpha_task, double alpha_kd, double l_task, double l_kd) {
  return l_kd / alpha_task - alpha_task / (alpha_kd * alpha_kd) * l_task;
}

// One simultaneous descent step on both scalars, then clip.
inline GoRState gor_step(const GoRState& state, double l_task, double l_kd,
                         GorStepInfo* info = nullptr) {
  detail::check_losses(l_task, l_kd, "gor_step");
  if (state.alpha_task <= 0.0 || state.alpha_kd <= 0.0) {
    throw StateError("gor_step: non-positive scalar (alpha_task=" +
                     std::to_string(state.alpha_task) + ", alpha_kd=" +
                     std::to_string(state.alpha_kd) + ")");
  }
  const double g_task = gor_grad_task(state.alpha_task, state.alpha_kd, l_task, l_kd);
  const double g_kd = gor_grad_kd(state.alpha_task, state.alpha_kd, l_task, l_kd);
  GoRState next = state;
  const double raw_task = state.alpha_task - state.eta_alpha * g_task;
  const double raw_kd = state.alpha_kd - state.eta_alpha * g_kd;
  next.alpha_task = std::max(raw_task, state.clip_floor);
  next.alpha_kd = std::max(raw_kd, state.clip_floor);
  next.step_count = state.step_count + 1;
  if (info != nullptr) {
    info->grad_task = g_task;
    info->grad_kd = g_kd;
    info->clipped_task = raw_task < state.clip_floor;
    info->clipped_kd = raw_kd < state.clip_floor;
  }
  return next;
}

// Normalized distance from the stationarity condition; 0 means exact
// equilibrium.
inline double equilibrium_residual(const GoRState& state, double l_task, double l_kd) {
  const double a = state.alpha_task * state.alpha_task * l_task;
  const double b = state.alpha_kd * state.alpha_kd * l_kd;
  return std::abs(a - b) / std::max({a, b, 1e-12});
}

// Single-scalar weighting (1-beta)*L_task + beta*L_kd. The learnable
// variant descends d/d(beta) = L_kd - L_task: with persistently unequal
// losses it has no interior stationary point and drifts monotonically,
// clipped at the floor only.
struct SingleScalarState {
  double beta = 0.5;
  bool learnable = false;
  double eta = 1e-3;
  double clip_floor = 1e-4;
  long step_count = 0;

  double weight_task() const { return 1.0 - beta; }
  double weight_kd() const { return beta; }
};

struct SingleScalarStepInfo {
  double grad = 0.0;
  bool clipped = false;
};

inline SingleScalarState single_scalar_step(const SingleScalarState& state, double l_task,
                                            double l_kd, SingleScalarStepInfo* info = nullptr) {
  detail::check_losses(l_task, l_kd, "single_scalar_step");
  SingleScalarState next = state;
  next.step_count = state.step_count + 1;
  double g = 0.0;
  bool clipped = false;
  if (state.learnable) {
    g = l_kd - l_task;
    const double raw = state.beta - state.eta * g;
    next.beta = std::max(raw, state.clip_floor);
    clipped = raw < state.clip_floor;
  }
  if (info != nullptr) {
    info->grad = g;
    info->clipped = clipped;
  }
  return next;
}

}  // namespace gorqat
