#pragma once

// Isolated simulator for the two-scalar game: evolves the regularizer
// state under constant, scripted, or noisy loss signals using the exact
// step functions from regularizer.hpp, so simulated trajectories certify
// the code path the trainer runs.

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "gorqat/errors.hpp"
#include "gorqat/metrics.hpp"
#include "gorqat/regularizer.hpp"
#include "gorqat/rng.hpp"

namespace gorqat {

struct LossScript {
  enum class Kind { constant, piecewise, noisy };

  struct Piece {
    long step;
    double l_task;
    double l_kd;
  };

  Kind kind = Kind::constant;
  double l_task = 1.0;
  double l_kd = 1.0;
  std::vector<Piece> pieces;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;

  static LossScript constant(double l_task, double l_kd) {
    if (l_task < 0.0 || l_kd < 0.0) throw ValueError("loss script: losses must be >= 0");
    LossScript s;
    s.kind = Kind::constant;
    s.l_task = l_task;
    s.l_kd = l_kd;
    return s;
  }

  static LossScript piecewise(std::vector<Piece> pieces) {
    if (pieces.empty()) throw ValueError("loss script: empty piecewise script");
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (pieces[i].l_task < 0.0 || pieces[i].l_kd < 0.0) {
        throw ValueError("loss script: losses must be >= 0");
      }
      if (i > 0 && pieces[i].step <= pieces[i - 1].step) {
        throw ValueError("loss script: piecewise steps must be strictly increasing");
      }
    }
    LossScript s;
    s.kind = Kind::piecewise;
    s.pieces = std::move(pieces);
    return s;
  }

  static LossScript noisy(double base_task, double base_kd, double sigma, std::uint64_t seed) {
    if (base_task < 0.0 || base_kd < 0.0) throw ValueError("loss script: losses must be >= 0");
    if (sigma < 0.0) throw ValueError("loss script: sigma must be >= 0");
    LossScript s;
    s.kind = Kind::noisy;
    s.l_task = base_task;
    s.l_kd = base_kd;
    s.noise_sigma = sigma;
    s.noise_seed = seed;
    return s;
  }
};

// Stateful evaluation: noisy scripts draw per-step truncated-at-zero
// Gaussian perturbations from their own deterministic stream.
class LossScriptPlayer {
 public:
  explicit LossScriptPlayer(const LossScript& script)
      : script_(script), rng_(script.noise_seed) {}

  std::pair<double, double> at(long step) {
    switch (script_.kind) {
      case LossScript::Kind::constant:
        return {script_.l_task, script_.l_kd};
      case LossScript::Kind::piecewise: {
        double lt = script_.pieces.front().l_task;
        double lk = script_.pieces.front().l_kd;
        for (const auto& p : script_.pieces) {
          if (p.step > step) break;
          lt = p.l_task;
          lk = p.l_kd;
        }
        return {lt, lk};
      }
      case LossScript::Kind::noisy: {
        const double lt = std::max(0.0, script_.l_task + script_.noise_sigma * rng_.gaussian());
        const double lk = std::max(0.0, script_.l_kd + script_.noise_sigma * rng_.gaussian());
        return {lt, lk};
      }
    }
    return {script_.l_task, script_.l_kd};
  }

 private:
  LossScript script_;
  Rng rng_;
};

enum class DynamicsVariant { gor, single_scalar };

struct TrajectoryRow {
  long step = 0;
  double alpha_task = 0.0;
  double alpha_kd = 0.0;
  double grad_task = 0.0;
  double grad_kd = 0.0;
  double eq_residual = 0.0;
  bool clipped = false;
};

struct Trajectory {
  DynamicsVariant variant = DynamicsVariant::gor;
  std::vector<TrajectoryRow> rows;  // rows[0] is the initial state

  const TrajectoryRow& final_row() const { return rows.back(); }
};

// For the single-scalar variant alpha_task carries beta and alpha_kd its
// complementary weight 1-beta; the residual column generalizes to the
// normalized stationarity gap |d/d(beta)| / max(L_task, L_kd).
inline Trajectory simulate(const GoRState& initial, const LossScript& script, long steps,
                           DynamicsVariant variant = DynamicsVariant::gor,
                           const SingleScalarState* single_initial = nullptr) {
  if (steps < 1) throw ValueError("simulate: steps must be >= 1");
  Trajectory traj;
  traj.variant = variant;
  LossScriptPlayer player(script);

  if (variant == DynamicsVariant::gor) {
    GoRState state = initial;
    {
      auto [lt, lk] = player.at(0);
      traj.rows.push_back({0, state.alpha_task, state.alpha_kd, 0.0, 0.0,
                           equilibrium_residual(state, lt, lk), false});
      GorStepInfo info;
      state = gor_step(state, lt, lk, &info);
      traj.rows.push_back({1, state.alpha_task, state.alpha_kd, info.grad_task, info.grad_kd,
                           equilibrium_residual(state, lt, lk), info.clipped()});
    }
    for (long s = 2; s <= steps; ++s) {
      auto [lt, lk] = player.at(s - 1);
      GorStepInfo info;
      state = gor_step(state, lt, lk, &info);
      traj.rows.push_back({s, state.alpha_task, state.alpha_kd, info.grad_task, info.grad_kd,
                           equilibrium_residual(state, lt, lk), info.clipped()});
    }
    return traj;
  }

  SingleScalarState state;
  if (single_initial != nullptr) {
    state = *single_initial;
  } else {
    state.learnable = true;
    state.eta = initial.eta_alpha;
    state.clip_floor = initial.clip_floor;
  }
  auto residual = [](const SingleScalarState& s, double lt, double lk) {
    const double g = s.learnable ? lk - lt : 0.0;
    return std::abs(g) / std::max({lt, lk, 1e-12});
  };
  {
    auto [lt, lk] = player.at(0);
    traj.rows.push_back(
        {0, state.beta, state.weight_task(), 0.0, 0.0, residual(state, lt, lk), false});
    SingleScalarStepInfo info;
    state = single_scalar_step(state, lt, lk, &info);
    traj.rows.push_back({1, state.beta, state.weight_task(), info.grad, 0.0,
                         residual(state, lt, lk), info.clipped});
  }
  for (long s = 2; s <= steps; ++s) {
    auto [lt, lk] = player.at(s - 1);
    SingleScalarStepInfo info;
    state = single_scalar_step(state, lt, lk, &info);
    traj.rows.push_back({s, state.beta, state.weight_task(), info.grad, 0.0,
                         residual(state, lt, lk), info.clipped});
  }
  return traj;
}

inline std::string trajectory_csv(const Trajectory& traj) {
  std::string out = "step,alpha_task,alpha_kd,grad_task,grad_kd,eq_residual,clipped\n";
  for (const auto& r : traj.rows) {
    out += std::to_string(r.step);
    for (double v : {r.alpha_task, r.alpha_kd, r.grad_task, r.grad_kd, r.eq_residual}) {
      out += ",";
      out += format_double(v);
    }
    out += r.clipped ? ",1\n" : ",0\n";
  }
  return out;
}

struct BasinCell {
  double init_alpha_task = 0.0;
  double init_alpha_kd = 0.0;
  double final_alpha_task = 0.0;
  double final_alpha_kd = 0.0;
  double final_residual = 0.0;
};

// Runs the flow from every grid point and records the converged residual.
// Cells are independent; with jobs > 1 they run on a worker pool without
// changing the output order.
inline std::vector<BasinCell> basin_scan(const std::vector<std::pair<double, double>>& grid,
                                         const LossScript& script, long steps,
                                         const GoRState& proto, int jobs = 1) {
  if (grid.empty()) throw ValueError("basin_scan: empty grid");
  for (const auto& [at, ak] : grid) {
    if (at < proto.clip_floor || ak < proto.clip_floor) {
      throw ValueError("basin_scan: initial scalars must be above the clip floor");
    }
  }
  std::vector<BasinCell> cells(grid.size());
  auto run_cell = [&](std::size_t i) {
    GoRState init = proto;
    init.alpha_task = grid[i].first;
    init.alpha_kd = grid[i].second;
    const Trajectory t = simulate(init, script, steps, DynamicsVariant::gor);
    const TrajectoryRow& last = t.final_row();
    cells[i] = {grid[i].first, grid[i].second, last.alpha_task, last.alpha_kd, last.eq_residual};
  };
  if (jobs <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min<int>(jobs, static_cast<int>(grid.size()));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= grid.size()) return;
          run_cell(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  return cells;
}

// Log-spaced square grid over [lo, hi]^2.
inline std::vector<std::pair<double, double>> log_grid(double lo, double hi, int cells_per_axis) {
  if (lo <= 0.0 || hi <= lo) throw ValueError("log_grid: need 0 < lo < hi");
  if (cells_per_axis < 1) throw ValueError("log_grid: need at least one cell per axis");
  std::vector<double> axis;
  if (cells_per_axis == 1) {
    axis.push_back(lo);
  } else {
    const double ratio = std::log(hi / lo) / static_cast<double>(cells_per_axis - 1);
    for (int i = 0; i < cells_per_axis; ++i) axis.push_back(lo * std::exp(ratio * i));
  }
  std::vector<std::pair<double, double>> grid;
  for (double a : axis)
    for (double b : axis) grid.emplace_back(a, b);
  return grid;
}

inline std::string basin_csv(const std::vector<BasinCell>& cells) {
  std::string out =
      "init_alpha_task,init_alpha_kd,final_alpha_task,final_alpha_kd,final_residual\n";
  for (const auto& c : cells) {
    bool first = true;
    for (double v : {c.init_alpha_task, c.init_alpha_kd, c.final_alpha_task, c.final_alpha_kd,
                     c.final_residual}) {
      if (!first) out += ",";
      out += format_double(v);
      first = false;
    }
    out += "\n";
  }
  return out;
}

}  // namespace gorqat
