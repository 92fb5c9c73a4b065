#pragma once

// Uniform affine fake quantization with straight-through-estimator gradients.
//
// Forward: x_q = s * round(clip((x - x_min)/s, 0, 2^n - 1)) + x_min with
// s = (x_max - x_min)/(2^n - 1). Backward passes the incoming gradient
// through unchanged inside [x_min, x_max] and zeroes it outside (clipped
// STE); a pass-through policy that never zeroes is available for ablations.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gorqat/errors.hpp"
#include "gorqat/tensor.hpp"

namespace gorqat {

enum class RangeSource {
  per_tensor_minmax,  // weights: recomputed from the tensor itself
  running_minmax,     // activations: EMA of per-batch extrema
};

enum class StePolicy {
  clipped,      // gradient zeroed strictly outside [x_min, x_max]
  passthrough,  // gradient always passes (ablation)
};

struct QuantSpec {
  int bits = 8;  // 2..8
  RangeSource source = RangeSource::per_tensor_minmax;
  double momentum = 0.9;  // running_minmax only
  double x_min = 0.0;
  double x_max = 0.0;
  bool has_range = false;
  int calib_count = 0;       // batches observed (running_minmax)
  int warmup_batches = 20;   // running range usable after this many batches

  int levels() const { return (1 << bits) - 1; }

  double scale() const { return (x_max - x_min) / static_cast<double>(levels()); }

  bool degenerate() const { return x_max == x_min; }

  // True once the range may be used by fake_quant.
  bool finalized() const {
    if (!has_range) return false;
    if (source == RangeSource::running_minmax) return calib_count >= warmup_batches;
    return true;
  }
};

inline void validate_bits(int bits) {
  if (bits < 2 || bits > 8) {
    throw ValueError("quantizer: bit-width " + std::to_string(bits) + " outside {2..8}");
  }
}

inline QuantSpec make_weight_spec(int bits) {
  validate_bits(bits);
  QuantSpec s;
  s.bits = bits;
  s.source = RangeSource::per_tensor_minmax;
  return s;
}

inline QuantSpec make_activation_spec(int bits, double momentum = 0.9, int warmup_batches = 20) {
  validate_bits(bits);
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ValueError("quantizer: momentum " + std::to_string(momentum) + " outside [0, 1)");
  }
  QuantSpec s;
  s.bits = bits;
  s.source = RangeSource::running_minmax;
  s.momentum = momentum;
  s.warmup_batches = warmup_batches;
  return s;
}

// Observes one batch: per-tensor specs take its extrema outright, running
// specs fold them into the EMA. Returns the updated spec.
inline QuantSpec calibrate(QuantSpec spec, const Tensor& batch) {
  if (batch.numel() == 0) throw ValueError("calibrate: empty batch");
  double lo = batch.values()[0], hi = batch.values()[0];
  for (double v : batch.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (spec.source == RangeSource::per_tensor_minmax || !spec.has_range) {
    spec.x_min = lo;
    spec.x_max = hi;
  } else {
    spec.x_min = spec.momentum * spec.x_min + (1.0 - spec.momentum) * lo;
    spec.x_max = spec.momentum * spec.x_max + (1.0 - spec.momentum) * hi;
  }
  spec.has_range = true;
  if (spec.source == RangeSource::running_minmax) ++spec.calib_count;
  return spec;
}

namespace detail {

inline double fake_quant_value(double x, double x_min, double s, int levels) {
  double code = std::round((x - x_min) / s);
  if (code < 0.0) code = 0.0;
  if (code > static_cast<double>(levels)) code = static_cast<double>(levels);
  return s * code + x_min;
}

}  // namespace detail

// Round-trip quantize-dequantize as a tape node with STE backward.
inline Tensor fake_quant(const Tensor& x, const QuantSpec& spec,
                         StePolicy ste = StePolicy::clipped) {
  validate_bits(spec.bits);
  if (!spec.finalized()) {
    throw StateError("fake_quant: range not finalized (calibrated " +
                     std::to_string(spec.calib_count) + "/" +
                     std::to_string(spec.warmup_batches) + " warm-up batches)");
  }
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  std::vector<double> factor(n);
  if (spec.degenerate()) {
    // Constant tensors carry no quantization information: collapse to the
    // shared value and block the gradient (the output does not depend on
    // the input, whichever STE policy is active).
    for (std::size_t i = 0; i < n; ++i) out[i] = spec.x_min;
    std::fill(factor.begin(), factor.end(), 0.0);
  } else {
    const double s = spec.scale();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x.values()[i];
      out[i] = detail::fake_quant_value(v, spec.x_min, s, spec.levels());
      const bool inside = v >= spec.x_min && v <= spec.x_max;
      factor[i] = (ste == StePolicy::passthrough || inside) ? 1.0 : 0.0;
    }
  }
  return detail::unary_elementwise(x, std::move(out), std::move(factor));
}

// Integer codes for a tensor under a finalized spec (inspection/testing).
inline std::vector<std::int64_t> quant_codes(const Tensor& x, const QuantSpec& spec) {
  if (!spec.finalized()) throw StateError("quant_codes: range not finalized");
  std::vector<std::int64_t> codes(x.numel());
  if (spec.degenerate()) return codes;  // everything maps to code 0
  const double s = spec.scale();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double code = std::round((x.values()[i] - spec.x_min) / s);
    code = std::max(0.0, std::min(code, static_cast<double>(spec.levels())));
    codes[i] = static_cast<std::int64_t>(code);
  }
  return codes;
}

// Snapshot of one tensor routed through fake quantization.
struct QuantizedView {
  Tensor source;
  QuantSpec spec;
  Tensor values;  // dequantized theta_q
};

}  // namespace gorqat
