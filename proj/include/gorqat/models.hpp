#pragma once

// Small fully-connected teacher/student networks. Students may route their
// forward pass through fake quantization: weight ranges are recomputed from
// the current parameters on every pass, activation ranges run an EMA that
// becomes usable after a warm-up number of batches.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "gorqat/errors.hpp"
#include "gorqat/quantizer.hpp"
#include "gorqat/rng.hpp"
#include "gorqat/tensor.hpp"

namespace gorqat {

enum class Activation { relu, none };
enum class Role { teacher, student };

struct Layer {
  std::string name;
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  Activation act = Activation::none;
};

struct ModelParams {
  std::vector<Layer> layers;
  Role role = Role::student;
  bool frozen = false;

  std::size_t input_dim() const { return layers.front().weight.shape()[0]; }
  std::size_t output_dim() const { return layers.back().weight.shape()[1]; }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> ps;
    for (auto& l : layers) {
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.numel() + l.bias.numel();
    return n;
  }

  void freeze() {
    frozen = true;
    for (auto& l : layers) {
      l.weight.set_requires_grad(false);
      l.bias.set_requires_grad(false);
    }
  }
};

// Deterministic MLP: weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero
// biases, relu between layers, linear head.
inline ModelParams build_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed,
                             Role role = Role::student) {
  if (widths.size() < 2) {
    throw ValueError("build_mlp: need at least input and output widths");
  }
  for (std::size_t w : widths) {
    if (w == 0) throw ValueError("build_mlp: zero-width layer");
  }
  Rng rng(seed);
  ModelParams m;
  m.role = role;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i], fan_out = widths[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    Layer layer;
    layer.name = "fc" + std::to_string(i);
    layer.weight = Tensor::from({fan_in, fan_out}, std::move(w), true);
    layer.bias = Tensor::zeros({fan_out}, true);
    layer.act = (i + 2 < widths.size()) ? Activation::relu : Activation::none;
    m.layers.push_back(std::move(layer));
  }
  if (role == Role::teacher) m.freeze();
  return m;
}

struct TeacherEnsemble {
  std::vector<ModelParams> teachers;

  std::size_t size() const { return teachers.size(); }
  bool empty() const { return teachers.empty(); }

  // All teachers must emit the same class count.
  void validate() const {
    if (teachers.empty()) return;
    const std::size_t classes = teachers[0].output_dim();
    for (std::size_t i = 1; i < teachers.size(); ++i) {
      if (teachers[i].output_dim() != classes) {
        throw ConfigError("ensemble: teacher 0 emits " + std::to_string(classes) +
                          " classes but teacher " + std::to_string(i) + " emits " +
                          std::to_string(teachers[i].output_dim()));
      }
    }
  }
};

// Sentinel bit-width meaning "leave this tensor class unquantized".
inline constexpr int kFullPrecisionBits = 32;

// Quantization state of one model: a weight spec per layer plus a running
// spec per activation site (each layer's input). Layers can be exempted
// (first/last, for the usual edge-layer ablation); exempt layers keep
// full-precision weights and activations.
struct ModelQuant {
  int wbits = kFullPrecisionBits;
  int abits = kFullPrecisionBits;
  StePolicy ste = StePolicy::clipped;
  std::vector<QuantSpec> weight_specs;            // one per layer
  std::vector<QuantSpec> act_specs;               // one per layer
  std::vector<std::uint8_t> layer_enabled;        // 0 = exempt
  std::vector<const detail::TensorData*> owners;  // weight identity per layer

  bool quantizes_weights() const { return wbits != kFullPrecisionBits; }
  bool quantizes_acts() const { return abits != kFullPrecisionBits; }
  bool enabled(std::size_t layer) const {
    return layer < layer_enabled.size() && layer_enabled[layer] != 0;
  }

  void check_owner(const ModelParams& m) const {
    if (owners.size() != m.layers.size()) {
      throw StateError("quant views do not match the model (layer count)");
    }
    for (std::size_t i = 0; i < owners.size(); ++i) {
      if (owners[i] != m.layers[i].weight.impl().get()) {
        throw StateError("quant views belong to a different model (layer " + std::to_string(i) +
                         ")");
      }
    }
  }
};

inline ModelQuant quantize_model(const ModelParams& m, int wbits, int abits,
                                 StePolicy ste = StePolicy::clipped, double act_momentum = 0.9,
                                 int act_warmup_batches = 20, bool exempt_edge_layers = false) {
  if (wbits != kFullPrecisionBits) validate_bits(wbits);
  if (abits != kFullPrecisionBits) validate_bits(abits);
  ModelQuant q;
  q.wbits = wbits;
  q.abits = abits;
  q.ste = ste;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const Layer& layer = m.layers[i];
    const bool edge = i == 0 || i + 1 == m.layers.size();
    q.owners.push_back(layer.weight.impl().get());
    q.layer_enabled.push_back(exempt_edge_layers && edge ? 0 : 1);
    if (wbits != kFullPrecisionBits) {
      q.weight_specs.push_back(calibrate(make_weight_spec(wbits), layer.weight));
    }
    if (abits != kFullPrecisionBits) {
      q.act_specs.push_back(make_activation_spec(abits, act_momentum, act_warmup_batches));
    }
  }
  return q;
}

// Materialized dequantized weights under the current ranges.
inline std::vector<QuantizedView> quantized_views(const ModelParams& m, ModelQuant& q) {
  q.check_owner(m);
  std::vector<QuantizedView> views;
  if (!q.quantizes_weights()) return views;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!q.enabled(i)) continue;
    q.weight_specs[i] = calibrate(q.weight_specs[i], m.layers[i].weight);
    QuantizedView v;
    v.source = m.layers[i].weight;
    v.spec = q.weight_specs[i];
    v.values = fake_quant(m.layers[i].weight.detach(), q.weight_specs[i], q.ste);
    views.push_back(std::move(v));
  }
  return views;
}

// Affine -> activation chain. With quant state, weights and activations
// route through fake_quant. Weight ranges are always derived from the
// current parameters; only a `training` pass writes them (and the running
// activation EMAs) back, so evaluation never mutates shared quant state.
inline Tensor forward(const ModelParams& m, const Tensor& x, ModelQuant* quant = nullptr,
                      bool training = false) {
  if (x.shape().size() != 2 || x.shape()[1] != m.input_dim()) {
    throw ShapeError("forward: input " + detail::shape_str(x.shape()) + " does not match model (" +
                     std::to_string(m.input_dim()) + " features)");
  }
  if (quant != nullptr) quant->check_owner(m);
  Tensor h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const Layer& layer = m.layers[i];
    const bool layer_on = quant != nullptr && quant->enabled(i);
    if (layer_on && quant->quantizes_acts()) {
      QuantSpec spec = quant->act_specs[i];
      if (training) {
        spec = calibrate(spec, h);
        quant->act_specs[i] = spec;
      }
      if (spec.finalized()) h = fake_quant(h, spec, quant->ste);
    }
    Tensor w = layer.weight;
    if (layer_on && quant->quantizes_weights()) {
      QuantSpec wspec = calibrate(quant->weight_specs[i], layer.weight);
      if (training) quant->weight_specs[i] = wspec;
      w = fake_quant(layer.weight, wspec, quant->ste);
    }
    h = add(matmul(h, w), layer.bias);
    if (layer.act == Activation::relu) h = relu(h);
  }
  return h;
}

// Frozen-teacher bookkeeping: FNV-1a over the raw parameter bytes.
inline std::uint64_t params_checksum(const ModelParams& m) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const Tensor& t) {
    for (double v : t.values()) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 1099511628211ull;
      }
    }
  };
  for (const auto& l : m.layers) {
    mix(l.weight);
    mix(l.bias);
  }
  return h;
}

}  // namespace gorqat
