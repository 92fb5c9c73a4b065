#pragma once

// Dense double-precision tensors with a minimal reverse-mode tape.
//
// The primitive set is deliberately small: matmul, add, mul, div, relu,
// softmax, log, mean, sum, reshape, cross_entropy, kl_div, mse, plus one
// custom elementwise hook used by the fake-quantization node. Ops record
// onto the thread-local active tape (Tape::Scope) whenever an input
// requires gradients; backward() replays the tape in reverse insertion
// order exactly once.
//
// Contract: tensor data must not be mutated between recording an op and
// calling backward(); training loops build a fresh tape per step and apply
// parameter updates only after backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gorqat/errors.hpp"

namespace gorqat {

using Shape = std::vector<std::size_t>;

class Tape;

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  Tape* producer = nullptr;  // tape that recorded the op producing this tensor

  std::size_t numel() const { return data.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace detail

class Tensor {
 public:
  Tensor() : d_(std::make_shared<detail::TensorData>()) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (detail::shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                       detail::shape_str(shape));
    }
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->data = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = detail::shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = detail::shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  const Shape& shape() const { return d_->shape; }
  std::size_t numel() const { return d_->numel(); }

  std::span<const double> values() const { return d_->data; }
  std::span<double> values_mut() { return d_->data; }

  // Scalar extraction; shape error otherwise.
  double value() const {
    if (numel() != 1) {
      throw ShapeError("value(): tensor " + detail::shape_str(shape()) + " is not a scalar");
    }
    return d_->data[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->grad.empty(); }

  std::span<const double> grad() const {
    if (!has_grad()) throw StateError("grad(): no gradient has been accumulated");
    return d_->grad;
  }

  double grad_value() const {
    if (numel() != 1) throw ShapeError("grad_value(): not a scalar");
    return grad()[0];
  }

  void zero_grad() {
    if (has_grad()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  // Same values, no gradient participation. Leaves that already do not
  // participate are returned as-is.
  Tensor detach() const {
    if (!d_->requires_grad && d_->producer == nullptr) return *this;
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->data = d_->data;
    return t;
  }

  // Deep copy (values only).
  Tensor clone() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->data = d_->data;
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  std::shared_ptr<detail::TensorData> impl() const { return d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

// Ordered record of primitive ops. Nodes are appended in execution order,
// which makes the record topologically sorted by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { clear(); }

  // Activates a tape for the current thread for the scope's lifetime.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_; }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    for (auto& n : nodes_) n.out->producer = nullptr;
    nodes_.clear();
  }

  void record(const std::shared_ptr<detail::TensorData>& out, std::function<void()> fn) {
    out->producer = this;
    nodes_.push_back({out, std::move(fn)});
  }

  // Reverse sweep from a scalar loss recorded on this tape. Grads of node
  // outputs are reset first, so leaf gradients accumulate across repeated
  // calls while intermediate gradients stay consistent within one sweep.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
      throw ShapeError("backward: loss has shape " + detail::shape_str(loss.shape()) +
                       ", expected a scalar");
    }
    if (loss.impl()->producer != this) {
      throw StateError("backward: loss was not produced on this tape");
    }
    for (auto& n : nodes_) {
      n.out->ensure_grad();
      std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0);
    }
    loss.impl()->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

 private:
  struct Node {
    std::shared_ptr<detail::TensorData> out;
    std::function<void()> fn;
  };

  std::vector<Node> nodes_;
  inline static thread_local Tape* active_ = nullptr;
};

// Backward through the tape that produced `loss`.
inline void backward(const Tensor& loss) {
  Tape* t = loss.impl()->producer;
  if (t == nullptr) {
    throw StateError("backward: loss was not produced on an active tape");
  }
  t->backward(loss);
}

namespace detail {

inline bool grads_wanted(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline Tensor make_result(Shape shape, std::vector<double> values, bool track) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  out.set_requires_grad(track);
  return out;
}

// Accumulates `src` into the gradient of `dst` if it participates.
inline void accumulate(const std::shared_ptr<TensorData>& dst, const double* src) {
  if (!dst->requires_grad) return;
  dst->ensure_grad();
  double* g = dst->grad.data();
  const std::size_t n = dst->numel();
  for (std::size_t i = 0; i < n; ++i) g[i] += src[i];
}

// Custom elementwise node: prescribed forward values plus d(out)/d(x)
// factors per element. The quantizer builds its STE node through this.
inline Tensor unary_elementwise(const Tensor& x, std::vector<double> out_values,
                                std::vector<double> grad_factor) {
  if (out_values.size() != x.numel() || grad_factor.size() != x.numel()) {
    throw ShapeError("unary_elementwise: value/factor size mismatch");
  }
  const bool track = grads_wanted({&x});
  Tensor out = make_result(x.shape(), std::move(out_values), track);
  if (track) {
    auto xd = x.impl();
    auto od = out.impl();
    auto factor = std::make_shared<std::vector<double>>(std::move(grad_factor));
    Tape::active()->record(od, [xd, od, factor]() {
      if (!xd->requires_grad) return;
      xd->ensure_grad();
      const std::size_t n = xd->numel();
      for (std::size_t i = 0; i < n; ++i) xd->grad[i] += od->grad[i] * (*factor)[i];
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  const bool track = detail::grads_wanted({&a, &b});
  Tensor result = detail::make_result({m, n}, std::move(out), track);
  if (track) {
    auto ad = a.impl();
    auto bd = b.impl();
    auto od = result.impl();
    Tape::active()->record(od, [ad, bd, od, m, k, n]() {
      const double* g = od->grad.data();
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p)
              ad->grad[i * k + p] += gv * bd->data[p * n + j];
          }
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ad->data[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
              bd->grad[p * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return result;
}

// Elementwise addition; also supports adding a vector [n] to every row of a
// matrix [m x n] (the bias pattern).
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool row_bcast =
      a.shape().size() == 2 && b.shape().size() == 1 && a.shape()[1] == b.shape()[0];
  if (!same && !row_bcast) {
    throw ShapeError("add: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  } else {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = pa[i * n + j] + pb[j];
  }
  const bool track = detail::grads_wanted({&a, &b});
  Tensor result = detail::make_result(a.shape(), std::move(out), track);
  if (track) {
    auto ad = a.impl();
    auto bd = b.impl();
    auto od = result.impl();
    Tape::active()->record(od, [ad, bd, od, same]() {
      detail::accumulate(ad, od->grad.data());
      if (!bd->requires_grad) return;
      bd->ensure_grad();
      if (same) {
        for (std::size_t i = 0; i < bd->numel(); ++i) bd->grad[i] += od->grad[i];
      } else {
        const std::size_t n = bd->numel(), m = od->numel() / n;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) bd->grad[j] += od->grad[i * n + j];
      }
    });
  }
  return result;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  const bool track = detail::grads_wanted({&a, &b});
  Tensor result = detail::make_result(a.shape(), std::move(out), track);
  if (track) {
    auto ad = a.impl();
    auto bd = b.impl();
    auto od = result.impl();
    Tape::active()->record(od, [ad, bd, od]() {
      const std::size_t n = od->numel();
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] * bd->data[i];
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bd->grad[i] += od->grad[i] * ad->data[i];
      }
    });
  }
  return result;
}

// Multiplication by a constant (enters no gradient of its own).
inline Tensor mul(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  const bool track = detail::grads_wanted({&a});
  Tensor result = detail::make_result(a.shape(), std::move(out), track);
  if (track) {
    auto ad = a.impl();
    auto od = result.impl();
    Tape::active()->record(od, [ad, od, c]() {
      if (!ad->requires_grad) return;
      ad->ensure_grad();
      for (std::size_t i = 0; i < od->numel(); ++i) ad->grad[i] += od->grad[i] * c;
    });
  }
  return result;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("div: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
  const bool track = detail::grads_wanted({&a, &b});
  Tensor result = detail::make_result(a.shape(), std::move(out), track);
  if (track) {
    auto ad = a.impl();
    auto bd = b.impl();
    auto od = result.impl();
    Tape::active()->record(od, [ad, bd, od]() {
      const std::size_t n = od->numel();
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] / bd->data[i];
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double bv = bd->data[i];
          bd->grad[i] -= od->grad[i] * ad->data[i] / (bv * bv);
        }
      }
    });
  }
  return result;
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  const bool track = detail::grads_wanted({&x});
  Tensor result = detail::make_result(x.shape(), std::move(out), track);
  if (track) {
    auto xd = x.impl();
    auto od = result.impl();
    Tape::active()->record(od, [xd, od]() {
      if (!xd->requires_grad) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < od->numel(); ++i) {
        if (xd->data[i] > 0.0) xd->grad[i] += od->grad[i];
      }
    });
  }
  return result;
}

// Row softmax over the last dimension of z / temperature, computed with
// max-subtraction for stability.
inline Tensor softmax(const Tensor& z, double temperature = 1.0) {
  if (temperature <= 0.0) {
    throw ValueError("softmax: temperature must be positive, got " + std::to_string(temperature));
  }
  if (z.shape().empty()) throw ShapeError("softmax: rank-0 input");
  const std::size_t cols = z.shape().back();
  const std::size_t rows = z.numel() / cols;
  std::vector<double> out(z.numel());
  const double* pz = z.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = pz + r * cols;
    double m = row[0];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = std::exp((row[c] - m) / temperature);
      out[r * cols + c] = e;
      denom += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= denom;
  }
  const bool track = detail::grads_wanted({&z});
  Tensor result = detail::make_result(z.shape(), std::move(out), track);
  if (track) {
    auto zd = z.impl();
    auto od = result.impl();
    Tape::active()->record(od, [zd, od, rows, cols, temperature]() {
      if (!zd->requires_grad) return;
      zd->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* p = od->data.data() + r * cols;
        const double* g = od->grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[c] * p[c];
        for (std::size_t c = 0; c < cols; ++c) {
          zd->grad[r * cols + c] += p[c] * (g[c] - dot) / temperature;
        }
      }
    });
  }
  return result;
}

inline Tensor log(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.values()[i]);
  const bool track = detail::grads_wanted({&x});
  Tensor result = detail::make_result(x.shape(), std::move(out), track);
  if (track) {
    auto xd = x.impl();
    auto od = result.impl();
    Tape::active()->record(od, [xd, od]() {
      if (!xd->requires_grad) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < od->numel(); ++i) xd->grad[i] += od->grad[i] / xd->data[i];
    });
  }
  return result;
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  const bool track = detail::grads_wanted({&x});
  Tensor result = detail::make_result({1}, {total}, track);
  if (track) {
    auto xd = x.impl();
    auto od = result.impl();
    Tape::active()->record(od, [xd, od]() {
      if (!xd->requires_grad) return;
      xd->ensure_grad();
      const double g = od->grad[0];
      for (std::size_t i = 0; i < xd->numel(); ++i) xd->grad[i] += g;
    });
  }
  return result;
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  double total = 0.0;
  for (double v : x.values()) total += v;
  const double n = static_cast<double>(x.numel());
  const bool track = detail::grads_wanted({&x});
  Tensor result = detail::make_result({1}, {total / n}, track);
  if (track) {
    auto xd = x.impl();
    auto od = result.impl();
    Tape::active()->record(od, [xd, od, n]() {
      if (!xd->requires_grad) return;
      xd->ensure_grad();
      const double g = od->grad[0] / n;
      for (std::size_t i = 0; i < xd->numel(); ++i) xd->grad[i] += g;
    });
  }
  return result;
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (detail::shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + detail::shape_str(x.shape()) + " as " +
                     detail::shape_str(new_shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  const bool track = detail::grads_wanted({&x});
  Tensor result = detail::make_result(std::move(new_shape), std::move(out), track);
  if (track) {
    auto xd = x.impl();
    auto od = result.impl();
    Tape::active()->record(od, [xd, od]() { detail::accumulate(xd, od->grad.data()); });
  }
  return result;
}

// Mean over the batch of -log softmax(logits)[target].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.shape().size() != 2) {
    throw ShapeError("cross_entropy: expected [BxC] logits, got " +
                     detail::shape_str(logits.shape()));
  }
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (targets.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                     std::to_string(batch));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= classes) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " in row " +
                       std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  // Saved softmax probabilities double as the backward-local state.
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  const double* pz = logits.values().data();
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = pz + i * classes;
    double m = row[0];
    for (std::size_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(row[c] - m);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < classes; ++c) {
      (*probs)[i * classes + c] = std::exp(row[c] - m) / denom;
    }
    loss -= (row[static_cast<std::size_t>(targets[i])] - m) - log_denom;
  }
  loss /= static_cast<double>(batch);
  const bool track = detail::grads_wanted({&logits});
  Tensor result = detail::make_result({1}, {loss}, track);
  if (track) {
    auto zd = logits.impl();
    auto od = result.impl();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    Tape::active()->record(od, [zd, od, probs, tgt, batch, classes]() {
      if (!zd->requires_grad) return;
      zd->ensure_grad();
      const double g = od->grad[0] / static_cast<double>(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t c = 0; c < classes; ++c) {
          const double indicator = (static_cast<std::size_t>((*tgt)[i]) == c) ? 1.0 : 0.0;
          zd->grad[i * classes + c] += g * ((*probs)[i * classes + c] - indicator);
        }
      }
    });
  }
  return result;
}

// Mean over the batch of sum_c p_teacher * log(p_teacher / p_student).
// The teacher side is treated as a constant: gradients flow only into
// p_student. Inputs must be probability rows (sum 1 within 1e-6).
inline Tensor kl_div(const Tensor& p_teacher, const Tensor& p_student) {
  if (p_teacher.shape() != p_student.shape() || p_teacher.shape().size() != 2) {
    throw ShapeError("kl_div: expected matching [BxC] inputs, got " +
                     detail::shape_str(p_teacher.shape()) + " and " +
                     detail::shape_str(p_student.shape()));
  }
  const std::size_t batch = p_teacher.shape()[0], classes = p_teacher.shape()[1];
  auto check_rows = [&](const Tensor& t, const char* which) {
    const double* p = t.values().data();
    for (std::size_t i = 0; i < batch; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < classes; ++c) s += p[i * classes + c];
      if (std::abs(s - 1.0) > 1e-6) {
        throw ContractError(std::string("kl_div: ") + which + " row " + std::to_string(i) +
                            " sums to " + std::to_string(s) + ", not a distribution");
      }
    }
  };
  check_rows(p_teacher, "teacher");
  check_rows(p_student, "student");

  const double* pt = p_teacher.values().data();
  const double* ps = p_student.values().data();
  double loss = 0.0;
  for (std::size_t i = 0; i < batch * classes; ++i) {
    if (pt[i] > 0.0) loss += pt[i] * (std::log(pt[i]) - std::log(ps[i]));
  }
  loss /= static_cast<double>(batch);
  const bool track = detail::grads_wanted({&p_student});
  Tensor result = detail::make_result({1}, {loss}, track);
  if (track) {
    auto td = p_teacher.impl();
    auto sd = p_student.impl();
    auto od = result.impl();
    Tape::active()->record(od, [td, sd, od, batch]() {
      if (!sd->requires_grad) return;
      sd->ensure_grad();
      const double g = od->grad[0] / static_cast<double>(batch);
      for (std::size_t i = 0; i < sd->numel(); ++i) {
        if (td->data[i] > 0.0) sd->grad[i] -= g * td->data[i] / sd->data[i];
      }
    });
  }
  return result;
}

// Mean squared difference over all elements.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    loss += d * d;
  }
  const double n = static_cast<double>(a.numel());
  loss /= n;
  const bool track = detail::grads_wanted({&a, &b});
  Tensor result = detail::make_result({1}, {loss}, track);
  if (track) {
    auto ad = a.impl();
    auto bd = b.impl();
    auto od = result.impl();
    Tape::active()->record(od, [ad, bd, od, n]() {
      const double g = 2.0 * od->grad[0] / n;
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < ad->numel(); ++i)
          ad->grad[i] += g * (ad->data[i] - bd->data[i]);
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < bd->numel(); ++i)
          bd->grad[i] -= g * (ad->data[i] - bd->data[i]);
      }
    });
  }
  return result;
}

}  // namespace gorqat
