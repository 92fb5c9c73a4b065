#pragma once

// Single-file binary checkpoint: magic, version, model parameters, the
// regularizer state, and optional quantization specs, all little-endian
// with 64-bit float payloads and a trailing FNV-1a checksum. Round-trips
// are bit-exact. A JSON sidecar (written by the CLI) carries the run
// config; this file stays self-contained.
//
// Layout (version 1):
//   "GQCK" | u32 version | u8 role | u8 frozen | u32 layer_count
//   per layer: u32 name_len | name | u32 in | u32 out | u8 act
//              | in*out f64 weights | out f64 biases
//   f64 alpha_task | f64 alpha_kd | f64 eta_alpha | f64 clip_floor
//   | u64 step_count
//   u8 has_quant | [ i32 wbits | i32 abits | u8 ste
//     | per layer: u8 has_wspec [ i32 bits | f64 x_min | f64 x_max ]
//     | per layer: u8 has_aspec [ i32 bits | f64 momentum | f64 x_min
//                  | f64 x_max | i32 calib_count | i32 warmup ] ]
//   u64 checksum (FNV-1a over everything before it)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "gorqat/errors.hpp"
#include "gorqat/models.hpp"
#include "gorqat/regularizer.hpp"

namespace gorqat {

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'G', 'Q', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : buf_) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> buf) : buf_(std::move(buf)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return buf_.size(); }

  std::uint64_t checksum_upto(std::size_t end) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < end; ++i) {
      h ^= static_cast<std::uint8_t>(buf_[i]);
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw IoError("checkpoint: truncated at byte " + std::to_string(pos_),
                    IoError::Kind::truncated);
    }
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct Checkpoint {
  ModelParams model;
  GoRState gor;
  std::optional<ModelQuant> quant;  // owners are not restored
};

inline void save_checkpoint(const std::string& path, const ModelParams& model,
                            const GoRState& gor, const ModelQuant* quant = nullptr) {
  detail::ByteWriter w;
  w.bytes(detail::kCheckpointMagic, 4);
  w.u32(detail::kCheckpointVersion);
  w.u8(model.role == Role::teacher ? 1 : 0);
  w.u8(model.frozen ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    w.str(layer.name);
    w.u32(static_cast<std::uint32_t>(layer.weight.shape()[0]));
    w.u32(static_cast<std::uint32_t>(layer.weight.shape()[1]));
    w.u8(layer.act == Activation::relu ? 1 : 0);
    for (double v : layer.weight.values()) w.f64(v);
    for (double v : layer.bias.values()) w.f64(v);
  }
  w.f64(gor.alpha_task);
  w.f64(gor.alpha_kd);
  w.f64(gor.eta_alpha);
  w.f64(gor.clip_floor);
  w.u64(static_cast<std::uint64_t>(gor.step_count));
  w.u8(quant != nullptr ? 1 : 0);
  if (quant != nullptr) {
    w.i32(quant->wbits);
    w.i32(quant->abits);
    w.u8(quant->ste == StePolicy::passthrough ? 1 : 0);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      const bool has = quant->quantizes_weights() && quant->enabled(i);
      w.u8(has ? 1 : 0);
      if (has) {
        const QuantSpec& s = quant->weight_specs[i];
        w.i32(s.bits);
        w.f64(s.x_min);
        w.f64(s.x_max);
      }
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      const bool has = quant->quantizes_acts() && quant->enabled(i);
      w.u8(has ? 1 : 0);
      if (has) {
        const QuantSpec& s = quant->act_specs[i];
        w.i32(s.bits);
        w.f64(s.momentum);
        w.f64(s.x_min);
        w.f64(s.x_max);
        w.i32(s.calib_count);
        w.i32(s.warmup_batches);
      }
    }
  }
  w.u64(w.checksum());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("checkpoint: short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(buf));

  if (r.size() < 4) throw IoError("checkpoint: truncated header", IoError::Kind::truncated);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, detail::kCheckpointMagic, 4) != 0) {
    throw IoError("checkpoint: bad magic in " + path, IoError::Kind::bad_magic);
  }
  const std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version),
                  IoError::Kind::bad_version);
  }

  Checkpoint ck;
  ck.model.role = r.u8() != 0 ? Role::teacher : Role::student;
  const bool frozen = r.u8() != 0;
  const std::uint32_t layer_count = r.u32();
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    Layer layer;
    layer.name = r.str();
    const std::size_t fan_in = r.u32();
    const std::size_t fan_out = r.u32();
    layer.act = r.u8() != 0 ? Activation::relu : Activation::none;
    std::vector<double> wv(fan_in * fan_out);
    for (double& v : wv) v = r.f64();
    std::vector<double> bv(fan_out);
    for (double& v : bv) v = r.f64();
    layer.weight = Tensor::from({fan_in, fan_out}, std::move(wv), true);
    layer.bias = Tensor::from({fan_out}, std::move(bv), true);
    ck.model.layers.push_back(std::move(layer));
  }
  ck.gor.alpha_task = r.f64();
  ck.gor.alpha_kd = r.f64();
  ck.gor.eta_alpha = r.f64();
  ck.gor.clip_floor = r.f64();
  ck.gor.step_count = static_cast<long>(r.u64());
  if (r.u8() != 0) {
    ModelQuant q;
    q.wbits = r.i32();
    q.abits = r.i32();
    q.ste = r.u8() != 0 ? StePolicy::passthrough : StePolicy::clipped;
    std::vector<std::uint8_t> w_present(layer_count, 0), a_present(layer_count, 0);
    for (std::uint32_t i = 0; i < layer_count; ++i) {
      if (r.u8() != 0) {
        w_present[i] = 1;
        QuantSpec s = make_weight_spec(r.i32());
        s.x_min = r.f64();
        s.x_max = r.f64();
        s.has_range = true;
        q.weight_specs.push_back(s);
      } else if (q.quantizes_weights()) {
        q.weight_specs.push_back(make_weight_spec(q.wbits));  // exempt layer placeholder
      }
    }
    for (std::uint32_t i = 0; i < layer_count; ++i) {
      if (r.u8() != 0) {
        a_present[i] = 1;
        const int bits = r.i32();
        const double momentum = r.f64();
        QuantSpec s = make_activation_spec(bits, momentum);
        s.x_min = r.f64();
        s.x_max = r.f64();
        s.calib_count = r.i32();
        s.warmup_batches = r.i32();
        s.has_range = s.calib_count > 0;
        q.act_specs.push_back(s);
      } else if (q.quantizes_acts()) {
        q.act_specs.push_back(make_activation_spec(q.abits));  // exempt layer placeholder
      }
    }
    for (std::uint32_t i = 0; i < layer_count; ++i) {
      const bool quantized_at_all = q.quantizes_weights() || q.quantizes_acts();
      q.layer_enabled.push_back(!quantized_at_all || w_present[i] || a_present[i] ? 1 : 0);
    }
    for (const auto& layer : ck.model.layers) q.owners.push_back(layer.weight.impl().get());
    ck.quant = std::move(q);
  }
  const std::size_t payload_end = r.pos();
  const std::uint64_t stored = r.u64();
  if (r.pos() != r.size()) {
    throw IoError("checkpoint: " + std::to_string(r.size() - r.pos()) + " trailing bytes",
                  IoError::Kind::parse);
  }
  if (stored != r.checksum_upto(payload_end)) {
    throw IoError("checkpoint: checksum mismatch in " + path, IoError::Kind::bad_checksum);
  }
  if (frozen) ck.model.freeze();
  return ck;
}

}  // namespace gorqat
