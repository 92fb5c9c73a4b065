#pragma once

// Dataset ingestion: synthetic Gaussian blobs, headered CSV, and the
// big-endian IDX image/label pair. Every loader produces disjoint
// train/test splits with labels validated against the class count.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gorqat/errors.hpp"
#include "gorqat/rng.hpp"
#include "gorqat/tensor.hpp"

namespace gorqat {

struct Sample {
  std::vector<double> x;
  int y = 0;
};

struct Dataset {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

namespace detail {

// Deterministic 80/20 split.
inline void split_80_20(std::vector<Sample> all, std::uint64_t seed, Dataset& out) {
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t train_count = all.size() * 8 / 10;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < train_count ? out.train : out.test).push_back(std::move(all[order[i]]));
  }
}

}  // namespace detail

// k isotropic Gaussian clusters (one per class) with centers evenly spaced
// on the unit circle; class labels cycle so the sample is balanced.
inline Dataset make_blobs(int classes, int points, double sigma, std::uint64_t seed) {
  if (classes < 2) throw ValueError("make_blobs: need at least 2 classes");
  if (points < classes) throw ValueError("make_blobs: fewer points than classes");
  if (sigma <= 0.0) throw ValueError("make_blobs: sigma must be positive");
  Rng rng(seed);
  std::vector<Sample> all;
  all.reserve(static_cast<std::size_t>(points));
  const double tau = 6.283185307179586476925286766559;
  for (int i = 0; i < points; ++i) {
    const int c = i % classes;
    const double angle = tau * static_cast<double>(c) / static_cast<double>(classes);
    Sample s;
    s.x = {std::cos(angle) + sigma * rng.gaussian(), std::sin(angle) + sigma * rng.gaussian()};
    s.y = c;
    all.push_back(std::move(s));
  }
  Dataset d;
  d.feature_dim = 2;
  d.num_classes = static_cast<std::size_t>(classes);
  detail::split_80_20(std::move(all), seed ^ 0x5eed5eed5eed5eedull, d);
  return d;
}

// CSV with header "f0,...,fd,label"; features are doubles, label an integer
// class index. Parse failures report the byte offset of the offending line.
inline Dataset load_csv(const std::string& path, std::uint64_t split_seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("csv: cannot open " + path);
  std::string line;
  std::size_t offset = 0;

  auto fail = [&](const std::string& what) {
    throw IoError("csv: " + what + " at byte " + std::to_string(offset) + " of " + path,
                  IoError::Kind::parse);
  };

  if (!std::getline(in, line)) fail("missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cols.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (cols.size() < 2 || cols.back() != "label") fail("header must be f0,...,fd,label");
  for (std::size_t i = 0; i + 1 < cols.size(); ++i) {
    if (cols[i] != "f" + std::to_string(i)) fail("unexpected header column '" + cols[i] + "'");
  }
  const std::size_t dim = cols.size() - 1;

  std::vector<Sample> all;
  int max_label = -1;
  offset = static_cast<std::size_t>(in.tellg());
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      offset = static_cast<std::size_t>(in.tellg());
      continue;
    }
    Sample s;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < dim + 1; ++f) {
      const std::size_t comma = line.find(',', pos);
      const bool last = f == dim;
      if (last != (comma == std::string::npos)) fail("wrong field count");
      const std::string field = line.substr(pos, comma - pos);
      long label = 0;
      try {
        std::size_t used = 0;
        if (last) {
          label = std::stol(field, &used);
          if (used != field.size()) fail("trailing characters in label '" + field + "'");
        } else {
          const double v = std::stod(field, &used);
          if (used != field.size()) fail("trailing characters in field '" + field + "'");
          s.x.push_back(v);
        }
      } catch (const IoError&) {
        throw;
      } catch (const std::exception&) {
        fail("unparseable field '" + field + "'");
      }
      if (last) {
        if (label < 0) throw ValueError("csv: negative label " + std::to_string(label));
        s.y = static_cast<int>(label);
      }
      pos = comma + 1;
    }
    max_label = std::max(max_label, s.y);
    all.push_back(std::move(s));
    offset = static_cast<std::size_t>(in.tellg());
  }
  if (all.empty()) fail("no data rows");

  Dataset d;
  d.feature_dim = dim;
  d.num_classes = static_cast<std::size_t>(max_label) + 1;
  detail::split_80_20(std::move(all), split_seed, d);
  return d;
}

namespace detail {

inline std::uint32_t read_be_u32(std::ifstream& in, std::size_t& offset, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) {
    throw IoError("idx: truncated at byte " + std::to_string(offset) + " of " + path,
                  IoError::Kind::truncated);
  }
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace detail

// IDX image/label pair (the MNIST container format): big-endian headers,
// u8 pixels scaled to [0, 1], u8 labels.
inline std::vector<Sample> load_idx_pair(const std::string& images_path,
                                         const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("idx: cannot open " + images_path);
  std::size_t offset = 0;
  const std::uint32_t img_magic = detail::read_be_u32(img, offset, images_path);
  if (img_magic != 0x00000803u) {
    throw IoError("idx: bad image magic 0x" + std::to_string(img_magic) + " at byte 0 of " +
                  images_path,
                  IoError::Kind::bad_magic);
  }
  const std::uint32_t count = detail::read_be_u32(img, offset, images_path);
  const std::uint32_t rows = detail::read_be_u32(img, offset, images_path);
  const std::uint32_t cols = detail::read_be_u32(img, offset, images_path);
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> raw(static_cast<std::size_t>(count) * pixels);
  img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(img.gcount()) != raw.size()) {
    throw IoError("idx: truncated pixel data in " + images_path, IoError::Kind::truncated);
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("idx: cannot open " + labels_path);
  offset = 0;
  const std::uint32_t lab_magic = detail::read_be_u32(lab, offset, labels_path);
  if (lab_magic != 0x00000801u) {
    throw IoError("idx: bad label magic 0x" + std::to_string(lab_magic) + " at byte 0 of " +
                  labels_path,
                  IoError::Kind::bad_magic);
  }
  const std::uint32_t lab_count = detail::read_be_u32(lab, offset, labels_path);
  if (lab_count != count) {
    throw IoError("idx: " + std::to_string(count) + " images but " + std::to_string(lab_count) +
                  " labels");
  }
  std::vector<unsigned char> labels(count);
  lab.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (static_cast<std::size_t>(lab.gcount()) != labels.size()) {
    throw IoError("idx: truncated label data in " + labels_path, IoError::Kind::truncated);
  }

  std::vector<Sample> samples(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    samples[i].x.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      samples[i].x[p] = static_cast<double>(raw[i * pixels + p]) / 255.0;
    }
    samples[i].y = static_cast<int>(labels[i]);
  }
  return samples;
}

// Explicit test pair when available, otherwise a seeded 80/20 split of the
// train pair.
inline Dataset load_idx(const std::string& train_images, const std::string& train_labels,
                        const std::string& test_images = "", const std::string& test_labels = "",
                        std::uint64_t split_seed = 0) {
  std::vector<Sample> train = load_idx_pair(train_images, train_labels);
  if (train.empty()) throw IoError("idx: empty dataset in " + train_images);
  Dataset d;
  d.feature_dim = train[0].x.size();
  int max_label = 0;
  auto scan = [&max_label](const std::vector<Sample>& v) {
    for (const auto& s : v) max_label = std::max(max_label, s.y);
  };
  scan(train);
  if (!test_images.empty()) {
    d.train = std::move(train);
    d.test = load_idx_pair(test_images, test_labels);
    scan(d.test);
  } else {
    detail::split_80_20(std::move(train), split_seed, d);
  }
  d.num_classes = static_cast<std::size_t>(max_label) + 1;
  return d;
}

// Assembles [B x d] features and the label vector for the given rows.
inline std::pair<Tensor, std::vector<int>> make_batch(const std::vector<Sample>& samples,
                                                      const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ValueError("make_batch: empty batch");
  const std::size_t dim = samples[rows[0]].x.size();
  std::vector<double> xs;
  xs.reserve(rows.size() * dim);
  std::vector<int> ys;
  ys.reserve(rows.size());
  for (std::size_t r : rows) {
    const Sample& s = samples[r];
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.push_back(s.y);
  }
  return {Tensor::from({rows.size(), dim}, std::move(xs)), std::move(ys)};
}

}  // namespace gorqat
