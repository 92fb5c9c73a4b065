#pragma once

// Per-step metrics stream. CSV rows are formatted with %.17g so identical
// runs serialize to identical bytes; accuracy columns carry the latest
// per-epoch evaluation.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gorqat/errors.hpp"

namespace gorqat {

struct MetricsRecord {
  long step = 0;
  long epoch = 0;
  double loss_task = 0.0;
  double loss_kd = 0.0;
  double loss_total = 0.0;
  double w_task = 1.0;
  double w_kd = 0.0;
  double alpha_task = 1.0;
  double alpha_kd = 1.0;
  double eq_residual = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline const char* metrics_csv_header() {
  return "step,epoch,loss_task,loss_kd,loss_total,w_task,w_kd,alpha_task,alpha_kd,"
         "eq_residual,train_acc,test_acc";
}

inline std::string metrics_csv_row(const MetricsRecord& r) {
  std::string row = std::to_string(r.step) + "," + std::to_string(r.epoch);
  for (double v : {r.loss_task, r.loss_kd, r.loss_total, r.w_task, r.w_kd, r.alpha_task,
                   r.alpha_kd, r.eq_residual, r.train_acc, r.test_acc}) {
    row += ",";
    row += format_double(v);
  }
  return row;
}

inline std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::string out = metrics_csv_header();
  out += "\n";
  for (const auto& r : records) {
    out += metrics_csv_row(r);
    out += "\n";
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace gorqat
