#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "est/core.hpp"

namespace est::eval {

struct MetricReport {
  double abs_rel = 0.0;
  double abs = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  long valid = 0;
};

struct TemporalReport {
  std::vector<double> per_frame_abs;
  double std = 0.0;
};

struct EmptyReport : Error {
  using Error::Error;
};

/// Standard depth metrics over pixels whose ground truth is valid (> 0) and
/// no farther than `range_cap`. Predictions must be positive to be counted.
template <typename P, typename G>
MetricReport depth_metrics(const Image<P>& pred, const Image<G>& gt,
                           double range_cap = std::numeric_limits<double>::infinity()) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw std::invalid_argument("depth_metrics: prediction and ground truth differ in size");
  double s_abs_rel = 0, s_abs = 0, s_sq_rel = 0, s_sq = 0, s_log = 0;
  long n = 0, in1 = 0, in2 = 0, in3 = 0;
  const auto p = pred.data();
  const auto g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double t = g[i], e = p[i];
    if (!(t > 0.0) || !(t <= range_cap) || !(e > 0.0)) continue;
    const double diff = e - t;
    s_abs_rel += std::abs(diff) / t;
    s_abs += std::abs(diff);
    s_sq_rel += diff * diff / t;
    s_sq += diff * diff;
    const double l = std::log(e) - std::log(t);
    s_log += l * l;
    const double ratio = std::max(e / t, t / e);
    in1 += ratio < 1.25;
    in2 += ratio < 1.25 * 1.25;
    in3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw EmptyReport("depth_metrics: no valid pixels");
  const double dn = static_cast<double>(n);
  return {s_abs_rel / dn, s_abs / dn,     s_sq_rel / dn, std::sqrt(s_sq / dn), std::sqrt(s_log / dn),
          in1 / dn,       in2 / dn,       in3 / dn,      n};
}

/// Population standard deviation of the per-frame mean absolute error.
inline TemporalReport temporal_std(const std::vector<MetricReport>& frames) {
  if (frames.size() < 2) throw std::invalid_argument("temporal_std: need at least two frames");
  TemporalReport r;
  // Shifted by the first frame so a constant sequence gives exactly zero.
  const double shift = frames.front().abs;
  double mean = 0.0;
  for (const auto& f : frames) {
    r.per_frame_abs.push_back(f.abs);
    mean += f.abs - shift;
  }
  mean /= static_cast<double>(frames.size());
  double var = 0.0;
  for (double a : r.per_frame_abs) var += (a - shift - mean) * (a - shift - mean);
  r.std = std::sqrt(var / static_cast<double>(frames.size()));
  return r;
}

/// Unweighted mean of per-frame reports (valid counts are summed).
inline MetricReport mean_report(const std::vector<MetricReport>& frames) {
  if (frames.empty()) throw EmptyReport("mean_report: no frames");
  MetricReport m;
  for (const auto& f : frames) {
    m.abs_rel += f.abs_rel;
    m.abs += f.abs;
    m.sq_rel += f.sq_rel;
    m.rmse += f.rmse;
    m.rmse_log += f.rmse_log;
    m.delta1 += f.delta1;
    m.delta2 += f.delta2;
    m.delta3 += f.delta3;
    m.valid += f.valid;
  }
  const double n = static_cast<double>(frames.size());
  m.abs_rel /= n;
  m.abs /= n;
  m.sq_rel /= n;
  m.rmse /= n;
  m.rmse_log /= n;
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

inline constexpr const char* kCsvHeader = "frame,abs_rel,abs,sq_rel,rmse,rmse_log,delta1,delta2,delta3,valid";

inline void write_csv_row(std::ostream& os, const std::string& label, const MetricReport& r) {
  const auto old = os.precision(10);
  os << label << ',' << r.abs_rel << ',' << r.abs << ',' << r.sq_rel << ',' << r.rmse << ',' << r.rmse_log << ','
     << r.delta1 << ',' << r.delta2 << ',' << r.delta3 << ',' << r.valid << '\n';
  os.precision(old);
}

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"abs_rel", r.abs_rel}, {"abs", r.abs},       {"sq_rel", r.sq_rel}, {"rmse", r.rmse},
          {"rmse_log", r.rmse_log}, {"delta1", r.delta1}, {"delta2", r.delta2}, {"delta3", r.delta3},
          {"valid", r.valid}};
}

}  // namespace est::eval
