#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace fedflex {

struct TraceFile {
  int epochs = 0;
  double mean = 0.0;
  double stdev = 0.0;
  std::vector<double> fractions;
};

inline std::string trace_header(int epochs, double mean, double stdev) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "# fedflex-trace v1 E=%d mean=%.6f stdev=%.6f", epochs, mean,
                stdev);
  return buf;
}

inline void write_trace(const std::string& path, const TraceFile& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file " + path);
  out << trace_header(trace.epochs, trace.mean, trace.stdev) << '\n';
  char buf[32];
  for (double f : trace.fractions) {
    std::snprintf(buf, sizeof(buf), "%.6f", f);
    out << buf << '\n';
  }
}

inline TraceFile read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  std::string header;
  std::getline(in, header);
  TraceFile trace;
  if (std::sscanf(header.c_str(), "# fedflex-trace v1 E=%d mean=%lf stdev=%lf", &trace.epochs,
                  &trace.mean, &trace.stdev) != 3) {
    throw std::runtime_error("unsupported trace header in " + path + ": '" + header + "'");
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    trace.fractions.push_back(std::stod(line));
  }
  if (trace.fractions.empty()) throw std::runtime_error("trace file has no samples: " + path);
  return trace;
}

namespace detail {

inline double norm_pdf(double z) { return std::exp(-0.5 * z * z) / 2.5066282746310005; }
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / 1.4142135623730951); }

/// Mean and standard deviation of clip(N(m, s), 0, 1).
inline std::pair<double, double> clipped_moments(double m, double s) {
  const double a = (0.0 - m) / s;
  const double b = (1.0 - m) / s;
  const double Fa = norm_cdf(a), Fb = norm_cdf(b);
  const double fa = norm_pdf(a), fb = norm_pdf(b);
  const double mid = Fb - Fa;
  const double ez = fa - fb;                          // E[Z; a<Z<b]
  const double ez2 = mid + a * fa - b * fb;           // E[Z^2; a<Z<b]
  const double mean = (1.0 - Fb) + m * mid + s * ez;
  const double ex2 = (1.0 - Fb) + m * m * mid + 2.0 * m * s * ez + s * s * ez2;
  const double var = std::max(0.0, ex2 - mean * mean);
  return {mean, std::sqrt(var)};
}

/// Solve for the underlying Gaussian parameters so the clipped distribution
/// hits the published mean/stdev. Damped Newton with a numeric Jacobian.
inline std::pair<double, double> calibrate_clipped(double target_mean, double target_sd) {
  double m = target_mean;
  double s = std::max(target_sd, 1e-4);
  for (int it = 0; it < 200; ++it) {
    const auto [mean, sd] = clipped_moments(m, s);
    const double r1 = mean - target_mean;
    const double r2 = sd - target_sd;
    if (std::abs(r1) < 1e-10 && std::abs(r2) < 1e-10) break;
    const double h = 1e-6;
    const auto [mean_m, sd_m] = clipped_moments(m + h, s);
    const auto [mean_s, sd_s] = clipped_moments(m, s + h);
    const double j11 = (mean_m - mean) / h, j12 = (mean_s - mean) / h;
    const double j21 = (sd_m - sd) / h, j22 = (sd_s - sd) / h;
    const double det = j11 * j22 - j12 * j21;
    if (std::abs(det) < 1e-14) break;
    double dm = (-r1 * j22 + r2 * j12) / det;
    double ds = (-j11 * r2 + j21 * r1) / det;
    const double scale = std::min(1.0, 0.2 / std::max(std::abs(dm), std::abs(ds)));
    m += scale * dm;
    s = std::max(1e-5, s + scale * ds);
  }
  return {m, s};
}

}  // namespace detail

struct TraceSpec {
  const char* name;
  double mean_pct;
  double stdev_pct;
  bool allows_inactive;
};

/// The eight synthetic participation traces: completion-percentage statistics
/// of five CPU-contention levels plus three bandwidth levels. Only the
/// bandwidth traces may contain zero fractions.
inline const std::array<TraceSpec, 8>& trace_specs() {
  static const std::array<TraceSpec, 8> specs{{
      {"T0", 100.0, 0.0, false},
      {"T30", 75.3, 14.8, false},
      {"T50", 67.2, 11.3, false},
      {"T70", 57.2, 11.7, false},
      {"T90", 56.3, 14.8, false},
      {"Thi", 82.5, 23.3, true},
      {"Tmi", 74.1, 22.3, true},
      {"Tlo", 51.2, 18.3, true},
  }};
  return specs;
}

/// Generate one synthetic trace as a clipped Gaussian calibrated to the
/// published moments. Traces that must not contain inactive rounds resample
/// zero fractions.
inline TraceFile generate_trace(const TraceSpec& spec, int epochs, long lines, RngStream rng) {
  TraceFile trace;
  trace.epochs = epochs;
  trace.fractions.reserve(static_cast<std::size_t>(lines));
  if (spec.stdev_pct == 0.0) {
    trace.fractions.assign(static_cast<std::size_t>(lines), spec.mean_pct / 100.0);
  } else {
    const auto [m, s] = detail::calibrate_clipped(spec.mean_pct / 100.0, spec.stdev_pct / 100.0);
    for (long i = 0; i < lines; ++i) {
      double f;
      do {
        f = std::clamp(rng.gaussian(m, s), 0.0, 1.0);
      } while (!spec.allows_inactive && f <= 0.0);
      trace.fractions.push_back(f);
    }
  }
  double mean = 0.0;
  for (double f : trace.fractions) mean += f;
  mean /= static_cast<double>(trace.fractions.size());
  double var = 0.0;
  for (double f : trace.fractions) var += (f - mean) * (f - mean);
  var /= static_cast<double>(trace.fractions.size());
  trace.mean = mean;
  trace.stdev = std::sqrt(var);
  return trace;
}

}  // namespace fedflex
