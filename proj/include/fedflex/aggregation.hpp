#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "objectives.hpp"
#include "participation.hpp"
#include "rng.hpp"

namespace fedflex {

/// The three aggregation schemes.
///  - A: only complete clients are aggregated, with p_tau^k = N p^k q^k / K.
///       A round with no complete client is discarded.
///  - B: incomplete work accepted with the fixed coefficient p^k.
///  - C: incomplete work accepted with the adaptive coefficient E p^k / s,
///       or 0 for inactive clients.
enum class Scheme { A, B, C };

inline char scheme_name(Scheme s) { return s == Scheme::A ? 'A' : (s == Scheme::B ? 'B' : 'C'); }

inline Scheme scheme_from_name(const std::string& name) {
  if (name == "A" || name == "a") return Scheme::A;
  if (name == "B" || name == "b") return Scheme::B;
  if (name == "C" || name == "c") return Scheme::C;
  throw std::invalid_argument("unknown scheme '" + name + "' (expected A, B or C)");
}

/// Bound theta on p_tau^k / p^k for each scheme.
inline double scheme_theta(Scheme s, int clients, int epochs) {
  switch (s) {
    case Scheme::A:
      return static_cast<double>(clients);
    case Scheme::B:
      return 1.0;
    case Scheme::C:
      return static_cast<double>(epochs);
  }
  return 0.0;
}

/// Per-round aggregation coefficients. `discarded` marks a Scheme A round
/// with no complete client; the caller must skip the aggregation step.
struct RoundCoefficients {
  std::vector<double> p_tau;
  bool discarded = false;
  double theta = 0.0;
};

inline RoundCoefficients coefficients(Scheme scheme, const std::vector<double>& p,
                                      const RoundParticipation& part, int epochs) {
  if (p.size() != part.s.size()) throw std::invalid_argument("coefficients: weight/participation size mismatch");
  const auto n = p.size();
  RoundCoefficients out;
  out.p_tau.assign(n, 0.0);
  out.theta = scheme_theta(scheme, static_cast<int>(n), epochs);
  switch (scheme) {
    case Scheme::A: {
      if (part.complete_count == 0) {
        out.discarded = true;
        break;
      }
      const double scale = static_cast<double>(n) / part.complete_count;
      for (std::size_t k = 0; k < n; ++k) {
        if (part.complete[k]) out.p_tau[k] = scale * p[k];
      }
      break;
    }
    case Scheme::B:
      // Fixed coefficients; inactive clients contribute a zero delta.
      out.p_tau = p;
      break;
    case Scheme::C:
      for (std::size_t k = 0; k < n; ++k) {
        if (part.s[k] > 0) out.p_tau[k] = static_cast<double>(epochs) * p[k] / part.s[k];
      }
      break;
  }
  return out;
}

/// Global aggregation step: w + sum_k p_tau^k (w_end^k - w).
inline Vec aggregate(const Vec& w_global, const std::vector<Vec>& deltas,
                     const RoundCoefficients& coeffs) {
  if (coeffs.discarded) throw std::logic_error("aggregate: round was discarded");
  if (deltas.size() != coeffs.p_tau.size()) {
    throw std::invalid_argument("aggregate: delta/coefficient size mismatch");
  }
  Vec w = w_global;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    if (coeffs.p_tau[k] != 0.0) {
      ensure_same_dim(deltas[k], w.size(), "aggregate");
      w += coeffs.p_tau[k] * deltas[k];
    }
  }
  ensure_finite(w, "aggregate");
  return w;
}

/// Expectations of the coefficient/epoch functionals a convergence analysis
/// needs. For Scheme A every statistic is conditional on at least one
/// complete client. Exact values come from enumeration (completeness
/// patterns for A, the product epoch distribution for B/C); past the state
/// limit a seeded Monte Carlo estimate with its standard error is used.
struct SchemeExpectations {
  std::vector<double> weighted_epochs;  // E[p_tau^k s_tau^k] per client
  double weighted_epoch_sum = 0.0;      // E[sum_k p_tau^k s_tau^k]
  double sum_p = 0.0;                   // E[sum_k p_tau^k]
  double sum_p_sq = 0.0;                // E[sum_k (p_tau^k)^2]
  double sum_p_sq_s = 0.0;              // E[sum_k (p_tau^k)^2 s_tau^k]
  double sum_p_sq_s_noise = 0.0;        // E[sum_k (p_tau^k)^2 s_tau^k sigma_k^2]
  double weighted_epoch_gamma = 0.0;    // E[sum_k p_tau^k s_tau^k Gamma_k]
  double ratio_epochs = 0.0;            // E[sum_k (p_tau^k)^2 / p^k * s_tau^k]
  double excess_weight_term = 0.0;      // E[(sum_k p_tau^k - 2)_+ sum_k p_tau^k s_tau^k]
  double sum_p_times_sum_ps = 0.0;      // E[(sum_k p_tau^k)(sum_k p_tau^k s_tau^k)]
  double discard_probability = 0.0;     // Scheme A: P(K = 0)
  bool exact = true;
  double stderr_sum = 0.0;              // Monte Carlo standard error of weighted_epoch_sum
  std::vector<double> stderr_per_client;  // same, per client (empty when exact)
};

struct ExpectationOptions {
  std::uint64_t state_limit = 2'000'000;  // max enumerated joint states
  long mc_draws = 1'000'000;
  std::uint64_t mc_seed = 0xfed5;
  std::vector<double> gammas;  // optional per-client Gamma_k (default 0)
  std::vector<double> noises;  // optional per-client sigma_k (default 0)
};

namespace detail {

struct ExpectationAccumulator {
  SchemeExpectations& out;
  const std::vector<double>& gammas;
  const std::vector<double>& noises;

  void add(double weight, const std::vector<double>& p_tau, const std::vector<double>& p,
           const std::vector<int>& s) {
    double sum_ps = 0.0, sum_p = 0.0, sum_p_sq = 0.0, sum_p_sq_s = 0.0, sum_p_sq_s_noise = 0.0;
    double sum_ps_gamma = 0.0, ratio = 0.0;
    for (std::size_t k = 0; k < p_tau.size(); ++k) {
      const double ps = p_tau[k] * s[k];
      sum_ps += ps;
      sum_p += p_tau[k];
      sum_p_sq += p_tau[k] * p_tau[k];
      sum_p_sq_s += p_tau[k] * ps;
      if (!noises.empty()) sum_p_sq_s_noise += p_tau[k] * ps * noises[k] * noises[k];
      if (!gammas.empty()) sum_ps_gamma += ps * gammas[k];
      if (p[k] > 0.0) ratio += p_tau[k] / p[k] * ps;
      out.weighted_epochs[k] += weight * ps;
    }
    out.weighted_epoch_sum += weight * sum_ps;
    out.sum_p += weight * sum_p;
    out.sum_p_sq += weight * sum_p_sq;
    out.sum_p_sq_s += weight * sum_p_sq_s;
    out.sum_p_sq_s_noise += weight * sum_p_sq_s_noise;
    out.weighted_epoch_gamma += weight * sum_ps_gamma;
    out.ratio_epochs += weight * ratio;
    out.excess_weight_term += weight * std::max(0.0, sum_p - 2.0) * sum_ps;
    out.sum_p_times_sum_ps += weight * sum_p * sum_ps;
  }
};

}  // namespace detail

inline SchemeExpectations compute_scheme_expectations(Scheme scheme, const std::vector<double>& p,
                                                      const std::vector<ParticipationModel>& models,
                                                      int epochs,
                                                      const ExpectationOptions& opt = {}) {
  if (p.size() != models.size() || p.empty()) {
    throw std::invalid_argument("scheme expectations: weight/model size mismatch");
  }
  const std::size_t n = p.size();
  SchemeExpectations out;
  out.weighted_epochs.assign(n, 0.0);
  detail::ExpectationAccumulator acc{out, opt.gammas, opt.noises};

  std::vector<double> p_tau(n, 0.0);
  std::vector<int> s(n, 0);

  if (scheme == Scheme::A) {
    // Coefficients depend only on which clients are complete; incomplete
    // clients carry a zero coefficient, so their epoch counts never enter.
    std::vector<double> q(n);
    double p_none = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      q[k] = models[k].completion_probability();
      p_none *= 1.0 - q[k];
    }
    out.discard_probability = p_none;
    if (p_none >= 1.0 - 1e-300) {
      throw std::domain_error("scheme expectations: no client ever completes (Scheme A)");
    }
    if (n <= 20) {
      const double norm = 1.0 / (1.0 - p_none);
      const std::uint64_t patterns = std::uint64_t{1} << n;
      for (std::uint64_t mask = 1; mask < patterns; ++mask) {  // mask 0 is the discarded round
        double w = 1.0;
        int complete = 0;
        for (std::size_t k = 0; k < n; ++k) {
          const bool c = (mask >> k) & 1u;
          w *= c ? q[k] : 1.0 - q[k];
          complete += c;
        }
        if (w == 0.0) continue;
        const double scale = static_cast<double>(n) / complete;
        for (std::size_t k = 0; k < n; ++k) {
          const bool c = (mask >> k) & 1u;
          p_tau[k] = c ? scale * p[k] : 0.0;
          s[k] = c ? epochs : 0;
        }
        acc.add(w * norm, p_tau, p, s);
      }
      out.exact = true;
      return out;
    }
    // Monte Carlo over completeness patterns, conditioned on K != 0.
    RngStream rng(opt.mc_seed);
    long kept = 0;
    double m1 = 0.0, m2 = 0.0;
    std::vector<double> c2(n, 0.0);
    while (kept < opt.mc_draws) {
      int complete = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const bool c = rng.uniform() < q[k];
        s[k] = c ? epochs : 0;
        p_tau[k] = c ? 1.0 : 0.0;  // completeness marker; rescaled below
        complete += c;
      }
      if (complete == 0) continue;
      ++kept;
      const double scale = static_cast<double>(n) / complete;
      double sum_ps = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        p_tau[k] *= scale * p[k];
        const double ps = p_tau[k] * s[k];
        sum_ps += ps;
        c2[k] += ps * ps;
      }
      acc.add(1.0 / opt.mc_draws, p_tau, p, s);
      m1 += sum_ps;
      m2 += sum_ps * sum_ps;
    }
    m1 /= opt.mc_draws;
    m2 /= opt.mc_draws;
    out.exact = false;
    out.stderr_sum = std::sqrt(std::max(0.0, m2 - m1 * m1) / opt.mc_draws);
    out.stderr_per_client.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double mean_k = out.weighted_epochs[k];
      out.stderr_per_client[k] =
          std::sqrt(std::max(0.0, c2[k] / opt.mc_draws - mean_k * mean_k) / opt.mc_draws);
    }
    return out;
  }

  // Schemes B and C: coefficients are per-client functions of s.
  const auto coeff_of = [&](std::size_t k, int sk) {
    if (scheme == Scheme::B) return p[k];
    return sk > 0 ? static_cast<double>(epochs) * p[k] / sk : 0.0;
  };

  double ews_check = 0.0;
  std::vector<std::vector<double>> pmfs(n);
  for (std::size_t k = 0; k < n; ++k) {
    pmfs[k] = models[k].pmf();
    if (static_cast<int>(pmfs[k].size()) != epochs + 1) {
      throw std::invalid_argument("scheme expectations: model epochs disagree with E");
    }
    for (int sk = 0; sk <= epochs; ++sk) {
      ews_check += pmfs[k][static_cast<std::size_t>(sk)] * coeff_of(k, sk) * sk;
    }
  }
  if (ews_check <= 0.0) {
    throw std::domain_error("scheme expectations: E[sum p s] = 0 (all participation mass at zero)");
  }

  double states = 1.0;
  for (std::size_t k = 0; k < n; ++k) states *= static_cast<double>(epochs + 1);
  if (states <= static_cast<double>(opt.state_limit)) {
    // DFS over the product epoch distribution.
    std::function<void(std::size_t, double)> walk = [&](std::size_t k, double w) {
      if (w == 0.0) return;
      if (k == n) {
        acc.add(w, p_tau, p, s);
        return;
      }
      for (int sk = 0; sk <= epochs; ++sk) {
        s[k] = sk;
        p_tau[k] = coeff_of(k, sk);
        walk(k + 1, w * pmfs[k][static_cast<std::size_t>(sk)]);
      }
    };
    walk(0, 1.0);
    out.exact = true;
    return out;
  }

  RngStream rng(opt.mc_seed);
  double m1 = 0.0, m2 = 0.0;
  std::vector<double> c2(n, 0.0);
  for (long it = 0; it < opt.mc_draws; ++it) {
    double sum_ps = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      double u = rng.uniform();
      int sk = epochs;
      for (int v = 0; v < epochs; ++v) {
        if (u < pmfs[k][static_cast<std::size_t>(v)]) {
          sk = v;
          break;
        }
        u -= pmfs[k][static_cast<std::size_t>(v)];
      }
      s[k] = sk;
      p_tau[k] = coeff_of(k, sk);
      const double ps = p_tau[k] * sk;
      sum_ps += ps;
      c2[k] += ps * ps;
    }
    acc.add(1.0 / opt.mc_draws, p_tau, p, s);
    m1 += sum_ps;
    m2 += sum_ps * sum_ps;
  }
  m1 /= opt.mc_draws;
  m2 /= opt.mc_draws;
  out.exact = false;
  out.stderr_sum = std::sqrt(std::max(0.0, m2 - m1 * m1) / opt.mc_draws);
  out.stderr_per_client.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double mean_k = out.weighted_epochs[k];
    out.stderr_per_client[k] =
        std::sqrt(std::max(0.0, c2[k] / opt.mc_draws - mean_k * mean_k) / opt.mc_draws);
  }
  return out;
}

/// Per-client E[p_tau^k s_tau^k] (conditional on a non-discarded round for
/// Scheme A), plus the sum the learning-rate schedule divides by.
struct WeightedEpochExpectation {
  std::vector<double> per_client;
  double sum = 0.0;
  bool exact = true;
  double stderr_sum = 0.0;
};

inline WeightedEpochExpectation expected_weighted_epochs(Scheme scheme, const std::vector<double>& p,
                                                         const std::vector<ParticipationModel>& models,
                                                         int epochs,
                                                         const ExpectationOptions& opt = {}) {
  const auto ex = compute_scheme_expectations(scheme, p, models, epochs, opt);
  if (ex.weighted_epoch_sum <= 0.0) {
    throw std::domain_error("expected_weighted_epochs: E[sum p s] = 0");
  }
  return {ex.weighted_epochs, ex.weighted_epoch_sum, ex.exact, ex.stderr_sum};
}

}  // namespace fedflex
