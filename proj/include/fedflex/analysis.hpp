#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "aggregation.hpp"
#include "objectives.hpp"
#include "participation.hpp"

namespace fedflex {

/// Constants of the convergence bound
///     E|w_{tau E} - w*|^2 <= (M_tau * D + V) / (tau E + gamma)
/// under the schedule eta_tau = 16 E / (mu ews (tau E + gamma)), where
/// ews = E[sum_k p_tau^k s_tau^k] and M_tau accumulates the per-round bias
/// indicator.
struct BoundConstants {
  double theta = 0.0;
  double gamma = 0.0;
  double bias_gap = 0.0;        // D
  double v_const = 0.0;         // V = max(v_init_term, v_noise_term)
  double v_init_term = 0.0;     // gamma^2 |w0 - w*|^2
  double v_noise_term = 0.0;    // (16E / (mu ews))^2 E[B] / E
  double expected_b = 0.0;      // E[B_tau]
  double ews = 0.0;             // E[sum_k p_tau^k s_tau^k]
  int epochs = 0;
  double mu = 0.0;
  double smoothness = 0.0;
  double grad_bound = 0.0;
  double initial_dist_sq = 0.0;
  double region_radius = 0.0;   // ball around w* on which G is declared
  bool biased = false;          // per-round indicator z for static distributions
  bool exact = true;
  double stderr_sum = 0.0;

  double schedule_eta(long round) const {
    return 16.0 * epochs / (mu * ews * (static_cast<double>(round) * epochs + gamma));
  }
  /// Caps the schedule must respect at round 0.
  double eta_cap_smooth() const { return 1.0 / (2.0 * (1.0 + theta) * smoothness); }
  double eta_cap_epoch() const { return 4.0 / (mu * epochs * theta); }
};

/// Weighted-epoch ratios E[p_tau^k s_tau^k] / p^k per client. The round is
/// debiased (z = 0) exactly when all ratios agree.
inline std::vector<double> weighted_epoch_ratios(const SchemeExpectations& ex,
                                                 const std::vector<double>& p) {
  std::vector<double> r(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) r[k] = ex.weighted_epochs[k] / p[k];
  return r;
}

/// z detector: true when the per-client ratios E[p s]/p^k disagree beyond
/// tolerance. With Monte Carlo expectations the tolerance widens by three
/// standard errors.
inline bool detect_weight_bias(Scheme scheme, const std::vector<double>& p,
                               const std::vector<ParticipationModel>& models, int epochs,
                               double tol = 1e-9, const ExpectationOptions& opt = {}) {
  const auto ex = compute_scheme_expectations(scheme, p, models, epochs, opt);
  const auto r = weighted_epoch_ratios(ex, p);
  const double hi = *std::max_element(r.begin(), r.end());
  const double lo = *std::min_element(r.begin(), r.end());
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(r.size());
  double slack = tol * std::abs(mean);
  if (!ex.exact) {
    double worst = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      worst = std::max(worst, ex.stderr_per_client.empty() ? 0.0 : ex.stderr_per_client[k] / p[k]);
    }
    slack += 6.0 * worst;  // two ratios, three standard errors each
  }
  return hi - lo > slack;
}

struct BoundConstantsOptions {
  double region_radius = 0.0;  // <= 0: use 10 |w0 - w*|
  double initial_dist_sq_override = -1.0;  // >= 0: replaces |w0 - w*|^2 in V
  ExpectationOptions expectation;
};

/// Assemble the bound constants for a federation / scheme / participation
/// triple. E[B] is taken over the joint law of the coefficients and epoch
/// counts (they are dependent), via the expectation engine.
inline BoundConstants bound_constants_for(const Federation& fed, Scheme scheme,
                                        const std::vector<ParticipationModel>& models, int epochs,
                                        const Vec& w0, BoundConstantsOptions opts = {}) {
  if (models.size() != fed.size()) {
    throw std::invalid_argument("bound_constants_for: one participation model per client");
  }
  const double init_dist = opts.initial_dist_sq_override >= 0.0
                               ? opts.initial_dist_sq_override
                               : (w0 - fed.optimum()).squaredNorm();
  double radius = opts.region_radius;
  if (radius <= 0.0) radius = std::max(1e-6, 10.0 * std::sqrt(init_dist));
  const auto fc = compute_constants(fed, radius);

  ExpectationOptions eopt = opts.expectation;
  eopt.gammas.resize(fed.size());
  eopt.noises.resize(fed.size());
  for (std::size_t k = 0; k < fed.size(); ++k) {
    eopt.gammas[k] = fc.per_client[k].gamma;
    eopt.noises[k] = fc.per_client[k].noise;
  }
  const auto ex = compute_scheme_expectations(scheme, fed.weights(), models, epochs, eopt);
  if (ex.weighted_epoch_sum <= 0.0) {
    throw std::domain_error("bound_constants_for: E[sum p s] = 0");
  }

  BoundConstants c;
  c.epochs = epochs;
  c.theta = scheme_theta(scheme, static_cast<int>(fed.size()), epochs);
  c.mu = fc.strong_convexity;
  c.smoothness = fc.smoothness;
  c.grad_bound = fc.grad_bound;
  c.ews = ex.weighted_epoch_sum;
  c.exact = ex.exact;
  c.stderr_sum = ex.stderr_sum;
  c.initial_dist_sq = init_dist;
  c.region_radius = radius;

  const double E = static_cast<double>(epochs);
  c.gamma = std::max(32.0 * E * (1.0 + c.theta) * c.smoothness / (c.mu * c.ews),
                     4.0 * E * E * c.theta / c.ews);
  c.bias_gap = 64.0 * E * ex.weighted_epoch_gamma / (c.mu * c.ews);

  const double g2 = c.grad_bound * c.grad_bound;
  c.expected_b = 2.0 * (2.0 + c.theta) * c.smoothness * ex.weighted_epoch_gamma +
                 (2.0 + c.mu / (2.0 * (1.0 + c.theta) * c.smoothness)) * E * (E - 1.0) * g2 *
                     (ex.weighted_epoch_sum + c.theta * ex.excess_weight_term) +
                 2.0 * E * g2 * ex.ratio_epochs + ex.sum_p_sq_s_noise;

  const double lr_scale = 16.0 * E / (c.mu * c.ews);
  c.v_init_term = c.gamma * c.gamma * init_dist;
  c.v_noise_term = lr_scale * lr_scale * c.expected_b / E;
  c.v_const = std::max(c.v_init_term, c.v_noise_term);

  const auto ratios = weighted_epoch_ratios(ex, fed.weights());
  const double hi = *std::max_element(ratios.begin(), ratios.end());
  const double lo = *std::min_element(ratios.begin(), ratios.end());
  double mean = 0.0;
  for (double v : ratios) mean += v;
  mean /= static_cast<double>(ratios.size());
  c.biased = (hi - lo) > 1e-9 * std::abs(mean) + (ex.exact ? 0.0 : 6.0 * ex.stderr_sum);
  return c;
}

/// How the per-round bound value is formed from the constants.
///  - StaticV: (M_tau D + V) / (tau E + gamma). Under z = 0 this is the
///    larger (more conservative) of the two forms at every round and is
///    strictly decreasing.
///  - CumulativeV: M_tau D / (tau E + gamma) + V_tau / (tau E + gamma)^2
///    with V_tau = max(gamma^2 d0, (16E/(mu ews))^2 tau E[B]).
enum class BoundForm { StaticV, CumulativeV };

inline std::vector<double> bound_curve(const BoundConstants& c, const std::vector<int>& z_schedule,
                                       long tau_max, BoundForm form = BoundForm::StaticV) {
  std::vector<double> values(static_cast<std::size_t>(tau_max) + 1);
  const double E = static_cast<double>(c.epochs);
  const double lr_scale = 16.0 * E / (c.mu * c.ews);
  double m = 0.0;
  for (long tau = 0; tau <= tau_max; ++tau) {
    const double denom = static_cast<double>(tau) * E + c.gamma;
    if (form == BoundForm::StaticV) {
      values[static_cast<std::size_t>(tau)] = (m * c.bias_gap + c.v_const) / denom;
    } else {
      const double v_tau = std::max(c.gamma * c.gamma * c.initial_dist_sq,
                                    lr_scale * lr_scale * c.expected_b * static_cast<double>(tau));
      values[static_cast<std::size_t>(tau)] = m * c.bias_gap / denom + v_tau / (denom * denom);
    }
    if (tau < static_cast<long>(z_schedule.size())) {
      m += z_schedule[static_cast<std::size_t>(tau)];
    } else if (!z_schedule.empty()) {
      m += z_schedule.back();
    }
  }
  return values;
}

inline std::vector<double> bound_curve(const BoundConstants& c, int z_constant, long tau_max,
                                       BoundForm form = BoundForm::StaticV) {
  return bound_curve(c, std::vector<int>{z_constant}, tau_max, form);
}

// ---------------------------------------------------------------------------
// Scheme A conditional expectations: closed forms and the pattern-enumeration
// oracle they are checked against.
// ---------------------------------------------------------------------------

struct SchemeAExpectations {
  std::vector<double> p_mean;     // E[p_tau^k | K != 0]
  std::vector<double> p_sq_mean;  // E[(p_tau^k)^2 | K != 0]
  Mat cross_mean;                 // E[p_tau^k p_tau^l | K != 0], diagonal = p_sq_mean
  double inv_k_mean = 0.0;        // E[1/K | K != 0]
  double discard_probability = 0.0;  // P(K = 0)
};

/// Exact conditional expectations by enumerating all 2^N completeness
/// patterns weighted by prod q_k / (1-q_k).
inline SchemeAExpectations scheme_a_enumerate(const std::vector<double>& p,
                                              const std::vector<double>& q) {
  const std::size_t n = p.size();
  if (n == 0 || n != q.size()) throw std::invalid_argument("scheme_a_enumerate: bad inputs");
  if (n > 24) throw std::invalid_argument("scheme_a_enumerate: enumeration limited to N <= 24");
  SchemeAExpectations out;
  out.p_mean.assign(n, 0.0);
  out.p_sq_mean.assign(n, 0.0);
  out.cross_mean = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  double p_none = 1.0;
  for (double qk : q) p_none *= 1.0 - qk;
  out.discard_probability = p_none;
  const double norm = 1.0 - p_none;
  if (norm <= 0.0) throw std::domain_error("scheme_a_enumerate: K = 0 almost surely");

  std::vector<double> p_tau(n);
  const std::uint64_t patterns = std::uint64_t{1} << n;
  for (std::uint64_t mask = 1; mask < patterns; ++mask) {
    double w = 1.0;
    int complete = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const bool c = (mask >> k) & 1u;
      w *= c ? q[k] : 1.0 - q[k];
      complete += c;
    }
    if (w == 0.0) continue;
    w /= norm;
    const double scale = static_cast<double>(n) / complete;
    for (std::size_t k = 0; k < n; ++k) {
      p_tau[k] = ((mask >> k) & 1u) ? scale * p[k] : 0.0;
      out.p_mean[k] += w * p_tau[k];
    }
    out.inv_k_mean += w / complete;
    for (std::size_t k = 0; k < n; ++k) {
      if (p_tau[k] == 0.0) continue;
      for (std::size_t l = 0; l < n; ++l) {
        out.cross_mean(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) +=
            w * p_tau[k] * p_tau[l];
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    out.p_sq_mean[k] = out.cross_mean(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  }
  return out;
}

/// E[1/K | K != 0] for homogeneous completion probability q, via the
/// binomial sum sum_i (1/i) C(N,i) q^i (1-q)^(N-i) / (1 - (1-q)^N).
inline double scheme_a_inv_k_closed(int n, double q) {
  if (n < 1 || q <= 0.0 || q > 1.0) throw std::invalid_argument("scheme_a_inv_k_closed: bad inputs");
  const double none = std::pow(1.0 - q, n);
  double acc = 0.0;
  for (int i = 1; i <= n; ++i) {
    double binom = 1.0;
    for (int j = 0; j < i; ++j) binom = binom * (n - j) / (j + 1);
    acc += binom * std::pow(q, i) * std::pow(1.0 - q, n - i) / i;
  }
  return acc / (1.0 - none);
}

/// Homogeneous closed form: E[(p_tau^k)^2 | K != 0] = N (p^k)^2 E[1/K | K != 0].
inline double scheme_a_p_sq_closed(int n, double q, double p_k) {
  return n * p_k * p_k * scheme_a_inv_k_closed(n, q);
}

/// Heterogeneous closed forms for the pattern where client k0 always
/// completes and every other client completes with probability q.
inline double scheme_a_hetero_k0_closed(double p_k0, double q, int n) {
  return p_k0 * (1.0 - std::pow(1.0 - q, n)) / q;
}
inline double scheme_a_hetero_rest_closed(double p_k, double q, int n) {
  return p_k * (n * q + std::pow(1.0 - q, n) - 1.0) / ((n - 1.0) * q);
}

/// The coefficient functionals reported for Schemes B and C.
struct SchemeExpectationTable {
  double sum_p = 0.0;
  double sum_p_sq = 0.0;
  double sum_p_sq_s = 0.0;
  double sum_p_times_sum_ps = 0.0;
  bool exact = true;
};

inline SchemeExpectationTable scheme_bc_expectation_table(Scheme scheme,
                                                          const std::vector<double>& p,
                                                          const std::vector<ParticipationModel>& models,
                                                          int epochs,
                                                          const ExpectationOptions& opt = {}) {
  if (scheme == Scheme::A) {
    throw std::invalid_argument("scheme_bc_expectation_table: use scheme_a_enumerate for Scheme A");
  }
  const auto ex = compute_scheme_expectations(scheme, p, models, epochs, opt);
  return {ex.sum_p, ex.sum_p_sq, ex.sum_p_sq_s, ex.sum_p_times_sum_ps, ex.exact};
}

}  // namespace fedflex
