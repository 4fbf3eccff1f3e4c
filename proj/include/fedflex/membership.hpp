#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "analysis.hpp"
#include "objectives.hpp"

namespace fedflex {

/// Outcome of an objective shift. `offset` is |w* - w~*| and `bound` the
/// analytic cap (2 sqrt(2L) / mu) * weight * sqrt(gap) that must dominate it
/// on every constructed instance.
struct ShiftReport {
  Vec w_star_old;
  Vec w_star_new;
  double offset = 0.0;
  double bound = 0.0;
  double gamma_l = 0.0;        // F_l(w*) - F_l^*
  double gamma_l_tilde = 0.0;  // F_l(w~*) - F_l^*
};

namespace detail {

inline std::pair<double, double> federation_lmu(const Federation& fed) {
  double L = 0.0;
  double mu = std::numeric_limits<double>::infinity();
  for (const auto& c : fed.clients()) {
    L = std::max(L, c.smoothness());
    mu = std::min(mu, c.strong_convexity());
  }
  return {L, mu};
}

inline double nonneg_gap(const LocalObjective& obj, const Vec& w) {
  return std::max(0.0, obj.value(w) - obj.min_value());
}

}  // namespace detail

/// Admit a new client with n_l data points. Weights rescale to
/// n_k / (n + n_l) and the optimum moves to w~*, with
/// |w* - w~*| <= (2 sqrt(2L) / mu) * (n_l / (n + n_l)) * sqrt(Gamma_l).
inline std::pair<Federation, ShiftReport> apply_arrival(const Federation& fed,
                                                        LocalObjective incoming, long n_l) {
  if (n_l <= 0) throw std::invalid_argument("apply_arrival: n_l must be positive");
  ShiftReport report;
  report.w_star_old = fed.optimum();
  report.gamma_l = detail::nonneg_gap(incoming, fed.optimum());
  Federation merged = fed.with_client(std::move(incoming), n_l);
  report.w_star_new = merged.optimum();
  report.offset = (report.w_star_new - report.w_star_old).norm();
  const auto [L, mu] = detail::federation_lmu(merged);
  const double weight = merged.weights().back();
  report.bound = 2.0 * std::sqrt(2.0 * L) / mu * weight * std::sqrt(report.gamma_l);
  report.gamma_l_tilde = detail::nonneg_gap(merged.clients().back(), report.w_star_new);
  if (report.offset > report.bound + 1e-9) {
    throw std::runtime_error("apply_arrival: optimum offset exceeds its analytic bound");
  }
  return {std::move(merged), std::move(report)};
}

/// Remove a client and shift the objective. Weights rescale to
/// n_k / (n - n_l); the bound uses the departing client's original weight
/// and its gap at the new optimum.
inline std::pair<Federation, ShiftReport> apply_departure_exclude(const Federation& fed,
                                                                  std::size_t index) {
  if (fed.size() < 2) throw std::invalid_argument("apply_departure: cannot depart the last client");
  if (index >= fed.size()) throw std::invalid_argument("apply_departure: bad client index");
  ShiftReport report;
  report.w_star_old = fed.optimum();
  const auto& leaving = fed.client(index);
  report.gamma_l = detail::nonneg_gap(leaving, fed.optimum());
  Federation rest = fed.without_client(index);
  report.w_star_new = rest.optimum();
  report.offset = (report.w_star_new - report.w_star_old).norm();
  report.gamma_l_tilde = detail::nonneg_gap(leaving, report.w_star_new);
  const auto [L, mu] = detail::federation_lmu(fed);
  report.bound =
      2.0 * std::sqrt(2.0 * L) / mu * fed.weights()[index] * std::sqrt(report.gamma_l_tilde);
  if (report.offset > report.bound + 1e-9) {
    throw std::runtime_error("apply_departure: optimum offset exceeds its analytic bound");
  }
  return {std::move(rest), std::move(report)};
}

/// Departure with the objective kept: the federation is unchanged and the
/// client simply stops participating. The report records a zero offset.
inline ShiftReport departure_include_report(const Federation& fed, std::size_t index) {
  if (index >= fed.size()) throw std::invalid_argument("departure_include_report: bad index");
  ShiftReport report;
  report.w_star_old = fed.optimum();
  report.w_star_new = fed.optimum();
  report.offset = 0.0;
  report.gamma_l = detail::nonneg_gap(fed.client(index), fed.optimum());
  report.gamma_l_tilde = report.gamma_l;
  const auto [L, mu] = detail::federation_lmu(fed);
  report.bound =
      2.0 * std::sqrt(2.0 * L) / mu * fed.weights()[index] * std::sqrt(report.gamma_l_tilde);
  return report;
}

/// Upper bound W on |grad F~|, |grad^2 F~|, |grad F_l| and |grad^2 F_l| over
/// the ball of `radius` around the shifted optimum. Hessian norms are capped
/// by smoothness; gradient suprema use each objective's ball bound.
inline double curvature_bound(const Federation& with_arrival, std::size_t l, double radius) {
  if (l >= with_arrival.size()) throw std::invalid_argument("curvature_bound: bad index");
  const Vec& center = with_arrival.optimum();
  double grad_sum = 0.0;  // sup-ball bound on |grad F~|
  double hess_sum = 0.0;  // |grad^2 F~| <= sum_k p~^k L_k
  for (std::size_t k = 0; k < with_arrival.size(); ++k) {
    const auto& c = with_arrival.client(k);
    grad_sum += with_arrival.weights()[k] * c.gradient_sup_on_ball(center, radius);
    hess_sum += with_arrival.weights()[k] * c.smoothness();
  }
  const auto& arriving = with_arrival.client(l);
  return std::max({grad_sum, hess_sum, arriving.gradient_sup_on_ball(center, radius),
                   arriving.smoothness()});
}

/// Radius of the sphere around the old optimum inside which one extra
/// gradient step on the arriving client's objective is guaranteed to move
/// the model closer to the shifted optimum:
///   (F~(w*) - F~(w~*)) / (((2 sqrt(2L)/mu) p~^l sqrt(Gamma_l) + 1) p~^l W).
inline double fast_reboot_radius(const Federation& with_arrival, std::size_t l, double W) {
  if (l >= with_arrival.size()) throw std::invalid_argument("fast_reboot_radius: bad index");
  if (with_arrival.size() < 2) throw std::invalid_argument("fast_reboot_radius: need N >= 2");
  if (W <= 0.0) throw std::invalid_argument("fast_reboot_radius: W must be positive");
  const Federation before = with_arrival.without_client(l);
  const Vec& w_old = before.optimum();
  const double numerator = with_arrival.value(w_old) - with_arrival.optimum_value();
  const double gamma_l = detail::nonneg_gap(with_arrival.client(l), w_old);
  if (numerator <= 0.0) return 0.0;  // no shift; no reboot needed
  const auto [L, mu] = detail::federation_lmu(with_arrival);
  const double p_l = with_arrival.weights()[l];
  const double factor = 2.0 * std::sqrt(2.0 * L) / mu * p_l * std::sqrt(gamma_l) + 1.0;
  return numerator / (factor * p_l * W);
}

/// Boosted aggregation weight for an arriving client: starts at
/// (1 + delta0) p^l at the arrival round and decays back to p^l
/// quadratically in the rounds since arrival.
inline double boosted_coefficient(double p_l, double delta0, long tau, long tau0) {
  if (tau < tau0) throw std::invalid_argument("boosted_coefficient: tau < tau0");
  const double steps = static_cast<double>(tau - tau0) + 1.0;
  return p_l + delta0 * p_l / (steps * steps);
}

/// Loss-bound comparison for a departure at tau0 with deadline T.
/// Keeping the client makes the bias term grow, f0(tau) =
/// ((tau - tau0) D + V) / (tau E + gamma); dropping it restarts the decay,
/// f1(tau) = V~ / ((tau - tau0) E + gamma~). Exclude wins when even the best
/// f0 over [tau0, T] is no better than f1 at the deadline.
struct DepartureComparison {
  bool exclude = false;
  double min_f0 = 0.0;
  long argmin_f0 = 0;
  double f1_at_deadline = 0.0;
};

inline double departure_f0(const BoundConstants& with, long tau, long tau0) {
  return (static_cast<double>(tau - tau0) * with.bias_gap + with.v_const) /
         (static_cast<double>(tau) * with.epochs + with.gamma);
}

inline double departure_f1(const BoundConstants& without, long tau, long tau0) {
  return without.v_const / (static_cast<double>(tau - tau0) * without.epochs + without.gamma);
}

inline DepartureComparison compare_departure_bounds(const BoundConstants& with,
                                                    const BoundConstants& without, long tau0,
                                                    long deadline) {
  if (tau0 >= deadline) throw std::invalid_argument("compare_departure_bounds: need tau0 < T");
  DepartureComparison cmp;
  cmp.min_f0 = std::numeric_limits<double>::infinity();
  for (long tau = tau0; tau <= deadline; ++tau) {
    const double v = departure_f0(with, tau, tau0);
    if (v < cmp.min_f0) {
      cmp.min_f0 = v;
      cmp.argmin_f0 = tau;
    }
  }
  cmp.f1_at_deadline = departure_f1(without, deadline, tau0);
  cmp.exclude = cmp.min_f0 >= cmp.f1_at_deadline;
  return cmp;
}

enum class DeparturePolicy { Include, Exclude, Auto };

inline DeparturePolicy departure_decision(const BoundConstants& with, const BoundConstants& without,
                                          long tau0, long deadline) {
  return compare_departure_bounds(with, without, tau0, deadline).exclude
             ? DeparturePolicy::Exclude
             : DeparturePolicy::Include;
}

/// Crossing round of f0 and f1 under the simplified assumptions
/// gamma~ = gamma and V~ = V / (tau0 E + gamma) + Gamma_l. Returns the first
/// integer tau >= tau0 with f1(tau) <= f0(tau), or `horizon` + 1 when the
/// curves never meet before the horizon.
inline long simplified_departure_crossing(const BoundConstants& with, double gamma_l, long tau0,
                                          long horizon) {
  BoundConstants without = with;
  without.v_const =
      with.v_const / (static_cast<double>(tau0) * with.epochs + with.gamma) + gamma_l;
  for (long tau = tau0; tau <= horizon; ++tau) {
    if (departure_f1(without, tau, tau0) <= departure_f0(with, tau, tau0)) return tau;
  }
  return horizon + 1;
}

}  // namespace fedflex
