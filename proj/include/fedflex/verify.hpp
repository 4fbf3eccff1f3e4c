#pragma once

#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "analysis.hpp"
#include "trainer.hpp"

namespace fedflex {

/// Kahan-compensated accumulator; keeps reductions deterministic to roundoff
/// regardless of how many replicas contributed before a given index.
class CompensatedSum {
 public:
  void add(double x) {
    const double y = x - c_;
    const double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

struct NamedCheck {
  std::string name;
  bool pass = true;
  std::string detail;
};

struct BoundCheckRow {
  long round = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
  double bound = 0.0;
  double margin = 0.0;  // bound + 3 stderr - mean
};

struct BoundReport {
  BoundConstants constants;
  std::vector<BoundCheckRow> rounds;
  std::vector<NamedCheck> checks;
  bool pass = true;
  long first_violation = -1;
  // The gradient bound G only covers the declared region; iterates straying
  // outside are noted (ratio of the farthest iterate to the region radius).
  double region_radius = 0.0;
  double max_dist_ratio = 0.0;
  bool left_region = false;
};

struct VerifyOptions {
  int replicas = 200;
  double gamma_scale = 1.0;  // != 1 deliberately corrupts the constants
  int jobs = 1;
  BoundConstantsOptions constants;
};

/// Run seeded replicas under the schedule the constants dictate and check the
/// per-round replica mean of |w_tauE - w*|^2 against the bound curve with
/// three standard errors of slack. The constants must also satisfy their own
/// defining identities and learning-rate caps; those run as named checks
/// alongside the curve comparison.
inline BoundReport verify_bound(const Federation& fed, Scheme scheme,
                                const std::vector<ParticipationModel>& models, int epochs,
                                long rounds, const Vec& w0, std::uint64_t seed,
                                const VerifyOptions& opt = {}) {
  BoundReport report;
  report.constants = bound_constants_for(fed, scheme, models, epochs, w0, opt.constants);
  BoundConstants& c = report.constants;
  if (opt.gamma_scale != 1.0) {
    c.gamma *= opt.gamma_scale;
    c.v_init_term = c.gamma * c.gamma * c.initial_dist_sq;
    c.v_const = std::max(c.v_init_term, c.v_noise_term);
  }

  // Constants self-consistency.
  {
    const double E = static_cast<double>(epochs);
    const double expected_gamma =
        std::max(32.0 * E * (1.0 + c.theta) * c.smoothness / (c.mu * c.ews),
                 4.0 * E * E * c.theta / c.ews);
    const bool ok = std::abs(c.gamma - expected_gamma) <= 1e-9 * expected_gamma;
    report.checks.push_back({"gamma-definition", ok,
                             ok ? "gamma matches its defining maximum"
                                : "gamma deviates from its defining maximum"});
  }
  {
    const double eta0 = c.schedule_eta(0);
    const bool ok = eta0 <= c.eta_cap_smooth() * (1.0 + 1e-9) &&
                    eta0 <= c.eta_cap_epoch() * (1.0 + 1e-9);
    report.checks.push_back({"lr-caps", ok,
                             ok ? "eta_0 respects 1/(2(1+theta)L) and 4/(mu E theta)"
                                : "eta_0 exceeds a schedule cap"});
  }

  // Replica campaign. dist[r][tau] = |w_{tau E} - w*|^2 for replica r.
  const auto n_rounds = static_cast<std::size_t>(rounds);
  std::vector<std::vector<double>> dist(static_cast<std::size_t>(opt.replicas));
  TrainingConfig cfg;
  cfg.epochs = epochs;
  cfg.rounds = rounds;
  cfg.scheme = scheme;
  cfg.lr = LrSchedule::from_constants(c);
  cfg.w0 = w0;
  RngStream seeder(seed);

  const auto run_replica = [&](int r) {
    TrainingConfig rc = cfg;
    rc.seed = seeder.child(static_cast<std::uint64_t>(r)).next_u64();
    const TrainingRun run = run_training(fed, rc, models);
    auto& d = dist[static_cast<std::size_t>(r)];
    d.resize(n_rounds + 1);
    d[0] = (cfg.w0.size() ? (cfg.w0 - fed.optimum()).squaredNorm()
                          : fed.optimum().squaredNorm());
    for (std::size_t t = 0; t < n_rounds; ++t) d[t + 1] = run.records[t].dist_sq;
  };

  if (opt.jobs > 1) {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min(opt.jobs, opt.replicas);
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (int r = next.fetch_add(1); r < opt.replicas; r = next.fetch_add(1)) run_replica(r);
      });
    }
    for (auto& th : pool) th.join();
  } else {
    for (int r = 0; r < opt.replicas; ++r) run_replica(r);
  }

  report.region_radius = c.region_radius;
  double max_dist_sq = 0.0;
  for (const auto& d : dist) {
    for (double v : d) max_dist_sq = std::max(max_dist_sq, v);
  }
  report.max_dist_ratio = std::sqrt(max_dist_sq) / c.region_radius;
  report.left_region = report.max_dist_ratio > 1.0;

  const auto curve = bound_curve(c, c.biased ? 1 : 0, rounds);
  report.rounds.resize(n_rounds + 1);
  bool curve_ok = true;
  for (std::size_t t = 0; t <= n_rounds; ++t) {
    CompensatedSum m1, m2;
    for (int r = 0; r < opt.replicas; ++r) {  // fixed replica order
      const double v = dist[static_cast<std::size_t>(r)][t];
      m1.add(v);
      m2.add(v * v);
    }
    const double mean = m1.value() / opt.replicas;
    const double var = std::max(0.0, m2.value() / opt.replicas - mean * mean);
    const double se = opt.replicas > 1 ? std::sqrt(var / opt.replicas) : 0.0;
    auto& row = report.rounds[t];
    row.round = static_cast<long>(t);
    row.mean = mean;
    row.stderr_ = se;
    row.bound = curve[t];
    row.margin = row.bound + 3.0 * se - mean;
    if (row.margin < 0.0 && curve_ok) {
      curve_ok = false;
      report.first_violation = row.round;
    }
  }
  report.checks.push_back({"bound-inequality", curve_ok,
                           curve_ok ? "replica mean stays below the bound curve"
                                    : "mean exceeds bound + 3 stderr at round " +
                                          std::to_string(report.first_violation)});

  report.pass = true;
  for (const auto& chk : report.checks) report.pass = report.pass && chk.pass;
  return report;
}

// ---------------------------------------------------------------------------
// Empirical checks of the two per-round inequalities behind the bound: the
// aggregate gradient-variance bound and the local-global divergence bound.
// ---------------------------------------------------------------------------

struct InequalityCheckReport {
  NamedCheck grad_variance;
  NamedCheck divergence;
  double grad_variance_ratio = 0.0;  // empirical mean lhs / mean rhs
  double divergence_ratio = 0.0;     // worst step index ratio
  long rounds = 0;
};

/// Sample rounds from the participation models and check, at `slack`
/// tolerance on the round-averaged values:
///   E| sum_k p_tau^k (g^k - gbar^k) |^2  <=  sum_k (p_tau^k)^2 sigma_k^2
///   E[ sum_k p_tau^k |wbar_i - w_i^k|^2 ]
///     <= (E-1) G^2 eta^2 (sum p s + (sum p - 2)_+ sum (p^2/p^k) s)
/// with the realized epoch counts on the right-hand sides.
inline InequalityCheckReport inequality_checks(const Federation& fed, Scheme scheme,
                                     const std::vector<ParticipationModel>& models, int epochs,
                                     long rounds, std::uint64_t seed, double slack = 0.05,
                                     double region_radius = 0.0) {
  InequalityCheckReport report;
  report.rounds = rounds;
  const Vec& w_star = fed.optimum();
  double radius = region_radius > 0.0 ? region_radius : 1.0 + w_star.norm();
  const auto fc = compute_constants(fed, radius);
  const double theta = scheme_theta(scheme, static_cast<int>(fed.size()), epochs);
  // Step size small enough that E local steps cannot leave the declared
  // region from a start inside 0.4 radius.
  const double eta = std::min({1.0 / (2.0 * (1.0 + theta) * fc.smoothness),
                               4.0 / (fc.strong_convexity * epochs * theta),
                               0.3 * radius / (epochs * fc.grad_bound)});
  const double g2 = fc.grad_bound * fc.grad_bound;

  RngStream base(seed);
  CompensatedSum var_lhs, var_rhs;
  std::vector<CompensatedSum> div_lhs(static_cast<std::size_t>(epochs));
  CompensatedSum div_rhs;
  std::vector<Vec> local(fed.size());
  std::vector<int> steps_done(fed.size());

  for (long t = 0; t < rounds; ++t) {
    const auto part = sample_round(models, t, base);
    const auto coeffs = coefficients(scheme, fed.weights(), part, epochs);
    if (coeffs.discarded) continue;

    Vec dir(fed.dim());
    auto wrng = base.child(0x77u, static_cast<std::uint64_t>(t));
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = wrng.gaussian();
    const Vec w0 = w_star + (0.4 * radius * wrng.uniform() / dir.norm()) * dir;

    // Gradient-variance inequality at the synchronized weight.
    Vec dev = Vec::Zero(fed.dim());
    double rhs = 0.0;
    for (std::size_t k = 0; k < fed.size(); ++k) {
      auto grng = base.child(0x6776u, static_cast<std::uint64_t>(t), k);
      const Vec g = fed.client(k).stochastic_gradient(w0, grng);
      dev += coeffs.p_tau[k] * (g - fed.client(k).full_gradient(w0));
      rhs += coeffs.p_tau[k] * coeffs.p_tau[k] * fc.per_client[k].noise * fc.per_client[k].noise;
    }
    var_lhs.add(dev.squaredNorm());
    var_rhs.add(rhs);

    // Local-global divergence along the round.
    double sum_ps = 0.0, sum_p = 0.0, ratio_s = 0.0;
    for (std::size_t k = 0; k < fed.size(); ++k) {
      local[k] = w0;
      steps_done[k] = 0;
      sum_ps += coeffs.p_tau[k] * part.s[k];
      sum_p += coeffs.p_tau[k];
      if (fed.weights()[k] > 0.0) {
        ratio_s += coeffs.p_tau[k] * coeffs.p_tau[k] / fed.weights()[k] * part.s[k];
      }
    }
    div_rhs.add((epochs - 1.0) * g2 * eta * eta *
                (sum_ps + std::max(0.0, sum_p - 2.0) * ratio_s));
    Vec wbar = w0;
    for (int i = 0; i < epochs; ++i) {
      double lhs_i = 0.0;
      for (std::size_t k = 0; k < fed.size(); ++k) {
        lhs_i += coeffs.p_tau[k] * (wbar - local[k]).squaredNorm();
      }
      div_lhs[static_cast<std::size_t>(i)].add(lhs_i);
      Vec step = Vec::Zero(fed.dim());
      for (std::size_t k = 0; k < fed.size(); ++k) {
        if (steps_done[k] < part.s[k]) {
          auto srng = base.child(0x7364u, static_cast<std::uint64_t>(t),
                                 k * 1000 + static_cast<std::size_t>(i));
          const Vec g = fed.client(k).stochastic_gradient(local[k], srng);
          local[k] -= eta * g;
          step += coeffs.p_tau[k] * g;
          ++steps_done[k];
        }
      }
      wbar -= eta * step;
    }
  }

  const double mean_var_lhs = var_lhs.value() / rounds;
  const double mean_var_rhs = var_rhs.value() / rounds;
  report.grad_variance_ratio = mean_var_rhs > 0.0 ? mean_var_lhs / mean_var_rhs : 0.0;
  const bool var_ok = mean_var_rhs > 0.0 ? report.grad_variance_ratio <= 1.0 + slack
                                         : mean_var_lhs <= 1e-15;
  report.grad_variance = {"gradient-variance", var_ok,
                          "mean ratio " + std::to_string(report.grad_variance_ratio)};

  const double mean_div_rhs = div_rhs.value() / rounds;
  double worst = 0.0;
  for (const auto& acc : div_lhs) {
    worst = std::max(worst, acc.value() / rounds);
  }
  report.divergence_ratio = mean_div_rhs > 0.0 ? worst / mean_div_rhs : 0.0;
  const bool div_ok =
      mean_div_rhs > 0.0 ? report.divergence_ratio <= 1.0 + slack : worst <= 1e-15;
  report.divergence = {"local-global-divergence", div_ok,
                       "worst step ratio " + std::to_string(report.divergence_ratio)};
  return report;
}

}  // namespace fedflex
