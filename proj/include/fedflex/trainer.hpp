#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "aggregation.hpp"
#include "analysis.hpp"
#include "membership.hpp"
#include "objectives.hpp"
#include "participation.hpp"

namespace fedflex {

/// Per-round learning rate. The staircase decays as eta0 / tau; the schedule
/// derived from the bound constants is 16E / (mu ews (tau E + gamma)). After
/// an objective shift the round index restarts from the shift round.
struct LrSchedule {
  enum class Kind { Staircase, BoundSchedule };
  Kind kind = Kind::Staircase;
  double eta0 = 0.1;
  double mu = 1.0;
  int epochs = 1;
  double gamma = 1.0;
  double ews = 1.0;

  static LrSchedule staircase(double eta0) {
    if (eta0 <= 0.0) throw std::invalid_argument("staircase schedule: eta0 must be > 0");
    LrSchedule s;
    s.kind = Kind::Staircase;
    s.eta0 = eta0;
    return s;
  }

  static LrSchedule bound_schedule(double mu, int epochs, double gamma, double ews) {
    if (mu <= 0.0 || epochs < 1 || gamma <= 0.0 || ews <= 0.0) {
      throw std::invalid_argument("bound schedule: need mu, gamma, ews > 0 and E >= 1");
    }
    LrSchedule s;
    s.kind = Kind::BoundSchedule;
    s.mu = mu;
    s.epochs = epochs;
    s.gamma = gamma;
    s.ews = ews;
    return s;
  }

  static LrSchedule from_constants(const BoundConstants& c) {
    return bound_schedule(c.mu, c.epochs, c.gamma, c.ews);
  }

  double at(long rounds_since_shift) const {
    if (rounds_since_shift < 0) throw std::invalid_argument("learning rate: negative round");
    if (kind == Kind::Staircase) {
      return eta0 / static_cast<double>(std::max<long>(rounds_since_shift, 1));
    }
    return 16.0 * epochs /
           (mu * ews * (static_cast<double>(rounds_since_shift) * epochs + gamma));
  }
};

struct TrainingConfig {
  int epochs = 1;
  long rounds = 1;
  Scheme scheme = Scheme::B;
  LrSchedule lr = LrSchedule::staircase(0.1);
  std::uint64_t seed = 0;
  bool record_steps = false;  // retain per-step gradients (memory scales with E * N)
  Vec w0;                     // empty: start from the origin
};

struct RoundRecord {
  long round = 0;
  RoundParticipation part;
  RoundCoefficients coeffs;
  double eta = 0.0;
  double dist_sq = 0.0;      // |w_end - w*|^2 against the active objective
  double global_loss = 0.0;  // F(w_end) - F(w*)
  double sum_ps = 0.0;       // realized sum_k p_tau^k s_tau^k
  bool discarded = false;
};

/// Per-step state of one round, enough to replay the virtual averaged
/// sequence. Gradients are stored per client for the first s_k local steps
/// (a client that stops keeps its weight frozen afterwards).
struct RoundStepTrace {
  Vec w_start;
  double eta = 0.0;
  int epochs = 0;
  std::vector<double> p_tau;
  std::vector<std::vector<Vec>> grads;
  Vec w_end;
};

inline Vec local_sgd_path(const LocalObjective& obj, Vec w, int steps, double eta, RngStream& rng,
                          std::vector<Vec>* grads_out) {
  for (int i = 0; i < steps; ++i) {
    Vec g = obj.stochastic_gradient(w, rng);
    w -= eta * g;
    if (grads_out) grads_out->push_back(std::move(g));
  }
  ensure_finite(w, "local_sgd");
  return w;
}

/// `steps` stochastic gradient steps from the synchronized weight;
/// steps = 0 returns the start unchanged.
inline Vec local_sgd(const LocalObjective& obj, const Vec& w_start, int steps, double eta,
                     RngStream& rng) {
  if (steps < 0) throw std::invalid_argument("local_sgd: negative step count");
  if (eta <= 0.0) throw std::invalid_argument("local_sgd: eta must be > 0");
  return local_sgd_path(obj, w_start, steps, eta, rng, nullptr);
}

struct RoundResult {
  Vec w;
  RoundRecord record;
  std::optional<RoundStepTrace> trace;
};

/// One synchronization round: sample participation, run local SGD per client
/// from the broadcast weight, aggregate with the scheme's coefficients. A
/// discarded round (Scheme A, no complete client) leaves the weight alone.
inline RoundResult run_round(const Federation& fed, const std::vector<double>& agg_weights,
                             const std::vector<ParticipationModel>& models, Scheme scheme,
                             int epochs, long round, double eta, const RngStream& base,
                             const Vec& w, bool record_trace = false) {
  if (agg_weights.size() != fed.size() || models.size() != fed.size()) {
    throw std::invalid_argument("run_round: weights/models must match the federation");
  }
  RoundResult out;
  out.record.round = round;
  out.record.eta = eta;
  out.record.part = sample_round(models, round, base);
  out.record.coeffs = coefficients(scheme, agg_weights, out.record.part, epochs);
  out.record.discarded = out.record.coeffs.discarded;

  std::vector<Vec> deltas(fed.size());
  std::optional<RoundStepTrace> trace;
  if (record_trace) {
    trace.emplace();
    trace->w_start = w;
    trace->eta = eta;
    trace->epochs = epochs;
    trace->p_tau = out.record.coeffs.p_tau;
    trace->grads.resize(fed.size());
  }
  for (std::size_t k = 0; k < fed.size(); ++k) {
    RngStream rng = base.child(0x736764u /* local sgd */, static_cast<std::uint64_t>(round), k);
    const int steps = out.record.part.s[k];
    if (steps == 0) {
      deltas[k] = Vec::Zero(w.size());
      continue;
    }
    Vec w_end = local_sgd_path(fed.client(k), w, steps, eta, rng,
                               trace ? &trace->grads[k] : nullptr);
    deltas[k] = w_end - w;
  }

  out.w = out.record.discarded ? w : aggregate(w, deltas, out.record.coeffs);
  if (trace) {
    trace->w_end = out.w;
    out.trace = std::move(trace);
  }
  out.record.dist_sq = (out.w - fed.optimum()).squaredNorm();
  out.record.global_loss = fed.loss_gap(out.w);
  for (std::size_t k = 0; k < fed.size(); ++k) {
    out.record.sum_ps += out.record.coeffs.p_tau[k] * out.record.part.s[k];
  }
  return out;
}

/// Replay the virtual averaged sequence of one recorded round:
/// wbar_{i+1} = wbar_i - eta sum_k p_tau^k g_i^k [i < s_k]. Its endpoint
/// coincides with the aggregated global weight.
inline std::vector<Vec> wbar_sequence(const RoundStepTrace& trace) {
  if (trace.p_tau.size() != trace.grads.size() || trace.w_start.size() == 0) {
    throw std::invalid_argument("wbar_sequence: incomplete step trace");
  }
  std::vector<Vec> path;
  path.reserve(static_cast<std::size_t>(trace.epochs) + 1);
  path.push_back(trace.w_start);
  Vec w = trace.w_start;
  for (int i = 0; i < trace.epochs; ++i) {
    Vec step = Vec::Zero(w.size());
    for (std::size_t k = 0; k < trace.grads.size(); ++k) {
      if (static_cast<std::size_t>(i) < trace.grads[k].size() && trace.p_tau[k] != 0.0) {
        step += trace.p_tau[k] * trace.grads[k][i];
      }
    }
    w -= trace.eta * step;
    path.push_back(w);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Scripted training with arrivals and departures.
// ---------------------------------------------------------------------------

struct ArrivalEvent {
  LocalObjective objective;
  long n_samples = 1;
  double boost_delta0 = 0.0;  // 0: plain admission
  std::optional<ParticipationModel> model;  // default: always_full(E)
};

struct DepartureEvent {
  std::size_t client = 0;
  DeparturePolicy policy = DeparturePolicy::Exclude;
};

struct MembershipEvent {
  long round = 0;
  std::variant<ArrivalEvent, DepartureEvent> action;
};

struct ShiftLog {
  long round = 0;
  bool arrival = false;
  DeparturePolicy applied_policy = DeparturePolicy::Exclude;  // departures only
  ShiftReport report;
};

struct TrainingRun {
  std::vector<RoundRecord> records;
  Vec final_w;
  std::vector<RoundStepTrace> traces;  // only when record_steps
  std::vector<ShiftLog> shifts;
  Federation federation;  // state after all shifts
  std::vector<ParticipationModel> models;
};

namespace detail {

struct BoostState {
  bool active = false;
  std::size_t client = 0;
  double delta0 = 0.0;
  long tau0 = 0;
};

inline ParticipationModel inactive_model(int epochs) {
  std::vector<double> probs(static_cast<std::size_t>(epochs) + 1, 0.0);
  probs[0] = 1.0;
  return ParticipationModel::categorical(probs);
}

}  // namespace detail

inline DeparturePolicy decide_departure(const Federation& fed,
                                        const std::vector<ParticipationModel>& models,
                                        const TrainingConfig& config, std::size_t client,
                                        long tau0, const Vec& w0);

/// Run T rounds, applying membership events between rounds. Objective shifts
/// (arrivals, exclude-departures) restart the learning-rate schedule; an
/// include-departure keeps the objective and simply silences the client.
inline TrainingRun run_training(Federation fed, const TrainingConfig& config,
                                std::vector<ParticipationModel> models,
                                std::vector<MembershipEvent> events = {}) {
  if (config.epochs < 1) throw std::invalid_argument("run_training: E must be >= 1");
  if (config.rounds < 0) throw std::invalid_argument("run_training: negative round count");
  if (models.size() != fed.size()) {
    throw std::invalid_argument("run_training: one participation model per client");
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const MembershipEvent& a, const MembershipEvent& b) { return a.round < b.round; });

  TrainingRun run;
  Vec w = config.w0.size() ? config.w0 : Vec::Zero(fed.dim());
  ensure_same_dim(w, fed.dim(), "run_training initial weight");
  const Vec w0 = w;
  RngStream base(config.seed);
  detail::BoostState boost;
  long shift_round = 0;
  std::size_t next_event = 0;

  for (long tau = 0; tau < config.rounds; ++tau) {
    while (next_event < events.size() && events[next_event].round == tau) {
      const auto& ev = events[next_event++];
      if (const auto* arrival = std::get_if<ArrivalEvent>(&ev.action)) {
        auto [merged, report] = apply_arrival(fed, arrival->objective, arrival->n_samples);
        fed = std::move(merged);
        models.push_back(arrival->model ? *arrival->model
                                        : ParticipationModel::always_full(config.epochs));
        run.shifts.push_back({tau, true, DeparturePolicy::Exclude, std::move(report)});
        shift_round = tau;
        if (arrival->boost_delta0 > 0.0) {
          boost = {true, fed.size() - 1, arrival->boost_delta0, tau};
        }
      } else {
        const auto& dep = std::get<DepartureEvent>(ev.action);
        DeparturePolicy policy = dep.policy;
        if (policy == DeparturePolicy::Auto) {
          policy = decide_departure(fed, models, config, dep.client, tau, w0);
        }
        if (policy == DeparturePolicy::Exclude) {
          auto [rest, report] = apply_departure_exclude(fed, dep.client);
          fed = std::move(rest);
          models.erase(models.begin() + static_cast<std::ptrdiff_t>(dep.client));
          run.shifts.push_back({tau, false, policy, std::move(report)});
          shift_round = tau;
          if (boost.active) {
            if (boost.client == dep.client) boost.active = false;
            else if (boost.client > dep.client) --boost.client;
          }
        } else {
          run.shifts.push_back({tau, false, policy, departure_include_report(fed, dep.client)});
          models[dep.client] = detail::inactive_model(config.epochs);
        }
      }
    }

    const double eta = config.lr.at(tau - shift_round);
    std::vector<double> agg_weights = fed.weights();
    if (boost.active) {
      agg_weights[boost.client] =
          boosted_coefficient(agg_weights[boost.client], boost.delta0, tau, boost.tau0);
    }
    RoundResult res = run_round(fed, agg_weights, models, config.scheme, config.epochs, tau, eta,
                                base, w, config.record_steps);
    w = std::move(res.w);
    run.records.push_back(std::move(res.record));
    if (res.trace) run.traces.push_back(std::move(*res.trace));
  }

  run.final_w = std::move(w);
  run.federation = std::move(fed);
  run.models = std::move(models);
  return run;
}

/// Bound constants for the two departure options: `with` keeps the federation
/// but silences the client (its weighted-epoch expectation drops to zero, so
/// the bias term engages); `without` restarts from the shifted objective with
/// the initial distance inflated by the optimum offset.
struct DepartureBoundPair {
  BoundConstants with;
  BoundConstants without;
  ShiftReport shift;
};

inline DepartureBoundPair departure_bound_pair(const Federation& fed,
                                               const std::vector<ParticipationModel>& models,
                                               const TrainingConfig& config, std::size_t client,
                                               long tau0, const Vec& w0) {
  DepartureBoundPair pair;
  auto models_with = models;
  models_with[client] = detail::inactive_model(config.epochs);
  pair.with = bound_constants_for(fed, config.scheme, models_with, config.epochs, w0);

  auto preview = apply_departure_exclude(fed, client);
  pair.shift = preview.second;
  auto models_without = models;
  models_without.erase(models_without.begin() + static_cast<std::ptrdiff_t>(client));
  BoundConstantsOptions opts;
  const double dist_at_shift =
      pair.with.v_const / (static_cast<double>(tau0) * config.epochs + pair.with.gamma);
  const double restart = std::sqrt(dist_at_shift) + pair.shift.offset;
  opts.initial_dist_sq_override = restart * restart;
  pair.without = bound_constants_for(preview.first, config.scheme, models_without, config.epochs,
                                   w0, opts);
  return pair;
}

/// Include/exclude call for a departure at tau0: compares the biased bound
/// of keeping the silent client against the restarted bound of dropping it.
inline DeparturePolicy decide_departure(const Federation& fed,
                                        const std::vector<ParticipationModel>& models,
                                        const TrainingConfig& config, std::size_t client,
                                        long tau0, const Vec& w0) {
  const auto pair = departure_bound_pair(fed, models, config, client, tau0, w0);
  return departure_decision(pair.with, pair.without, tau0, config.rounds);
}

}  // namespace fedflex
