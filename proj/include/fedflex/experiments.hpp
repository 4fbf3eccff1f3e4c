#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "membership.hpp"
#include "trainer.hpp"

namespace fedflex {

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_long(const std::vector<long>& v) {
  return median(std::vector<double>(v.begin(), v.end()));
}

// ---------------------------------------------------------------------------
// Arrival rebound experiment.
// ---------------------------------------------------------------------------

/// Rounds after tau0 until the loss against the shifted objective returns to
/// the pre-arrival loss level (measured at tau0 - 1 against the old
/// objective). A run that never rebounds is censored at T - tau0 + 1.
inline long rebound_rounds(const TrainingRun& run, long tau0) {
  if (tau0 < 1 || static_cast<std::size_t>(tau0) >= run.records.size()) {
    throw std::invalid_argument("rebound_rounds: arrival round outside the run");
  }
  const double target = run.records[static_cast<std::size_t>(tau0) - 1].global_loss;
  for (std::size_t t = static_cast<std::size_t>(tau0); t < run.records.size(); ++t) {
    if (run.records[t].global_loss <= target) return static_cast<long>(t) - tau0;
  }
  return static_cast<long>(run.records.size()) - tau0 + 1;
}

struct ReboundCampaign {
  long tau0 = 0;
  std::vector<long> boosted;    // rebound rounds per seed, boosted aggregation
  std::vector<long> vanilla;    // same without the boost
  double median_boosted = 0.0;
  double median_vanilla = 0.0;
  double median_advantage = 0.0;  // vanilla - boosted, per-seed median
};

/// Run the same arrival twice per seed (with and without coefficient
/// boosting) and report rebound rounds.
inline ReboundCampaign arrival_rebound_campaign(const Federation& fed,
                                                const std::vector<ParticipationModel>& models,
                                                TrainingConfig cfg, ArrivalEvent arrival, long tau0,
                                                const std::vector<std::uint64_t>& seeds) {
  ReboundCampaign out;
  out.tau0 = tau0;
  std::vector<double> advantage;
  for (const auto seed : seeds) {
    cfg.seed = seed;
    MembershipEvent ev;
    ev.round = tau0;
    ev.action = arrival;
    const auto boosted_run = run_training(fed, cfg, models, {ev});

    ArrivalEvent plain = arrival;
    plain.boost_delta0 = 0.0;
    ev.action = std::move(plain);
    const auto vanilla_run = run_training(fed, cfg, models, {ev});

    out.boosted.push_back(rebound_rounds(boosted_run, tau0));
    out.vanilla.push_back(rebound_rounds(vanilla_run, tau0));
    advantage.push_back(static_cast<double>(out.vanilla.back() - out.boosted.back()));
  }
  out.median_boosted = median_long(out.boosted);
  out.median_vanilla = median_long(out.vanilla);
  out.median_advantage = median(advantage);
  return out;
}

// ---------------------------------------------------------------------------
// Departure crossing experiment.
// ---------------------------------------------------------------------------

struct CrossingCampaign {
  long tau0 = 0;
  std::vector<long> crossing;  // rounds after tau0 until exclude <= include
  double median_crossing = 0.0;
  DeparturePolicy recommended = DeparturePolicy::Include;
};

/// Train the include and exclude variants of the same departure and report
/// when the exclude loss curve dips under the include one. Each variant is
/// measured against its own objective (the retained one for include, the
/// shifted one for exclude).
inline CrossingCampaign departure_crossing_campaign(const Federation& fed,
                                                    const std::vector<ParticipationModel>& models,
                                                    TrainingConfig cfg, std::size_t client,
                                                    long tau0,
                                                    const std::vector<std::uint64_t>& seeds) {
  if (tau0 < 1 || tau0 >= cfg.rounds) {
    throw std::invalid_argument("departure_crossing_campaign: tau0 outside the run");
  }
  CrossingCampaign out;
  out.tau0 = tau0;
  out.recommended = decide_departure(fed, models, cfg, client, tau0,
                                     cfg.w0.size() ? cfg.w0 : Vec::Zero(fed.dim()));
  for (const auto seed : seeds) {
    cfg.seed = seed;
    MembershipEvent ev;
    ev.round = tau0;
    ev.action = DepartureEvent{client, DeparturePolicy::Include};
    const auto include_run = run_training(fed, cfg, models, {ev});
    ev.action = DepartureEvent{client, DeparturePolicy::Exclude};
    const auto exclude_run = run_training(fed, cfg, models, {ev});

    long crossing = cfg.rounds - tau0 + 1;  // censored
    for (std::size_t t = static_cast<std::size_t>(tau0); t < exclude_run.records.size(); ++t) {
      if (exclude_run.records[t].global_loss <= include_run.records[t].global_loss) {
        crossing = static_cast<long>(t) - tau0;
        break;
      }
    }
    out.crossing.push_back(crossing);
  }
  out.median_crossing = median_long(out.crossing);
  return out;
}

// ---------------------------------------------------------------------------
// Scheme comparison experiment.
// ---------------------------------------------------------------------------

struct SchemeComparisonCell {
  Scheme scheme = Scheme::A;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  double final_dist_sq = 0.0;
};

struct SchemeComparisonLevel {
  std::string name;
  std::vector<SchemeComparisonCell> cells;
  // mean final loss per scheme, indexed by scheme order in `schemes`
  std::vector<double> mean_final_loss;
};

inline SchemeComparisonLevel compare_schemes_level(const Federation& fed,
                                                   const std::vector<ParticipationModel>& models,
                                                   TrainingConfig cfg,
                                                   const std::vector<Scheme>& schemes,
                                                   const std::vector<std::uint64_t>& seeds,
                                                   std::string name) {
  SchemeComparisonLevel level;
  level.name = std::move(name);
  level.mean_final_loss.assign(schemes.size(), 0.0);
  for (std::size_t si = 0; si < schemes.size(); ++si) {
    for (const auto seed : seeds) {
      cfg.scheme = schemes[si];
      cfg.seed = seed;
      const auto run = run_training(fed, cfg, models);
      SchemeComparisonCell cell;
      cell.scheme = schemes[si];
      cell.seed = seed;
      cell.final_loss = run.records.empty() ? 0.0 : run.records.back().global_loss;
      cell.final_dist_sq = run.records.empty() ? 0.0 : run.records.back().dist_sq;
      level.mean_final_loss[si] += cell.final_loss / static_cast<double>(seeds.size());
      level.cells.push_back(cell);
    }
  }
  return level;
}

/// Relative improvement of scheme `b` over scheme `a` in percent.
inline double pairwise_improvement(double loss_a, double loss_b) {
  const double denom = std::max(std::abs(loss_a), 1e-300);
  return 100.0 * (loss_a - loss_b) / denom;
}

}  // namespace fedflex
