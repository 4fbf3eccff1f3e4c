#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace fedflex {

/// Map a completion fraction in [0, 1] to an epoch count in {0..E}.
inline int epochs_from_fraction(double fraction, int epochs) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw std::invalid_argument("epochs_from_fraction: fraction outside [0, 1]");
  }
  if (epochs < 1) throw std::invalid_argument("epochs_from_fraction: E must be >= 1");
  const long r = std::lround(fraction * epochs);
  return static_cast<int>(std::clamp<long>(r, 0, epochs));
}

/// Distribution of the per-round completed-epoch count s in {0..E}.
///
/// Kinds:
///  - always_full: s = E surely.
///  - bernoulli_epochs(q): each of the E epoch slots completes independently
///    with probability q, so s ~ Bin(E, q).
///  - fraction_trace: s = round(f * E) for a fraction f drawn uniformly from
///    a recorded trace.
///  - categorical: explicit probabilities over {0..E}.
class ParticipationModel {
 public:
  enum class Kind { AlwaysFull, BernoulliEpochs, FractionTrace, Categorical };

  static ParticipationModel always_full(int epochs) {
    ParticipationModel m(Kind::AlwaysFull, epochs);
    return m;
  }

  static ParticipationModel bernoulli_epochs(double q, int epochs) {
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("bernoulli_epochs: q outside [0, 1]");
    ParticipationModel m(Kind::BernoulliEpochs, epochs);
    m.q_ = q;
    return m;
  }

  static ParticipationModel fraction_trace(std::vector<double> fractions, int epochs) {
    if (fractions.empty()) throw std::invalid_argument("fraction_trace: empty trace");
    for (double f : fractions) {
      if (f < 0.0 || f > 1.0) throw std::invalid_argument("fraction_trace: fraction outside [0, 1]");
    }
    ParticipationModel m(Kind::FractionTrace, epochs);
    m.fractions_ = std::move(fractions);
    return m;
  }

  static ParticipationModel categorical(std::vector<double> probs) {
    if (probs.size() < 2) throw std::invalid_argument("categorical: need probabilities for {0..E}");
    double sum = 0.0;
    for (double p : probs) {
      if (p < 0.0) throw std::invalid_argument("categorical: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument("categorical: probabilities must sum to 1");
    }
    ParticipationModel m(Kind::Categorical, static_cast<int>(probs.size()) - 1);
    m.probs_ = std::move(probs);
    return m;
  }

  Kind kind() const { return kind_; }
  int epochs() const { return epochs_; }
  double bernoulli_q() const { return q_; }
  const std::vector<double>& trace() const { return fractions_; }

  /// Exact pmf over {0..E}. Traces report the empirical histogram of their
  /// mapped epoch counts.
  std::vector<double> pmf() const {
    std::vector<double> p(static_cast<std::size_t>(epochs_) + 1, 0.0);
    switch (kind_) {
      case Kind::AlwaysFull:
        p.back() = 1.0;
        break;
      case Kind::BernoulliEpochs: {
        // Bin(E, q) by the multiplicative recurrence on C(E, s).
        double coeff = std::pow(1.0 - q_, epochs_);
        if (q_ >= 1.0) {
          p.back() = 1.0;
          break;
        }
        const double ratio = q_ / (1.0 - q_);
        for (int s = 0; s <= epochs_; ++s) {
          p[static_cast<std::size_t>(s)] = coeff;
          coeff *= ratio * static_cast<double>(epochs_ - s) / static_cast<double>(s + 1);
        }
        break;
      }
      case Kind::FractionTrace: {
        const double w = 1.0 / static_cast<double>(fractions_.size());
        for (double f : fractions_) p[static_cast<std::size_t>(epochs_from_fraction(f, epochs_))] += w;
        break;
      }
      case Kind::Categorical:
        p = probs_;
        break;
    }
    return p;
  }

  double completion_probability() const { return pmf().back(); }  // P(s = E)
  double inactive_probability() const { return pmf().front(); }   // P(s = 0)

  double mean_epochs() const {
    const auto p = pmf();
    double m = 0.0;
    for (std::size_t s = 0; s < p.size(); ++s) m += p[s] * static_cast<double>(s);
    return m;
  }

  /// Draw s by CDF inversion; exact for every kind.
  int sample(RngStream& rng) const {
    if (kind_ == Kind::AlwaysFull) return epochs_;
    if (kind_ == Kind::FractionTrace) {
      const auto i = rng.uniform_index(fractions_.size());
      return epochs_from_fraction(fractions_[static_cast<std::size_t>(i)], epochs_);
    }
    const auto p = pmf();
    double u = rng.uniform();
    for (std::size_t s = 0; s + 1 < p.size(); ++s) {
      if (u < p[s]) return static_cast<int>(s);
      u -= p[s];
    }
    return epochs_;
  }

 private:
  ParticipationModel(Kind kind, int epochs) : kind_(kind), epochs_(epochs) {
    if (epochs < 1) throw std::invalid_argument("participation model: E must be >= 1");
  }

  Kind kind_;
  int epochs_;
  double q_ = 0.0;
  std::vector<double> fractions_;
  std::vector<double> probs_;
};

/// Realized participation of one round: per-client epoch counts plus the
/// completeness/inactivity summary the aggregation schemes need.
struct RoundParticipation {
  std::vector<int> s;              // completed epochs per client
  std::vector<std::uint8_t> complete;  // s == E
  int complete_count = 0;          // K
  bool any_inactive = false;       // exists k with s = 0
  int epochs = 0;                  // E shared by all models
};

/// Sample one round. Each client draws from its own model on a substream
/// keyed by (seed, round, client), so the result is reproducible and
/// independent of evaluation order.
inline RoundParticipation sample_round(const std::vector<ParticipationModel>& models,
                                       long round, const RngStream& base) {
  if (models.empty()) throw std::invalid_argument("sample_round: no models");
  const int epochs = models.front().epochs();
  for (const auto& m : models) {
    if (m.epochs() != epochs) throw std::invalid_argument("sample_round: models disagree on E");
  }
  RoundParticipation part;
  part.epochs = epochs;
  part.s.resize(models.size());
  part.complete.resize(models.size());
  for (std::size_t k = 0; k < models.size(); ++k) {
    RngStream stream = base.child(0x706172u /* participation */, static_cast<std::uint64_t>(round), k);
    const int s = models[k].sample(stream);
    part.s[k] = s;
    part.complete[k] = (s == epochs) ? 1 : 0;
    part.complete_count += part.complete[k];
    part.any_inactive = part.any_inactive || (s == 0);
  }
  return part;
}

/// True iff all clients share the same distribution over {0..E}.
inline bool homogeneous(const std::vector<ParticipationModel>& models) {
  if (models.size() <= 1) return true;
  const auto ref = models.front().pmf();
  for (std::size_t k = 1; k < models.size(); ++k) {
    const auto p = models[k].pmf();
    if (p.size() != ref.size()) return false;
    for (std::size_t s = 0; s < p.size(); ++s) {
      if (std::abs(p[s] - ref[s]) > 1e-12) return false;
    }
  }
  return true;
}

}  // namespace fedflex
