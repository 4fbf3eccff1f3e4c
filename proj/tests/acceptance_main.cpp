// Acceptance harness: runs the end-to-end correctness checks at their stated
// tolerances and prints one PASS/FAIL line per criterion. Exits nonzero when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fedflex/analysis.hpp"
#include "fedflex/experiments.hpp"
#include "fedflex/membership.hpp"
#include "fedflex/trainer.hpp"
#include "fedflex/verify.hpp"

using namespace fedflex;

namespace {

struct CriterionResult {
  bool pass = true;
  std::string detail;
};

struct Failure {
  std::string reason;
};

void expect(bool cond, const std::string& what) {
  if (!cond) throw Failure{what};
}

LocalObjective quadratic_1d(double a, double minimizer, double sigma = 0.0) {
  Mat A(1, 1);
  A << a;
  Vec b(1);
  b << a * minimizer;
  return LocalObjective::quadratic(A, b, 0.5 * a * minimizer * minimizer, sigma);
}

Vec scalar(double x) {
  Vec v(1);
  v << x;
  return v;
}

LocalObjective random_quadratic_client(Eigen::Index dim, double eig_min, double eig_max,
                                       double spread, double sigma, RngStream& rng) {
  Mat gauss(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) gauss(i, j) = rng.gaussian();
  Eigen::HouseholderQR<Mat> qr(gauss);
  Mat Q = qr.householderQ();
  Vec eigs(dim);
  for (Eigen::Index i = 0; i < dim; ++i) eigs[i] = rng.uniform(eig_min, eig_max);
  Mat A = Q * eigs.asDiagonal() * Q.transpose();
  A = 0.5 * (A + A.transpose());
  Vec m(dim);
  for (Eigen::Index i = 0; i < dim; ++i) m[i] = spread * rng.gaussian();
  Vec b = A * m;
  return LocalObjective::quadratic(std::move(A), std::move(b), 0.5 * m.dot(b), sigma);
}

ParticipationModel random_model(int epochs, RngStream& rng, bool allow_inactive) {
  switch (rng.uniform_index(4)) {
    case 0:
      return ParticipationModel::always_full(epochs);
    case 1: {
      const double q = rng.uniform(allow_inactive ? 0.2 : 0.55, 1.0);
      return ParticipationModel::bernoulli_epochs(q, epochs);
    }
    case 2: {
      std::vector<double> probs(static_cast<std::size_t>(epochs) + 1);
      double sum = 0.0;
      for (std::size_t s = 0; s <= static_cast<std::size_t>(epochs); ++s) {
        probs[s] = (s == 0 && !allow_inactive) ? 0.0 : rng.uniform(0.05, 1.0);
        sum += probs[s];
      }
      for (auto& v : probs) v /= sum;
      // Re-normalize exactly.
      double acc = 0.0;
      for (std::size_t s = 0; s + 1 < probs.size(); ++s) acc += probs[s];
      probs.back() = 1.0 - acc;
      return ParticipationModel::categorical(probs);
    }
    default: {
      std::vector<double> fractions;
      const int lines = 20 + static_cast<int>(rng.uniform_index(30));
      for (int i = 0; i < lines; ++i) {
        double f = rng.uniform(allow_inactive ? 0.0 : 0.2, 1.0);
        fractions.push_back(f);
      }
      return ParticipationModel::fraction_trace(fractions, epochs);
    }
  }
}

// ---------------------------------------------------------------------------
// 1. Virtual averaged sequence endpoint equality on random rounds.
// ---------------------------------------------------------------------------
CriterionResult criterion_equivalent_view() {
  RngStream rng(101);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto dim = static_cast<Eigen::Index>(1 + rng.uniform_index(20));
    const int clients = 1 + static_cast<int>(rng.uniform_index(10));
    const int epochs = 1 + static_cast<int>(rng.uniform_index(8));
    const Scheme scheme = static_cast<Scheme>(rep % 3);
    std::vector<LocalObjective> objs;
    std::vector<long> counts;
    for (int k = 0; k < clients; ++k) {
      objs.push_back(random_quadratic_client(dim, 0.5, 4.0, 1.5, rng.uniform(0.0, 1.0), rng));
      counts.push_back(1 + static_cast<long>(rng.uniform_index(50)));
    }
    auto fed = Federation::build(std::move(objs), std::move(counts));
    std::vector<ParticipationModel> models;
    for (int k = 0; k < clients; ++k) models.push_back(random_model(epochs, rng, true));
    Vec w0(dim);
    for (Eigen::Index i = 0; i < dim; ++i) w0[i] = 2.0 * rng.gaussian();
    const auto res = run_round(fed, fed.weights(), models, scheme, epochs, rep,
                               rng.uniform(0.01, 0.2), RngStream(7000 + rep), w0, true);
    const auto path = wbar_sequence(*res.trace);
    const double err = (path.back() - res.w).norm();
    const double tol = 1e-10 * (1.0 + res.w.norm());
    worst = std::max(worst, err / tol);
    expect(err <= tol, "round " + std::to_string(rep) + " endpoint error " + std::to_string(err));
  }
  return {true, "100 rounds, worst error at " + std::to_string(worst) + " of tolerance"};
}

// ---------------------------------------------------------------------------
// 2. Scheme A closed forms against pattern enumeration.
// ---------------------------------------------------------------------------
CriterionResult criterion_scheme_a_oracle() {
  double worst = 0.0;
  for (int n = 2; n <= 12; ++n) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
      p[static_cast<std::size_t>(k)] = 1.0 + 0.37 * k;
      sum += p[static_cast<std::size_t>(k)];
    }
    for (auto& v : p) v /= sum;
    for (int qi = 1; qi <= 9; ++qi) {
      const double q = 0.1 * qi;
      const auto ex = scheme_a_enumerate(p, std::vector<double>(static_cast<std::size_t>(n), q));
      const double inv_k = scheme_a_inv_k_closed(n, q);
      for (int k = 0; k < n; ++k) {
        const double pk = p[static_cast<std::size_t>(k)];
        worst = std::max(worst, std::abs(ex.p_mean[static_cast<std::size_t>(k)] - pk));
        worst = std::max(worst,
                         std::abs(ex.p_sq_mean[static_cast<std::size_t>(k)] - n * pk * pk * inv_k));
      }
      worst = std::max(worst, std::abs(ex.discard_probability - std::pow(1.0 - q, n)));
      // Heterogeneous closed form: client 0 always completes.
      std::vector<double> qs(static_cast<std::size_t>(n), q);
      qs[0] = 1.0;
      const auto hex = scheme_a_enumerate(p, qs);
      worst = std::max(worst, std::abs(hex.p_mean[0] - scheme_a_hetero_k0_closed(p[0], q, n)));
      worst = std::max(worst, std::abs(hex.p_mean[1] - scheme_a_hetero_rest_closed(p[1], q, n)));
      expect(worst <= 1e-12, "closed form deviates by " + std::to_string(worst) + " at N=" +
                                 std::to_string(n) + " q=" + std::to_string(q));
    }
  }
  return {true, "N in {2..12}, q in {0.1..0.9}, worst deviation " + std::to_string(worst)};
}

// ---------------------------------------------------------------------------
// 3. Convergence bound over randomized homogeneous configurations.
// ---------------------------------------------------------------------------
CriterionResult criterion_bound_campaign() {
  RngStream rng(303);
  double worst_margin = std::numeric_limits<double>::infinity();
  for (int conf = 0; conf < 20; ++conf) {
    const auto dim = static_cast<Eigen::Index>(2 + rng.uniform_index(19));
    const int clients = 2 + static_cast<int>(rng.uniform_index(9));
    const int epochs = 1 + static_cast<int>(rng.uniform_index(5));
    const Scheme scheme = (conf % 2 == 0) ? Scheme::B : Scheme::C;
    QuadraticFederationOptions opt;
    opt.dim = dim;
    opt.clients = clients;
    opt.eig_min = rng.uniform(0.4, 0.9);
    opt.eig_max = opt.eig_min + rng.uniform(0.5, 3.0);
    opt.minimizer_spread = rng.uniform(0.3, 1.5);
    opt.sigma = rng.uniform(0.05, 0.5);
    auto fed = random_quadratic_federation(opt, rng);
    const double q = rng.uniform(0.55, 0.95);
    const std::vector<ParticipationModel> models(
        static_cast<std::size_t>(clients), ParticipationModel::bernoulli_epochs(q, epochs));
    Vec w0(dim);
    for (Eigen::Index i = 0; i < dim; ++i) w0[i] = fed.optimum()[i] + rng.gaussian();
    VerifyOptions vopt;
    vopt.replicas = 200;
    const auto report =
        verify_bound(fed, scheme, models, epochs, 300, w0, 40000 + conf, vopt);
    for (const auto& chk : report.checks) {
      expect(chk.pass, "config " + std::to_string(conf) + ": " + chk.name + " (" + chk.detail + ")");
    }
    for (const auto& row : report.rounds) {
      worst_margin = std::min(worst_margin, row.margin / std::max(row.bound, 1e-300));
    }
  }
  std::ostringstream os;
  os << "20 configs x 200 replicas x 300 rounds, min margin/bound " << worst_margin;
  return {true, os.str()};
}

// ---------------------------------------------------------------------------
// 4. Debiasing separation between schemes B and C.
// ---------------------------------------------------------------------------
CriterionResult criterion_debias_separation() {
  auto fed = Federation::build({quadratic_1d(1.0, 1.0, 0.05), quadratic_1d(1.0, -1.0, 0.05)},
                               {1, 1});
  const int epochs = 4;
  // Mean epochs 4 vs 2, never inactive.
  const std::vector<ParticipationModel> models{
      ParticipationModel::always_full(epochs),
      ParticipationModel::categorical({0.0, 0.5, 0.0, 0.5, 0.0}),
  };
  TrainingConfig cfg;
  cfg.epochs = epochs;
  cfg.rounds = 500;
  cfg.lr = LrSchedule::staircase(0.3);
  cfg.w0 = scalar(2.0);
  int wins = 0;
  double mean_b = 0.0, mean_c = 0.0, mean_b_floor = 0.0;
  const int seeds = 50;
  for (int seed = 0; seed < seeds; ++seed) {
    cfg.seed = 9000 + static_cast<std::uint64_t>(seed);
    cfg.scheme = Scheme::B;
    const auto run_b = run_training(fed, cfg, models);
    cfg.scheme = Scheme::C;
    const auto run_c = run_training(fed, cfg, models);
    const double fb = run_b.records.back().dist_sq;
    const double fc = run_c.records.back().dist_sq;
    double floor_b = fb;  // low point of the last quarter of the run
    for (std::size_t t = run_b.records.size() - 125; t < run_b.records.size(); ++t) {
      floor_b = std::min(floor_b, run_b.records[t].dist_sq);
    }
    wins += fc < fb ? 1 : 0;
    mean_b += fb / seeds;
    mean_c += fc / seeds;
    mean_b_floor += floor_b / seeds;
  }
  std::ostringstream os;
  os << "C beats B in " << wins << "/50 seeds; mean finals B=" << mean_b << " C=" << mean_c
     << "; B last-quarter floor " << mean_b_floor;
  expect(wins >= 40, os.str());
  expect(mean_b_floor >= 10.0 * mean_c, os.str());
  return {true, os.str()};
}

// ---------------------------------------------------------------------------
// 5. Objective-shift offsets against their analytic bounds.
// ---------------------------------------------------------------------------
CriterionResult criterion_shift_bounds() {
  {
    auto fed = Federation::build({quadratic_1d(1.0, 0.0)}, {1});
    const auto [merged, rep] = apply_arrival(fed, quadratic_1d(1.0, 2.0), 1);
    expect(std::abs(rep.offset - 1.0) <= 1e-12, "worked example offset");
    expect(std::abs(rep.bound - 2.0) <= 1e-12, "worked example bound");
  }
  RngStream rng(505);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    QuadraticFederationOptions opt;
    opt.dim = static_cast<Eigen::Index>(1 + rng.uniform_index(6));
    opt.clients = 2 + static_cast<int>(rng.uniform_index(6));
    opt.minimizer_spread = rng.uniform(0.5, 2.5);
    opt.eig_min = rng.uniform(0.3, 1.0);
    opt.eig_max = opt.eig_min + rng.uniform(0.5, 3.0);
    auto fed = random_quadratic_federation(opt, rng);
    auto incoming = random_quadratic_client(opt.dim, opt.eig_min, opt.eig_max, 2.0, 0.0, rng);
    // Both shift constructors throw if offset exceeds the bound.
    const auto [merged, arr] = apply_arrival(fed, incoming, 1 + static_cast<long>(rng.uniform_index(200)));
    worst = std::max(worst, arr.bound > 0 ? arr.offset / arr.bound : 0.0);
    const auto [rest, dep] = apply_departure_exclude(merged, rng.uniform_index(merged.size()));
    worst = std::max(worst, dep.bound > 0 ? dep.offset / dep.bound : 0.0);
  }
  return {true, "100 federations, worst offset at " + std::to_string(worst) + " of bound"};
}

// ---------------------------------------------------------------------------
// 6. Fast-reboot existence inside the guaranteed sphere.
// ---------------------------------------------------------------------------
CriterionResult criterion_fast_reboot_existence() {
  RngStream rng(606);
  int tested = 0;
  while (tested < 50) {
    QuadraticFederationOptions opt;
    opt.dim = static_cast<Eigen::Index>(2 + rng.uniform_index(4));
    opt.clients = 2 + static_cast<int>(rng.uniform_index(4));
    opt.minimizer_spread = 1.0;
    auto fed = random_quadratic_federation(opt, rng);
    Mat gauss(opt.dim, opt.dim);
    for (Eigen::Index i = 0; i < opt.dim; ++i)
      for (Eigen::Index j = 0; j < opt.dim; ++j) gauss(i, j) = rng.gaussian();
    Mat A = gauss * gauss.transpose() + 0.5 * Mat::Identity(opt.dim, opt.dim);
    Vec m(opt.dim);
    for (Eigen::Index i = 0; i < opt.dim; ++i) m[i] = 2.0 + rng.gaussian();
    auto incoming = LocalObjective::quadratic(A, A * m, 0.5 * m.dot(A * m));
    const auto [merged, rep] = apply_arrival(fed, incoming, fed.total_samples() / 2 + 1);
    const std::size_t l = merged.size() - 1;
    const double ball = std::max(1.0, 2.0 * rep.offset);
    const double W = curvature_bound(merged, l, ball);
    const double radius = fast_reboot_radius(merged, l, W);
    if (radius <= 0.0) continue;  // degenerate draw; the sphere is empty
    ++tested;
    Vec dir(merged.dim());
    for (Eigen::Index i = 0; i < merged.dim(); ++i) dir[i] = rng.gaussian();
    const Vec w = rep.w_star_old + (0.9 * radius * rng.uniform() / dir.norm()) * dir;
    const double before = (w - merged.optimum()).norm();
    bool improved = false;
    for (int j = 0; j <= 60 && !improved; ++j) {
      const double delta = 1e-4 * std::pow(2.0, j);
      improved = (w - delta * merged.client(l).full_gradient(w) - merged.optimum()).norm() < before;
    }
    expect(improved, "no improving step inside the sphere (draw " + std::to_string(tested) + ")");
  }
  return {true, "50/50 arrivals admit an improving extra update inside 0.9 radius"};
}

// ---------------------------------------------------------------------------
// 7. Rebound advantage of boosted aggregation grows with the arrival round.
// ---------------------------------------------------------------------------
CriterionResult criterion_rebound_trend() {
  RngStream rng(707);
  QuadraticFederationOptions opt;
  opt.dim = 2;
  opt.clients = 3;
  opt.minimizer_spread = 0.8;
  opt.eig_min = 0.8;
  opt.eig_max = 2.0;
  opt.sigma = 0.02;
  auto fed = random_quadratic_federation(opt, rng);
  const int epochs = 5;
  std::vector<ParticipationModel> models{
      ParticipationModel::categorical({0.0, 0.1, 0.2, 0.3, 0.3, 0.1}),
      ParticipationModel::categorical({0.0, 0.05, 0.15, 0.3, 0.3, 0.2}),
      ParticipationModel::categorical({0.0, 0.1, 0.1, 0.2, 0.3, 0.3}),
  };
  Mat A = 1.2 * Mat::Identity(2, 2);
  Vec m(2);
  m << 1.2, -0.9;
  ArrivalEvent arrival{LocalObjective::quadratic(A, A * m, 0.5 * m.dot(A * m), 0.02),
                       fed.total_samples() / 3, 2.0, ParticipationModel::always_full(epochs)};

  TrainingConfig cfg;
  cfg.epochs = epochs;
  cfg.scheme = Scheme::C;
  cfg.lr = LrSchedule::staircase(0.2);
  cfg.w0 = Vec::Constant(2, 4.0);
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < 20; ++s) seeds.push_back(7100 + static_cast<std::uint64_t>(s));

  std::ostringstream os;
  double prev = -1.0;
  for (long tau0 : {10L, 30L, 50L}) {
    cfg.rounds = tau0 + 400;
    const auto campaign = arrival_rebound_campaign(fed, models, cfg, arrival, tau0, seeds);
    os << "tau0=" << tau0 << ": vanilla " << campaign.median_vanilla << " boosted "
       << campaign.median_boosted << " advantage " << campaign.median_advantage << "; ";
    expect(campaign.median_advantage >= 0.0,
           "negative median advantage at tau0=" + std::to_string(tau0) + " (" + os.str() + ")");
    expect(campaign.median_advantage >= prev,
           "advantage decreased at tau0=" + std::to_string(tau0) + " (" + os.str() + ")");
    prev = campaign.median_advantage;
  }
  return {true, os.str()};
}

// ---------------------------------------------------------------------------
// 8. Departure crossing round grows with tau0 and with the non-IID gap.
// ---------------------------------------------------------------------------
CriterionResult criterion_departure_trend() {
  // Worked bound comparisons first.
  {
    auto mk = [](double D, double V, double gamma, int epochs) {
      BoundConstants c;
      c.bias_gap = D;
      c.v_const = V;
      c.gamma = gamma;
      c.epochs = epochs;
      return c;
    };
    const auto cmp1 = compare_departure_bounds(mk(1, 10, 1, 1), mk(0, 2, 1, 1), 5, 100);
    expect(std::abs(cmp1.min_f0 - 105.0 / 101.0) < 1e-12, "worked example 1 min f0");
    expect(std::abs(cmp1.f1_at_deadline - 2.0 / 96.0) < 1e-12, "worked example 1 f1");
    expect(cmp1.exclude, "worked example 1 decision");
    const auto cmp2 = compare_departure_bounds(mk(1, 10, 1, 1), mk(0, 200, 1, 1), 5, 6);
    expect(std::abs(cmp2.min_f0 - 11.0 / 7.0) < 1e-12, "worked example 2 min f0");
    expect(!cmp2.exclude, "worked example 2 decision");
    const auto cmp3 = compare_departure_bounds(mk(0, 10, 1, 1), mk(0, 10.0 / 6.0, 1, 1), 5, 100);
    expect(std::abs(cmp3.min_f0 - 10.0 / 101.0) < 1e-12, "worked example 3 min f0");
    expect(std::abs(cmp3.f1_at_deadline - (10.0 / 6.0) / 96.0) < 1e-12, "worked example 3 f1");
    expect(cmp3.exclude, "worked example 3 decision");
  }

  const int epochs = 4;
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < 20; ++s) seeds.push_back(8100 + static_cast<std::uint64_t>(s));
  std::ostringstream os;
  std::vector<double> medians_by_gap;
  for (const double gap_scale : {0.6, 1.5, 3.5}) {
    auto fed = Federation::build({quadratic_1d(1.0, 0.3, 0.02), quadratic_1d(1.2, -0.2, 0.02),
                                  quadratic_1d(1.0, -gap_scale, 0.02)},
                                 {2, 2, 4});
    std::vector<ParticipationModel> models(3, ParticipationModel::bernoulli_epochs(0.85, epochs));
    TrainingConfig cfg;
    cfg.epochs = epochs;
    cfg.scheme = Scheme::C;
    cfg.lr = LrSchedule::staircase(0.15);
    cfg.w0 = scalar(1.0);
    double prev = -1.0;
    double median_mid = 0.0;
    for (long tau0 : {10L, 30L, 50L}) {
      cfg.rounds = tau0 + 400;
      const auto campaign = departure_crossing_campaign(fed, models, cfg, 2, tau0, seeds);
      os << "gap=" << gap_scale << " tau0=" << tau0 << ": median " << campaign.median_crossing
         << "; ";
      expect(campaign.median_crossing >= prev,
             "crossing decreased at tau0=" + std::to_string(tau0) + " (" + os.str() + ")");
      prev = campaign.median_crossing;
      if (tau0 == 30) median_mid = campaign.median_crossing;
    }
    medians_by_gap.push_back(median_mid);
  }
  for (std::size_t i = 1; i < medians_by_gap.size(); ++i) {
    expect(medians_by_gap[i] >= medians_by_gap[i - 1],
           "crossing decreased in the non-IID gap (" + os.str() + ")");
  }
  return {true, os.str()};
}

// ---------------------------------------------------------------------------
// 9. Per-round inequalities at 5% slack.
// ---------------------------------------------------------------------------
CriterionResult criterion_inequality_checks() {
  RngStream rng(909);
  std::ostringstream os;
  for (int conf = 0; conf < 5; ++conf) {
    QuadraticFederationOptions opt;
    opt.dim = static_cast<Eigen::Index>(2 + rng.uniform_index(3));
    opt.clients = 2 + static_cast<int>(rng.uniform_index(5));
    opt.sigma = rng.uniform(0.2, 0.8);
    opt.minimizer_spread = rng.uniform(0.5, 1.5);
    auto fed = random_quadratic_federation(opt, rng);
    const int epochs = 2 + static_cast<int>(rng.uniform_index(4));
    std::vector<ParticipationModel> models;
    for (int k = 0; k < opt.clients; ++k) models.push_back(random_model(epochs, rng, true));
    const Scheme scheme = static_cast<Scheme>(conf % 3);
    const auto report =
        inequality_checks(fed, scheme, models, epochs, 10000, 9900 + static_cast<std::uint64_t>(conf));
    os << "config " << conf << ": variance ratio " << report.grad_variance_ratio
       << ", divergence ratio " << report.divergence_ratio << "; ";
    expect(report.grad_variance.pass, report.grad_variance.detail + " (config " +
                                          std::to_string(conf) + ")");
    expect(report.divergence.pass,
           report.divergence.detail + " (config " + std::to_string(conf) + ")");
  }
  return {true, os.str()};
}

// ---------------------------------------------------------------------------
// 10. Negative control: a corrupted gamma must be reported.
// ---------------------------------------------------------------------------
CriterionResult criterion_negative_control() {
  RngStream rng(1010);
  QuadraticFederationOptions opt;
  opt.dim = 4;
  opt.clients = 4;
  opt.sigma = 0.2;
  auto fed = random_quadratic_federation(opt, rng);
  const int epochs = 3;
  const std::vector<ParticipationModel> models(4, ParticipationModel::bernoulli_epochs(0.8, epochs));
  const Vec w0 = Vec::Ones(4);

  VerifyOptions healthy;
  healthy.replicas = 60;
  const auto good = verify_bound(fed, Scheme::C, models, epochs, 120, w0, 111, healthy);
  expect(good.pass, "healthy configuration unexpectedly failed");

  VerifyOptions corrupted = healthy;
  corrupted.gamma_scale = 0.5;
  const auto bad = verify_bound(fed, Scheme::C, models, epochs, 120, w0, 111, corrupted);
  expect(!bad.pass, "halved gamma was not reported");
  bool gamma_named = false, caps_named = false;
  for (const auto& chk : bad.checks) {
    if (chk.name == "gamma-definition" && !chk.pass) gamma_named = true;
    if (chk.name == "lr-caps" && !chk.pass) caps_named = true;
  }
  expect(gamma_named, "gamma-definition check did not fire");
  expect(caps_named, "lr-caps check did not fire");
  return {true, "clean run passes; halved gamma flagged by gamma-definition and lr-caps"};
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    std::function<CriterionResult()> fn;
  };
  const std::vector<Entry> criteria{
      {"equivalent-view endpoint equality", criterion_equivalent_view},
      {"scheme A expectation oracle", criterion_scheme_a_oracle},
      {"convergence bound campaign", criterion_bound_campaign},
      {"debiasing separation (B vs C)", criterion_debias_separation},
      {"objective-shift offset bounds", criterion_shift_bounds},
      {"fast-reboot existence", criterion_fast_reboot_existence},
      {"fast-reboot rebound trend", criterion_rebound_trend},
      {"departure decision and crossing trend", criterion_departure_trend},
      {"per-round inequality checks", criterion_inequality_checks},
      {"negative control (corrupted gamma)", criterion_negative_control},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    CriterionResult result;
    try {
      result = criteria[i].fn();
    } catch (const Failure& f) {
      result = {false, f.reason};
    } catch (const std::exception& e) {
      result = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%2zu/10] %s %s (%.1f s)\n", i + 1, result.pass ? "PASS" : "FAIL",
                criteria[i].name, secs);
    if (!result.detail.empty()) std::printf("        %s\n", result.detail.c_str());
    failures += result.pass ? 0 : 1;
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
