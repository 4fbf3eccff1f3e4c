#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"

namespace fedflex {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline void ensure_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) {
    throw std::runtime_error(std::string(what) + ": non-finite vector entries");
  }
}

inline void ensure_same_dim(const Vec& a, Eigen::Index d, const char* what) {
  if (a.size() != d) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(d) + ")");
  }
}

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double log1p_exp(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

/// A client's local training objective.
///
/// Two families are supported:
///  - quadratic: F(w) = 1/2 w'Aw - b'w + c with A symmetric positive
///    definite. Stochastic gradients add isotropic Gaussian noise with total
///    variance sigma^2 (per-coordinate stdev sigma / sqrt(d)).
///  - logistic: l2-regularized binary cross-entropy over a fixed sample set,
///    F(w) = 1/n sum_i [log(1+exp(x_i'w)) - y_i x_i'w] + lambda/2 |w|^2.
///    Stochastic gradients use minibatches drawn with replacement.
class LocalObjective {
 public:
  enum class Kind { Quadratic, Logistic };

  static LocalObjective quadratic(Mat A, Vec b, double c = 0.0, double sigma = 0.0) {
    if (A.rows() != A.cols() || A.rows() != b.size()) {
      throw std::invalid_argument("quadratic objective: A must be d x d and match b");
    }
    const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * (1.0 + A.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("quadratic objective: A must be symmetric");
    }
    if (sigma < 0.0) throw std::invalid_argument("quadratic objective: sigma must be >= 0");
    LocalObjective obj;
    obj.kind_ = Kind::Quadratic;
    obj.A_ = std::move(A);
    obj.b_ = std::move(b);
    obj.c_ = c;
    obj.sigma_ = sigma;
    Eigen::SelfAdjointEigenSolver<Mat> es(obj.A_, Eigen::EigenvaluesOnly);
    obj.mu_ = es.eigenvalues().minCoeff();
    obj.L_ = es.eigenvalues().maxCoeff();
    if (obj.mu_ <= 0.0) {
      throw std::invalid_argument("quadratic objective: A must be positive definite");
    }
    return obj;
  }

  /// `labels` entries must be 0 or 1; `batch` is the minibatch size for
  /// stochastic gradients (clamped to the dataset size).
  static LocalObjective logistic(Mat samples, Eigen::VectorXi labels, double lambda, int batch) {
    if (samples.rows() != labels.size() || samples.rows() == 0) {
      throw std::invalid_argument("logistic objective: samples/labels mismatch");
    }
    if (lambda <= 0.0) throw std::invalid_argument("logistic objective: lambda must be > 0");
    if (batch < 1) throw std::invalid_argument("logistic objective: batch must be >= 1");
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      if (labels[i] != 0 && labels[i] != 1) {
        throw std::invalid_argument("logistic objective: labels must be 0/1");
      }
    }
    LocalObjective obj;
    obj.kind_ = Kind::Logistic;
    obj.X_ = std::move(samples);
    obj.y_ = std::move(labels);
    obj.lambda_ = lambda;
    obj.batch_ = std::min<int>(batch, static_cast<int>(obj.X_.rows()));
    const auto n = static_cast<double>(obj.X_.rows());
    Eigen::SelfAdjointEigenSolver<Mat> es(obj.X_.transpose() * obj.X_, Eigen::EigenvaluesOnly);
    obj.mu_ = lambda;
    obj.L_ = lambda + es.eigenvalues().maxCoeff() / (4.0 * n);
    // Per-sample gradient deviations are bounded by 2 max_i |x_i| regardless
    // of w, which gives a global minibatch variance bound.
    double max_row = 0.0;
    for (Eigen::Index i = 0; i < obj.X_.rows(); ++i) {
      max_row = std::max(max_row, obj.X_.row(i).norm());
    }
    obj.sigma_ = (obj.batch_ >= obj.X_.rows()) ? 0.0 : 2.0 * max_row / std::sqrt(obj.batch_);
    return obj;
  }

  Kind kind() const { return kind_; }
  Eigen::Index dim() const { return kind_ == Kind::Quadratic ? b_.size() : X_.cols(); }

  double value(const Vec& w) const {
    ensure_same_dim(w, dim(), "objective value");
    if (kind_ == Kind::Quadratic) {
      return 0.5 * w.dot(A_ * w) - b_.dot(w) + c_;
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      const double z = X_.row(i).dot(w);
      acc += log1p_exp(z) - y_[i] * z;
    }
    return acc / static_cast<double>(X_.rows()) + 0.5 * lambda_ * w.squaredNorm();
  }

  Vec full_gradient(const Vec& w) const {
    ensure_same_dim(w, dim(), "full_gradient");
    if (kind_ == Kind::Quadratic) {
      return A_ * w - b_;
    }
    Vec g = Vec::Zero(dim());
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      g += (sigmoid(X_.row(i).dot(w)) - y_[i]) * X_.row(i).transpose();
    }
    g /= static_cast<double>(X_.rows());
    g += lambda_ * w;
    return g;
  }

  /// Unbiased stochastic gradient. The quadratic noise model keeps
  /// E|g - grad|^2 = sigma^2 exactly; the logistic one is a minibatch drawn
  /// with replacement (or the full batch, which is exact).
  Vec stochastic_gradient(const Vec& w, RngStream& rng) const {
    ensure_same_dim(w, dim(), "stochastic_gradient");
    if (kind_ == Kind::Quadratic) {
      Vec g = A_ * w - b_;
      if (sigma_ > 0.0) {
        const double per_coord = sigma_ / std::sqrt(static_cast<double>(dim()));
        for (Eigen::Index i = 0; i < g.size(); ++i) g[i] += per_coord * rng.gaussian();
      }
      return g;
    }
    if (batch_ >= X_.rows()) return full_gradient(w);
    Vec g = Vec::Zero(dim());
    for (int j = 0; j < batch_; ++j) {
      const auto i = static_cast<Eigen::Index>(rng.uniform_index(X_.rows()));
      g += (sigmoid(X_.row(i).dot(w)) - y_[i]) * X_.row(i).transpose();
    }
    g /= static_cast<double>(batch_);
    g += lambda_ * w;
    return g;
  }

  /// Minimizer of the local objective (closed form for quadratics, damped
  /// gradient descent with Armijo backtracking for logistic).
  const Vec& local_minimizer() const {
    if (!minimizer_) {
      if (kind_ == Kind::Quadratic) {
        minimizer_ = Vec(A_.ldlt().solve(b_));
      } else {
        minimizer_ = minimize_gd(*this, Vec::Zero(dim()), 1e-10, 1000000);
      }
    }
    return *minimizer_;
  }

  double min_value() const { return value(local_minimizer()); }

  double smoothness() const { return L_; }
  double strong_convexity() const { return mu_; }
  double noise_bound() const { return sigma_; }

  /// Upper bound on |grad F| over the ball of given radius around `center`.
  double gradient_sup_on_ball(const Vec& center, double radius) const {
    ensure_same_dim(center, dim(), "gradient_sup_on_ball");
    if (kind_ == Kind::Quadratic) {
      return full_gradient(center).norm() + L_ * radius;
    }
    double mean_row = 0.0;
    for (Eigen::Index i = 0; i < X_.rows(); ++i) mean_row += X_.row(i).norm();
    mean_row /= static_cast<double>(X_.rows());
    return mean_row + lambda_ * (center.norm() + radius);
  }

  // Quadratic accessors (throw for logistic objectives).
  const Mat& quad_matrix() const { require_quadratic(); return A_; }
  const Vec& quad_vector() const { require_quadratic(); return b_; }
  double quad_offset() const { require_quadratic(); return c_; }

  const Mat& samples() const { require_logistic(); return X_; }
  const Eigen::VectorXi& labels() const { require_logistic(); return y_; }
  double l2_strength() const { require_logistic(); return lambda_; }
  int batch_size() const { require_logistic(); return batch_; }

  /// Full-batch gradient descent with Armijo backtracking. Once the Armijo
  /// decrease falls below float resolution, fixed 1/L steps polish the
  /// iterate down to the gradient tolerance.
  static Vec minimize_gd(const LocalObjective& obj, Vec w, double grad_tol, long max_iters);
  template <typename ValueFn, typename GradFn>
  static Vec minimize_gd_generic(const ValueFn& value, const GradFn& grad, Vec w,
                                 double grad_tol, long max_iters, double polish_step = 0.0);

 private:
  void require_quadratic() const {
    if (kind_ != Kind::Quadratic) throw std::logic_error("not a quadratic objective");
  }
  void require_logistic() const {
    if (kind_ != Kind::Logistic) throw std::logic_error("not a logistic objective");
  }

  Kind kind_ = Kind::Quadratic;
  Mat A_;
  Vec b_;
  double c_ = 0.0;
  double sigma_ = 0.0;
  Mat X_;
  Eigen::VectorXi y_;
  double lambda_ = 0.0;
  int batch_ = 0;
  double L_ = 0.0;
  double mu_ = 0.0;
  mutable std::optional<Vec> minimizer_;
};

template <typename ValueFn, typename GradFn>
Vec LocalObjective::minimize_gd_generic(const ValueFn& value, const GradFn& grad, Vec w,
                                        double grad_tol, long max_iters, double polish_step) {
  double step = 1.0;
  double fw = value(w);
  bool polishing = false;
  for (long it = 0; it < max_iters; ++it) {
    Vec g = grad(w);
    const double gn2 = g.squaredNorm();
    if (std::sqrt(gn2) <= grad_tol) break;
    if (polishing) {
      w -= polish_step * g;
      continue;
    }
    // Armijo: accept when f decreases by at least half the first-order model.
    double t = step;
    while (true) {
      Vec cand = w - t * g;
      const double fc = value(cand);
      if (fc <= fw - 0.5 * t * gn2) {
        w = std::move(cand);
        fw = fc;
        step = t * 2.0;
        break;
      }
      t *= 0.5;
      if (t < 1e-18 || fw - 0.5 * t * gn2 == fw) {
        // The required decrease is below float resolution.
        if (polish_step > 0.0) {
          polishing = true;
          break;
        }
        return w;
      }
    }
  }
  return w;
}

inline Vec LocalObjective::minimize_gd(const LocalObjective& obj, Vec w, double grad_tol,
                                       long max_iters) {
  return minimize_gd_generic([&](const Vec& x) { return obj.value(x); },
                             [&](const Vec& x) { return obj.full_gradient(x); },
                             std::move(w), grad_tol, max_iters, 1.0 / obj.smoothness());
}

/// A weighted collection of clients. Weights are p^k = n_k / n and the
/// global objective is F(w) = sum_k p^k F_k(w), minimized at w_star.
class Federation {
 public:
  static Federation build(std::vector<LocalObjective> clients, std::vector<long> sample_counts) {
    if (clients.empty() || clients.size() != sample_counts.size()) {
      throw std::invalid_argument("federation: need one positive sample count per client");
    }
    const Eigen::Index d = clients.front().dim();
    long total = 0;
    for (std::size_t k = 0; k < clients.size(); ++k) {
      if (clients[k].dim() != d) throw std::invalid_argument("federation: mixed dimensions");
      if (sample_counts[k] <= 0) throw std::invalid_argument("federation: n_k must be positive");
      total += sample_counts[k];
    }
    Federation fed;
    fed.clients_ = std::move(clients);
    fed.n_ = std::move(sample_counts);
    fed.weights_.resize(fed.clients_.size());
    for (std::size_t k = 0; k < fed.clients_.size(); ++k) {
      fed.weights_[k] = static_cast<double>(fed.n_[k]) / static_cast<double>(total);
    }
    fed.w_star_ = fed.solve_optimum();
    const double gn = fed.gradient(fed.w_star_).norm();
    if (gn > 1e-8) {
      throw std::runtime_error("federation: optimum solve left |grad F| = " + std::to_string(gn));
    }
    fed.f_star_ = fed.value(fed.w_star_);
    return fed;
  }

  std::size_t size() const { return clients_.size(); }
  Eigen::Index dim() const { return clients_.front().dim(); }
  const std::vector<LocalObjective>& clients() const { return clients_; }
  const LocalObjective& client(std::size_t k) const { return clients_.at(k); }
  const std::vector<long>& sample_counts() const { return n_; }
  long total_samples() const {
    long t = 0;
    for (long nk : n_) t += nk;
    return t;
  }
  const std::vector<double>& weights() const { return weights_; }
  const Vec& optimum() const { return w_star_; }
  double optimum_value() const { return f_star_; }

  double value(const Vec& w) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < clients_.size(); ++k) acc += weights_[k] * clients_[k].value(w);
    return acc;
  }

  Vec gradient(const Vec& w) const {
    Vec g = Vec::Zero(dim());
    for (std::size_t k = 0; k < clients_.size(); ++k) {
      g += weights_[k] * clients_[k].full_gradient(w);
    }
    return g;
  }

  /// F(w) - F(w_star), the tracked global loss gap.
  double loss_gap(const Vec& w) const { return value(w) - f_star_; }

  bool all_quadratic() const {
    for (const auto& c : clients_) {
      if (c.kind() != LocalObjective::Kind::Quadratic) return false;
    }
    return true;
  }

  Federation with_client(LocalObjective extra, long n_extra) const {
    auto clients = clients_;
    auto counts = n_;
    clients.push_back(std::move(extra));
    counts.push_back(n_extra);
    return build(std::move(clients), std::move(counts));
  }

  Federation without_client(std::size_t index) const {
    if (index >= clients_.size()) throw std::invalid_argument("without_client: bad index");
    if (clients_.size() < 2) throw std::invalid_argument("without_client: cannot empty a federation");
    auto clients = clients_;
    auto counts = n_;
    clients.erase(clients.begin() + static_cast<std::ptrdiff_t>(index));
    counts.erase(counts.begin() + static_cast<std::ptrdiff_t>(index));
    return build(std::move(clients), std::move(counts));
  }

 private:
  Vec solve_optimum() const {
    if (all_quadratic()) {
      Mat A = Mat::Zero(dim(), dim());
      Vec b = Vec::Zero(dim());
      for (std::size_t k = 0; k < clients_.size(); ++k) {
        A += weights_[k] * clients_[k].quad_matrix();
        b += weights_[k] * clients_[k].quad_vector();
      }
      Eigen::LDLT<Mat> ldlt(A);
      if (ldlt.info() != Eigen::Success) {
        throw std::runtime_error("federation: aggregate quadratic is singular");
      }
      return ldlt.solve(b);
    }
    double L = 0.0;
    for (std::size_t k = 0; k < clients_.size(); ++k) L += weights_[k] * clients_[k].smoothness();
    return LocalObjective::minimize_gd_generic(
        [&](const Vec& x) { return value(x); }, [&](const Vec& x) { return gradient(x); },
        Vec::Zero(dim()), 1e-10, 1000000, 1.0 / L);
  }

  std::vector<LocalObjective> clients_;
  std::vector<long> n_;
  std::vector<double> weights_;
  Vec w_star_;
  double f_star_ = 0.0;
};

/// Per-client smoothness/convexity/noise constants plus the non-IID gap
/// Gamma_k = F_k(w_star) - F_k^* (clamped to zero when a solver leaves it at
/// a tiny negative value).
struct ClientConstants {
  double smoothness = 0.0;
  double strong_convexity = 0.0;
  double noise = 0.0;
  double gamma = 0.0;
};

struct FederationConstants {
  std::vector<ClientConstants> per_client;
  double smoothness = 0.0;        // max_k L_k
  double strong_convexity = 0.0;  // min_k mu_k
  double grad_bound = 0.0;        // G, valid on the declared region
  double gamma_sum = 0.0;         // sum_k p^k Gamma_k
  double region_radius = 0.0;
};

/// The gradient-norm bound G is region-limited: it covers the ball of
/// `region_radius` around the optimum, since quadratic gradients are
/// unbounded globally.
inline FederationConstants compute_constants(const Federation& fed, double region_radius) {
  if (region_radius <= 0.0) throw std::invalid_argument("compute_constants: radius must be > 0");
  FederationConstants out;
  out.region_radius = region_radius;
  out.per_client.resize(fed.size());
  out.smoothness = 0.0;
  out.strong_convexity = std::numeric_limits<double>::infinity();
  out.grad_bound = 0.0;
  out.gamma_sum = 0.0;
  for (std::size_t k = 0; k < fed.size(); ++k) {
    const auto& c = fed.client(k);
    auto& cc = out.per_client[k];
    cc.smoothness = c.smoothness();
    cc.strong_convexity = c.strong_convexity();
    cc.noise = c.noise_bound();
    double gap = c.value(fed.optimum()) - c.min_value();
    if (gap < -1e-9 * (1.0 + std::abs(c.min_value()))) {
      throw std::runtime_error("compute_constants: negative non-IID gap beyond tolerance");
    }
    cc.gamma = std::max(0.0, gap);
    out.smoothness = std::max(out.smoothness, cc.smoothness);
    out.strong_convexity = std::min(out.strong_convexity, cc.strong_convexity);
    out.grad_bound =
        std::max(out.grad_bound, c.gradient_sup_on_ball(fed.optimum(), region_radius) + 3.0 * cc.noise);
    out.gamma_sum += fed.weights()[k] * cc.gamma;
  }
  return out;
}

struct QuadraticFederationOptions {
  Eigen::Index dim = 2;
  int clients = 2;
  double eig_min = 0.5;
  double eig_max = 4.0;
  double minimizer_spread = 1.0;
  double sigma = 0.0;
  long samples_min = 50;
  long samples_max = 150;
};

/// Random strongly convex quadratic federation: eigenvalues uniform in
/// [eig_min, eig_max] under a random rotation, local minimizers Gaussian with
/// the given spread. Offsets are chosen so each F_k^* = 0.
inline Federation random_quadratic_federation(const QuadraticFederationOptions& opt, RngStream& rng) {
  if (opt.dim < 1 || opt.clients < 1 || opt.eig_min <= 0.0 || opt.eig_max < opt.eig_min) {
    throw std::invalid_argument("random_quadratic_federation: bad options");
  }
  std::vector<LocalObjective> clients;
  std::vector<long> counts;
  clients.reserve(opt.clients);
  for (int k = 0; k < opt.clients; ++k) {
    Mat gauss(opt.dim, opt.dim);
    for (Eigen::Index i = 0; i < opt.dim; ++i)
      for (Eigen::Index j = 0; j < opt.dim; ++j) gauss(i, j) = rng.gaussian();
    Eigen::HouseholderQR<Mat> qr(gauss);
    Mat Q = qr.householderQ();
    Vec eigs(opt.dim);
    for (Eigen::Index i = 0; i < opt.dim; ++i) eigs[i] = rng.uniform(opt.eig_min, opt.eig_max);
    Mat A = Q * eigs.asDiagonal() * Q.transpose();
    A = 0.5 * (A + A.transpose());  // kill rounding asymmetry
    Vec m(opt.dim);
    for (Eigen::Index i = 0; i < opt.dim; ++i) m[i] = opt.minimizer_spread * rng.gaussian();
    Vec b = A * m;
    const double c = 0.5 * m.dot(b);  // so F_k(m) = 0
    clients.push_back(LocalObjective::quadratic(std::move(A), std::move(b), c, opt.sigma));
    counts.push_back(opt.samples_min +
                     static_cast<long>(rng.uniform_index(
                         static_cast<std::uint64_t>(opt.samples_max - opt.samples_min + 1))));
  }
  return Federation::build(std::move(clients), std::move(counts));
}

}  // namespace fedflex
