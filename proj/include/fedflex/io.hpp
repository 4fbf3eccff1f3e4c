#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "membership.hpp"
#include "objectives.hpp"
#include "participation.hpp"
#include "traces.hpp"
#include "trainer.hpp"

namespace fedflex {

using nlohmann::json;
using ojson = nlohmann::ordered_json;  // reports keep the version key first

inline json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

template <typename JsonT>
inline void write_json(const std::filesystem::path& path, const JsonT& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Load a report emitted by this tool, rejecting unknown versions.
inline json read_report(const std::filesystem::path& path) {
  json j = load_json(path);
  const std::string version = j.value("version", "");
  if (version != "fedflex-report v1") {
    throw std::runtime_error("unsupported report version in " + path.string() + ": '" + version +
                             "'");
  }
  return j;
}

// ---------------------------------------------------------------------------
// Federation definition files.
// ---------------------------------------------------------------------------

inline json client_to_json(const LocalObjective& obj, long n_samples) {
  json j;
  j["n_samples"] = n_samples;
  if (obj.kind() == LocalObjective::Kind::Quadratic) {
    j["kind"] = "quadratic";
    const Mat& A = obj.quad_matrix();
    json rows = json::array();
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index c = 0; c < A.cols(); ++c) row.push_back(A(i, c));
      rows.push_back(std::move(row));
    }
    j["A"] = std::move(rows);
    j["b"] = std::vector<double>(obj.quad_vector().data(),
                                 obj.quad_vector().data() + obj.quad_vector().size());
    j["c"] = obj.quad_offset();
    j["sigma"] = obj.noise_bound();
  } else {
    j["kind"] = "logistic";
    const Mat& X = obj.samples();
    json rows = json::array();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index c = 0; c < X.cols(); ++c) row.push_back(X(i, c));
      rows.push_back(std::move(row));
    }
    j["samples"] = std::move(rows);
    j["labels"] = std::vector<int>(obj.labels().data(), obj.labels().data() + obj.labels().size());
    j["lambda"] = obj.l2_strength();
    j["batch"] = obj.batch_size();
  }
  return j;
}

inline std::pair<LocalObjective, long> client_from_json(const json& j, Eigen::Index dim) {
  const std::string kind = j.at("kind").get<std::string>();
  const long n_samples = j.value("n_samples", 1L);
  if (kind == "quadratic") {
    const auto& rows = j.at("A");
    Mat A(rows.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& row = rows[i];
      if (row.size() != rows.size()) throw std::runtime_error("federation: A must be square");
      for (std::size_t c = 0; c < row.size(); ++c) {
        A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c].get<double>();
      }
    }
    const auto bv = j.at("b").get<std::vector<double>>();
    Vec b = Eigen::Map<const Vec>(bv.data(), static_cast<Eigen::Index>(bv.size()));
    if (dim > 0 && b.size() != dim) throw std::runtime_error("federation: client dimension mismatch");
    return {LocalObjective::quadratic(std::move(A), std::move(b), j.value("c", 0.0),
                                      j.value("sigma", 0.0)),
            n_samples};
  }
  if (kind == "logistic") {
    const auto& rows = j.at("samples");
    if (rows.empty()) throw std::runtime_error("federation: logistic client without samples");
    Mat X(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t c = 0; c < rows[i].size(); ++c) {
        X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c].get<double>();
      }
    }
    const auto lv = j.at("labels").get<std::vector<int>>();
    Eigen::VectorXi y = Eigen::Map<const Eigen::VectorXi>(lv.data(), static_cast<Eigen::Index>(lv.size()));
    if (dim > 0 && X.cols() != dim) throw std::runtime_error("federation: client dimension mismatch");
    return {LocalObjective::logistic(std::move(X), std::move(y), j.at("lambda").get<double>(),
                                     j.value("batch", 1)),
            n_samples};
  }
  throw std::runtime_error("federation: unknown client kind '" + kind + "'");
}

inline json federation_to_json(const Federation& fed) {
  json j;
  j["dim"] = fed.dim();
  json clients = json::array();
  for (std::size_t k = 0; k < fed.size(); ++k) {
    clients.push_back(client_to_json(fed.client(k), fed.sample_counts()[k]));
  }
  j["clients"] = std::move(clients);
  return j;
}

inline Federation federation_from_json(const json& j) {
  const auto dim = static_cast<Eigen::Index>(j.value("dim", 0));
  std::vector<LocalObjective> clients;
  std::vector<long> counts;
  for (const auto& cj : j.at("clients")) {
    auto [obj, n] = client_from_json(cj, dim);
    clients.push_back(std::move(obj));
    counts.push_back(n);
  }
  return Federation::build(std::move(clients), std::move(counts));
}

// ---------------------------------------------------------------------------
// Participation model specs.
// ---------------------------------------------------------------------------

inline ParticipationModel model_from_json(const json& j, int epochs,
                                          const std::filesystem::path& base_dir) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "always_full") return ParticipationModel::always_full(epochs);
  if (kind == "bernoulli") return ParticipationModel::bernoulli_epochs(j.at("q").get<double>(), epochs);
  if (kind == "categorical") {
    return ParticipationModel::categorical(j.at("probs").get<std::vector<double>>());
  }
  if (kind == "trace") {
    const auto file = j.at("file").get<std::string>();
    std::filesystem::path path(file);
    if (path.is_relative()) path = base_dir / path;
    return ParticipationModel::fraction_trace(read_trace(path.string()).fractions, epochs);
  }
  throw std::runtime_error("participation: unknown model kind '" + kind + "'");
}

/// A model list cycles over the clients when shorter than N.
inline std::vector<ParticipationModel> models_from_json(const json& spec, std::size_t clients,
                                                        int epochs,
                                                        const std::filesystem::path& base_dir) {
  const json& list = spec.is_array() ? spec : spec.at("models");
  if (list.empty()) throw std::runtime_error("participation: empty model list");
  std::vector<ParticipationModel> models;
  models.reserve(clients);
  for (std::size_t k = 0; k < clients; ++k) {
    models.push_back(model_from_json(list[k % list.size()], epochs, base_dir));
  }
  return models;
}

// ---------------------------------------------------------------------------
// Membership scripts.
// ---------------------------------------------------------------------------

inline DeparturePolicy policy_from_string(const std::string& s) {
  if (s == "include") return DeparturePolicy::Include;
  if (s == "exclude") return DeparturePolicy::Exclude;
  if (s == "auto") return DeparturePolicy::Auto;
  throw std::runtime_error("membership: unknown policy '" + s + "'");
}

inline std::vector<MembershipEvent> membership_from_json(const json& script, int epochs,
                                                         const std::filesystem::path& base_dir) {
  std::vector<MembershipEvent> events;
  for (const auto& ej : script) {
    MembershipEvent ev;
    ev.round = ej.at("round").get<long>();
    const std::string kind = ej.at("kind").get<std::string>();
    if (kind == "arrival") {
      auto [obj, n] = client_from_json(ej.at("client"), 0);
      ArrivalEvent arrival{std::move(obj), n, ej.value("fast_reboot_delta0", 0.0), std::nullopt};
      if (ej.contains("participation")) {
        arrival.model = model_from_json(ej.at("participation"), epochs, base_dir);
      }
      ev.action = std::move(arrival);
    } else if (kind == "departure") {
      DepartureEvent dep;
      dep.client = ej.at("client").get<std::size_t>();
      dep.policy = policy_from_string(ej.value("policy", std::string("auto")));
      ev.action = dep;
    } else {
      throw std::runtime_error("membership: unknown event kind '" + kind + "'");
    }
    events.push_back(std::move(ev));
  }
  return events;
}

// ---------------------------------------------------------------------------
// Metrics CSV.
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "round,scheme,eta,dist_sq,global_loss,sum_ps,K,discarded,inactive_any";

inline void write_metrics_csv(const std::filesystem::path& path, Scheme scheme,
                              const std::vector<RoundRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# fedflex-metrics v1\n" << kMetricsHeader << '\n';
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%ld,%c,%.17g,%.17g,%.17g,%.17g,%d,%d,%d", r.round,
                  scheme_name(scheme), r.eta, r.dist_sq, r.global_loss, r.sum_ps,
                  r.part.complete_count, r.discarded ? 1 : 0, r.part.any_inactive ? 1 : 0);
    out << buf << '\n';
  }
}

/// Parses a metrics CSV back; rejects unknown version headers.
inline std::vector<std::vector<double>> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "# fedflex-metrics v1") {
    throw std::runtime_error("unsupported metrics version in " + path.string() + ": '" + line + "'");
  }
  std::getline(in, line);  // column header
  if (line != kMetricsHeader) {
    throw std::runtime_error("unexpected metrics columns in " + path.string());
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const auto comma = line.find(',', pos);
      const std::string cell = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
      if (cell == "A" || cell == "B" || cell == "C") {
        row.push_back(static_cast<double>(cell[0]));
      } else {
        row.push_back(std::stod(cell));
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fedflex
