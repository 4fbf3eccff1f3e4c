#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <thread>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "experiments.hpp"
#include "io.hpp"
#include "verify.hpp"

namespace fedflex {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct CliContext {
  json config;
  fs::path config_dir;
  fs::path out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<Scheme> schemes;
  int jobs = 1;
};

namespace cli_detail {

inline std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const auto comma = csv.find(',', pos);
    const std::string tok = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return seeds;
}

inline Federation federation_from_config(const CliContext& ctx) {
  const auto& node = ctx.config.at("federation");
  if (node.is_string()) {
    fs::path path(node.get<std::string>());
    if (path.is_relative()) path = ctx.config_dir / path;
    return federation_from_json(load_json(path));
  }
  if (node.contains("generator")) {
    const auto& g = node.at("generator");
    QuadraticFederationOptions opt;
    opt.dim = g.value("dim", 2);
    opt.clients = g.value("clients", 2);
    opt.eig_min = g.value("eig_min", 0.5);
    opt.eig_max = g.value("eig_max", 4.0);
    opt.minimizer_spread = g.value("spread", 1.0);
    opt.sigma = g.value("sigma", 0.0);
    opt.samples_min = g.value("samples_min", 50L);
    opt.samples_max = g.value("samples_max", 150L);
    RngStream rng(g.value("seed", 1ULL));
    return random_quadratic_federation(opt, rng);
  }
  return federation_from_json(node);
}

inline int config_epochs(const CliContext& ctx) { return ctx.config.value("epochs", 1); }

inline std::vector<ParticipationModel> participation_from_config(const CliContext& ctx,
                                                                 std::size_t clients) {
  if (!ctx.config.contains("participation")) {
    return std::vector<ParticipationModel>(clients,
                                           ParticipationModel::always_full(config_epochs(ctx)));
  }
  return models_from_json(ctx.config.at("participation"), clients, config_epochs(ctx),
                          ctx.config_dir);
}

inline TrainingConfig training_config(const CliContext& ctx, const Federation& fed, Scheme scheme,
                                      const std::vector<ParticipationModel>& models) {
  TrainingConfig cfg;
  cfg.epochs = config_epochs(ctx);
  cfg.rounds = ctx.config.value("rounds", 1L);
  cfg.scheme = scheme;
  cfg.record_steps = ctx.config.value("record_steps", false);
  if (ctx.config.contains("w0")) {
    const auto w0 = ctx.config.at("w0").get<std::vector<double>>();
    cfg.w0 = Eigen::Map<const Vec>(w0.data(), static_cast<Eigen::Index>(w0.size()));
  }
  const json lr = ctx.config.value("lr", json{{"kind", "staircase"}, {"eta0", 0.1}});
  const std::string kind = lr.value("kind", "staircase");
  if (kind == "staircase") {
    cfg.lr = LrSchedule::staircase(lr.value("eta0", 0.1));
  } else if (kind == "bound") {
    BoundConstantsOptions opts;
    opts.region_radius = ctx.config.value("region_radius", 0.0);
    const Vec w0 = cfg.w0.size() ? cfg.w0 : Vec::Zero(fed.dim());
    cfg.lr = LrSchedule::from_constants(
        bound_constants_for(fed, scheme, models, cfg.epochs, w0, opts));
  } else {
    throw std::runtime_error("unknown lr kind '" + kind + "'");
  }
  return cfg;
}

inline std::vector<MembershipEvent> membership_from_config(const CliContext& ctx) {
  if (!ctx.config.contains("membership")) return {};
  const auto& node = ctx.config.at("membership");
  if (node.is_string()) {
    fs::path path(node.get<std::string>());
    if (path.is_relative()) path = ctx.config_dir / path;
    return membership_from_json(load_json(path), config_epochs(ctx), ctx.config_dir);
  }
  return membership_from_json(node, config_epochs(ctx), ctx.config_dir);
}

inline ojson constants_to_json(const BoundConstants& c) {
  return ojson{{"theta", c.theta},
              {"gamma", c.gamma},
              {"D", c.bias_gap},
              {"V", c.v_const},
              {"V_init_term", c.v_init_term},
              {"V_noise_term", c.v_noise_term},
              {"expected_B", c.expected_b},
              {"expected_weighted_epoch_sum", c.ews},
              {"epochs", c.epochs},
              {"mu", c.mu},
              {"L", c.smoothness},
              {"G", c.grad_bound},
              {"initial_dist_sq", c.initial_dist_sq},
              {"z", c.biased ? 1 : 0},
              {"exact_expectations", c.exact}};
}

inline std::string metrics_filename(Scheme scheme, std::uint64_t seed) {
  return std::string("metrics_") + scheme_name(scheme) + "_seed" + std::to_string(seed) + ".csv";
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

inline int cmd_simulate(const CliContext& ctx) {
  using namespace cli_detail;
  const Federation fed = federation_from_config(ctx);
  const auto models = participation_from_config(ctx, fed.size());
  const auto events = membership_from_config(ctx);
  fs::create_directories(ctx.out_dir);

  struct Cell {
    Scheme scheme;
    std::uint64_t seed;
    std::string csv;
    std::size_t rounds = 0;
    double final_dist_sq = 0.0;
    double final_loss = 0.0;
  };
  std::vector<Cell> cells;
  for (const Scheme scheme : ctx.schemes) {
    for (const auto seed : ctx.seeds) {
      cells.push_back({scheme, seed, metrics_filename(scheme, seed)});
    }
  }

  // Cells are independent; each one owns its output file.
  const auto run_cell = [&](Cell& cell) {
    auto cfg = training_config(ctx, fed, cell.scheme, models);
    cfg.seed = cell.seed;
    const auto run = run_training(fed, cfg, models, events);
    write_metrics_csv(ctx.out_dir / cell.csv, cell.scheme, run.records);
    cell.rounds = run.records.size();
    cell.final_dist_sq = run.records.empty() ? 0.0 : run.records.back().dist_sq;
    cell.final_loss = run.records.empty() ? 0.0 : run.records.back().global_loss;
  };
  if (ctx.jobs > 1 && cells.size() > 1) {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(ctx.jobs), cells.size());
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
          run_cell(cells[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  } else {
    for (auto& cell : cells) run_cell(cell);
  }

  ojson summary;
  summary["version"] = "fedflex-report v1";
  summary["command"] = "simulate";
  summary["cells"] = ojson::array();
  for (const auto& cell : cells) {
    ojson jc;
    jc["scheme"] = std::string(1, scheme_name(cell.scheme));
    jc["seed"] = cell.seed;
    jc["csv"] = cell.csv;
    jc["rounds"] = cell.rounds;
    jc["final_dist_sq"] = cell.final_dist_sq;
    jc["final_global_loss"] = cell.final_loss;
    summary["cells"].push_back(std::move(jc));
  }
  write_json(ctx.out_dir / "summary.json", summary);
  return kExitOk;
}

inline int cmd_compare_schemes(const CliContext& ctx) {
  using namespace cli_detail;
  if (ctx.schemes.size() < 2) {
    std::cerr << "compare-schemes needs at least two schemes\n";
    return kExitUsage;
  }
  const Federation fed = federation_from_config(ctx);
  fs::create_directories(ctx.out_dir);

  // Heterogeneity levels: a list of participation blocks; defaults to the
  // top-level participation spec as a single level.
  std::vector<std::pair<std::string, std::vector<ParticipationModel>>> levels;
  if (ctx.config.contains("levels")) {
    for (const auto& level : ctx.config.at("levels")) {
      levels.emplace_back(level.value("name", "level" + std::to_string(levels.size())),
                          models_from_json(level.at("participation"), fed.size(),
                                           config_epochs(ctx), ctx.config_dir));
    }
  } else {
    levels.emplace_back("default", participation_from_config(ctx, fed.size()));
  }

  ojson report;
  report["version"] = "fedflex-report v1";
  report["command"] = "compare-schemes";
  report["levels"] = ojson::array();
  for (const auto& [name, models] : levels) {
    auto cfg = training_config(ctx, fed, ctx.schemes.front(), models);
    const auto level =
        compare_schemes_level(fed, models, cfg, ctx.schemes, ctx.seeds, name);
    ojson jl;
    jl["name"] = level.name;
    jl["mean_final_loss"] = ojson::object();
    for (std::size_t si = 0; si < ctx.schemes.size(); ++si) {
      jl["mean_final_loss"][std::string(1, scheme_name(ctx.schemes[si]))] =
          level.mean_final_loss[si];
    }
    jl["pairwise_improvement_pct"] = ojson::object();
    for (std::size_t si = 0; si + 1 < ctx.schemes.size(); ++si) {
      const std::string key = std::string(1, scheme_name(ctx.schemes[si + 1])) + "_vs_" +
                              scheme_name(ctx.schemes[si]);
      jl["pairwise_improvement_pct"][key] =
          pairwise_improvement(level.mean_final_loss[si], level.mean_final_loss[si + 1]);
    }
    ojson cells = ojson::array();
    for (const auto& cell : level.cells) {
      cells.push_back(ojson{{"scheme", std::string(1, scheme_name(cell.scheme))},
                           {"seed", cell.seed},
                           {"final_loss", cell.final_loss},
                           {"final_dist_sq", cell.final_dist_sq}});
    }
    jl["cells"] = std::move(cells);
    report["levels"].push_back(std::move(jl));
  }
  write_json(ctx.out_dir / "compare_schemes.json", report);
  return kExitOk;
}

inline int cmd_arrival(const CliContext& ctx, long tau0_override) {
  using namespace cli_detail;
  const Federation fed = federation_from_config(ctx);
  const auto models = participation_from_config(ctx, fed.size());
  auto events = membership_from_config(ctx);
  const ArrivalEvent* arrival = nullptr;
  long tau0 = -1;
  for (const auto& ev : events) {
    if (const auto* a = std::get_if<ArrivalEvent>(&ev.action)) {
      arrival = a;
      tau0 = ev.round;
    }
  }
  if (arrival == nullptr) {
    std::cerr << "arrival: the membership script must contain an arrival event\n";
    return kExitUsage;
  }
  if (tau0_override > 0) tau0 = tau0_override;
  fs::create_directories(ctx.out_dir);

  ojson report;
  report["version"] = "fedflex-report v1";
  report["command"] = "arrival";
  report["tau0"] = tau0;
  report["schemes"] = ojson::array();
  for (const Scheme scheme : ctx.schemes) {
    auto cfg = training_config(ctx, fed, scheme, models);
    const auto campaign = arrival_rebound_campaign(fed, models, cfg, *arrival, tau0, ctx.seeds);
    ojson js;
    js["scheme"] = std::string(1, scheme_name(scheme));
    js["rebound_boosted"] = campaign.boosted;
    js["rebound_vanilla"] = campaign.vanilla;
    js["median_boosted"] = campaign.median_boosted;
    js["median_vanilla"] = campaign.median_vanilla;
    js["median_advantage"] = campaign.median_advantage;
    report["schemes"].push_back(std::move(js));
  }
  write_json(ctx.out_dir / "arrival.json", report);
  return kExitOk;
}

inline int cmd_departure(const CliContext& ctx, long tau0_override) {
  using namespace cli_detail;
  const Federation fed = federation_from_config(ctx);
  const auto models = participation_from_config(ctx, fed.size());
  auto events = membership_from_config(ctx);
  const DepartureEvent* departure = nullptr;
  long tau0 = -1;
  for (const auto& ev : events) {
    if (const auto* d = std::get_if<DepartureEvent>(&ev.action)) {
      departure = d;
      tau0 = ev.round;
    }
  }
  if (departure == nullptr) {
    std::cerr << "departure: the membership script must contain a departure event\n";
    return kExitUsage;
  }
  if (tau0_override > 0) tau0 = tau0_override;
  fs::create_directories(ctx.out_dir);

  ojson report;
  report["version"] = "fedflex-report v1";
  report["command"] = "departure";
  report["tau0"] = tau0;
  report["client"] = departure->client;
  report["schemes"] = ojson::array();
  for (const Scheme scheme : ctx.schemes) {
    auto cfg = training_config(ctx, fed, scheme, models);
    const auto campaign =
        departure_crossing_campaign(fed, models, cfg, departure->client, tau0, ctx.seeds);
    ojson js;
    js["scheme"] = std::string(1, scheme_name(scheme));
    js["crossing_rounds"] = campaign.crossing;
    js["median_crossing"] = campaign.median_crossing;
    js["decision"] =
        campaign.recommended == DeparturePolicy::Exclude ? "exclude" : "include";
    // The simplified comparison assumes gamma~ = gamma and V~ built from the
    // shift offset; report it next to the exact scan and flag disagreement.
    const Vec w0 = cfg.w0.size() ? cfg.w0 : Vec::Zero(fed.dim());
    const auto pair = departure_bound_pair(fed, models, cfg, departure->client, tau0, w0);
    BoundConstants simplified = pair.with;
    simplified.v_const =
        pair.with.v_const / (static_cast<double>(tau0) * cfg.epochs + pair.with.gamma) +
        pair.shift.gamma_l_tilde;
    const auto simple_decision =
        departure_decision(pair.with, simplified, tau0, cfg.rounds);
    js["decision_simplified"] =
        simple_decision == DeparturePolicy::Exclude ? "exclude" : "include";
    js["simplified_agrees"] = (simple_decision == campaign.recommended);
    js["simplified_crossing"] =
        simplified_departure_crossing(pair.with, pair.shift.gamma_l_tilde, tau0, cfg.rounds);
    report["schemes"].push_back(std::move(js));
  }
  write_json(ctx.out_dir / "departure.json", report);
  return kExitOk;
}

inline int cmd_gen_traces(const fs::path& out_dir, long lines, int epochs, std::uint64_t seed) {
  fs::create_directories(out_dir);
  RngStream rng(seed);
  for (const auto& spec : trace_specs()) {
    const auto trace = generate_trace(spec, epochs, lines, rng.child(std::hash<std::string>{}(spec.name)));
    write_trace((out_dir / spec.name).string(), trace);
  }
  return kExitOk;
}

inline int cmd_verify_theory(const CliContext& ctx, double gamma_scale, int replicas_override) {
  using namespace cli_detail;
  const Federation fed = federation_from_config(ctx);
  const auto models = participation_from_config(ctx, fed.size());
  const int epochs = config_epochs(ctx);
  const long rounds = ctx.config.value("rounds", 300L);
  const long inequality_rounds = ctx.config.value("inequality_rounds", 10000L);
  Vec w0 = Vec::Zero(fed.dim());
  if (ctx.config.contains("w0")) {
    const auto v = ctx.config.at("w0").get<std::vector<double>>();
    w0 = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  fs::create_directories(ctx.out_dir);

  VerifyOptions opt;
  opt.replicas = replicas_override > 0 ? replicas_override : ctx.config.value("replicas", 200);
  opt.gamma_scale = gamma_scale;
  opt.jobs = ctx.jobs;
  opt.constants.region_radius = ctx.config.value("region_radius", 0.0);

  ojson report;
  report["version"] = "fedflex-report v1";
  report["command"] = "verify-theory";
  report["schemes"] = ojson::array();
  bool all_pass = true;
  for (const Scheme scheme : ctx.schemes) {
    const std::uint64_t seed = ctx.seeds.empty() ? 1 : ctx.seeds.front();
    const auto bound = verify_bound(fed, scheme, models, epochs, rounds, w0, seed, opt);
    const auto ineq = inequality_checks(fed, scheme, models, epochs, inequality_rounds, seed ^ 0x13579bdf);
    ojson js;
    js["scheme"] = std::string(1, scheme_name(scheme));
    js["constants"] = constants_to_json(bound.constants);
    js["regime"] = bound.constants.biased ? "plateau" : "converging";
    js["replicas"] = opt.replicas;
    js["region_radius"] = bound.region_radius;
    js["max_dist_ratio"] = bound.max_dist_ratio;
    js["left_region"] = bound.left_region;
    ojson checks = ojson::array();
    bool scheme_pass = true;
    auto push_check = [&](const NamedCheck& chk) {
      checks.push_back(ojson{{"name", chk.name}, {"pass", chk.pass}, {"detail", chk.detail}});
      scheme_pass = scheme_pass && chk.pass;
    };
    for (const auto& chk : bound.checks) push_check(chk);
    push_check(ineq.grad_variance);
    push_check(ineq.divergence);
    js["checks"] = std::move(checks);
    ojson rounds_json = ojson::array();
    for (const auto& row : bound.rounds) {
      rounds_json.push_back(ojson{{"round", row.round},
                                 {"mean_dist_sq", row.mean},
                                 {"stderr", row.stderr_},
                                 {"bound", row.bound},
                                 {"margin", row.margin}});
    }
    js["rounds"] = std::move(rounds_json);
    js["pass"] = scheme_pass;
    all_pass = all_pass && scheme_pass;
    report["schemes"].push_back(std::move(js));
  }
  report["pass"] = all_pass;
  write_json(ctx.out_dir / "verify_theory.json", report);
  if (!all_pass) {
    for (const auto& js : report["schemes"]) {
      for (const auto& chk : js["checks"]) {
        if (!chk["pass"].get<bool>()) {
          std::cerr << "verify-theory: check failed for scheme "
                    << js["scheme"].get<std::string>() << ": " << chk["name"].get<std::string>()
                    << " (" << chk["detail"].get<std::string>() << ")\n";
        }
      }
    }
  }
  return all_pass ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// Entry point.
// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"fedflex: federated training simulator with flexible device participation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", seeds_csv, scheme_csv;
  int jobs = 1;
  long tau0_override = -1;
  double corrupt_gamma = 1.0;
  int replicas_override = -1;
  long gen_lines = 10000;
  int gen_epochs = 5;
  std::uint64_t gen_seed = 1;

  const auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* copt = cmd->add_option("--config", config_path, "experiment configuration (JSON)");
    if (needs_config) copt->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seeds", seeds_csv, "comma-separated seed list (overrides config)");
    cmd->add_option("--scheme", scheme_csv, "scheme list, e.g. C or A,B,C (overrides config)");
    cmd->add_option("--jobs", jobs, "worker threads for replica campaigns");
  };

  auto* simulate = app.add_subcommand("simulate", "run (scheme x seed) cells and write metrics");
  add_common(simulate, true);
  auto* compare = app.add_subcommand("compare-schemes", "final-loss table across schemes");
  add_common(compare, true);
  auto* arrival = app.add_subcommand("arrival", "rebound experiment for a scripted arrival");
  add_common(arrival, true);
  arrival->add_option("--tau0", tau0_override, "override the arrival round");
  auto* departure = app.add_subcommand("departure", "crossing experiment for a scripted departure");
  add_common(departure, true);
  departure->add_option("--tau0", tau0_override, "override the departure round");
  auto* gen = app.add_subcommand("gen-traces", "write the eight synthetic participation traces");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--lines", gen_lines, "samples per trace");
  gen->add_option("--epochs", gen_epochs, "epoch count recorded in the trace headers");
  gen->add_option("--seed", gen_seed, "generator seed");
  auto* verify = app.add_subcommand("verify-theory", "bound and inequality verification campaign");
  add_common(verify, true);
  verify->add_option("--corrupt-gamma", corrupt_gamma,
                     "scale gamma by this factor (negative control)");
  verify->add_option("--replicas", replicas_override, "override the replica count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_traces(out_dir, gen_lines, gen_epochs, gen_seed);

    CliContext ctx;
    ctx.config = load_json(config_path);
    ctx.config_dir = fs::absolute(fs::path(config_path)).parent_path();
    ctx.out_dir = out_dir;
    ctx.jobs = jobs;

    if (!seeds_csv.empty()) {
      ctx.seeds = cli_detail::parse_seed_list(seeds_csv);
    } else if (ctx.config.contains("seeds")) {
      ctx.seeds = ctx.config.at("seeds").get<std::vector<std::uint64_t>>();
    }
    if (ctx.seeds.empty()) {
      std::cerr << "no seeds given (config \"seeds\" or --seeds)\n";
      return kExitUsage;
    }

    std::vector<std::string> scheme_names;
    if (!scheme_csv.empty()) {
      std::size_t pos = 0;
      while (pos < scheme_csv.size()) {
        const auto comma = scheme_csv.find(',', pos);
        scheme_names.push_back(
            scheme_csv.substr(pos, comma == std::string::npos ? comma : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    } else if (ctx.config.contains("schemes")) {
      scheme_names = ctx.config.at("schemes").get<std::vector<std::string>>();
    }
    if (scheme_names.empty()) {
      std::cerr << "no schemes given (config \"schemes\" or --scheme)\n";
      return kExitUsage;
    }
    for (const auto& name : scheme_names) ctx.schemes.push_back(scheme_from_name(name));

    if (simulate->parsed()) return cmd_simulate(ctx);
    if (compare->parsed()) return cmd_compare_schemes(ctx);
    if (arrival->parsed()) return cmd_arrival(ctx, tau0_override);
    if (departure->parsed()) return cmd_departure(ctx, tau0_override);
    if (verify->parsed()) return cmd_verify_theory(ctx, corrupt_gamma, replicas_override);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace fedflex
