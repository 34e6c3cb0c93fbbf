/// @file main.cpp
/// @brief Command-line front end: solve a steering scenario, simulate a saved
/// policy in closed loop, and render simulation reports to CSV.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "covsteer/config.hpp"
#include "covsteer/errors.hpp"
#include "covsteer/report.hpp"

namespace fs = std::filesystem;
using namespace covsteer;

namespace {

struct SolveArgs {
  std::string config;
  std::string out = "out";
  int iters = 0;
  std::string dump_program;
};

struct SimulateArgs {
  std::string config;
  std::string policy;
  std::string out = "out";
  int trials = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool open_loop = false;
};

struct ReportArgs {
  std::string report;
  std::string out = "out";
};

int run_solve(const SolveArgs& args) {
  ScenarioConfig cfg = load_scenario(args.config);
  if (args.iters > 0) cfg.problem.scp.max_iterations = args.iters;

  if (!args.dump_program.empty()) {
    NominalTrajectory nominal =
        propagate_nominal(*cfg.model, *cfg.field, cfg.problem.x0_mean,
                          cfg.problem.initial_controls, cfg.problem.partition,
                          cfg.problem.scp.quad_order);
    const DiscreteLTVProblem ltv = discretize(*cfg.model, *cfg.field, nominal);
    const BlockSteeringData blocks =
        assemble_blocks(ltv, cfg.problem.x0_mean, cfg.problem.x0_cov);
    Vector xhat(blocks.state_stack_dim()), uhat(blocks.control_stack_dim());
    for (int k = 0; k <= blocks.N; ++k) {
      xhat.segment(k * blocks.n, blocks.n) = nominal.knot_states[k];
    }
    for (int k = 0; k < blocks.N; ++k) {
      uhat.segment(k * blocks.m, blocks.m) = cfg.problem.initial_controls[k];
    }
    const ConicProgram program = build_subproblem(
        blocks, make_objective(cfg.problem, nominal), cfg.problem.chance,
        make_trust(cfg.problem, nominal), cfg.problem.terminal_mean,
        cfg.problem.terminal_cov, xhat, uhat, nullptr);
    std::ofstream dump(args.dump_program);
    if (!dump) throw IoError("cannot write " + args.dump_program);
    program.write_text(dump);
    std::cout << "wrote " << args.dump_program << "\n";
  }

  BarrierSolver solver;
  ScpResult result = run_scp(cfg.problem, solver);

  for (const auto& rec : result.records) {
    std::printf("iter %d: objective=%.6g", rec.iteration, rec.objective);
    if (cfg.problem.percentile_weight > 0.0) {
      std::printf(" tail_estimate=%.6g", rec.tail_estimate);
    }
    std::printf(" control_change=%.3g status=%s newton=%d wall=%.2fs",
                rec.control_change, to_string(rec.status), rec.solver_iterations,
                rec.wall_time_s);
    if (!rec.note.empty()) std::printf(" [%s]", rec.note.c_str());
    std::printf("\n");
  }
  std::cout << (result.converged ? "converged" : "iteration budget reached") << "\n";

  fs::create_directories(args.out);
  const fs::path out(args.out);
  save_policy((out / cfg.outputs.policy).string(), result.policy,
              cfg.model->name());
  write_iterations_jsonl((out / cfg.outputs.iterations).string(), result.records);
  std::cout << "wrote " << (out / cfg.outputs.policy).string() << "\n";
  std::cout << "wrote " << (out / cfg.outputs.iterations).string() << "\n";
  return 0;
}

int run_simulate(const SimulateArgs& args) {
  ScenarioConfig cfg = load_scenario(args.config);
  std::string model_name;
  FeedbackPolicy policy = load_policy(args.policy, &model_name);
  if (model_name != cfg.model->name()) {
    throw ConfigError("policy was solved for model \"" + model_name +
                      "\" but the config uses \"" + cfg.model->name() + "\"");
  }
  const auto& knots = cfg.problem.partition.knots;
  if (policy.knots.size() != knots.size()) {
    throw ConfigError("policy and config disagree on the number of knots");
  }
  for (std::size_t k = 0; k < knots.size(); ++k) {
    if (std::abs(policy.knots[k] - knots[k]) > 1e-9 * (1.0 + std::abs(knots[k]))) {
      throw ConfigError("policy and config disagree on the knot times");
    }
  }

  if (args.trials > 0) cfg.mc.trials = args.trials;
  if (args.seed_set) cfg.mc.seed = args.seed;
  cfg.mc.open_loop = args.open_loop;

  // Model-side predictions around the policy's own feedforward.
  NominalTrajectory nominal =
      propagate_nominal(*cfg.model, *cfg.field, cfg.problem.x0_mean, policy.v,
                        cfg.problem.partition, cfg.problem.scp.quad_order);
  const DiscreteLTVProblem ltv = discretize(*cfg.model, *cfg.field, nominal);
  const BlockSteeringData blocks =
      assemble_blocks(ltv, cfg.problem.x0_mean, cfg.problem.x0_cov);
  const Matrix L = policy.stacked_gains();
  const LinearPrediction pred =
      linear_covariance_prediction(blocks, L, policy, *cfg.field, *cfg.model, nominal);

  std::function<double(const Vector&)> terminal_cost;
  if (const auto* aero = dynamic_cast<const AerocaptureModel*>(cfg.model.get())) {
    terminal_cost = [aero](const Vector& x) {
      return transfer_delta_v(x, aero->params());
    };
  }

  const McReport report =
      run_monte_carlo(*cfg.model, *cfg.field, policy, cfg.problem.x0_cov,
                      cfg.problem.chance, cfg.mc,
                      terminal_cost ? &terminal_cost : nullptr);

  std::printf("trials: %d completed, %d failed (%s)\n", report.trials_completed,
              report.trials_failed, report.open_loop ? "open loop" : "closed loop");
  double worst_rate = 0.0;
  for (const auto& row : report.state_violations) {
    worst_rate = std::max(worst_rate, row.rate);
  }
  for (const auto& row : report.control_violations) {
    worst_rate = std::max(worst_rate, row.rate);
  }
  std::printf("worst per-step violation rate: %.5f\n", worst_rate);
  if (report.has_terminal_cost) {
    std::printf("terminal cost percentiles: p50=%.4g p90=%.4g p99=%.4g\n",
                report.terminal_cost_p50, report.terminal_cost_p90,
                report.terminal_cost_p99);
  }

  fs::create_directories(args.out);
  const fs::path out_path = fs::path(args.out) / cfg.outputs.report;
  save_json_file(out_path.string(),
                 report_to_json(report, &pred, &policy, cfg.model->name()));
  std::cout << "wrote " << out_path.string() << "\n";
  return 0;
}

int run_report(const ReportArgs& args) {
  const nlohmann::json j = load_json_file(args.report);
  for (const std::string& f : write_csv_reports(j, args.out)) {
    std::cout << "wrote " << f << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariance steering for systems driven by spatially correlated "
               "random fields"};
  app.require_subcommand(1);

  SolveArgs solve_args;
  CLI::App* solve = app.add_subcommand(
      "solve", "Run successive convexification and save the feedback policy");
  solve->add_option("--config", solve_args.config, "Scenario JSON")->required();
  solve->add_option("--out", solve_args.out, "Output directory");
  solve->add_option("--iters", solve_args.iters,
                    "Override the configured iteration count");
  solve->add_option("--dump-program", solve_args.dump_program,
                    "Write the first convex subproblem as text");

  SimulateArgs sim_args;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Monte Carlo a saved policy through the nonlinear dynamics");
  simulate->add_option("--config", sim_args.config, "Scenario JSON")->required();
  simulate->add_option("--policy", sim_args.policy, "Policy JSON")->required();
  simulate->add_option("--out", sim_args.out, "Output directory");
  simulate->add_option("--trials", sim_args.trials, "Override the trial count");
  CLI::Option* seed_opt =
      simulate->add_option("--seed", sim_args.seed, "Override the seed");
  simulate->add_flag("--open-loop", sim_args.open_loop,
                     "Drop the feedback gains, keep the feedforward");

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand("report", "Render a report JSON to CSV");
  report->add_option("--report", report_args.report, "Report JSON")->required();
  report->add_option("--out", report_args.out, "Output directory");

  CLI11_PARSE(app, argc, argv);
  sim_args.seed_set = seed_opt->count() > 0;

  try {
    if (solve->parsed()) return run_solve(solve_args);
    if (simulate->parsed()) return run_simulate(sim_args);
    if (report->parsed()) return run_report(report_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
