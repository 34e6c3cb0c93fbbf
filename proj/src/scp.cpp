#include "covsteer/scp.hpp"

#include <chrono>
#include <cmath>

#include "covsteer/errors.hpp"

namespace covsteer {

namespace {

const AerocaptureModel* as_aerocapture(const SystemModel* model) {
  return dynamic_cast<const AerocaptureModel*>(model);
}

Vector stack_states(const std::vector<Vector>& xs) {
  const int n = static_cast<int>(xs.front().size());
  Vector out(n * xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) out.segment(k * n, n) = xs[k];
  return out;
}

}  // namespace

SteeringObjective make_objective(const ScpProblem& prob,
                                 const NominalTrajectory& nominal) {
  const int n = prob.model->state_dim();
  const int m = prob.model->control_dim();
  const int N = prob.partition.segments();

  SteeringObjective obj;
  obj.q_factor.resize(N + 1);
  obj.r_factor.resize(N);
  obj.rbar_factor.resize(N);

  for (int k = 0; k <= N; ++k) {
    switch (prob.state_weight_kind) {
      case StateWeightKind::Zero:
        obj.q_factor[k] = Matrix::Zero(0, n);
        break;
      case StateWeightKind::Diagonal: {
        if (prob.state_weight_diag.size() != n) {
          throw ConfigError("state weight diagonal has wrong dimension");
        }
        obj.q_factor[k] = prob.state_weight_diag.cwiseSqrt().asDiagonal();
        break;
      }
      case StateWeightKind::DynamicPressure: {
        const auto* aero = as_aerocapture(prob.model);
        if (!aero) {
          throw ConfigError("dynamic-pressure state weight requires the aerocapture model");
        }
        const Vector& xk = nominal.knot_states[k];
        const double q = aero->dynamic_pressure(xk);
        if (!(q > 0.0)) {
          throw NumericError("dynamic pressure vanished along the nominal");
        }
        // Q_k = (grad q / q)(grad q / q)^T, carried as its single factor row.
        Matrix row(1, n);
        row.row(0) = aero->dynamic_pressure_gradient(xk).transpose() / q;
        obj.q_factor[k] = row;
        break;
      }
    }
  }

  const double r_sqrt = std::sqrt(prob.control_weight);
  const double rbar_sqrt = std::sqrt(prob.feedforward_weight);
  for (int k = 0; k < N; ++k) {
    obj.r_factor[k] = prob.control_weight > 0.0
                          ? Matrix(r_sqrt * Matrix::Identity(m, m))
                          : Matrix::Zero(0, m);
    obj.rbar_factor[k] = prob.feedforward_weight > 0.0
                             ? Matrix(rbar_sqrt * Matrix::Identity(m, m))
                             : Matrix::Zero(0, m);
  }

  if (prob.desired_kind == DesiredMeanKind::Path) {
    if (static_cast<int>(prob.desired_path.size()) != N + 1) {
      throw ConfigError("desired mean path must have one entry per knot");
    }
    obj.desired_mean = prob.desired_path;
  }

  obj.percentile_weight = prob.percentile_weight;
  obj.tail_probability = prob.tail_probability;
  if (prob.percentile_weight > 0.0) {
    switch (prob.percentile_kind) {
      case PercentileDirectionKind::Fixed:
        obj.percentile_direction = prob.percentile_fixed;
        break;
      case PercentileDirectionKind::TransferCostGradient: {
        const auto* aero = as_aerocapture(prob.model);
        if (!aero) {
          throw ConfigError("transfer-cost percentile direction requires the aerocapture model");
        }
        obj.percentile_direction =
            transfer_delta_v_gradient(nominal.knot_states.back(), aero->params());
        break;
      }
      case PercentileDirectionKind::None:
        throw ConfigError("percentile weight set but no direction configured");
    }
  }
  return obj;
}

TrustRegionSpec make_trust(const ScpProblem& prob, const NominalTrajectory& nominal) {
  TrustRegionSpec trust;
  trust.enabled = prob.trust_enabled;
  if (!trust.enabled) return trust;

  const int n = prob.model->state_dim();
  const int m = prob.model->control_dim();
  const int N = prob.partition.segments();

  if (prob.control_trust_radius > 0.0) {
    trust.control_radius = prob.control_trust_radius;
    trust.control_factor = Matrix::Identity(m, m);
    trust.control_center = nominal.controls;
  } else {
    trust.control_factor = Matrix::Zero(0, m);
  }

  trust.state_radius = prob.state_trust_radius;
  trust.state_factor.assign(N + 1, Matrix::Zero(0, n));
  trust.state_center = nominal.knot_states;
  switch (prob.state_trust_kind) {
    case StateTrustMetricKind::None:
      break;
    case StateTrustMetricKind::Diagonal: {
      if (prob.state_trust_diag.size() != n) {
        throw ConfigError("state trust diagonal has wrong dimension");
      }
      const Matrix fx = prob.state_trust_diag.cwiseSqrt().asDiagonal();
      for (int k = 1; k <= N; ++k) trust.state_factor[k] = fx;
      break;
    }
    case StateTrustMetricKind::TerminalApoapsisGradient: {
      const auto* aero = as_aerocapture(prob.model);
      if (!aero) {
        throw ConfigError("apoapsis trust metric requires the aerocapture model");
      }
      Matrix row(1, n);
      row.row(0) =
          exit_orbit_apoapsis_gradient(nominal.knot_states.back(), aero->params().mu)
              .transpose();
      trust.state_factor[N] = row;
      break;
    }
  }
  return trust;
}

ScpResult run_scp(const ScpProblem& prob, SolverAdapter& solver) {
  if (!prob.model || !prob.field) {
    throw ConfigError("run_scp: model and field must be set");
  }
  prob.partition.validate();
  const int N = prob.partition.segments();
  const int m = prob.model->control_dim();
  if (static_cast<int>(prob.initial_controls.size()) != N) {
    throw ConfigError("run_scp: need one initial control per segment");
  }

  ScpResult result;
  std::vector<Vector> uhat = prob.initial_controls;
  double prev_objective = 0.0;
  bool have_solution = false;

  for (int iter = 1; iter <= prob.scp.max_iterations; ++iter) {
    const auto tic = std::chrono::steady_clock::now();
    ScpIterationRecord rec;
    rec.iteration = iter;

    NominalTrajectory nominal =
        propagate_nominal(*prob.model, *prob.field, prob.x0_mean, uhat,
                          prob.partition, prob.scp.quad_order);
    const DiscreteLTVProblem ltv = discretize(*prob.model, *prob.field, nominal);
    BlockSteeringData blocks = assemble_blocks(ltv, prob.x0_mean, prob.x0_cov);

    const SteeringObjective objective = make_objective(prob, nominal);
    const TrustRegionSpec trust = make_trust(prob, nominal);
    const Vector xhat = stack_states(nominal.knot_states);
    const Vector uhat_stacked = stack_states(uhat);

    SubproblemLayout layout;
    const ConicProgram program =
        build_subproblem(blocks, objective, prob.chance, trust, prob.terminal_mean,
                         prob.terminal_cov, xhat, uhat_stacked, &layout);
    SubproblemSolution sol = solve_subproblem(solver, program, layout);

    rec.status = sol.status;
    rec.solver_iterations = sol.iterations;
    rec.worst_cone_violation = sol.worst_cone_violation;
    rec.note = sol.message;

    if (sol.status != SolveStatus::Optimal) {
      rec.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
      result.records.push_back(rec);
      if (!have_solution) {
        if (sol.status == SolveStatus::Infeasible) {
          throw InfeasibleError("steering subproblem infeasible at iteration 1: " +
                                sol.message);
        }
        throw NumericError("steering subproblem failed at iteration 1 (" +
                           std::string(to_string(sol.status)) + "): " + sol.message);
      }
      break;  // keep the last successful policy
    }

    rec.objective = steering_objective_value(blocks, objective, xhat, sol.L, sol.V);
    if (objective.percentile_weight > 0.0) {
      // Predicted tail percentile of the terminal cost around this nominal:
      // cost(xhat_N) + xi'(xbar_N - xhat_N) + quantile * sigma_xi.
      const auto* aero = as_aerocapture(prob.model);
      const Vector xbar = blocks.mean_trajectory(sol.V);
      const int n = blocks.n;
      const Matrix cov = closed_loop_state_cov(blocks, sol.L);
      const double sigma = std::sqrt(std::max(
          objective.percentile_direction.dot(cov.bottomRightCorner(n, n) *
                                             objective.percentile_direction),
          0.0));
      double base = 0.0;
      if (aero && prob.percentile_kind == PercentileDirectionKind::TransferCostGradient) {
        base = transfer_delta_v(nominal.knot_states.back(), aero->params()) -
               objective.percentile_direction.dot(nominal.knot_states.back());
      }
      rec.tail_estimate =
          base + objective.percentile_direction.dot(xbar.tail(n)) +
          gaussian_quantile(1.0 - objective.tail_probability) * sigma;
    }

    double control_change = 0.0;
    for (int k = 0; k < N; ++k) {
      control_change = std::max(
          control_change,
          (sol.V.segment(k * m, m) - uhat[k]).cwiseAbs().maxCoeff());
    }
    rec.control_change = control_change;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    result.records.push_back(rec);

    result.policy = make_policy(blocks, prob.partition.knots, sol.L, sol.V);
    result.L = sol.L;
    result.V = sol.V;
    result.nominal = std::move(nominal);
    result.blocks = std::move(blocks);
    have_solution = true;

    for (int k = 0; k < N; ++k) uhat[k] = sol.V.segment(k * m, m);

    // A flat objective alone is not convergence: while the feedforward step
    // rides the trust boundary the linearization point is still traveling.
    const bool step_interior =
        !(prob.trust_enabled && prob.control_trust_radius > 0.0) ||
        control_change < 0.9 * prob.control_trust_radius;
    if (iter > 1 && step_interior &&
        std::abs(rec.objective - prev_objective) <=
            prob.scp.objective_tolerance * std::max(1.0, std::abs(prev_objective))) {
      result.converged = true;
      break;
    }
    prev_objective = rec.objective;
  }

  if (have_solution) {
    // Re-center the returned policy on the trajectory the final feedforward
    // actually flies, so the feedback reacts to deviations from a consistent
    // reference (and simulation rebuilds the identical basis from the file).
    NominalTrajectory final_nominal =
        propagate_nominal(*prob.model, *prob.field, prob.x0_mean, uhat,
                          prob.partition, prob.scp.quad_order);
    const DiscreteLTVProblem ltv = discretize(*prob.model, *prob.field, final_nominal);
    result.blocks = assemble_blocks(ltv, prob.x0_mean, prob.x0_cov);
    result.policy.xbar = final_nominal.knot_states;
    result.policy.step_a = result.blocks.step_A;
    result.policy.step_b = result.blocks.step_B;
    result.nominal = std::move(final_nominal);
  }
  return result;
}

}  // namespace covsteer
