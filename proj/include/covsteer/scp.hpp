#pragma once

#include <memory>
#include <optional>
#include <string>

#include "covsteer/solver.hpp"

namespace covsteer {

struct ScpConfig {
  int max_iterations = 3;
  double objective_tolerance = 1e-3;  // relative change that counts as converged
  int quad_order = 8;
};

// How the iteration-dependent objective pieces are refreshed around each new
// nominal trajectory.
enum class StateWeightKind { Zero, Diagonal, DynamicPressure };
enum class DesiredMeanKind { Nominal, Path };
enum class PercentileDirectionKind { None, Fixed, TransferCostGradient };
enum class StateTrustMetricKind { None, Diagonal, TerminalApoapsisGradient };

struct ScpProblem {
  const SystemModel* model = nullptr;
  const GaussianRandomField* field = nullptr;

  TimePartition partition;
  Vector x0_mean;
  Matrix x0_cov;
  std::vector<Vector> initial_controls;

  std::optional<Vector> terminal_mean;
  std::optional<Matrix> terminal_cov;
  ChanceConstraintSpec chance;

  double control_weight = 1.0;       // R_k = w I
  double feedforward_weight = 1.0;   // Rbar_k = w I
  StateWeightKind state_weight_kind = StateWeightKind::Zero;
  Vector state_weight_diag;
  DesiredMeanKind desired_kind = DesiredMeanKind::Nominal;
  std::vector<Vector> desired_path;

  double percentile_weight = 0.0;
  double tail_probability = 0.1;
  PercentileDirectionKind percentile_kind = PercentileDirectionKind::None;
  Vector percentile_fixed;

  bool trust_enabled = false;
  double control_trust_radius = 0.0;
  double state_trust_radius = 0.0;
  StateTrustMetricKind state_trust_kind = StateTrustMetricKind::None;
  Vector state_trust_diag;

  ScpConfig scp;
};

struct ScpIterationRecord {
  int iteration = 0;
  double objective = 0.0;            // J1 + J2 at the subproblem solution
  double tail_estimate = 0.0;        // predicted tail percentile of the terminal cost
  double worst_cone_violation = 0.0;
  double control_change = 0.0;       // max |vbar_k - uhat_k|
  SolveStatus status = SolveStatus::NumericalFailure;
  int solver_iterations = 0;
  double wall_time_s = 0.0;
  std::string note;  // solver diagnostics worth surfacing (empty when clean)
};

struct ScpResult {
  FeedbackPolicy policy;
  Matrix L;
  Vector V;
  std::vector<ScpIterationRecord> records;
  NominalTrajectory nominal;   // nominal the final policy was linearized around
  BlockSteeringData blocks;
  bool converged = false;
};

// Successive convexification: propagate, linearize, discretize, solve the
// conic subproblem, then re-center the nominal on the optimized feedforward.
// Throws InfeasibleError / NumericError if the very first subproblem fails;
// later failures stop the loop and return the last successful iterate.
ScpResult run_scp(const ScpProblem& prob, SolverAdapter& solver);

// Objective/constraint refresh used inside run_scp, exposed for tests.
SteeringObjective make_objective(const ScpProblem& prob,
                                 const NominalTrajectory& nominal);
TrustRegionSpec make_trust(const ScpProblem& prob, const NominalTrajectory& nominal);

}  // namespace covsteer
