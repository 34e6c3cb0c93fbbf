#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "covsteer/blocks.hpp"
#include "covsteer/nominal.hpp"
#include "covsteer/socp.hpp"

namespace covsteer {

struct McConfig {
  int trials = 1000;
  std::uint64_t seed = 0;
  int substeps_per_segment = 10;
  bool open_loop = false;                   // drop the feedback gains, keep v
  std::optional<std::pair<double, double>> saturation;
  double thinning_scale = 1e-3;             // fraction of kernel characteristic length
  bool store_trajectories = false;
  bool parallel = true;
};

// Closed-loop sample statistics at the knots, plus chance-constraint counts
// and the terminal-cost sample set.  Trials that fail anywhere (diverging
// integration, uncaptured exit orbit) are excluded from every statistic and
// reported through `trials_failed`.
struct McReport {
  int trials_requested = 0;
  int trials_completed = 0;
  int trials_failed = 0;
  std::uint64_t seed = 0;
  bool open_loop = false;

  std::vector<double> knot_times;
  std::vector<Vector> state_mean;      // N+1
  std::vector<Matrix> state_cov;       // N+1
  std::vector<Vector> control_mean;    // N (saturated controls as applied)
  std::vector<Vector> control_sigma;   // N
  std::vector<double> field_mean;      // N+1, sampled field at the knots
  std::vector<double> field_sigma;

  struct ViolationRow {
    int knot = 0;        // knot for state rows, step for control rows
    int constraint = 0;
    int count = 0;
    double rate = 0.0;
    double wilson_upper = 0.0;
  };
  std::vector<ViolationRow> state_violations;
  std::vector<ViolationRow> control_violations;

  bool has_terminal_cost = false;
  std::vector<double> terminal_cost_samples;  // sorted ascending
  double terminal_cost_p50 = 0.0;
  double terminal_cost_p90 = 0.0;
  double terminal_cost_p99 = 0.0;

  struct TrajectoryRow {
    int trial = 0;
    double t = 0.0;
    Vector x;
    Vector u;        // empty at the final knot
    double psi = 0.0;
  };
  std::vector<TrajectoryRow> trajectories;
};

// Percentile by linear interpolation of the order statistics (the (n-1)p + 1
// rule); `sorted` must be ascending.
double percentile(const std::vector<double>& sorted, double p);

// Upper end of the Wilson score interval for a binomial rate.
double wilson_upper(int successes, int trials, double z = 1.959963984540054);

McReport run_monte_carlo(const SystemModel& model, const GaussianRandomField& field,
                         const FeedbackPolicy& policy, const Matrix& x0_cov,
                         const ChanceConstraintSpec& chance, const McConfig& cfg,
                         const std::function<double(const Vector&)>* terminal_cost);

// Model-side predictions matching the Monte Carlo report: policy mean, closed
// loop covariance (I + Bbold L) S (I + Bbold L)^T, feedback control sigma, and
// the field's own standard deviation along the nominal.
struct LinearPrediction {
  std::vector<Vector> state_mean;
  std::vector<Matrix> state_cov;
  std::vector<Vector> control_sigma;
  std::vector<double> field_sigma;
};

LinearPrediction linear_covariance_prediction(const BlockSteeringData& blocks,
                                              const Matrix& L,
                                              const FeedbackPolicy& policy,
                                              const GaussianRandomField& field,
                                              const SystemModel& model,
                                              const NominalTrajectory& nominal);

}  // namespace covsteer
