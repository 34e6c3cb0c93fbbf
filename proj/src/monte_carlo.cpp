#include "covsteer/monte_carlo.hpp"

#include <algorithm>
#include <cmath>

#include "covsteer/errors.hpp"
#include "covsteer/rng.hpp"

namespace covsteer {

double percentile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) {
    throw NumericError("percentile: empty sample");
  }
  if (sorted.size() == 1) return sorted[0];
  const double pos = std::clamp(p, 0.0, 1.0) * (sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - lo;
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double wilson_upper(int successes, int trials, double z) {
  if (trials <= 0) return 1.0;
  const double n = trials;
  const double phat = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = phat + z2 / (2.0 * n);
  const double half = z * std::sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n));
  return (center + half) / denom;
}

namespace {

struct TrialResult {
  bool ok = false;
  std::vector<Vector> states;       // N+1
  std::vector<Vector> controls;     // N, saturated as applied
  std::vector<Vector> raw_controls; // N, before saturation
  std::vector<double> psis;         // N+1
  double cost = 0.0;
  bool has_cost = false;
};

TrialResult run_trial(const SystemModel& model, const GaussianRandomField& field,
                      const FeedbackPolicy& policy, const Matrix& x0_factor,
                      const McConfig& cfg,
                      const std::function<double(const Vector&)>* terminal_cost,
                      std::uint64_t trial_seed) {
  const int n = policy.n, N = policy.N;
  TrialResult res;
  res.states.resize(N + 1);
  res.controls.resize(N);
  res.raw_controls.resize(N);
  res.psis.resize(N + 1);

  SplitMix64 rng(trial_seed);
  const double thin_radius =
      cfg.thinning_scale * field.kernel().characteristic_length();
  SequentialSampler sampler(field, thin_radius);

  try {
    Vector eta(n);
    for (int i = 0; i < n; ++i) eta[i] = rng.next_normal();
    Vector x = policy.xbar[0] + x0_factor.transpose() * eta;
    res.states[0] = x;

    auto field_at = [&](double z) { return sampler.sample_at(z, rng); };

    // Innovation recursion: fb_resp accumulates the modeled response to the
    // feedback already applied, so dhat estimates the deviation the trial
    // would have shown under the feedforward alone.
    Vector fb_resp = Vector::Zero(n);
    std::vector<Vector> dhat(N);
    for (int k = 0; k < N; ++k) {
      res.psis[k] = sampler.sample_at(model.field_index(x), rng);
      dhat[k] = x - policy.xbar[k] - fb_resp;

      Vector u = policy.v[k];
      if (!cfg.open_loop) {
        for (int l = 0; l <= k; ++l) {
          u += policy.gains[k][l] * dhat[l];
        }
      }
      res.raw_controls[k] = u;
      if (cfg.saturation) {
        u = u.cwiseMax(cfg.saturation->first).cwiseMin(cfg.saturation->second);
      }
      res.controls[k] = u;
      fb_resp = policy.step_a[k] * fb_resp + policy.step_b[k] * (u - policy.v[k]);

      const double dt = (policy.knots[k + 1] - policy.knots[k]) / cfg.substeps_per_segment;
      for (int s = 0; s < cfg.substeps_per_segment; ++s) {
        x = rk4_step(model, x, u, dt, field_at);
        if (!x.allFinite()) {
          throw NumericError("trial state diverged");
        }
      }
      res.states[k + 1] = x;
    }
    res.psis[N] = sampler.sample_at(model.field_index(x), rng);

    if (terminal_cost && *terminal_cost) {
      res.cost = (*terminal_cost)(x);
      res.has_cost = true;
    }
    res.ok = true;
  } catch (const NumericError&) {
    res.ok = false;
  }
  return res;
}

}  // namespace

McReport run_monte_carlo(const SystemModel& model, const GaussianRandomField& field,
                         const FeedbackPolicy& policy, const Matrix& x0_cov,
                         const ChanceConstraintSpec& chance, const McConfig& cfg,
                         const std::function<double(const Vector&)>* terminal_cost) {
  policy.validate();
  const int n = policy.n, m = policy.m, N = policy.N;
  if (cfg.trials < 1) {
    throw ConfigError("monte carlo: need at least one trial");
  }
  const Matrix x0_factor = psd_sqrt_factor(x0_cov);

  std::vector<TrialResult> results(cfg.trials);
#ifdef COVSTEER_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic, 4) if (cfg.parallel)
#endif
  for (int trial = 0; trial < cfg.trials; ++trial) {
    results[trial] = run_trial(model, field, policy, x0_factor, cfg, terminal_cost,
                               derive_stream_seed(cfg.seed, trial));
  }

  McReport report;
  report.trials_requested = cfg.trials;
  report.seed = cfg.seed;
  report.open_loop = cfg.open_loop;
  report.knot_times = policy.knots;

  // Accumulate in trial order so the report does not depend on scheduling.
  std::vector<Vector> sum_x(N + 1, Vector::Zero(n));
  std::vector<Matrix> sum_xx(N + 1, Matrix::Zero(n, n));
  std::vector<Vector> sum_u(N, Vector::Zero(m));
  std::vector<Vector> sum_uu(N, Vector::Zero(m));
  std::vector<double> sum_psi(N + 1, 0.0), sum_psi2(N + 1, 0.0);
  std::vector<std::vector<int>> state_viol(chance.state.size(),
                                           std::vector<int>(N + 1, 0));
  std::vector<std::vector<int>> control_viol(chance.control.size(),
                                             std::vector<int>(N, 0));
  std::vector<double> costs;

  int completed = 0;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    const TrialResult& tr = results[trial];
    if (!tr.ok) continue;
    ++completed;
    for (int k = 0; k <= N; ++k) {
      sum_x[k] += tr.states[k];
      sum_xx[k] += tr.states[k] * tr.states[k].transpose();
      sum_psi[k] += tr.psis[k];
      sum_psi2[k] += tr.psis[k] * tr.psis[k];
      for (std::size_t i = 0; i < chance.state.size(); ++i) {
        if (chance.state[i].a.dot(tr.states[k]) > chance.state[i].alpha) {
          ++state_viol[i][k];
        }
      }
    }
    for (int k = 0; k < N; ++k) {
      sum_u[k] += tr.controls[k];
      sum_uu[k] += tr.controls[k].cwiseAbs2();
      for (std::size_t i = 0; i < chance.control.size(); ++i) {
        if (chance.control[i].b.dot(tr.raw_controls[k]) > chance.control[i].beta) {
          ++control_viol[i][k];
        }
      }
    }
    if (tr.has_cost) costs.push_back(tr.cost);
    if (cfg.store_trajectories) {
      for (int k = 0; k <= N; ++k) {
        McReport::TrajectoryRow row;
        row.trial = trial;
        row.t = policy.knots[k];
        row.x = tr.states[k];
        if (k < N) row.u = tr.controls[k];
        row.psi = tr.psis[k];
        report.trajectories.push_back(std::move(row));
      }
    }
  }
  report.trials_completed = completed;
  report.trials_failed = cfg.trials - completed;
  if (completed < 2) {
    throw NumericError("monte carlo: fewer than two trials completed");
  }

  report.state_mean.resize(N + 1);
  report.state_cov.resize(N + 1);
  report.field_mean.resize(N + 1);
  report.field_sigma.resize(N + 1);
  const double inv = 1.0 / completed;
  const double bessel = 1.0 / (completed - 1);
  for (int k = 0; k <= N; ++k) {
    report.state_mean[k] = sum_x[k] * inv;
    Matrix cov = (sum_xx[k] - completed * report.state_mean[k] *
                                   report.state_mean[k].transpose()) *
                 bessel;
    report.state_cov[k] = 0.5 * (cov + cov.transpose());
    report.field_mean[k] = sum_psi[k] * inv;
    const double var =
        std::max((sum_psi2[k] - completed * report.field_mean[k] * report.field_mean[k]) *
                     bessel,
                 0.0);
    report.field_sigma[k] = std::sqrt(var);
  }
  report.control_mean.resize(N);
  report.control_sigma.resize(N);
  for (int k = 0; k < N; ++k) {
    report.control_mean[k] = sum_u[k] * inv;
    const Vector mean2 = report.control_mean[k].cwiseAbs2();
    report.control_sigma[k] =
        ((sum_uu[k] * inv - mean2) * (completed * bessel)).cwiseMax(0.0).cwiseSqrt();
  }

  for (std::size_t i = 0; i < chance.state.size(); ++i) {
    for (int k = 0; k <= N; ++k) {
      McReport::ViolationRow row;
      row.knot = k;
      row.constraint = static_cast<int>(i);
      row.count = state_viol[i][k];
      row.rate = static_cast<double>(row.count) / completed;
      row.wilson_upper = wilson_upper(row.count, completed);
      report.state_violations.push_back(row);
    }
  }
  for (std::size_t i = 0; i < chance.control.size(); ++i) {
    for (int k = 0; k < N; ++k) {
      McReport::ViolationRow row;
      row.knot = k;
      row.constraint = static_cast<int>(i);
      row.count = control_viol[i][k];
      row.rate = static_cast<double>(row.count) / completed;
      row.wilson_upper = wilson_upper(row.count, completed);
      report.control_violations.push_back(row);
    }
  }

  if (terminal_cost && *terminal_cost) {
    report.has_terminal_cost = true;
    std::sort(costs.begin(), costs.end());
    report.terminal_cost_samples = std::move(costs);
    if (report.terminal_cost_samples.empty()) {
      throw NumericError("monte carlo: every trial failed to produce a terminal cost");
    }
    report.terminal_cost_p50 = percentile(report.terminal_cost_samples, 0.50);
    report.terminal_cost_p90 = percentile(report.terminal_cost_samples, 0.90);
    report.terminal_cost_p99 = percentile(report.terminal_cost_samples, 0.99);
  }
  return report;
}

LinearPrediction linear_covariance_prediction(const BlockSteeringData& blocks,
                                              const Matrix& L,
                                              const FeedbackPolicy& policy,
                                              const GaussianRandomField& field,
                                              const SystemModel& model,
                                              const NominalTrajectory& nominal) {
  const int n = blocks.n, m = blocks.m, N = blocks.N;
  LinearPrediction pred;
  pred.state_mean = policy.xbar;
  const Matrix state_cov = closed_loop_state_cov(blocks, L);
  const Matrix control_cov = closed_loop_control_cov(blocks, L);
  pred.state_cov.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    pred.state_cov[k] = state_cov.block(k * n, k * n, n, n);
  }
  pred.control_sigma.resize(N);
  for (int k = 0; k < N; ++k) {
    pred.control_sigma[k] =
        control_cov.block(k * m, k * m, m, m).diagonal().cwiseMax(0.0).cwiseSqrt();
  }
  pred.field_sigma.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    const double z = model.field_index(nominal.knot_states[k]);
    pred.field_sigma[k] = std::sqrt(std::max(field.cov(z, z), 0.0));
  }
  return pred;
}

}  // namespace covsteer
