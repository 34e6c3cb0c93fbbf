// End-to-end acceptance gate: one pass/fail line per shipped guarantee,
// exercised through the public API exactly the way the CLI drives it.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "covsteer/blocks.hpp"
#include "covsteer/config.hpp"
#include "covsteer/dynamics.hpp"
#include "covsteer/errors.hpp"
#include "covsteer/grf.hpp"
#include "covsteer/monte_carlo.hpp"
#include "covsteer/nominal.hpp"
#include "covsteer/rng.hpp"
#include "covsteer/scp.hpp"
#include "covsteer/socp.hpp"
#include "covsteer/solver.hpp"

using namespace covsteer;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof(buf), pattern, args);
  va_end(args);
  return std::string(buf);
}

// ---- 1: double-integrator closed loop ------------------------------------

Outcome check_double_integrator() {
  ScenarioConfig cfg =
      load_scenario(std::string(COVSTEER_CONFIG_DIR) + "/double_integrator.json");
  cfg.problem.scp.max_iterations = 1;  // single convex solve from zero controls
  BarrierSolver solver;
  const ScpResult res = run_scp(cfg.problem, solver);
  if (res.records.empty() || res.records[0].status != SolveStatus::Optimal) {
    return {false, "subproblem not optimal"};
  }
  const McReport rep =
      run_monte_carlo(*cfg.model, *cfg.field, res.policy, cfg.problem.x0_cov,
                      cfg.problem.chance, cfg.mc, nullptr);
  if (rep.trials_completed < 5000) return {false, "fewer than 5000 trials"};
  const int n = rep.trials_completed;

  // (a) every per-step empirical violation rate within the target plus the
  // sampling slack a true rate of 0.0027 could produce at this trial count.
  const int k27 = static_cast<int>(std::ceil(0.0027 * n));
  const double slack = wilson_upper(k27, n) - 0.0027;
  double worst = 0.0;
  for (const auto& row : rep.state_violations) worst = std::max(worst, row.rate);
  for (const auto& row : rep.control_violations) worst = std::max(worst, row.rate);
  const bool rates_ok = worst <= 0.0027 + slack;

  // (b) terminal sample mean within three standard errors of the target.
  const Vector target = *cfg.problem.terminal_mean;
  const Matrix csamp = rep.state_cov.back();
  bool mean_ok = true;
  for (int i = 0; i < 2; ++i) {
    const double se = std::sqrt(csamp(i, i) / n);
    if (std::abs(rep.state_mean.back()[i] - target[i]) > 3.0 * se) mean_ok = false;
  }

  // (c) terminal bound minus sample covariance PSD up to statistical slack.
  const Matrix pf = *cfg.problem.terminal_cov;
  const double psd_slack = 3.0 * csamp.norm() * std::sqrt(2.0 / (n - 1));
  Eigen::SelfAdjointEigenSolver<Matrix> es(pf - csamp);
  const bool psd_ok = es.eigenvalues().minCoeff() >= -psd_slack;

  return {rates_ok && mean_ok && psd_ok,
          fmt("worst rate %.5f (limit %.5f), mean_ok=%d, min_eig %.3e (slack %.3e)",
              worst, 0.0027 + slack, mean_ok ? 1 : 0, es.eigenvalues().minCoeff(),
              psd_slack)};
}

// ---- 2: constant-kernel disturbance moments ------------------------------

Outcome check_constant_kernel_moments() {
  const double variance = 3e-4;
  KernelSpec k;
  k.kind = KernelKind::Constant;
  k.variance = variance;
  DoubleIntegratorModel model;
  GaussianRandomField field(k, [](double) { return 0.0; });
  TimePartition part;
  part.knots = {0.0, 1.0, 2.0, 3.0};
  part.substeps_per_segment = 10;
  Vector x0(2);
  x0 << 0.0, 0.5;
  const NominalTrajectory nominal = propagate_nominal(
      model, field, x0, std::vector<Vector>(3, Vector::Zero(1)), part, 8);
  const DiscreteLTVProblem ltv = discretize(model, field, nominal);

  Matrix expected(2, 2);
  expected << 0.25, 0.5, 0.5, 1.0;
  expected *= variance;
  double diag_err = 0.0, cross_err = 0.0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      const Matrix block = ltv.wcov.block(2 * a, 2 * b, 2, 2);
      const double err = (block - expected).norm() / expected.norm();
      (a == b ? diag_err : cross_err) = std::max(a == b ? diag_err : cross_err, err);
    }
  }
  return {diag_err <= 1e-6 && cross_err <= 1e-9,
          fmt("diag rel err %.2e (<=1e-6), cross rel err %.2e (<=1e-9)", diag_err,
              cross_err)};
}

// ---- 3: zero-gain Monte Carlo covariance ---------------------------------

Outcome check_uncontrolled_covariance() {
  ScenarioConfig cfg =
      load_scenario(std::string(COVSTEER_CONFIG_DIR) + "/double_integrator.json");
  const int N = cfg.problem.partition.segments();
  const std::vector<Vector> zeros(N, Vector::Zero(1));
  const NominalTrajectory nominal =
      propagate_nominal(*cfg.model, *cfg.field, cfg.problem.x0_mean, zeros,
                        cfg.problem.partition, cfg.problem.scp.quad_order);
  const DiscreteLTVProblem ltv = discretize(*cfg.model, *cfg.field, nominal);
  const BlockSteeringData blocks =
      assemble_blocks(ltv, cfg.problem.x0_mean, cfg.problem.x0_cov);
  const Matrix L = Matrix::Zero(blocks.control_stack_dim(), blocks.state_stack_dim());
  const FeedbackPolicy policy =
      make_policy(blocks, cfg.problem.partition.knots, L, Vector::Zero(N));
  McConfig mc = cfg.mc;
  mc.trials = 5000;
  const McReport rep = run_monte_carlo(*cfg.model, *cfg.field, policy,
                                       cfg.problem.x0_cov, {}, mc, nullptr);
  if (rep.trials_completed < 5000) return {false, "fewer than 5000 trials"};
  const int n = blocks.n;
  const Matrix pred = blocks.S.block(n * N, n * N, n, n);
  const double rel = (rep.state_cov.back() - pred).norm() / pred.norm();
  return {rel <= 0.05, fmt("terminal covariance rel err %.4f (<=0.05)", rel)};
}

// ---- 4: deterministic reduction vs normal equations ----------------------

Outcome check_deterministic_reduction() {
  DiscreteLTVProblem ltv;
  ltv.n = 2;
  ltv.m = 1;
  ltv.N = 3;
  Matrix a(2, 2), b(2, 1);
  a << 1.0, 1.0, 0.0, 1.0;
  b << 0.5, 1.0;
  ltv.A.assign(3, a);
  ltv.B.assign(3, b);
  ltv.c.assign(3, Vector::Zero(2));
  ltv.wbar.assign(3, Vector::Zero(2));
  ltv.wcov = Matrix::Zero(6, 6);
  const BlockSteeringData blocks =
      assemble_blocks(ltv, Vector::Zero(2), Matrix::Zero(2, 2));

  SteeringObjective obj;
  obj.q_factor.assign(4, Matrix::Zero(0, 2));
  obj.q_factor[2] = Matrix::Identity(2, 2);
  obj.r_factor.assign(3, Matrix::Identity(1, 1));
  obj.rbar_factor.assign(3, Matrix::Zero(0, 1));
  obj.desired_mean.assign(4, Vector::Zero(2));
  obj.desired_mean[2] << 0.4, 0.0;
  Vector target(2);
  target << 1.0, 0.2;

  SubproblemLayout layout;
  const ConicProgram prog =
      build_subproblem(blocks, obj, {}, {}, target, std::nullopt, Vector::Zero(8),
                       Vector::Zero(3), &layout);
  if (!prog.cones.empty()) return {false, "unexpected cones"};
  BarrierSolver solver;
  const SubproblemSolution sol = solve_subproblem(solver, prog, layout);
  if (sol.status != SolveStatus::Optimal) return {false, "solve failed"};

  const int d = prog.dim;
  const int e = static_cast<int>(prog.A.rows());
  Matrix kkt = Matrix::Zero(d + e, d + e);
  kkt.topLeftCorner(d, d) = prog.H;
  kkt.topRightCorner(d, e) = prog.A.transpose();
  kkt.bottomLeftCorner(e, d) = prog.A;
  Vector rhs(d + e);
  rhs.head(d) = -prog.c;
  rhs.tail(e) = prog.b;
  const Vector oracle = layout.unpack_v(Vector(kkt.fullPivLu().solve(rhs).head(d)));
  const double rel = (sol.V - oracle).norm() / std::max(1.0, oracle.norm());
  return {rel <= 1e-6, fmt("feedforward rel err %.2e (<=1e-6)", rel)};
}

// ---- 5: normal quantile --------------------------------------------------

Outcome check_quantile() {
  const double q1 = gaussian_quantile(0.99865);
  const double q2 = gaussian_quantile(0.9);
  const bool ok = std::abs(q1 - 3.000) <= 1e-3 &&
                  std::abs(q2 - 1.2815515655446004) <= 1e-9;
  return {ok, fmt("q(0.99865)=%.6f, q(0.9)=%.12f", q1, q2)};
}

// ---- 6: sequential versus joint sampling ---------------------------------

Outcome check_sequential_sampling() {
  KernelSpec k;
  k.kind = KernelKind::LocallyPeriodic;
  k.variance = 2e-6;
  k.period = 0.35;
  k.periodic_length = 0.8;
  k.envelope_length = 1.0;
  GaussianRandomField field(k, [](double) { return 0.03; });
  const std::vector<double> zs{0.0, 0.05, 0.35, 0.7, 1.5};
  const int P = static_cast<int>(zs.size());
  const int draws = 10000;

  Matrix joint(draws, P), seq(draws, P);
  SplitMix64 rng_joint(512ULL), rng_seq(513ULL);
  for (int i = 0; i < draws; ++i) {
    joint.row(i) = field.sample_joint(zs, rng_joint).transpose();
    SequentialSampler sampler(field, 1e-3 * k.characteristic_length());
    for (int p = 0; p < P; ++p) seq(i, p) = sampler.sample_at(zs[p], rng_seq);
  }

  const Matrix gram = field.gram_repaired(zs);
  bool ok = true;
  std::string note;
  for (int p = 0; p < P; ++p) {
    const double se = std::sqrt(gram(p, p) / draws);
    const double m_joint = joint.col(p).mean();
    const double m_seq = seq.col(p).mean();
    if (std::abs(m_joint - 0.03) > 4.0 * se || std::abs(m_seq - 0.03) > 4.0 * se) {
      ok = false;
      note = fmt("mean mismatch at point %d", p);
    }
  }
  double worst_rel = 0.0;
  const double floor = 0.25 * k.max_variance();
  for (int p = 0; p < P && ok; ++p) {
    for (int q = 0; q < P; ++q) {
      if (std::abs(gram(p, q)) < floor) continue;  // leading entries only
      const auto cov_of = [&](const Matrix& m) {
        const Vector cp = m.col(p).array() - m.col(p).mean();
        const Vector cq = m.col(q).array() - m.col(q).mean();
        return cp.dot(cq) / (draws - 1);
      };
      worst_rel = std::max(worst_rel,
                           std::abs(cov_of(seq) - gram(p, q)) / std::abs(gram(p, q)));
      worst_rel = std::max(worst_rel,
                           std::abs(cov_of(joint) - gram(p, q)) / std::abs(gram(p, q)));
    }
  }
  if (ok && worst_rel > 0.05) {
    ok = false;
    note = fmt("covariance rel err %.4f (>0.05)", worst_rel);
  }
  if (ok) note = fmt("covariance rel err %.4f (<=0.05)", worst_rel);
  return {ok, note};
}

// ---- 7: orbit geometry oracle --------------------------------------------

double apoapsis_by_integration(double r, double v, double gamma, double mu,
                               bool* ok) {
  Eigen::Vector4d y;
  y << r, 0.0, v * std::sin(gamma), v * std::cos(gamma);
  auto deriv = [mu](const Eigen::Vector4d& s) {
    const double rr = std::hypot(s[0], s[1]);
    const double c = -mu / (rr * rr * rr);
    return Eigen::Vector4d(s[2], s[3], c * s[0], c * s[1]);
  };
  auto rk4 = [&](const Eigen::Vector4d& s, double h) {
    const Eigen::Vector4d k1 = deriv(s);
    const Eigen::Vector4d k2 = deriv(s + 0.5 * h * k1);
    const Eigen::Vector4d k3 = deriv(s + 0.5 * h * k2);
    const Eigen::Vector4d k4 = deriv(s + h * k3);
    return Eigen::Vector4d(s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };
  auto vr_of = [](const Eigen::Vector4d& s) {
    return (s[0] * s[2] + s[1] * s[3]) / std::hypot(s[0], s[1]);
  };
  const double energy = 0.5 * v * v - mu / r;
  const double a = -mu / (2.0 * energy);
  const double period = 2.0 * M_PI * std::sqrt(a * a * a / mu);
  const int steps = 400000;
  const double h = 1.1 * period / steps;
  Eigen::Vector4d prev = y;
  for (int i = 0; i < steps; ++i) {
    const Eigen::Vector4d next = rk4(prev, h);
    if (vr_of(prev) > 0.0 && vr_of(next) <= 0.0) {
      double lo = 0.0, hi = h;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (vr_of(rk4(prev, mid)) > 0.0 ? lo : hi) = mid;
      }
      const Eigen::Vector4d at = rk4(prev, 0.5 * (lo + hi));
      const double e_now = 0.5 * (at[2] * at[2] + at[3] * at[3]) -
                           mu / std::hypot(at[0], at[1]);
      *ok = std::abs(e_now - energy) <= 1e-9 * std::abs(energy);
      return std::hypot(at[0], at[1]);
    }
    prev = next;
  }
  *ok = false;
  return 0.0;
}

Outcome check_orbit_oracle() {
  const double mu = 4.2828e13;
  AerocaptureParams params;
  params.mu = mu;
  params.planet_radius = 3397e3;
  params.target_apoapsis = 16985e3;
  params.target_periapsis = 6794e3;
  params.density = std::make_shared<ExponentialDensity>(0.0075, 11.1e3);

  SplitMix64 rng(31337ULL);
  int tested = 0;
  double worst_apo = 0.0;
  while (tested < 100) {
    const double r = 3450e3 + 500e3 * rng.next_uniform();
    const double v_circ = std::sqrt(mu / r);
    const double v = v_circ * (0.8 + 0.45 * rng.next_uniform());
    const double gamma = 0.02 + 0.35 * rng.next_uniform();
    const double energy = 0.5 * v * v - mu / r;
    if (energy >= -0.02 * mu / r) continue;  // keep comfortably elliptical
    Vector x(3);
    x << r, v, gamma;
    double ra;
    try {
      ra = exit_orbit_apoapsis(x, mu);
    } catch (const NumericError&) {
      continue;
    }
    bool conserved = false;
    const double oracle = apoapsis_by_integration(r, v, gamma, mu, &conserved);
    if (!conserved) return {false, "oracle integration lost energy accuracy"};
    worst_apo = std::max(worst_apo, std::abs(ra - oracle) / oracle);
    ++tested;
  }
  if (worst_apo > 1e-9) {
    return {false, fmt("apoapsis rel err %.2e (>1e-9)", worst_apo)};
  }

  // Transfer-cost gradient against Richardson-extrapolated differences.
  double worst_grad = 0.0;
  int grads = 0;
  SplitMix64 rng2(8111ULL);
  while (grads < 20) {
    const double r = 3450e3 + 400e3 * rng2.next_uniform();
    const double v_circ = std::sqrt(mu / r);
    const double v = v_circ * (0.9 + 0.3 * rng2.next_uniform());
    const double gamma = 0.03 + 0.25 * rng2.next_uniform();
    Vector x(3);
    x << r, v, gamma;
    try {
      if (exit_orbit_apoapsis(x, mu) < 1.05 * params.target_periapsis) continue;
      const Vector g = transfer_delta_v_gradient(x, params);
      Vector fd(3);
      for (int j = 0; j < 3; ++j) {
        const double h = 1e-4 * std::max(1.0, std::abs(x[j]) * 1e-3);
        auto diff = [&](double step) {
          Vector xp = x, xm = x;
          xp[j] += step;
          xm[j] -= step;
          return (transfer_delta_v(xp, params) - transfer_delta_v(xm, params)) /
                 (2.0 * step);
        };
        fd[j] = (4.0 * diff(h) - diff(2.0 * h)) / 3.0;
      }
      worst_grad = std::max(worst_grad, (g - fd).norm() / fd.norm());
      ++grads;
    } catch (const NumericError&) {
      continue;
    }
  }
  return {worst_grad <= 1e-5,
          fmt("apoapsis rel err %.2e (<=1e-9), gradient rel err %.2e (<=1e-5)",
              worst_apo, worst_grad)};
}

// ---- 8 and 9: entry steering closed loop ---------------------------------

struct EntryResults {
  bool solved = false;
  bool monotone = false;
  double closed_p99 = 0.0;
  double open_p99 = 0.0;
  std::string note;
  McReport closed;
  LinearPrediction pred;
  NominalTrajectory nominal;
  std::shared_ptr<SystemModel> model;
};

EntryResults run_entry_pipeline() {
  EntryResults out;
  ScenarioConfig cfg =
      load_scenario(std::string(COVSTEER_CONFIG_DIR) + "/aerocapture.json");
  out.model = cfg.model;
  BarrierSolver solver;
  ScpResult res;
  try {
    res = run_scp(cfg.problem, solver);
  } catch (const std::exception& e) {
    out.note = e.what();
    return out;
  }
  out.solved = true;
  out.monotone = res.records.size() >= 2;
  for (std::size_t i = 1; i < res.records.size(); ++i) {
    if (!(res.records[i].tail_estimate <
          res.records[i - 1].tail_estimate + 1e-9)) {
      out.monotone = false;
    }
  }

  const auto* aero = dynamic_cast<const AerocaptureModel*>(cfg.model.get());
  std::function<double(const Vector&)> cost = [aero](const Vector& x) {
    return transfer_delta_v(x, aero->params());
  };

  McConfig closed_cfg = cfg.mc;
  const McReport closed =
      run_monte_carlo(*cfg.model, *cfg.field, res.policy, cfg.problem.x0_cov,
                      cfg.problem.chance, closed_cfg, &cost);
  McConfig open_cfg = cfg.mc;
  open_cfg.open_loop = true;
  const McReport open =
      run_monte_carlo(*cfg.model, *cfg.field, res.policy, cfg.problem.x0_cov,
                      cfg.problem.chance, open_cfg, &cost);

  out.closed_p99 = closed.terminal_cost_p99;
  out.open_p99 = open.terminal_cost_p99;
  out.closed = closed;
  out.pred = linear_covariance_prediction(res.blocks, res.L, res.policy,
                                          *cfg.field, *cfg.model, res.nominal);
  out.nominal = res.nominal;
  out.note = fmt("closed p99 %.1f, open p99 %.1f, completed %d/%d",
                 closed.terminal_cost_p99, open.terminal_cost_p99,
                 closed.trials_completed, open.trials_completed);
  return out;
}

Outcome check_entry_ratio(const EntryResults& er) {
  if (!er.solved) return {false, "solve failed: " + er.note};
  const bool ratio_ok =
      er.closed_p99 > 0.0 && er.closed_p99 <= 0.6 * er.open_p99;
  return {ratio_ok && er.monotone,
          fmt("%s, ratio %.3f (<=0.6), surrogate monotone=%d", er.note.c_str(),
              er.open_p99 > 0 ? er.closed_p99 / er.open_p99 : 0.0,
              er.monotone ? 1 : 0)};
}

Outcome check_density_envelope(const EntryResults& er) {
  if (!er.solved) return {false, "no entry run available"};
  const auto* aero = dynamic_cast<const AerocaptureModel*>(er.model.get());
  double q_peak = -1.0, t_peak = 0.0;
  for (std::size_t i = 0; i < er.nominal.dense_times.size(); ++i) {
    const double q = aero->dynamic_pressure(er.nominal.dense_states[i]);
    if (q > q_peak) {
      q_peak = q;
      t_peak = er.nominal.dense_times[i];
    }
  }
  int checked = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < er.closed.knot_times.size(); ++k) {
    if (er.closed.knot_times[k] >= t_peak) break;
    const double model_sigma = er.pred.field_sigma[k];
    if (model_sigma <= 0.0) continue;
    worst = std::max(worst,
                     std::abs(er.closed.field_sigma[k] - model_sigma) / model_sigma);
    ++checked;
  }
  return {checked > 0 && worst <= 0.15,
          fmt("%d knots before peak dynamic pressure (t=%.0f s), worst sigma "
              "rel err %.4f (<=0.15)",
              checked, t_peak, worst)};
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* label;
    std::function<Outcome()> run;
  };

  EntryResults entry_results;
  bool entry_ran = false;
  auto entry = [&]() -> const EntryResults& {
    if (!entry_ran) {
      entry_results = run_entry_pipeline();
      entry_ran = true;
    }
    return entry_results;
  };

  const std::vector<Entry> checks = {
      {1, "double-integrator chance constraints, terminal mean, covariance bound",
       check_double_integrator},
      {2, "constant-kernel disturbance moments match the closed form",
       check_constant_kernel_moments},
      {3, "zero-gain Monte Carlo matches the stacked covariance",
       check_uncontrolled_covariance},
      {4, "deterministic subproblem matches the normal-equations oracle",
       check_deterministic_reduction},
      {5, "normal quantile values", check_quantile},
      {6, "sequential sampling matches the joint law", check_sequential_sampling},
      {7, "orbit apoapsis and transfer-cost gradient oracles", check_orbit_oracle},
      {8, "closed-loop tail cost beats open loop under the bundled entry config",
       [&]() { return check_entry_ratio(entry()); }},
      {9, "density variation envelope agrees with the kernel along the nominal",
       [&]() { return check_density_envelope(entry()); }},
  };

  int failures = 0;
  for (const auto& c : checks) {
    const double t0 = now_s();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double dt = now_s() - t0;
    std::printf("[%s] %d: %s: %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", c.id,
                c.label, out.detail.c_str(), dt);
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  if (failures == 0) {
    std::printf("all %zu acceptance checks passed\n", checks.size());
  } else {
    std::printf("%d acceptance check(s) failed\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
