/// @file bench.cpp
/// @brief Times the OpenMP-parallel kernels against the serial reference:
/// disturbance covariance assembly and Monte Carlo trial batches.

#include <chrono>
#include <cstdio>

#include <CLI11.hpp>

#include "covsteer/discretize.hpp"
#include "covsteer/monte_carlo.hpp"

using namespace covsteer;

namespace {

double time_call(const std::function<void()>& fn, int repeat) {
  double best = 1e300;
  for (int r = 0; r < repeat; ++r) {
    const auto tic = std::chrono::steady_clock::now();
    fn();
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    if (s < best) best = s;
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs parallel kernel timings"};
  int num_segments = 20;
  int trials = 200;
  int repeat = 3;
  app.add_option("--segments", num_segments, "Horizon segments");
  app.add_option("--trials", trials, "Monte Carlo trials per batch");
  app.add_option("--repeat", repeat, "Repetitions (best time wins)");
  CLI11_PARSE(app, argc, argv);

  DoubleIntegratorModel model;
  KernelSpec kernel;
  kernel.kind = KernelKind::LocallyPeriodic;
  kernel.variance = 2e-6;
  kernel.period = 0.35;
  kernel.periodic_length = 0.8;
  kernel.envelope_length = 1.0;
  GaussianRandomField field(kernel, [](double) { return 0.0; });

  TimePartition partition;
  for (int k = 0; k <= num_segments; ++k) partition.knots.push_back(k);
  partition.substeps_per_segment = 10;

  std::vector<Vector> controls(num_segments, Vector::Zero(1));
  Vector x0(2);
  x0 << 0.0, 0.1;
  const NominalTrajectory nominal =
      propagate_nominal(model, field, x0, controls, partition, 8);

  const double cov_serial =
      time_call([&] { discretize(model, field, nominal, false); }, repeat);
  const double cov_parallel =
      time_call([&] { discretize(model, field, nominal, true); }, repeat);

  const DiscreteLTVProblem ltv = discretize(model, field, nominal);
  const Matrix x0_cov = 1e-4 * Matrix::Identity(2, 2);
  const BlockSteeringData blocks = assemble_blocks(ltv, x0, x0_cov);
  const FeedbackPolicy policy = make_policy(
      blocks, partition.knots, Matrix::Zero(blocks.control_stack_dim(),
                                            blocks.state_stack_dim()),
      Vector::Zero(blocks.control_stack_dim()));

  McConfig mc;
  mc.trials = trials;
  mc.seed = 7;
  mc.substeps_per_segment = 10;
  ChanceConstraintSpec chance;

  mc.parallel = false;
  const double mc_serial = time_call(
      [&] { run_monte_carlo(model, field, policy, x0_cov, chance, mc, nullptr); },
      repeat);
  mc.parallel = true;
  const double mc_parallel = time_call(
      [&] { run_monte_carlo(model, field, policy, x0_cov, chance, mc, nullptr); },
      repeat);

#ifdef COVSTEER_HAVE_OPENMP
  const char* build = "openmp";
#else
  const char* build = "serial-only";
#endif
  std::printf("build: %s, segments: %d, trials: %d\n", build, num_segments, trials);
  std::printf("%-24s %10s %10s %8s\n", "kernel", "serial", "parallel", "speedup");
  std::printf("%-24s %9.1fms %9.1fms %7.2fx\n", "covariance assembly",
              1e3 * cov_serial, 1e3 * cov_parallel, cov_serial / cov_parallel);
  std::printf("%-24s %9.1fms %9.1fms %7.2fx\n", "monte carlo batch",
              1e3 * mc_serial, 1e3 * mc_parallel, mc_serial / mc_parallel);
  return 0;
}
