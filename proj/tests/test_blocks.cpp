#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "covsteer/blocks.hpp"
#include "covsteer/dynamics.hpp"
#include "covsteer/grf.hpp"
#include "covsteer/nominal.hpp"
#include "covsteer/rng.hpp"

using namespace covsteer;

namespace {

// Small double-integrator horizon with a squared-exponential field, used by
// every test below.
struct Fixture {
  DoubleIntegratorModel model;
  GaussianRandomField field;
  NominalTrajectory nominal;
  DiscreteLTVProblem ltv;
  BlockSteeringData blocks;

  Fixture()
      : field(make_kernel(), [](double) { return 0.02; }),
        nominal(make_nominal(model, field)),
        ltv(discretize(model, field, nominal)),
        blocks(assemble_blocks(ltv, x0_mean(), x0_cov())) {}

  static KernelSpec make_kernel() {
    KernelSpec k;
    k.kind = KernelKind::SquaredExponential;
    k.variance = 2.5e-3;
    k.length = 0.7;
    return k;
  }
  static Vector x0_mean() {
    Vector v(2);
    v << 0.1, 0.2;
    return v;
  }
  static Matrix x0_cov() {
    Matrix p(2, 2);
    p << 4e-4, 1e-5, 1e-5, 9e-5;
    return p;
  }
  static NominalTrajectory make_nominal(const SystemModel& model,
                                        const GaussianRandomField& field) {
    TimePartition part;
    part.knots = {0.0, 1.0, 2.0, 3.0};
    part.substeps_per_segment = 8;
    std::vector<Vector> controls(3, Vector::Zero(1));
    controls[1] << 0.3;
    return propagate_nominal(model, field, x0_mean(), controls, part, 8);
  }
};

// Random lower-triangular feedback with moderate entries.
Matrix random_l(const BlockSteeringData& b, SplitMix64& rng, double scale) {
  Matrix L = Matrix::Zero(b.control_stack_dim(), b.state_stack_dim());
  for (int k = 0; k < b.N; ++k) {
    for (int l = 0; l <= k; ++l) {
      for (int r = 0; r < b.m; ++r) {
        for (int c = 0; c < b.n; ++c) {
          L(k * b.m + r, l * b.n + c) = scale * (2.0 * rng.next_uniform() - 1.0);
        }
      }
    }
  }
  return L;
}

}  // namespace

TEST_CASE("stacked recursion reproduces the step recursion exactly") {
  const Fixture fx;
  const auto& b = fx.blocks;
  SplitMix64 rng(91ULL);

  Vector x0(2), U(3), W(6);
  for (int i = 0; i < 2; ++i) x0[i] = rng.next_normal();
  for (int i = 0; i < 3; ++i) U[i] = rng.next_normal();
  for (int i = 0; i < 6; ++i) W[i] = 0.01 * rng.next_normal();

  const Vector stacked = b.Abold * x0 + b.Bbold * U + b.Cbold + b.Gbold * W;

  Vector x = x0;
  CHECK((stacked.segment(0, 2) - x).norm() <= 1e-14);
  for (int k = 0; k < 3; ++k) {
    x = fx.ltv.A[k] * x + fx.ltv.B[k] * U.segment(k, 1) + fx.ltv.c[k] +
        W.segment(2 * k, 2);
    CHECK((stacked.segment(2 * (k + 1), 2) - x).norm() <= 1e-12);
  }
}

TEST_CASE("mean trajectory with zero feedforward hits the nominal knots") {
  // The nominal was propagated with the field held at its mean, so the affine
  // mean map evaluated at the nominal controls must reproduce its knots.
  const Fixture fx;
  Vector V(3);
  V << 0.0, 0.3, 0.0;  // the controls the nominal was flown with
  const Vector mean = fx.blocks.mean_trajectory(V);
  for (int k = 0; k <= 3; ++k) {
    CHECK((mean.segment(2 * k, 2) - fx.nominal.knot_states[k]).norm() <= 1e-9);
  }
}

TEST_CASE("S equals the uncontrolled deviation covariance and S_half factors it") {
  const Fixture fx;
  const auto& b = fx.blocks;
  const Matrix expected = b.Abold * b.x0_cov * b.Abold.transpose() +
                          b.Gbold * b.Wcov * b.Gbold.transpose();
  CHECK((b.S - expected).norm() <= 1e-12 * expected.norm());
  CHECK((b.S_half.transpose() * b.S_half - b.S).norm() <= 1e-10 * b.S.norm());
}

TEST_CASE("sampled uncontrolled deviations match S") {
  const Fixture fx;
  const auto& b = fx.blocks;
  SplitMix64 rng(2024ULL);
  const Eigen::LLT<Matrix> p0_llt(b.x0_cov);
  const Matrix wcov_half = psd_sqrt_factor(b.Wcov);

  const int draws = 30000;
  Matrix second = Matrix::Zero(8, 8);
  for (int i = 0; i < draws; ++i) {
    Vector eta(2), xi(6);
    for (int j = 0; j < 2; ++j) eta[j] = rng.next_normal();
    for (int j = 0; j < 6; ++j) xi[j] = rng.next_normal();
    const Vector dev = b.Abold * (p0_llt.matrixL() * eta) +
                       b.Gbold * (wcov_half.transpose() * xi);
    second += dev * dev.transpose();
  }
  second /= draws;
  CHECK((second - b.S).norm() <= 0.05 * b.S.norm());
}

TEST_CASE("policy stores the L blocks and reassembles them") {
  const Fixture fx;
  SplitMix64 rng(5ULL);
  const Matrix L = random_l(fx.blocks, rng, 0.8);
  Vector V(3);
  V << 0.1, -0.2, 0.05;

  const FeedbackPolicy policy =
      make_policy(fx.blocks, fx.nominal.partition.knots, L, V);
  policy.validate();
  CHECK(policy.N == 3);
  CHECK((policy.stacked_gains() - L).norm() == 0.0);
  for (int k = 0; k < 3; ++k) {
    CHECK((policy.v[k] - V.segment(k, 1)).norm() == 0.0);
    CHECK((policy.step_a[k] - fx.ltv.A[k]).norm() == 0.0);
    CHECK((policy.step_b[k] - fx.ltv.B[k]).norm() == 0.0);
    for (int l = 0; l <= k; ++l) {
      CHECK((policy.gains[k][l] - L.block(k, 2 * l, 1, 2)).norm() == 0.0);
    }
  }
}

TEST_CASE("gains_from_l and l_from_gains invert each other") {
  const Fixture fx;
  SplitMix64 rng(17ULL);
  const Matrix L = random_l(fx.blocks, rng, 0.5);
  const Matrix K = gains_from_l(fx.blocks, L);
  const Matrix L_back = l_from_gains(fx.blocks, K);
  CHECK((L_back - L).norm() <= 1e-10 * std::max(1.0, L.norm()));
  // K inherits the block lower-triangular sparsity.
  for (int k = 0; k < 3; ++k) {
    for (int l = k + 1; l <= 3; ++l) {
      CHECK(K.block(k, 2 * l, 1, 2).norm() == 0.0);
    }
  }
}

TEST_CASE("closed-loop covariance formulas match a linear-system simulation") {
  // Simulate the exact linear model under the innovation-form policy and
  // compare sample covariances of states and controls with the closed-form
  // (I + B L) S (I + B L)^T and L S L^T.
  const Fixture fx;
  const auto& b = fx.blocks;
  SplitMix64 rng(33ULL);
  const Matrix L = random_l(fx.blocks, rng, 0.6);
  Vector V(3);
  V << 0.05, -0.1, 0.2;

  const FeedbackPolicy policy =
      make_policy(fx.blocks, fx.nominal.partition.knots, L, V);
  const Matrix state_cov = closed_loop_state_cov(b, L);
  const Matrix control_cov = closed_loop_control_cov(b, L);

  const Eigen::LLT<Matrix> p0_llt(b.x0_cov);
  const Matrix wcov_half = psd_sqrt_factor(b.Wcov);
  const Vector xbar_mean = b.mean_trajectory(V);

  const int draws = 30000;
  Matrix x_second = Matrix::Zero(8, 8);
  Matrix u_second = Matrix::Zero(3, 3);
  for (int i = 0; i < draws; ++i) {
    Vector eta(2), xi(6);
    for (int j = 0; j < 2; ++j) eta[j] = rng.next_normal();
    for (int j = 0; j < 6; ++j) xi[j] = rng.next_normal();
    const Vector x0 = b.x0_mean + p0_llt.matrixL() * eta;
    const Vector W = b.Wbar + wcov_half.transpose() * xi;

    // Innovation-form execution on the linear model.
    Vector fb_resp = Vector::Zero(2);
    std::vector<Vector> dhat(3);
    Vector x = x0;
    Vector xs(8), us(3);
    xs.segment(0, 2) = x - xbar_mean.segment(0, 2);
    for (int k = 0; k < 3; ++k) {
      dhat[k] = (x - xbar_mean.segment(2 * k, 2)) - fb_resp;
      Vector u = V.segment(k, 1);
      for (int l = 0; l <= k; ++l) u += policy.gains[k][l] * dhat[l];
      us[k] = u[0] - V[k];
      fb_resp = policy.step_a[k] * fb_resp + policy.step_b[k] * (u - V.segment(k, 1));
      x = fx.ltv.A[k] * x + fx.ltv.B[k] * u + fx.ltv.c[k] + W.segment(2 * k, 2);
      xs.segment(2 * (k + 1), 2) = x - xbar_mean.segment(2 * (k + 1), 2);
    }
    x_second += xs * xs.transpose();
    u_second += us * us.transpose();
  }
  x_second /= draws;
  u_second /= draws;
  CHECK((x_second - state_cov).norm() <= 0.05 * state_cov.norm());
  CHECK((u_second - control_cov).norm() <= 0.05 * control_cov.norm());
}

TEST_CASE("innovation-form execution reproduces U = V + L D on the linear model") {
  // Drive the uncontrolled and controlled linear recursions with identical
  // noise and check that the executed controls equal V + L D to machine
  // precision, where D stacks the uncontrolled deviations.
  const Fixture fx;
  const auto& b = fx.blocks;
  SplitMix64 rng(71ULL);
  const Matrix L = random_l(fx.blocks, rng, 1.2);
  Vector V(3);
  V << -0.3, 0.6, 0.1;
  const FeedbackPolicy policy =
      make_policy(fx.blocks, fx.nominal.partition.knots, L, V);

  for (int rep = 0; rep < 10; ++rep) {
    Vector x0(2), W(6);
    for (int j = 0; j < 2; ++j) x0[j] = b.x0_mean[j] + 0.05 * rng.next_normal();
    for (int j = 0; j < 6; ++j) W[j] = b.Wbar[j] + 0.02 * rng.next_normal();

    // Uncontrolled stacked deviation D.
    const Vector x_unc = b.Abold * x0 + b.Bbold * V + b.Cbold + b.Gbold * W;
    const Vector D = x_unc - b.mean_trajectory(V);
    const Vector u_expected = V + L * D;

    // Innovation-form closed loop with the same draws.
    Vector fb_resp = Vector::Zero(2);
    Vector x = x0;
    std::vector<Vector> dhat(3);
    for (int k = 0; k < 3; ++k) {
      dhat[k] = (x - b.mean_trajectory(V).segment(2 * k, 2)) - fb_resp;
      Vector u = V.segment(k, 1);
      for (int l = 0; l <= k; ++l) u += policy.gains[k][l] * dhat[l];
      CHECK(std::abs(u[0] - u_expected[k]) <= 1e-11 * std::max(1.0, u_expected.norm()));
      fb_resp = policy.step_a[k] * fb_resp + policy.step_b[k] * (u - V.segment(k, 1));
      x = fx.ltv.A[k] * x + fx.ltv.B[k] * u + fx.ltv.c[k] + W.segment(2 * k, 2);
    }
  }
}

TEST_CASE("policy validation rejects inconsistent shapes") {
  const Fixture fx;
  SplitMix64 rng(3ULL);
  const Matrix L = random_l(fx.blocks, rng, 0.3);
  Vector V = Vector::Zero(3);
  FeedbackPolicy policy = make_policy(fx.blocks, fx.nominal.partition.knots, L, V);
  policy.step_a.pop_back();
  CHECK_THROWS(policy.validate());
}
