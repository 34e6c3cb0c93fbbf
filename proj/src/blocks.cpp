#include "covsteer/blocks.hpp"

#include "covsteer/errors.hpp"

namespace covsteer {

Vector BlockSteeringData::mean_offset() const {
  return Abold * x0_mean + Cbold + Gbold * Wbar;
}

Vector BlockSteeringData::mean_trajectory(const Vector& V) const {
  return mean_offset() + Bbold * V;
}

BlockSteeringData assemble_blocks(const DiscreteLTVProblem& ltv,
                                  const Vector& x0_mean, const Matrix& x0_cov) {
  const int n = ltv.n, m = ltv.m, N = ltv.N;
  if (x0_mean.size() != n || x0_cov.rows() != n || x0_cov.cols() != n) {
    throw ConfigError("assemble_blocks: initial moments have wrong dimensions");
  }
  BlockSteeringData out;
  out.n = n;
  out.m = m;
  out.N = N;
  out.x0_mean = x0_mean;
  out.x0_cov = x0_cov;

  const int ns = n * (N + 1);
  out.Abold = Matrix::Zero(ns, n);
  out.Bbold = Matrix::Zero(ns, m * N);
  out.Cbold = Vector::Zero(ns);
  out.Gbold = Matrix::Zero(ns, n * N);

  // Row k+1 of each stack follows from row k through the step dynamics.
  out.Abold.topRows(n) = Matrix::Identity(n, n);
  for (int k = 0; k < N; ++k) {
    const Matrix& Ak = ltv.A[k];
    const int rk = k * n;        // row offset of knot k
    const int rk1 = (k + 1) * n; // row offset of knot k+1

    out.Abold.middleRows(rk1, n) = Ak * out.Abold.middleRows(rk, n);

    out.Bbold.middleRows(rk1, n) = Ak * out.Bbold.middleRows(rk, n);
    out.Bbold.block(rk1, k * m, n, m) = ltv.B[k];

    out.Gbold.middleRows(rk1, n) = Ak * out.Gbold.middleRows(rk, n);
    out.Gbold.block(rk1, k * n, n, n) = Matrix::Identity(n, n);

    out.Cbold.segment(rk1, n) = Ak * out.Cbold.segment(rk, n) + ltv.c[k];
  }

  out.Wbar = Vector::Zero(n * N);
  for (int k = 0; k < N; ++k) out.Wbar.segment(k * n, n) = ltv.wbar[k];
  out.Wcov = ltv.wcov;
  out.step_A = ltv.A;
  out.step_B = ltv.B;

  out.S = out.Abold * x0_cov * out.Abold.transpose() +
          out.Gbold * ltv.wcov * out.Gbold.transpose();
  out.S = 0.5 * (out.S + out.S.transpose());
  out.S_half = psd_sqrt_factor(out.S);
  return out;
}

void FeedbackPolicy::validate() const {
  if (static_cast<int>(knots.size()) != N + 1) {
    throw ConfigError("policy: knot count does not match the step count");
  }
  if (static_cast<int>(xbar.size()) != N + 1 || static_cast<int>(v.size()) != N ||
      static_cast<int>(gains.size()) != N || static_cast<int>(step_a.size()) != N ||
      static_cast<int>(step_b.size()) != N) {
    throw ConfigError("policy: inconsistent array lengths");
  }
  for (int k = 0; k < N; ++k) {
    if (static_cast<int>(gains[k].size()) != k + 1) {
      throw ConfigError("policy: step " + std::to_string(k) + " must carry gains for knots 0.." +
                        std::to_string(k));
    }
    for (const auto& blk : gains[k]) {
      if (blk.rows() != m || blk.cols() != n) {
        throw ConfigError("policy: gain block has wrong dimensions");
      }
    }
    if (step_a[k].rows() != n || step_a[k].cols() != n || step_b[k].rows() != n ||
        step_b[k].cols() != m) {
      throw ConfigError("policy: step dynamics block has wrong dimensions");
    }
  }
}

Matrix FeedbackPolicy::stacked_gains() const {
  Matrix Lb = Matrix::Zero(m * N, n * (N + 1));
  for (int k = 0; k < N; ++k) {
    for (int l = 0; l <= k; ++l) {
      Lb.block(k * m, l * n, m, n) = gains[k][l];
    }
  }
  return Lb;
}

Matrix gains_from_l(const BlockSteeringData& blocks, const Matrix& L) {
  const int nu = blocks.control_stack_dim();
  const Matrix ident = Matrix::Identity(nu, nu);
  // K = L (I + Bbold L)^{-1} evaluated through the control-side identity
  // (I + L Bbold)^{-1} L, which keeps the solve at control dimension.
  return (ident + L * blocks.Bbold).partialPivLu().solve(L);
}

Matrix l_from_gains(const BlockSteeringData& blocks, const Matrix& K) {
  const int nu = blocks.control_stack_dim();
  const Matrix ident = Matrix::Identity(nu, nu);
  return (ident - K * blocks.Bbold).partialPivLu().solve(K);
}

FeedbackPolicy make_policy(const BlockSteeringData& blocks,
                           const std::vector<double>& knots, const Matrix& L,
                           const Vector& V) {
  const int n = blocks.n, m = blocks.m, N = blocks.N;
  FeedbackPolicy policy;
  policy.knots = knots;
  policy.n = n;
  policy.m = m;
  policy.N = N;

  const Vector xbar = blocks.mean_trajectory(V);
  policy.xbar.resize(N + 1);
  for (int k = 0; k <= N; ++k) policy.xbar[k] = xbar.segment(k * n, n);
  policy.v.resize(N);
  for (int k = 0; k < N; ++k) policy.v[k] = V.segment(k * m, m);

  policy.gains.resize(N);
  for (int k = 0; k < N; ++k) {
    policy.gains[k].resize(k + 1);
    for (int l = 0; l <= k; ++l) {
      policy.gains[k][l] = L.block(k * m, l * n, m, n);
    }
  }
  policy.step_a = blocks.step_A;
  policy.step_b = blocks.step_B;
  policy.validate();
  return policy;
}

Matrix closed_loop_state_cov(const BlockSteeringData& blocks, const Matrix& L) {
  const int ns = blocks.state_stack_dim();
  const Matrix closed = Matrix::Identity(ns, ns) + blocks.Bbold * L;
  Matrix cov = closed * blocks.S * closed.transpose();
  return 0.5 * (cov + cov.transpose());
}

Matrix closed_loop_control_cov(const BlockSteeringData& blocks, const Matrix& L) {
  Matrix cov = L * blocks.S * L.transpose();
  return 0.5 * (cov + cov.transpose());
}

}  // namespace covsteer
