#pragma once

#include "covsteer/discretize.hpp"

namespace covsteer {

// Stacked formulation over the whole horizon:
//   X = Abold x_0 + Bbold U + Cbold + Gbold W
// with X of dimension n(N+1) (knot 0 included) and U, W of dimension mN, nN.
// S is the covariance of the uncontrolled stacked deviation
// Abold x0_dev + Gbold W_dev, factored as S = S_half^T S_half.
struct BlockSteeringData {
  int n = 0;
  int m = 0;
  int N = 0;

  Matrix Abold;    // n(N+1) x n
  Matrix Bbold;    // n(N+1) x mN
  Vector Cbold;    // n(N+1)
  Matrix Gbold;    // n(N+1) x nN
  Vector Wbar;     // nN
  Matrix Wcov;     // nN x nN

  std::vector<Matrix> step_A;  // N per-step transition blocks, n x n
  std::vector<Matrix> step_B;  // N per-step input blocks, n x m

  Vector x0_mean;  // n
  Matrix x0_cov;   // n x n

  Matrix S;        // n(N+1) x n(N+1)
  Matrix S_half;

  int state_stack_dim() const { return n * (N + 1); }
  int control_stack_dim() const { return m * N; }

  // Mean of X for a given stacked feedforward V.
  Vector mean_trajectory(const Vector& V) const;

  // Constant part of the mean map (V = 0).
  Vector mean_offset() const;
};

BlockSteeringData assemble_blocks(const DiscreteLTVProblem& ltv,
                                  const Vector& x0_mean, const Matrix& x0_cov);

// State-history feedback in innovation form.  At each knot the policy
// reconstructs the deviation the trajectory would have shown with the
// feedback switched off,
//   d_k = (x_k - xbar_k) - s_k,   s_{k+1} = A_k s_k + B_k (u_k - v_k),
// and applies u_k = v_k + sum_{l<=k} gains[k][l] d_l.  In the linearized
// model this reproduces U = V + L D exactly, but unlike the reduced pure
// state-feedback form K = L (I + Bbold L)^{-1} it never inverts I + Bbold L,
// which approaches singularity precisely when the steering squeezes hard.
struct FeedbackPolicy {
  std::vector<double> knots;
  int n = 0;
  int m = 0;
  int N = 0;
  std::vector<Vector> xbar;                  // N+1 reference means
  std::vector<Vector> v;                     // N feedforward terms
  std::vector<std::vector<Matrix>> gains;    // gains[k][l], l = 0..k, m x n
  std::vector<Matrix> step_a;                // N blocks, n x n
  std::vector<Matrix> step_b;                // N blocks, n x m

  void validate() const;
  Matrix stacked_gains() const;              // mN x n(N+1), block lower triangular
};

// Maps between the disturbance-feedback parameterization L and the reduced
// pure-state-feedback gains K = L (I + Bbold L)^{-1}, L = K (I - Bbold K)^{-1}.
// Kept for analysis and cross-checks; the executed policy stays in L form.
Matrix gains_from_l(const BlockSteeringData& blocks, const Matrix& L);
Matrix l_from_gains(const BlockSteeringData& blocks, const Matrix& K);

FeedbackPolicy make_policy(const BlockSteeringData& blocks,
                           const std::vector<double>& knots, const Matrix& L,
                           const Vector& V);

// Closed-loop second moments under the policy parameterized by L:
// Cov(X) = (I + Bbold L) S (I + Bbold L)^T and Cov(U) = L S L^T.
Matrix closed_loop_state_cov(const BlockSteeringData& blocks, const Matrix& L);
Matrix closed_loop_control_cov(const BlockSteeringData& blocks, const Matrix& L);

}  // namespace covsteer
