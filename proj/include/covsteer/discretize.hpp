#pragma once

#include "covsteer/grf.hpp"
#include "covsteer/nominal.hpp"

namespace covsteer {

// Discrete LTV model x_{k+1} = A_k x_k + B_k u_k + c_k + w_k obtained by
// integrating the linearization along the nominal.  The disturbances w_k
// collect the random-field forcing filtered through the state transition
// matrix; their joint first and second moments over all segments are stored
// densely since the field correlates arbitrary segment pairs.
struct DiscreteLTVProblem {
  int n = 0;
  int m = 0;
  int N = 0;

  std::vector<Matrix> A;      // N blocks, n x n
  std::vector<Matrix> B;      // N blocks, n x m
  std::vector<Vector> c;      // N blocks, n

  std::vector<Vector> wbar;   // E(w_k), n each
  Matrix wcov;                // Cov of stacked (w_0..w_{N-1}), (N n) x (N n)

  // Quadrature support per segment: influence vectors m_q = weight *
  // Phi(t_{k+1}, t_q) G(t_q) as columns, the field index at each node, and the
  // field mean there.  Kept public so the disturbance statistics can be
  // re-derived in tests and diagnostics.
  std::vector<Matrix> node_influence;    // n x Q
  std::vector<std::vector<double>> node_field_index;
  std::vector<std::vector<double>> node_field_mean;
};

// Builds the segment matrices and disturbance statistics from a propagated
// nominal.  The covariance assembly is OpenMP-parallel across block pairs when
// `parallel` is set; the serial path runs the identical per-block kernel and
// produces bitwise identical results.
DiscreteLTVProblem discretize(const SystemModel& model,
                              const GaussianRandomField& field,
                              const NominalTrajectory& nominal,
                              bool parallel = true);

}  // namespace covsteer
