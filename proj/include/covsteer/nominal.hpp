#pragma once

#include <functional>
#include <vector>

#include "covsteer/dynamics.hpp"
#include "covsteer/grf.hpp"
#include "covsteer/linalg.hpp"

namespace covsteer {

// Time grid for the steering horizon: knots t_0 < ... < t_N with piecewise
// constant controls on each segment, integrated with `substeps_per_segment`
// fixed RK4 steps.
struct TimePartition {
  std::vector<double> knots;
  int substeps_per_segment = 10;

  int segments() const { return static_cast<int>(knots.size()) - 1; }
  void validate() const;
};

// One RK4 step of x' = f(x, u, psi) where psi is looked up at the field index
// of each stage state.  `field_at` sees the four stage lookups in order, which
// is also the contract the per-trial samplers rely on.
Vector rk4_step(const SystemModel& model, const Vector& x, const Vector& u,
                double h, const std::function<double(double)>& field_at);

struct NominalTrajectory {
  TimePartition partition;
  std::vector<Vector> knot_states;   // N+1 entries
  std::vector<Vector> controls;      // N entries

  // Quadrature support for the discretization: states and transition matrices
  // at the Gauss-Legendre nodes of each segment, plus the segment-end STM.
  struct Segment {
    std::vector<double> node_times;
    std::vector<Vector> node_states;
    std::vector<Matrix> node_stms;   // Phi(node, t_k)
    Matrix end_stm;                  // Phi(t_{k+1}, t_k)
  };
  std::vector<Segment> segments;

  // Every integration grid point, for diagnostics such as locating the peak
  // dynamic pressure.
  std::vector<double> dense_times;
  std::vector<Vector> dense_states;
};

// Integrates the mean trajectory x' = f(x, u_k, mu(phi(x))) with the field held
// at its mean, propagating the state transition matrix of the frozen-field
// linearization alongside so the quadrature nodes are hit exactly.
NominalTrajectory propagate_nominal(const SystemModel& model,
                                    const GaussianRandomField& field,
                                    const Vector& x0,
                                    const std::vector<Vector>& controls,
                                    const TimePartition& partition,
                                    int quad_order);

}  // namespace covsteer
