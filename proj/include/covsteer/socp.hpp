#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "covsteer/blocks.hpp"

namespace covsteer {

// Inverse standard normal CDF.  Rational initial guess refined with one
// Halley step against erfc, giving ~1e-14 absolute accuracy over (0, 1).
double gaussian_quantile(double p);

// Half-plane chance constraints: Pr(a^T x_k >= alpha) <= p at every knot for
// state rows, Pr(b^T u_k >= beta) <= p at every step for control rows.  Tail
// probabilities must lie in (0, 0.5) so the deterministic tightening keeps the
// feasible side convex.
struct StateChanceConstraint {
  Vector a;
  double alpha = 0.0;
  double p = 0.01;
};

struct ControlChanceConstraint {
  Vector b;
  double beta = 0.0;
  double p = 0.01;
};

struct ChanceConstraintSpec {
  std::vector<StateChanceConstraint> state;
  std::vector<ControlChanceConstraint> control;
};

// Objective pieces.  Weight matrices are carried in factor form (W = F^T F)
// so rank-deficient weights cost only their true number of rows.
struct SteeringObjective {
  std::vector<Matrix> q_factor;      // N+1 entries, r x n (may have 0 rows)
  std::vector<Matrix> r_factor;      // N entries, r x m
  std::vector<Matrix> rbar_factor;   // N entries, r x m
  std::vector<Vector> desired_mean;  // N+1 entries; empty means "track X_hat"

  double percentile_weight = 0.0;    // eta; 0 disables the tail term
  double tail_probability = 0.1;
  Vector percentile_direction;       // xi, length n
};

// One trust-region cone per step/knot: || F (y - center) || <= radius with F a
// factor of the metric.  Entries with no factor rows are skipped.
struct TrustRegionSpec {
  bool enabled = false;
  double control_radius = 0.0;
  Matrix control_factor;                  // r x m, shared across steps
  std::vector<Vector> control_center;     // N entries (previous controls)
  double state_radius = 0.0;
  std::vector<Matrix> state_factor;       // N+1 entries, r x n (0 rows = skip)
  std::vector<Vector> state_center;       // N+1 entries (previous nominal)
};

struct SecondOrderCone {
  Matrix F;
  Vector g;
  Vector f;
  double h = 0.0;
  std::string name;
};

// min 0.5 y^T H y + c^T y  s.t.  A y = b,  ||F_i y + g_i|| <= f_i^T y + h_i.
struct ConicProgram {
  int dim = 0;
  Matrix H;
  Vector c;
  Matrix A;
  Vector b;
  std::vector<SecondOrderCone> cones;

  int num_l = 0;     // leading entries parameterize the feedback matrix L
  int num_v = 0;     // then the stacked feedforward V
  int num_extra = 0; // trailing epigraph variables

  // Plain-text dump of the whole program (decision layout, dense cost,
  // equalities, cone blocks) for cross-checking against other solvers.
  void write_text(std::ostream& os) const;
};

// Index bookkeeping for the decision vector.  L entries are ordered by step k,
// then knot l <= k, then row-major within each m x n block; V follows, then
// any epigraph variable.
struct SubproblemLayout {
  int n = 0, m = 0, N = 0;
  int num_l = 0;
  int num_v = 0;
  int dim = 0;
  int epigraph_index = -1;

  int l_index(int k, int l, int row, int col) const;
  int v_index(int k, int row) const;
  Matrix unpack_l(const Vector& y) const;  // mN x n(N+1)
  Vector unpack_v(const Vector& y) const;
};

// Assembles the convex steering subproblem around the previous nominal
// (X_hat stacked into `xhat`, controls into `uhat`).
ConicProgram build_subproblem(const BlockSteeringData& blocks,
                              const SteeringObjective& objective,
                              const ChanceConstraintSpec& chance,
                              const TrustRegionSpec& trust,
                              const std::optional<Vector>& terminal_mean,
                              const std::optional<Matrix>& terminal_cov,
                              const Vector& xhat, const Vector& uhat,
                              SubproblemLayout* layout_out);

// Objective value J1 + J2 of a candidate (L, V), evaluated directly from the
// moment expressions rather than the canonical quadratic form.
double steering_objective_value(const BlockSteeringData& blocks,
                                const SteeringObjective& objective,
                                const Vector& xhat, const Matrix& L,
                                const Vector& V);

}  // namespace covsteer
