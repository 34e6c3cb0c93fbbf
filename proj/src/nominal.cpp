#include "covsteer/nominal.hpp"

#include <algorithm>
#include <cmath>

#include "covsteer/errors.hpp"

namespace covsteer {

void TimePartition::validate() const {
  if (knots.size() < 2) {
    throw ConfigError("partition: need at least two knots");
  }
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) {
      throw ConfigError("partition: knots must be strictly increasing");
    }
  }
  if (substeps_per_segment < 1) {
    throw ConfigError("partition: substeps_per_segment must be at least 1");
  }
}

Vector rk4_step(const SystemModel& model, const Vector& x, const Vector& u,
                double h, const std::function<double(double)>& field_at) {
  const Vector k1 = model.f(x, u, field_at(model.field_index(x)));
  const Vector x2 = x + 0.5 * h * k1;
  const Vector k2 = model.f(x2, u, field_at(model.field_index(x2)));
  const Vector x3 = x + 0.5 * h * k2;
  const Vector k3 = model.f(x3, u, field_at(model.field_index(x3)));
  const Vector x4 = x + h * k3;
  const Vector k4 = model.f(x4, u, field_at(model.field_index(x4)));
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace {

// Joint RK4 step for the state and the transition matrix of the frozen-field
// linearization, with the field held at its mean along the way.
void rk4_step_with_stm(const SystemModel& model, const GaussianRandomField& field,
                       const Vector& u, double h, Vector& x, Matrix& phi) {
  auto mean_at = [&](const Vector& s) { return field.mean(model.field_index(s)); };

  const Vector k1 = model.f(x, u, mean_at(x));
  const Matrix p1 = model.jac_state(x, u, mean_at(x)) * phi;

  const Vector x2 = x + 0.5 * h * k1;
  const Matrix phi2 = phi + 0.5 * h * p1;
  const Vector k2 = model.f(x2, u, mean_at(x2));
  const Matrix p2 = model.jac_state(x2, u, mean_at(x2)) * phi2;

  const Vector x3 = x + 0.5 * h * k2;
  const Matrix phi3 = phi + 0.5 * h * p2;
  const Vector k3 = model.f(x3, u, mean_at(x3));
  const Matrix p3 = model.jac_state(x3, u, mean_at(x3)) * phi3;

  const Vector x4 = x + h * k3;
  const Matrix phi4 = phi + h * p3;
  const Vector k4 = model.f(x4, u, mean_at(x4));
  const Matrix p4 = model.jac_state(x4, u, mean_at(x4)) * phi4;

  x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  phi += (h / 6.0) * (p1 + 2.0 * p2 + 2.0 * p3 + p4);
}

}  // namespace

NominalTrajectory propagate_nominal(const SystemModel& model,
                                    const GaussianRandomField& field,
                                    const Vector& x0,
                                    const std::vector<Vector>& controls,
                                    const TimePartition& partition,
                                    int quad_order) {
  partition.validate();
  const int num_segments = partition.segments();
  if (static_cast<int>(controls.size()) != num_segments) {
    throw ConfigError("propagate_nominal: one control per segment expected");
  }
  if (x0.size() != model.state_dim()) {
    throw ConfigError("propagate_nominal: initial state has wrong dimension");
  }
  const GaussLegendre gl = gauss_legendre(quad_order);
  const int n = model.state_dim();

  NominalTrajectory traj;
  traj.partition = partition;
  traj.controls = controls;
  traj.knot_states.reserve(num_segments + 1);
  traj.segments.resize(num_segments);

  Vector x = x0;
  traj.knot_states.push_back(x);
  traj.dense_times.push_back(partition.knots.front());
  traj.dense_states.push_back(x);

  for (int k = 0; k < num_segments; ++k) {
    const double t0 = partition.knots[k];
    const double t1 = partition.knots[k + 1];
    const double dt = t1 - t0;
    auto& seg = traj.segments[k];

    // Integration grid: uniform substeps merged with the quadrature nodes so
    // node states and STMs are sampled without interpolation.
    std::vector<double> grid;
    grid.reserve(partition.substeps_per_segment + quad_order + 1);
    for (int i = 0; i <= partition.substeps_per_segment; ++i) {
      grid.push_back(t0 + dt * i / partition.substeps_per_segment);
    }
    seg.node_times.resize(quad_order);
    for (int q = 0; q < quad_order; ++q) {
      seg.node_times[q] = t0 + 0.5 * dt * (gl.nodes[q] + 1.0);
      grid.push_back(seg.node_times[q]);
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end(),
                           [dt](double a, double b) { return std::abs(a - b) < 1e-12 * dt; }),
               grid.end());

    Matrix phi = Matrix::Identity(n, n);
    seg.node_states.resize(quad_order);
    seg.node_stms.resize(quad_order);
    std::size_t next_node = 0;

    auto record_if_node = [&](double t) {
      while (next_node < seg.node_times.size() &&
             std::abs(seg.node_times[next_node] - t) < 1e-9 * dt) {
        seg.node_states[next_node] = x;
        seg.node_stms[next_node] = phi;
        ++next_node;
      }
    };

    record_if_node(t0);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
      rk4_step_with_stm(model, field, controls[k], grid[i + 1] - grid[i], x, phi);
      if (!x.allFinite()) {
        throw NumericError("propagate_nominal: state diverged in segment " + std::to_string(k));
      }
      record_if_node(grid[i + 1]);
      traj.dense_times.push_back(grid[i + 1]);
      traj.dense_states.push_back(x);
    }
    if (next_node != seg.node_times.size()) {
      throw NumericError("propagate_nominal: quadrature node not hit by the integration grid");
    }
    seg.end_stm = phi;
    traj.knot_states.push_back(x);
  }
  return traj;
}

}  // namespace covsteer
