#pragma once

#include <memory>
#include <string>
#include <vector>

#include "covsteer/linalg.hpp"

namespace covsteer {

// Continuous-time model x' = f(x, u, psi) where psi is the scalar random-field
// value looked up at the model's field index phi(x).  Jacobians default to
// central differences; models override them when analytic forms are available.
class SystemModel {
 public:
  virtual ~SystemModel() = default;

  virtual int state_dim() const = 0;
  virtual int control_dim() const = 0;
  virtual std::string name() const = 0;

  virtual Vector f(const Vector& x, const Vector& u, double psi) const = 0;

  // Field index phi(x): where along the field the state currently sits.
  virtual double field_index(const Vector& x) const = 0;

  virtual Matrix jac_state(const Vector& x, const Vector& u, double psi) const;
  virtual Matrix jac_control(const Vector& x, const Vector& u, double psi) const;
  virtual Vector jac_field(const Vector& x, const Vector& u, double psi) const;
};

// Double integrator on a line: states (position, velocity), one control.  The
// field disturbs the acceleration and is indexed by position.
class DoubleIntegratorModel final : public SystemModel {
 public:
  int state_dim() const override { return 2; }
  int control_dim() const override { return 1; }
  std::string name() const override { return "double_integrator"; }

  Vector f(const Vector& x, const Vector& u, double psi) const override;
  double field_index(const Vector& x) const override { return x[0]; }
  Matrix jac_state(const Vector& x, const Vector& u, double psi) const override;
  Matrix jac_control(const Vector& x, const Vector& u, double psi) const override;
  Vector jac_field(const Vector& x, const Vector& u, double psi) const override;
};

// Mean atmospheric density as a function of altitude [m] -> [kg/m^3].
class DensityProfile {
 public:
  virtual ~DensityProfile() = default;
  virtual double density(double h) const = 0;
  virtual double ddensity_dh(double h) const = 0;
};

class ExponentialDensity final : public DensityProfile {
 public:
  ExponentialDensity(double surface_density, double scale_height);
  double density(double h) const override;
  double ddensity_dh(double h) const override;

 private:
  double rho0_;
  double scale_height_;
};

// Log-linear interpolation of a tabulated (altitude, density) profile, with
// the edge slopes reused outside the table.
class TabulatedDensity final : public DensityProfile {
 public:
  TabulatedDensity(std::vector<double> altitudes, std::vector<double> densities);
  double density(double h) const override;
  double ddensity_dh(double h) const override;

 private:
  double log_density(double h, double* slope) const;
  std::vector<double> h_;
  std::vector<double> log_rho_;
};

struct AerocaptureParams {
  double ballistic_coefficient = 150.0;     // [kg/m^2]
  double lift_to_drag = 0.2;
  double mu = 4.2828e13;                    // [m^3/s^2]
  double planet_radius = 3397e3;            // [m]
  double target_apoapsis = 5 * 3397e3;      // [m], radius
  double target_periapsis = 2 * 3397e3;     // [m], radius
  std::shared_ptr<const DensityProfile> density;
};

// Planar entry dynamics: states (radius [m], speed [m/s], flight-path angle
// [rad]), control = cosine of bank angle in [-1, 1].  The field value is the
// fractional density variation at the current altitude; realized density is
// rho_bar(h) * (1 + psi), clamped at zero.
class AerocaptureModel final : public SystemModel {
 public:
  explicit AerocaptureModel(AerocaptureParams params);

  int state_dim() const override { return 3; }
  int control_dim() const override { return 1; }
  std::string name() const override { return "aerocapture"; }

  Vector f(const Vector& x, const Vector& u, double psi) const override;
  double field_index(const Vector& x) const override {
    return x[0] - params_.planet_radius;
  }
  Matrix jac_state(const Vector& x, const Vector& u, double psi) const override;
  Matrix jac_control(const Vector& x, const Vector& u, double psi) const override;
  Vector jac_field(const Vector& x, const Vector& u, double psi) const override;

  const AerocaptureParams& params() const { return params_; }

  // Dynamic pressure 0.5 rho_bar(h) v^2 along the mean profile.
  double dynamic_pressure(const Vector& x) const;
  Vector dynamic_pressure_gradient(const Vector& x) const;

 private:
  AerocaptureParams params_;
};

// ---- Exit orbit geometry -------------------------------------------------
//
// All of these treat the exit state (r, v, gamma) as the start of a two-body
// coast and throw NumericError when the state is not a captured ellipse (or
// the burn geometry degenerates), which Monte Carlo counts as a failed trial.

double exit_orbit_apoapsis(const Vector& x_exit, double mu);

// Impulsive cost of the two-burn cleanup after atmospheric exit: raise
// periapsis at the exit orbit's apoapsis, then correct the apoapsis at the new
// periapsis onto the target orbit.
double transfer_delta_v(const Vector& x_exit, const AerocaptureParams& params);

Vector transfer_delta_v_gradient(const Vector& x_exit,
                                 const AerocaptureParams& params);
Vector exit_orbit_apoapsis_gradient(const Vector& x_exit, double mu);

}  // namespace covsteer
