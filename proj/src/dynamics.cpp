#include "covsteer/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "covsteer/errors.hpp"

namespace covsteer {

namespace {
double fd_step(double v) { return 1e-6 * std::max(1.0, std::abs(v)); }
}  // namespace

Matrix SystemModel::jac_state(const Vector& x, const Vector& u, double psi) const {
  const int n = state_dim();
  Matrix jac(n, n);
  Vector xp = x, xm = x;
  for (int j = 0; j < n; ++j) {
    const double h = fd_step(x[j]);
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    jac.col(j) = (f(xp, u, psi) - f(xm, u, psi)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return jac;
}

Matrix SystemModel::jac_control(const Vector& x, const Vector& u, double psi) const {
  const int n = state_dim();
  const int m = control_dim();
  Matrix jac(n, m);
  Vector up = u, um = u;
  for (int j = 0; j < m; ++j) {
    const double h = fd_step(u[j]);
    up[j] = u[j] + h;
    um[j] = u[j] - h;
    jac.col(j) = (f(x, up, psi) - f(x, um, psi)) / (2.0 * h);
    up[j] = u[j];
    um[j] = u[j];
  }
  return jac;
}

Vector SystemModel::jac_field(const Vector& x, const Vector& u, double psi) const {
  const double h = fd_step(psi);
  return (f(x, u, psi + h) - f(x, u, psi - h)) / (2.0 * h);
}

// ---- Double integrator ---------------------------------------------------

Vector DoubleIntegratorModel::f(const Vector& x, const Vector& u, double psi) const {
  Vector out(2);
  out[0] = x[1];
  out[1] = u[0] + psi;
  return out;
}

Matrix DoubleIntegratorModel::jac_state(const Vector&, const Vector&, double) const {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 1) = 1.0;
  return a;
}

Matrix DoubleIntegratorModel::jac_control(const Vector&, const Vector&, double) const {
  Matrix b = Matrix::Zero(2, 1);
  b(1, 0) = 1.0;
  return b;
}

Vector DoubleIntegratorModel::jac_field(const Vector&, const Vector&, double) const {
  Vector g = Vector::Zero(2);
  g[1] = 1.0;
  return g;
}

// ---- Density profiles ----------------------------------------------------

ExponentialDensity::ExponentialDensity(double surface_density, double scale_height)
    : rho0_(surface_density), scale_height_(scale_height) {
  if (!(surface_density > 0.0) || !(scale_height > 0.0)) {
    throw ConfigError("exponential density: surface density and scale height must be positive");
  }
}

double ExponentialDensity::density(double h) const {
  return rho0_ * std::exp(-h / scale_height_);
}

double ExponentialDensity::ddensity_dh(double h) const {
  return -density(h) / scale_height_;
}

TabulatedDensity::TabulatedDensity(std::vector<double> altitudes,
                                   std::vector<double> densities) {
  if (altitudes.size() != densities.size() || altitudes.size() < 2) {
    throw ConfigError("tabulated density: need at least two (altitude, density) rows");
  }
  for (std::size_t i = 0; i < altitudes.size(); ++i) {
    if (i > 0 && !(altitudes[i] > altitudes[i - 1])) {
      throw ConfigError("tabulated density: altitudes must be strictly increasing");
    }
    if (!(densities[i] > 0.0)) {
      throw ConfigError("tabulated density: densities must be positive");
    }
  }
  h_ = std::move(altitudes);
  log_rho_.resize(h_.size());
  for (std::size_t i = 0; i < h_.size(); ++i) log_rho_[i] = std::log(densities[i]);
}

double TabulatedDensity::log_density(double h, double* slope) const {
  std::size_t hi = std::upper_bound(h_.begin(), h_.end(), h) - h_.begin();
  hi = std::clamp<std::size_t>(hi, 1, h_.size() - 1);
  const std::size_t lo = hi - 1;
  const double s = (log_rho_[hi] - log_rho_[lo]) / (h_[hi] - h_[lo]);
  if (slope) *slope = s;
  return log_rho_[lo] + s * (h - h_[lo]);
}

double TabulatedDensity::density(double h) const {
  return std::exp(log_density(h, nullptr));
}

double TabulatedDensity::ddensity_dh(double h) const {
  double slope = 0.0;
  const double lr = log_density(h, &slope);
  return slope * std::exp(lr);
}

// ---- Aerocapture ---------------------------------------------------------

AerocaptureModel::AerocaptureModel(AerocaptureParams params)
    : params_(std::move(params)) {
  if (!params_.density) {
    throw ConfigError("aerocapture: no density profile configured");
  }
  if (!(params_.ballistic_coefficient > 0.0) || !(params_.mu > 0.0) ||
      !(params_.planet_radius > 0.0)) {
    throw ConfigError("aerocapture: physical parameters must be positive");
  }
  if (!(params_.target_apoapsis > params_.target_periapsis) ||
      !(params_.target_periapsis > params_.planet_radius)) {
    throw ConfigError("aerocapture: target orbit radii must satisfy r_a > r_p > planet radius");
  }
}

Vector AerocaptureModel::f(const Vector& x, const Vector& u, double psi) const {
  const double r = x[0], v = x[1], gamma = x[2];
  const double h = r - params_.planet_radius;
  const double rho = std::max(params_.density->density(h) * (1.0 + psi), 0.0);
  const double two_bc = 2.0 * params_.ballistic_coefficient;
  const double mu = params_.mu;

  Vector out(3);
  out[0] = v * std::sin(gamma);
  out[1] = -rho * v * v / two_bc - mu * std::sin(gamma) / (r * r);
  out[2] = rho * v * params_.lift_to_drag * u[0] / two_bc -
           (mu / (r * r) - v * v / r) * std::cos(gamma) / v;
  return out;
}

Matrix AerocaptureModel::jac_state(const Vector& x, const Vector& u, double psi) const {
  const double r = x[0], v = x[1], gamma = x[2];
  const double h = r - params_.planet_radius;
  const double rho_raw = params_.density->density(h) * (1.0 + psi);
  const double rho = std::max(rho_raw, 0.0);
  const double drho_dr = rho_raw > 0.0 ? params_.density->ddensity_dh(h) * (1.0 + psi) : 0.0;
  const double two_bc = 2.0 * params_.ballistic_coefficient;
  const double mu = params_.mu;
  const double sg = std::sin(gamma), cg = std::cos(gamma);
  const double ld_u = params_.lift_to_drag * u[0];

  Matrix a(3, 3);
  a(0, 0) = 0.0;
  a(0, 1) = sg;
  a(0, 2) = v * cg;

  a(1, 0) = -drho_dr * v * v / two_bc + 2.0 * mu * sg / (r * r * r);
  a(1, 1) = -2.0 * rho * v / two_bc;
  a(1, 2) = -mu * cg / (r * r);

  a(2, 0) = drho_dr * v * ld_u / two_bc - (-2.0 * mu / (r * r * r * v) + v / (r * r)) * cg;
  a(2, 1) = rho * ld_u / two_bc + (mu / (r * r * v * v) + 1.0 / r) * cg;
  a(2, 2) = (mu / (r * r * v) - v / r) * sg;
  return a;
}

Matrix AerocaptureModel::jac_control(const Vector& x, const Vector&, double psi) const {
  const double r = x[0], v = x[1];
  const double h = r - params_.planet_radius;
  const double rho = std::max(params_.density->density(h) * (1.0 + psi), 0.0);
  Matrix b = Matrix::Zero(3, 1);
  b(2, 0) = rho * v * params_.lift_to_drag / (2.0 * params_.ballistic_coefficient);
  return b;
}

Vector AerocaptureModel::jac_field(const Vector& x, const Vector& u, double psi) const {
  const double r = x[0], v = x[1];
  const double h = r - params_.planet_radius;
  const double rho_bar = params_.density->density(h);
  const double two_bc = 2.0 * params_.ballistic_coefficient;
  Vector g = Vector::Zero(3);
  if (rho_bar * (1.0 + psi) > 0.0) {
    g[1] = -rho_bar * v * v / two_bc;
    g[2] = rho_bar * v * params_.lift_to_drag * u[0] / two_bc;
  }
  return g;
}

double AerocaptureModel::dynamic_pressure(const Vector& x) const {
  const double h = x[0] - params_.planet_radius;
  return 0.5 * params_.density->density(h) * x[1] * x[1];
}

Vector AerocaptureModel::dynamic_pressure_gradient(const Vector& x) const {
  const double h = x[0] - params_.planet_radius;
  const double rho = params_.density->density(h);
  Vector g = Vector::Zero(3);
  g[0] = 0.5 * params_.density->ddensity_dh(h) * x[1] * x[1];
  g[1] = rho * x[1];
  return g;
}

// ---- Exit orbit geometry -------------------------------------------------

double exit_orbit_apoapsis(const Vector& x_exit, double mu) {
  const double r = x_exit[0], v = x_exit[1], gamma = x_exit[2];
  const double denom = 2.0 * mu / r - v * v;
  if (!(denom > 0.0)) {
    throw NumericError("exit orbit is not captured (non-negative orbital energy)");
  }
  const double a = mu / denom;
  const double cg = std::cos(gamma);
  double disc = 1.0 - r * r * v * v * cg * cg / (mu * a);
  if (disc < 0.0) {
    if (disc < -1e-12) {
      throw NumericError("exit orbit apoapsis: negative discriminant");
    }
    disc = 0.0;
  }
  return a * (1.0 + std::sqrt(disc));
}

double transfer_delta_v(const Vector& x_exit, const AerocaptureParams& params) {
  const double mu = params.mu;
  const double ra_ex = exit_orbit_apoapsis(x_exit, mu);
  const double rp_t = params.target_periapsis;
  const double ra_t = params.target_apoapsis;
  if (!(ra_ex > rp_t)) {
    throw NumericError("exit apoapsis below the target periapsis; two-burn cleanup undefined");
  }
  const double r = x_exit[0], v = x_exit[1];

  // Coast to apoapsis of the exit orbit, then raise periapsis onto the
  // transfer ellipse (ra_ex, rp_t).
  const double va1_minus = std::sqrt(v * v + 2.0 * mu * (1.0 / ra_ex - 1.0 / r));
  const double va1_plus = std::sqrt(2.0 * mu * (1.0 / ra_ex - 1.0 / (ra_ex + rp_t)));

  // At the new periapsis, move the apoapsis onto the target orbit (ra_t, rp_t).
  const double vp1_minus = std::sqrt(2.0 * mu * (1.0 / rp_t - 1.0 / (ra_ex + rp_t)));
  const double vp1_plus = std::sqrt(2.0 * mu * (1.0 / rp_t - 1.0 / (ra_t + rp_t)));

  return (va1_plus - va1_minus) + std::abs(vp1_plus - vp1_minus);
}

namespace {
template <typename F>
Vector central_gradient(const Vector& x, F&& fn) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = fd_step(x[j]);
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    g[j] = (fn(xp) - fn(xm)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return g;
}
}  // namespace

Vector transfer_delta_v_gradient(const Vector& x_exit,
                                 const AerocaptureParams& params) {
  return central_gradient(
      x_exit, [&](const Vector& x) { return transfer_delta_v(x, params); });
}

Vector exit_orbit_apoapsis_gradient(const Vector& x_exit, double mu) {
  return central_gradient(
      x_exit, [&](const Vector& x) { return exit_orbit_apoapsis(x, mu); });
}

}  // namespace covsteer
