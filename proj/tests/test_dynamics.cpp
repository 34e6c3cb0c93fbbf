#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "covsteer/dynamics.hpp"
#include "covsteer/errors.hpp"
#include "covsteer/rng.hpp"

using namespace covsteer;

namespace {

AerocaptureParams mars_params() {
  AerocaptureParams p;
  p.ballistic_coefficient = 150.0;
  p.lift_to_drag = 0.2;
  p.mu = 4.2828e13;
  p.planet_radius = 3397e3;
  p.target_apoapsis = 16985e3;
  p.target_periapsis = 6794e3;
  p.density = std::make_shared<ExponentialDensity>(0.0075, 11.1e3);
  return p;
}

// Central finite differences of f itself, independent of the analytic
// Jacobians under test.
Matrix fd_jac_state(const SystemModel& model, const Vector& x, const Vector& u,
                    double psi) {
  const int n = model.state_dim();
  Matrix jac(n, n);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
    Vector xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    jac.col(j) = (model.f(xp, u, psi) - model.f(xm, u, psi)) / (2.0 * h);
  }
  return jac;
}

Matrix fd_jac_control(const SystemModel& model, const Vector& x, const Vector& u,
                      double psi) {
  const int m = model.control_dim();
  Matrix jac(model.state_dim(), m);
  for (int j = 0; j < m; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(u[j]));
    Vector up = u, um = u;
    up[j] += h;
    um[j] -= h;
    jac.col(j) = (model.f(x, up, psi) - model.f(x, um, psi)) / (2.0 * h);
  }
  return jac;
}

Vector fd_jac_field(const SystemModel& model, const Vector& x, const Vector& u,
                    double psi) {
  const double h = 1e-7;
  return (model.f(x, u, psi + h) - model.f(x, u, psi - h)) / (2.0 * h);
}

// Two-body apoapsis oracle: integrate the planar Kepler problem in Cartesian
// coordinates with fixed-step RK4 and bisect the radial-rate sign change at
// apoapsis passage.  Shares no code with the closed-form expression under test.
double apoapsis_by_integration(double r, double v, double gamma, double mu) {
  Eigen::Vector4d y;
  y << r, 0.0, v * std::sin(gamma), v * std::cos(gamma);
  auto deriv = [mu](const Eigen::Vector4d& s) {
    const double rr = std::hypot(s[0], s[1]);
    const double k = -mu / (rr * rr * rr);
    return Eigen::Vector4d(s[2], s[3], k * s[0], k * s[1]);
  };
  auto rk4 = [&](const Eigen::Vector4d& s, double h) {
    const Eigen::Vector4d k1 = deriv(s);
    const Eigen::Vector4d k2 = deriv(s + 0.5 * h * k1);
    const Eigen::Vector4d k3 = deriv(s + 0.5 * h * k2);
    const Eigen::Vector4d k4 = deriv(s + h * k3);
    return Eigen::Vector4d(s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };
  auto vr_of = [](const Eigen::Vector4d& s) {
    return (s[0] * s[2] + s[1] * s[3]) / std::hypot(s[0], s[1]);
  };
  const double energy = 0.5 * v * v - mu / r;
  REQUIRE(energy < 0.0);
  const double a = -mu / (2.0 * energy);
  const double period = 2.0 * M_PI * std::sqrt(a * a * a / mu);
  const int steps = 400000;
  const double h = 1.1 * period / steps;

  Eigen::Vector4d prev = y;
  for (int i = 0; i < steps; ++i) {
    Eigen::Vector4d next = rk4(prev, h);
    if (vr_of(prev) > 0.0 && vr_of(next) <= 0.0) {
      // Bisect the crossing within this step.
      double lo = 0.0, hi = h;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (vr_of(rk4(prev, mid)) > 0.0) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      const Eigen::Vector4d at = rk4(prev, 0.5 * (lo + hi));
      const double e_now = 0.5 * (at[2] * at[2] + at[3] * at[3]) -
                           mu / std::hypot(at[0], at[1]);
      REQUIRE(std::abs(e_now - energy) <= 1e-10 * std::abs(energy));
      return std::hypot(at[0], at[1]);
    }
    prev = next;
  }
  // Started at or past apoapsis with vr <= 0 throughout the window.
  REQUIRE(false);
  return 0.0;
}

// Richardson-extrapolated central differences (two step sizes, fourth order).
template <typename F>
Vector richardson_gradient(const Vector& x, F&& fn) {
  Vector g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-4 * std::max(1.0, std::abs(x[j]));
    auto diff = [&](double step) {
      Vector xp = x, xm = x;
      xp[j] += step;
      xm[j] -= step;
      return (fn(xp) - fn(xm)) / (2.0 * step);
    };
    g[j] = (4.0 * diff(h) - diff(2.0 * h)) / 3.0;
  }
  return g;
}

}  // namespace

TEST_CASE("double integrator dynamics and Jacobians") {
  DoubleIntegratorModel model;
  Vector x(2), u(1);
  x << 0.4, -1.2;
  u << 0.7;
  const double psi = 0.013;
  const Vector fx = model.f(x, u, psi);
  CHECK(fx[0] == doctest::Approx(-1.2));
  CHECK(fx[1] == doctest::Approx(0.7 + 0.013));
  CHECK(model.field_index(x) == doctest::Approx(0.4));

  Matrix a_expected(2, 2);
  a_expected << 0, 1, 0, 0;
  CHECK((model.jac_state(x, u, psi) - a_expected).norm() == doctest::Approx(0.0));
  Matrix b_expected(2, 1);
  b_expected << 0, 1;
  CHECK((model.jac_control(x, u, psi) - b_expected).norm() == doctest::Approx(0.0));
  Vector g_expected(2);
  g_expected << 0, 1;
  CHECK((model.jac_field(x, u, psi) - g_expected).norm() == doctest::Approx(0.0));
}

TEST_CASE("exponential density value and slope") {
  ExponentialDensity rho(0.0075, 11.1e3);
  CHECK(rho.density(0.0) == doctest::Approx(0.0075));
  CHECK(rho.density(11.1e3) == doctest::Approx(0.0075 * std::exp(-1.0)).epsilon(1e-14));
  CHECK(rho.ddensity_dh(40e3) ==
        doctest::Approx(-rho.density(40e3) / 11.1e3).epsilon(1e-13));
}

TEST_CASE("tabulated density interpolates exponentials exactly") {
  // Log-linear interpolation reproduces a pure exponential profile at and
  // between the nodes, and edge-slope extrapolation continues it outside.
  std::vector<double> hs, rhos;
  for (int i = 0; i <= 20; ++i) {
    const double h = 5e3 * i;
    hs.push_back(h);
    rhos.push_back(0.0075 * std::exp(-h / 11.1e3));
  }
  TabulatedDensity table(hs, rhos);
  for (double h : {0.0, 12.5e3, 33e3, 97.2e3, 100e3, 104e3, -3e3}) {
    CHECK(table.density(h) ==
          doctest::Approx(0.0075 * std::exp(-h / 11.1e3)).epsilon(1e-10));
  }
  for (double h : {6e3, 51e3, 98e3}) {
    const double fd = (table.density(h + 1.0) - table.density(h - 1.0)) / 2.0;
    CHECK(table.ddensity_dh(h) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("aerocapture equations of motion match an independent transcription") {
  AerocaptureModel model(mars_params());
  const AerocaptureParams& p = model.params();
  Vector x(3), u(1);
  x << 3470e3, 5900.0, -0.12;
  u << 0.45;
  const double psi = 0.21;

  const double h = x[0] - p.planet_radius;
  const double rho = p.density->density(h) * (1.0 + psi);
  const double drag = rho * x[1] * x[1] / (2.0 * p.ballistic_coefficient);
  const double lift = drag * p.lift_to_drag * u[0];
  const double grav = p.mu / (x[0] * x[0]);

  const Vector fx = model.f(x, u, psi);
  CHECK(fx[0] == doctest::Approx(x[1] * std::sin(x[2])).epsilon(1e-14));
  CHECK(fx[1] == doctest::Approx(-drag - grav * std::sin(x[2])).epsilon(1e-13));
  CHECK(fx[2] == doctest::Approx(lift / x[1] +
                                 (x[1] / x[0] - grav / x[1]) * std::cos(x[2]))
                     .epsilon(1e-13));
  CHECK(model.field_index(x) == doctest::Approx(h));
}

TEST_CASE("negative density perturbations clamp the realized density at zero") {
  AerocaptureModel model(mars_params());
  Vector x(3), u(1);
  x << 3470e3, 5900.0, -0.12;
  u << 0.45;
  const Vector fx = model.f(x, u, -1.5);
  const double grav = model.params().mu / (x[0] * x[0]);
  CHECK(fx[1] == doctest::Approx(-grav * std::sin(x[2])).epsilon(1e-13));
  CHECK(fx[2] ==
        doctest::Approx((x[1] / x[0] - grav / x[1]) * std::cos(x[2])).epsilon(1e-13));
}

TEST_CASE("aerocapture Jacobians agree with finite differences of f") {
  AerocaptureModel model(mars_params());
  SplitMix64 rng(55ULL);
  for (int rep = 0; rep < 8; ++rep) {
    Vector x(3), u(1);
    x << 3420e3 + 120e3 * rng.next_uniform(), 3500.0 + 3500.0 * rng.next_uniform(),
        -0.3 + 0.6 * rng.next_uniform();
    u << -1.0 + 2.0 * rng.next_uniform();
    const double psi = -0.3 + 0.6 * rng.next_uniform();

    const Matrix a = model.jac_state(x, u, psi);
    const Matrix a_fd = fd_jac_state(model, x, u, psi);
    CHECK((a - a_fd).norm() <= 2e-5 * std::max(1.0, a_fd.norm()));

    const Matrix b = model.jac_control(x, u, psi);
    const Matrix b_fd = fd_jac_control(model, x, u, psi);
    CHECK((b - b_fd).norm() <= 1e-6 * std::max(1.0, b_fd.norm()));

    const Vector g = model.jac_field(x, u, psi);
    const Vector g_fd = fd_jac_field(model, x, u, psi);
    CHECK((g - g_fd).norm() <= 1e-5 * std::max(1.0, g_fd.norm()));
  }
}

TEST_CASE("dynamic pressure gradient matches finite differences") {
  AerocaptureModel model(mars_params());
  Vector x(3);
  x << 3445e3, 5200.0, -0.05;
  const Vector grad = model.dynamic_pressure_gradient(x);
  for (int j = 0; j < 3; ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
    Vector xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const double fd = (model.dynamic_pressure(xp) - model.dynamic_pressure(xm)) / (2.0 * h);
    CHECK(grad[j] == doctest::Approx(fd).epsilon(1e-6).scale(std::abs(fd) + 1.0));
  }
}

TEST_CASE("exit orbit apoapsis matches two-body integration") {
  const double mu = 4.2828e13;
  const double rp = 3397e3;
  SplitMix64 rng(2024ULL);
  for (int rep = 0; rep < 6; ++rep) {
    const double r = rp * (1.03 + 0.15 * rng.next_uniform());
    const double v_circ = std::sqrt(mu / r);
    const double v = v_circ * (1.02 + 0.25 * rng.next_uniform());
    const double gamma = 0.02 + 0.25 * rng.next_uniform();
    Vector x(3);
    x << r, v, gamma;
    const double ra = exit_orbit_apoapsis(x, mu);
    const double ra_oracle = apoapsis_by_integration(r, v, gamma, mu);
    CHECK(ra == doctest::Approx(ra_oracle).epsilon(1e-9));
  }
}

TEST_CASE("exit orbit apoapsis rejects escape trajectories") {
  const double mu = 4.2828e13;
  Vector x(3);
  x << 3522e3, std::sqrt(2.0 * mu / 3522e3) + 10.0, 0.1;
  CHECK_THROWS_AS(exit_orbit_apoapsis(x, mu), NumericError);
}

TEST_CASE("transfer delta-v matches an independent vis-viva composition") {
  const AerocaptureParams p = mars_params();
  Vector x(3);
  x << 3522e3, 4670.0, 0.13;
  const double mu = p.mu;

  const double ra = exit_orbit_apoapsis(x, mu);
  auto vis_viva = [mu](double r_eval, double a_sma) {
    return std::sqrt(mu * (2.0 / r_eval - 1.0 / a_sma));
  };
  const double a_exit = 1.0 / (2.0 / x[0] - x[1] * x[1] / mu);
  const double a_transfer = 0.5 * (ra + p.target_periapsis);
  const double a_target = 0.5 * (p.target_apoapsis + p.target_periapsis);
  const double dv1 = vis_viva(ra, a_transfer) - vis_viva(ra, a_exit);
  const double dv2 =
      std::abs(vis_viva(p.target_periapsis, a_target) - vis_viva(p.target_periapsis, a_transfer));
  CHECK(transfer_delta_v(x, p) == doctest::Approx(dv1 + dv2).epsilon(1e-12));
}

TEST_CASE("transfer delta-v rejects exit orbits below the target periapsis") {
  const AerocaptureParams p = mars_params();
  Vector x(3);
  x << 3522e3, 3450.0, 0.01;  // shallow, slow exit: apoapsis stays low
  CHECK(exit_orbit_apoapsis(x, p.mu) < p.target_periapsis);
  CHECK_THROWS_AS(transfer_delta_v(x, p), NumericError);
}

TEST_CASE("orbit cost gradients agree with Richardson extrapolation") {
  const AerocaptureParams p = mars_params();
  SplitMix64 rng(77ULL);
  for (int rep = 0; rep < 5; ++rep) {
    Vector x(3);
    x << 3522e3 * (1.0 + 0.01 * rng.next_uniform()),
        4500.0 + 400.0 * rng.next_uniform(), 0.05 + 0.15 * rng.next_uniform();

    const Vector g_dv = transfer_delta_v_gradient(x, p);
    const Vector g_dv_ref =
        richardson_gradient(x, [&](const Vector& y) { return transfer_delta_v(y, p); });
    CHECK((g_dv - g_dv_ref).norm() <= 1e-5 * g_dv_ref.norm());

    const Vector g_ra = exit_orbit_apoapsis_gradient(x, p.mu);
    const Vector g_ra_ref = richardson_gradient(
        x, [&](const Vector& y) { return exit_orbit_apoapsis(y, p.mu); });
    CHECK((g_ra - g_ra_ref).norm() <= 1e-5 * g_ra_ref.norm());
  }
}
