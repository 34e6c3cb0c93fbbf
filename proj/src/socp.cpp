#include "covsteer/socp.hpp"

#include <cmath>

#include "covsteer/errors.hpp"

namespace covsteer {

double gaussian_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0)) {
    throw NumericError("gaussian_quantile: probability must lie strictly in (0, 1)");
  }
  // Rational approximation in three regimes (Acklam's coefficients).
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley step against the full-precision CDF.
  const double e = 0.5 * std::erfc(-x / M_SQRT2) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// ---- Layout --------------------------------------------------------------

int SubproblemLayout::l_index(int k, int l, int row, int col) const {
  const int block_offset = m * n * (k * (k + 1) / 2);
  return block_offset + l * m * n + row * n + col;
}

int SubproblemLayout::v_index(int k, int row) const { return num_l + k * m + row; }

Matrix SubproblemLayout::unpack_l(const Vector& y) const {
  Matrix L = Matrix::Zero(m * N, n * (N + 1));
  for (int k = 0; k < N; ++k) {
    for (int l = 0; l <= k; ++l) {
      for (int r = 0; r < m; ++r) {
        for (int c = 0; c < n; ++c) {
          L(k * m + r, l * n + c) = y[l_index(k, l, r, c)];
        }
      }
    }
  }
  return L;
}

Vector SubproblemLayout::unpack_v(const Vector& y) const {
  return y.segment(num_l, num_v);
}

// ---- Program dump --------------------------------------------------------

namespace {
void write_matrix(std::ostream& os, const Matrix& mat) {
  for (Eigen::Index i = 0; i < mat.rows(); ++i) {
    for (Eigen::Index j = 0; j < mat.cols(); ++j) {
      if (j) os << ' ';
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", mat(i, j));
      os << buf;
    }
    os << '\n';
  }
}
void write_vector(std::ostream& os, const Vector& v) {
  write_matrix(os, v.transpose());
}
}  // namespace

void ConicProgram::write_text(std::ostream& os) const {
  os << "steering-subproblem v1\n";
  os << "dim " << dim << " l " << num_l << " v " << num_v << " extra " << num_extra
     << "\n";
  os << "objective-quadratic " << dim << "\n";
  write_matrix(os, H);
  os << "objective-linear\n";
  write_vector(os, c);
  os << "equalities " << A.rows() << "\n";
  if (A.rows()) {
    write_matrix(os, A);
    os << "rhs\n";
    write_vector(os, b);
  }
  os << "cones " << cones.size() << "\n";
  for (const auto& cone : cones) {
    os << "cone " << cone.name << " rows " << cone.F.rows() << "\n";
    write_matrix(os, cone.F);
    os << "g\n";
    write_vector(os, cone.g);
    os << "f\n";
    write_vector(os, cone.f);
    os << "h " << cone.h << "\n";
  }
}

// ---- Builder -------------------------------------------------------------

namespace {

// Columns of the map y -> S_half L^T beta for the L-entries of y.  `beta` is a
// stacked control-dimension vector; each L entry (k, l, row, col) contributes
// beta[k m + row] times column (l n + col) of S_half.
void add_l_columns(Eigen::Ref<Matrix> F, const SubproblemLayout& layout,
                   const Matrix& s_half, const Vector& beta, double scale) {
  const int n = layout.n, m = layout.m, N = layout.N;
  for (int k = 0; k < N; ++k) {
    for (int a = 0; a < m; ++a) {
      const double coef = scale * beta[k * m + a];
      if (coef == 0.0) continue;
      for (int l = 0; l <= k; ++l) {
        for (int bcol = 0; bcol < n; ++bcol) {
          F.col(layout.l_index(k, l, a, bcol)) += coef * s_half.col(l * n + bcol);
        }
      }
    }
  }
}

void accumulate_quadratic(Matrix& H, Vector& c, const Matrix& F, const Vector& g) {
  H.noalias() += 2.0 * F.transpose() * F;
  c.noalias() += 2.0 * F.transpose() * g;
}

}  // namespace

ConicProgram build_subproblem(const BlockSteeringData& blocks,
                              const SteeringObjective& objective,
                              const ChanceConstraintSpec& chance,
                              const TrustRegionSpec& trust,
                              const std::optional<Vector>& terminal_mean,
                              const std::optional<Matrix>& terminal_cov,
                              const Vector& xhat, const Vector& uhat,
                              SubproblemLayout* layout_out) {
  const int n = blocks.n, m = blocks.m, N = blocks.N;
  const int ns = blocks.state_stack_dim();
  const int nu = blocks.control_stack_dim();
  const Matrix& Sh = blocks.S_half;
  const Matrix& Bb = blocks.Bbold;
  const Vector d0 = blocks.mean_offset();

  if (static_cast<int>(objective.q_factor.size()) != N + 1 ||
      static_cast<int>(objective.r_factor.size()) != N ||
      static_cast<int>(objective.rbar_factor.size()) != N) {
    throw ConfigError("build_subproblem: objective factor lists have wrong lengths");
  }
  if (xhat.size() != ns || uhat.size() != nu) {
    throw ConfigError("build_subproblem: nominal stacks have wrong dimensions");
  }

  SubproblemLayout layout;
  layout.n = n;
  layout.m = m;
  layout.N = N;
  layout.num_l = m * n * (N * (N + 1) / 2);
  layout.num_v = nu;
  const bool has_tail = objective.percentile_weight > 0.0;
  layout.dim = layout.num_l + layout.num_v + (has_tail ? 1 : 0);
  if (has_tail) layout.epigraph_index = layout.dim - 1;

  ConicProgram prog;
  prog.dim = layout.dim;
  prog.num_l = layout.num_l;
  prog.num_v = layout.num_v;
  prog.num_extra = has_tail ? 1 : 0;
  prog.H = Matrix::Zero(layout.dim, layout.dim);
  prog.c = Vector::Zero(layout.dim);

  const int v_off = layout.num_l;

  // -- J1, covariance part through the state weights:
  //    || Qf (I + Bbold L) S_half^T ||_F^2
  int q_rows = 0;
  for (const auto& qf : objective.q_factor) q_rows += static_cast<int>(qf.rows());
  if (q_rows > 0) {
    Matrix qf_bold = Matrix::Zero(q_rows, ns);
    {
      int r = 0;
      for (int k = 0; k <= N; ++k) {
        const auto& qf = objective.q_factor[k];
        if (qf.rows() == 0) continue;
        if (qf.cols() != n) throw ConfigError("build_subproblem: q factor has wrong width");
        qf_bold.block(r, k * n, qf.rows(), n) = qf;
        r += static_cast<int>(qf.rows());
      }
    }
    const Matrix m_const = qf_bold * Sh.transpose();  // q_rows x ns
    const Matrix p_map = qf_bold * Bb;                // q_rows x nu
    Matrix F = Matrix::Zero(q_rows * ns, layout.dim);
    Vector g(q_rows * ns);
    for (int i = 0; i < q_rows; ++i) {
      for (int j = 0; j < ns; ++j) {
        const int rid = i * ns + j;
        g[rid] = m_const(i, j);
        for (int k = 0; k < N; ++k) {
          for (int a = 0; a < m; ++a) {
            const double coef = p_map(i, k * m + a);
            if (coef == 0.0) continue;
            for (int l = 0; l <= k; ++l) {
              for (int bcol = 0; bcol < n; ++bcol) {
                F(rid, layout.l_index(k, l, a, bcol)) += coef * Sh(j, l * n + bcol);
              }
            }
          }
        }
      }
    }
    accumulate_quadratic(prog.H, prog.c, F, g);

    // -- J1, mean-tracking part || Qf (Xbar - X_desired) ||^2 with
    //    Xbar = d0 + Bbold V.
    Vector xdes(ns);
    for (int k = 0; k <= N; ++k) {
      if (objective.desired_mean.empty()) {
        xdes.segment(k * n, n) = xhat.segment(k * n, n);
      } else {
        xdes.segment(k * n, n) = objective.desired_mean[k];
      }
    }
    Matrix Fm = Matrix::Zero(q_rows, layout.dim);
    Fm.middleCols(v_off, nu) = p_map;
    const Vector gm = qf_bold * (d0 - xdes);
    accumulate_quadratic(prog.H, prog.c, Fm, gm);
  }

  // -- J1, feedback control energy || Rf L S_half^T ||_F^2.
  int r_rows = 0;
  for (const auto& rf : objective.r_factor) r_rows += static_cast<int>(rf.rows());
  if (r_rows > 0) {
    Matrix F = Matrix::Zero(r_rows * ns, layout.dim);
    int i = 0;
    for (int k = 0; k < N; ++k) {
      const auto& rf = objective.r_factor[k];
      for (int rr = 0; rr < rf.rows(); ++rr, ++i) {
        for (int j = 0; j < ns; ++j) {
          const int rid = i * ns + j;
          for (int a = 0; a < m; ++a) {
            const double coef = rf(rr, a);
            if (coef == 0.0) continue;
            for (int l = 0; l <= k; ++l) {
              for (int bcol = 0; bcol < n; ++bcol) {
                F(rid, layout.l_index(k, l, a, bcol)) += coef * Sh(j, l * n + bcol);
              }
            }
          }
        }
      }
    }
    accumulate_quadratic(prog.H, prog.c, F, Vector::Zero(r_rows * ns));
  }

  // -- J1, feedforward energy || Rbarf V ||^2.
  int rbar_rows = 0;
  for (const auto& rf : objective.rbar_factor) rbar_rows += static_cast<int>(rf.rows());
  if (rbar_rows > 0) {
    Matrix F = Matrix::Zero(rbar_rows, layout.dim);
    int r = 0;
    for (int k = 0; k < N; ++k) {
      const auto& rf = objective.rbar_factor[k];
      if (rf.rows() == 0) continue;
      F.block(r, v_off + k * m, rf.rows(), m) = rf;
      r += static_cast<int>(rf.rows());
    }
    accumulate_quadratic(prog.H, prog.c, F, Vector::Zero(rbar_rows));
  }

  // -- J2, percentile tail of the terminal linear functional.
  if (has_tail) {
    const Vector& xi = objective.percentile_direction;
    if (xi.size() != n) {
      throw ConfigError("build_subproblem: percentile direction has wrong dimension");
    }
    if (!(objective.tail_probability > 0.0 && objective.tail_probability < 0.5)) {
      throw ConfigError("build_subproblem: tail probability must lie in (0, 0.5)");
    }
    const double kappa_f = gaussian_quantile(1.0 - objective.tail_probability);
    prog.c.segment(v_off, nu) +=
        objective.percentile_weight * Bb.bottomRows(n).transpose() * xi;
    prog.c[layout.epigraph_index] += objective.percentile_weight * kappa_f;

    SecondOrderCone cone;
    cone.name = "terminal_percentile_sigma";
    Vector d = Vector::Zero(ns);
    d.tail(n) = xi;
    cone.F = Matrix::Zero(ns, layout.dim);
    add_l_columns(cone.F, layout, Sh, Bb.transpose() * d, 1.0);
    cone.g = Sh * d;
    cone.f = Vector::Zero(layout.dim);
    cone.f[layout.epigraph_index] = 1.0;
    cone.h = 0.0;
    prog.cones.push_back(std::move(cone));
  }

  // -- State chance constraints at every knot.
  for (std::size_t i = 0; i < chance.state.size(); ++i) {
    const auto& cc = chance.state[i];
    if (cc.a.size() != n) throw ConfigError("state chance constraint: direction has wrong dimension");
    if (!(cc.p > 0.0 && cc.p < 0.5)) {
      throw ConfigError("state chance constraint: tail probability must lie in (0, 0.5)");
    }
    const double kappa = gaussian_quantile(1.0 - cc.p);
    for (int k = 0; k <= N; ++k) {
      SecondOrderCone cone;
      cone.name = "state_chance_" + std::to_string(i) + "_knot_" + std::to_string(k);
      Vector d = Vector::Zero(ns);
      d.segment(k * n, n) = cc.a;
      cone.F = Matrix::Zero(ns, layout.dim);
      add_l_columns(cone.F, layout, Sh, Bb.transpose() * d, kappa);
      cone.g = kappa * (Sh * d);
      cone.f = Vector::Zero(layout.dim);
      cone.f.segment(v_off, nu) = -(Bb.transpose() * d);
      cone.h = cc.alpha - d.dot(d0);
      prog.cones.push_back(std::move(cone));
    }
  }

  // -- Control chance constraints at every step.
  for (std::size_t i = 0; i < chance.control.size(); ++i) {
    const auto& cc = chance.control[i];
    if (cc.b.size() != m) throw ConfigError("control chance constraint: direction has wrong dimension");
    if (!(cc.p > 0.0 && cc.p < 0.5)) {
      throw ConfigError("control chance constraint: tail probability must lie in (0, 0.5)");
    }
    const double kappa = gaussian_quantile(1.0 - cc.p);
    for (int k = 0; k < N; ++k) {
      SecondOrderCone cone;
      cone.name = "control_chance_" + std::to_string(i) + "_step_" + std::to_string(k);
      Vector beta = Vector::Zero(nu);
      beta.segment(k * m, m) = cc.b;
      cone.F = Matrix::Zero(ns, layout.dim);
      add_l_columns(cone.F, layout, Sh, beta, kappa);
      cone.g = Vector::Zero(ns);
      cone.f = Vector::Zero(layout.dim);
      cone.f.segment(v_off + k * m, m) = -cc.b;
      cone.h = cc.beta;
      prog.cones.push_back(std::move(cone));
    }
  }

  // -- Terminal mean equality.
  if (terminal_mean) {
    if (terminal_mean->size() != n) {
      throw ConfigError("terminal mean has wrong dimension");
    }
    prog.A = Matrix::Zero(n, layout.dim);
    prog.A.middleCols(v_off, nu) = Bb.bottomRows(n);
    prog.b = *terminal_mean - d0.tail(n);
  } else {
    prog.A = Matrix::Zero(0, layout.dim);
    prog.b = Vector::Zero(0);
  }

  // -- Terminal covariance cone, Frobenius form: stacking the columns of
  //    S_half (I + Bbold L)^T E_N^T P_f^{-1/2} into one second-order cone.
  //    This is (slightly conservatively) stronger than the spectral-norm
  //    condition Cov(x_N) <= P_f and keeps the subproblem fully conic.
  if (terminal_cov) {
    const Matrix pf_inv_half = psd_inv_sqrt(*terminal_cov);
    SecondOrderCone cone;
    cone.name = "terminal_covariance";
    cone.F = Matrix::Zero(n * ns, layout.dim);
    cone.g = Vector::Zero(n * ns);
    for (int j = 0; j < n; ++j) {
      Vector d = Vector::Zero(ns);
      d.tail(n) = pf_inv_half.col(j);
      add_l_columns(cone.F.middleRows(j * ns, ns), layout, Sh, Bb.transpose() * d, 1.0);
      cone.g.segment(j * ns, ns) = Sh * d;
    }
    cone.f = Vector::Zero(layout.dim);
    cone.h = 1.0;
    prog.cones.push_back(std::move(cone));
  }

  // -- Trust regions around the previous iterate.
  if (trust.enabled) {
    if (trust.control_factor.rows() > 0) {
      for (int k = 0; k < N; ++k) {
        SecondOrderCone cone;
        cone.name = "trust_control_step_" + std::to_string(k);
        cone.F = Matrix::Zero(trust.control_factor.rows(), layout.dim);
        cone.F.middleCols(v_off + k * m, m) = trust.control_factor;
        cone.g = -trust.control_factor * uhat.segment(k * m, m);
        cone.f = Vector::Zero(layout.dim);
        cone.h = trust.control_radius;
        prog.cones.push_back(std::move(cone));
      }
    }
    if (!trust.state_factor.empty()) {
      if (static_cast<int>(trust.state_factor.size()) != N + 1) {
        throw ConfigError("trust region: need one state factor per knot");
      }
      for (int k = 1; k <= N; ++k) {
        const Matrix& fx = trust.state_factor[k];
        if (fx.rows() == 0) continue;
        SecondOrderCone cone;
        cone.name = "trust_state_knot_" + std::to_string(k);
        cone.F = Matrix::Zero(fx.rows(), layout.dim);
        cone.F.middleCols(v_off, nu) = fx * Bb.middleRows(k * n, n);
        cone.g = fx * (d0.segment(k * n, n) - xhat.segment(k * n, n));
        cone.f = Vector::Zero(layout.dim);
        cone.h = trust.state_radius;
        prog.cones.push_back(std::move(cone));
      }
    }
  }

  if (layout_out) *layout_out = layout;
  return prog;
}

double steering_objective_value(const BlockSteeringData& blocks,
                                const SteeringObjective& objective,
                                const Vector& xhat, const Matrix& L,
                                const Vector& V) {
  const int n = blocks.n, N = blocks.N;
  const Matrix state_cov = closed_loop_state_cov(blocks, L);
  const Matrix control_cov = closed_loop_control_cov(blocks, L);
  const Vector xbar = blocks.mean_trajectory(V);

  double j1 = 0.0;
  for (int k = 0; k <= N; ++k) {
    const auto& qf = objective.q_factor[k];
    if (qf.rows() > 0) {
      const Matrix cov_kk = state_cov.block(k * n, k * n, n, n);
      j1 += (qf * cov_kk * qf.transpose()).trace();
      const Vector dev = objective.desired_mean.empty()
                             ? Vector(xbar.segment(k * n, n) - xhat.segment(k * n, n))
                             : Vector(xbar.segment(k * n, n) - objective.desired_mean[k]);
      j1 += (qf * dev).squaredNorm();
    }
  }
  const int m = blocks.m;
  for (int k = 0; k < N; ++k) {
    const auto& rf = objective.r_factor[k];
    if (rf.rows() > 0) {
      const Matrix cov_kk = control_cov.block(k * m, k * m, m, m);
      j1 += (rf * cov_kk * rf.transpose()).trace();
    }
    const auto& rbf = objective.rbar_factor[k];
    if (rbf.rows() > 0) {
      j1 += (rbf * V.segment(k * m, m)).squaredNorm();
    }
  }

  double j2 = 0.0;
  if (objective.percentile_weight > 0.0) {
    const Vector& xi = objective.percentile_direction;
    const double kappa_f = gaussian_quantile(1.0 - objective.tail_probability);
    const double mean_part = xi.dot(xbar.tail(n));
    const double var = xi.dot(state_cov.bottomRightCorner(n, n) * xi);
    j2 = objective.percentile_weight *
         (mean_part + kappa_f * std::sqrt(std::max(var, 0.0)));
  }
  return j1 + j2;
}

}  // namespace covsteer
