#include "covsteer/solver.hpp"

#include <cmath>
#include <limits>

#include "covsteer/errors.hpp"

namespace covsteer {

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

namespace {

struct ReducedCone {
  Matrix F;
  Vector g;
  Vector f;
  double h = 0.0;
};

struct ReducedProblem {
  Matrix H;
  Vector c;
  std::vector<ReducedCone> cones;
};

double cone_margin(const ReducedCone& cone, const Vector& q) {
  return cone.f.dot(q) + cone.h - (cone.F * q + cone.g).norm();
}

double min_margin(const std::vector<ReducedCone>& cones, const Vector& q) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& cone : cones) worst = std::min(worst, cone_margin(cone, q));
  return worst;
}

// Value, gradient and Hessian of -sum log((f'q+h)^2 - |Fq+g|^2); returns false
// when q is outside the cone interiors.
bool barrier_terms(const std::vector<ReducedCone>& cones, const Vector& q,
                   double* value, Vector* grad, Matrix* hess) {
  const Eigen::Index d = q.size();
  if (value) *value = 0.0;
  if (grad) grad->setZero(d);
  if (hess) hess->setZero(d, d);
  for (const auto& cone : cones) {
    const double w = cone.f.dot(q) + cone.h;
    const Vector u = cone.F * q + cone.g;
    const double dsq = w * w - u.squaredNorm();
    if (!(w > 0.0) || !(dsq > 0.0)) return false;
    if (value) *value -= std::log(dsq);
    if (grad || hess) {
      const Vector grad_d = 2.0 * (w * cone.f - cone.F.transpose() * u);
      if (grad) *grad -= grad_d / dsq;
      if (hess) {
        hess->noalias() +=
            (2.0 / dsq) * (cone.F.transpose() * cone.F - cone.f * cone.f.transpose());
        hess->noalias() += (grad_d / dsq) * (grad_d / dsq).transpose();
      }
    }
  }
  return true;
}

struct StageResult {
  bool ok = false;
  int newton_iterations = 0;
  std::string message;
};

// Newton minimization of t * (0.5 q'Hq + c'q) + barrier(q) from a strictly
// feasible q.  Optionally stops as soon as `early_stop` fires.
StageResult newton_stage(const ReducedProblem& prob, double t, Vector& q,
                         const BarrierSolver::Options& opts,
                         const std::function<bool(const Vector&)>& early_stop) {
  StageResult res;
  const Eigen::Index d = q.size();
  for (int it = 0; it < opts.max_newton_per_stage; ++it) {
    double phi = 0.0;
    Vector grad_phi(d);
    Matrix hess_phi(d, d);
    if (!barrier_terms(prob.cones, q, &phi, &grad_phi, &hess_phi)) {
      res.message = "barrier evaluated outside the cone interior";
      return res;
    }
    const Vector grad = t * (prob.H * q + prob.c) + grad_phi;
    Matrix hess = t * prob.H + hess_phi;

    const double diag_scale = std::max(hess.diagonal().cwiseAbs().maxCoeff(), 1.0);
    Vector step;
    double reg = opts.regularization * diag_scale;
    bool solved = false;
    for (int attempt = 0; attempt < 6; ++attempt) {
      Eigen::LLT<Matrix> llt(hess + reg * Matrix::Identity(d, d));
      if (llt.info() == Eigen::Success) {
        step = llt.solve(-grad);
        if (step.allFinite()) {
          solved = true;
          break;
        }
      }
      reg *= 100.0;
    }
    if (!solved) {
      res.message = "Newton system factorization failed";
      return res;
    }

    const double decrement_sq = -grad.dot(step);
    if (!(decrement_sq > 0.0)) {
      // Ascent or flat direction after regularization: treat as converged.
      res.ok = true;
      res.newton_iterations = it;
      return res;
    }
    if (0.5 * decrement_sq < opts.newton_tolerance * std::max(1.0, t)) {
      res.ok = true;
      res.newton_iterations = it;
      return res;
    }

    const double merit0 = t * (0.5 * q.dot(prob.H * q) + prob.c.dot(q)) + phi;
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 70; ++ls) {
      const Vector trial = q + alpha * step;
      double phi_trial;
      if (barrier_terms(prob.cones, trial, &phi_trial, nullptr, nullptr)) {
        const double merit =
            t * (0.5 * trial.dot(prob.H * trial) + prob.c.dot(trial)) + phi_trial;
        if (merit <= merit0 - 0.25 * alpha * decrement_sq) {
          q = trial;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    res.newton_iterations = it + 1;
    if (!accepted) {
      // Step collapsed; the iterate is as converged as the geometry allows.
      res.ok = true;
      return res;
    }
    if (early_stop && early_stop(q)) {
      res.ok = true;
      return res;
    }
  }
  res.ok = true;  // hit the iteration cap with a usable interior point
  return res;
}

}  // namespace

RawSolution BarrierSolver::solve(const ConicProgram& prog) {
  RawSolution out;
  const int d = prog.dim;
  if (prog.H.rows() != d || prog.c.size() != d) {
    out.message = "program dimensions are inconsistent";
    return out;
  }

  // Column equilibration over all data touching each variable.
  Vector col_mass = prog.H.diagonal().cwiseAbs();
  for (const auto& cone : prog.cones) {
    col_mass += cone.F.colwise().squaredNorm().transpose();
    col_mass += cone.f.cwiseAbs2();
  }
  if (prog.A.rows() > 0) col_mass += prog.A.colwise().squaredNorm().transpose();
  Vector scale(d);
  for (int j = 0; j < d; ++j) {
    const double s = std::sqrt(std::sqrt(std::max(col_mass[j], 1e-300)));
    scale[j] = std::clamp(1.0 / s, 1e-8, 1e8);
  }

  Matrix Hs = scale.asDiagonal() * prog.H * scale.asDiagonal();
  Vector cs = scale.asDiagonal() * prog.c;
  Matrix As = prog.A * scale.asDiagonal();
  std::vector<ReducedCone> cones_s(prog.cones.size());
  for (std::size_t i = 0; i < prog.cones.size(); ++i) {
    cones_s[i].F = prog.cones[i].F * scale.asDiagonal();
    cones_s[i].g = prog.cones[i].g;
    cones_s[i].f = scale.asDiagonal() * prog.cones[i].f;
    cones_s[i].h = prog.cones[i].h;
  }

  // Equality elimination: y = y0 + Z q with Z spanning the nullspace.
  Vector y0 = Vector::Zero(d);
  Matrix Z = Matrix::Identity(d, d);
  if (As.rows() > 0) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(As);
    y0 = cod.solve(prog.b);
    if ((As * y0 - prog.b).norm() > 1e-8 * (1.0 + prog.b.norm())) {
      out.status = SolveStatus::Infeasible;
      out.message = "equality constraints are inconsistent";
      return out;
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(As.transpose());
    const int rank = static_cast<int>(qr.rank());
    Matrix qfull = qr.householderQ();
    Z = qfull.rightCols(d - rank);
  }

  ReducedProblem red;
  red.H = Z.transpose() * Hs * Z;
  red.c = Z.transpose() * (Hs * y0 + cs);
  red.cones.resize(cones_s.size());
  for (std::size_t i = 0; i < cones_s.size(); ++i) {
    red.cones[i].F = cones_s[i].F * Z;
    red.cones[i].g = cones_s[i].F * y0 + cones_s[i].g;
    red.cones[i].f = Z.transpose() * cones_s[i].f;
    red.cones[i].h = cones_s[i].f.dot(y0) + cones_s[i].h;
  }
  const Eigen::Index dq = red.H.rows();

  auto assemble = [&](const Vector& q) {
    out.y = (scale.asDiagonal() * (y0 + Z * q)).eval();
  };

  // Cone-free programs reduce to one linear solve.
  if (red.cones.empty()) {
    const double reg =
        opts_.regularization * std::max(red.H.diagonal().cwiseAbs().maxCoeff(), 1.0);
    Eigen::LDLT<Matrix> ldlt(red.H + reg * Matrix::Identity(dq, dq));
    const Vector q = ldlt.solve(-red.c);
    if (!q.allFinite()) {
      out.message = "direct KKT solve failed";
      return out;
    }
    if ((red.H * q + red.c).norm() > 1e-6 * std::max(1.0, red.c.norm())) {
      out.status = SolveStatus::Unbounded;
      out.message = "quadratic objective has unbounded descent directions";
      return out;
    }
    assemble(q);
    out.status = SolveStatus::Optimal;
    out.newton_iterations = 1;
    return out;
  }

  Vector q = Vector::Zero(dq);
  int newton_total = 0;

  // Phase I: minimize the worst cone violation until strictly feasible.
  if (!(min_margin(red.cones, q) > 0.0)) {
    ReducedProblem phase1;
    phase1.H = Matrix::Zero(dq + 1, dq + 1);
    phase1.c = Vector::Zero(dq + 1);
    phase1.c[dq] = 1.0;
    phase1.cones.resize(red.cones.size());
    for (std::size_t i = 0; i < red.cones.size(); ++i) {
      auto& pc = phase1.cones[i];
      pc.F = Matrix::Zero(red.cones[i].F.rows(), dq + 1);
      pc.F.leftCols(dq) = red.cones[i].F;
      pc.g = red.cones[i].g;
      pc.f = Vector::Zero(dq + 1);
      pc.f.head(dq) = red.cones[i].f;
      pc.f[dq] = 1.0;
      pc.h = red.cones[i].h;
    }
    const double viol0 = -min_margin(red.cones, q);
    Vector qe = Vector::Zero(dq + 1);
    qe[dq] = 1.5 * viol0 + 1.0;

    auto feasible_now = [&](const Vector& cand) {
      return min_margin(red.cones, cand.head(dq)) > 0.0;
    };
    bool found = feasible_now(qe);
    double t = 1.0;
    for (int stage = 0; stage < opts_.max_stages && !found; ++stage) {
      const StageResult sr = newton_stage(phase1, t, qe, opts_, feasible_now);
      newton_total += sr.newton_iterations;
      if (!sr.ok) {
        out.message = "phase I failed: " + sr.message;
        return out;
      }
      found = feasible_now(qe);
      if (found) break;
      if (2.0 * static_cast<double>(phase1.cones.size()) / t <
          1e-9 * std::max(1.0, std::abs(qe[dq]))) {
        break;  // converged with s >= 0: no strictly feasible point
      }
      t *= opts_.t_increase;
    }
    if (!found) {
      out.status = SolveStatus::Infeasible;
      out.message = "no strictly feasible point (phase I slack " +
                    std::to_string(qe[dq]) + ")";
      return out;
    }
    q = qe.head(dq);
  }

  // Phase II: follow the central path.
  auto objective = [&](const Vector& qq) {
    return 0.5 * qq.dot(red.H * qq) + red.c.dot(qq);
  };
  const double obj0 = objective(q);
  const double nu = 2.0 * static_cast<double>(red.cones.size());
  double t = std::max(1.0, nu / std::max(std::abs(obj0), 1.0));
  bool gap_met = red.cones.empty();
  for (int stage = 0; stage < opts_.max_stages; ++stage) {
    const StageResult sr = newton_stage(red, t, q, opts_, nullptr);
    newton_total += sr.newton_iterations;
    if (!sr.ok) {
      out.message = "phase II failed: " + sr.message;
      out.newton_iterations = newton_total;
      return out;
    }
    const double obj = objective(q);
    if (obj < -1e14 * std::max(1.0, std::abs(obj0))) {
      out.status = SolveStatus::Unbounded;
      out.message = "objective diverging along the central path";
      out.newton_iterations = newton_total;
      return out;
    }
    if (nu / t < opts_.gap_tolerance * std::max(1.0, std::abs(obj))) {
      gap_met = true;
      break;
    }
    t *= opts_.t_increase;
  }
  if (!gap_met && !red.cones.empty()) {
    out.message = "barrier stage limit reached (gap " + std::to_string(nu / t) + ")";
  }

  assemble(q);
  out.status = SolveStatus::Optimal;
  out.newton_iterations = newton_total;
  return out;
}

SubproblemSolution solve_subproblem(SolverAdapter& solver, const ConicProgram& prog,
                                    const SubproblemLayout& layout) {
  SubproblemSolution sol;
  const SolverCapabilities caps = solver.capabilities();
  if (!prog.cones.empty() && !caps.second_order_cones) {
    sol.message = "solver '" + solver.name() + "' does not support second-order cones";
    return sol;
  }

  RawSolution raw = solver.solve(prog);
  sol.status = raw.status;
  sol.iterations = raw.newton_iterations;
  sol.message = raw.message;
  if (raw.status != SolveStatus::Optimal) return sol;

  sol.y = raw.y;
  sol.L = layout.unpack_l(raw.y);
  sol.V = layout.unpack_v(raw.y);
  if (layout.epigraph_index >= 0) sol.epigraph = raw.y[layout.epigraph_index];

  if (prog.A.rows() > 0) {
    sol.equality_residual = (prog.A * raw.y - prog.b).cwiseAbs().maxCoeff();
  }
  double worst = 0.0;
  std::string worst_name;
  for (const auto& cone : prog.cones) {
    const double violation =
        (cone.F * raw.y + cone.g).norm() - (cone.f.dot(raw.y) + cone.h);
    if (violation > worst) {
      worst = violation;
      worst_name = cone.name;
    }
  }
  sol.worst_cone_violation = std::max(worst, 0.0);

  const double tol = 1e-6;
  if (sol.worst_cone_violation > tol) {
    sol.status = SolveStatus::NumericalFailure;
    sol.message = "cone '" + worst_name + "' violated by " +
                  std::to_string(sol.worst_cone_violation) + " after the solve";
  } else if (prog.b.size() > 0 &&
             sol.equality_residual > tol * std::max(1.0, prog.b.cwiseAbs().maxCoeff())) {
    sol.status = SolveStatus::NumericalFailure;
    sol.message = "equality residual " + std::to_string(sol.equality_residual) +
                  " after the solve";
  }
  return sol;
}

}  // namespace covsteer
