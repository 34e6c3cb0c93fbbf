#pragma once

#include "covsteer/socp.hpp"

namespace covsteer {

enum class SolveStatus { Optimal, Infeasible, Unbounded, NumericalFailure };
const char* to_string(SolveStatus status);

struct SolverCapabilities {
  bool quadratic_cost = false;
  bool second_order_cones = false;
};

struct RawSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  Vector y;
  int newton_iterations = 0;
  std::string message;
};

// Contract for plugging in a conic solver.  Implementations receive the
// canonical program and return a primal point; feasibility is re-checked by
// solve_subproblem regardless of the backend.
class SolverAdapter {
 public:
  virtual ~SolverAdapter() = default;
  virtual std::string name() const = 0;
  virtual SolverCapabilities capabilities() const = 0;
  virtual RawSolution solve(const ConicProgram& prog) = 0;
};

// Reference backend: primal log-barrier path following with Newton steps.
// Equalities are eliminated through a nullspace basis, a phase-I stage finds a
// strictly feasible start when needed, and cone-free programs short-circuit to
// one regularized KKT solve.  Column equilibration makes the mixed-unit
// programs produced by the entry scenarios tractable without tuning.
class BarrierSolver final : public SolverAdapter {
 public:
  struct Options {
    double gap_tolerance = 1e-10;     // target duality gap, relative to |objective|
    double newton_tolerance = 1e-12;  // squared Newton decrement / 2
    int max_newton_per_stage = 80;
    int max_stages = 40;
    double t_increase = 10.0;
    double regularization = 1e-11;
  };

  BarrierSolver() = default;
  explicit BarrierSolver(Options opts) : opts_(opts) {}

  std::string name() const override { return "primal-barrier"; }
  SolverCapabilities capabilities() const override { return {true, true}; }
  RawSolution solve(const ConicProgram& prog) override;

 private:
  Options opts_;
};

struct SubproblemSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  Vector y;
  Matrix L;
  Vector V;
  double epigraph = 0.0;
  double worst_cone_violation = 0.0;
  double equality_residual = 0.0;
  int iterations = 0;
  std::string message;
};

// Runs the adapter, then independently verifies the returned point: every
// second-order cone within 1e-6 absolute slack and equality residuals at the
// same level.  A point that fails verification is downgraded to
// NumericalFailure with the offending cone named.
SubproblemSolution solve_subproblem(SolverAdapter& solver, const ConicProgram& prog,
                                    const SubproblemLayout& layout);

}  // namespace covsteer
