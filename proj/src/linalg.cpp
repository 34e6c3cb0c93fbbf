#include "covsteer/linalg.hpp"

#include <cmath>

#include "covsteer/errors.hpp"

namespace covsteer {

Matrix repair_psd(const Matrix& a, PsdRepairInfo* info) {
  if (a.rows() != a.cols()) {
    throw NumericError("repair_psd: matrix is not square");
  }
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericError("repair_psd: eigendecomposition failed");
  }
  Vector lam = eig.eigenvalues();
  const double lam_max = lam.size() ? lam.maxCoeff() : 0.0;
  const double floor_eps = 1e-12 * std::max(lam_max, 1e-30);

  int clipped = 0;
  Vector lam_fixed = lam;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam_fixed[i] < floor_eps) {
      lam_fixed[i] = floor_eps;
      ++clipped;
    }
  }
  const Matrix repaired =
      eig.eigenvectors() * lam_fixed.asDiagonal() * eig.eigenvectors().transpose();

  const double base = std::max(sym.norm(), 1e-300);
  const double rel_change = (repaired - sym).norm() / base;
  if (info) {
    info->min_eigenvalue = lam.size() ? lam.minCoeff() : 0.0;
    info->max_eigenvalue = lam_max;
    info->relative_change = rel_change;
    info->clipped = clipped;
  }
  if (rel_change > 1e-6) {
    throw NumericError(
        "repair_psd: clipping negative eigenvalues would change the matrix by a "
        "relative Frobenius mass of " + std::to_string(rel_change) +
        "; the input is not a valid covariance");
  }
  return repaired;
}

Matrix psd_sqrt_factor(const Matrix& s) {
  const Matrix sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericError("psd_sqrt_factor: eigendecomposition failed");
  }
  Vector lam = eig.eigenvalues().cwiseMax(0.0);
  return lam.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

Matrix psd_sqrt(const Matrix& s) {
  const Matrix sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericError("psd_sqrt: eigendecomposition failed");
  }
  Vector lam = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

Matrix psd_inv_sqrt(const Matrix& s) {
  const Matrix sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericError("psd_inv_sqrt: eigendecomposition failed");
  }
  const Vector lam = eig.eigenvalues();
  const double lam_max = lam.maxCoeff();
  if (lam_max <= 0.0) {
    throw NumericError("psd_inv_sqrt: matrix has no positive eigenvalues");
  }
  Vector inv_sqrt(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] <= 1e-14 * lam_max) {
      throw NumericError("psd_inv_sqrt: matrix is singular to working precision");
    }
    inv_sqrt[i] = 1.0 / std::sqrt(lam[i]);
  }
  return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
}

GaussLegendre gauss_legendre(int order) {
  if (order < 1) {
    throw NumericError("gauss_legendre: order must be positive");
  }
  GaussLegendre out;
  out.nodes.resize(order);
  out.weights.resize(order);
  const int m = (order + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Chebyshev-based initial guess for the i-th positive root.
    double x = std::cos(M_PI * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      // Evaluate P_n and P_n' by the three-term recurrence.
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= order; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = order * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    out.nodes[i] = -x;
    out.nodes[order - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    out.weights[i] = w;
    out.weights[order - 1 - i] = w;
  }
  if (order % 2 == 1) {
    out.nodes[order / 2] = 0.0;
  }
  return out;
}

}  // namespace covsteer
