#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace covsteer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct PsdRepairInfo {
  double min_eigenvalue = 0.0;    // before clipping
  double max_eigenvalue = 0.0;
  double relative_change = 0.0;   // Frobenius norm of the correction / norm of input
  int clipped = 0;                // number of eigenvalues raised to the floor
};

// Symmetrizes `a` and clips eigenvalues below eps = 1e-12 * max(lambda_max, 1e-30)
// up to eps.  Throws NumericError if the correction exceeds 1e-6 of the matrix's
// Frobenius mass, which signals an invalid covariance rather than roundoff.
Matrix repair_psd(const Matrix& a, PsdRepairInfo* info = nullptr);

// Factor S_half with S = S_half^T * S_half, computed as Lambda^{1/2} Q^T from the
// eigendecomposition of the symmetrized input.  Negative eigenvalues are clipped
// to zero, so the factor is well defined for singular covariances.
Matrix psd_sqrt_factor(const Matrix& s);

// Symmetric PSD square root (Q Lambda^{1/2} Q^T).
Matrix psd_sqrt(const Matrix& s);

// Symmetric inverse square root; throws NumericError if the matrix is singular
// relative to its largest eigenvalue.
Matrix psd_inv_sqrt(const Matrix& s);

// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration on
// the Legendre recurrence.  Accurate to machine precision for the orders used
// here (tested up to 32).
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussLegendre gauss_legendre(int order);

}  // namespace covsteer
