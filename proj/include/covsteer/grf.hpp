#pragma once

#include <functional>
#include <vector>

#include "covsteer/linalg.hpp"
#include "covsteer/rng.hpp"

namespace covsteer {

// Scalar Gaussian random field over a one-dimensional index (the model's field
// coordinate: track position for the double integrator, altitude for entry
// vehicles).  Kernels are evaluated in the field's natural units; any unit
// conversion (e.g. percent-squared variances) happens when a config is parsed.

enum class KernelKind {
  SquaredExponential,
  Constant,
  LocallyPeriodic,
  MarsDensity,
};

struct KernelSpec {
  KernelKind kind = KernelKind::SquaredExponential;
  double variance = 1.0;

  // squared_exponential
  double length = 1.0;

  // locally_periodic: periodic factor exp(-2 sin^2(pi |dz| / period) / lp^2)
  // times a squared-exponential envelope with scale `envelope_length`.
  double period = 1.0;
  double periodic_length = 1.0;
  double envelope_length = 1.0;

  // mars_density: exponential correlation in separation with a variance profile
  // that grows exponentially below `transition_altitude` and is flat above it.
  double correlation_height = 11.1e3;
  double transition_altitude = 120e3;
  double growth_height = 20e3;

  double eval(double z1, double z2) const;

  // Smallest structural scale of the kernel; used to pick thinning radii.
  double characteristic_length() const;

  // Largest pointwise variance the kernel can produce; used for jitter floors.
  double max_variance() const;

  void validate() const;
};

class GaussianRandomField {
 public:
  GaussianRandomField(KernelSpec kernel, std::function<double(double)> mean);

  double mean(double z) const { return mean_(z); }
  double cov(double z1, double z2) const { return kernel_.eval(z1, z2); }
  const KernelSpec& kernel() const { return kernel_; }

  // Kernel matrix for a set of indices, as evaluated (may be indefinite only
  // through roundoff) and after the PSD repair pass.
  Matrix gram(const std::vector<double>& zs) const;
  Matrix gram_repaired(const std::vector<double>& zs) const;

  // One draw from the joint marginal at `zs`.
  Vector sample_joint(const std::vector<double>& zs, SplitMix64& rng) const;

 private:
  KernelSpec kernel_;
  std::function<double(double)> mean_;
};

// Draws field values one query point at a time while staying consistent with
// the joint law over everything drawn so far.  Maintains an incrementally
// grown Cholesky factor of the (jittered) kernel matrix, so adding the P-th
// point costs O(P^2).  Queries within `thinning_radius` of an earlier point
// return the stored value, which both bounds the factor size along a dense
// trajectory and keeps revisited indices exactly consistent.
class SequentialSampler {
 public:
  SequentialSampler(const GaussianRandomField& field, double thinning_radius);

  double sample_at(double z, SplitMix64& rng);

  std::size_t num_points() const { return zs_.size(); }
  const std::vector<double>& points() const { return zs_; }
  const std::vector<double>& values() const { return vals_; }
  void reset();

 private:
  const GaussianRandomField* field_;
  double thin_radius_;
  double jitter_;
  std::vector<double> zs_;
  std::vector<double> vals_;
  std::vector<double> innov_;  // whitened innovations, one per stored point
  std::vector<double> chol_;   // packed row-major lower-triangular factor
  std::vector<double> scratch_;
};

}  // namespace covsteer
