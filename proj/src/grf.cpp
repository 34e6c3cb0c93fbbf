#include "covsteer/grf.hpp"

#include <algorithm>
#include <cmath>

#include "covsteer/errors.hpp"

namespace covsteer {

double KernelSpec::eval(double z1, double z2) const {
  switch (kind) {
    case KernelKind::SquaredExponential: {
      const double d = (z1 - z2) / length;
      return variance * std::exp(-0.5 * d * d);
    }
    case KernelKind::Constant:
      return variance;
    case KernelKind::LocallyPeriodic: {
      const double d = std::abs(z1 - z2);
      const double s = std::sin(M_PI * d / period);
      const double periodic = std::exp(-2.0 * s * s / (periodic_length * periodic_length));
      const double de = d / envelope_length;
      return variance * periodic * std::exp(-0.5 * de * de);
    }
    case KernelKind::MarsDensity: {
      const double hmin = std::min(z1, z2);
      const double profile =
          hmin < transition_altitude
              ? variance * std::exp((hmin - transition_altitude) / growth_height)
              : variance;
      return profile * std::exp(-std::abs(z1 - z2) / correlation_height);
    }
  }
  throw NumericError("KernelSpec: unknown kernel kind");
}

double KernelSpec::characteristic_length() const {
  switch (kind) {
    case KernelKind::SquaredExponential:
      return length;
    case KernelKind::Constant:
      return 1.0;
    case KernelKind::LocallyPeriodic:
      return std::min(period, envelope_length);
    case KernelKind::MarsDensity:
      return correlation_height;
  }
  return 1.0;
}

double KernelSpec::max_variance() const { return variance; }

void KernelSpec::validate() const {
  if (!(variance > 0.0)) {
    throw ConfigError("kernel: variance must be positive");
  }
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) {
      throw ConfigError(std::string("kernel: ") + name + " must be positive");
    }
  };
  switch (kind) {
    case KernelKind::SquaredExponential:
      positive(length, "length");
      break;
    case KernelKind::Constant:
      break;
    case KernelKind::LocallyPeriodic:
      positive(period, "period");
      positive(periodic_length, "periodic_length");
      positive(envelope_length, "envelope_length");
      break;
    case KernelKind::MarsDensity:
      positive(correlation_height, "correlation_height");
      positive(growth_height, "growth_height");
      break;
  }
}

GaussianRandomField::GaussianRandomField(KernelSpec kernel,
                                         std::function<double(double)> mean)
    : kernel_(kernel), mean_(std::move(mean)) {
  kernel_.validate();
  if (!mean_) {
    mean_ = [](double) { return 0.0; };
  }
}

Matrix GaussianRandomField::gram(const std::vector<double>& zs) const {
  const Eigen::Index n = static_cast<Eigen::Index>(zs.size());
  Matrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel_.eval(zs[i], zs[j]);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

Matrix GaussianRandomField::gram_repaired(const std::vector<double>& zs) const {
  return repair_psd(gram(zs));
}

Vector GaussianRandomField::sample_joint(const std::vector<double>& zs,
                                         SplitMix64& rng) const {
  const Matrix factor = psd_sqrt_factor(gram_repaired(zs));
  const Eigen::Index n = factor.rows();
  Vector eta(n);
  for (Eigen::Index i = 0; i < n; ++i) eta[i] = rng.next_normal();
  Vector out = factor.transpose() * eta;
  for (Eigen::Index i = 0; i < n; ++i) out[i] += mean_(zs[i]);
  return out;
}

SequentialSampler::SequentialSampler(const GaussianRandomField& field,
                                     double thinning_radius)
    : field_(&field),
      thin_radius_(thinning_radius),
      jitter_(1e-10 * field.kernel().max_variance()) {
  if (thinning_radius < 0.0) {
    throw ConfigError("SequentialSampler: thinning radius must be non-negative");
  }
}

void SequentialSampler::reset() {
  zs_.clear();
  vals_.clear();
  innov_.clear();
  chol_.clear();
}

double SequentialSampler::sample_at(double z, SplitMix64& rng) {
  for (std::size_t j = 0; j < zs_.size(); ++j) {
    if (std::abs(zs_[j] - z) <= thin_radius_) {
      return vals_[j];
    }
  }

  const std::size_t p = zs_.size();
  const double kappa = field_->cov(z, z) + jitter_;

  // Forward-substitute L a = k(points, z) against the packed factor, building
  // the new row in place.
  scratch_.resize(p);
  const double* chol = chol_.data();
  double norm2 = 0.0;
  double cond_mean = field_->mean(z);
  for (std::size_t i = 0; i < p; ++i) {
    double s = field_->cov(zs_[i], z);
    const double* row = chol + (i * (i + 1)) / 2;
    for (std::size_t j = 0; j < i; ++j) {
      s -= row[j] * scratch_[j];
    }
    const double a = s / row[i];
    scratch_[i] = a;
    norm2 += a * a;
    cond_mean += a * innov_[i];
  }

  double d2 = kappa - norm2;
  if (d2 < -1e-6 * kappa) {
    throw NumericError(
        "SequentialSampler: conditional variance is significantly negative; "
        "kernel matrix is too ill-conditioned for the chosen thinning radius");
  }
  const double d = std::sqrt(std::max(d2, jitter_));

  const double eps = rng.next_normal();
  const double value = cond_mean + d * eps;

  chol_.insert(chol_.end(), scratch_.begin(), scratch_.end());
  chol_.push_back(d);
  innov_.push_back(eps);
  zs_.push_back(z);
  vals_.push_back(value);
  return value;
}

}  // namespace covsteer
