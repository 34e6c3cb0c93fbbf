#include "covsteer/discretize.hpp"

#include "covsteer/errors.hpp"

namespace covsteer {

DiscreteLTVProblem discretize(const SystemModel& model,
                              const GaussianRandomField& field,
                              const NominalTrajectory& nominal,
                              bool parallel) {
  const int n = model.state_dim();
  const int m = model.control_dim();
  const int N = nominal.partition.segments();
  if (static_cast<int>(nominal.segments.size()) != N || N < 1) {
    throw NumericError("discretize: nominal trajectory has no quadrature data");
  }
  const int Q = static_cast<int>(nominal.segments[0].node_times.size());
  const GaussLegendre gl = gauss_legendre(Q);

  DiscreteLTVProblem out;
  out.n = n;
  out.m = m;
  out.N = N;
  out.A.resize(N);
  out.B.resize(N);
  out.c.resize(N);
  out.wbar.resize(N);
  out.node_influence.resize(N);
  out.node_field_index.resize(N);
  out.node_field_mean.resize(N);

  for (int k = 0; k < N; ++k) {
    const auto& seg = nominal.segments[k];
    const double dt = nominal.partition.knots[k + 1] - nominal.partition.knots[k];
    const double scale = 0.5 * dt;
    const Vector& u = nominal.controls[k];

    out.A[k] = seg.end_stm;
    Matrix Bk = Matrix::Zero(n, m);
    Vector ck = Vector::Zero(n);
    Matrix infl(n, Q);
    out.node_field_index[k].resize(Q);
    out.node_field_mean[k].resize(Q);

    for (int q = 0; q < Q; ++q) {
      const Vector& xq = seg.node_states[q];
      const double zq = model.field_index(xq);
      const double muq = field.mean(zq);
      out.node_field_index[k][q] = zq;
      out.node_field_mean[k][q] = muq;

      // Phi(t_{k+1}, t_q) = Phi(t_{k+1}, t_k) Phi(t_q, t_k)^{-1}
      const Matrix phi_end = seg.end_stm * seg.node_stms[q].inverse();

      const Matrix Aq = model.jac_state(xq, u, muq);
      const Matrix Bq = model.jac_control(xq, u, muq);
      const Vector Gq = model.jac_field(xq, u, muq);
      const Vector fq = model.f(xq, u, muq);
      const Vector cq = fq - Aq * xq - Bq * u - Gq * muq;

      const double w = gl.weights[q] * scale;
      Bk += w * phi_end * Bq;
      ck += w * phi_end * cq;
      infl.col(q) = w * phi_end * Gq;
    }
    out.B[k] = Bk;
    out.c[k] = ck;
    out.node_influence[k] = infl;

    Vector mu_vec(Q);
    for (int q = 0; q < Q; ++q) mu_vec[q] = out.node_field_mean[k][q];
    out.wbar[k] = infl * mu_vec;
  }

  // Joint disturbance covariance: Cov(w_k, w_l) = M_k K_{kl} M_l^T with K the
  // kernel matrix over all quadrature nodes.  Upper-triangular block pairs are
  // independent, so they parallelize without any reduction.
  out.wcov = Matrix::Zero(N * n, N * n);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(N * (N + 1) / 2);
  for (int k = 0; k < N; ++k) {
    for (int l = k; l < N; ++l) pairs.emplace_back(k, l);
  }

#ifdef COVSTEER_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic) if (parallel)
#endif
  for (std::ptrdiff_t idx = 0; idx < static_cast<std::ptrdiff_t>(pairs.size()); ++idx) {
    const auto [k, l] = pairs[idx];
    Matrix kernel_block(Q, Q);
    for (int q = 0; q < Q; ++q) {
      for (int r = 0; r < Q; ++r) {
        kernel_block(q, r) =
            field.cov(out.node_field_index[k][q], out.node_field_index[l][r]);
      }
    }
    const Matrix block =
        out.node_influence[k] * kernel_block * out.node_influence[l].transpose();
    out.wcov.block(k * n, l * n, n, n) = block;
    if (l != k) {
      out.wcov.block(l * n, k * n, n, n) = block.transpose();
    }
  }
#ifndef COVSTEER_HAVE_OPENMP
  (void)parallel;
#endif

  out.wcov = repair_psd(out.wcov);
  return out;
}

}  // namespace covsteer
