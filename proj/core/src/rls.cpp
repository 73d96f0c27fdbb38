#include "trayctl/rls.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace trayctl {

namespace {
constexpr double kCovarianceCap = 1e6;
}

RlsFeatures features(double v_j, double epsilon) {
  RlsFeatures f;
  f.epsilon = epsilon;
  f.phi = {v_j, std::tanh(v_j / epsilon), 1.0};
  return f;
}

Vec6 discrepancy(const Vec6& nu_k, const Vec6& nu_km1, const Vec6& nominal_accel, double ts) {
  return (nu_k - nu_km1) / ts - nominal_accel;
}

void rls_update(RlsAxisState& axis, const Eigen::Vector3d& phi, double target, double lambda) {
  const Eigen::Vector3d p_phi = axis.P * phi;
  const double denom = lambda + phi.dot(p_phi);
  const Eigen::Vector3d gain = p_phi / denom;
  axis.z += gain * (target - phi.dot(axis.z));
  axis.P = (axis.P - gain * p_phi.transpose()) / lambda;
  axis.P = 0.5 * (axis.P + axis.P.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(axis.P);
  if (es.eigenvalues().maxCoeff() > kCovarianceCap) {
    axis.P = 10.0 * Eigen::Matrix3d::Identity();
    ++axis.covariance_resets;
  }
}

RlsBank::RlsBank() {
  for (int i = 0; i < 6; ++i) {
    axes[i].kind = i < 3 ? RlsKind::Translational : RlsKind::Rotational;
    axes[i].axis = i % 3;
  }
}

void RlsBank::update(const Vec6& nu_k, const Vec6& nu_km1, const Vec6& nominal_accel, double ts) {
  const Vec6 residual = discrepancy(nu_k, nu_km1, nominal_accel, ts);
  // Features degenerate to pure bias at rest and would absorb gravity
  // transients; adaptation is gated on measurable motion.
  const bool trans_active = nu_km1.head<3>().norm() > v_gate;
  const bool rot_active = nu_km1.tail<3>().norm() > v_gate;
  for (int i = 0; i < 6; ++i) {
    const bool active = i < 3 ? trans_active : rot_active;
    if (!active) continue;
    const double eps = i < 3 ? eps_t : eps_r;
    rls_update(axes[i], features(nu_km1[i], eps).phi, residual[i], lambda);
  }
}

ResidualAccel RlsBank::predict(const Vec6& nu) const {
  ResidualAccel r;
  for (int i = 0; i < 6; ++i) {
    const double eps = i < 3 ? eps_t : eps_r;
    r.a[i] = features(nu[i], eps).phi.dot(axes[i].z);
  }
  return r;
}

Eigen::Matrix<double, 3, 2> RlsBank::translational_xy() const {
  Eigen::Matrix<double, 3, 2> z;
  z.col(0) = axes[0].z;
  z.col(1) = axes[1].z;
  return z;
}

ResidualAccel predict_residual(const RlsBank& bank, const Vec6& nu) { return bank.predict(nu); }

}  // namespace trayctl
