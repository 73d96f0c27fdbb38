// Online identification of unmodeled dynamics: per-axis recursive least
// squares over velocity features [v, tanh(v/eps), 1], with exponential
// forgetting. Six independent axes (3 translational + 3 rotational); the
// planar MPC consumes the translational x/y residuals.

#pragma once

#include <Eigen/Core>
#include <array>

#include "trayctl/nominal.hpp"

namespace trayctl {

using Vec6 = Eigen::Matrix<double, 6, 1>;

enum class RlsKind { Translational, Rotational };

struct RlsFeatures {
  Eigen::Vector3d phi{Eigen::Vector3d::Zero()};
  double epsilon{0.01};
};

// phi = [v_j, tanh(v_j / epsilon), 1]
RlsFeatures features(double v_j, double epsilon);

// Finite-difference acceleration minus the nominal prediction.
Vec6 discrepancy(const Vec6& nu_k, const Vec6& nu_km1, const Vec6& nominal_accel, double ts);

struct RlsAxisState {
  Eigen::Vector3d z{Eigen::Vector3d::Zero()};
  Eigen::Matrix3d P{10.0 * Eigen::Matrix3d::Identity()};
  RlsKind kind{RlsKind::Translational};
  int axis{0};  // 0..2 within its kind
  int covariance_resets{0};
};

// One RLS step: K = P phi / (lambda + phi' P phi); z += K innovation;
// P = (P - K phi' P) / lambda, then explicitly symmetrized. A covariance
// blowup (any eigenvalue above 1e6) resets P and bumps the reset counter.
void rls_update(RlsAxisState& axis, const Eigen::Vector3d& phi, double target, double lambda);

struct RlsBank {
  std::array<RlsAxisState, 6> axes{};  // 0..2 translational xyz, 3..5 rotational
  double lambda{0.995};
  double eps_t{0.01};   // m/s
  double eps_r{0.05};   // rad/s
  double v_gate{1e-3};  // adaptation gate on speed
  double p0{10.0};

  RlsBank();

  // Updates all gated axes from one observed transition. Features are
  // evaluated at the previous-step twist.
  void update(const Vec6& nu_k, const Vec6& nu_km1, const Vec6& nominal_accel, double ts);

  ResidualAccel predict(const Vec6& nu) const;

  // Translational x/y feature coefficients for the transition map.
  Eigen::Matrix<double, 3, 2> translational_xy() const;
};

// Spec-level free function form.
ResidualAccel predict_residual(const RlsBank& bank, const Vec6& nu);

}  // namespace trayctl
