// Smooth reduced model of the tray-object system used by the MPC: planar
// object position/velocity plus tray tilt and tilt rate (8 states). Friction
// is smoothed with tanh so the discrete transition map is differentiable;
// adapter residuals enter through an exact constant-acceleration stage.

#pragma once

#include <Eigen/Core>

#include "trayctl/tilt.hpp"

namespace trayctl {

using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using Mat8x2 = Eigen::Matrix<double, 8, 2>;

// [p (2), v (2), tilt (2), tilt rate (2)], tray frame.
struct MpcState {
  Eigen::Vector2d p{Eigen::Vector2d::Zero()};
  Eigen::Vector2d v{Eigen::Vector2d::Zero()};
  Eigen::Vector2d tilt{Eigen::Vector2d::Zero()};
  Eigen::Vector2d tilt_rate{Eigen::Vector2d::Zero()};

  Vec8 vec() const {
    Vec8 x;
    x << p, v, tilt, tilt_rate;
    return x;
  }
  static MpcState from(const Vec8& x) {
    MpcState s;
    s.p = x.segment<2>(0);
    s.v = x.segment<2>(2);
    s.tilt = x.segment<2>(4);
    s.tilt_rate = x.segment<2>(6);
    return s;
  }
};

struct NominalParams {
  double mass_hat{1.0};      // kg
  double mu_hat{0.1};        // effective Coulomb coefficient
  double v_s_hat{0.01};      // m/s, carried for parameter adaptation
  double viscous_hat{0.0};   // N s/m
  double servo_omega{25.0};  // rad/s, tilt tracking bandwidth
  double epsilon{0.01};      // m/s, tanh friction smoothing
  bool friction_enabled{true};
};

// Adapter acceleration correction, tray frame. The planar model consumes the
// translational x/y entries; rotational entries are carried but inert.
struct ResidualAccel {
  Eigen::Matrix<double, 6, 1> a{Eigen::Matrix<double, 6, 1>::Zero()};

  Eigen::Vector2d xy() const { return a.head<2>(); }
  static ResidualAccel from_xy(const Eigen::Vector2d& r) {
    ResidualAccel out;
    out.a.head<2>() = r;
    return out;
  }
};

// Smoothed tangent-plane acceleration (no residual).
Eigen::Vector2d nominal_accel(const MpcState& s, const TiltCommand& u,
                              const NominalParams& params);

// One RK4 step of the smooth model plus the residual's exact linear stage.
// Throws NonFiniteError on overflow.
MpcState phi(const MpcState& s, const TiltCommand& u, const ResidualAccel& residual,
             const NominalParams& params, double dt);

// Discrete transition map handed to the solver. The residual source is either
// absent, a frozen vector, or a velocity-feature form whose per-axis
// coefficients come from the online regressor; the feature form is
// differentiated along with the dynamics.
class TransitionFn {
 public:
  NominalParams params{};
  double dt{0.002};

  enum class ResidualMode { None, Frozen, Feature };

  void clear_residual() { mode_ = ResidualMode::None; }
  void set_frozen_residual(const ResidualAccel& r) {
    mode_ = ResidualMode::Frozen;
    frozen_ = r;
  }
  // z columns are the 3-coefficient feature weights for the x and y axes;
  // residual_j(v) = z0*v + z1*tanh(v/eps) + z2.
  void set_feature_residual(const Eigen::Matrix<double, 3, 2>& z, double eps) {
    mode_ = ResidualMode::Feature;
    feature_z_ = z;
    feature_eps_ = eps;
  }
  ResidualMode residual_mode() const { return mode_; }
  ResidualAccel residual_at(const Eigen::Vector2d& v) const;

  MpcState step(const MpcState& s, const TiltCommand& u) const;
  void jacobians(const MpcState& s, const TiltCommand& u, Mat8& dphi_dx,
                 Mat8x2& dphi_du) const;

 private:
  ResidualMode mode_{ResidualMode::None};
  ResidualAccel frozen_{};
  Eigen::Matrix<double, 3, 2> feature_z_{Eigen::Matrix<double, 3, 2>::Zero()};
  double feature_eps_{0.01};
};

// Jacobians of phi with a fixed residual (spec-level free function).
void phi_jacobians(const MpcState& s, const TiltCommand& u, const ResidualAccel& residual,
                   const NominalParams& params, double dt, Mat8& dphi_dx, Mat8x2& dphi_du);

}  // namespace trayctl
