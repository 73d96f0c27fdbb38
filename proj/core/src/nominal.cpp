#include "trayctl/nominal.hpp"

#include <cmath>

#include "trayctl/dual.hpp"
#include "trayctl/errors.hpp"

namespace trayctl {
namespace {

template <typename T>
using Vec8T = Eigen::Matrix<T, 8, 1>;
template <typename T>
using Vec2T = Eigen::Matrix<T, 2, 1>;

template <typename T>
Vec2T<T> accel_impl(const Vec2T<T>& v, const T& alpha, const T& beta,
                    const NominalParams& prm) {
  const Eigen::Matrix<T, 3, 1> g = gravity_in_tray(alpha, beta);
  const T gn = -g[2];
  Vec2T<T> a;
  for (int i = 0; i < 2; ++i) {
    a[i] = g[i] - (prm.viscous_hat / prm.mass_hat) * v[i];
    if (prm.friction_enabled) a[i] -= prm.mu_hat * gn * tanh(v[i] / prm.epsilon);
  }
  return a;
}

template <typename T>
Vec8T<T> ode_rhs(const Vec8T<T>& x, const Vec2T<T>& u, const NominalParams& prm) {
  const T w = T(prm.servo_omega);
  Vec8T<T> dx;
  dx[0] = x[2];
  dx[1] = x[3];
  const Vec2T<T> a = accel_impl<T>({x[2], x[3]}, x[4], x[5], prm);
  dx[2] = a[0];
  dx[3] = a[1];
  dx[4] = x[6];
  dx[5] = x[7];
  dx[6] = w * w * (u[0] - x[4]) - 2.0 * w * x[6];
  dx[7] = w * w * (u[1] - x[5]) - 2.0 * w * x[7];
  return dx;
}

struct FeatureResidual {
  Eigen::Matrix<double, 3, 2> z;
  double eps;
};

// Residual over the step: evaluated at the step-initial velocity and applied
// through the exact constant-acceleration map, so it enters linearly.
template <typename T>
Vec2T<T> residual_eval(const Vec2T<T>& v0, const Eigen::Vector2d& frozen_xy,
                       const FeatureResidual* feat) {
  if (!feat) return {T(frozen_xy[0]), T(frozen_xy[1])};
  Vec2T<T> r;
  for (int j = 0; j < 2; ++j)
    r[j] = feat->z(0, j) * v0[j] + feat->z(1, j) * tanh(v0[j] / feat->eps) + T(feat->z(2, j));
  return r;
}

template <typename T>
Vec8T<T> step_impl(const Vec8T<T>& x0, const Vec2T<T>& u, const NominalParams& prm, double dt,
                   const Eigen::Vector2d& frozen_xy, const FeatureResidual* feat) {
  const Vec8T<T> k1 = ode_rhs(x0, u, prm);
  const Vec8T<T> k2 = ode_rhs<T>(x0 + (0.5 * dt) * k1, u, prm);
  const Vec8T<T> k3 = ode_rhs<T>(x0 + (0.5 * dt) * k2, u, prm);
  const Vec8T<T> k4 = ode_rhs<T>(x0 + dt * k3, u, prm);
  Vec8T<T> x1 = x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  const Vec2T<T> r = residual_eval<T>({x0[2], x0[3]}, frozen_xy, feat);
  x1[0] += 0.5 * dt * dt * r[0];
  x1[1] += 0.5 * dt * dt * r[1];
  x1[2] += dt * r[0];
  x1[3] += dt * r[1];
  return x1;
}

void check_finite(const Vec8& x) {
  if (!x.allFinite()) throw NonFiniteError("nominal model step diverged");
}

}  // namespace

Eigen::Vector2d nominal_accel(const MpcState& s, const TiltCommand& u,
                              const NominalParams& params) {
  (void)u;  // the command acts through the tilt states, not directly
  return accel_impl<double>(s.v, s.tilt[0], s.tilt[1], params);
}

MpcState phi(const MpcState& s, const TiltCommand& u, const ResidualAccel& residual,
             const NominalParams& params, double dt) {
  const Vec8 x1 =
      step_impl<double>(s.vec(), u.vec(), params, dt, residual.xy(), nullptr);
  check_finite(x1);
  return MpcState::from(x1);
}

ResidualAccel TransitionFn::residual_at(const Eigen::Vector2d& v) const {
  switch (mode_) {
    case ResidualMode::None:
      return {};
    case ResidualMode::Frozen:
      return frozen_;
    case ResidualMode::Feature: {
      const FeatureResidual feat{feature_z_, feature_eps_};
      return ResidualAccel::from_xy(residual_eval<double>(v, Eigen::Vector2d::Zero(), &feat));
    }
  }
  return {};
}

MpcState TransitionFn::step(const MpcState& s, const TiltCommand& u) const {
  const FeatureResidual feat{feature_z_, feature_eps_};
  const Vec8 x1 = step_impl<double>(
      s.vec(), u.vec(), params, dt,
      mode_ == ResidualMode::Frozen ? frozen_.xy() : Eigen::Vector2d::Zero().eval(),
      mode_ == ResidualMode::Feature ? &feat : nullptr);
  check_finite(x1);
  return MpcState::from(x1);
}

void TransitionFn::jacobians(const MpcState& s, const TiltCommand& u, Mat8& dphi_dx,
                             Mat8x2& dphi_du) const {
  using D = Dual<10>;
  Vec8T<D> x;
  const Vec8 xv = s.vec();
  for (int i = 0; i < 8; ++i) x[i] = D::seed(xv[i], i);
  Vec2T<D> uc;
  uc[0] = D::seed(u.alpha, 8);
  uc[1] = D::seed(u.beta, 9);

  const FeatureResidual feat{feature_z_, feature_eps_};
  const Vec8T<D> x1 = step_impl<D>(
      x, uc, params, dt,
      mode_ == ResidualMode::Frozen ? frozen_.xy() : Eigen::Vector2d::Zero().eval(),
      mode_ == ResidualMode::Feature ? &feat : nullptr);

  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) dphi_dx(i, j) = x1[i].der[j];
    dphi_du(i, 0) = x1[i].der[8];
    dphi_du(i, 1) = x1[i].der[9];
  }
}

void phi_jacobians(const MpcState& s, const TiltCommand& u, const ResidualAccel& residual,
                   const NominalParams& params, double dt, Mat8& dphi_dx, Mat8x2& dphi_du) {
  TransitionFn fn;
  fn.params = params;
  fn.dt = dt;
  fn.set_frozen_residual(residual);
  fn.jacobians(s, u, dphi_dx, dphi_du);
}

}  // namespace trayctl
