// Tray tilt conventions shared by the plant and the planning model.
//
// The tray rotation is R(alpha, beta) = Rx(alpha) * Ry(beta) where positive
// roll alpha raises the +y tray edge and positive pitch beta raises the +x
// edge. Under this convention the tangential gravity seen on the tray is
//   g_t = (-g sin(beta) cos(alpha), -g sin(alpha), -g cos(alpha) cos(beta)).

#pragma once

#include <Eigen/Core>
#include <cmath>

namespace trayctl {

inline constexpr double kGravity = 9.81;  // m/s^2

// Commanded tray roll/pitch, radians.
struct TiltCommand {
  double alpha{0.0};
  double beta{0.0};

  Eigen::Vector2d vec() const { return {alpha, beta}; }
  static TiltCommand from(const Eigen::Vector2d& v) { return {v[0], v[1]}; }
};

// World-from-tray rotation for a given tilt.
template <typename T>
Eigen::Matrix<T, 3, 3> tilt_rotation(const T& alpha, const T& beta) {
  using std::cos;
  using std::sin;
  const T ca = cos(alpha), sa = sin(alpha);
  const T cb = cos(beta), sb = sin(beta);
  Eigen::Matrix<T, 3, 3> r;
  r(0, 0) = cb;       r(0, 1) = T(0.0); r(0, 2) = -sb;
  r(1, 0) = -sa * sb; r(1, 1) = ca;     r(1, 2) = -sa * cb;
  r(2, 0) = ca * sb;  r(2, 1) = sa;     r(2, 2) = ca * cb;
  return r;
}

inline Eigen::Matrix3d tilt_rotation(const TiltCommand& u) {
  return tilt_rotation(u.alpha, u.beta);
}

// Gravity expressed in the tray frame. Entries 0-1 are tangential, entry 2
// is the normal component (<= 0 for |alpha|, |beta| < pi/2).
template <typename T>
Eigen::Matrix<T, 3, 1> gravity_in_tray(const T& alpha, const T& beta) {
  using std::cos;
  using std::sin;
  const T ca = cos(alpha), sa = sin(alpha);
  Eigen::Matrix<T, 3, 1> g;
  g[0] = -kGravity * ca * sin(beta);
  g[1] = -kGravity * sa;
  g[2] = -kGravity * ca * cos(beta);
  return g;
}

inline Eigen::Vector3d gravity_in_tray(const TiltCommand& tilt) {
  return gravity_in_tray(tilt.alpha, tilt.beta);
}

}  // namespace trayctl
