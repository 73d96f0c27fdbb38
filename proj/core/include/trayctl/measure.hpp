#pragma once

#include "trayctl/nominal.hpp"
#include "trayctl/plant.hpp"

namespace trayctl {

// Controller-side measurement: object position/velocity in the tray frame
// plus the realized tilt states.
inline MpcState measure_state(const ObjectState& obj_world, const TrayState& tray) {
  const ObjectState in_tray = transform_state(obj_world, Frame::World, Frame::Tray, tray);
  MpcState s;
  s.p = in_tray.p.head<2>();
  s.v = in_tray.v.head<2>();
  s.tilt = tray.tilt;
  s.tilt_rate = tray.tilt_rate;
  return s;
}

// Tray-frame twist of the object (for the online regressor).
inline Eigen::Matrix<double, 6, 1> measure_twist(const ObjectState& obj_world,
                                                 const TrayState& tray) {
  const ObjectState in_tray = transform_state(obj_world, Frame::World, Frame::Tray, tray);
  Eigen::Matrix<double, 6, 1> nu;
  nu << in_tray.v, in_tray.w;
  return nu;
}

}  // namespace trayctl
