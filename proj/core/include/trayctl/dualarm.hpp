// Tier-B actuation: two planar 3-link arms rigidly holding the tray. A QP
// impedance controller converts desired tray tilts into joint torques; pitch
// is realized by synchronized wrist rotation, roll by differential
// end-effector height. Each arm lives in its own sagittal (x, z) plane at
// the tray's grasp width.

#pragma once

#include <Eigen/Core>
#include <utility>

#include "trayctl/plant.hpp"
#include "trayctl/tilt.hpp"

namespace trayctl {

using Vec6d = Eigen::Matrix<double, 6, 1>;

struct ArmModel {
  Eigen::Vector3d lengths{0.40, 0.35, 0.12};   // m
  Eigen::Vector3d masses{2.0, 1.5, 0.8};       // kg
  Eigen::Vector3d com_offsets;                 // m from proximal joint; default mid-link
  Eigen::Vector3d inertias{0.027, 0.015, 0.06};  // kg m^2 about COM (link 3 carries the grasp fixture)
  Eigen::Vector3d q_min{-2.9, -2.9, -2.9};
  Eigen::Vector3d q_max{2.9, 2.9, 2.9};
  Eigen::Vector3d qd_max{6.0, 6.0, 6.0};       // rad/s
  Eigen::Vector3d tau_max{80.0, 50.0, 25.0};   // N m
  Eigen::Vector2d base{-0.55, 0.05};           // (x, z) of joint 1 in the arm plane
  double wrist_point_mass{1.0};                // tray + object share carried at the EE

  ArmModel() { com_offsets = 0.5 * lengths; }
};

// Planar task pose (x, z, theta) and its rate.
struct TaskPose {
  Eigen::Vector3d y{Eigen::Vector3d::Zero()};
  Eigen::Vector3d yd{Eigen::Vector3d::Zero()};
};

struct ImpedanceGains {
  Eigen::Matrix3d stiffness;       // K: diag(5000, 5000, 50)
  Eigen::Matrix3d null_stiffness;  // K_null: 7 I
  double w_imp{1.0};
  double w_pos{0.02};

  ImpedanceGains() {
    stiffness = Eigen::Vector3d(5000.0, 5000.0, 50.0).asDiagonal();
    null_stiffness = 7.0 * Eigen::Matrix3d::Identity();
  }
};

struct ArmDynamics {
  Eigen::Matrix3d mass;      // M(q), SPD
  Eigen::Vector3d bias;      // h(q, qd) = C qd + g
  Eigen::Matrix3d jacobian;  // rows (x, z, theta)
  Eigen::Matrix3d jacobian_dot;
};

ArmDynamics arm_dynamics(const Eigen::Vector3d& q, const Eigen::Vector3d& qd,
                         const ArmModel& model);

// (x, z, theta) of the end effector.
Eigen::Vector3d forward_kinematics(const Eigen::Vector3d& q, const ArmModel& model);

// Elbow-down planar IK for a pinned orientation; throws UnreachableError.
Eigen::Vector3d inverse_kinematics(const Eigen::Vector3d& pose, const ArmModel& model);

bool pose_reachable(const Eigen::Vector3d& pose, const ArmModel& model);

struct TrayGeometry {
  double width{0.30};  // grasp separation, m
  Eigen::Vector3d com{0.0, 0.0, 0.5};
};

// Grasp-point references for a commanded tilt: x and z of each grasp point
// plus wrist pitch. Throws UnreachableError if an arm model is supplied and
// its grasp point leaves the workspace.
std::pair<TaskPose, TaskPose> tray_to_ee_refs(const TiltCommand& u, const TrayGeometry& geom,
                                              const ArmModel* left = nullptr,
                                              const ArmModel* right = nullptr);

// e_imp = (J qdd + Jdot qd) - Lambda^{-1} [D (yd_ref - yd) + K (y_ref - y)],
// with Lambda = (J M^{-1} J')^{-1} and D = sqrt(Lambda) sqrt(K) +
// sqrt(K) sqrt(Lambda). Near-singular Jacobians (cond > 1e6) get Tikhonov
// damping and set the flag.
Eigen::Vector3d impedance_error(const TaskPose& actual, const TaskPose& ref,
                                const Eigen::Vector3d& qdd, const ArmDynamics& dyn,
                                const ImpedanceGains& gains, bool* near_singular = nullptr);

// e_pos = qdd - [2 sqrt(K_null) (qd_ref - qd) + K_null (q_ref - q)], qd_ref = 0;
// zero exactly when qdd tracks the critically damped posture PD law.
Eigen::Vector3d posture_error(const Eigen::Vector3d& q, const Eigen::Vector3d& qd,
                              const Eigen::Vector3d& qdd, const Eigen::Vector3d& q_ref,
                              const ImpedanceGains& gains);

// Affine pieces of one arm's tasks and its acceleration box.
struct ArmTask {
  Eigen::Matrix3d imp_mat;   // e_imp = imp_mat qdd - imp_rhs
  Eigen::Vector3d imp_rhs;
  Eigen::Vector3d posture_rhs;  // e_pos = qdd - posture_rhs
  Eigen::Vector3d qdd_lo, qdd_hi;
  bool near_singular{false};
  bool box_relaxed{false};
};

ArmTask build_arm_task(const Eigen::Vector3d& q, const Eigen::Vector3d& qd, const TaskPose& ref,
                       const Eigen::Vector3d& q_ref, const ArmModel& model,
                       const ImpedanceGains& gains, double dt);

struct QpSolution {
  Vec6d qdd{Vec6d::Zero()};  // (left, right)
  double objective{0.0};
  int active_set_size{0};
  double kkt_residual{0.0};
  bool fallback{false};
};

QpSolution solve_arm_qp(const ArmTask& left, const ArmTask& right, const ImpedanceGains& gains);

// tau = M qdd + h
Eigen::Vector3d torques(const Eigen::Vector3d& qdd, const ArmDynamics& dyn);

// The dual-arm rig as a tilt actuator: QP torques applied to torque-driven
// arm dynamics each step, realized tray tilt reconstructed from the two end
// effectors.
class DualArmActuator final : public TiltActuator {
 public:
  DualArmActuator(ArmModel model, TrayGeometry geom, ImpedanceGains gains);

  void step(TrayState& tray, const TiltCommand& u, double dt) override;

  // Synchronizes the tray state with the arms' current pose (call once after
  // construction).
  void sync(TrayState& tray) const;

  const Eigen::Vector3d& q_left() const { return q_[0]; }
  const Eigen::Vector3d& q_right() const { return q_[1]; }
  const Eigen::Vector3d& qd_left() const { return qd_[0]; }
  const Eigen::Vector3d& qd_right() const { return qd_[1]; }
  const Eigen::Vector3d& tau_left() const { return tau_[0]; }
  const Eigen::Vector3d& tau_right() const { return tau_[1]; }
  const QpSolution& last_qp() const { return last_qp_; }

  // Deviation of the two end effectors from one rigid tray pose:
  // max(|x_L - x_R|, (w/2) |theta_L - theta_R|).
  double rigidity_error() const;

 private:
  Eigen::Vector2d realized_tilt() const;
  Eigen::Vector2d realized_tilt_rate(double cos_alpha) const;

  ArmModel model_;
  TrayGeometry geom_;
  ImpedanceGains gains_;
  Eigen::Vector3d q_ref_;
  Eigen::Vector3d q_[2], qd_[2], tau_[2];
  QpSolution last_qp_{};
};

}  // namespace trayctl
