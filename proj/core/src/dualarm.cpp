#include "trayctl/dualarm.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>

#include "trayctl/dual.hpp"
#include "trayctl/errors.hpp"
#include "trayctl/qp.hpp"

namespace trayctl {
namespace {

constexpr double kAmbientQdd = 300.0;  // rad/s^2 cap used by the box bounds
constexpr double kCondLimit = 1e6;
constexpr double kTikhonov = 1e-6;

template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

// End-effector pose (x, z, theta) for scalar type T.
template <typename T>
Vec3T<T> ee_pose_impl(const Vec3T<T>& q, const ArmModel& m) {
  T a = q[0];
  T x = T(m.base[0]) + m.lengths[0] * cos(a);
  T z = T(m.base[1]) + m.lengths[0] * sin(a);
  a = a + q[1];
  x = x + m.lengths[1] * cos(a);
  z = z + m.lengths[1] * sin(a);
  a = a + q[2];
  x = x + m.lengths[2] * cos(a);
  z = z + m.lengths[2] * sin(a);
  Vec3T<T> out;
  out << x, z, a;
  return out;
}

// Task Jacobian rows (x, z, theta).
template <typename T>
Mat3T<T> jacobian_impl(const Vec3T<T>& q, const ArmModel& m) {
  T a0 = q[0];
  T a1 = q[0] + q[1];
  T a2 = q[0] + q[1] + q[2];
  const T s0 = m.lengths[0] * sin(a0), c0 = m.lengths[0] * cos(a0);
  const T s1 = m.lengths[1] * sin(a1), c1 = m.lengths[1] * cos(a1);
  const T s2 = m.lengths[2] * sin(a2), c2 = m.lengths[2] * cos(a2);
  Mat3T<T> j;
  j(0, 0) = -(s0 + s1 + s2); j(0, 1) = -(s1 + s2); j(0, 2) = -s2;
  j(1, 0) = c0 + c1 + c2;    j(1, 1) = c1 + c2;    j(1, 2) = c2;
  j(2, 0) = T(1.0);          j(2, 1) = T(1.0);     j(2, 2) = T(1.0);
  return j;
}

// Joint-space mass matrix by Jacobian composition over link COMs plus the
// point load carried at the end effector.
template <typename T>
Mat3T<T> mass_matrix_impl(const Vec3T<T>& q, const ArmModel& m) {
  Mat3T<T> mass = Mat3T<T>::Zero();
  T angles[3] = {q[0], q[0] + q[1], q[0] + q[1] + q[2]};
  for (int link = 0; link < 3; ++link) {
    // COM linear Jacobian (x, z rows).
    Eigen::Matrix<T, 2, 3> jc = Eigen::Matrix<T, 2, 3>::Zero();
    for (int k = 0; k <= link; ++k) {
      T dx(0.0), dz(0.0);
      for (int j = k; j < link; ++j) {
        dx = dx - m.lengths[j] * sin(angles[j]);
        dz = dz + m.lengths[j] * cos(angles[j]);
      }
      dx = dx - m.com_offsets[link] * sin(angles[link]);
      dz = dz + m.com_offsets[link] * cos(angles[link]);
      jc(0, k) = dx;
      jc(1, k) = dz;
    }
    mass += m.masses[link] * (jc.transpose() * jc);
    for (int a = 0; a <= link; ++a)
      for (int b = 0; b <= link; ++b) mass(a, b) += m.inertias[link];
  }
  if (m.wrist_point_mass > 0.0) {
    const Mat3T<T> j = jacobian_impl(q, m);
    const Eigen::Matrix<T, 2, 3> jl = j.template topRows<2>();
    mass += m.wrist_point_mass * (jl.transpose() * jl);
  }
  return mass;
}

// Gravitational potential (z up).
template <typename T>
T potential_impl(const Vec3T<T>& q, const ArmModel& m) {
  T angles[3] = {q[0], q[0] + q[1], q[0] + q[1] + q[2]};
  T v(0.0);
  T z_prox = T(m.base[1]);
  for (int link = 0; link < 3; ++link) {
    const T z_com = z_prox + m.com_offsets[link] * sin(angles[link]);
    v = v + kGravity * m.masses[link] * z_com;
    z_prox = z_prox + m.lengths[link] * sin(angles[link]);
  }
  v = v + kGravity * m.wrist_point_mass * z_prox;
  return v;
}

Eigen::Matrix3d sqrtm_spd(const Eigen::Matrix3d& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(a);
  const Eigen::Vector3d d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

ArmDynamics arm_dynamics(const Eigen::Vector3d& q, const Eigen::Vector3d& qd,
                         const ArmModel& model) {
  using D3 = Dual<3>;
  Vec3T<D3> qd3;
  for (int i = 0; i < 3; ++i) qd3[i] = D3::seed(q[i], i);

  const Mat3T<D3> mass_d = mass_matrix_impl<D3>(qd3, model);
  const Mat3T<D3> jac_d = jacobian_impl<D3>(qd3, model);
  const D3 pot_d = potential_impl<D3>(qd3, model);

  ArmDynamics dyn;
  Eigen::Vector3d gravity;
  double dm[3][3][3];  // dM_ij / dq_k
  for (int i = 0; i < 3; ++i) {
    gravity[i] = pot_d.der[i];
    for (int j = 0; j < 3; ++j) {
      dyn.mass(i, j) = mass_d(i, j).val;
      dyn.jacobian(i, j) = jac_d(i, j).val;
      for (int k = 0; k < 3; ++k) dm[i][j][k] = mass_d(i, j).der[k];
    }
  }

  // Coriolis matrix from Christoffel symbols; h = C qd + g.
  Eigen::Matrix3d coriolis = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        coriolis(i, j) += 0.5 * (dm[i][j][k] + dm[i][k][j] - dm[j][k][i]) * qd[k];
  dyn.bias = coriolis * qd + gravity;

  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += jac_d(i, j).der[k] * qd[k];
      dyn.jacobian_dot(i, j) = s;
    }
  return dyn;
}

Eigen::Vector3d forward_kinematics(const Eigen::Vector3d& q, const ArmModel& model) {
  return ee_pose_impl<double>(q, model);
}

bool pose_reachable(const Eigen::Vector3d& pose, const ArmModel& model) {
  const Eigen::Vector2d wrist(pose[0] - model.lengths[2] * std::cos(pose[2]),
                              pose[1] - model.lengths[2] * std::sin(pose[2]));
  const double r = (wrist - model.base).norm();
  return r <= model.lengths[0] + model.lengths[1] - 1e-9 &&
         r >= std::abs(model.lengths[0] - model.lengths[1]) + 1e-9;
}

Eigen::Vector3d inverse_kinematics(const Eigen::Vector3d& pose, const ArmModel& model) {
  if (!pose_reachable(pose, model))
    throw UnreachableError("grasp point outside the arm workspace annulus");
  const Eigen::Vector2d wrist(pose[0] - model.lengths[2] * std::cos(pose[2]),
                              pose[1] - model.lengths[2] * std::sin(pose[2]));
  const Eigen::Vector2d rel = wrist - model.base;
  const double l1 = model.lengths[0], l2 = model.lengths[1];
  const double c2 = std::clamp((rel.squaredNorm() - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double q2 = -std::acos(c2);  // elbow-down branch
  const double q1 =
      std::atan2(rel[1], rel[0]) - std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));
  const double q3 = pose[2] - q1 - q2;
  return {q1, q2, q3};
}

std::pair<TaskPose, TaskPose> tray_to_ee_refs(const TiltCommand& u, const TrayGeometry& geom,
                                              const ArmModel* left, const ArmModel* right) {
  // Grasp points: com +- R(alpha, beta) (0, w/2, 0). The grasp line lies
  // along the tray y axis, so pitch leaves the heights equal and roll
  // separates them by w sin(alpha).
  const Eigen::Matrix3d r = tilt_rotation(u);
  const Eigen::Vector3d offset = r * Eigen::Vector3d(0.0, 0.5 * geom.width, 0.0);
  TaskPose lhs, rhs;
  lhs.y = {geom.com[0] + offset[0], geom.com[2] + offset[2], u.beta};
  rhs.y = {geom.com[0] - offset[0], geom.com[2] - offset[2], u.beta};
  if (left && !pose_reachable(lhs.y, *left))
    throw UnreachableError("left grasp reference unreachable");
  if (right && !pose_reachable(rhs.y, *right))
    throw UnreachableError("right grasp reference unreachable");
  return {lhs, rhs};
}

namespace {

struct ImpedanceAffine {
  Eigen::Matrix3d mat;  // e_imp = mat qdd - rhs
  Eigen::Vector3d rhs;
  bool near_singular{false};
};

ImpedanceAffine impedance_affine(const TaskPose& actual, const TaskPose& ref,
                                 const ArmDynamics& dyn, const ImpedanceGains& gains) {
  ImpedanceAffine out;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(dyn.jacobian);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  out.near_singular = smin <= 0.0 || smax / smin > kCondLimit;

  Eigen::Matrix3d lambda_inv =
      dyn.jacobian * dyn.mass.llt().solve(Eigen::Matrix3d::Identity()) * dyn.jacobian.transpose();
  if (out.near_singular) lambda_inv += kTikhonov * Eigen::Matrix3d::Identity();
  lambda_inv = 0.5 * (lambda_inv + lambda_inv.transpose());
  const Eigen::Matrix3d lambda = lambda_inv.inverse();

  const Eigen::Matrix3d sqrt_lambda = sqrtm_spd(lambda);
  const Eigen::Matrix3d sqrt_k = sqrtm_spd(gains.stiffness);
  Eigen::Matrix3d damping = sqrt_lambda * sqrt_k + sqrt_k * sqrt_lambda;
  damping = 0.5 * (damping + damping.transpose());

  const Eigen::Vector3d wrench =
      damping * (ref.yd - actual.yd) + gains.stiffness * (ref.y - actual.y);
  out.mat = dyn.jacobian;
  out.rhs = lambda_inv * wrench;  // callers subtract Jdot qd
  return out;
}

}  // namespace

Eigen::Vector3d impedance_error(const TaskPose& actual, const TaskPose& ref,
                                const Eigen::Vector3d& qdd, const ArmDynamics& dyn,
                                const ImpedanceGains& gains, bool* near_singular) {
  ImpedanceAffine aff = impedance_affine(actual, ref, dyn, gains);
  if (near_singular) *near_singular = aff.near_singular;
  // Joint rates are implicit in actual.yd = J qd.
  const Eigen::Vector3d qd = dyn.jacobian.partialPivLu().solve(actual.yd);
  return aff.mat * qdd + dyn.jacobian_dot * qd - aff.rhs;
}

Eigen::Vector3d posture_error(const Eigen::Vector3d& q, const Eigen::Vector3d& qd,
                              const Eigen::Vector3d& qdd, const Eigen::Vector3d& q_ref,
                              const ImpedanceGains& gains) {
  const Eigen::Matrix3d sqrt_kn = sqrtm_spd(gains.null_stiffness);
  return qdd - (2.0 * sqrt_kn * (-qd) + gains.null_stiffness * (q_ref - q));
}

ArmTask build_arm_task(const Eigen::Vector3d& q, const Eigen::Vector3d& qd, const TaskPose& ref,
                       const Eigen::Vector3d& q_ref, const ArmModel& model,
                       const ImpedanceGains& gains, double dt) {
  const ArmDynamics dyn = arm_dynamics(q, qd, model);

  TaskPose actual;
  actual.y = forward_kinematics(q, model);
  actual.yd = dyn.jacobian * qd;

  ArmTask task;
  ImpedanceAffine aff = impedance_affine(actual, ref, dyn, gains);
  task.near_singular = aff.near_singular;
  task.imp_mat = aff.mat;
  task.imp_rhs = aff.rhs - dyn.jacobian_dot * qd;
  const Eigen::Matrix3d sqrt_kn = sqrtm_spd(gains.null_stiffness);
  task.posture_rhs = 2.0 * sqrt_kn * (-qd) + gains.null_stiffness * (q_ref - q);

  // Acceleration box: torque limits via interval arithmetic over M's
  // off-diagonal terms, velocity limits over one step, and a second-order
  // stopping condition for position limits.
  for (int i = 0; i < 3; ++i) {
    double off = 0.0;
    for (int j = 0; j < 3; ++j)
      if (j != i) off += std::abs(dyn.mass(i, j)) * kAmbientQdd;
    double lo_t = (-model.tau_max[i] - dyn.bias[i] + off) / dyn.mass(i, i);
    double hi_t = (model.tau_max[i] - dyn.bias[i] - off) / dyn.mass(i, i);
    if (lo_t > hi_t) {  // conservative box collapsed; fall back to nominal
      lo_t = (-model.tau_max[i] - dyn.bias[i]) / dyn.mass(i, i);
      hi_t = (model.tau_max[i] - dyn.bias[i]) / dyn.mass(i, i);
      task.box_relaxed = true;
    }
    const double lo_v = (-model.qd_max[i] - qd[i]) / dt;
    const double hi_v = (model.qd_max[i] - qd[i]) / dt;
    const double hi_p = 2.0 * (model.q_max[i] - q[i] - qd[i] * dt) / (dt * dt);
    const double lo_p = 2.0 * (model.q_min[i] - q[i] - qd[i] * dt) / (dt * dt);
    task.qdd_lo[i] = std::max({lo_t, lo_v, lo_p, -kAmbientQdd});
    task.qdd_hi[i] = std::min({hi_t, hi_v, hi_p, kAmbientQdd});
    if (task.qdd_lo[i] > task.qdd_hi[i]) {
      // Infeasible joint box; pin to its midpoint and flag.
      const double mid = 0.5 * (task.qdd_lo[i] + task.qdd_hi[i]);
      task.qdd_lo[i] = task.qdd_hi[i] = mid;
      task.box_relaxed = true;
    }
  }
  return task;
}

QpSolution solve_arm_qp(const ArmTask& left, const ArmTask& right, const ImpedanceGains& gains) {
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(6, 6);
  qp.g = Eigen::VectorXd::Zero(6);
  const ArmTask* tasks[2] = {&left, &right};
  for (int a = 0; a < 2; ++a) {
    const ArmTask& t = *tasks[a];
    qp.H.block<3, 3>(3 * a, 3 * a) =
        2.0 * (gains.w_imp * t.imp_mat.transpose() * t.imp_mat +
               gains.w_pos * Eigen::Matrix3d::Identity());
    qp.g.segment<3>(3 * a) = -2.0 * (gains.w_imp * t.imp_mat.transpose() * t.imp_rhs +
                                     gains.w_pos * t.posture_rhs);
  }
  qp.C = Eigen::MatrixXd::Identity(6, 6);
  qp.lb.resize(6);
  qp.ub.resize(6);
  qp.lb << left.qdd_lo, right.qdd_lo;
  qp.ub << left.qdd_hi, right.qdd_hi;
  qp.z0 = Eigen::VectorXd::Zero(6);
  for (int i = 0; i < 6; ++i) qp.z0[i] = std::clamp(0.0, qp.lb[i], qp.ub[i]);

  const QpResult r = solve_qp_activeset(qp);

  QpSolution sol;
  sol.qdd = r.z;
  sol.kkt_residual = r.kkt_residual;
  sol.fallback = !r.optimal || left.box_relaxed || right.box_relaxed;
  if (!r.optimal) {
    // Unconstrained minimizer clipped to the box.
    const Eigen::VectorXd zu = qp.H.ldlt().solve(-qp.g);
    sol.qdd = zu.cwiseMax(qp.lb).cwiseMin(qp.ub);
  }
  for (int i = 0; i < 6; ++i)
    if (std::abs(r.lambda[i]) > 0.0) ++sol.active_set_size;
  double obj = 0.0;
  for (int a = 0; a < 2; ++a) {
    const ArmTask& t = *tasks[a];
    const Eigen::Vector3d qdd = sol.qdd.segment<3>(3 * a);
    obj += gains.w_imp * (t.imp_mat * qdd - t.imp_rhs).squaredNorm();
    obj += gains.w_pos * (qdd - t.posture_rhs).squaredNorm();
  }
  sol.objective = obj;
  return sol;
}

Eigen::Vector3d torques(const Eigen::Vector3d& qdd, const ArmDynamics& dyn) {
  return dyn.mass * qdd + dyn.bias;
}

DualArmActuator::DualArmActuator(ArmModel model, TrayGeometry geom, ImpedanceGains gains)
    : model_(std::move(model)), geom_(std::move(geom)), gains_(std::move(gains)) {
  const auto [lref, rref] = tray_to_ee_refs(TiltCommand{}, geom_, &model_, &model_);
  q_ref_ = inverse_kinematics(lref.y, model_);
  for (int a = 0; a < 2; ++a) {
    q_[a] = q_ref_;
    qd_[a].setZero();
    tau_[a].setZero();
  }
}

Eigen::Vector2d DualArmActuator::realized_tilt() const {
  const Eigen::Vector3d lhs = forward_kinematics(q_[0], model_);
  const Eigen::Vector3d rhs = forward_kinematics(q_[1], model_);
  const double s = std::clamp((lhs[1] - rhs[1]) / geom_.width, -1.0, 1.0);
  return {std::asin(s), 0.5 * (lhs[2] + rhs[2])};
}

Eigen::Vector2d DualArmActuator::realized_tilt_rate(double cos_alpha) const {
  const ArmDynamics dl = arm_dynamics(q_[0], qd_[0], model_);
  const ArmDynamics dr = arm_dynamics(q_[1], qd_[1], model_);
  const Eigen::Vector3d ydl = dl.jacobian * qd_[0];
  const Eigen::Vector3d ydr = dr.jacobian * qd_[1];
  const double alpha_dot = (ydl[1] - ydr[1]) / (geom_.width * std::max(cos_alpha, 1e-6));
  return {alpha_dot, 0.5 * (ydl[2] + ydr[2])};
}

void DualArmActuator::sync(TrayState& tray) const {
  tray.tilt = realized_tilt();
  tray.tilt_rate = Eigen::Vector2d::Zero();
  tray.com = geom_.com;
}

void DualArmActuator::step(TrayState& tray, const TiltCommand& u, double dt) {
  const auto [lref, rref] = tray_to_ee_refs(u, geom_, &model_, &model_);
  const TaskPose refs[2] = {lref, rref};

  ArmTask tasks[2];
  for (int a = 0; a < 2; ++a)
    tasks[a] = build_arm_task(q_[a], qd_[a], refs[a], q_ref_, model_, gains_, dt);
  last_qp_ = solve_arm_qp(tasks[0], tasks[1], gains_);

  for (int a = 0; a < 2; ++a) {
    const ArmDynamics dyn = arm_dynamics(q_[a], qd_[a], model_);
    tau_[a] = torques(last_qp_.qdd.segment<3>(3 * a), dyn);

    // Torque-driven rollout over dt (RK4, torque held).
    const auto accel = [&](const Eigen::Vector3d& q, const Eigen::Vector3d& qd)
        -> Eigen::Vector3d {
      const ArmDynamics d = arm_dynamics(q, qd, model_);
      return d.mass.llt().solve(tau_[a] - d.bias);
    };
    const Eigen::Vector3d q0 = q_[a], v0 = qd_[a];
    const Eigen::Vector3d k1q = v0, k1v = accel(q0, v0);
    const Eigen::Vector3d k2q = v0 + 0.5 * dt * k1v,
                          k2v = accel(q0 + 0.5 * dt * k1q, v0 + 0.5 * dt * k1v);
    const Eigen::Vector3d k3q = v0 + 0.5 * dt * k2v,
                          k3v = accel(q0 + 0.5 * dt * k2q, v0 + 0.5 * dt * k2v);
    const Eigen::Vector3d k4q = v0 + dt * k3v, k4v = accel(q0 + dt * k3q, v0 + dt * k3v);
    q_[a] = q0 + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
    qd_[a] = v0 + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  }

  const Eigen::Vector2d tilt = realized_tilt();
  tray.tilt = tilt;
  tray.tilt_rate = realized_tilt_rate(std::cos(tilt[0]));
}

double DualArmActuator::rigidity_error() const {
  const Eigen::Vector3d lhs = forward_kinematics(q_[0], model_);
  const Eigen::Vector3d rhs = forward_kinematics(q_[1], model_);
  return std::max(std::abs(lhs[0] - rhs[0]), 0.5 * geom_.width * std::abs(lhs[2] - rhs[2]));
}

}  // namespace trayctl
