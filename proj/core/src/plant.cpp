#include "trayctl/plant.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace trayctl {
namespace {

using Vec2 = Eigen::Vector2d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// Object orientation convention: R = Rz(yaw) * Ry(pitch) * Rx(roll), standard
// right-handed rotations. Orientation is carried for logging; it does not
// feed back into the contact dynamics (object yaw is not simulated).
Eigen::Matrix3d rpy_to_matrix(const Eigen::Vector3d& rpy) {
  return (Eigen::AngleAxisd(rpy[2], Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(rpy[1], Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(rpy[0], Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

Eigen::Vector3d matrix_to_rpy(const Eigen::Matrix3d& m) {
  Eigen::Vector3d rpy;
  rpy[0] = std::atan2(m(2, 1), m(2, 2));
  rpy[1] = -std::asin(std::clamp(m(2, 0), -1.0, 1.0));
  rpy[2] = std::atan2(m(1, 0), m(0, 0));
  return rpy;
}

double stribeck_mu(const ObjectConfig& cfg, double speed) {
  const double ratio = speed / cfg.v_s;
  return cfg.mu_c + (cfg.mu_s - cfg.mu_c) * std::exp(-ratio * ratio);
}

double normal_gravity(const Eigen::Vector3d& g_tray) { return -g_tray[2]; }

// Contact regimes frozen over one integration step.
struct Regime {
  bool stick_x{false};  // cube tangential / cylinder axis direction
  bool stick_y{false};
  bool roll{false};  // sphere both axes / cylinder rolling direction
  bool broke_stick{false};
  bool broke_roll{false};
};

bool slider_shape(const ObjectConfig& cfg) {
  return cfg.shape == Shape::Cube || !cfg.rolling;
}

double rolling_cone_demand(const ObjectConfig& cfg, double g_tan) {
  const double k = cfg.inertia_factor / (1.0 + cfg.inertia_factor);
  return k * std::abs(g_tan);
}

Eigen::Vector2d slip_velocity(const ObjectConfig& cfg, const Vec6& y) {
  const double r = cfg.half_extent;
  return {y[2] - r * y[5], y[3] + r * y[4]};
}

Regime infer_regime(const ObjectConfig& cfg, const Vec6& y, const Vec2& tilt) {
  const Eigen::Vector3d g = gravity_in_tray(tilt[0], tilt[1]);
  const double gn = normal_gravity(g);
  if (gn <= 0.0) throw NotInContactError("normal force <= 0 at tilt");
  Regime r;
  if (slider_shape(cfg)) {
    const double speed = y.segment<2>(2).norm();
    const bool cone = g.head<2>().norm() <= cfg.mu_s * gn;
    r.stick_x = r.stick_y = speed < kStickSpeed && cone;
    r.broke_stick = speed < kStickSpeed && !cone;
  } else if (cfg.shape == Shape::Sphere) {
    const double slip = slip_velocity(cfg, y).norm();
    const bool cone = rolling_cone_demand(cfg, g.head<2>().norm()) <= cfg.mu_s * gn;
    r.roll = slip < kStickSpeed && cone;
    r.broke_roll = slip < kStickSpeed && !cone;
  } else {  // rolling cylinder, axis along tray y
    const double slip_x = std::abs(y[2] - cfg.half_extent * y[5]);
    const bool cone_x = rolling_cone_demand(cfg, g[0]) <= cfg.mu_s * gn;
    r.roll = slip_x < kStickSpeed && cone_x;
    r.broke_roll = slip_x < kStickSpeed && !cone_x;
    const bool cone_y = std::abs(g[1]) <= cfg.mu_s * gn;
    r.stick_y = std::abs(y[3]) < kStickSpeed && cone_y;
    r.broke_stick = std::abs(y[3]) < kStickSpeed && !cone_y;
  }
  return r;
}

// Time derivative of [px, py, vx, vy, wx, wy] under a frozen regime.
Vec6 object_rhs(const ObjectConfig& cfg, const Vec6& y, const Vec2& tilt, const Regime& reg) {
  const Eigen::Vector3d g = gravity_in_tray(tilt[0], tilt[1]);
  const double gn = normal_gravity(g);
  if (gn <= 0.0) throw NotInContactError("normal force <= 0 at tilt");

  const Vec2 v = y.segment<2>(2);
  Vec6 dy = Vec6::Zero();
  dy.head<2>() = v;

  const double inv_m = 1.0 / cfg.mass;
  const double r = cfg.half_extent;

  if (slider_shape(cfg)) {
    // Stick decided per evaluation (not per step): the Stribeck magnitude at
    // zero speed equals mu_s, so the force law is continuous across the cone
    // boundary and RK4 stages see no jump at breakaway.
    const Vec2 g_tan = g.head<2>();
    const double speed = v.norm();
    if (speed < kStickSpeed && g_tan.norm() <= cfg.mu_s * gn) return Vec6::Zero();
    Vec2 dir = Vec2::Zero();
    if (speed > 1e-12)
      dir = v / speed;
    else if (g_tan.norm() > 1e-12)
      dir = g_tan.normalized();  // impending motion at breakaway
    dy.segment<2>(2) = g_tan - stribeck_mu(cfg, speed) * gn * dir - cfg.viscous * inv_m * v;
    return dy;
  }

  if (cfg.shape == Shape::Sphere) {
    if (reg.roll) {
      const Vec2 a = g.head<2>() / (1.0 + cfg.inertia_factor);
      dy.segment<2>(2) = a;
      dy[4] = -a[1] / r;
      dy[5] = a[0] / r;
      return dy;
    }
    const Vec2 slip = slip_velocity(cfg, y);
    const double slip_speed = slip.norm();
    Vec2 f_over_m = Vec2::Zero();  // friction at the contact point
    if (slip_speed > 1e-12) f_over_m = -stribeck_mu(cfg, slip_speed) * gn * (slip / slip_speed);
    dy.segment<2>(2) = g.head<2>() + f_over_m - cfg.viscous * inv_m * v;
    dy[4] = f_over_m[1] / (cfg.inertia_factor * r);
    dy[5] = -f_over_m[0] / (cfg.inertia_factor * r);
    return dy;
  }

  // Cylinder: rolling law perpendicular to its axis, sliding law along it.
  if (reg.roll) {
    const double ax = g[0] / (1.0 + cfg.inertia_factor);
    dy[2] = ax;
    dy[5] = ax / r;
  } else {
    const double slip_x = y[2] - r * y[5];
    double fx_over_m = 0.0;
    if (std::abs(slip_x) > 1e-12)
      fx_over_m = -stribeck_mu(cfg, std::abs(slip_x)) * gn * (slip_x > 0 ? 1.0 : -1.0);
    dy[2] = g[0] + fx_over_m - cfg.viscous * inv_m * y[2];
    dy[5] = -fx_over_m / (cfg.inertia_factor * r);
  }
  // Axis direction: per-evaluation stick, breakaway friction against the
  // driving component.
  if (std::abs(y[3]) < kStickSpeed && std::abs(g[1]) <= cfg.mu_s * gn) {
    dy[3] = 0.0;
  } else {
    double dir = 0.0;
    if (std::abs(y[3]) > 1e-12)
      dir = y[3] > 0 ? 1.0 : -1.0;
    else if (std::abs(g[1]) > 1e-12)
      dir = g[1] > 0 ? 1.0 : -1.0;
    dy[3] = g[1] - stribeck_mu(cfg, std::abs(y[3])) * gn * dir - cfg.viscous * inv_m * y[3];
  }
  return dy;
}

Vec6 rk4_step(const ObjectConfig& cfg, const Vec6& y, const Vec2& tilt0, const Vec2& tilt1,
              double dt, const Regime& reg) {
  const auto tilt_at = [&](double s) -> Vec2 { return tilt0 + s * (tilt1 - tilt0); };
  const Vec6 k1 = object_rhs(cfg, y, tilt_at(0.0), reg);
  const Vec6 k2 = object_rhs(cfg, y + 0.5 * dt * k1, tilt_at(0.5), reg);
  const Vec6 k3 = object_rhs(cfg, y + 0.5 * dt * k2, tilt_at(0.5), reg);
  const Vec6 k4 = object_rhs(cfg, y + dt * k3, tilt_at(1.0), reg);
  return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Zero-velocity / pure-rolling snap at the end of a step. Returns true if a
// transition to the sticking (or rolling) regime happened.
bool apply_snap(const ObjectConfig& cfg, Vec6& y, const Vec2& tilt, const Regime& start) {
  const Eigen::Vector3d g = gravity_in_tray(tilt[0], tilt[1]);
  const double gn = normal_gravity(g);
  const double r = cfg.half_extent;
  bool snapped = false;
  if (slider_shape(cfg)) {
    const bool cone = g.head<2>().norm() <= cfg.mu_s * gn;
    if (cone && y.segment<2>(2).norm() < kStickSpeed) {
      snapped = !start.stick_x;
      y[2] = y[3] = 0.0;
    }
  } else if (cfg.shape == Shape::Sphere) {
    const bool cone = rolling_cone_demand(cfg, g.head<2>().norm()) <= cfg.mu_s * gn;
    if (cone && slip_velocity(cfg, y).norm() < kStickSpeed) {
      snapped = !start.roll;
      y[4] = -y[3] / r;
      y[5] = y[2] / r;
    }
  } else {
    const bool cone_x = rolling_cone_demand(cfg, g[0]) <= cfg.mu_s * gn;
    if (cone_x && std::abs(y[2] - r * y[5]) < kStickSpeed) {
      snapped = !start.roll;
      y[5] = y[2] / r;
    }
    const bool cone_y = std::abs(g[1]) <= cfg.mu_s * gn;
    if (cone_y && std::abs(y[3]) < kStickSpeed) {
      snapped = snapped || !start.stick_y;
      y[3] = 0.0;
    }
  }
  return snapped;
}

}  // namespace

ObjectConfig ObjectConfig::make(Shape shape, double mass, double mu, double half_extent) {
  ObjectConfig cfg;
  cfg.shape = shape;
  cfg.mass = mass;
  cfg.half_extent = half_extent;
  cfg.mu_c = mu;
  cfg.mu_s = 1.2 * mu;
  cfg.v_s = 0.01;
  switch (shape) {
    case Shape::Sphere: cfg.inertia_factor = 2.0 / 5.0; break;
    case Shape::Cylinder: cfg.inertia_factor = 1.0 / 2.0; break;
    case Shape::Cube: cfg.inertia_factor = 0.0; cfg.rolling = false; break;
  }
  return cfg;
}

Eigen::Vector3d contact_accel(const ObjectState& state, const ObjectConfig& cfg,
                              const Eigen::Vector2d& tilt) {
  Vec6 y;
  y << state.p[0], state.p[1], state.v[0], state.v[1], state.w[0], state.w[1];
  const Regime reg = infer_regime(cfg, y, tilt);
  const Vec6 dy = object_rhs(cfg, y, tilt, reg);
  return {dy[2], dy[3], 0.0};
}

ObjectState transform_state(const ObjectState& state, Frame from, Frame to,
                            const TrayState& tray) {
  if (from == to) throw std::invalid_argument("transform_state: frames must be distinct");
  if (from == Frame::Object || to == Frame::Object)
    throw std::invalid_argument("transform_state: object frame has no external anchor");
  if (state.frame != from) throw std::invalid_argument("transform_state: state/frame mismatch");

  const Eigen::Matrix3d r = tilt_rotation(tray.tilt[0], tray.tilt[1]);
  ObjectState out = state;
  out.frame = to;
  if (from == Frame::World) {  // world -> tray
    out.p = r.transpose() * (state.p - tray.com);
    out.v = r.transpose() * state.v;
    out.w = r.transpose() * state.w;
    out.theta = matrix_to_rpy(r.transpose() * rpy_to_matrix(state.theta));
  } else {  // tray -> world
    out.p = r * state.p + tray.com;
    out.v = r * state.v;
    out.w = r * state.w;
    out.theta = matrix_to_rpy(r * rpy_to_matrix(state.theta));
  }
  return out;
}

void IdealServoActuator::step(TrayState& tray, const TiltCommand& u, double dt) {
  const Eigen::Vector2d cmd = u.vec();
  const double w = omega_;
  const double e = std::exp(-w * dt);
  for (int i = 0; i < 2; ++i) {
    const double x0 = tray.tilt[i] - cmd[i];
    const double v0 = tray.tilt_rate[i];
    tray.tilt[i] = cmd[i] + e * (x0 * (1.0 + w * dt) + v0 * dt);
    tray.tilt_rate[i] = e * (v0 * (1.0 - w * dt) - w * w * dt * x0);
  }
}

PlantEvent step_plant(ObjectState& obj, TrayState& tray, const ObjectConfig& cfg,
                      const TiltCommand& u, double dt, TiltActuator& actuator) {
  // Snapshot the object in tray coordinates before the tray moves; the
  // contact coordinates ride along with the tilting tray.
  const ObjectState in_tray = transform_state(obj, Frame::World, Frame::Tray, tray);
  Vec6 y;
  y << in_tray.p[0], in_tray.p[1], in_tray.v[0], in_tray.v[1], in_tray.w[0], in_tray.w[1];

  const Vec2 tilt0 = tray.tilt;
  actuator.step(tray, u, dt);
  const Vec2 tilt1 = tray.tilt;

  const Regime reg = infer_regime(cfg, y, tilt0);
  Vec6 y1 = rk4_step(cfg, y, tilt0, tilt1, dt, reg);
  // Two situations need substeps: a friction kink inside the step (velocity
  // sign reversal or stick/roll regime change), and the low-speed boundary
  // layer right after breakaway, where the friction direction rotates on a
  // timescale proportional to the speed itself.
  const Regime reg1 = infer_regime(cfg, y1, tilt1);
  const bool kink = y[2] * y1[2] < 0.0 || y[3] * y1[3] < 0.0 ||
                    reg.stick_x != reg1.stick_x || reg.stick_y != reg1.stick_y ||
                    reg.roll != reg1.roll;
  const double accel0 = object_rhs(cfg, y, tilt0, reg).segment<2>(2).norm();
  const bool slow_layer = accel0 > 0.0 && y.segment<2>(2).norm() < 8.0 * accel0 * dt;
  if (kink || slow_layer) {
    constexpr int kSub = 64;
    y1 = y;
    for (int i = 0; i < kSub; ++i) {
      const Vec2 ta = tilt0 + (static_cast<double>(i) / kSub) * (tilt1 - tilt0);
      const Vec2 tb = tilt0 + (static_cast<double>(i + 1) / kSub) * (tilt1 - tilt0);
      y1 = rk4_step(cfg, y1, ta, tb, dt / kSub, infer_regime(cfg, y1, ta));
    }
  }
  y = y1;
  if (!y.allFinite()) throw NonFiniteError("plant integration diverged");

  const bool snapped = apply_snap(cfg, y, tilt1, reg);

  ObjectState next = in_tray;
  next.p = {y[0], y[1], contact_height(cfg)};
  next.v = {y[2], y[3], 0.0};
  next.w[0] = y[4];
  next.w[1] = y[5];
  next.theta += dt * next.w;  // display-only spin integration
  obj = transform_state(next, Frame::Tray, Frame::World, tray);

  if (std::abs(y[0]) > kTrayHalfLenX || std::abs(y[1]) > kTrayHalfLenY)
    return {PlantEvent::Kind::FellOffTray};
  if (reg.broke_stick || reg.broke_roll) return {PlantEvent::Kind::StickingToSliding};
  if (snapped) return {PlantEvent::Kind::SlidingToSticking};
  return {PlantEvent::Kind::InContact};
}

std::vector<ObjectConfig> standard_object_grid() {
  std::vector<ObjectConfig> grid;
  grid.reserve(18);
  for (Shape shape : {Shape::Cube, Shape::Cylinder, Shape::Sphere})
    for (double mass : {1.0, 2.0})
      for (double mu : {0.05, 0.10, 0.20}) grid.push_back(ObjectConfig::make(shape, mass, mu));
  return grid;
}

ObjectState place_on_tray(const ObjectConfig& cfg, const TrayState& tray,
                          const Eigen::Vector2d& xy) {
  ObjectState s;
  s.frame = Frame::Tray;
  s.p = {xy[0], xy[1], contact_height(cfg)};
  if (cfg.rolling && cfg.shape != Shape::Cube) {
    // start in pure rolling (at rest both regimes coincide)
    s.w.setZero();
  }
  return transform_state(s, Frame::Tray, Frame::World, tray);
}

}  // namespace trayctl
