// Ground-truth simulation of a rigid object on a tilting tray.
//
// The object moves in the tray's tangent plane under tilt-rotated gravity and
// a Stribeck friction law; spheres and cylinders additionally carry rolling
// regimes with shape-specific closed forms. Tilt actuation is pluggable: an
// ideal critically damped servo or the dual-arm torque controller.

#pragma once

#include <Eigen/Core>
#include <vector>

#include "trayctl/errors.hpp"
#include "trayctl/tilt.hpp"

namespace trayctl {

enum class Frame { World, Tray, Object };
enum class Shape { Cube, Cylinder, Sphere };

// Tray footprint, meters (0.40 m x 0.30 m slab centered on the tray origin).
inline constexpr double kTrayHalfLenX = 0.20;
inline constexpr double kTrayHalfLenY = 0.15;

// Stick/slide switching threshold and hysteresis. An object snaps to rest
// when its (slip) speed falls below kStickSpeed while the static cone holds;
// it leaves the sticking regime only when the cone is violated. The factor-2
// band keeps a decelerating slider from chattering across the threshold.
inline constexpr double kStickSpeed = 1e-4;       // m/s
inline constexpr double kStickHysteresis = 2.0;

struct ObjectState {
  Eigen::Vector3d p{Eigen::Vector3d::Zero()};      // position, m
  Eigen::Vector3d theta{Eigen::Vector3d::Zero()};  // orientation RPY, rad
  Eigen::Vector3d v{Eigen::Vector3d::Zero()};      // linear velocity, m/s
  Eigen::Vector3d w{Eigen::Vector3d::Zero()};      // angular velocity, rad/s
  Frame frame{Frame::World};
};

struct ObjectConfig {
  Shape shape{Shape::Cube};
  double mass{1.0};          // kg
  double half_extent{0.03};  // cube half-side / cylinder radius / sphere radius, m
  double mu_s{0.12};         // static friction coefficient
  double mu_c{0.10};         // Coulomb friction coefficient
  double v_s{0.01};          // Stribeck velocity, m/s
  double viscous{0.0};       // N s/m
  double inertia_factor{0.0};  // I/(m r^2): 2/5 sphere, 1/2 cylinder
  bool rolling{true};          // false: treat sphere/cylinder as sliders

  // Applies the mu split policy: mu_c = mu, mu_s = 1.2 mu, v_s = 0.01 m/s.
  static ObjectConfig make(Shape shape, double mass, double mu, double half_extent = 0.03);
};

struct TrayState {
  Eigen::Vector2d tilt{Eigen::Vector2d::Zero()};       // realized (alpha, beta), rad
  Eigen::Vector2d tilt_rate{Eigen::Vector2d::Zero()};  // rad/s
  Eigen::Vector3d com{Eigen::Vector3d::Zero()};        // fixed world tray center, m
};

struct PlantEvent {
  enum class Kind { InContact, SlidingToSticking, StickingToSliding, FellOffTray };
  Kind kind{Kind::InContact};

  bool terminal() const { return kind == Kind::FellOffTray; }
};

// Height of the object's center above the tray plane while in contact.
inline double contact_height(const ObjectConfig& cfg) { return cfg.half_extent; }

// Tangent-plane acceleration of an object in contact, tray frame. The state
// must be expressed in the tray frame. Entry 2 of the result is always 0.
// Throws NotInContactError when the normal force is not positive.
Eigen::Vector3d contact_accel(const ObjectState& state, const ObjectConfig& cfg,
                              const Eigen::Vector2d& tilt);

// Maps an object state between the world and tray frames using the tray's
// rigid transform (static map: twists rotate, no rotating-frame correction).
// The Object frame is not a valid argument here; its transforms live in the
// dynamics code where an anchor pose is available.
ObjectState transform_state(const ObjectState& state, Frame from, Frame to,
                            const TrayState& tray);

// Tilt actuation tier.
class TiltActuator {
 public:
  virtual ~TiltActuator() = default;
  // Advances the realized tray tilt toward the command over dt.
  virtual void step(TrayState& tray, const TiltCommand& u, double dt) = 0;
};

// Tier A: critically damped second-order tracking of the command, advanced by
// its exact discrete solution.
class IdealServoActuator final : public TiltActuator {
 public:
  explicit IdealServoActuator(double omega = 25.0) : omega_(omega) {}
  void step(TrayState& tray, const TiltCommand& u, double dt) override;
  double omega() const { return omega_; }

 private:
  double omega_;
};

// Advances tray + object by one step of length dt. The object state must be
// in the world frame and is returned in the world frame. Throws
// NonFiniteError if integration diverges and propagates NotInContactError.
PlantEvent step_plant(ObjectState& obj, TrayState& tray, const ObjectConfig& cfg,
                      const TiltCommand& u, double dt, TiltActuator& actuator);

// Places the object at rest at a tray-frame position (default: tray center).
ObjectState place_on_tray(const ObjectConfig& cfg, const TrayState& tray,
                          const Eigen::Vector2d& xy = Eigen::Vector2d::Zero());

// The 18 benchmark object configurations: {cube, cylinder, sphere} x
// {1, 2} kg x mu in {0.05, 0.10, 0.20}, shape-major order.
std::vector<ObjectConfig> standard_object_grid();

}  // namespace trayctl
