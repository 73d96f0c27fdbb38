#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "trayctl/plant.hpp"
#include "trayctl/rng.hpp"

using namespace trayctl;

namespace {

constexpr double kG = 9.81;

// Closed-form critically damped servo step response.
double servo_step(double cmd, double omega, double t) {
  return cmd * (1.0 - (1.0 + omega * t) * std::exp(-omega * t));
}

TrayState flat_tray() {
  TrayState tray;
  tray.com = {0.0, 0.0, 0.5};
  return tray;
}

ObjectState state_on_tray(const ObjectConfig& cfg, const TrayState& tray,
                          const Eigen::Vector2d& xy, const Eigen::Vector2d& v) {
  ObjectState s;
  s.frame = Frame::Tray;
  s.p = {xy[0], xy[1], contact_height(cfg)};
  s.v = {v[0], v[1], 0.0};
  return transform_state(s, Frame::Tray, Frame::World, tray);
}

double total_energy(const ObjectState& world, const ObjectConfig& cfg) {
  const double ke_lin = 0.5 * cfg.mass * world.v.squaredNorm();
  const double inertia = cfg.inertia_factor * cfg.mass * cfg.half_extent * cfg.half_extent;
  const double ke_rot = 0.5 * inertia * world.w.head<2>().squaredNorm();
  return ke_lin + ke_rot + cfg.mass * kG * world.p[2];
}

}  // namespace

TEST_CASE("gravity_in_tray matches the rotation convention") {
  const Eigen::Vector3d flat = gravity_in_tray(0.0, 0.0);
  CHECK(flat[0] == doctest::Approx(0.0));
  CHECK(flat[1] == doctest::Approx(0.0));
  CHECK(flat[2] == doctest::Approx(-kG));

  const Eigen::Vector3d pitched = gravity_in_tray(0.0, 0.6);
  CHECK(pitched[0] == doctest::Approx(-kG * std::sin(0.6)).epsilon(1e-12));
  CHECK(pitched[1] == doctest::Approx(0.0));
  CHECK(pitched[2] == doctest::Approx(-kG * std::cos(0.6)).epsilon(1e-12));

  const Eigen::Vector3d pos = gravity_in_tray(0.3, 0.0);
  const Eigen::Vector3d neg = gravity_in_tray(-0.3, 0.0);
  CHECK(pos[1] == doctest::Approx(-neg[1]).epsilon(1e-12));
  CHECK(pos[2] == doctest::Approx(neg[2]).epsilon(1e-12));

  // g_t equals R' (0,0,-g) for the published rotation.
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const double a = rng.uniform(-0.6, 0.6), b = rng.uniform(-0.6, 0.6);
    const Eigen::Vector3d expected =
        tilt_rotation(a, b).transpose() * Eigen::Vector3d(0.0, 0.0, -kG);
    CHECK((gravity_in_tray(a, b) - expected).norm() < 1e-12);
    CHECK(gravity_in_tray(a, b)[2] < 0.0);
  }
}

TEST_CASE("contact_accel static cone holds the cube") {
  const ObjectConfig cube = ObjectConfig::make(Shape::Cube, 1.0, 0.1);
  ObjectState s;
  s.frame = Frame::Tray;
  s.p = {0.0, 0.0, contact_height(cube)};
  // tan(beta) = 0.1 < mu_s = 0.12
  const Eigen::Vector3d a = contact_accel(s, cube, {0.0, std::atan(0.1)});
  CHECK(a.norm() == doctest::Approx(0.0));
}

TEST_CASE("contact_accel sphere rolls at 5/7 g sin(beta)") {
  const ObjectConfig sphere = ObjectConfig::make(Shape::Sphere, 1.0, 0.1);
  ObjectState s;
  s.frame = Frame::Tray;
  s.p = {0.0, 0.0, contact_height(sphere)};
  const double beta = 0.15;
  const Eigen::Vector3d a = contact_accel(s, sphere, {0.0, beta});
  CHECK(a[0] == doctest::Approx(-(5.0 / 7.0) * kG * std::sin(beta)).epsilon(1e-9));
  CHECK(a[1] == doctest::Approx(0.0));
}

TEST_CASE("contact_accel cube sliding matches the Coulomb block") {
  ObjectConfig cube = ObjectConfig::make(Shape::Cube, 1.0, 0.1);
  cube.viscous = 0.0;
  const double beta = 0.3;  // tan > mu_s, sliding regime
  ObjectState s;
  s.frame = Frame::Tray;
  s.p = {0.0, 0.0, contact_height(cube)};
  s.v = {-0.5, 0.0, 0.0};  // downhill at ||v|| >> v_s
  const Eigen::Vector3d a = contact_accel(s, cube, {0.0, beta});
  const double expected = kG * (std::sin(beta) - cube.mu_c * std::cos(beta));
  CHECK(std::abs(a[0]) == doctest::Approx(expected).epsilon(1e-6));
  CHECK(a[0] < 0.0);  // acceleration continues downhill
}

TEST_CASE("contact_accel reports loss of contact") {
  const ObjectConfig cube = ObjectConfig::make(Shape::Cube, 1.0, 0.1);
  ObjectState s;
  s.frame = Frame::Tray;
  s.p = {0.0, 0.0, contact_height(cube)};
  CHECK_THROWS_AS(contact_accel(s, cube, {0.0, 1.6}), NotInContactError);
}

TEST_CASE("transform_state identity at zero tilt and round trips") {
  TrayState tray;  // com at origin, zero tilt
  ObjectState s;
  s.frame = Frame::World;
  s.p = {0.1, -0.2, 0.3};
  s.v = {1.0, 2.0, 3.0};
  const ObjectState t = transform_state(s, Frame::World, Frame::Tray, tray);
  CHECK((t.p - s.p).norm() < 1e-15);
  CHECK((t.v - s.v).norm() < 1e-15);

  TrayState lifted;
  lifted.com = {0.0, 0.0, 0.5};
  lifted.tilt = {0.2, -0.3};
  ObjectState origin;
  origin.frame = Frame::World;
  const ObjectState in_tray = transform_state(origin, Frame::World, Frame::Tray, lifted);
  const Eigen::Vector3d expected =
      tilt_rotation(lifted.tilt[0], lifted.tilt[1]).transpose() * (-lifted.com);
  CHECK((in_tray.p - expected).norm() < 1e-12);

  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    TrayState rt;
    rt.com = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1)};
    rt.tilt = {rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)};
    ObjectState x;
    x.frame = Frame::World;
    x.p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    x.theta = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    x.v = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    x.w = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const ObjectState back = transform_state(
        transform_state(x, Frame::World, Frame::Tray, rt), Frame::Tray, Frame::World, rt);
    CHECK((back.p - x.p).norm() < 1e-12);
    CHECK((back.v - x.v).norm() < 1e-12);
    CHECK((back.w - x.w).norm() < 1e-12);
    CHECK((back.theta - x.theta).norm() < 1e-9);
  }

  CHECK_THROWS_AS(transform_state(s, Frame::World, Frame::World, tray), std::invalid_argument);
}

TEST_CASE("ideal servo follows its closed-form step response") {
  IdealServoActuator servo(25.0);
  TrayState tray = flat_tray();
  const TiltCommand cmd{0.0, 0.3};
  const double dt = 0.002;
  for (int k = 1; k <= 500; ++k) {
    servo.step(tray, cmd, dt);
    const double expected = servo_step(0.3, 25.0, k * dt);
    CHECK(tray.tilt[1] == doctest::Approx(expected).epsilon(1e-9));
  }
  CHECK(std::abs(tray.tilt[1] - 0.3) < 1e-3);  // settled within ~0.2 s
}

TEST_CASE("step_plant equilibrium is a fixed point") {
  const ObjectConfig cube = ObjectConfig::make(Shape::Cube, 1.0, 0.1);
  TrayState tray = flat_tray();
  ObjectState obj = place_on_tray(cube, tray);
  const ObjectState before = obj;
  IdealServoActuator servo;
  const PlantEvent ev = step_plant(obj, tray, cube, TiltCommand{}, 0.002, servo);
  CHECK(ev.kind == PlantEvent::Kind::InContact);
  CHECK((obj.p - before.p).norm() < 1e-15);
  CHECK(obj.v.norm() < 1e-15);
}

TEST_CASE("step_plant sphere displacement matches the quadrature oracle") {
  const ObjectConfig sphere = ObjectConfig::make(Shape::Sphere, 1.0, 0.1);
  TrayState tray = flat_tray();
  ObjectState obj = place_on_tray(sphere, tray);
  IdealServoActuator servo(25.0);
  const TiltCommand cmd{0.0, 0.02};
  const double dt = 0.002;
  for (int k = 0; k < 500; ++k) {
    const PlantEvent ev = step_plant(obj, tray, sphere, cmd, dt, servo);
    REQUIRE(ev.kind != PlantEvent::Kind::FellOffTray);
  }

  // Double integral of (5/7) g sin(beta_servo(t)) on a fine grid.
  const double h = 1e-5;
  double v = 0.0, x = 0.0;
  for (double t = 0.0; t < 1.0 - 0.5 * h; t += h) {
    const auto accel = [&](double tt) {
      return -(5.0 / 7.0) * kG * std::sin(servo_step(0.02, 25.0, tt));
    };
    const double a_mid = accel(t + 0.5 * h);
    x += v * h + 0.5 * a_mid * h * h;
    v += a_mid * h;
  }

  const ObjectState in_tray = transform_state(obj, Frame::World, Frame::Tray, tray);
  CHECK(in_tray.p[0] == doctest::Approx(x).epsilon(0.005));
}

TEST_CASE("step_plant raises FellOffTray at the footprint edge") {
  const ObjectConfig cube = ObjectConfig::make(Shape::Cube, 1.0, 0.05);
  TrayState tray = flat_tray();
  ObjectState obj = place_on_tray(cube, tray);
  IdealServoActuator servo;
  const TiltCommand cmd{0.0, -0.5};  // hard pitch, object slides toward +x
  const double dt = 0.002;

  // Brute-force small-step reference for the crossing time.
  double ref_cross = -1.0;
  {
    const double h = 2e-5;
    double x = 0.0, v = 0.0;
    TrayState rtray = flat_tray();
    IdealServoActuator rservo;
    double beta = 0.0;
    int fine_per_coarse = static_cast<int>(std::lround(dt / h));
    for (int k = 0; k < 2000 && ref_cross < 0.0; ++k) {
      // servo advanced exactly once per coarse step, matching the plant
      rservo.step(rtray, cmd, dt);
      const double beta0 = beta;
      const double beta1 = rtray.tilt[1];
      for (int j = 0; j < fine_per_coarse; ++j) {
        const double frac = (j + 0.5) / fine_per_coarse;
        const double bt = beta0 + frac * (beta1 - beta0);
        ObjectState s;
        s.frame = Frame::Tray;
        s.p = {x, 0.0, contact_height(cube)};
        s.v = {v, 0.0, 0.0};
        const Eigen::Vector3d a = contact_accel(s, cube, {0.0, bt});
        x += v * h;
        v += a[0] * h;
        if (x > kTrayHalfLenX) {
          ref_cross = k * dt + (j + 1) * h;
          break;
        }
      }
      beta = beta1;
    }
    REQUIRE(ref_cross > 0.0);
  }

  double cross = -1.0;
  for (int k = 0; k < 2000; ++k) {
    const PlantEvent ev = step_plant(obj, tray, cube, cmd, dt, servo);
    if (ev.kind == PlantEvent::Kind::FellOffTray) {
      cross = (k + 1) * dt;
      break;
    }
  }
  REQUIRE(cross > 0.0);
  CHECK(std::abs(cross - ref_cross) <= 2 * dt);
}

TEST_CASE("RK4 matches a small-step Euler reference per shape") {
  // Oscillating commands keep the object on the tray while crossing the
  // stick/slide boundary in both directions; the frequencies bound the
  // rolling shapes' secular drift below the footprint.
  const auto command = [](double t) {
    return TiltCommand{0.10 * std::sin(2.0 * 3.14159265358979 * 2.5 * t),
                       0.35 * std::sin(2.0 * 3.14159265358979 * 4.0 * t)};
  };
  for (const Shape shape : {Shape::Cube, Shape::Cylinder, Shape::Sphere}) {
    const ObjectConfig cfg = ObjectConfig::make(shape, 1.0, 0.1);
    const double dt = 0.002;

    TrayState tray = flat_tray();
    ObjectState obj = place_on_tray(cfg, tray);
    IdealServoActuator servo(25.0);
    for (int k = 0; k < 1000; ++k) {
      if (step_plant(obj, tray, cfg, command(k * dt), dt, servo).terminal()) FAIL("left tray");
    }
    const ObjectState coarse = transform_state(obj, Frame::World, Frame::Tray, tray);

    // Euler at dt = 2e-5 over the same tilt profile, with the same
    // zero-velocity snap rule the plant applies.
    const double h = 2e-5;
    TrayState etray = flat_tray();
    IdealServoActuator eservo(25.0);
    Eigen::Vector2d p = Eigen::Vector2d::Zero(), v = Eigen::Vector2d::Zero();
    Eigen::Vector2d w = Eigen::Vector2d::Zero();
    const int fine = static_cast<int>(std::lround(dt / h));
    for (int k = 0; k < 1000; ++k) {
      const Eigen::Vector2d tilt0 = etray.tilt;
      eservo.step(etray, command(k * dt), dt);
      const Eigen::Vector2d tilt1 = etray.tilt;
      for (int j = 0; j < fine; ++j) {
        const Eigen::Vector2d tilt = tilt0 + ((j + 0.5) / fine) * (tilt1 - tilt0);
        ObjectState s;
        s.frame = Frame::Tray;
        s.p = {p[0], p[1], contact_height(cfg)};
        s.v = {v[0], v[1], 0.0};
        s.w = {w[0], w[1], 0.0};
        const Eigen::Vector3d a = contact_accel(s, cfg, tilt);
        p += v * h;
        v += a.head<2>() * h;
        if (shape == Shape::Cube && a.head<2>().norm() == 0.0 && v.norm() < kStickSpeed)
          v.setZero();
        if (shape == Shape::Cylinder && a[1] == 0.0 && std::abs(v[1]) < kStickSpeed) v[1] = 0.0;
        if (cfg.rolling && shape == Shape::Sphere) {
          w[0] = -v[1] / cfg.half_extent;
          w[1] = v[0] / cfg.half_extent;
        } else if (cfg.rolling && shape == Shape::Cylinder) {
          w[1] = v[0] / cfg.half_extent;
        }
      }
    }
    CHECK((coarse.p.head<2>() - p).norm() < 1e-4);
  }
}

TEST_CASE("friction only removes energy with the tilt frozen") {
  for (const Shape shape : {Shape::Cube, Shape::Sphere}) {
    const ObjectConfig cfg = ObjectConfig::make(shape, 1.0, 0.1);
    TrayState tray = flat_tray();
    tray.tilt = {0.0, 0.25};  // steady tilt, rate zero
    ObjectState obj = place_on_tray(cfg, tray, {-0.15, 0.0});
    IdealServoActuator servo;
    const TiltCommand hold{0.0, 0.25};
    double prev = total_energy(obj, cfg);
    for (int k = 0; k < 400; ++k) {
      if (step_plant(obj, tray, cfg, hold, 0.002, servo).terminal()) break;
      const double e = total_energy(obj, cfg);
      CHECK(e <= prev + 1e-9);
      prev = e;
    }
  }
}

TEST_CASE("a sticking cube stays stuck for smaller same-sign tilts") {
  const ObjectConfig cube = ObjectConfig::make(Shape::Cube, 1.0, 0.1);
  const double amax = 0.05, bmax = 0.08;  // inside the static cone jointly
  ObjectState probe;
  probe.frame = Frame::Tray;
  probe.p = {0.0, 0.0, contact_height(cube)};
  REQUIRE(contact_accel(probe, cube, {amax, bmax}).norm() == doctest::Approx(0.0));
  for (double sa = 0.0; sa <= 1.0; sa += 0.25) {
    for (double sb = 0.0; sb <= 1.0; sb += 0.25) {
      const Eigen::Vector3d a = contact_accel(probe, cube, {sa * amax, sb * bmax});
      CHECK(a.norm() == doctest::Approx(0.0));
    }
  }
}

TEST_CASE("identical inputs give bit-identical trajectories") {
  const ObjectConfig cfg = ObjectConfig::make(Shape::Cylinder, 2.0, 0.05);
  const TiltCommand cmd{0.04, -0.07};
  auto run = [&]() {
    TrayState tray = flat_tray();
    ObjectState obj = place_on_tray(cfg, tray);
    IdealServoActuator servo;
    for (int k = 0; k < 500; ++k) step_plant(obj, tray, cfg, cmd, 0.002, servo);
    return obj;
  };
  const ObjectState a = run();
  const ObjectState b = run();
  CHECK(std::memcmp(a.p.data(), b.p.data(), sizeof(double) * 3) == 0);
  CHECK(std::memcmp(a.v.data(), b.v.data(), sizeof(double) * 3) == 0);
  CHECK(std::memcmp(a.w.data(), b.w.data(), sizeof(double) * 3) == 0);
}

TEST_CASE("trajectories are equivariant to tray translation") {
  const ObjectConfig cfg = ObjectConfig::make(Shape::Cube, 1.0, 0.1);
  const TiltCommand cmd{0.05, -0.2};
  const Eigen::Vector3d shift(0.7, -0.4, 0.2);

  TrayState tray_a = flat_tray();
  ObjectState obj_a = place_on_tray(cfg, tray_a);
  TrayState tray_b = tray_a;
  tray_b.com += shift;
  ObjectState obj_b = obj_a;
  obj_b.p += shift;

  IdealServoActuator servo_a, servo_b;
  for (int k = 0; k < 300; ++k) {
    step_plant(obj_a, tray_a, cfg, cmd, 0.002, servo_a);
    step_plant(obj_b, tray_b, cfg, cmd, 0.002, servo_b);
    CHECK((obj_b.p - obj_a.p - shift).norm() < 1e-9);
    CHECK((obj_b.v - obj_a.v).norm() < 1e-9);
  }
}
