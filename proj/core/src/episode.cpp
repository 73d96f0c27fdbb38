#include "trayctl/episode.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "trayctl/measure.hpp"

namespace trayctl {
namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* event_name(PlantEvent::Kind kind) {
  switch (kind) {
    case PlantEvent::Kind::InContact: return "in_contact";
    case PlantEvent::Kind::SlidingToSticking: return "to_stick";
    case PlantEvent::Kind::StickingToSliding: return "to_slide";
    case PlantEvent::Kind::FellOffTray: return "fell_off";
  }
  return "in_contact";
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

const char* to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::Pmpc: return "pmpc";
    case ControllerKind::Rmpc: return "rmpc";
    case ControllerKind::Lmpc: return "lmpc";
  }
  return "pmpc";
}

const char* to_string(ActuationTier tier) {
  return tier == ActuationTier::DualArm ? "dualarm" : "ideal";
}

const char* to_string(Shape shape) {
  switch (shape) {
    case Shape::Cube: return "cube";
    case Shape::Cylinder: return "cylinder";
    case Shape::Sphere: return "sphere";
  }
  return "cube";
}

ControllerKind controller_from_string(const std::string& name) {
  if (name == "pmpc") return ControllerKind::Pmpc;
  if (name == "rmpc") return ControllerKind::Rmpc;
  if (name == "lmpc") return ControllerKind::Lmpc;
  throw std::runtime_error("unknown controller: " + name);
}

ActuationTier tier_from_string(const std::string& name) {
  if (name == "ideal" || name == "ideal_servo") return ActuationTier::IdealServo;
  if (name == "dualarm" || name == "dual_arm") return ActuationTier::DualArm;
  throw std::runtime_error("unknown tier: " + name);
}

Shape shape_from_string(const std::string& name) {
  if (name == "cube") return Shape::Cube;
  if (name == "cylinder") return Shape::Cylinder;
  if (name == "sphere") return Shape::Sphere;
  throw std::runtime_error("unknown shape: " + name);
}

NominalParams matched_params(const ObjectConfig& object, double servo_omega) {
  NominalParams p;
  p.mass_hat = object.mass;
  p.mu_hat = object.mu_c;
  p.v_s_hat = object.v_s;
  p.viscous_hat = object.viscous;
  p.servo_omega = servo_omega;
  p.epsilon = 0.01;
  return p;
}

void TrajectoryLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open trajectory file: " + path);
  out << "# goal_x=" << fmt_double(goal_x) << " goal_y=" << fmt_double(goal_y)
      << " duration=" << fmt_double(duration) << " sample_rate=" << fmt_double(sample_rate)
      << " controller=" << controller << " tier=" << tier << "\n";
  out << "t,px,py,vx,vy,alpha,beta,u_alpha,u_beta,event,cost,kkt";
  for (const auto& c : extra_columns) out << "," << c;
  out << "\n";
  for (const auto& r : rows) {
    out << fmt_double(r.t) << "," << fmt_double(r.px) << "," << fmt_double(r.py) << ","
        << fmt_double(r.vx) << "," << fmt_double(r.vy) << "," << fmt_double(r.alpha) << ","
        << fmt_double(r.beta) << "," << fmt_double(r.u_alpha) << "," << fmt_double(r.u_beta)
        << "," << r.event << "," << fmt_double(r.cost) << "," << fmt_double(r.kkt);
    for (double e : r.extras) out << "," << fmt_double(e);
    out << "\n";
  }
}

TrajectoryLog TrajectoryLog::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  TrajectoryLog log;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0)
    throw std::runtime_error("trajectory file missing metadata line: " + path);
  for (const auto& tok : split(line.substr(2), ' ')) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "goal_x") log.goal_x = std::stod(val);
    else if (key == "goal_y") log.goal_y = std::stod(val);
    else if (key == "duration") log.duration = std::stod(val);
    else if (key == "sample_rate") log.sample_rate = std::stod(val);
    else if (key == "controller") log.controller = val;
    else if (key == "tier") log.tier = val;
  }
  if (!std::getline(in, line)) throw std::runtime_error("trajectory file missing header");
  const auto header = split(line, ',');
  for (size_t i = 12; i < header.size(); ++i) log.extra_columns.push_back(header[i]);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() < 12) throw std::runtime_error("short trajectory row");
    TrajectoryRow r;
    r.t = std::stod(f[0]);
    r.px = std::stod(f[1]);
    r.py = std::stod(f[2]);
    r.vx = std::stod(f[3]);
    r.vy = std::stod(f[4]);
    r.alpha = std::stod(f[5]);
    r.beta = std::stod(f[6]);
    r.u_alpha = std::stod(f[7]);
    r.u_beta = std::stod(f[8]);
    r.event = f[9];
    r.cost = std::stod(f[10]);
    r.kkt = std::stod(f[11]);
    for (size_t i = 12; i < f.size(); ++i) r.extras.push_back(std::stod(f[i]));
    log.rows.push_back(std::move(r));
  }
  return log;
}

void ArmLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open arm log file: " + path);
  out << "t";
  const char* names[3] = {"tau", "q", "qd"};
  for (const char* n : names)
    for (const char* side : {"L", "R"})
      for (int j = 1; j <= 3; ++j) out << "," << n << side << j;
  out << "\n";
  for (size_t i = 0; i < t.size(); ++i) {
    out << fmt_double(t[i]);
    for (const auto* series : {&tau, &q, &qd})
      for (int j = 0; j < 6; ++j) out << "," << fmt_double((*series)[i][j]);
    out << "\n";
  }
}

ArmLog ArmLog::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open arm log file: " + path);
  ArmLog log;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 19) throw std::runtime_error("short arm log row");
    log.t.push_back(std::stod(f[0]));
    Vec6d tau, q, qd;
    for (int j = 0; j < 6; ++j) {
      tau[j] = std::stod(f[1 + j]);
      q[j] = std::stod(f[7 + j]);
      qd[j] = std::stod(f[13 + j]);
    }
    log.tau.push_back(tau);
    log.q.push_back(q);
    log.qd.push_back(qd);
  }
  return log;
}

MetricsRecord metrics_from_logs(const TrajectoryLog& log, const ArmLog* arm_log, double w_energy,
                                double w_rate) {
  MetricsRecord m;
  std::vector<double> err;
  err.reserve(log.rows.size());
  double cost_sum = 0.0, kkt_sum = 0.0;
  for (const auto& r : log.rows) {
    const double ex = log.goal_x - r.px;
    const double ey = log.goal_y - r.py;
    err.push_back(std::hypot(ex, ey));
    cost_sum += r.cost;
    kkt_sum += r.kkt;
    if (r.event == "fell_off") m.fell_off = true;
  }
  m.steady_state_error = steady_state_error(err);
  m.steady_state_error_sq = steady_state_error_sq(err);
  m.settling_time = settling_time(err, m.steady_state_error, log.sample_rate);
  if (!log.rows.empty()) {
    m.mean_cost = cost_sum / static_cast<double>(log.rows.size());
    m.mean_kkt = kkt_sum / static_cast<double>(log.rows.size());
  }

  const double dt = 1.0 / log.sample_rate;
  int tau_col = -1, iters_col = -1;
  for (size_t i = 0; i < log.extra_columns.size(); ++i) {
    if (log.extra_columns[i] == "tau_a") tau_col = static_cast<int>(i);
    if (log.extra_columns[i] == "iters") iters_col = static_cast<int>(i);
  }
  if (iters_col >= 0 && !log.rows.empty()) {
    double sum = 0.0;
    for (const auto& r : log.rows) sum += r.extras[iters_col];
    m.mean_iterations = sum / static_cast<double>(log.rows.size());
  }
  std::vector<Eigen::VectorXd> taus;
  if (arm_log && !arm_log->tau.empty()) {
    taus.reserve(arm_log->tau.size());
    for (const auto& tau : arm_log->tau) taus.push_back(tau);
  } else if (tau_col >= 0) {
    taus.reserve(log.rows.size());
    for (const auto& r : log.rows) {
      Eigen::VectorXd tau(2);
      tau << r.extras[tau_col], r.extras[tau_col + 1];
      taus.push_back(tau);
    }
  }
  m.control_effort = control_effort(taus, w_energy, w_rate, dt);
  return m;
}

EpisodeResult run_episode(const EpisodeSpec& spec) {
  const double dt = 1.0 / spec.sample_rate;
  const int steps = static_cast<int>(std::lround(spec.duration * spec.sample_rate));

  EpisodeResult result;
  TrajectoryLog& log = result.log;
  log.duration = spec.duration;
  log.sample_rate = spec.sample_rate;
  log.controller = to_string(spec.controller);
  log.tier = to_string(spec.tier);

  TrayState tray;
  tray.com = spec.tray_geom.com;
  ObjectState obj = place_on_tray(spec.object, tray);

  // Goal in world coordinates (tray center is fixed; the target is a tray
  // surface point expressed at zero tilt).
  log.goal_x = tray.com[0] + spec.goal[0];
  log.goal_y = tray.com[1] + spec.goal[1];

  std::unique_ptr<IdealServoActuator> servo;
  std::unique_ptr<DualArmActuator> arms;
  TiltActuator* actuator = nullptr;
  log.extra_columns = {"iters"};
  if (spec.tier == ActuationTier::IdealServo) {
    servo = std::make_unique<IdealServoActuator>(spec.servo_omega);
    actuator = servo.get();
    log.extra_columns.push_back("tau_a");
    log.extra_columns.push_back("tau_b");
  } else {
    ArmModel arm = spec.arm;
    arm.wrist_point_mass = 0.5 + 0.5 * spec.object.mass;  // tray half + object half
    TrayGeometry geom = spec.tray_geom;
    arms = std::make_unique<DualArmActuator>(arm, geom, spec.gains);
    arms->sync(tray);
    actuator = arms.get();
    result.arm_log.emplace();
  }

  const NominalParams params =
      spec.nominal ? *spec.nominal : matched_params(spec.object, spec.servo_omega);
  TransitionFn model;
  model.params = params;
  model.dt = spec.mpc.ts;
  MpcController controller(spec.mpc, model);

  MpcState goal;
  goal.p = spec.goal;

  RlsBank bank;
  bank.lambda = spec.rls.lambda;
  bank.eps_t = spec.rls.eps_t;
  bank.eps_r = spec.rls.eps_r;
  bank.v_gate = spec.rls.v_gate;
  bank.p0 = spec.rls.p0;
  for (auto& axis : bank.axes) axis.P = spec.rls.p0 * Eigen::Matrix3d::Identity();
  if (spec.controller == ControllerKind::Rmpc) {
    log.extra_columns.reserve(log.extra_columns.size() + 36);
    const char* kinds[2] = {"t", "r"};
    const char* ax[3] = {"x", "y", "z"};
    for (int k = 0; k < 2; ++k)
      for (int a = 0; a < 3; ++a)
        for (int i = 0; i < 3; ++i)
          log.extra_columns.push_back(std::string("z_") + kinds[k] + ax[a] + std::to_string(i));
    for (int k = 0; k < 2; ++k)
      for (int a = 0; a < 3; ++a)
        for (int i = 0; i < 3; ++i)
          log.extra_columns.push_back(std::string("P_") + kinds[k] + ax[a] + std::to_string(i));
  }

  std::optional<LmpcAdapter> lmpc;
  if (spec.controller == ControllerKind::Lmpc) {
    if (!spec.lmpc.policy) throw std::runtime_error("LMPC episode requires a policy");
    PsiVector psi0 = PsiVector::centered(spec.lmpc.psi_max);
    if (spec.lmpc.psi0) psi0.value = *spec.lmpc.psi0;
    lmpc.emplace(*spec.lmpc.policy, psi0, spec.lmpc.obs_scales, spec.lmpc.act_every);
    controller.model().params = params_from_psi(psi0, params);
  }

  Eigen::Vector2d last_du = Eigen::Vector2d::Zero();
  Eigen::Vector2d u_prev = Eigen::Vector2d::Zero();
  Vec6 nu_prev = Vec6::Zero();
  MpcState meas_prev{};
  bool have_prev = false;

  log.rows.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    const MpcState measured = measure_state(obj, tray);
    const Vec6 nu = measure_twist(obj, tray);

    if (spec.controller == ControllerKind::Rmpc) {
      if (have_prev) {
        Vec6 nominal6 = Vec6::Zero();
        nominal6.head<2>() = nominal_accel(meas_prev, TiltCommand::from(u_prev), params);
        bank.update(nu, nu_prev, nominal6, dt);
      }
      if (spec.rls.rollout == ResidualRollout::Feature)
        controller.model().set_feature_residual(bank.translational_xy(), bank.eps_t);
      else
        controller.model().set_frozen_residual(bank.predict(nu));
    } else if (lmpc) {
      lmpc->maybe_act(k, measured, goal, last_du, spec.object.shape, controller);
    }

    const TiltCommand u = controller.step(measured, goal);
    last_du = u.vec() - u_prev;
    u_prev = u.vec();

    TrajectoryRow row;
    row.t = k * dt;
    row.px = obj.p[0];
    row.py = obj.p[1];
    row.vx = obj.v[0];
    row.vy = obj.v[1];
    row.alpha = tray.tilt[0];
    row.beta = tray.tilt[1];
    row.u_alpha = u.alpha;
    row.u_beta = u.beta;
    if (controller.last_solution()) {
      row.cost = controller.last_solution()->cost;
      row.kkt = controller.last_solution()->kkt_residual;
    }
    row.extras.push_back(controller.last_solution() ? controller.last_solution()->iterations : 0);
    if (spec.tier == ActuationTier::IdealServo) {
      // Servo pseudo-torque proxy (unit-inertia angular acceleration demand);
      // not comparable with dual-arm joint torques.
      const double w = spec.servo_omega;
      row.extras.push_back(w * w * (u.alpha - tray.tilt[0]) - 2.0 * w * tray.tilt_rate[0]);
      row.extras.push_back(w * w * (u.beta - tray.tilt[1]) - 2.0 * w * tray.tilt_rate[1]);
    }
    if (spec.controller == ControllerKind::Rmpc) {
      for (const auto& axis : bank.axes)
        for (int i = 0; i < 3; ++i) row.extras.push_back(axis.z[i]);
      for (const auto& axis : bank.axes)
        for (int i = 0; i < 3; ++i) row.extras.push_back(axis.P(i, i));
    }

    const PlantEvent ev = step_plant(obj, tray, spec.object, u, dt, *actuator);
    row.event = event_name(ev.kind);
    log.rows.push_back(std::move(row));

    if (result.arm_log) {
      ArmLog& al = *result.arm_log;
      al.t.push_back(k * dt);
      Vec6d tau, q, qd;
      tau << arms->tau_left(), arms->tau_right();
      q << arms->q_left(), arms->q_right();
      qd << arms->qd_left(), arms->qd_right();
      al.tau.push_back(tau);
      al.q.push_back(q);
      al.qd.push_back(qd);
    }

    nu_prev = nu;
    meas_prev = measured;
    have_prev = true;
    if (ev.terminal()) break;
  }

  result.metrics = metrics_from_logs(log, result.arm_log ? &*result.arm_log : nullptr,
                                     spec.w_energy, spec.w_rate);
  return result;
}

void apply_config(const Config& cfg, EpisodeSpec& spec) {
  // [plant]
  if (cfg.has("plant", "shape"))
    spec.object = ObjectConfig::make(shape_from_string(cfg.get_str("plant", "shape", "cube")),
                                     cfg.get_double("plant", "mass", spec.object.mass),
                                     cfg.get_double("plant", "mu_c", spec.object.mu_c),
                                     cfg.get_double("plant", "half_extent", spec.object.half_extent));
  spec.object.mass = cfg.get_double("plant", "mass", spec.object.mass);
  spec.object.mu_c = cfg.get_double("plant", "mu_c", spec.object.mu_c);
  spec.object.mu_s = cfg.get_double("plant", "mu_s", spec.object.mu_s);
  spec.object.v_s = cfg.get_double("plant", "v_s", spec.object.v_s);
  spec.object.viscous = cfg.get_double("plant", "viscous", spec.object.viscous);
  spec.object.half_extent = cfg.get_double("plant", "half_extent", spec.object.half_extent);
  spec.object.rolling = cfg.get_bool("plant", "rolling", spec.object.rolling);
  spec.tier = tier_from_string(cfg.get_str("plant", "tier", to_string(spec.tier)));
  spec.servo_omega = cfg.get_double("plant", "servo_omega", spec.servo_omega);

  // [mpc]
  spec.mpc.horizon = cfg.get_int("mpc", "horizon", spec.mpc.horizon);
  spec.mpc.ts = cfg.get_double("mpc", "ts", spec.mpc.ts);
  const double qp_w = cfg.get_double("mpc", "q_p", spec.mpc.q_p(0, 0));
  const double qv_w = cfg.get_double("mpc", "q_v", spec.mpc.q_v(0, 0));
  const double qr_w = cfg.get_double("mpc", "q_r", spec.mpc.q_r(0, 0));
  const double qn_scale = cfg.get_double("mpc", "q_n_scale", 10.0);
  spec.mpc.q_p = qp_w * Eigen::Matrix2d::Identity();
  spec.mpc.q_v = qv_w * Eigen::Matrix2d::Identity();
  spec.mpc.q_r = qr_w * Eigen::Matrix4d::Identity();
  spec.mpc.q_terminal.setZero();
  spec.mpc.q_terminal.topLeftCorner<2, 2>() = qn_scale * spec.mpc.q_p;
  spec.mpc.q_terminal.bottomRightCorner<2, 2>() = qn_scale * spec.mpc.q_v;
  spec.mpc.u_max = cfg.get_double("mpc", "u_max", spec.mpc.u_max);
  spec.mpc.du_max = cfg.get_double("mpc", "du_max", spec.mpc.du_max);
  spec.mpc.nu_min = cfg.get_double("mpc", "nu_min", spec.mpc.nu_min);
  spec.mpc.nu_max = cfg.get_double("mpc", "nu_max", spec.mpc.nu_max);
  spec.mpc.w_nu = cfg.get_double("mpc", "w_nu", spec.mpc.w_nu);
  spec.mpc.max_iterations = cfg.get_int("mpc", "max_iterations", spec.mpc.max_iterations);
  spec.mpc.kkt_tolerance = cfg.get_double("mpc", "kkt_tolerance", spec.mpc.kkt_tolerance);
  if (cfg.has("mpc", "nominal_friction") || cfg.has("mpc", "mu_hat") ||
      cfg.has("mpc", "mass_hat")) {
    NominalParams p = spec.nominal ? *spec.nominal : matched_params(spec.object, spec.servo_omega);
    p.friction_enabled = cfg.get_bool("mpc", "nominal_friction", p.friction_enabled);
    p.mu_hat = cfg.get_double("mpc", "mu_hat", p.mu_hat);
    p.mass_hat = cfg.get_double("mpc", "mass_hat", p.mass_hat);
    p.viscous_hat = cfg.get_double("mpc", "viscous_hat", p.viscous_hat);
    p.epsilon = cfg.get_double("mpc", "epsilon", p.epsilon);
    spec.nominal = p;
  }

  // [rls]
  spec.rls.lambda = cfg.get_double("rls", "lambda", spec.rls.lambda);
  spec.rls.eps_t = cfg.get_double("rls", "eps_t", spec.rls.eps_t);
  spec.rls.eps_r = cfg.get_double("rls", "eps_r", spec.rls.eps_r);
  spec.rls.p0 = cfg.get_double("rls", "p0", spec.rls.p0);
  spec.rls.v_gate = cfg.get_double("rls", "v_gate", spec.rls.v_gate);
  const std::string rollout = cfg.get_str("rls", "residual_rollout", "feature");
  spec.rls.rollout = rollout == "frozen" ? ResidualRollout::Frozen : ResidualRollout::Feature;

  // [lmpc]
  spec.lmpc.act_every = cfg.get_int("lmpc", "act_every", spec.lmpc.act_every);
  spec.lmpc.obs_scales.pos = cfg.get_double("lmpc", "obs_pos_scale", spec.lmpc.obs_scales.pos);
  spec.lmpc.obs_scales.vel = cfg.get_double("lmpc", "obs_vel_scale", spec.lmpc.obs_scales.vel);
  spec.lmpc.obs_scales.tilt = cfg.get_double("lmpc", "obs_tilt_scale", spec.lmpc.obs_scales.tilt);
  spec.lmpc.obs_scales.du = cfg.get_double("lmpc", "obs_du_scale", spec.lmpc.obs_scales.du);
  for (int i = 0; i < 5; ++i) {
    const std::string key = "psi_max_" + std::to_string(i);
    spec.lmpc.psi_max[i] = cfg.get_double("lmpc", key, spec.lmpc.psi_max[i]);
  }

  // [dualarm]
  for (int i = 0; i < 3; ++i) {
    const std::string n = std::to_string(i + 1);
    spec.arm.lengths[i] = cfg.get_double("dualarm", "length_" + n, spec.arm.lengths[i]);
    spec.arm.masses[i] = cfg.get_double("dualarm", "mass_" + n, spec.arm.masses[i]);
    spec.arm.inertias[i] = cfg.get_double("dualarm", "inertia_" + n, spec.arm.inertias[i]);
    spec.arm.tau_max[i] = cfg.get_double("dualarm", "tau_max_" + n, spec.arm.tau_max[i]);
  }
  spec.arm.com_offsets = 0.5 * spec.arm.lengths;
  const double k_lin = cfg.get_double("dualarm", "k_linear", spec.gains.stiffness(0, 0));
  const double k_ang = cfg.get_double("dualarm", "k_angular", spec.gains.stiffness(2, 2));
  spec.gains.stiffness = Eigen::Vector3d(k_lin, k_lin, k_ang).asDiagonal();
  spec.gains.null_stiffness =
      cfg.get_double("dualarm", "k_null", spec.gains.null_stiffness(0, 0)) *
      Eigen::Matrix3d::Identity();
  spec.gains.w_imp = cfg.get_double("dualarm", "w_imp", spec.gains.w_imp);
  spec.gains.w_pos = cfg.get_double("dualarm", "w_pos", spec.gains.w_pos);
}

}  // namespace trayctl
