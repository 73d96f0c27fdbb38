// Closed-loop episode runner: measure -> adapter update -> MPC step -> plant
// step at the control rate, with trajectory logging and metric extraction.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trayctl/config.hpp"
#include "trayctl/dualarm.hpp"
#include "trayctl/metrics.hpp"
#include "trayctl/nmpc.hpp"
#include "trayctl/plant.hpp"
#include "trayctl/rl.hpp"
#include "trayctl/rls.hpp"

namespace trayctl {

enum class ControllerKind { Pmpc, Rmpc, Lmpc };
enum class ActuationTier { IdealServo, DualArm };
enum class ResidualRollout { Frozen, Feature };

const char* to_string(ControllerKind kind);
const char* to_string(ActuationTier tier);
ControllerKind controller_from_string(const std::string& name);
ActuationTier tier_from_string(const std::string& name);
Shape shape_from_string(const std::string& name);
const char* to_string(Shape shape);

struct RlsConfig {
  double lambda{0.995};
  double eps_t{0.01};
  double eps_r{0.05};
  double p0{10.0};
  double v_gate{1e-3};
  ResidualRollout rollout{ResidualRollout::Feature};
};

struct LmpcRuntime {
  std::optional<PolicyNet> policy;  // required for LMPC episodes
  Vec5 psi_max{PsiVector::default_max()};
  std::optional<Vec5> psi0{};
  ObsScales obs_scales{};
  int act_every{10};
};

struct EpisodeSpec {
  ObjectConfig object{ObjectConfig::make(Shape::Cube, 1.0, 0.1)};
  ControllerKind controller{ControllerKind::Pmpc};
  ActuationTier tier{ActuationTier::IdealServo};
  Eigen::Vector2d goal{Eigen::Vector2d(0.10, 0.0)};  // tray-frame target
  double duration{20.0};
  double sample_rate{500.0};
  uint64_t seed{0};
  MpcSpec mpc{};
  std::optional<NominalParams> nominal{};  // default: matched to the object
  RlsConfig rls{};
  LmpcRuntime lmpc{};
  TrayGeometry tray_geom{};
  ImpedanceGains gains{};
  ArmModel arm{};
  double servo_omega{25.0};
  double w_energy{1.0};
  double w_rate{1e-6};
};

// Planning parameters matched to a plant object (Coulomb level, mass,
// viscous drag; the smoothed model has no static peak).
NominalParams matched_params(const ObjectConfig& object, double servo_omega);

struct TrajectoryRow {
  double t{0.0};
  double px{0.0}, py{0.0}, vx{0.0}, vy{0.0};  // world frame
  double alpha{0.0}, beta{0.0};
  double u_alpha{0.0}, u_beta{0.0};
  std::string event{"in_contact"};
  double cost{0.0}, kkt{0.0};
  std::vector<double> extras;
};

struct TrajectoryLog {
  double goal_x{0.0}, goal_y{0.0};
  double duration{20.0}, sample_rate{500.0};
  std::string controller{"pmpc"}, tier{"ideal"};
  std::vector<std::string> extra_columns;
  std::vector<TrajectoryRow> rows;

  void write_csv(const std::string& path) const;
  static TrajectoryLog read_csv(const std::string& path);
};

struct ArmLog {
  std::vector<double> t;
  std::vector<Vec6d> tau, q, qd;

  void write_csv(const std::string& path) const;
  static ArmLog read_csv(const std::string& path);
};

struct EpisodeResult {
  TrajectoryLog log;
  std::optional<ArmLog> arm_log;
  MetricsRecord metrics;
};

EpisodeResult run_episode(const EpisodeSpec& spec);

// Recomputes the metrics purely from logged series.
MetricsRecord metrics_from_logs(const TrajectoryLog& log, const ArmLog* arm_log, double w_energy,
                                double w_rate);

// Applies [plant], [mpc], [rls], [lmpc], [dualarm] sections.
void apply_config(const Config& cfg, EpisodeSpec& spec);

}  // namespace trayctl
