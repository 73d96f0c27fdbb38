// trayctl: run single episodes, full benchmark grids, LMPC training, and
// metric recomputation from logged CSVs.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "trayctl/episode.hpp"
#include "trayctl/grid.hpp"
#include "trayctl/rl.hpp"

namespace {

using namespace trayctl;

void print_metrics(const MetricsRecord& m) {
  std::printf("settling_time_s      %.4f\n", m.settling_time);
  std::printf("steady_state_error_m %.6f\n", m.steady_state_error);
  std::printf("steady_state_err_m2  %.8f\n", m.steady_state_error_sq);
  std::printf("control_effort       %.4f\n", m.control_effort);
  std::printf("fell_off             %s\n", m.fell_off ? "yes" : "no");
  std::printf("mean_cost            %.6f\n", m.mean_cost);
  std::printf("mean_kkt             %.3e\n", m.mean_kkt);
  std::printf("mean_iterations      %.2f\n", m.mean_iterations);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tray-tilt manipulation benchmark"};
  app.require_subcommand(1);

  // ---- run ----
  auto* run = app.add_subcommand("run", "run a single closed-loop episode");
  std::string run_controller = "pmpc", run_shape = "cube", run_tier = "ideal";
  double run_mass = 1.0, run_friction = 0.1, run_goal_x = 0.10, run_goal_y = 0.0;
  double run_duration = 20.0;
  uint64_t run_seed = 0;
  std::string run_out = "trajectory.csv", run_config, run_policy;
  run->add_option("--controller", run_controller, "pmpc|rmpc|lmpc");
  run->add_option("--shape", run_shape, "cube|cylinder|sphere");
  run->add_option("--mass", run_mass, "object mass, kg");
  run->add_option("--friction", run_friction, "Coulomb friction coefficient");
  run->add_option("--goal-x", run_goal_x, "goal x on the tray, m");
  run->add_option("--goal-y", run_goal_y, "goal y on the tray, m");
  run->add_option("--tier", run_tier, "ideal|dualarm");
  run->add_option("--seed", run_seed, "episode seed");
  run->add_option("--duration", run_duration, "episode length, s");
  run->add_option("--out", run_out, "trajectory CSV path");
  run->add_option("--config", run_config, "config file");
  run->add_option("--policy", run_policy, "trained policy file (lmpc)");

  // ---- grid ----
  auto* grid_cmd = app.add_subcommand("grid", "run the benchmark grid sweep");
  std::string grid_config, grid_out_dir = "grid_out", grid_policy;
  int grid_jobs = 1;
  grid_cmd->add_option("--config", grid_config, "config file with a [grid] section");
  grid_cmd->add_option("--jobs", grid_jobs, "parallel workers");
  grid_cmd->add_option("--out-dir", grid_out_dir, "output directory");
  grid_cmd->add_option("--policy", grid_policy, "trained policy file (lmpc rows)");

  // ---- train-lmpc ----
  auto* train_cmd = app.add_subcommand("train-lmpc", "train the parameter-adaptation policy");
  int train_episodes = 60, train_steps = 2000, train_envs = 3;
  uint64_t train_seed = 0;
  std::string train_policy_out = "policy.lmpc", train_curve_out = "training_curve.csv";
  std::string train_config;
  train_cmd->add_option("--episodes", train_episodes, "total training episodes");
  train_cmd->add_option("--steps", train_steps, "control steps per episode");
  train_cmd->add_option("--envs", train_envs, "parallel environments");
  train_cmd->add_option("--seed", train_seed, "training seed");
  train_cmd->add_option("--policy-out", train_policy_out, "policy output path");
  train_cmd->add_option("--curve-out", train_curve_out, "training curve CSV path");
  train_cmd->add_option("--config", train_config, "config file");

  // ---- metrics ----
  auto* metrics_cmd = app.add_subcommand("metrics", "recompute metrics from logged CSVs");
  std::string metrics_traj, metrics_arm;
  double metrics_we = 1.0, metrics_wr = 1e-6;
  metrics_cmd->add_option("--traj", metrics_traj, "trajectory CSV")->required();
  metrics_cmd->add_option("--arm", metrics_arm, "arm log CSV (dual-arm episodes)");
  metrics_cmd->add_option("--w-energy", metrics_we, "effort energy weight");
  metrics_cmd->add_option("--w-rate", metrics_wr, "effort rate weight");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      EpisodeSpec spec;
      if (!run_config.empty()) apply_config(Config::parse_file(run_config), spec);
      spec.object = ObjectConfig::make(shape_from_string(run_shape), run_mass, run_friction);
      spec.controller = controller_from_string(run_controller);
      spec.tier = tier_from_string(run_tier);
      spec.goal = {run_goal_x, run_goal_y};
      spec.duration = run_duration;
      spec.seed = run_seed;
      if (spec.controller == ControllerKind::Lmpc) {
        if (run_policy.empty()) {
          std::cerr << "lmpc requires --policy\n";
          return 1;
        }
        spec.lmpc.policy = load_policy(run_policy);
      }
      const EpisodeResult result = run_episode(spec);
      result.log.write_csv(run_out);
      if (result.arm_log) {
        const std::filesystem::path p(run_out);
        const std::string arm_path = (p.parent_path() / (p.stem().string() + "_arm.csv")).string();
        result.arm_log->write_csv(arm_path);
        std::printf("arm log: %s\n", arm_path.c_str());
      }
      std::printf("trajectory: %s\n", run_out.c_str());
      print_metrics(result.metrics);
      return 0;
    }

    if (*grid_cmd) {
      GridSpec spec;
      if (!grid_config.empty()) {
        const Config cfg = Config::parse_file(grid_config);
        apply_config(cfg, spec);
      }
      if (grid_jobs > 0) spec.jobs = grid_jobs;
      if (!grid_policy.empty()) spec.base.lmpc.policy = load_policy(grid_policy);
      for (ControllerKind c : spec.controllers) {
        if (c == ControllerKind::Lmpc && !spec.base.lmpc.policy) {
          std::cerr << "grid includes lmpc but no --policy was given\n";
          return 1;
        }
      }
      std::filesystem::create_directories(grid_out_dir);
      const GridReport report = run_grid(spec);
      const std::string csv = grid_out_dir + "/report.csv";
      const std::string table = grid_out_dir + "/report.txt";
      write_report_csv(csv, report);
      write_report_table(table, report);
      std::printf("report: %s\n", table.c_str());
      return report.any_failure ? 2 : 0;
    }

    if (*train_cmd) {
      TrainConfig cfg;
      if (!train_config.empty()) {
        const Config file = Config::parse_file(train_config);
        EpisodeSpec ep;
        apply_config(file, ep);
        cfg.mpc = ep.mpc;
        cfg.base = ep.nominal ? *ep.nominal : cfg.base;
        cfg.obs_scales = ep.lmpc.obs_scales;
        cfg.hyper.act_every = ep.lmpc.act_every;
        cfg.psi_max = ep.lmpc.psi_max;
        cfg.servo_omega = ep.servo_omega;
        cfg.hyper.lr = file.get_double("lmpc", "lr", cfg.hyper.lr);
        cfg.hyper.entropy_beta = file.get_double("lmpc", "entropy_beta", cfg.hyper.entropy_beta);
        cfg.hyper.c_v = file.get_double("lmpc", "c_v", cfg.hyper.c_v);
        cfg.hyper.clip = file.get_double("lmpc", "clip", cfg.hyper.clip);
        cfg.hyper.sparse_stride = file.get_int("lmpc", "sparse_stride", cfg.hyper.sparse_stride);
      }
      cfg.episodes = train_episodes;
      cfg.steps = train_steps;
      cfg.envs = train_envs;
      cfg.seed = train_seed;
      const TrainResult result = train(cfg);
      save_policy(train_policy_out, result.policy);
      write_curve_csv(train_curve_out, result);
      double first = 0.0, best = 0.0;
      if (!result.eval_curve.empty()) {
        first = result.eval_curve.front().second;
        best = first;
        for (const auto& [idx, r] : result.eval_curve) best = std::max(best, r);
      }
      std::printf("policy: %s\ncurve: %s\n", train_policy_out.c_str(), train_curve_out.c_str());
      std::printf("eval reward first %.4f best %.4f\n", first, best);
      return 0;
    }

    if (*metrics_cmd) {
      const TrajectoryLog log = TrajectoryLog::read_csv(metrics_traj);
      std::optional<ArmLog> arm;
      if (!metrics_arm.empty()) arm = ArmLog::read_csv(metrics_arm);
      const MetricsRecord m = metrics_from_logs(log, arm ? &*arm : nullptr, metrics_we, metrics_wr);
      print_metrics(m);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
