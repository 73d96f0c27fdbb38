// RL-based dynamics adaptation: a PPO policy emits bounded logit-space
// updates to the physical parameter vector psi of the planning model; the
// MPC then plans with the updated parameters. Training runs the full closed
// loop (plant + MPC) with per-episode domain randomization over the standard
// object grid.

#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trayctl/mlp.hpp"
#include "trayctl/nmpc.hpp"
#include "trayctl/nominal.hpp"
#include "trayctl/plant.hpp"
#include "trayctl/rng.hpp"

namespace trayctl {

using Vec5 = Eigen::Matrix<double, 5, 1>;

// [mass, mu_c, mu_s, v_s, viscous], each strictly inside (0, psi_max_i).
struct PsiVector {
  Vec5 value{Vec5::Zero()};
  Vec5 max{default_max()};

  static Vec5 default_max() {
    Vec5 m;
    m << 5.0, 1.0, 1.0, 0.1, 5.0;
    return m;
  }
  static PsiVector centered(const Vec5& max = default_max()) {
    PsiVector p;
    p.max = max;
    p.value = 0.5 * max;
    return p;
  }

  Vec5 ratio() const { return value.cwiseQuotient(max); }
  double mass() const { return value[0]; }
  double mu_c() const { return value[1]; }
  double mu_s() const { return value[2]; }
  double v_s() const { return value[3]; }
  double viscous() const { return value[4]; }
};

// eta = ln(r / (1 - r)) with r = psi / psi_max.
Vec5 logit(const PsiVector& psi);

// eta' = eta + clamp(delta, +-delta_max); psi' = psi_max * sigmoid(eta'),
// then mu_s is projected up to mu_c. The result stays strictly interior.
PsiVector apply_delta(const PsiVector& psi, const Vec5& delta_eta, double delta_eta_max);

// Planning parameters realized from psi; servo and smoothing settings come
// from the base.
NominalParams params_from_psi(const PsiVector& psi, const NominalParams& base);

struct RewardParams {
  double w_p{1.0};
  double w_v{0.5};
  double sigma_p{0.05};   // m
  double sigma_v{0.05};   // m/s
};

// Gaussian position kernel gating a velocity bonus, minus the l1 tilt-rate
// penalty; maximal at (p_ref, v_ref, du = 0) with value w_p + w_v.
double reward(const Eigen::Vector2d& p, const Eigen::Vector2d& p_ref, const Eigen::Vector2d& v,
              const Eigen::Vector2d& v_ref, const Eigen::Vector2d& du, const RewardParams& params);

struct ObsScales {
  double pos{0.1};    // m
  double vel{0.5};    // m/s
  double tilt{0.6};   // rad
  double du{0.01};    // rad/step
};

inline constexpr int kObsDim = 14;

// 0 area contact, 0.5 line, 1 point.
double contact_regime_scalar(Shape shape);

// Normalized observation: position error (2), velocity (2), tilt (2), last
// du (2), psi ratios (5), contact regime (1). Tray-frame quantities only.
Eigen::VectorXd observe(const Eigen::Vector2d& p_err, const Eigen::Vector2d& v,
                        const Eigen::Vector2d& tilt, const Eigen::Vector2d& last_du,
                        const PsiVector& psi, Shape shape, const ObsScales& scales);

struct PolicyNet {
  Mlp net;
  Eigen::VectorXd log_std;  // state-independent, size 5
  double delta_eta_max{0.5};

  static PolicyNet make(int obs_dim, double log_std_init, double delta_eta_max, Rng& rng);

  Vec5 mean(const Eigen::VectorXd& obs) const;  // clamped to +-delta_eta_max
  Vec5 sample(const Eigen::VectorXd& obs, Rng& rng, double& log_prob) const;
  double log_prob(const Eigen::VectorXd& obs, const Vec5& action) const;
};

struct ValueNet {
  Mlp net;
  static ValueNet make(int obs_dim, Rng& rng);
  double value(const Eigen::VectorXd& obs) const;
};

struct PpoHyper {
  double lr{3e-4};
  double c_v{0.5};           // value loss coefficient
  double entropy_beta{0.01};
  double clip{0.2};
  double gamma{0.99};
  double gae_lambda{0.95};
  int epochs{4};
  int minibatch{128};
  int act_every{10};         // control steps per policy action
  int sparse_stride{50};     // dense-to-sparse decimation S
  double log_std_init{-1.2};
  double delta_eta_max{0.5};
};

struct Transition {
  Eigen::VectorXd obs;
  Vec5 act;
  double logp{0.0};
  double reward{0.0};
  double value{0.0};
  double adv{0.0};
  double ret{0.0};
  double weight{1.0};
};

struct RolloutBuffers {
  std::vector<Transition> dense;   // every policy step, cleared per update
  std::vector<Transition> sparse;  // 1-in-S decimation, kept one extra update
  int sparse_carryover{0};
};

// GAE over one episode segment (in place); bootstrap is V of the state after
// the last transition (0 at terminal).
void compute_gae(std::vector<Transition>& traj, double bootstrap_value, double gamma,
                 double lambda);

struct PpoStats {
  double policy_loss{0.0};
  double value_loss{0.0};
  double mean_kl{0.0};
  bool aborted{false};
};

// Clipped-surrogate update over dense + weighted sparse samples. A non-finite
// gradient aborts the update and restores the previous networks.
PpoStats ppo_update(RolloutBuffers& buffers, PolicyNet& policy, ValueNet& value,
                    Adam& policy_opt, Adam& value_opt, const PpoHyper& hyper, Rng& rng);

// Runtime adapter: a frozen policy adjusting psi every act_every steps.
class LmpcAdapter {
 public:
  LmpcAdapter(PolicyNet policy, PsiVector psi0, ObsScales scales, int act_every)
      : policy_(std::move(policy)), psi_(psi0), scales_(scales), act_every_(act_every) {}

  // Called once per control step; updates the controller's model parameters
  // on action steps. Deterministic (mean action).
  void maybe_act(int control_step, const MpcState& measured, const MpcState& goal,
                 const Eigen::Vector2d& last_du, Shape shape, MpcController& controller);

  const PsiVector& psi() const { return psi_; }

 private:
  PolicyNet policy_;
  PsiVector psi_;
  ObsScales scales_;
  int act_every_;
};

struct TrainConfig {
  int envs{3};
  int episodes{60};       // total episodes across envs
  int steps{2000};        // control steps per episode
  uint64_t seed{0};
  int eval_every_updates{5};
  int eval_steps{2000};
  MpcSpec mpc{};
  NominalParams base{};   // servo/smoothing defaults; psi supplies the rest
  RewardParams reward_params{};
  ObsScales obs_scales{};
  PpoHyper hyper{};
  Vec5 psi_max{PsiVector::default_max()};
  std::optional<Vec5> psi0{};  // default: centered
  double goal_radius_lo{0.08};
  double goal_radius_hi{0.12};
  double servo_omega{25.0};
};

struct TrainResult {
  PolicyNet policy;
  ValueNet value;
  std::vector<std::pair<int, double>> curve;       // episode -> mean reward
  std::vector<std::pair<int, double>> eval_curve;  // update -> mean eval reward
  double min_interior_margin{1.0};  // min over training of min(r, 1-r)
  bool psi_stayed_interior{true};
};

TrainResult train(const TrainConfig& cfg);

// Versioned binary policy file: magic "LMPC", format version, layer dims,
// row-major weights as 64-bit floats, then log-std and the action bound.
void save_policy(const std::string& path, const PolicyNet& policy);
PolicyNet load_policy(const std::string& path);

void write_curve_csv(const std::string& path, const TrainResult& result);

}  // namespace trayctl
