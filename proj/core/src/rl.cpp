#include "trayctl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "trayctl/measure.hpp"

namespace trayctl {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Vec5 logit(const PsiVector& psi) {
  const Vec5 r = psi.ratio();
  Vec5 eta;
  for (int i = 0; i < 5; ++i) eta[i] = std::log(r[i] / (1.0 - r[i]));
  return eta;
}

PsiVector apply_delta(const PsiVector& psi, const Vec5& delta_eta, double delta_eta_max) {
  const Vec5 eta = logit(psi);
  PsiVector out = psi;
  for (int i = 0; i < 5; ++i) {
    const double d = std::clamp(delta_eta[i], -delta_eta_max, delta_eta_max);
    out.value[i] = psi.max[i] * sigmoid(eta[i] + d);
  }
  out.value[2] = std::max(out.value[2], out.value[1]);  // mu_s >= mu_c
  return out;
}

NominalParams params_from_psi(const PsiVector& psi, const NominalParams& base) {
  NominalParams p = base;
  p.mass_hat = psi.mass();
  p.mu_hat = psi.mu_c();
  p.v_s_hat = psi.v_s();
  p.viscous_hat = psi.viscous();
  return p;
}

double reward(const Eigen::Vector2d& p, const Eigen::Vector2d& p_ref, const Eigen::Vector2d& v,
              const Eigen::Vector2d& v_ref, const Eigen::Vector2d& du,
              const RewardParams& params) {
  const double pe = (p - p_ref).squaredNorm();
  const double ve = (v - v_ref).squaredNorm();
  const double pos_kernel = std::exp(-pe / (2.0 * params.sigma_p * params.sigma_p));
  const double vel_kernel = std::exp(-ve / (2.0 * params.sigma_v * params.sigma_v));
  return pos_kernel * (params.w_p + params.w_v * vel_kernel) - du.lpNorm<1>();
}

double contact_regime_scalar(Shape shape) {
  switch (shape) {
    case Shape::Cube: return 0.0;
    case Shape::Cylinder: return 0.5;
    case Shape::Sphere: return 1.0;
  }
  return 0.0;
}

Eigen::VectorXd observe(const Eigen::Vector2d& p_err, const Eigen::Vector2d& v,
                        const Eigen::Vector2d& tilt, const Eigen::Vector2d& last_du,
                        const PsiVector& psi, Shape shape, const ObsScales& scales) {
  Eigen::VectorXd obs(kObsDim);
  obs.segment<2>(0) = p_err / scales.pos;
  obs.segment<2>(2) = v / scales.vel;
  obs.segment<2>(4) = tilt / scales.tilt;
  obs.segment<2>(6) = last_du / scales.du;
  obs.segment<5>(8) = psi.ratio();
  obs[13] = contact_regime_scalar(shape);
  return obs;
}

PolicyNet PolicyNet::make(int obs_dim, double log_std_init, double delta_eta_max, Rng& rng) {
  PolicyNet p;
  p.net = Mlp::make(obs_dim, 64, 5, rng);
  p.log_std = Eigen::VectorXd::Constant(5, log_std_init);
  p.delta_eta_max = delta_eta_max;
  return p;
}

Vec5 PolicyNet::mean(const Eigen::VectorXd& obs) const {
  Vec5 m = net.forward(obs);
  return m.cwiseMax(-delta_eta_max).cwiseMin(delta_eta_max);
}

Vec5 PolicyNet::sample(const Eigen::VectorXd& obs, Rng& rng, double& log_prob_out) const {
  const Vec5 m = mean(obs);
  Vec5 a;
  double lp = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double sd = std::exp(log_std[i]);
    a[i] = m[i] + sd * rng.gaussian();
    const double z = (a[i] - m[i]) / sd;
    lp += -0.5 * z * z - log_std[i] - 0.5 * kLog2Pi;
  }
  log_prob_out = lp;
  return a;
}

double PolicyNet::log_prob(const Eigen::VectorXd& obs, const Vec5& action) const {
  const Vec5 m = mean(obs);
  double lp = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double sd = std::exp(log_std[i]);
    const double z = (action[i] - m[i]) / sd;
    lp += -0.5 * z * z - log_std[i] - 0.5 * kLog2Pi;
  }
  return lp;
}

ValueNet ValueNet::make(int obs_dim, Rng& rng) {
  ValueNet v;
  v.net = Mlp::make(obs_dim, 64, 1, rng);
  return v;
}

double ValueNet::value(const Eigen::VectorXd& obs) const { return net.forward(obs)[0]; }

void compute_gae(std::vector<Transition>& traj, double bootstrap_value, double gamma,
                 double lambda) {
  double next_value = bootstrap_value;
  double next_adv = 0.0;
  for (int t = static_cast<int>(traj.size()) - 1; t >= 0; --t) {
    const double delta = traj[t].reward + gamma * next_value - traj[t].value;
    next_adv = delta + gamma * lambda * next_adv;
    traj[t].adv = next_adv;
    traj[t].ret = next_adv + traj[t].value;
    next_value = traj[t].value;
  }
}

PpoStats ppo_update(RolloutBuffers& buffers, PolicyNet& policy, ValueNet& value,
                    Adam& policy_opt, Adam& value_opt, const PpoHyper& hyper, Rng& rng) {
  PpoStats stats;
  std::vector<const Transition*> batch;
  for (const auto& t : buffers.dense) batch.push_back(&t);
  for (const auto& t : buffers.sparse) batch.push_back(&t);
  if (batch.empty()) return stats;

  const PolicyNet policy_snapshot = policy;
  const ValueNet value_snapshot = value;

  std::vector<int> order(batch.size());
  std::iota(order.begin(), order.end(), 0);

  double kl_sum = 0.0;
  int kl_count = 0;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    // Fisher-Yates with the deterministic stream.
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);

    for (size_t start = 0; start < order.size(); start += hyper.minibatch) {
      const size_t stop = std::min(order.size(), start + hyper.minibatch);
      auto policy_grad = policy.net.zero_like();
      Eigen::VectorXd log_std_grad = Eigen::VectorXd::Zero(5);
      auto value_grad = value.net.zero_like();
      double weight_sum = 0.0;
      for (size_t b = start; b < stop; ++b) weight_sum += batch[order[b]]->weight;
      if (weight_sum <= 0.0) continue;

      for (size_t b = start; b < stop; ++b) {
        const Transition& tr = *batch[order[b]];
        const double w = tr.weight / weight_sum;

        Mlp::Cache cache;
        Vec5 raw = policy.net.forward(tr.obs, cache);
        Vec5 m = raw.cwiseMax(-policy.delta_eta_max).cwiseMin(policy.delta_eta_max);
        double logp = 0.0;
        Vec5 dlogp_dm;
        Eigen::VectorXd dlogp_dlogstd(5);
        for (int i = 0; i < 5; ++i) {
          const double sd = std::exp(policy.log_std[i]);
          const double z = (tr.act[i] - m[i]) / sd;
          logp += -0.5 * z * z - policy.log_std[i] - 0.5 * kLog2Pi;
          dlogp_dm[i] = z / sd;
          dlogp_dlogstd[i] = z * z - 1.0;
        }
        const double ratio = std::exp(logp - tr.logp);
        kl_sum += tr.logp - logp;
        ++kl_count;

        const bool clipped = (tr.adv >= 0.0 && ratio > 1.0 + hyper.clip) ||
                             (tr.adv < 0.0 && ratio < 1.0 - hyper.clip);
        stats.policy_loss -= w * std::min(ratio * tr.adv,
                                          std::clamp(ratio, 1.0 - hyper.clip, 1.0 + hyper.clip) *
                                              tr.adv);
        if (!clipped) {
          // d(-ratio*adv)/dm = -adv*ratio*dlogp_dm
          Vec5 dm = -tr.adv * ratio * dlogp_dm * w;
          for (int i = 0; i < 5; ++i) {
            if (std::abs(raw[i]) > policy.delta_eta_max) dm[i] = 0.0;  // clamp subgradient
            log_std_grad[i] += -tr.adv * ratio * dlogp_dlogstd[i] * w;
          }
          policy.net.backward(cache, dm, policy_grad);
        }

        Mlp::Cache vcache;
        const double v_pred = value.net.forward(tr.obs, vcache)[0];
        stats.value_loss += w * (v_pred - tr.ret) * (v_pred - tr.ret);
        Eigen::VectorXd dv(1);
        dv[0] = hyper.c_v * 2.0 * w * (v_pred - tr.ret);
        value.net.backward(vcache, dv, value_grad);
      }

      // Entropy bonus (state independent for a diagonal Gaussian).
      log_std_grad.array() -= hyper.entropy_beta;

      bool finite = log_std_grad.allFinite();
      for (const auto& g : policy_grad) finite = finite && g.allFinite();
      for (const auto& g : value_grad) finite = finite && g.allFinite();
      if (!finite) {
        policy = policy_snapshot;
        value = value_snapshot;
        stats.aborted = true;
        return stats;
      }

      policy_opt.step(policy.net.params, policy_grad);
      value_opt.step(value.net.params, value_grad);
      for (int i = 0; i < 5; ++i) policy.log_std[i] -= policy_opt.learning_rate() * log_std_grad[i];
    }
  }

  if (!policy.net.finite() || !value.net.finite()) {
    policy = policy_snapshot;
    value = value_snapshot;
    stats.aborted = true;
    return stats;
  }

  stats.mean_kl = kl_count > 0 ? kl_sum / kl_count : 0.0;

  // Dense samples are consumed; sparse samples survive one extra update.
  buffers.dense.clear();
  buffers.sparse.erase(buffers.sparse.begin(), buffers.sparse.begin() + buffers.sparse_carryover);
  buffers.sparse_carryover = static_cast<int>(buffers.sparse.size());
  return stats;
}

void LmpcAdapter::maybe_act(int control_step, const MpcState& measured, const MpcState& goal,
                            const Eigen::Vector2d& last_du, Shape shape,
                            MpcController& controller) {
  if (control_step % act_every_ != 0) return;
  const Eigen::VectorXd obs =
      observe(measured.p - goal.p, measured.v, measured.tilt, last_du, psi_, shape, scales_);
  const Vec5 delta = policy_.mean(obs);
  psi_ = apply_delta(psi_, delta, policy_.delta_eta_max);
  controller.model().params = params_from_psi(psi_, controller.model().params);
}

namespace {

struct RlEpisodeResult {
  std::vector<Transition> transitions;
  double bootstrap{0.0};
  bool terminal{false};
  double mean_reward{0.0};
  double min_interior_margin{1.0};
};

// One closed-loop episode with the policy adapting psi. Stochastic when an
// rng is supplied; mean actions otherwise.
RlEpisodeResult run_rl_episode(const TrainConfig& cfg, const ObjectConfig& object,
                               const Eigen::Vector2d& goal_xy, const PolicyNet& policy,
                               const ValueNet* value, Rng* rng, int steps) {
  RlEpisodeResult out;

  TrayState tray;
  tray.com = {0.0, 0.0, 0.5};
  ObjectState obj = place_on_tray(object, tray);
  IdealServoActuator servo(cfg.servo_omega);

  PsiVector psi = PsiVector::centered(cfg.psi_max);
  if (cfg.psi0) psi.value = *cfg.psi0;

  TransitionFn model;
  model.params = params_from_psi(psi, cfg.base);
  model.dt = cfg.mpc.ts;
  MpcController controller(cfg.mpc, model);

  MpcState goal;
  goal.p = goal_xy;

  Eigen::Vector2d last_du = Eigen::Vector2d::Zero();
  Eigen::Vector2d u_prev = Eigen::Vector2d::Zero();

  bool pending = false;
  Transition current;

  const auto record_margin = [&](const PsiVector& p) {
    const Vec5 r = p.ratio();
    for (int i = 0; i < 5; ++i)
      out.min_interior_margin = std::min(out.min_interior_margin, std::min(r[i], 1.0 - r[i]));
  };
  record_margin(psi);

  double reward_sum = 0.0;
  int reward_count = 0;

  for (int k = 0; k < steps; ++k) {
    const MpcState measured = measure_state(obj, tray);

    if (k % cfg.hyper.act_every == 0) {
      const Eigen::VectorXd obs = observe(measured.p - goal.p, measured.v, measured.tilt, last_du,
                                          psi, object.shape, cfg.obs_scales);
      if (pending) {
        current.reward = reward(measured.p, goal.p, measured.v, Eigen::Vector2d::Zero(), last_du,
                                cfg.reward_params);
        reward_sum += current.reward;
        ++reward_count;
        out.transitions.push_back(current);
      }
      current = Transition{};
      current.obs = obs;
      if (rng) {
        current.act = policy.sample(obs, *rng, current.logp);
      } else {
        current.act = policy.mean(obs);
        current.logp = policy.log_prob(obs, current.act);
      }
      current.value = value ? value->value(obs) : 0.0;
      pending = true;

      psi = apply_delta(psi, current.act, policy.delta_eta_max);
      record_margin(psi);
      controller.model().params = params_from_psi(psi, cfg.base);
    }

    const TiltCommand u = controller.step(measured, goal);
    last_du = u.vec() - u_prev;
    u_prev = u.vec();

    const PlantEvent ev = step_plant(obj, tray, object, u, cfg.mpc.ts, servo);
    if (ev.terminal()) {
      out.terminal = true;
      break;
    }
  }

  const MpcState final_state = measure_state(obj, tray);
  if (pending) {
    current.reward = reward(final_state.p, goal.p, final_state.v, Eigen::Vector2d::Zero(),
                            last_du, cfg.reward_params);
    reward_sum += current.reward;
    ++reward_count;
    out.transitions.push_back(current);
  }
  if (out.terminal || !value) {
    out.bootstrap = 0.0;
  } else {
    const Eigen::VectorXd final_obs =
        observe(final_state.p - goal.p, final_state.v, final_state.tilt, last_du, psi,
                object.shape, cfg.obs_scales);
    out.bootstrap = value->value(final_obs);
  }
  out.mean_reward = reward_count > 0 ? reward_sum / reward_count : 0.0;
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  Rng init_rng(derive_seed(cfg.seed, 1));
  Rng update_rng(derive_seed(cfg.seed, 2));
  std::vector<Rng> env_rngs;
  for (int e = 0; e < cfg.envs; ++e) env_rngs.emplace_back(derive_seed(cfg.seed, 100 + e));

  TrainResult result;
  result.policy = PolicyNet::make(kObsDim, cfg.hyper.log_std_init, cfg.hyper.delta_eta_max,
                                  init_rng);
  result.value = ValueNet::make(kObsDim, init_rng);

  Adam policy_opt(cfg.hyper.lr, result.policy.net.params);
  Adam value_opt(cfg.hyper.lr, result.value.net.params);

  const std::vector<ObjectConfig> grid = standard_object_grid();
  const ObjectConfig eval_object = ObjectConfig::make(Shape::Cube, 1.0, 0.1);
  const Eigen::Vector2d eval_goal(0.10, 0.0);

  const auto evaluate = [&](int update_idx) {
    const RlEpisodeResult ev = run_rl_episode(cfg, eval_object, eval_goal, result.policy, nullptr,
                                              nullptr, cfg.eval_steps);
    result.eval_curve.emplace_back(update_idx, ev.mean_reward);
  };
  evaluate(0);

  RolloutBuffers buffers;
  int episodes_done = 0;
  int updates_done = 0;
  int dense_counter = 0;
  double min_margin = 1.0;

  while (episodes_done < cfg.episodes) {
    const size_t fresh_start = buffers.dense.size();
    for (int e = 0; e < cfg.envs && episodes_done < cfg.episodes; ++e) {
      Rng& rng = env_rngs[e];
      const ObjectConfig& object = grid[rng.uniform_int(static_cast<int>(grid.size()))];
      const double angle = rng.uniform(0.0, 2.0 * 3.141592653589793);
      const double radius = rng.uniform(cfg.goal_radius_lo, cfg.goal_radius_hi);
      const Eigen::Vector2d goal(radius * std::cos(angle), radius * std::sin(angle));

      RlEpisodeResult roll =
          run_rl_episode(cfg, object, goal, result.policy, &result.value, &rng, cfg.steps);
      compute_gae(roll.transitions, roll.bootstrap, cfg.hyper.gamma, cfg.hyper.gae_lambda);
      min_margin = std::min(min_margin, roll.min_interior_margin);

      for (auto& tr : roll.transitions) buffers.dense.push_back(std::move(tr));
      result.curve.emplace_back(episodes_done, roll.mean_reward);
      ++episodes_done;
    }

    // Advantage normalization over the fresh samples.
    const size_t fresh_n = buffers.dense.size() - fresh_start;
    if (fresh_n > 1) {
      double mean = 0.0;
      for (size_t i = fresh_start; i < buffers.dense.size(); ++i) mean += buffers.dense[i].adv;
      mean /= static_cast<double>(fresh_n);
      double var = 0.0;
      for (size_t i = fresh_start; i < buffers.dense.size(); ++i) {
        const double d = buffers.dense[i].adv - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / static_cast<double>(fresh_n)) + 1e-8;
      for (size_t i = fresh_start; i < buffers.dense.size(); ++i)
        buffers.dense[i].adv = (buffers.dense[i].adv - mean) / sd;
    }
    // Sparse decimation of the fresh dense samples, weighted x stride.
    for (size_t i = fresh_start; i < buffers.dense.size(); ++i, ++dense_counter) {
      if (dense_counter % cfg.hyper.sparse_stride == 0) {
        Transition t = buffers.dense[i];
        t.weight = static_cast<double>(cfg.hyper.sparse_stride);
        buffers.sparse.push_back(std::move(t));
      }
    }

    ppo_update(buffers, result.policy, result.value, policy_opt, value_opt, cfg.hyper,
               update_rng);
    ++updates_done;
    if (cfg.eval_every_updates > 0 && updates_done % cfg.eval_every_updates == 0)
      evaluate(updates_done);
  }

  if (cfg.eval_every_updates > 0 && updates_done % cfg.eval_every_updates != 0)
    evaluate(updates_done);

  result.min_interior_margin = min_margin;
  result.psi_stayed_interior = min_margin > 0.0;
  return result;
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void write_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
  write_u32(out, static_cast<uint32_t>(m.rows()));
  write_u32(out, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
}
Eigen::MatrixXd read_matrix(std::ifstream& in) {
  const uint32_t rows = read_u32(in);
  const uint32_t cols = read_u32(in);
  Eigen::MatrixXd m(rows, cols);
  for (uint32_t i = 0; i < rows; ++i)
    for (uint32_t j = 0; j < cols; ++j) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      m(i, j) = v;
    }
  return m;
}

}  // namespace

void save_policy(const std::string& path, const PolicyNet& policy) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open policy file for writing: " + path);
  out.write("LMPC", 4);
  write_u32(out, 1);  // format version
  write_u32(out, static_cast<uint32_t>(policy.net.input));
  write_u32(out, static_cast<uint32_t>(policy.net.hidden));
  write_u32(out, static_cast<uint32_t>(policy.net.output));
  for (const auto& p : policy.net.params) write_matrix(out, p);
  write_matrix(out, policy.log_std);
  out.write(reinterpret_cast<const char*>(&policy.delta_eta_max), sizeof(double));
}

PolicyNet load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open policy file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (std::string(magic, 4) != "LMPC") throw std::runtime_error("bad policy file magic");
  const uint32_t version = read_u32(in);
  if (version != 1) throw std::runtime_error("unsupported policy file version");
  PolicyNet policy;
  policy.net.input = static_cast<int>(read_u32(in));
  policy.net.hidden = static_cast<int>(read_u32(in));
  policy.net.output = static_cast<int>(read_u32(in));
  policy.net.params.clear();
  for (int i = 0; i < 6; ++i) policy.net.params.push_back(read_matrix(in));
  policy.log_std = read_matrix(in);
  in.read(reinterpret_cast<char*>(&policy.delta_eta_max), sizeof(double));
  if (!in) throw std::runtime_error("truncated policy file");
  return policy;
}

void write_curve_csv(const std::string& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open curve file: " + path);
  out << "kind,index,reward\n";
  for (const auto& [ep, r] : result.curve) out << "train," << ep << "," << r << "\n";
  for (const auto& [up, r] : result.eval_curve) out << "eval," << up << "," << r << "\n";
}

}  // namespace trayctl
