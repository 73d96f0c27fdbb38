#include "trayctl/nmpc.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "trayctl/qp.hpp"

namespace trayctl {
namespace {

constexpr double kMeritPenalty = 1e4;  // l1 weight on shooting defects
constexpr double kArmijo = 1e-4;

Eigen::Matrix4d state_weight(const MpcSpec& spec) {
  Eigen::Matrix4d w = Eigen::Matrix4d::Zero();
  w.topLeftCorner<2, 2>() = spec.q_p;
  w.bottomRightCorner<2, 2>() = spec.q_v;
  return w;
}

Eigen::Vector4d pv_error(const MpcState& s, const MpcState& ref) {
  Eigen::Vector4d e;
  e << s.p - ref.p, s.v - ref.v;
  return e;
}

double velocity_penalty(const MpcSpec& spec, const MpcState& s) {
  double j = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double over = std::max(0.0, s.v[i] - spec.nu_max);
    const double under = std::max(0.0, spec.nu_min - s.v[i]);
    j += spec.w_nu * (over * over + under * under);
  }
  return j;
}

// Full nonlinear objective of a (state, control) trajectory.
double trajectory_cost(const MpcProblem& pb, const std::vector<MpcState>& x,
                       const std::vector<Eigen::Vector2d>& u) {
  const int n = pb.spec.horizon;
  double j = 0.0;
  Eigen::Vector2d prev = pb.u_prev.vec();
  for (int k = 0; k < n; ++k) {
    j += stage_cost(pv_error(x[k], pb.x_ref), u[k], u[k] - prev, pb.spec);
    prev = u[k];
  }
  const Eigen::Vector4d en = pv_error(x[n], pb.x_ref);
  j += en.dot(pb.spec.q_terminal * en);
  for (int k = 1; k <= n; ++k) j += velocity_penalty(pb.spec, x[k]);
  return j;
}

double defect_l1(const MpcProblem& pb, const std::vector<MpcState>& x,
                 const std::vector<Eigen::Vector2d>& u) {
  double d = 0.0;
  for (int k = 0; k < pb.spec.horizon; ++k) {
    const MpcState next = pb.model.step(x[k], TiltCommand::from(u[k]));
    d += (next.vec() - x[k + 1].vec()).lpNorm<1>();
  }
  return d;
}

// Feasibility of the box/rate bounds via interval propagation from u_prev.
bool bounds_feasible(const MpcSpec& spec, const TiltCommand& u_prev) {
  for (int i = 0; i < 2; ++i) {
    double lo = u_prev.vec()[i], hi = u_prev.vec()[i];
    for (int k = 0; k < spec.horizon; ++k) {
      lo = std::max(lo - spec.du_max, -spec.u_max);
      hi = std::min(hi + spec.du_max, spec.u_max);
      if (lo > hi + 1e-12) return false;
    }
  }
  return true;
}

std::vector<MpcState> rollout(const TransitionFn& model, const MpcState& x0,
                              const std::vector<Eigen::Vector2d>& u) {
  std::vector<MpcState> x(u.size() + 1);
  x[0] = x0;
  for (size_t k = 0; k < u.size(); ++k) x[k + 1] = model.step(x[k], TiltCommand::from(u[k]));
  return x;
}

}  // namespace

double stage_cost(const Eigen::Vector4d& e, const Eigen::Vector2d& u, const Eigen::Vector2d& du,
                  const MpcSpec& spec) {
  Eigen::Vector4d r;
  r << u, du;
  return e.dot(state_weight(spec) * e) + r.dot(spec.q_r * r);
}

std::vector<Eigen::Vector2d> delta_u(const std::vector<TiltCommand>& u_seq,
                                     const TiltCommand& u_prev) {
  std::vector<Eigen::Vector2d> du(u_seq.size());
  Eigen::Vector2d prev = u_prev.vec();
  for (size_t k = 0; k < u_seq.size(); ++k) {
    du[k] = u_seq[k].vec() - prev;
    prev = u_seq[k].vec();
  }
  return du;
}

MpcSolution solve(const MpcProblem& problem, const std::optional<MpcSolution>& warm_start) {
  const MpcSpec& spec = problem.spec;
  const int n = spec.horizon;
  const int nz = 2 * n;

  MpcSolution sol;
  if (!bounds_feasible(spec, problem.u_prev)) {
    sol.status = SolveStatus::Infeasible;
    return sol;
  }

  // Initial trajectory: shifted warm start, else hold u_prev (rate-feasible).
  std::vector<Eigen::Vector2d> u(n);
  std::vector<MpcState> x;
  if (warm_start && static_cast<int>(warm_start->u_seq.size()) >= n + 1) {
    for (int k = 0; k + 1 < n; ++k) u[k] = warm_start->u_seq[k + 1].vec();
    u[n - 1] = warm_start->u_seq[n].vec();
    x.assign(n + 1, MpcState{});
    for (int k = 0; k + 1 <= n; ++k) x[k] = warm_start->x_seq[std::min(k + 1, n)];
    x[0] = problem.x0;
    x[n] = problem.model.step(x[n - 1], TiltCommand::from(u[n - 1]));
  } else {
    const Eigen::Vector2d hold = problem.u_prev.vec().cwiseMax(-spec.u_max).cwiseMin(spec.u_max);
    for (auto& uk : u) uk = hold;
    if ((hold - problem.u_prev.vec()).lpNorm<Eigen::Infinity>() > spec.du_max + 1e-12) {
      sol.status = SolveStatus::Infeasible;
      return sol;
    }
    x = rollout(problem.model, problem.x0, u);
  }

  const Eigen::Matrix4d w4 = state_weight(spec);
  sol.status = SolveStatus::MaxIter;

  std::vector<Mat8> a_mats(n);
  std::vector<Mat8x2> b_mats(n);
  std::vector<Vec8> defects(n);
  std::vector<Eigen::Matrix<double, 8, Eigen::Dynamic>> sens(n + 1);
  std::vector<Vec8> affine(n + 1);

  for (int it = 0; it < spec.max_iterations; ++it) {
    // Linearize the dynamics along the shooting trajectory.
    double defect_inf = 0.0;
    for (int k = 0; k < n; ++k) {
      problem.model.jacobians(x[k], TiltCommand::from(u[k]), a_mats[k], b_mats[k]);
      const MpcState next = problem.model.step(x[k], TiltCommand::from(u[k]));
      defects[k] = next.vec() - x[k + 1].vec();
      defect_inf = std::max(defect_inf, defects[k].lpNorm<Eigen::Infinity>());
    }

    // Condense: dX_k = affine_k + sens_k * dU.
    sens[0] = Eigen::Matrix<double, 8, Eigen::Dynamic>::Zero(8, nz);
    affine[0].setZero();
    for (int k = 0; k < n; ++k) {
      sens[k + 1] = a_mats[k] * sens[k];
      sens[k + 1].middleCols(2 * k, 2) += b_mats[k];
      affine[k + 1] = a_mats[k] * affine[k] + defects[k];
    }

    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nz, nz);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(nz);

    for (int k = 1; k < n; ++k) {
      const Eigen::Matrix<double, 4, Eigen::Dynamic> t4 = sens[k].topRows<4>();
      const Eigen::Vector4d e = pv_error(x[k], problem.x_ref) + affine[k].head<4>();
      h.noalias() += 2.0 * t4.transpose() * w4 * t4;
      grad.noalias() += 2.0 * t4.transpose() * (w4 * e);
    }
    {
      const Eigen::Matrix<double, 4, Eigen::Dynamic> t4 = sens[n].topRows<4>();
      const Eigen::Vector4d e = pv_error(x[n], problem.x_ref) + affine[n].head<4>();
      h.noalias() += 2.0 * t4.transpose() * spec.q_terminal * t4;
      grad.noalias() += 2.0 * t4.transpose() * (spec.q_terminal * e);
    }
    // Control and rate weights.
    Eigen::Vector2d prev = problem.u_prev.vec();
    for (int k = 0; k < n; ++k) {
      Eigen::MatrixXd p = Eigen::MatrixXd::Zero(4, nz);
      p.block<2, 2>(0, 2 * k).setIdentity();
      p.block<2, 2>(2, 2 * k).setIdentity();
      if (k > 0) p.block<2, 2>(2, 2 * (k - 1)) = -Eigen::Matrix2d::Identity();
      Eigen::Vector4d m;
      m << u[k], u[k] - prev;
      h.noalias() += 2.0 * p.transpose() * spec.q_r * p;
      grad.noalias() += 2.0 * p.transpose() * (spec.q_r * m);
      prev = u[k];
    }
    // Velocity bound penalty (quadratic hinge, Gauss-Newton on the active side).
    for (int k = 1; k <= n; ++k) {
      const Eigen::Vector4d corrected = pv_error(x[k], problem.x_ref) + affine[k].head<4>();
      for (int i = 0; i < 2; ++i) {
        const double vk = problem.x_ref.v[i] + corrected[2 + i];
        double rho = 0.0;
        if (vk > spec.nu_max) rho = vk - spec.nu_max;
        else if (vk < spec.nu_min) rho = vk - spec.nu_min;
        else continue;
        const Eigen::RowVectorXd row = sens[k].row(2 + i);
        h.noalias() += 2.0 * spec.w_nu * row.transpose() * row;
        grad.noalias() += 2.0 * spec.w_nu * rho * row.transpose();
      }
    }

    // Bounds on u and du as QP rows.
    QpProblem qp;
    qp.H = h;
    qp.g = grad;
    qp.C = Eigen::MatrixXd::Zero(4 * n, nz);
    qp.lb = Eigen::VectorXd::Zero(4 * n);
    qp.ub = Eigen::VectorXd::Zero(4 * n);
    qp.z0 = Eigen::VectorXd::Zero(nz);
    prev = problem.u_prev.vec();
    for (int k = 0; k < n; ++k) {
      for (int i = 0; i < 2; ++i) {
        const int r_mag = 2 * k + i;
        qp.C(r_mag, 2 * k + i) = 1.0;
        qp.lb[r_mag] = -spec.u_max - u[k][i];
        qp.ub[r_mag] = spec.u_max - u[k][i];
        const int r_rate = 2 * n + 2 * k + i;
        qp.C(r_rate, 2 * k + i) = 1.0;
        if (k > 0) qp.C(r_rate, 2 * (k - 1) + i) = -1.0;
        const double d = u[k][i] - prev[i];
        qp.lb[r_rate] = -spec.du_max - d;
        qp.ub[r_rate] = spec.du_max - d;
      }
      prev = u[k];
    }

    const QpResult qpr = solve_qp_activeset(qp);
    sol.iterations = it + 1;

    sol.kkt_residual = std::max((qp.H * qpr.z).lpNorm<Eigen::Infinity>(), defect_inf);
    if (sol.kkt_residual < spec.kkt_tolerance) {
      sol.status = SolveStatus::Converged;
      break;
    }

    // Merit line search on cost + l1 defect penalty.
    const double pred = -(qp.g.dot(qpr.z) + 0.5 * qpr.z.dot(qp.H * qpr.z));
    const double merit0 = trajectory_cost(problem, x, u) + kMeritPenalty * defect_l1(problem, x, u);
    double gamma = 1.0;
    bool accepted = false;
    std::vector<Eigen::Vector2d> u_trial(n);
    std::vector<MpcState> x_trial(n + 1);
    for (int ls = 0; ls < 12; ++ls, gamma *= 0.5) {
      for (int k = 0; k < n; ++k) u_trial[k] = u[k] + gamma * qpr.z.segment<2>(2 * k);
      x_trial[0] = problem.x0;
      for (int k = 1; k <= n; ++k)
        x_trial[k] = MpcState::from(x[k].vec() + gamma * (affine[k] + sens[k] * qpr.z));
      const double merit =
          trajectory_cost(problem, x_trial, u_trial) + kMeritPenalty * defect_l1(problem, x_trial, u_trial);
      if (merit <= merit0 - kArmijo * gamma * std::max(pred, 0.0)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // no descent direction left; report best iterate
    u = u_trial;
    x = x_trial;
  }

  // Final exact rollout: shooting defects vanish and the reported cost is the
  // cost of the returned trajectory.
  x = rollout(problem.model, problem.x0, u);
  sol.x_seq = x;
  sol.u_seq.resize(n + 1);
  for (int k = 0; k < n; ++k) sol.u_seq[k] = TiltCommand::from(u[k]);
  sol.u_seq[n] = sol.u_seq[n - 1];
  sol.cost = trajectory_cost(problem, x, u);
  return sol;
}

TiltCommand MpcController::step(const MpcState& measured, const MpcState& goal) {
  MpcProblem pb;
  pb.x0 = measured;
  pb.x_ref = goal;
  pb.u_prev = u_prev_;
  pb.spec = spec_;
  pb.model = model_;

  const MpcSolution sol = solve(pb, last_);
  const bool usable = sol.status != SolveStatus::Infeasible && !sol.u_seq.empty() &&
                      (sol.status == SolveStatus::Converged || sol.iterations > 0);
  if (!usable) return u_prev_;

  u_prev_ = sol.u_seq[0];
  last_ = sol;
  return u_prev_;
}

}  // namespace trayctl
