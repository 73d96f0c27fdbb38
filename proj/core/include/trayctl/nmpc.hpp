// Nonlinear MPC over tray tilt commands: direct multiple shooting with a
// Gauss-Newton SQP. States are condensed out of each QP subproblem through
// the linearized dynamics; tilt magnitude and rate bounds are enforced
// exactly as QP inequality rows, velocity bounds as a smooth quadratic
// penalty.

#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "trayctl/nominal.hpp"
#include "trayctl/tilt.hpp"

namespace trayctl {

struct MpcSpec {
  int horizon{20};
  double ts{0.002};
  Eigen::Matrix2d q_p{250.0 * Eigen::Matrix2d::Identity()};
  Eigen::Matrix2d q_v{2.0 * Eigen::Matrix2d::Identity()};
  Eigen::Matrix4d q_terminal{};  // over (p, v) error; defaulted in ctor
  Eigen::Matrix4d q_r{0.2 * Eigen::Matrix4d::Identity()};  // over [u; du]
  double u_max{0.6};     // rad
  double du_max{0.01};   // rad per step
  double nu_min{-0.5};   // m/s
  double nu_max{0.5};    // m/s
  double w_nu{1e3};      // velocity bound penalty weight
  int max_iterations{50};
  double kkt_tolerance{1e-6};

  MpcSpec() {
    q_terminal.setZero();
    q_terminal.topLeftCorner<2, 2>() = 10.0 * q_p;
    q_terminal.bottomRightCorner<2, 2>() = 10.0 * q_v;
  }
};

struct MpcProblem {
  MpcState x0{};
  MpcState x_ref{};  // velocity reference is zero at the goal
  TiltCommand u_prev{};
  MpcSpec spec{};
  TransitionFn model{};
};

enum class SolveStatus { Converged, MaxIter, Infeasible };

struct MpcSolution {
  std::vector<TiltCommand> u_seq;  // N+1 entries, u[N] == u[N-1]
  std::vector<MpcState> x_seq;     // N+1 entries, exact rollout of u_seq
  double cost{0.0};
  double kkt_residual{0.0};
  int iterations{0};
  SolveStatus status{SolveStatus::Converged};
};

// e is the stacked (p, v) tracking error at one stage.
double stage_cost(const Eigen::Vector4d& e, const Eigen::Vector2d& u, const Eigen::Vector2d& du,
                  const MpcSpec& spec);

// du_0 = u_0 - u_prev; du_k = u_k - u_{k-1}.
std::vector<Eigen::Vector2d> delta_u(const std::vector<TiltCommand>& u_seq,
                                     const TiltCommand& u_prev);

MpcSolution solve(const MpcProblem& problem,
                  const std::optional<MpcSolution>& warm_start = std::nullopt);

// Receding-horizon execution: returns u_0, records it as u_prev, shifts the
// warm start. Falls back to holding the previous command on solver failure.
class MpcController {
 public:
  MpcController(MpcSpec spec, TransitionFn model) : spec_(std::move(spec)), model_(std::move(model)) {}

  TiltCommand step(const MpcState& measured, const MpcState& goal);

  const std::optional<MpcSolution>& last_solution() const { return last_; }
  const TiltCommand& u_prev() const { return u_prev_; }
  TransitionFn& model() { return model_; }
  const MpcSpec& spec() const { return spec_; }

  void reset() {
    u_prev_ = {};
    last_.reset();
  }

 private:
  MpcSpec spec_;
  TransitionFn model_;
  TiltCommand u_prev_{};
  std::optional<MpcSolution> last_{};
};

}  // namespace trayctl
