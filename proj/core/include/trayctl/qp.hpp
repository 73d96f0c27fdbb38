// Dense primal active-set solver for strictly convex QPs with two-sided
// linear inequality rows:
//
//   min  1/2 z'Hz + g'z   s.t.  lb <= C z <= ub
//
// H must be positive definite. The start point z0 must be feasible. Problem
// sizes here are tens of variables, so every working-set change refactorizes.

#pragma once

#include <Eigen/Core>

namespace trayctl {

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd C;   // may have zero rows (unconstrained)
  Eigen::VectorXd lb;  // use +-kQpInf for one-sided rows
  Eigen::VectorXd ub;
  Eigen::VectorXd z0;
};

inline constexpr double kQpInf = 1e30;

struct QpResult {
  Eigen::VectorXd z;
  Eigen::VectorXd lambda;  // per-row multiplier, >= 0 upper side, <= 0 lower side
  double kkt_residual{0.0};
  int iterations{0};
  bool optimal{false};
};

QpResult solve_qp_activeset(const QpProblem& qp, int max_iterations = 300);

}  // namespace trayctl
