#include "trayctl/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <vector>

namespace trayctl {
namespace {

constexpr double kStepTol = 1e-11;
constexpr double kRatioTol = 1e-12;
constexpr double kMultTol = 1e-9;

struct Working {
  std::vector<int> rows;
  std::vector<int> sides;  // +1 upper active, -1 lower active

  bool contains(int row) const {
    for (int r : rows)
      if (r == row) return true;
    return false;
  }
};

// Equality-constrained step via the null-space method: p = Z pz with
// C_W p = 0, reduced Hessian solved by Cholesky.
Eigen::VectorXd eqp_step(const Eigen::MatrixXd& H, const Eigen::VectorXd& grad,
                         const Eigen::MatrixXd& Cw) {
  const int n = static_cast<int>(H.rows());
  const int k = static_cast<int>(Cw.rows());
  if (k == 0) return H.llt().solve(-grad);
  if (k >= n) return Eigen::VectorXd::Zero(n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Cw.transpose());
  const Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd z = q.rightCols(n - k);
  const Eigen::MatrixXd hr = z.transpose() * H * z;
  const Eigen::VectorXd pz = hr.llt().solve(-z.transpose() * grad);
  return z * pz;
}

Eigen::VectorXd multipliers(const Eigen::VectorXd& grad, const Eigen::MatrixXd& Cw) {
  // Least-squares solve of C_W' mu = -grad.
  return Cw.transpose().colPivHouseholderQr().solve(-grad);
}

}  // namespace

QpResult solve_qp_activeset(const QpProblem& qp, int max_iterations) {
  const int n = static_cast<int>(qp.H.rows());
  const int m = static_cast<int>(qp.C.rows());

  QpResult res;
  res.z = qp.z0.size() == n ? qp.z0 : Eigen::VectorXd::Zero(n);
  res.lambda = Eigen::VectorXd::Zero(m);

  Working w;
  // Activate rows the start point already sits on, so the first step moves
  // along the boundary instead of immediately bouncing off it.
  for (int i = 0; i < m; ++i) {
    const double ci = qp.C.row(i) * res.z;
    if (qp.ub[i] < kQpInf && ci >= qp.ub[i] - kRatioTol) {
      w.rows.push_back(i);
      w.sides.push_back(+1);
    } else if (qp.lb[i] > -kQpInf && ci <= qp.lb[i] + kRatioTol) {
      w.rows.push_back(i);
      w.sides.push_back(-1);
    }
    if (static_cast<int>(w.rows.size()) >= n) break;
  }

  for (res.iterations = 0; res.iterations < max_iterations; ++res.iterations) {
    Eigen::MatrixXd cw(static_cast<int>(w.rows.size()), n);
    for (size_t i = 0; i < w.rows.size(); ++i) cw.row(static_cast<int>(i)) = qp.C.row(w.rows[i]);

    const Eigen::VectorXd grad = qp.H * res.z + qp.g;
    const Eigen::VectorXd p = eqp_step(qp.H, grad, cw);

    if (p.lpNorm<Eigen::Infinity>() < kStepTol) {
      if (w.rows.empty()) {
        res.optimal = true;
        break;
      }
      const Eigen::VectorXd mu = multipliers(grad, cw);
      int worst = -1;
      double worst_val = -kMultTol;
      for (size_t i = 0; i < w.rows.size(); ++i) {
        const double lam = w.sides[i] * mu[static_cast<int>(i)];
        if (lam < worst_val) {
          worst_val = lam;
          worst = static_cast<int>(i);
        }
      }
      if (worst < 0) {
        for (size_t i = 0; i < w.rows.size(); ++i)
          res.lambda[w.rows[i]] = mu[static_cast<int>(i)];
        res.optimal = true;
        break;
      }
      w.rows.erase(w.rows.begin() + worst);
      w.sides.erase(w.sides.begin() + worst);
      continue;
    }

    // Ratio test against rows not in the working set.
    double alpha = 1.0;
    int block_row = -1;
    int block_side = 0;
    for (int i = 0; i < m; ++i) {
      if (w.contains(i)) continue;
      const double di = qp.C.row(i) * p;
      const double ci = qp.C.row(i) * res.z;
      if (di > kRatioTol && qp.ub[i] < kQpInf) {
        const double a = (qp.ub[i] - ci) / di;
        if (a < alpha) {
          alpha = std::max(a, 0.0);
          block_row = i;
          block_side = +1;
        }
      } else if (di < -kRatioTol && qp.lb[i] > -kQpInf) {
        const double a = (qp.lb[i] - ci) / di;
        if (a < alpha) {
          alpha = std::max(a, 0.0);
          block_row = i;
          block_side = -1;
        }
      }
    }

    res.z += alpha * p;
    if (block_row >= 0 && static_cast<int>(w.rows.size()) < n) {
      w.rows.push_back(block_row);
      w.sides.push_back(block_side);
    }
  }

  // Report the true KKT residual of the returned point.
  const Eigen::VectorXd grad = qp.H * res.z + qp.g;
  Eigen::VectorXd stat = grad;
  for (size_t i = 0; i < w.rows.size(); ++i)
    stat += res.lambda[w.rows[i]] * qp.C.row(w.rows[i]).transpose();
  double primal = 0.0;
  for (int i = 0; i < m; ++i) {
    const double ci = qp.C.row(i) * res.z;
    primal = std::max(primal, ci - qp.ub[i]);
    primal = std::max(primal, qp.lb[i] - ci);
  }
  res.kkt_residual = std::max(stat.lpNorm<Eigen::Infinity>(), std::max(primal, 0.0));
  return res;
}

}  // namespace trayctl
