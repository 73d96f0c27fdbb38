#include "trayctl/mlp.hpp"

#include <cmath>

namespace trayctl {
namespace {

Eigen::MatrixXd xavier(int rows, int cols, Rng& rng) {
  const double scale = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

Mlp Mlp::make(int input, int hidden, int output, Rng& rng) {
  Mlp net;
  net.input = input;
  net.hidden = hidden;
  net.output = output;
  net.params.push_back(xavier(hidden, input, rng));
  net.params.push_back(Eigen::MatrixXd::Zero(hidden, 1));
  net.params.push_back(xavier(hidden, hidden, rng));
  net.params.push_back(Eigen::MatrixXd::Zero(hidden, 1));
  // Small final layer keeps the initial policy close to "no update".
  net.params.push_back(0.01 * xavier(output, hidden, rng));
  net.params.push_back(Eigen::MatrixXd::Zero(output, 1));
  return net;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  Cache c;
  return forward(x, c);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x, Cache& cache) const {
  cache.x = x;
  cache.a1 = (params[0] * x + params[1].col(0)).array().tanh();
  cache.a2 = (params[2] * cache.a1 + params[3].col(0)).array().tanh();
  return params[4] * cache.a2 + params[5].col(0);
}

void Mlp::backward(const Cache& cache, const Eigen::VectorXd& dout,
                   std::vector<Eigen::MatrixXd>& grad) const {
  grad[4].noalias() += dout * cache.a2.transpose();
  grad[5].col(0) += dout;
  Eigen::VectorXd d2 = params[4].transpose() * dout;
  d2.array() *= 1.0 - cache.a2.array().square();
  grad[2].noalias() += d2 * cache.a1.transpose();
  grad[3].col(0) += d2;
  Eigen::VectorXd d1 = params[2].transpose() * d2;
  d1.array() *= 1.0 - cache.a1.array().square();
  grad[0].noalias() += d1 * cache.x.transpose();
  grad[1].col(0) += d1;
}

std::vector<Eigen::MatrixXd> Mlp::zero_like() const {
  std::vector<Eigen::MatrixXd> g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
  return g;
}

bool Mlp::finite() const {
  for (const auto& p : params)
    if (!p.allFinite()) return false;
  return true;
}

Adam::Adam(double lr, const std::vector<Eigen::MatrixXd>& shape) : lr_(lr) {
  for (const auto& p : shape) {
    m_.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
    v_.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(std::vector<Eigen::MatrixXd>& params, const std::vector<Eigen::MatrixXd>& grad) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i].cwiseProduct(grad[i]);
    const Eigen::MatrixXd mhat = m_[i] / bc1;
    const Eigen::MatrixXd vhat = v_[i] / bc2;
    params[i] -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
  }
}

}  // namespace trayctl
