// Two-hidden-layer perceptron with tanh activations, plus Adam. Sized for
// the parameter-adaptation policy (tens of inputs, width 64), so plain dense
// Eigen math is plenty.

#pragma once

#include <Eigen/Core>
#include <vector>

#include "trayctl/rng.hpp"

namespace trayctl {

struct Mlp {
  int input{0};
  int hidden{0};
  int output{0};
  // params[0..5] = W1, b1, W2, b2, W3, b3 (biases stored as single columns)
  std::vector<Eigen::MatrixXd> params;

  static Mlp make(int input, int hidden, int output, Rng& rng);

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;

  struct Cache {
    Eigen::VectorXd x, a1, a2;  // input and post-tanh activations
  };
  Eigen::VectorXd forward(const Eigen::VectorXd& x, Cache& cache) const;

  // Accumulates dL/dparams into grad given dL/dout at a cached point.
  void backward(const Cache& cache, const Eigen::VectorXd& dout,
                std::vector<Eigen::MatrixXd>& grad) const;

  std::vector<Eigen::MatrixXd> zero_like() const;

  bool finite() const;
};

class Adam {
 public:
  Adam(double lr, const std::vector<Eigen::MatrixXd>& shape);

  void step(std::vector<Eigen::MatrixXd>& params, const std::vector<Eigen::MatrixXd>& grad);

  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double beta1_{0.9};
  double beta2_{0.999};
  double eps_{1e-8};
  int t_{0};
  std::vector<Eigen::MatrixXd> m_, v_;
};

}  // namespace trayctl
