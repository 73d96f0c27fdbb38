#include "trayctl/metrics.hpp"

#include <cmath>

namespace trayctl {
namespace {

size_t tail_start(size_t n) { return static_cast<size_t>(std::floor(0.8 * static_cast<double>(n))); }

}  // namespace

double steady_state_error(const std::vector<double>& error_norms) {
  const size_t n = error_norms.size();
  if (n == 0) return 0.0;
  const size_t start = tail_start(n);
  double sum = 0.0;
  for (size_t i = start; i < n; ++i) sum += error_norms[i];
  return sum / static_cast<double>(n - start);
}

double steady_state_error_sq(const std::vector<double>& error_norms) {
  const size_t n = error_norms.size();
  if (n == 0) return 0.0;
  const size_t start = tail_start(n);
  double sum = 0.0;
  for (size_t i = start; i < n; ++i) sum += error_norms[i] * error_norms[i];
  return sum / static_cast<double>(n - start);
}

double settling_time(const std::vector<double>& error_norms, double e_ss, double sample_rate) {
  const double eps = 1.01 * e_ss;
  const size_t n = error_norms.size();
  // Smallest i_s such that ||e_i|| <= eps for all i >= i_s.
  size_t i_s = n;
  for (size_t i = n; i-- > 0;) {
    if (error_norms[i] > eps) break;
    i_s = i;
  }
  if (i_s == n) return static_cast<double>(n) / sample_rate;  // never settles
  return static_cast<double>(i_s) / sample_rate;
}

double control_effort(const std::vector<Eigen::VectorXd>& torques, double w_energy,
                      double w_rate, double dt) {
  double energy = 0.0;
  double rate = 0.0;
  for (size_t i = 0; i < torques.size(); ++i) {
    energy += torques[i].squaredNorm() * dt;
    if (i > 0) rate += ((torques[i] - torques[i - 1]) / dt).squaredNorm();
  }
  return w_energy * energy + w_rate * rate;
}

}  // namespace trayctl
