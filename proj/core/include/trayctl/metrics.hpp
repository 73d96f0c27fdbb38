// Episode evaluation metrics: steady-state error over the trailing window,
// settling time against a 1% band around it, and torque-based control effort.

#pragma once

#include <Eigen/Core>
#include <vector>

namespace trayctl {

struct MetricsRecord {
  double settling_time{0.0};          // s
  double steady_state_error{0.0};     // m, mean Euclidean norm (canonical)
  double steady_state_error_sq{0.0};  // m^2, mean squared norm (also logged)
  double control_effort{0.0};
  bool fell_off{false};
  double mean_cost{0.0};
  double mean_kkt{0.0};
  double mean_iterations{0.0};
};

// Mean of ||e_i|| over the last 20% of samples.
double steady_state_error(const std::vector<double>& error_norms);

// Mean of ||e_i||^2 over the same window.
double steady_state_error_sq(const std::vector<double>& error_norms);

// Smallest time from which every later error stays within 1.01 * e_ss;
// duration when the band is re-exceeded at the end.
double settling_time(const std::vector<double>& error_norms, double e_ss, double sample_rate);

// J = w_E sum ||tau_i||^2 dt + w_R sum ||(tau_i - tau_{i-1}) / dt||^2.
double control_effort(const std::vector<Eigen::VectorXd>& torques, double w_energy,
                      double w_rate, double dt);

}  // namespace trayctl
