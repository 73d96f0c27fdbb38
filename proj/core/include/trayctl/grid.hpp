// Configuration-grid sweeps: shapes x masses x frictions x controllers, each
// averaged over radially sampled goals, with a worker pool and deterministic
// ordered aggregation.

#pragma once

#include <string>
#include <vector>

#include "trayctl/episode.hpp"

namespace trayctl {

struct GridSpec {
  std::vector<Shape> shapes{Shape::Cube, Shape::Cylinder, Shape::Sphere};
  std::vector<double> masses{1.0, 2.0};
  std::vector<double> frictions{0.05, 0.10, 0.20};
  std::vector<ControllerKind> controllers{ControllerKind::Pmpc, ControllerKind::Rmpc,
                                          ControllerKind::Lmpc};
  int goals_per_config{20};
  double radius_lo{0.08};
  double radius_hi{0.12};
  uint64_t seed{0};
  int jobs{1};
  EpisodeSpec base{};  // controller/object/goal fields are overwritten per task
};

struct GridRow {
  Shape shape{Shape::Cube};
  double mass{1.0};
  double friction{0.1};
  ControllerKind controller{ControllerKind::Pmpc};
  int episodes{0};
  int fell{0};
  double mean_settling{0.0};
  double mean_sserr{0.0};
  double mean_effort{0.0};
};

struct GridReport {
  std::vector<GridRow> rows;
  bool any_failure{false};
};

GridReport run_grid(const GridSpec& spec);

void write_report_csv(const std::string& path, const GridReport& report);

// Aligned text table: one row per object configuration, controller column
// groups for settling time, steady-state error and control effort.
void write_report_table(const std::string& path, const GridReport& report);

void apply_config(const Config& cfg, GridSpec& spec);

}  // namespace trayctl
