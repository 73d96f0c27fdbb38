#include "trayctl/grid.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "trayctl/rng.hpp"

namespace trayctl {
namespace {

struct Task {
  size_t config_index;
  size_t controller_index;
  int goal_index;
  EpisodeSpec spec;
};

std::string fmt(double v, int prec) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

}  // namespace

GridReport run_grid(const GridSpec& grid) {
  struct ConfigKey {
    Shape shape;
    double mass;
    double friction;
  };
  std::vector<ConfigKey> configs;
  for (Shape shape : grid.shapes)
    for (double mass : grid.masses)
      for (double friction : grid.frictions) configs.push_back({shape, mass, friction});

  std::vector<Task> tasks;
  for (size_t ci = 0; ci < configs.size(); ++ci) {
    for (size_t ki = 0; ki < grid.controllers.size(); ++ki) {
      for (int g = 0; g < grid.goals_per_config; ++g) {
        Task task;
        task.config_index = ci;
        task.controller_index = ki;
        task.goal_index = g;
        task.spec = grid.base;
        task.spec.object = ObjectConfig::make(configs[ci].shape, configs[ci].mass,
                                              configs[ci].friction);
        task.spec.controller = grid.controllers[ki];
        // Evenly spaced goal angles; radius jitter derived from the seed.
        const uint64_t tag = (ci << 16) ^ (ki << 8) ^ static_cast<uint64_t>(g);
        Rng rng(derive_seed(grid.seed, tag));
        const double angle =
            2.0 * 3.141592653589793 * static_cast<double>(g) / grid.goals_per_config;
        const double radius = rng.uniform(grid.radius_lo, grid.radius_hi);
        task.spec.goal = {radius * std::cos(angle), radius * std::sin(angle)};
        task.spec.seed = derive_seed(grid.seed, tag ^ 0xabcdef);
        tasks.push_back(std::move(task));
      }
    }
  }

  std::vector<MetricsRecord> results(tasks.size());
  std::atomic<size_t> next{0};
  const int jobs = std::max(1, grid.jobs);
  const auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      results[i] = run_episode(tasks[i].spec).metrics;
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Deterministic fold ordered by (config, controller), independent of
  // completion order.
  GridReport report;
  for (size_t ci = 0; ci < configs.size(); ++ci) {
    for (size_t ki = 0; ki < grid.controllers.size(); ++ki) {
      GridRow row;
      row.shape = configs[ci].shape;
      row.mass = configs[ci].mass;
      row.friction = configs[ci].friction;
      row.controller = grid.controllers[ki];
      for (size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].config_index != ci || tasks[i].controller_index != ki) continue;
        const MetricsRecord& m = results[i];
        ++row.episodes;
        if (m.fell_off) {
          ++row.fell;
          report.any_failure = true;
        }
        row.mean_settling += m.settling_time;
        row.mean_sserr += m.steady_state_error;
        row.mean_effort += m.control_effort;
      }
      if (row.episodes > 0) {
        row.mean_settling /= row.episodes;
        row.mean_sserr /= row.episodes;
        row.mean_effort /= row.episodes;
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_report_csv(const std::string& path, const GridReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open report file: " + path);
  out << "shape,mass,friction,controller,episodes,fell,settling_time,steady_state_error,"
         "control_effort\n";
  for (const auto& r : report.rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%s,%d,%d,%.17g,%.17g,%.17g\n",
                  to_string(r.shape), r.mass, r.friction, to_string(r.controller), r.episodes,
                  r.fell, r.mean_settling, r.mean_sserr, r.mean_effort);
    out << buf;
  }
}

void write_report_table(const std::string& path, const GridReport& report) {
  // Collect the controller order as first seen.
  std::vector<ControllerKind> ctrls;
  for (const auto& r : report.rows) {
    bool seen = false;
    for (ControllerKind c : ctrls) seen = seen || c == r.controller;
    if (!seen) ctrls.push_back(r.controller);
  }

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open report file: " + path);
  std::ostringstream head;
  head << "Object    Mass  Friction";
  const char* metric_names[3] = {"Settling Time(s)", "Steady State Error(m)", "Control Effort"};
  for (const char* metric : metric_names) {
    head << " | " << metric << ":";
    for (ControllerKind c : ctrls) {
      std::string n = to_string(c);
      for (auto& ch : n) ch = static_cast<char>(std::toupper(ch));
      head << " " << n;
    }
  }
  out << head.str() << "\n";
  out << std::string(head.str().size(), '-') << "\n";

  // One line per object configuration.
  for (size_t i = 0; i < report.rows.size(); i += ctrls.size()) {
    const GridRow& first = report.rows[i];
    char prefix[64];
    std::snprintf(prefix, sizeof(prefix), "%-9s %-5.3g %-8.3g", to_string(first.shape),
                  first.mass, first.friction);
    out << prefix;
    for (int metric = 0; metric < 3; ++metric) {
      out << " |";
      for (size_t k = 0; k < ctrls.size(); ++k) {
        const GridRow& r = report.rows[i + k];
        double v = metric == 0 ? r.mean_settling : metric == 1 ? r.mean_sserr : r.mean_effort;
        out << " " << fmt(v, metric == 1 ? 4 : 2);
      }
    }
    out << "\n";
  }

  int fell_total = 0;
  for (const auto& r : report.rows) fell_total += r.fell;
  if (fell_total > 0) out << "episodes ended off-tray: " << fell_total << "\n";
}

void apply_config(const Config& cfg, GridSpec& spec) {
  const auto parse_list = [](const std::string& text) {
    std::vector<std::string> items;
    std::string cur;
    for (char c : text) {
      if (c == ',') {
        items.push_back(cur);
        cur.clear();
      } else if (!isspace(static_cast<unsigned char>(c))) {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) items.push_back(cur);
    return items;
  };

  if (cfg.has("grid", "shapes")) {
    spec.shapes.clear();
    for (const auto& s : parse_list(cfg.get_str("grid", "shapes", "")))
      spec.shapes.push_back(shape_from_string(s));
  }
  if (cfg.has("grid", "masses")) {
    spec.masses.clear();
    for (const auto& s : parse_list(cfg.get_str("grid", "masses", "")))
      spec.masses.push_back(std::stod(s));
  }
  if (cfg.has("grid", "frictions")) {
    spec.frictions.clear();
    for (const auto& s : parse_list(cfg.get_str("grid", "frictions", "")))
      spec.frictions.push_back(std::stod(s));
  }
  if (cfg.has("grid", "controllers")) {
    spec.controllers.clear();
    for (const auto& s : parse_list(cfg.get_str("grid", "controllers", "")))
      spec.controllers.push_back(controller_from_string(s));
  }
  spec.goals_per_config = cfg.get_int("grid", "goals", spec.goals_per_config);
  spec.radius_lo = cfg.get_double("grid", "radius_lo", spec.radius_lo);
  spec.radius_hi = cfg.get_double("grid", "radius_hi", spec.radius_hi);
  spec.seed = static_cast<uint64_t>(cfg.get_int("grid", "seed", static_cast<int>(spec.seed)));
  spec.jobs = cfg.get_int("grid", "jobs", spec.jobs);
  spec.base.duration = cfg.get_double("grid", "duration", spec.base.duration);
  spec.base.sample_rate = cfg.get_double("grid", "sample_rate", spec.base.sample_rate);
  if (cfg.has("grid", "tier")) spec.base.tier = tier_from_string(cfg.get_str("grid", "tier", ""));
  apply_config(cfg, spec.base);
}

}  // namespace trayctl
