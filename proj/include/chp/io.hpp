#pragma once

#include "chp/harness.hpp"
#include "chp/master.hpp"
#include "chp/network_model.hpp"
#include "chp/thermal_dynamics.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace chp {

/// Shortest decimal that reads back to the same double.
std::string format_number(double v);

/// Parses and validates an instance document. Unknown fields are rejected; messages
/// carry `name:line:` prefixes where the offending entity can be located. `dx`
/// replaces the file's segment length; steady initial profiles follow it, explicit
/// profiles must already match.
DispatchInstance parse_instance(const std::string& text, const std::string& name = "<instance>",
                                std::optional<double> dx = std::nullopt);
DispatchInstance load_instance(const std::filesystem::path& path, std::optional<double> dx = std::nullopt);

/// flows.csv: pipe,period,kg_per_s with 1-based periods.
void write_flows_csv(std::ostream& os, const DispatchInstance& instance, const FlowSchedule& flows);
FlowSchedule read_flows_csv(const std::filesystem::path& path, const DispatchInstance& instance);

/// source_temps.csv: node,period,temp_C for source nodes. Returns nodes x N.
void write_source_temps_csv(std::ostream& os, const DispatchInstance& instance, const Eigen::MatrixXd& temps);
Eigen::MatrixXd read_source_temps_csv(const std::filesystem::path& path, const DispatchInstance& instance);

/// temperatures.csv: pipe,segment,period,temp_C; period 0 holds the initial profile.
void write_temperatures_csv(std::ostream& os, const DispatchInstance& instance,
                            const std::vector<Eigen::MatrixXd>& pipe_temps);
/// delivered_heat.csv: node,period,heat_W.
void write_delivered_heat_csv(std::ostream& os, const DispatchInstance& instance, const Eigen::MatrixXd& node_heat);
/// schedules.csv: source,period,p_W,h_W.
void write_schedules_csv(std::ostream& os, const DispatchInstance& instance, const SystemState& state);
/// storage_proxy.csv: period,generation_minus_load_W.
void write_storage_proxy_csv(std::ostream& os, const Eigen::VectorXd& proxy);
/// comparison.csv: one row per mode.
void write_comparison_csv(std::ostream& os, const ComparisonReport& report);
/// generation_vs_load.csv: period,heat_generation_W,heat_load_W,power_generation_W,power_load_W.
void write_generation_vs_load_csv(std::ostream& os, const DispatchInstance& instance, const SystemState& state);
/// grid_purchase.csv: period,grid_W,renewable_W,renewable_available_W.
void write_grid_purchase_csv(std::ostream& os, const DispatchInstance& instance, const SystemState& state);

}  // namespace chp
