#include "doctest.h"

#include "chp/io.hpp"
#include "chp/master.hpp"
#include "chp/thermal_dynamics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace chp;
using json = nlohmann::json;

namespace {

const std::filesystem::path data_dir = CHP_DATA_DIR;

json six_node_doc() {
  std::ifstream f(data_dir / "six_node.json");
  return json::parse(f);
}

std::string error_of(const json& doc) {
  try {
    parse_instance(doc.dump(2), "case.json");
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "chp_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("format_number reads back exactly") {
  for (double v : {0.1, 1.0 / 3.0, 2423122.8, -1e-300, 6.02214076e23, 0.0}) {
    const std::string s = format_number(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(42.0) == "42");
}

TEST_CASE("bundled instances load and validate") {
  for (const char* name : {"six_node.json", "six_node_96.json", "six_node_degenerate.json"}) {
    const auto in = load_instance(data_dir / name);
    CHECK(validate(in).ok());
    CHECK(in.heat.pipe_count() == 10);
    CHECK(in.sources.size() == 4);
  }
  const auto in = load_instance(data_dir / "six_node.json");
  CHECK(in.periods == 24);
  CHECK(in.dt == 3600.0);
  CHECK(in.heat.nodes[1].demand[0] == 2423122.8);
}

TEST_CASE("unknown fields are rejected") {
  auto doc = six_node_doc();
  doc["heat_network"]["supply_pipes"][0]["diameter"] = 0.5;
  const auto msg = error_of(doc);
  CHECK(msg.find("diameter") != std::string::npos);
  CHECK(msg.find("case.json:") != std::string::npos);

  auto top = six_node_doc();
  top["solver"] = "x";
  CHECK(error_of(top).find("solver") != std::string::npos);
}

TEST_CASE("inverted flow bounds name the pipe and its line") {
  auto doc = six_node_doc();
  auto& p = doc["heat_network"]["supply_pipes"][2];
  p["flow_min"] = 50.0;
  p["flow_max"] = 10.0;
  const auto msg = error_of(doc);
  CHECK(msg.find("P24") != std::string::npos);
  // Line of the pipe's id in the pretty-printed document.
  const std::string text = doc.dump(2);
  const auto at = text.find("\"id\": \"P24\"");
  const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(at), '\n');
  CHECK(msg.find("case.json:" + std::to_string(line) + ":") != std::string::npos);
}

TEST_CASE("empty horizon is rejected") {
  auto doc = six_node_doc();
  doc["horizon"]["N"] = 0;
  CHECK_FALSE(error_of(doc).empty());
}

TEST_CASE("malformed JSON reports a line") {
  const std::string text = "{\n  \"name\": \"x\",\n  \"horizon\": {\n}}}";
  CHECK_THROWS_WITH_AS(parse_instance(text, "bad.json"), doctest::Contains("bad.json:4:"), InputError);
}

TEST_CASE("flows.csv round trip reproduces simulated temperatures") {
  const auto in = load_instance(data_dir / "six_node.json");
  FlowSchedule m = initial_flow(in, {});
  for (Eigen::Index t = 0; t < m.periods(); ++t) m.matrix().col(t) *= 1.0 + 0.01 * std::sin(0.7 * double(t)) / 3.0;
  const auto path = scratch("flows.csv");
  {
    std::ofstream f(path);
    write_flows_csv(f, in, m);
  }
  const FlowSchedule back = read_flows_csv(path, in);
  CHECK(back.matrix() == m.matrix());

  Eigen::MatrixXd temps = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(in.heat.node_count()), in.periods, 75.0);
  const auto tpath = scratch("source_temps.csv");
  {
    std::ofstream f(tpath);
    write_source_temps_csv(f, in, temps);
  }
  const auto temps_back = read_source_temps_csv(tpath, in);
  const auto a = simulate_network(in, m, temps);
  const auto b = simulate_network(in, back, temps_back);
  for (std::size_t j = 0; j < a.pipe_temps.size(); ++j)
    CHECK((a.pipe_temps[j] - b.pipe_temps[j]).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("flows.csv reader rejects gaps and strangers") {
  const auto in = load_instance(data_dir / "six_node.json");
  const auto path = scratch("short.csv");
  {
    std::ofstream f(path);
    f << "pipe,period,kg_per_s\nP12,1,40\n";
  }
  CHECK_THROWS_AS(read_flows_csv(path, in), InputError);
  {
    std::ofstream f(path);
    f << "pipe,period,kg_per_s\nP99,1,40\n";
  }
  CHECK_THROWS_WITH_AS(read_flows_csv(path, in), doctest::Contains("P99"), InputError);
}

TEST_CASE("temperatures.csv layout") {
  const auto in = load_instance(data_dir / "six_node.json");
  std::vector<Eigen::MatrixXd> temps(in.heat.pipe_count(), Eigen::MatrixXd::Constant(2, 3, 50.5));
  std::ostringstream os;
  write_temperatures_csv(os, in, temps);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "pipe,segment,period,temp_C");
  std::getline(is, line);
  CHECK(line == "P12,0,0,50.5");
  const std::string out = os.str();
  const auto rows = std::count(out.begin(), out.end(), '\n');
  CHECK(rows == 1 + 6 * static_cast<long>(in.heat.pipe_count()));
}
