#include "chp/io.hpp"

#include "chp/thermal_dynamics.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

namespace chp {

namespace {

using nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Locates entities in the source text so messages can point at a line.
class Context {
 public:
  Context(std::string text, std::string name) : text_(std::move(text)), name_(std::move(name)) {}

  int line_of_offset(std::size_t offset) const {
    return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(std::min(offset, text_.size())), '\n'));
  }
  int line_of_id(const std::string& id) const {
    if (id.empty()) return 0;
    const std::regex re("\"id\"\\s*:\\s*\"" + std::regex_replace(id, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)") + "\"");
    std::smatch m;
    if (!std::regex_search(text_, m, re)) return 0;
    return line_of_offset(static_cast<std::size_t>(m.position(0)));
  }
  std::string where(const std::string& id) const {
    const int line = line_of_id(id);
    return line > 0 ? name_ + ":" + std::to_string(line) + ": " : name_ + ": ";
  }
  [[noreturn]] void fail(const std::string& path, const std::string& id, const std::string& msg) const {
    throw InputError(where(id) + path + ": " + msg);
  }
  const std::string& name() const { return name_; }

 private:
  std::string text_;
  std::string name_;
};

class Obj {
 public:
  Obj(const json& j, std::string path, const Context& ctx, std::string id = {})
      : j_(j), path_(std::move(path)), ctx_(ctx), id_(std::move(id)) {
    if (!j_.is_object()) fail("expected an object");
    if (j_.contains("id") && j_["id"].is_string()) id_ = j_["id"].get<std::string>();
  }

  void allow(std::initializer_list<const char*> keys) const {
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items())
      if (!ok.count(k)) fail("unknown field '" + k + "'");
  }
  bool has(const char* key) const { return j_.contains(key); }
  const json& req(const char* key) const {
    if (!j_.contains(key)) fail(std::string("missing field '") + key + "'");
    return j_.at(key);
  }
  Obj obj(const char* key) const { return Obj(req(key), sub(key), ctx_, id_); }
  double num(const char* key) const {
    const json& v = req(key);
    if (!v.is_number()) fail(std::string("field '") + key + "' must be a number");
    return v.get<double>();
  }
  double num_or(const char* key, double dflt) const { return has(key) ? num(key) : dflt; }
  std::string str(const char* key) const {
    const json& v = req(key);
    if (!v.is_string()) fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  }
  std::string str_or(const char* key, const std::string& dflt) const { return has(key) ? str(key) : dflt; }
  // A number (constant over the horizon) or an array of N numbers.
  VectorXd series(const char* key, int n) const {
    const json& v = req(key);
    if (v.is_number()) return VectorXd::Constant(n, v.get<double>());
    if (!v.is_array()) fail(std::string("field '") + key + "' must be a number or an array");
    if (static_cast<int>(v.size()) != n)
      fail(std::string("field '") + key + "' has " + std::to_string(v.size()) + " entries, expected " + std::to_string(n));
    VectorXd out(n);
    for (int t = 0; t < n; ++t) {
      if (!v[static_cast<std::size_t>(t)].is_number()) fail(std::string("field '") + key + "' must hold numbers");
      out[t] = v[static_cast<std::size_t>(t)].get<double>();
    }
    return out;
  }
  VectorXd vector(const char* key) const {
    const json& v = req(key);
    if (!v.is_array()) fail(std::string("field '") + key + "' must be an array");
    VectorXd out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(std::string("field '") + key + "' must hold numbers");
      out[static_cast<Index>(i)] = v[i].get<double>();
    }
    return out;
  }
  std::vector<Obj> list(const char* key) const {
    const json& v = req(key);
    if (!v.is_array()) fail(std::string("field '") + key + "' must be an array");
    std::vector<Obj> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(v[i], sub(key) + "[" + std::to_string(i) + "]", ctx_, id_);
    return out;
  }
  std::optional<Interval> interval(const char* key) const {
    if (!has(key)) return std::nullopt;
    const Obj o = obj(key);
    o.allow({"min", "max"});
    return Interval{o.num("min"), o.num("max")};
  }
  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }
  [[noreturn]] void fail(const std::string& msg) const { ctx_.fail(path_, id_, msg); }

 private:
  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  const Context& ctx_;
  std::string id_;
};

HeatPipe read_pipe(const Obj& o, NetworkSide side, int n) {
  o.allow({"id", "from", "to", "length", "area", "resistance", "flow_min", "flow_max", "ambient", "dx"});
  HeatPipe p;
  p.id = o.str("id");
  p.from = o.str("from");
  p.to = o.str("to");
  p.side = side;
  p.length = o.num("length");
  p.area = o.num("area");
  p.resistance = o.num("resistance");
  p.flow_min = o.series("flow_min", n);
  p.flow_max = o.series("flow_max", n);
  p.ambient = o.series("ambient", n);
  if (o.has("dx")) p.dx = o.num("dx");
  return p;
}

EnergySource read_source(const Obj& o, int n) {
  o.allow({"id", "kind", "bus", "heat_node", "polytope", "ramp", "cost", "renewable"});
  EnergySource s;
  s.id = o.str("id");
  s.kind = o.str_or("kind", "thermal");
  s.bus = o.str_or("bus", "");
  s.heat_node = o.str_or("heat_node", "");
  for (const auto& r : o.list("polytope")) {
    r.allow({"B", "K", "v"});
    s.polytope.push_back({r.num("B"), r.num("K"), r.series("v", n)});
  }
  if (o.has("ramp")) {
    const Obj r = o.obj("ramp");
    r.allow({"down_e", "up_e", "down_h", "up_h"});
    s.ramp.down_e = r.num_or("down_e", s.ramp.down_e);
    s.ramp.up_e = r.num_or("up_e", s.ramp.up_e);
    s.ramp.down_h = r.num_or("down_h", s.ramp.down_h);
    s.ramp.up_h = r.num_or("up_h", s.ramp.up_h);
  }
  s.eta = MatrixXd::Zero(6, n);
  const Obj c = o.obj("cost");
  c.allow({"eta0", "eta1", "eta2", "eta3", "eta4", "eta5"});
  const char* names[] = {"eta0", "eta1", "eta2", "eta3", "eta4", "eta5"};
  for (int r = 0; r < 6; ++r)
    if (c.has(names[r])) s.eta.row(r) = c.series(names[r], n).transpose();
  if (o.has("renewable")) {
    const Obj r = o.obj("renewable");
    r.allow({"available", "curtailment_penalty"});
    s.renewable = Renewable{r.series("available", n), r.num_or("curtailment_penalty", 0.0)};
  }
  return s;
}

void read_initial(const Obj& o, DispatchInstance& in) {
  o.allow({"profiles", "steady_state"});
  const auto& heat = in.heat;
  if (o.has("profiles") == o.has("steady_state")) o.fail("give exactly one of 'profiles' or 'steady_state'");
  if (o.has("profiles")) {
    const Obj p = o.obj("profiles");
    for (const auto& [k, v] : p.raw().items())
      if (heat.pipe_index(k) < 0) p.fail("unknown pipe '" + k + "'");
    in.initial_profiles.clear();
    for (std::size_t j = 0; j < heat.pipe_count(); ++j) in.initial_profiles.push_back(p.vector(heat.pipe(j).id.c_str()));
    return;
  }
  const Obj s = o.obj("steady_state");
  s.allow({"supply_temperature", "flows"});
  const Obj temps = s.obj("supply_temperature");
  VectorXd src = VectorXd::Zero(static_cast<Index>(heat.node_count()));
  for (const auto& [k, v] : temps.raw().items()) {
    const int idx = heat.node_index(k);
    if (idx < 0 || heat.nodes[static_cast<std::size_t>(idx)].kind != NodeKind::source)
      temps.fail("'" + k + "' is not a source node");
    src[idx] = temps.num(k.c_str());
  }
  VectorXd flows(static_cast<Index>(heat.pipe_count()));
  for (std::size_t j = 0; j < heat.pipe_count(); ++j) {
    const auto& p = heat.pipe(j);
    flows[static_cast<Index>(j)] = p.flow_min.size() > 0 ? 0.5 * (p.flow_min[0] + p.flow_max[0]) : 0.0;
  }
  if (s.has("flows")) {
    const json& f = s.req("flows");
    if (f.is_string()) {
      if (f.get<std::string>() != "midpoint") s.fail("flows must be 'midpoint' or an object of pipe flows");
    } else {
      const Obj fo = s.obj("flows");
      for (const auto& [k, v] : fo.raw().items()) {
        const int j = heat.pipe_index(k);
        if (j < 0) fo.fail("unknown pipe '" + k + "'");
        flows[j] = fo.num(k.c_str());
      }
    }
  }
  in.initial_profiles = steady_state_profiles(in, flows, src);
}

std::string located(const Context& ctx, const std::string& violation) {
  static const std::regex entity(R"(^(?:node|pipe|bus|line|source) ([^:\s]+))");
  std::smatch m;
  if (std::regex_search(violation, m, entity)) return ctx.where(m[1].str()) + violation;
  return ctx.name() + ": " + violation;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read " + path.string());
  return f;
}

// Minimal CSV reader for the numeric tables written here: header row, comma separated.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::size_t columns) {
  std::ifstream f = open_in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns)
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns) + " columns");
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string& s, const std::filesystem::path& path) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InputError(path.string() + ": bad number '" + s + "'");
  return v;
}

int to_period(const std::string& s, int n, const std::filesystem::path& path) {
  const double v = to_double(s, path);
  if (v != std::floor(v) || v < 1 || v > n) throw InputError(path.string() + ": period '" + s + "' outside 1.." + std::to_string(n));
  return static_cast<int>(v) - 1;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

DispatchInstance parse_instance(const std::string& text, const std::string& name, std::optional<double> dx) {
  const Context ctx(text, name);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(name + ":" + std::to_string(ctx.line_of_offset(e.byte)) + ": parse error: " + e.what());
  }
  const Obj root(doc, "", ctx);
  root.allow({"name", "description", "horizon", "physics", "heat_network", "electric_network", "sources",
              "initial_temperatures"});
  DispatchInstance in;
  in.name = root.str_or("name", name);
  const Obj hz = root.obj("horizon");
  hz.allow({"N", "dt", "dx"});
  const double nn = hz.num("N");
  if (nn != std::floor(nn) || nn < 1) hz.fail("N must be a positive integer");
  in.periods = static_cast<int>(nn);
  in.dt = hz.num("dt");
  in.dx = dx ? *dx : hz.num("dx");
  if (root.has("physics")) {
    const Obj ph = root.obj("physics");
    ph.allow({"rho", "cp"});
    in.rho = ph.num_or("rho", in.rho);
    in.cp = ph.num_or("cp", in.cp);
  }
  const int n = in.periods;

  const Obj hn = root.obj("heat_network");
  hn.allow({"nodes", "supply_pipes", "return_pipes"});
  for (const auto& o : hn.list("nodes")) {
    o.allow({"id", "kind", "demand", "exchanger_flow", "supply_temp", "return_temp"});
    HeatNode k;
    k.id = o.str("id");
    const std::string kind = o.str("kind");
    if (kind == "source") k.kind = NodeKind::source;
    else if (kind == "load") k.kind = NodeKind::load;
    else o.fail("kind must be 'source' or 'load'");
    if (k.kind == NodeKind::load) k.demand = o.series("demand", n);
    else if (o.has("demand")) o.fail("source nodes carry no demand");
    k.exchanger_flow = o.interval("exchanger_flow");
    k.supply_temp = o.interval("supply_temp");
    k.return_temp = o.interval("return_temp");
    in.heat.nodes.push_back(std::move(k));
  }
  for (const auto& o : hn.list("supply_pipes")) in.heat.supply_pipes.push_back(read_pipe(o, NetworkSide::supply, n));
  for (const auto& o : hn.list("return_pipes")) in.heat.return_pipes.push_back(read_pipe(o, NetworkSide::ret, n));

  const Obj en = root.obj("electric_network");
  en.allow({"buses", "lines", "slack_bus"});
  for (const auto& o : en.list("buses")) {
    o.allow({"id", "demand"});
    in.electric.buses.push_back({o.str("id"), o.series("demand", n)});
  }
  if (en.has("lines"))
    for (const auto& o : en.list("lines")) {
      o.allow({"id", "from", "to", "reactance", "limit", "shift_factors"});
      Line l;
      l.id = o.str("id");
      l.from = o.str_or("from", "");
      l.to = o.str_or("to", "");
      l.reactance = o.num_or("reactance", 0.0);
      l.limit = o.series("limit", n);
      if (o.has("shift_factors")) l.shift_factors = o.vector("shift_factors");
      in.electric.lines.push_back(std::move(l));
    }
  in.electric.slack_bus = en.str_or("slack_bus", "");

  for (const auto& o : root.list("sources")) in.sources.push_back(read_source(o, n));

  // Steady initial profiles need a well-formed network; check it first.
  ValidationReport pre = validate(in);
  std::vector<std::string> structural;
  for (const auto& v : pre.violations)
    if (v.rfind("initial temperatures", 0) != 0) structural.push_back(v);
  auto report = [&](const std::vector<std::string>& vs) {
    std::string msg = "instance failed validation:";
    for (const auto& v : vs) msg += "\n  " + located(ctx, v);
    throw InputError(msg);
  };
  if (!structural.empty()) report(structural);
  read_initial(root.obj("initial_temperatures"), in);
  const ValidationReport rep = validate(in);
  if (!rep.ok()) report(rep.violations);
  return in;
}

DispatchInstance load_instance(const std::filesystem::path& path, std::optional<double> dx) {
  std::ifstream f = open_in(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_instance(ss.str(), path.string(), dx);
}

void write_flows_csv(std::ostream& os, const DispatchInstance& in, const FlowSchedule& m) {
  os << "pipe,period,kg_per_s\n";
  for (Index j = 0; j < m.pipes(); ++j)
    for (Index t = 0; t < m.periods(); ++t)
      os << in.heat.pipe(static_cast<std::size_t>(j)).id << ',' << t + 1 << ',' << format_number(m(j, t)) << '\n';
}

FlowSchedule read_flows_csv(const std::filesystem::path& path, const DispatchInstance& in) {
  const Index np = static_cast<Index>(in.heat.pipe_count());
  FlowSchedule m(np, in.periods);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(np, in.periods, false);
  for (const auto& row : read_csv(path, 3)) {
    const int j = in.heat.pipe_index(row[0]);
    if (j < 0) throw InputError(path.string() + ": unknown pipe '" + row[0] + "'");
    const int t = to_period(row[1], in.periods, path);
    m(j, t) = to_double(row[2], path);
    seen(j, t) = true;
  }
  if (!seen.all()) throw InputError(path.string() + ": every pipe needs a flow in every period");
  return m;
}

void write_source_temps_csv(std::ostream& os, const DispatchInstance& in, const MatrixXd& temps) {
  os << "node,period,temp_C\n";
  for (std::size_t k = 0; k < in.heat.node_count(); ++k) {
    if (in.heat.nodes[k].kind != NodeKind::source) continue;
    for (int t = 0; t < in.periods; ++t)
      os << in.heat.nodes[k].id << ',' << t + 1 << ',' << format_number(temps(static_cast<Index>(k), t)) << '\n';
  }
}

MatrixXd read_source_temps_csv(const std::filesystem::path& path, const DispatchInstance& in) {
  MatrixXd temps = MatrixXd::Zero(static_cast<Index>(in.heat.node_count()), in.periods);
  std::set<std::pair<int, int>> seen;
  for (const auto& row : read_csv(path, 3)) {
    const int k = in.heat.node_index(row[0]);
    if (k < 0 || in.heat.nodes[static_cast<std::size_t>(k)].kind != NodeKind::source)
      throw InputError(path.string() + ": '" + row[0] + "' is not a source node");
    const int t = to_period(row[1], in.periods, path);
    temps(k, t) = to_double(row[2], path);
    seen.insert({k, t});
  }
  for (std::size_t k = 0; k < in.heat.node_count(); ++k)
    if (in.heat.nodes[k].kind == NodeKind::source)
      for (int t = 0; t < in.periods; ++t)
        if (!seen.count({static_cast<int>(k), t}))
          throw InputError(path.string() + ": missing temperature for node " + in.heat.nodes[k].id);
  return temps;
}

void write_temperatures_csv(std::ostream& os, const DispatchInstance& in, const std::vector<MatrixXd>& pipe_temps) {
  os << "pipe,segment,period,temp_C\n";
  for (std::size_t j = 0; j < pipe_temps.size(); ++j) {
    const auto& tau = pipe_temps[j];
    for (Index t = 0; t < tau.cols(); ++t)
      for (Index i = 0; i < tau.rows(); ++i)
        os << in.heat.pipe(j).id << ',' << i << ',' << t << ',' << format_number(tau(i, t)) << '\n';
  }
}

void write_delivered_heat_csv(std::ostream& os, const DispatchInstance& in, const MatrixXd& heat) {
  os << "node,period,heat_W\n";
  for (std::size_t k = 0; k < in.heat.node_count(); ++k)
    for (int t = 0; t < in.periods; ++t)
      os << in.heat.nodes[k].id << ',' << t + 1 << ',' << format_number(heat(static_cast<Index>(k), t)) << '\n';
}

void write_schedules_csv(std::ostream& os, const DispatchInstance& in, const SystemState& st) {
  os << "source,period,p_W,h_W\n";
  for (std::size_t i = 0; i < in.sources.size(); ++i)
    for (int t = 0; t < in.periods; ++t)
      os << in.sources[i].id << ',' << t + 1 << ',' << format_number(st.p(static_cast<Index>(i), t)) << ','
         << format_number(st.h(static_cast<Index>(i), t)) << '\n';
}

void write_storage_proxy_csv(std::ostream& os, const VectorXd& proxy) {
  os << "period,generation_minus_load_W\n";
  for (Index t = 0; t < proxy.size(); ++t) os << t + 1 << ',' << format_number(proxy[t]) << '\n';
}

void write_comparison_csv(std::ostream& os, const ComparisonReport& rep) {
  os << "mode,feasible,status,cost,curtailment_Wh,curtailment_pct,wallclock_s,iterations\n";
  for (const auto& m : rep.modes)
    os << m.mode << ',' << (m.feasible ? 1 : 0) << ',' << m.status << ',' << format_number(m.cost) << ','
       << format_number(m.curtailment_wh) << ',' << format_number(m.curtailment_pct) << ','
       << format_number(m.wallclock_s) << ',' << m.iterations << '\n';
}

void write_generation_vs_load_csv(std::ostream& os, const DispatchInstance& in, const SystemState& st) {
  os << "period,heat_generation_W,heat_load_W,power_generation_W,power_load_W\n";
  for (int t = 0; t < in.periods; ++t) {
    double hg = 0.0, hl = 0.0, pg = 0.0, pl = 0.0;
    for (std::size_t i = 0; i < in.sources.size(); ++i) {
      hg += st.h(static_cast<Index>(i), t);
      pg += st.p(static_cast<Index>(i), t);
    }
    for (const auto& node : in.heat.nodes)
      if (node.kind == NodeKind::load) hl += node.demand[t];
    for (const auto& b : in.electric.buses) pl += b.demand[t];
    os << t + 1 << ',' << format_number(hg) << ',' << format_number(hl) << ',' << format_number(pg) << ','
       << format_number(pl) << '\n';
  }
}

void write_grid_purchase_csv(std::ostream& os, const DispatchInstance& in, const SystemState& st) {
  os << "period,grid_W,renewable_W,renewable_available_W\n";
  for (int t = 0; t < in.periods; ++t) {
    double grid = 0.0, ren = 0.0, avail = 0.0;
    for (std::size_t i = 0; i < in.sources.size(); ++i) {
      const auto& s = in.sources[i];
      if (s.kind == "grid") grid += st.p(static_cast<Index>(i), t);
      if (s.renewable) {
        ren += st.p(static_cast<Index>(i), t);
        avail += s.renewable->available[t];
      }
    }
    os << t + 1 << ',' << format_number(grid) << ',' << format_number(ren) << ',' << format_number(avail) << '\n';
  }
}

}  // namespace chp
