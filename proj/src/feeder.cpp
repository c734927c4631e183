#include "gridobs/feeder.hpp"

#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include "json.hpp"

namespace gridobs {

using nlohmann::json;

FeederModel FeederModel::create(std::vector<Node> nodes, std::vector<Branch> branches,
                                int slack_node, double base_kva, double base_kv,
                                std::vector<FeederCustomer> customers) {
  if (nodes.empty()) throw TopologyError("feeder has no nodes");
  if (!(base_kva > 0.0) || !(base_kv > 0.0)) throw ParseError("feeder bases must be positive");

  FeederModel f;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (!std::isfinite(n.load_kw) || !std::isfinite(n.load_kvar))
      throw ParseError("non-finite load at node " + std::to_string(n.id));
    if (!f.index_.emplace(n.id, i).second)
      throw TopologyError("duplicate node id " + std::to_string(n.id));
  }
  auto slack = f.index_.find(slack_node);
  if (slack == f.index_.end())
    throw TopologyError("slack node " + std::to_string(slack_node) + " does not exist");

  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adjacency(nodes.size());
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const auto& br = branches[b];
    auto from = f.index_.find(br.from_node);
    auto to = f.index_.find(br.to_node);
    if (from == f.index_.end() || to == f.index_.end())
      throw TopologyError("branch " + std::to_string(b) + " references an unknown node");
    if (br.from_node == br.to_node)
      throw TopologyError("branch " + std::to_string(b) + " is a self loop");
    if (!(br.r >= 0.0) || !std::isfinite(br.x) || !std::isfinite(br.r))
      throw ParseError("branch " + std::to_string(b) + " has invalid impedance");
    adjacency[from->second].emplace_back(to->second, b);
    adjacency[to->second].emplace_back(from->second, b);
  }

  const std::size_t n = nodes.size();
  f.slack_index_ = slack->second;
  f.parent_.assign(n, -1);
  f.children_.assign(n, {});
  f.upstream_.assign(branches.size(), 0);
  f.downstream_.assign(branches.size(), 0);
  std::vector<bool> seen(n, false);
  std::queue<std::size_t> frontier;
  frontier.push(f.slack_index_);
  seen[f.slack_index_] = true;
  while (!frontier.empty()) {
    auto u = frontier.front();
    frontier.pop();
    f.order_.push_back(u);
    for (auto [v, b] : adjacency[u]) {
      if (f.parent_[u] == static_cast<std::ptrdiff_t>(b)) continue;
      if (seen[v])
        throw TopologyError("cycle detected through branch " + std::to_string(b));
      seen[v] = true;
      f.parent_[v] = static_cast<std::ptrdiff_t>(b);
      f.upstream_[b] = u;
      f.downstream_[b] = v;
      f.children_[u].push_back(b);
      frontier.push(v);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!seen[i]) throw TopologyError("node " + std::to_string(nodes[i].id) + " is disconnected");
  if (branches.size() != n - 1) throw TopologyError("feeder is not radial");

  for (std::size_t c = 0; c < customers.size(); ++c) {
    if (!f.customer_index_.emplace(customers[c].id, c).second)
      throw ParseError("duplicate customer id " + customers[c].id);
    if (!(customers[c].avg_kw >= 0.0) || !(customers[c].power_factor > 0.0) ||
        customers[c].power_factor > 1.0)
      throw ParseError("invalid customer " + customers[c].id);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& id : nodes[i].customer_ids) {
      if (!customers.empty() && !f.customer_index_.count(id))
        throw ParseError("node " + std::to_string(nodes[i].id) + " lists undeclared customer " + id);
      if (!f.customer_node_.emplace(id, i).second)
        throw ParseError("customer " + id + " attached to more than one node");
    }
  }

  f.nodes_ = std::move(nodes);
  f.branches_ = std::move(branches);
  f.customers_ = std::move(customers);
  f.slack_node_ = slack_node;
  f.base_kva_ = base_kva;
  f.base_kv_ = base_kv;
  return f;
}

std::size_t FeederModel::node_index(int id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw InvalidArgument("unknown node id " + std::to_string(id));
  return it->second;
}

std::optional<std::size_t> FeederModel::parent_branch(std::size_t n) const {
  if (parent_[n] < 0) return std::nullopt;
  return static_cast<std::size_t>(parent_[n]);
}

const FeederCustomer& FeederModel::customer(std::string_view id) const {
  auto it = customer_index_.find(std::string(id));
  if (it == customer_index_.end()) throw InvalidArgument("unknown customer " + std::string(id));
  return customers_[it->second];
}

std::size_t FeederModel::customer_node(std::string_view id) const {
  auto it = customer_node_.find(std::string(id));
  if (it == customer_node_.end())
    throw InvalidArgument("customer " + std::string(id) + " is not attached to the feeder");
  return it->second;
}

std::vector<Phasor> FeederModel::nominal_loads_pu() const {
  std::vector<Phasor> loads(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    loads[i] = Phasor(nodes_[i].load_kw, nodes_[i].load_kvar) / base_kva_;
  return loads;
}

namespace {

FeederModel from_json(const json& doc) {
  try {
    const auto& bases = doc.at("bases");
    std::vector<Node> nodes;
    for (const auto& jn : doc.at("nodes")) {
      Node n;
      n.id = jn.at("id").get<int>();
      n.load_kw = jn.value("load_kw", 0.0);
      n.load_kvar = jn.value("load_kvar", 0.0);
      if (jn.contains("customers")) n.customer_ids = jn.at("customers").get<std::vector<std::string>>();
      nodes.push_back(std::move(n));
    }
    std::vector<Branch> branches;
    for (const auto& jb : doc.at("branches")) {
      branches.push_back({jb.at("from").get<int>(), jb.at("to").get<int>(), jb.at("r").get<double>(),
                          jb.at("x").get<double>()});
    }
    std::vector<FeederCustomer> customers;
    if (doc.contains("customers")) {
      for (const auto& jc : doc.at("customers")) {
        customers.push_back({jc.at("id").get<std::string>(),
                             parse_customer_type(jc.at("type").get<std::string>()),
                             jc.at("avg_kw").get<double>(), jc.value("power_factor", 1.0)});
      }
    }
    return FeederModel::create(std::move(nodes), std::move(branches), doc.at("slack").get<int>(),
                               bases.at("kva").get<double>(), bases.at("kv").get<double>(),
                               std::move(customers));
  } catch (const json::exception& e) {
    throw ParseError(std::string("feeder file: ") + e.what());
  }
}

}  // namespace

FeederModel parse_feeder(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("feeder file: ") + e.what());
  }
  return from_json(doc);
}

FeederModel load_feeder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open feeder file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_feeder(buf.str());
}

std::string serialize_feeder(const FeederModel& feeder) {
  json doc;
  doc["schema_version"] = 1;
  doc["bases"] = {{"kva", feeder.base_kva()}, {"kv", feeder.base_kv()}};
  doc["slack"] = feeder.slack_node();
  doc["nodes"] = json::array();
  for (const auto& n : feeder.nodes()) {
    doc["nodes"].push_back({{"id", n.id},
                            {"load_kw", n.load_kw},
                            {"load_kvar", n.load_kvar},
                            {"customers", n.customer_ids}});
  }
  doc["branches"] = json::array();
  for (const auto& b : feeder.branches())
    doc["branches"].push_back({{"from", b.from_node}, {"to", b.to_node}, {"r", b.r}, {"x", b.x}});
  doc["customers"] = json::array();
  for (const auto& c : feeder.customers()) {
    doc["customers"].push_back({{"id", c.id},
                                {"type", std::string(to_string(c.type))},
                                {"avg_kw", c.avg_kw},
                                {"power_factor", c.power_factor}});
  }
  return doc.dump(2);
}

void save_feeder(const FeederModel& feeder, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize_feeder(feeder) << '\n';
}

std::vector<Phasor> forward_voltages(const FeederModel& feeder,
                                     std::span<const Phasor> branch_currents,
                                     Phasor slack_voltage) {
  std::vector<Phasor> v(feeder.node_count());
  v[feeder.slack_index()] = slack_voltage;
  for (auto n : feeder.sweep_order()) {
    for (auto b : feeder.child_branches(n))
      v[feeder.downstream(b)] = v[n] - feeder.impedance(b) * branch_currents[b];
  }
  return v;
}

Phasor head_current(const FeederModel& feeder, std::span<const Phasor> branch_currents) {
  Phasor total{};
  for (auto b : feeder.child_branches(feeder.slack_index())) total += branch_currents[b];
  return total;
}

PowerFlowResult power_flow(const FeederModel& feeder, std::span<const Phasor> loads_pu,
                           Phasor slack_voltage, PowerFlowOptions options) {
  const auto n = feeder.node_count();
  if (loads_pu.size() != n) throw InvalidArgument("power_flow: one load per node required");
  if (!(std::abs(slack_voltage) > 0.0)) throw InvalidArgument("power_flow: zero slack voltage");

  PowerFlowResult result;
  result.voltages.assign(n, slack_voltage);
  result.branch_currents.assign(feeder.branch_count(), Phasor{});
  const auto order = feeder.sweep_order();

  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    // backward: accumulate load currents towards the slack
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      auto node = *it;
      auto parent = feeder.parent_branch(node);
      if (!parent) continue;
      Phasor current = std::conj(loads_pu[node] / result.voltages[node]);
      for (auto c : feeder.child_branches(node)) current += result.branch_currents[c];
      result.branch_currents[*parent] = current;
    }
    // forward: update voltages from the slack outwards
    double max_change = 0.0;
    for (auto node : order) {
      for (auto b : feeder.child_branches(node)) {
        auto down = feeder.downstream(b);
        Phasor updated = result.voltages[node] - feeder.impedance(b) * result.branch_currents[b];
        max_change = std::max(max_change, std::abs(updated - result.voltages[down]));
        result.voltages[down] = updated;
      }
    }
    if (!std::isfinite(max_change)) break;
    if (max_change < options.tolerance) {
      result.sweeps = sweep;
      // currents consistent with the final voltages
      for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto node = *it;
        auto parent = feeder.parent_branch(node);
        if (!parent) continue;
        Phasor current = std::conj(loads_pu[node] / result.voltages[node]);
        for (auto c : feeder.child_branches(node)) current += result.branch_currents[c];
        result.branch_currents[*parent] = current;
      }
      return result;
    }
  }
  throw ConvergenceError("power flow did not converge in " + std::to_string(options.max_sweeps) +
                         " sweeps (infeasible loading?)");
}

}  // namespace gridobs
