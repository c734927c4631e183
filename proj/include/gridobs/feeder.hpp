#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gridobs/common.hpp"

namespace gridobs {

struct Node {
  int id = 0;
  double load_kw = 0.0;
  double load_kvar = 0.0;
  std::vector<std::string> customer_ids;
};

// Series impedance in per-unit on the feeder bases.
struct Branch {
  int from_node = 0;
  int to_node = 0;
  double r = 0.0;
  double x = 0.0;
};

// A billed customer attached to a feeder node. `avg_kw` is the nominal
// mean demand used to size the customer's synthetic consumption.
struct FeederCustomer {
  std::string id;
  CustomerType type = CustomerType::Residential;
  double avg_kw = 0.0;
  double power_factor = 1.0;
};

/// Radial single-phase-equivalent feeder. Immutable once created; the
/// factory validates radiality and connectivity and caches the sweep order
/// and the orientation of every branch away from the slack node.
class FeederModel {
 public:
  static FeederModel create(std::vector<Node> nodes, std::vector<Branch> branches, int slack_node,
                            double base_kva, double base_kv,
                            std::vector<FeederCustomer> customers = {});

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<FeederCustomer>& customers() const { return customers_; }
  int slack_node() const { return slack_node_; }
  std::size_t slack_index() const { return slack_index_; }
  double base_kva() const { return base_kva_; }
  double base_kv() const { return base_kv_; }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t branch_count() const { return branches_.size(); }
  std::size_t node_index(int id) const;

  // Node indices in breadth-first order from the slack (slack first).
  std::span<const std::size_t> sweep_order() const { return order_; }
  // Node index on the slack side / far side of branch `b`.
  std::size_t upstream(std::size_t b) const { return upstream_[b]; }
  std::size_t downstream(std::size_t b) const { return downstream_[b]; }
  // Branch feeding node `n`; empty for the slack.
  std::optional<std::size_t> parent_branch(std::size_t n) const;
  std::span<const std::size_t> child_branches(std::size_t n) const { return children_[n]; }
  Phasor impedance(std::size_t b) const { return {branches_[b].r, branches_[b].x}; }

  const FeederCustomer& customer(std::string_view id) const;
  // Node index the customer is attached to.
  std::size_t customer_node(std::string_view id) const;

  // Node loads (P + jQ) in per-unit from the load_kw/load_kvar fields.
  std::vector<Phasor> nominal_loads_pu() const;

 private:
  FeederModel() = default;

  std::vector<Node> nodes_;
  std::vector<Branch> branches_;
  std::vector<FeederCustomer> customers_;
  int slack_node_ = 0;
  std::size_t slack_index_ = 0;
  double base_kva_ = 1.0;
  double base_kv_ = 1.0;

  std::unordered_map<int, std::size_t> index_;
  std::unordered_map<std::string, std::size_t> customer_index_;
  std::unordered_map<std::string, std::size_t> customer_node_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> upstream_;
  std::vector<std::size_t> downstream_;
  std::vector<std::ptrdiff_t> parent_;
  std::vector<std::vector<std::size_t>> children_;
};

// Feeder file: JSON object with `bases`, `slack`, `nodes`, `branches` and an
// optional `customers` section. See data/README.md.
FeederModel load_feeder(const std::filesystem::path& path);
FeederModel parse_feeder(std::string_view text);
std::string serialize_feeder(const FeederModel& feeder);
void save_feeder(const FeederModel& feeder, const std::filesystem::path& path);

struct PowerFlowOptions {
  double tolerance = 1e-10;  // max |dV| between sweeps, pu
  int max_sweeps = 100;
};

struct PowerFlowResult {
  std::vector<Phasor> voltages;         // per node index
  std::vector<Phasor> branch_currents;  // per branch index, upstream -> downstream
  int sweeps = 0;
};

/// Backward/forward sweep on constant-power loads. `loads_pu[n]` is the
/// complex demand at node index n; the slack entry is ignored.
/// Throws ConvergenceError when the sweep does not settle.
PowerFlowResult power_flow(const FeederModel& feeder, std::span<const Phasor> loads_pu,
                           Phasor slack_voltage, PowerFlowOptions options = {});

// Total current leaving the slack bus.
Phasor head_current(const FeederModel& feeder, std::span<const Phasor> branch_currents);

// V_down = V_up - Z_b I_b from the slack outwards.
std::vector<Phasor> forward_voltages(const FeederModel& feeder,
                                     std::span<const Phasor> branch_currents,
                                     Phasor slack_voltage);

}  // namespace gridobs
