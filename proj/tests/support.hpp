#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gridobs/feeder.hpp"

namespace gridobs::testing {

// Random radial feeder: node 0 is the slack, every other node hangs off an
// earlier one. Loads are returned in per-unit.
struct RandomFeeder {
  FeederModel feeder;
  std::vector<Phasor> loads;
};

inline RandomFeeder random_feeder(std::mt19937_64& rng, int nodes) {
  std::uniform_real_distribution<double> r(0.0005, 0.004), x(0.0005, 0.004), p(0.005, 0.06), pf(0.85, 1.0);
  std::vector<Node> ns;
  std::vector<Branch> bs;
  for (int i = 0; i < nodes; ++i) ns.push_back({i * 10 + 3, 0.0, 0.0, {}});
  for (int i = 1; i < nodes; ++i) {
    std::uniform_int_distribution<int> parent(0, i - 1);
    bs.push_back({ns[parent(rng)].id, ns[i].id, r(rng), x(rng)});
  }
  std::shuffle(bs.begin(), bs.end(), rng);
  RandomFeeder out{FeederModel::create(ns, bs, ns[0].id, 1000.0, 12.47), {}};
  out.loads.assign(static_cast<std::size_t>(nodes), Phasor{});
  for (int i = 1; i < nodes; ++i) {
    double pp = p(rng), f = pf(rng);
    out.loads[out.feeder.node_index(ns[i].id)] = {pp, pp * std::tan(std::acos(f))};
  }
  return out;
}

inline FeederModel two_node(double r = 0.01, double x = 0.01) {
  return FeederModel::create({{0, 0, 0, {}}, {1, 0, 0, {}}}, {{0, 1, r, x}}, 0, 1000.0, 12.47);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace gridobs::testing
