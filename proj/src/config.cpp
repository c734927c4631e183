#include "gridobs/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gridobs {

namespace {

using nlohmann::json;
constexpr int kConfigSchema = 1;

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw ParseError("config: '" + where + "' must be an object");
  std::set<std::string> keys(known.begin(), known.end());
  for (const auto& [k, v] : obj.items())
    if (!keys.count(k)) throw ParseError("config: unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

json per_type(const std::array<double, 3>& v) {
  json j;
  for (auto t : kCustomerTypes) j[std::string(to_string(t))] = v[index_of(t)];
  return j;
}

}  // namespace

void ExperimentConfig::apply_seed(std::uint64_t value) {
  seed = value;
  population.seed = value;
  mtsl.seed = value;
}

void ExperimentConfig::validate() const {
  for (int c : population.counts)
    if (c < 1) throw InvalidArgument("population counts must be > 0");
  for (const auto& cc : population.classes)
    if (cc.weekday < 1 || cc.weekend < 1) throw InvalidArgument("class counts must be > 0");
  if (population.months < 1) throw InvalidArgument("population months must be >= 1");
  if (holdout_months < 1 || holdout_months >= population.months)
    throw InvalidArgument("holdout_months must be in [1, months)");
  if (clustering.k_min < 2 || clustering.k_max < clustering.k_min) throw InvalidArgument("invalid k range");
  if (clustering.neighbor_rank < 1) throw InvalidArgument("neighbor_rank must be >= 1");
  mtsl.validate();
  if (!(rbl.threshold > 0.0 && rbl.threshold <= 1.0)) throw InvalidArgument("rbl threshold must be in (0, 1]");
  if (rbl.max_iterations < 1 || rbl.max_passes < 1) throw InvalidArgument("rbl limits must be >= 1");
  if (!(evaluation.pmu_noise >= 0.0)) throw InvalidArgument("pmu noise must be >= 0");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.population.counts = {100, 30, 15};
  c.population.months = 8;
  c.feeder = std::filesystem::path(GRIDOBS_DATA_DIR) / "feeder18.json";
  c.apply_seed(1);
  return c;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c = default_config();
  try {
    auto doc = json::parse(text);
    reject_unknown(doc,
                   {"schema_version", "seed", "output_dir", "feeder", "month_alignment", "population", "clustering",
                    "mtsl", "bcse", "rbl", "evaluation"},
                   "config");
    if (doc.contains("schema_version") && doc.at("schema_version").get<int>() != kConfigSchema)
      throw ParseError("config: unsupported schema_version");
    if (!doc.contains("seed")) throw ParseError("config: 'seed' is mandatory");
    c.apply_seed(doc.at("seed").get<std::uint64_t>());
    if (doc.contains("output_dir")) c.output_dir = doc.at("output_dir").get<std::string>();
    if (doc.contains("feeder")) c.feeder = doc.at("feeder").get<std::string>();
    if (doc.contains("month_alignment"))
      c.alignment = parse_month_alignment(doc.at("month_alignment").get<std::string>());

    if (doc.contains("population")) {
      const auto& p = doc.at("population");
      reject_unknown(p, {"counts", "classes", "months", "noise", "start", "mean_kwh"}, "population");
      for (auto t : kCustomerTypes) {
        const std::string name(to_string(t));
        if (p.contains("counts")) read(p.at("counts"), name.c_str(), c.population.counts[index_of(t)]);
        if (p.contains("mean_kwh")) read(p.at("mean_kwh"), name.c_str(), c.population.mean_kwh[index_of(t)]);
        if (p.contains("classes") && p.at("classes").contains(name)) {
          const auto& cc = p.at("classes").at(name);
          read(cc, "weekday", c.population.classes[index_of(t)].weekday);
          read(cc, "weekend", c.population.classes[index_of(t)].weekend);
        }
      }
      read(p, "months", c.population.months);
      read(p, "noise", c.population.noise);
      if (p.contains("start")) c.population.start = parse_iso8601(p.at("start").get<std::string>());
    }
    if (doc.contains("clustering")) {
      const auto& s = doc.at("clustering");
      reject_unknown(s, {"neighbor_rank", "k_min", "k_max", "min_cluster_size", "restarts", "max_iterations"},
                     "clustering");
      read(s, "neighbor_rank", c.clustering.neighbor_rank);
      read(s, "k_min", c.clustering.k_min);
      read(s, "k_max", c.clustering.k_max);
      read(s, "min_cluster_size", c.clustering.min_cluster_size);
      read(s, "restarts", c.clustering.kmeans.restarts);
      read(s, "max_iterations", c.clustering.kmeans.max_iterations);
    }
    if (doc.contains("mtsl")) {
      const auto& m = doc.at("mtsl");
      reject_unknown(m,
                     {"train_fraction", "validation_fraction", "test_fraction", "patience", "noise_sigma",
                      "learning_rate", "lr_decay", "max_epochs", "batch_size", "hidden", "holdout_months"},
                     "mtsl");
      read(m, "train_fraction", c.mtsl.train_fraction);
      read(m, "validation_fraction", c.mtsl.validation_fraction);
      read(m, "test_fraction", c.mtsl.test_fraction);
      read(m, "patience", c.mtsl.patience);
      read(m, "noise_sigma", c.mtsl.noise_sigma);
      read(m, "learning_rate", c.mtsl.learning_rate);
      read(m, "lr_decay", c.mtsl.lr_decay);
      read(m, "max_epochs", c.mtsl.max_epochs);
      read(m, "batch_size", c.mtsl.batch_size);
      read(m, "hidden", c.mtsl.hidden);
      read(m, "holdout_months", c.holdout_months);
    }
    if (doc.contains("bcse")) {
      const auto& b = doc.at("bcse");
      reject_unknown(b, {"tolerance", "max_iterations", "max_halvings", "monotonicity_slack", "pmu_weight", "pseudo_fraction", "pseudo_floor"},
                     "bcse");
      read(b, "tolerance", c.estimator.tolerance);
      read(b, "max_iterations", c.estimator.max_iterations);
      read(b, "max_halvings", c.estimator.max_halvings);
      read(b, "monotonicity_slack", c.estimator.monotonicity_slack);
      read(b, "pmu_weight", c.weights.pmu);
      read(b, "pseudo_fraction", c.weights.pseudo_fraction);
      read(b, "pseudo_floor", c.weights.pseudo_floor);
    }
    if (doc.contains("rbl")) {
      const auto& r = doc.at("rbl");
      reject_unknown(r, {"threshold", "max_iterations", "phi_window", "max_passes", "phi_epsilon"}, "rbl");
      read(r, "threshold", c.rbl.threshold);
      read(r, "max_iterations", c.rbl.max_iterations);
      read(r, "phi_window", c.rbl.phi_window);
      read(r, "max_passes", c.rbl.max_passes);
      read(r, "phi_epsilon", c.rbl.phi_epsilon);
    }
    if (doc.contains("evaluation")) {
      const auto& e = doc.at("evaluation");
      reject_unknown(e, {"pmu_noise", "slack_voltage"}, "evaluation");
      read(e, "pmu_noise", c.evaluation.pmu_noise);
      if (e.contains("slack_voltage")) {
        auto v = e.at("slack_voltage").get<std::array<double, 2>>();
        c.evaluation.slack_voltage = {v[0], v[1]};
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  c.rbl.estimator = c.estimator;
  c.rbl.weights = c.weights;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path_or_default) {
  if (path_or_default == "default") return default_config();
  std::ifstream in(path_or_default);
  if (!in) throw InvalidArgument("cannot open config file '" + path_or_default + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json doc;
  doc["schema_version"] = kConfigSchema;
  doc["seed"] = c.seed;
  doc["output_dir"] = c.output_dir.string();
  doc["feeder"] = c.feeder.string();
  doc["month_alignment"] = std::string(to_string(c.alignment));
  json counts, classes;
  for (auto t : kCustomerTypes) {
    const std::string name(to_string(t));
    counts[name] = c.population.counts[index_of(t)];
    classes[name] = {{"weekday", c.population.classes[index_of(t)].weekday},
                     {"weekend", c.population.classes[index_of(t)].weekend}};
  }
  doc["population"] = {{"counts", counts},
                       {"classes", classes},
                       {"months", c.population.months},
                       {"noise", c.population.noise},
                       {"start", format_iso8601(c.population.start)},
                       {"mean_kwh", per_type(c.population.mean_kwh)}};
  doc["clustering"] = {{"neighbor_rank", c.clustering.neighbor_rank},
                       {"k_min", c.clustering.k_min},
                       {"k_max", c.clustering.k_max},
                       {"min_cluster_size", c.clustering.min_cluster_size},
                       {"restarts", c.clustering.kmeans.restarts},
                       {"max_iterations", c.clustering.kmeans.max_iterations}};
  doc["mtsl"] = {{"train_fraction", c.mtsl.train_fraction},
                 {"validation_fraction", c.mtsl.validation_fraction},
                 {"test_fraction", c.mtsl.test_fraction},
                 {"patience", c.mtsl.patience},
                 {"noise_sigma", c.mtsl.noise_sigma},
                 {"learning_rate", c.mtsl.learning_rate},
                 {"lr_decay", c.mtsl.lr_decay},
                 {"max_epochs", c.mtsl.max_epochs},
                 {"batch_size", c.mtsl.batch_size},
                 {"hidden", c.mtsl.hidden},
                 {"holdout_months", c.holdout_months}};
  doc["bcse"] = {{"tolerance", c.estimator.tolerance},
                 {"max_iterations", c.estimator.max_iterations},
                 {"max_halvings", c.estimator.max_halvings},
                 {"monotonicity_slack", c.estimator.monotonicity_slack},
                 {"pmu_weight", c.weights.pmu},
                 {"pseudo_fraction", c.weights.pseudo_fraction},
                 {"pseudo_floor", c.weights.pseudo_floor}};
  doc["rbl"] = {{"threshold", c.rbl.threshold},
                {"max_iterations", c.rbl.max_iterations},
                {"phi_window", c.rbl.phi_window},
                {"max_passes", c.rbl.max_passes},
                {"phi_epsilon", c.rbl.phi_epsilon}};
  doc["evaluation"] = {{"pmu_noise", c.evaluation.pmu_noise},
                       {"slack_voltage", {c.evaluation.slack_voltage.real(), c.evaluation.slack_voltage.imag()}}};
  return doc.dump(2);
}

}  // namespace gridobs
