#include "gridobs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace gridobs {

MapeResult mape(std::span<const double> actual, std::span<const double> estimated) {
  if (actual.size() != estimated.size()) throw InvalidArgument("MAPE series lengths differ");
  MapeResult out;
  double sum = 0.0;
  for (std::size_t t = 0; t < actual.size(); ++t) {
    if (actual[t] == 0.0) {
      ++out.excluded;
      continue;
    }
    sum += std::abs((actual[t] - estimated[t]) / actual[t]);
    ++out.samples;
  }
  if (out.samples == 0) throw InvalidArgument("MAPE undefined: every actual value is zero");
  out.value = 100.0 * sum / static_cast<double>(out.samples);
  return out;
}

double goodness_r(std::span<const double> actual, std::span<const double> estimated) {
  if (actual.size() != estimated.size() || actual.size() < 2)
    throw InvalidArgument("R needs two series of equal length >= 2");
  const double n = static_cast<double>(actual.size());
  const double ma = std::accumulate(actual.begin(), actual.end(), 0.0) / n;
  const double me = std::accumulate(estimated.begin(), estimated.end(), 0.0) / n;
  double sae = 0.0, saa = 0.0, see = 0.0;
  for (std::size_t t = 0; t < actual.size(); ++t) {
    const double da = actual[t] - ma, de = estimated[t] - me;
    sae += da * de;
    saa += da * da;
    see += de * de;
  }
  if (!(saa > 0.0) || !(see > 0.0)) throw NumericalError("R undefined: zero variance");
  return std::clamp(sae / std::sqrt(saa * see), -1.0, 1.0);
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InvalidArgument("label vectors differ in length");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, v] : joint) index += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical in structure
  return (index - expected) / (max_index - expected);
}

std::vector<double> baseline_uniform(double bill_kwh) {
  if (!(bill_kwh >= 0.0)) throw InvalidArgument("bill must be >= 0");
  return std::vector<double>(kHoursPerMonth, bill_kwh / kHoursPerMonth);
}

namespace {

void check_profile(const Profile24& p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("profile entries must be finite and >= 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("profile must have unit daily sum");
}

}  // namespace

std::vector<double> baseline_profile_scaling(double bill_kwh, const Profile24& profile) {
  if (!(bill_kwh >= 0.0)) throw InvalidArgument("bill must be >= 0");
  check_profile(profile);
  std::vector<double> out(kHoursPerMonth);
  const double daily = bill_kwh / kDaysPerMonth;
  for (int d = 0; d < kDaysPerMonth; ++d)
    for (int h = 0; h < kHoursPerDay; ++h) out[d * kHoursPerDay + h] = daily * profile[h];
  return out;
}

namespace {

using nlohmann::json;
constexpr int kMetricsSchema = 1;

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_double(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string serialize_metrics(const MetricsReport& report) {
  json doc;
  doc["schema_version"] = kMetricsSchema;
  doc["kind"] = "metrics_report";
  json est = json::object();
  for (const auto& [name, scopes] : report.estimators) {
    json s = json::object();
    for (const auto& [scope, m] : scopes) {
      json e;
      if (m.mape) {
        e["mape"] = m.mape->value;
        e["samples"] = m.mape->samples;
        e["excluded"] = m.mape->excluded;
      } else {
        e["mape"] = nullptr;
      }
      e["r"] = opt(m.r);
      s[scope] = e;
    }
    est[name] = s;
  }
  doc["estimators"] = est;
  doc["clustering_ari"] = report.clustering_ari;
  doc["identification_accuracy"] = opt(report.identification_accuracy);
  doc["identification_confident"] = opt(report.identification_confident);
  doc["voltage_magnitude_error"] = opt(report.voltage_magnitude_error);
  doc["voltage_phase_error"] = opt(report.voltage_phase_error);
  doc["extra"] = report.extra;
  return doc.dump(2);
}

MetricsReport parse_metrics(std::string_view text) {
  try {
    auto doc = json::parse(text);
    if (doc.at("schema_version").get<int>() != kMetricsSchema) throw ParseError("unsupported metrics schema");
    MetricsReport r;
    for (const auto& [name, scopes] : doc.at("estimators").items()) {
      for (const auto& [scope, e] : scopes.items()) {
        ScopeMetrics m;
        if (!e.at("mape").is_null())
          m.mape = MapeResult{e.at("mape").get<double>(), e.at("samples").get<std::size_t>(),
                              e.at("excluded").get<std::size_t>()};
        m.r = opt_double(e, "r");
        r.estimators[name][scope] = m;
      }
    }
    r.clustering_ari = doc.at("clustering_ari").get<std::map<std::string, double>>();
    r.identification_accuracy = opt_double(doc, "identification_accuracy");
    r.identification_confident = opt_double(doc, "identification_confident");
    r.voltage_magnitude_error = opt_double(doc, "voltage_magnitude_error");
    r.voltage_phase_error = opt_double(doc, "voltage_phase_error");
    r.extra = doc.at("extra").get<std::map<std::string, double>>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
}

void save_metrics(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize_metrics(report) << '\n';
}

MetricsReport load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_metrics(buf.str());
}

}  // namespace gridobs
