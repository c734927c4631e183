#include "gridobs/mtsl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gridobs/parallel.hpp"
#include "json.hpp"

namespace gridobs {

std::string MtslKey::label() const {
  return std::string(to_string(type)) + "_" + std::string(to_string(day_kind)) + "_" +
         std::to_string(class_id);
}

namespace {

struct PairBuffer {
  std::vector<double> parent, previous, target;

  void add(double p, double prev, double t) {
    parent.push_back(p);
    previous.push_back(prev);
    target.push_back(t);
  }

  Dataset to_dataset() const {
    Dataset d;
    const auto n = static_cast<Eigen::Index>(target.size());
    d.inputs.resize(n, 2);
    d.targets.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      d.inputs(i, 0) = parent[i];
      d.inputs(i, 1) = previous[i];
      d.targets(i) = target[i];
    }
    return d;
  }
};

// Clamp at zero and rescale to `parent`; falls back to an even split when
// every raw output is zero.
template <std::size_t N>
void renormalize(std::array<double, N>& children, double parent) {
  double total = 0.0;
  for (auto& c : children) {
    c = std::max(0.0, c);
    total += c;
  }
  if (parent <= 0.0) {
    children.fill(0.0);
    return;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    children.fill(parent / static_cast<double>(N));
    return;
  }
  for (auto& c : children) c = parent * (c / total);
}

std::uint64_t stream_base(const MtslKey& key) {
  return ((static_cast<std::uint64_t>(index_of(key.type)) * 2 + index_of(key.day_kind)) * 1000 +
          static_cast<std::uint64_t>(key.class_id)) * 100;
}

}  // namespace

LayerSets build_training_sets(std::span<const CustomerRecord* const> members, MonthAlignment alignment,
                              const MonthFilter& use_month) {
  std::array<PairBuffer, kWeeksPerMonth> weekly;
  std::array<PairBuffer, kDaysPerWeek> daily;
  std::array<std::array<PairBuffer, kHoursPerDay>, 2> hourly;
  LayerSets sets;

  for (const auto* rec : members) {
    auto months = complete_months(*rec, alignment);
    std::size_t used = 0;
    for (const auto& window : months) {
      if (use_month && !use_month(window)) continue;
      ++used;
      auto readings = month_readings(*rec, window.start);
      double month_total = std::accumulate(readings.begin(), readings.end(), 0.0);
      double prev_week = 0.0;
      for (int w = 0; w < kWeeksPerMonth; ++w) {
        auto week = readings.subspan(static_cast<std::size_t>(w) * kDaysPerWeek * kHoursPerDay,
                                     kDaysPerWeek * kHoursPerDay);
        double week_total = std::accumulate(week.begin(), week.end(), 0.0);
        weekly[w].add(month_total, prev_week, week_total);
        prev_week = week_total;
        double prev_day = 0.0;
        for (int d = 0; d < kDaysPerWeek; ++d) {
          auto day = week.subspan(static_cast<std::size_t>(d) * kHoursPerDay, kHoursPerDay);
          double day_total = std::accumulate(day.begin(), day.end(), 0.0);
          daily[d].add(week_total, prev_day, day_total);
          prev_day = day_total;
          HourStamp day_start = window.start + (static_cast<HourStamp>(w) * kDaysPerWeek + d) * kHoursPerDay;
          auto& bank = hourly[index_of(day_kind_of(day_start))];
          double prev_hour = 0.0;
          for (int h = 0; h < kHoursPerDay; ++h) {
            bank[h].add(day_total, prev_hour, day[h]);
            prev_hour = day[h];
          }
        }
      }
    }
    if (used == 0) throw InvalidArgument("customer " + rec->id + " has no complete 28-day month for training");
    sets.months += used;
  }

  for (int i = 0; i < kWeeksPerMonth; ++i) sets.weekly[i] = weekly[i].to_dataset();
  for (int i = 0; i < kDaysPerWeek; ++i) sets.daily[i] = daily[i].to_dataset();
  for (int k = 0; k < 2; ++k)
    for (int h = 0; h < kHoursPerDay; ++h) sets.hourly[k][h] = hourly[k][h].to_dataset();
  return sets;
}

MtslModel train_mtsl(const MtslKey& key, std::span<const CustomerRecord* const> members,
                     const TrainConfig& config, MonthAlignment alignment, const MonthFilter& use_month) {
  config.validate();
  auto sets = build_training_sets(members, alignment, use_month);
  if (sets.months < 20)
    throw InvalidArgument("class " + key.label() + " has " + std::to_string(sets.months) +
                          " member months; at least 20 are needed");

  MtslModel model;
  model.key = key;
  model.training_months = sets.months;
  model.reference_energy = sets.weekly[0].inputs.col(0).mean();

  struct Job {
    const Dataset* data;
    Regressor* slot;
    int layer;
    std::uint64_t stream;
  };
  std::vector<Job> jobs;
  const auto base = stream_base(key);
  for (int i = 0; i < kWeeksPerMonth; ++i) jobs.push_back({&sets.weekly[i], &model.weekly[i], 0, base + i});
  for (int i = 0; i < kDaysPerWeek; ++i) jobs.push_back({&sets.daily[i], &model.daily[i], 1, base + 10 + i});
  for (int k = 0; k < 2; ++k)
    for (int h = 0; h < kHoursPerDay; ++h)
      jobs.push_back({&sets.hourly[k][h], &model.hourly[k][h], 2, base + 20 + 24 * k + h});

  std::vector<double> rmse(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    auto trained = train_regressor(*jobs[j].data, config, jobs[j].stream);
    *jobs[j].slot = std::move(trained.model);
    rmse[j] = trained.log.test_rmse;
  });

  std::array<int, 3> counts{};
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto& m = model.test_metrics[jobs[j].layer];
    m.rmse += rmse[j];
    m.max_rmse = std::max(m.max_rmse, rmse[j]);
    if (counts[jobs[j].layer]++ == 0) m.pairs = static_cast<std::size_t>(jobs[j].data->targets.size());
  }
  for (int l = 0; l < 3; ++l) model.test_metrics[l].rmse /= counts[l];
  return model;
}

Disaggregation disaggregate(const MtslModel& model, const MonthlyBill& bill) {
  if (!(bill.energy_kwh >= 0.0) || !std::isfinite(bill.energy_kwh))
    throw InvalidArgument("bill energy must be finite and >= 0");
  Disaggregation out;
  out.hourly.assign(kHoursPerMonth, 0.0);
  const double scale =
      model.reference_energy > 0.0 && bill.energy_kwh > 0.0 ? model.reference_energy / bill.energy_kwh : 1.0;
  const double total = bill.energy_kwh * scale;

  double prev = 0.0;
  for (int w = 0; w < kWeeksPerMonth; ++w) {
    out.weekly[w] = std::max(0.0, model.weekly[w].predict(total, prev));
    prev = out.weekly[w];
  }
  renormalize(out.weekly, total);

  for (int w = 0; w < kWeeksPerMonth; ++w) {
    std::array<double, kDaysPerWeek> days{};
    prev = 0.0;
    for (int d = 0; d < kDaysPerWeek; ++d) {
      days[d] = std::max(0.0, model.daily[d].predict(out.weekly[w], prev));
      prev = days[d];
    }
    renormalize(days, out.weekly[w]);
    for (int d = 0; d < kDaysPerWeek; ++d) out.daily[w * kDaysPerWeek + d] = days[d];
  }

  for (int day = 0; day < kDaysPerMonth; ++day) {
    HourStamp start = bill.start + static_cast<HourStamp>(day) * kHoursPerDay;
    const auto& bank = model.hourly[index_of(day_kind_of(start))];
    std::array<double, kHoursPerDay> hours{};
    prev = 0.0;
    for (int h = 0; h < kHoursPerDay; ++h) {
      hours[h] = std::max(0.0, bank[h].predict(out.daily[day], prev));
      prev = hours[h];
    }
    renormalize(hours, out.daily[day]);
    std::copy(hours.begin(), hours.end(), out.hourly.begin() + day * kHoursPerDay);
  }
  if (scale != 1.0) {
    for (auto& v : out.weekly) v /= scale;
    for (auto& v : out.daily) v /= scale;
    for (auto& v : out.hourly) v /= scale;
  }
  return out;
}

std::vector<double> splice_day_kinds(const MtslModel& weekday_model, const MtslModel& weekend_model,
                                     const MonthlyBill& bill) {
  auto wd = disaggregate(weekday_model, bill).hourly;
  auto we = disaggregate(weekend_model, bill).hourly;
  std::vector<double> out(kHoursPerMonth);
  double total = 0.0;
  for (int t = 0; t < kHoursPerMonth; ++t) {
    bool weekend = day_kind_of(bill.start + t) == DayKind::Weekend;
    out[t] = weekend ? we[t] : wd[t];
    total += out[t];
  }
  if (total > 0.0)
    for (auto& v : out) v *= bill.energy_kwh / total;
  return out;
}

namespace {

using nlohmann::json;
constexpr int kModelSchema = 1;

json regressor_to_json(const Regressor& r) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  Eigen::VectorXd flat = r.parameters();
  return {{"inputs", r.input_width()},
          {"hidden", r.hidden_width()},
          {"input_mean", vec(r.input_mean)},
          {"input_scale", vec(r.input_scale)},
          {"target_mean", r.target_mean},
          {"target_scale", r.target_scale},
          {"parameters", vec(flat)}};
}

Regressor regressor_from_json(const json& j) {
  Regressor r(j.at("inputs").get<int>(), j.at("hidden").get<int>());
  auto mean = j.at("input_mean").get<std::vector<double>>();
  auto scale = j.at("input_scale").get<std::vector<double>>();
  auto params = j.at("parameters").get<std::vector<double>>();
  if (mean.size() != static_cast<std::size_t>(r.input_width()) || scale.size() != mean.size())
    throw ParseError("model file: normalisation width mismatch");
  r.input_mean = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  r.input_scale = Eigen::Map<Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  for (double s : scale)
    if (!(s > 0.0)) throw ParseError("model file: normalisation scales must be positive");
  r.target_mean = j.at("target_mean").get<double>();
  r.target_scale = j.at("target_scale").get<double>();
  if (!(r.target_scale > 0.0)) throw ParseError("model file: normalisation scales must be positive");
  r.set_parameters(Eigen::Map<Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size())));
  return r;
}

}  // namespace

std::string serialize_model(const MtslModel& model) {
  json doc;
  doc["schema_version"] = kModelSchema;
  doc["kind"] = "mtsl_model";
  doc["type"] = std::string(to_string(model.key.type));
  doc["day_kind"] = std::string(to_string(model.key.day_kind));
  doc["class_id"] = model.key.class_id;
  doc["training_months"] = model.training_months;
  doc["reference_energy"] = model.reference_energy;
  doc["weekly"] = json::array();
  for (const auto& r : model.weekly) doc["weekly"].push_back(regressor_to_json(r));
  doc["daily"] = json::array();
  for (const auto& r : model.daily) doc["daily"].push_back(regressor_to_json(r));
  for (auto kind : kDayKinds) {
    auto& arr = doc["hourly"][std::string(to_string(kind))];
    arr = json::array();
    for (const auto& r : model.hourly[index_of(kind)]) arr.push_back(regressor_to_json(r));
  }
  doc["test_metrics"] = json::array();
  for (const auto& m : model.test_metrics)
    doc["test_metrics"].push_back({{"rmse", m.rmse}, {"max_rmse", m.max_rmse}, {"pairs", m.pairs}});
  return doc.dump();
}

MtslModel parse_model(std::string_view text) {
  try {
    auto doc = json::parse(text);
    if (doc.at("schema_version").get<int>() != kModelSchema) throw ParseError("unsupported model schema");
    MtslModel model;
    model.key.type = parse_customer_type(doc.at("type").get<std::string>());
    model.key.day_kind = parse_day_kind(doc.at("day_kind").get<std::string>());
    model.key.class_id = doc.at("class_id").get<int>();
    model.training_months = doc.at("training_months").get<std::size_t>();
    model.reference_energy = doc.at("reference_energy").get<double>();
    const auto& weekly = doc.at("weekly");
    const auto& daily = doc.at("daily");
    if (weekly.size() != kWeeksPerMonth || daily.size() != kDaysPerWeek)
      throw ParseError("model file: wrong layer fan-out");
    for (int i = 0; i < kWeeksPerMonth; ++i) model.weekly[i] = regressor_from_json(weekly[i]);
    for (int i = 0; i < kDaysPerWeek; ++i) model.daily[i] = regressor_from_json(daily[i]);
    for (auto kind : kDayKinds) {
      const auto& arr = doc.at("hourly").at(std::string(to_string(kind)));
      if (arr.size() != kHoursPerDay) throw ParseError("model file: wrong layer fan-out");
      for (int h = 0; h < kHoursPerDay; ++h) model.hourly[index_of(kind)][h] = regressor_from_json(arr[h]);
    }
    const auto& metrics = doc.at("test_metrics");
    for (std::size_t l = 0; l < 3 && l < metrics.size(); ++l) {
      model.test_metrics[l].rmse = metrics[l].at("rmse").get<double>();
      model.test_metrics[l].max_rmse = metrics[l].at("max_rmse").get<double>();
      model.test_metrics[l].pairs = metrics[l].at("pairs").get<std::size_t>();
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
}

void save_model(const MtslModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize_model(model) << '\n';
}

MtslModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

double abs_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("correlation needs >= 2 paired samples");
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw NumericalError("correlation undefined: zero variance");
  return std::min(1.0, std::abs(sxy / std::sqrt(sxx * syy)));
}

std::vector<CorrelationEntry> timescale_correlation(std::span<const CustomerRecord> records,
                                                    MonthAlignment alignment) {
  const char* names[] = {"monthly-weekly", "weekly-daily_weekday", "weekly-daily_weekend",
                         "daily-hourly_weekday", "daily-hourly_weekend"};
  std::vector<CorrelationEntry> out;
  for (auto type : kCustomerTypes) {
    std::vector<const CustomerRecord*> members;
    for (const auto& r : records)
      if (r.type == type) members.push_back(&r);
    std::array<std::vector<double>, 5> xs, ys;
    for (const auto* rec : members) {
      for (const auto& window : complete_months(*rec, alignment)) {
        auto readings = month_readings(*rec, window.start);
        double month_total = std::accumulate(readings.begin(), readings.end(), 0.0);
        for (int w = 0; w < kWeeksPerMonth; ++w) {
          auto week = readings.subspan(static_cast<std::size_t>(w) * 168, 168);
          double week_total = std::accumulate(week.begin(), week.end(), 0.0);
          xs[0].push_back(month_total);
          ys[0].push_back(week_total);
          for (int d = 0; d < kDaysPerWeek; ++d) {
            auto day = week.subspan(static_cast<std::size_t>(d) * 24, 24);
            double day_total = std::accumulate(day.begin(), day.end(), 0.0);
            int k = index_of(day_kind_of(window.start + (w * 7 + d) * 24));
            xs[1 + k].push_back(week_total);
            ys[1 + k].push_back(day_total);
            for (double e : day) {
              xs[3 + k].push_back(day_total);
              ys[3 + k].push_back(e);
            }
          }
        }
      }
    }
    for (int p = 0; p < 5; ++p) {
      CorrelationEntry entry;
      entry.type = type;
      entry.pair = names[p];
      entry.samples = xs[p].size();
      try {
        entry.rho = abs_correlation(xs[p], ys[p]);
      } catch (const Error& e) {
        entry.error = e.what();
      }
      out.push_back(std::move(entry));
    }
  }
  return out;
}

}  // namespace gridobs
