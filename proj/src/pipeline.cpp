#include "gridobs/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gridobs/parallel.hpp"
#include "json.hpp"

namespace gridobs {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Calls fn(cells, line_number) for every data row after checking the header.
template <typename Fn>
void for_each_row(const fs::path& path, std::string_view header, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw ParseError(path.string() + ": expected header '" + std::string(header) + "'");
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv(line);
    try {
      fn(cells, n);
    } catch (const std::logic_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  return out;
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

void require(const fs::path& path, const char* producer) {
  if (!fs::exists(path))
    throw Error("missing artifact " + path.string() + " (run '" + std::string(producer) + "' first)");
}

// ---- bills ----------------------------------------------------------------

using BillBook = std::map<std::string, std::vector<MonthlyBill>>;

void write_bills(const fs::path& path, std::span<const CustomerRecord> records, MonthAlignment alignment) {
  auto out = open_out(path);
  out << "customer_id,month,start,energy_kwh\n";
  for (const auto& r : records)
    for (const auto& w : complete_months(r, alignment)) {
      auto b = bill_from_truth(r, w.index, alignment);
      out << b.customer_id << ',' << b.month << ',' << format_iso8601(b.start) << ',' << b.energy_kwh << '\n';
    }
}

BillBook read_bills(const fs::path& path) {
  BillBook book;
  for_each_row(path, "customer_id,month,start,energy_kwh", [&](const std::vector<std::string>& c, std::size_t) {
    if (c.size() != 4) throw std::invalid_argument("expected 4 columns");
    MonthlyBill b{c[0], std::stoi(c[1]), parse_iso8601(c[2]), std::stod(c[3])};
    if (!(b.energy_kwh >= 0.0)) throw std::invalid_argument("negative bill");
    book[b.customer_id].push_back(b);
  });
  return book;
}

const MonthlyBill& bill_at(const BillBook& book, const std::string& id, HourStamp start) {
  auto it = book.find(id);
  if (it != book.end())
    for (const auto& b : it->second)
      if (b.start == start) return b;
  throw Error("no bill for customer " + id + " starting " + format_iso8601(start));
}

// ---- head PMU ---------------------------------------------------------------

void write_head(const fs::path& path, std::span<const HeadSample> samples) {
  auto out = open_out(path);
  out << "time,v_re,v_im,i_re,i_im\n";
  for (const auto& s : samples)
    out << format_iso8601(s.time) << ',' << s.voltage.real() << ',' << s.voltage.imag() << ',' << s.current.real()
        << ',' << s.current.imag() << '\n';
}

std::vector<HeadSample> read_head(const fs::path& path) {
  std::vector<HeadSample> out;
  for_each_row(path, "time,v_re,v_im,i_re,i_im", [&](const std::vector<std::string>& c, std::size_t) {
    if (c.size() != 5) throw std::invalid_argument("expected 5 columns");
    out.push_back({parse_iso8601(c[0]), {std::stod(c[1]), std::stod(c[2])}, {std::stod(c[3]), std::stod(c[4])}});
  });
  if (out.size() != static_cast<std::size_t>(kHoursPerMonth))
    throw ParseError(path.string() + ": expected 672 hourly samples");
  for (std::size_t t = 1; t < out.size(); ++t)
    if (out[t].time != out[t - 1].time + 1) throw ParseError(path.string() + ": samples must be consecutive hours");
  return out;
}

// ---- models ---------------------------------------------------------------

using ModelSet = std::map<MtslKey, MtslModel>;

fs::path model_path(const fs::path& out, const MtslKey& key) { return out / "models" / (key.label() + ".json"); }

ModelSet load_models(const fs::path& out, const PatternBank& bank) {
  ModelSet models;
  for (const auto& s : bank.subsets)
    for (const auto& c : s.classes) {
      MtslKey key{s.type, s.day_kind, c.id};
      auto p = model_path(out, key);
      require(p, "train-mtsl");
      models.emplace(key, load_model(p));
    }
  return models;
}

const MtslModel& model_for(const ModelSet& models, CustomerType type, DayKind kind, int cls) {
  auto it = models.find(MtslKey{type, kind, cls});
  if (it == models.end())
    throw Error("no MTSL model for " + MtslKey{type, kind, cls}.label());
  return it->second;
}

HourStamp evaluation_start(std::span<const CustomerRecord> feeder_records, MonthAlignment alignment) {
  if (feeder_records.empty()) throw Error("no feeder customer records");
  auto months = complete_months(feeder_records.front(), alignment);
  if (months.empty()) throw Error("feeder customer records hold no complete month");
  return months.back().start;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::array<std::uint32_t, 2> v{};
  seq.generate(v.begin(), v.end());
  return (static_cast<std::uint64_t>(v[0]) << 32) | v[1];
}

struct Loaded {
  FeederModel feeder;
  PatternBank bank;
  ModelSet models;
  BillBook bills;
  std::vector<HeadSample> head;
};

Loaded load_common(const ExperimentConfig& config, const fs::path& out) {
  require(out / "bank.json", "cluster");
  require(out / "bills.csv", "gen-data");
  require(out / "head_pmu.csv", "gen-data");
  auto feeder = load_feeder(config.feeder);
  auto bank = load_bank(out / "bank.json");
  auto models = load_models(out, bank);
  return {std::move(feeder), std::move(bank), std::move(models), read_bills(out / "bills.csv"),
          read_head(out / "head_pmu.csv")};
}

// Pseudo-load of every feeder customer over the evaluation month, with the
// weekday/weekend classes chosen by `classes(customer)`.
template <typename ClassFn>
std::map<std::string, std::vector<double>> pseudo_series(const Loaded& d, HourStamp start, ClassFn&& classes) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& c : d.feeder.customers()) {
    auto [wd, we] = classes(c);
    const auto& bill = bill_at(d.bills, c.id, start);
    out[c.id] = splice_day_kinds(model_for(d.models, c.type, DayKind::Weekday, wd),
                                 model_for(d.models, c.type, DayKind::Weekend, we), bill);
  }
  return out;
}

std::vector<MeasurementStep> measurement_steps(const Loaded& d, HourStamp start,
                                               const std::map<std::string, std::vector<double>>& series,
                                               const WeightConfig& weights) {
  std::vector<MeasurementStep> steps;
  for (int t = 0; t < kHoursPerMonth; ++t) {
    std::vector<Phasor> loads(d.feeder.node_count());
    for (const auto& c : d.feeder.customers()) {
      double p = series.at(c.id)[static_cast<std::size_t>(t)] / d.feeder.base_kva();
      double pf = std::clamp(c.power_factor, 1e-6, 1.0);
      loads[d.feeder.customer_node(c.id)] += Phasor(p, p * std::tan(std::acos(pf)));
    }
    steps.push_back({t, start + t, make_measurements(d.feeder, d.head[t].voltage, d.head[t].current, loads, weights)});
  }
  return steps;
}

std::vector<std::vector<Phasor>> read_voltages(const fs::path& path, std::size_t nodes) {
  std::map<int, std::vector<Phasor>> by_step;
  for_each_row(path, "step,time,node,v_re,v_im,v_mag,v_ang", [&](const std::vector<std::string>& c, std::size_t) {
    if (c.size() != 7) throw std::invalid_argument("expected 7 columns");
    auto& v = by_step[std::stoi(c[0])];
    if (v.empty()) v.resize(nodes);
    v.at(std::stoul(c[2])) = {std::stod(c[3]), std::stod(c[4])};
  });
  std::vector<std::vector<Phasor>> out;
  for (auto& [s, v] : by_step) out.push_back(std::move(v));
  return out;
}

std::vector<int> read_voltage_steps(const fs::path& path) {
  std::vector<int> steps;
  for_each_row(path, "step,time,node,v_re,v_im,v_mag,v_ang", [&](const std::vector<std::string>& c, std::size_t) {
    int s = std::stoi(c.at(0));
    if (steps.empty() || steps.back() != s) steps.push_back(s);
  });
  return steps;
}

// Mean unit-sum daily profile of a customer type over all days (weekdays and
// weekends weighted 5:2).
Profile24 type_average_shape(std::span<const CustomerRecord> records, CustomerType type) {
  Profile24 acc{};
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.type != type) continue;
    auto wd = average_profile(r, DayKind::Weekday);
    auto we = average_profile(r, DayKind::Weekend);
    if (!wd || !we) continue;
    Profile24 p{};
    for (int h = 0; h < kHoursPerDay; ++h) p[h] = 5.0 * (*wd)[h] + 2.0 * (*we)[h];
    double s = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(s > 0.0)) continue;
    for (int h = 0; h < kHoursPerDay; ++h) acc[h] += p[h] / s;
    ++n;
  }
  if (n == 0) acc.fill(1.0);
  double s = std::accumulate(acc.begin(), acc.end(), 0.0);
  for (auto& v : acc) v /= s;
  return acc;
}

}  // namespace

// ---- truth ------------------------------------------------------------------

void save_truth(const PlantedTruth& truth, const fs::path& path) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "planted_truth";
  doc["observed"] = truth.observed;
  doc["feeder_customers"] = truth.feeder_customers;
  auto out = open_out(path);
  out << doc.dump() << '\n';
}

PlantedTruth load_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    auto doc = nlohmann::json::parse(in);
    if (doc.at("schema_version").get<int>() != 1) throw ParseError("unsupported truth schema");
    PlantedTruth t;
    t.observed = doc.at("observed").get<std::map<std::string, std::array<int, 2>>>();
    t.feeder_customers = doc.at("feeder_customers").get<std::map<std::string, std::array<int, 2>>>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("truth file: ") + e.what());
  }
}

namespace {

// counts[discovered][planted]
std::map<int, std::map<int, int>> confusion(const SubsetPatterns& subset,
                                            const std::map<std::string, std::array<int, 2>>& planted) {
  std::map<int, std::map<int, int>> counts;
  for (const auto& c : subset.classes) {
    auto& row = counts[c.id];
    for (const auto& m : c.members) {
      auto it = planted.find(m);
      if (it != planted.end()) ++row[it->second[index_of(subset.day_kind)]];
    }
  }
  return counts;
}

}  // namespace

std::map<int, int> discovered_to_planted(const SubsetPatterns& subset,
                                         const std::map<std::string, std::array<int, 2>>& planted) {
  std::map<int, int> out;
  for (const auto& [disc, row] : confusion(subset, planted)) {
    int best = -1, count = 0;
    for (const auto& [p, n] : row)
      if (n > count) {
        best = p;
        count = n;
      }
    if (best >= 0) out[disc] = best;
  }
  return out;
}

std::map<int, int> planted_to_discovered(const SubsetPatterns& subset,
                                         const std::map<std::string, std::array<int, 2>>& planted) {
  auto counts = confusion(subset, planted);
  auto majority = discovered_to_planted(subset, planted);
  std::map<int, int> out, held;
  for (const auto& [disc, p] : majority) {
    int n = counts[disc][p];
    if (!out.count(p) || n > held[p]) {
      out[p] = disc;
      held[p] = n;
    }
  }
  return out;
}

std::vector<Phasor> true_node_loads(const FeederModel& feeder, std::span<const CustomerRecord> customers,
                                    HourStamp hour) {
  std::vector<Phasor> loads(feeder.node_count());
  for (const auto& r : customers) {
    auto it = std::lower_bound(r.hours.begin(), r.hours.end(), hour);
    if (it == r.hours.end() || *it != hour)
      throw Error("customer " + r.id + " has no reading at " + format_iso8601(hour));
    const double p = r.kwh[static_cast<std::size_t>(it - r.hours.begin())] / feeder.base_kva();
    const auto& fc = feeder.customer(r.id);
    const double pf = std::clamp(fc.power_factor, 1e-6, 1.0);
    loads[feeder.customer_node(r.id)] += Phasor(p, p * std::tan(std::acos(pf)));
  }
  return loads;
}

std::vector<HeadSample> synthesize_head_pmu(const FeederModel& feeder, std::span<const CustomerRecord> customers,
                                            HourStamp start, double noise, Phasor slack, std::uint64_t seed) {
  std::mt19937_64 rng(stream_seed(seed, 0x504D55));
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<HeadSample> out;
  for (int t = 0; t < kHoursPerMonth; ++t) {
    auto loads = true_node_loads(feeder, customers, start + t);
    auto pf = power_flow(feeder, loads, slack);
    Phasor i = head_current(feeder, pf.branch_currents);
    const double sv = noise * std::abs(slack), si = noise * std::abs(i);
    Phasor v_noisy = slack + Phasor(sv * g(rng), sv * g(rng));
    Phasor i_noisy = i + Phasor(si * g(rng), si * g(rng));
    out.push_back({start + t, v_noisy, i_noisy});
  }
  return out;
}

void write_measurements(const fs::path& path, std::span<const MeasurementStep> steps) {
  auto out = open_out(path);
  out << "step,time,kind,location,re,im,weight\n";
  for (const auto& s : steps)
    for (const auto& m : s.measurements)
      out << s.step << ',' << format_iso8601(s.time) << ',' << to_string(m.kind) << ',' << m.location << ','
          << m.value.real() << ',' << m.value.imag() << ',' << m.weight << '\n';
}

std::vector<MeasurementStep> read_measurements(const fs::path& path) {
  std::vector<MeasurementStep> steps;
  for_each_row(path, "step,time,kind,location,re,im,weight", [&](const std::vector<std::string>& c, std::size_t) {
    if (c.size() != 7) throw std::invalid_argument("expected 7 columns");
    int step = std::stoi(c[0]);
    if (steps.empty() || steps.back().step != step) {
      for (const auto& s : steps)
        if (s.step == step) throw std::invalid_argument("rows of a step must be contiguous");
      steps.push_back({step, parse_iso8601(c[1]), {}});
    }
    steps.back().measurements.push_back(
        {parse_measurement_kind(c[2]), std::stoi(c[3]), {std::stod(c[4]), std::stod(c[5])}, std::stod(c[6])});
  });
  return steps;
}

EstimationRun estimate_series(const FeederModel& feeder, std::span<const MeasurementStep> steps,
                              const EstimatorConfig& config) {
  EstimationRun run;
  for (const auto& s : steps) {
    try {
      auto r = solve_wls(feeder, s.measurements, config);
      run.iterations += r.iterations;
      run.halvings += r.halvings;
      run.steps.push_back(s.step);
      run.times.push_back(s.time);
      run.results.push_back(std::move(r));
    } catch (const Error& e) {
      run.failures.push_back("step " + std::to_string(s.step) + ": " + e.what());
    }
  }
  return run;
}

void write_estimation(const fs::path& dir, const std::string& prefix, const FeederModel& feeder,
                      std::span<const MeasurementStep> steps, const EstimationRun& run) {
  auto states = open_out(dir / (prefix + "states.csv"));
  auto volts = open_out(dir / (prefix + "voltages.csv"));
  auto res = open_out(dir / (prefix + "residuals.csv"));
  auto log = open_out(dir / (prefix + "log.csv"));
  states << "step,time,branch,from,to,i_re,i_im\n";
  volts << "step,time,node,v_re,v_im,v_mag,v_ang\n";
  res << "step,time,kind,location,component,residual,weight\n";
  log << "step,time,iterations,halvings,objective\n";
  std::map<int, const MeasurementStep*> by_step;
  for (const auto& s : steps) by_step[s.step] = &s;
  for (std::size_t k = 0; k < run.results.size(); ++k) {
    const auto& r = run.results[k];
    const auto t = format_iso8601(run.times[k]);
    const int step = run.steps[k];
    auto currents = state_currents(r.x);
    for (std::size_t b = 0; b < currents.size(); ++b)
      states << step << ',' << t << ',' << b << ',' << feeder.branches()[b].from_node << ','
             << feeder.branches()[b].to_node << ',' << currents[b].real() << ',' << currents[b].imag() << '\n';
    for (std::size_t n = 0; n < r.voltages.size(); ++n)
      volts << step << ',' << t << ',' << n << ',' << r.voltages[n].real() << ',' << r.voltages[n].imag() << ','
            << std::abs(r.voltages[n]) << ',' << std::arg(r.voltages[n]) << '\n';
    for (const auto& e : residuals(feeder, by_step.at(step)->measurements, r))
      res << step << ',' << t << ',' << to_string(e.kind) << ',' << e.location << ',' << e.component << ','
          << e.value << ',' << e.weight << '\n';
    log << step << ',' << t << ',' << r.iterations << ',' << r.halvings << ',' << r.objective << '\n';
  }
}

VoltageErrors voltage_errors(const FeederModel& feeder, const std::vector<std::vector<Phasor>>& estimated,
                             const std::vector<std::vector<Phasor>>& truth) {
  if (estimated.size() != truth.size()) throw InvalidArgument("estimated and true voltages differ in step count");
  VoltageErrors e;
  std::size_t phase_samples = 0;
  const std::size_t slack = feeder.slack_index();
  for (std::size_t s = 0; s < truth.size(); ++s) {
    const Phasor ref = truth[s].at(slack), ref_est = estimated[s].at(slack);
    for (std::size_t n = 0; n < feeder.node_count(); ++n) {
      if (n == slack) continue;
      const Phasor v = truth[s].at(n), ve = estimated[s].at(n);
      e.magnitude += 100.0 * std::abs(std::abs(ve) - std::abs(v)) / std::abs(v);
      ++e.samples;
      const double th = std::arg(v / ref);
      if (std::abs(th) > 1e-12) {
        e.phase += 100.0 * std::abs(std::arg(ve / ref_est) - th) / std::abs(th);
        ++phase_samples;
      }
    }
  }
  if (e.samples == 0) throw InvalidArgument("no voltages to compare");
  e.magnitude /= static_cast<double>(e.samples);
  e.phase = phase_samples ? e.phase / static_cast<double>(phase_samples) : 0.0;
  return e;
}

// ---- stages -----------------------------------------------------------------

void run_gen_data(const ExperimentConfig& config, const fs::path& out) {
  stage("gen-data", [&] {
    config.validate();
    fs::create_directories(out);
    auto observed = generate_population(config.population);
    auto feeder = load_feeder(config.feeder);
    auto feeder_records = generate_feeder_customers(config.population, feeder);

    PlantedTruth truth;
    for (const auto& r : observed) truth.observed[r.id] = {r.true_weekday_class.value(), r.true_weekend_class.value()};
    for (const auto& r : feeder_records)
      truth.feeder_customers[r.id] = {r.true_weekday_class.value(), r.true_weekend_class.value()};

    write_csv(out / "observed.csv", observed);
    write_csv(out / "feeder_customers_truth.csv", feeder_records);
    save_truth(truth, out / "truth.json");
    write_bills(out / "bills.csv", feeder_records, config.alignment);

    const HourStamp start = evaluation_start(feeder_records, config.alignment);
    write_head(out / "head_pmu.csv", synthesize_head_pmu(feeder, feeder_records, start, config.evaluation.pmu_noise,
                                                         config.evaluation.slack_voltage, config.seed));
    auto tv = open_out(out / "true_voltages.csv");
    tv << "step,time,node,v_re,v_im,v_mag,v_ang\n";
    for (int t = 0; t < kHoursPerMonth; ++t) {
      auto pf = power_flow(feeder, true_node_loads(feeder, feeder_records, start + t), config.evaluation.slack_voltage);
      for (std::size_t n = 0; n < pf.voltages.size(); ++n)
        tv << t << ',' << format_iso8601(start + t) << ',' << n << ',' << pf.voltages[n].real() << ','
           << pf.voltages[n].imag() << ',' << std::abs(pf.voltages[n]) << ',' << std::arg(pf.voltages[n]) << '\n';
    }
    auto cfg = open_out(out / "config_used.json");
    cfg << serialize_config(config) << '\n';
  });
}

void run_cluster(const ExperimentConfig& config, const fs::path& out) {
  stage("cluster", [&] {
    require(out / "observed.csv", "gen-data");
    auto records = ingest_csv(out / "observed.csv").records;
    auto subsets = partition_subsets(records);
    std::vector<DataSubset> present;
    for (auto& s : subsets)
      if (!s.profiles.empty()) present.push_back(std::move(s));
    auto bank = build_pattern_bank(present, config.clustering, config.seed);
    save_bank(bank, out / "bank.json");
    write_dbi_curves(bank, out / "dbi_curve.csv");
    auto centroids = open_out(out / "typical_profiles.csv");
    centroids << "type,day_kind,class_id,hour,centroid_kwh,shape\n";
    for (const auto& s : bank.subsets)
      for (const auto& c : s.classes)
        for (int h = 0; h < kHoursPerDay; ++h)
          centroids << to_string(s.type) << ',' << to_string(s.day_kind) << ',' << c.id << ',' << h << ','
                    << c.centroid[h] << ',' << c.shape[h] << '\n';
  });
}

void run_train_mtsl(const ExperimentConfig& config, const fs::path& out) {
  stage("train-mtsl", [&] {
    require(out / "observed.csv", "gen-data");
    require(out / "bank.json", "cluster");
    auto records = ingest_csv(out / "observed.csv").records;
    auto bank = load_bank(out / "bank.json");
    std::map<std::string, const CustomerRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;

    int train_months = 0;
    if (!records.empty()) train_months = static_cast<int>(complete_months(records.front(), config.alignment).size());
    train_months -= config.holdout_months;
    MonthFilter filter = [train_months](const MonthWindow& w) { return w.index < train_months; };

    fs::create_directories(out / "models");
    auto layer_csv = open_out(out / "mtsl_layer_metrics.csv");
    layer_csv << "type,day_kind,class_id,layer,test_rmse,max_test_rmse,pairs,training_months\n";
    for (const auto& s : bank.subsets)
      for (const auto& c : s.classes) {
        std::vector<const CustomerRecord*> members;
        for (const auto& id : c.members) members.push_back(by_id.at(id));
        MtslKey key{s.type, s.day_kind, c.id};
        auto model = train_mtsl(key, members, config.mtsl, config.alignment, filter);
        save_model(model, model_path(out, key));
        const char* layers[] = {"weekly", "daily", "hourly"};
        for (int l = 0; l < 3; ++l)
          layer_csv << to_string(s.type) << ',' << to_string(s.day_kind) << ',' << c.id << ',' << layers[l] << ','
                    << model.test_metrics[l].rmse << ',' << model.test_metrics[l].max_rmse << ','
                    << model.test_metrics[l].pairs << ',' << model.training_months << '\n';
      }
  });
}

void run_identify(const ExperimentConfig& config, const fs::path& out) {
  stage("identify", [&] {
    auto d = load_common(config, out);
    const HourStamp start = d.head.front().time;
    IdentificationProblem problem;
    problem.feeder = &d.feeder;
    problem.start = start;
    problem.head = d.head;
    std::vector<std::array<std::vector<double>, 2>> energies;
    for (const auto& c : d.feeder.customers()) {
      const auto& bill = bill_at(d.bills, c.id, start);
      UnobservedCustomer u{c.id, c.type, d.feeder.customer_node(c.id), c.power_factor, bill.energy_kwh, {}};
      std::array<std::vector<double>, 2> e;
      for (auto kind : kDayKinds) {
        if (!d.bank.contains(c.type, kind))
          throw Error("pattern bank has no " + std::string(to_string(c.type)) + " " + std::string(to_string(kind)) +
                      " subset");
        for (const auto& cls : d.bank.find(c.type, kind).classes) {
          u.candidates[index_of(kind)].push_back(
              {cls.id, disaggregate(model_for(d.models, c.type, kind, cls.id), bill).hourly});
          e[index_of(kind)].push_back(std::accumulate(cls.centroid.begin(), cls.centroid.end(), 0.0));
        }
      }
      problem.customers.push_back(std::move(u));
      energies.push_back(std::move(e));
    }
    RblConfig rbl = config.rbl;
    rbl.estimator = config.estimator;
    rbl.weights = config.weights;
    auto report = identify_all(problem, initial_assignment(problem, energies), rbl);
    save_report(report, out / "identification.json");
    write_trajectories(report, out / "posterior_trajectories.csv");

    // Per-customer check with every other customer at its planted class.
    if (fs::exists(out / "truth.json")) {
      auto truth = load_truth(out / "truth.json");
      Assignment planted(problem.customers.size(), {0, 0});
      for (std::size_t c = 0; c < problem.customers.size(); ++c) {
        const auto& u = problem.customers[c];
        for (auto kind : kDayKinds) {
          auto map = planted_to_discovered(d.bank.find(u.type, kind), truth.observed);
          auto it = map.find(truth.feeder_customers.at(u.id)[index_of(kind)]);
          if (it == map.end()) continue;
          const auto& cands = u.candidates[index_of(kind)];
          for (std::size_t i = 0; i < cands.size(); ++i)
            if (cands[i].class_id == it->second) planted[c][index_of(kind)] = i;
        }
      }
      IdentificationReport check;
      check.passes = 1;
      check.entries.resize(2 * problem.customers.size());
      parallel_for(check.entries.size(), [&](std::size_t k) {
        const std::size_t c = k / 2;
        const DayKind kind = kDayKinds[k % 2];
        try {
          check.entries[k] = identify_customer(problem, c, kind, planted, rbl);
        } catch (const Error& e) {
          check.entries[k].customer = problem.customers[c].id;
          check.entries[k].type = problem.customers[c].type;
          check.entries[k].day_kind = kind;
          check.entries[k].error = e.what();
        }
      });
      save_report(check, out / "identification_planted_context.json");
    }
  });
}

void run_estimate(const ExperimentConfig& config, const fs::path& out) {
  stage("estimate", [&] {
    require(out / "identification.json", "identify");
    auto d = load_common(config, out);
    auto report = load_report(out / "identification.json");
    const HourStamp start = d.head.front().time;

    auto identified = pseudo_series(d, start, [&](const FeederCustomer& c) {
      int wd = report.assigned(c.id, DayKind::Weekday), we = report.assigned(c.id, DayKind::Weekend);
      if (wd < 0 || we < 0) throw Error("customer " + c.id + " was not identified");
      return std::pair{wd, we};
    });
    auto steps = measurement_steps(d, start, identified, config.weights);
    write_measurements(out / "se_measurements.csv", steps);
    write_estimation(out, "se_", d.feeder, steps, estimate_series(d.feeder, steps, config.estimator));

    if (fs::exists(out / "truth.json")) {
      auto truth = load_truth(out / "truth.json");
      auto planted = pseudo_series(d, start, [&](const FeederCustomer& c) {
        std::array<int, 2> cls{};
        for (auto kind : kDayKinds) {
          auto map = planted_to_discovered(d.bank.find(c.type, kind), truth.observed);
          auto it = map.find(truth.feeder_customers.at(c.id)[index_of(kind)]);
          cls[index_of(kind)] = it != map.end() ? it->second : report.assigned(c.id, kind);
        }
        return std::pair{cls[0], cls[1]};
      });
      auto psteps = measurement_steps(d, start, planted, config.weights);
      write_measurements(out / "se_planted_measurements.csv", psteps);
      write_estimation(out, "se_planted_", d.feeder, psteps, estimate_series(d.feeder, psteps, config.estimator));
    }
  });
}

MetricsReport run_evaluate(const ExperimentConfig& config, const fs::path& out) {
  return stage("evaluate", [&] {
    for (const char* f : {"truth.json", "observed.csv", "feeder_customers_truth.csv"}) require(out / f, "gen-data");
    require(out / "identification.json", "identify");
    require(out / "se_voltages.csv", "estimate");
    auto d = load_common(config, out);
    auto truth = load_truth(out / "truth.json");
    auto observed = ingest_csv(out / "observed.csv").records;
    auto feeder_records = ingest_csv(out / "feeder_customers_truth.csv").records;
    auto report = load_report(out / "identification.json");
    const HourStamp start = d.head.front().time;
    MetricsReport m;

    // Clustering recovery.
    for (const auto& s : d.bank.subsets) {
      std::vector<int> disc, plant;
      for (const auto& c : s.classes)
        for (const auto& id : c.members) {
          disc.push_back(c.id);
          plant.push_back(truth.observed.at(id)[index_of(s.day_kind)]);
        }
      m.clustering_ari[std::string(to_string(s.type)) + "_" + std::string(to_string(s.day_kind))] =
          adjusted_rand_index(disc, plant);
    }

    // Identification.
    auto id_score = [&](const IdentificationReport& r) {
      std::size_t total = 0, correct = 0, confident = 0;
      for (const auto& e : r.entries) {
        ++total;
        if (e.identified < 0) continue;
        auto map = discovered_to_planted(d.bank.find(e.type, e.day_kind), truth.observed);
        auto it = map.find(e.identified);
        if (it == map.end() || it->second != truth.feeder_customers.at(e.customer)[index_of(e.day_kind)]) continue;
        ++correct;
        auto best = std::max_element(e.posterior.begin(), e.posterior.end());
        if (*best >= config.rbl.threshold) ++confident;
      }
      return std::array<double, 3>{static_cast<double>(total), static_cast<double>(correct),
                                   static_cast<double>(confident)};
    };
    if (auto s = id_score(report); s[0] > 0) {
      m.identification_accuracy = s[1] / s[0];
      m.identification_confident = s[2] / s[0];
    }
    if (fs::exists(out / "identification_planted_context.json")) {
      if (auto s = id_score(load_report(out / "identification_planted_context.json")); s[0] > 0) {
        m.extra["planted_context_identification_accuracy"] = s[1] / s[0];
        m.extra["planted_context_identification_confident"] = s[2] / s[0];
      }
    }

    // Disaggregation fidelity on the held-out month.
    auto planted_classes = [&](const FeederCustomer& c) {
      std::array<int, 2> cls{};
      for (auto kind : kDayKinds) {
        auto map = planted_to_discovered(d.bank.find(c.type, kind), truth.observed);
        auto it = map.find(truth.feeder_customers.at(c.id)[index_of(kind)]);
        if (it == map.end()) throw Error("planted class of " + c.id + " has no discovered counterpart");
        cls[index_of(kind)] = it->second;
      }
      return std::pair{cls[0], cls[1]};
    };
    std::map<std::string, std::map<std::string, std::vector<double>>> est;
    est["mtsl"] = pseudo_series(d, start, planted_classes);
    est["mtsl_identified"] = pseudo_series(d, start, [&](const FeederCustomer& c) {
      return std::pair{report.assigned(c.id, DayKind::Weekday), report.assigned(c.id, DayKind::Weekend)};
    });
    std::map<std::string, std::vector<double>> actual;
    for (const auto& r : feeder_records) {
      auto v = month_readings(r, start);
      actual[r.id].assign(v.begin(), v.end());
      const auto& bill = bill_at(d.bills, r.id, start);
      est["uniform"][r.id] = baseline_uniform(bill.energy_kwh);
      est["profile_scaling"][r.id] = baseline_profile_scaling(bill.energy_kwh, type_average_shape(observed, r.type));
    }

    auto select = [&](const std::vector<double>& series, int kind) {
      std::vector<double> out;
      for (int t = 0; t < kHoursPerMonth; ++t)
        if (kind < 0 || index_of(day_kind_of(start + t)) == kind) out.push_back(series[t]);
      return out;
    };
    const std::pair<const char*, int> scopes[] = {{"all", -1}, {"weekday", 0}, {"weekend", 1}};
    for (const auto& [name, series] : est) {
      for (const auto& [scope, kind] : scopes) {
        std::vector<double> agg_a(kHoursPerMonth, 0.0), agg_e(kHoursPerMonth, 0.0);
        double mape_sum = 0.0, r_sum = 0.0;
        std::size_t n = 0, nr = 0, samples = 0, excluded = 0;
        for (const auto& [id, a] : actual) {
          const auto& e = series.at(id);
          for (int t = 0; t < kHoursPerMonth; ++t) {
            agg_a[t] += a[t];
            agg_e[t] += e[t];
          }
          auto sa = select(a, kind), se = select(e, kind);
          auto mp = mape(sa, se);
          mape_sum += mp.value;
          samples += mp.samples;
          excluded += mp.excluded;
          ++n;
          try {
            r_sum += goodness_r(sa, se);
            ++nr;
          } catch (const NumericalError&) {
          }
        }
        ScopeMetrics cust;
        cust.mape = MapeResult{mape_sum / static_cast<double>(n), samples, excluded};
        if (nr) cust.r = r_sum / static_cast<double>(nr);
        m.estimators[name][std::string("customer_") + scope] = cust;
        ScopeMetrics feed;
        auto sa = select(agg_a, kind), se = select(agg_e, kind);
        feed.mape = mape(sa, se);
        try {
          feed.r = goodness_r(sa, se);
        } catch (const NumericalError&) {
        }
        m.estimators[name][std::string("feeder_") + scope] = feed;
      }
    }
    {
      auto plot = open_out(out / "mtsl_feeder_hourly.csv");
      plot << "step,time,actual";
      for (const auto& [name, s] : est) plot << ',' << name;
      plot << '\n';
      for (int t = 0; t < kHoursPerMonth; ++t) {
        double a = 0.0;
        for (const auto& [id, v] : actual) a += v[t];
        plot << t << ',' << format_iso8601(start + t) << ',' << a;
        for (const auto& [name, s] : est) {
          double e = 0.0;
          for (const auto& [id, v] : s) e += v[t];
          plot << ',' << e;
        }
        plot << '\n';
      }
    }

    // State estimation accuracy.
    auto true_v = read_voltages(out / "true_voltages.csv", d.feeder.node_count());
    auto score = [&](const std::string& prefix, const char* key) {
      auto path = out / (prefix + "voltages.csv");
      if (!fs::exists(path)) return;
      auto ev = read_voltages(path, d.feeder.node_count());
      auto steps = read_voltage_steps(path);
      std::vector<std::vector<Phasor>> tv;
      for (int s : steps) tv.push_back(true_v.at(static_cast<std::size_t>(s)));
      auto err = voltage_errors(d.feeder, ev, tv);
      m.extra[std::string(key) + "_voltage_magnitude_error"] = err.magnitude;
      m.extra[std::string(key) + "_voltage_phase_error"] = err.phase;
      m.extra[std::string(key) + "_estimated_steps"] = static_cast<double>(steps.size());
      int iters = 0, halvings = 0;
      for_each_row(out / (prefix + "log.csv"), "step,time,iterations,halvings,objective",
                   [&](const std::vector<std::string>& c, std::size_t) {
                     iters += std::stoi(c.at(2));
                     halvings += std::stoi(c.at(3));
                   });
      m.extra[std::string(key) + "_halving_fraction"] = iters ? static_cast<double>(halvings) / iters : 0.0;
      if (prefix == "se_planted_" || !m.voltage_magnitude_error) {
        m.voltage_magnitude_error = err.magnitude;
        m.voltage_phase_error = err.phase;
      }
    };
    score("se_", "identified");
    score("se_planted_", "planted");

    auto corr = open_out(out / "timescale_correlation.csv");
    corr << "type,pair,rho,samples,error\n";
    for (const auto& c : timescale_correlation(observed, config.alignment)) {
      corr << to_string(c.type) << ',' << c.pair << ',';
      if (c.rho) corr << *c.rho;
      corr << ',' << c.samples << ',' << c.error << '\n';
    }

    save_metrics(m, out / "metrics.json");
    return m;
  });
}

void run_disaggregate(const ExperimentConfig& config, const fs::path& out) {
  stage("disaggregate", [&] {
    auto d = load_common(config, out);
    std::optional<IdentificationReport> report;
    if (fs::exists(out / "identification.json")) report = load_report(out / "identification.json");
    auto csv = open_out(out / "pseudo_loads.csv");
    csv << "customer_id,month,step,time,kwh\n";
    for (const auto& c : d.feeder.customers()) {
      std::array<int, 2> cls{};
      for (auto kind : kDayKinds) {
        int id = report ? report->assigned(c.id, kind) : -1;
        if (id < 0) id = d.bank.find(c.type, kind).classes.front().id;
        cls[index_of(kind)] = id;
      }
      auto it = d.bills.find(c.id);
      if (it == d.bills.end()) continue;
      for (const auto& bill : it->second) {
        auto series = splice_day_kinds(model_for(d.models, c.type, DayKind::Weekday, cls[0]),
                                       model_for(d.models, c.type, DayKind::Weekend, cls[1]), bill);
        for (int t = 0; t < kHoursPerMonth; ++t)
          csv << c.id << ',' << bill.month << ',' << t << ',' << format_iso8601(bill.start + t) << ',' << series[t]
              << '\n';
      }
    }
  });
}

RunSummary run_all(const ExperimentConfig& config, const fs::path& out) {
  RunSummary summary;
  auto timed = [&](const char* name, auto&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    summary.seconds[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  timed("gen-data", [&] { run_gen_data(config, out); });
  timed("cluster", [&] { run_cluster(config, out); });
  timed("train-mtsl", [&] { run_train_mtsl(config, out); });
  timed("identify", [&] { run_identify(config, out); });
  timed("estimate", [&] { run_estimate(config, out); });
  timed("evaluate", [&] { summary.metrics = run_evaluate(config, out); });
  return summary;
}

}  // namespace gridobs
