#include "gridobs/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace gridobs {

namespace {

Matrix squared_distances(const Matrix& points) {
  const auto n = points.rows();
  Matrix d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = (points.row(i) - points.row(j)).squaredNorm();
      d2(i, j) = v;
      d2(j, i) = v;
    }
  }
  return d2;
}

// Columns of the k leading eigenvectors with the canonical sign applied and
// rows normalised.
Matrix embed_leading(const Matrix& eigenvectors, int k) {
  const auto n = eigenvectors.rows();
  Matrix x(n, k);
  for (int c = 0; c < k; ++c) {
    Vector v = eigenvectors.col(eigenvectors.cols() - 1 - c);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (std::abs(v(i)) > std::abs(v(arg)) * (1.0 + 1e-12)) arg = i;
    if (v(arg) < 0.0) v = -v;
    x.col(c) = v;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    double norm = x.row(i).norm();
    if (norm > 0.0) x.row(i) /= norm;
  }
  return x;
}

Matrix eigenvectors_of(const Matrix& laplacian) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(laplacian);
  if (solver.info() != Eigen::Success) throw NumericalError("eigensolver failed on Laplacian");
  return solver.eigenvectors();
}

struct LloydRun {
  std::vector<int> labels;
  Matrix centroids;
  double inertia;
};

LloydRun lloyd(const Matrix& points, int k, std::mt19937_64& rng, int max_iterations) {
  const auto n = points.rows();
  const auto d = points.cols();
  Matrix centers(k, d);

  // farthest-point seeding from a random first centre
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = points.row(pick(rng));
  Vector nearest(n);
  for (Eigen::Index i = 0; i < n; ++i) nearest(i) = (points.row(i) - centers.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    Eigen::Index far = 0;
    nearest.maxCoeff(&far);
    centers.row(c) = points.row(far);
    for (Eigen::Index i = 0; i < n; ++i)
      nearest(i) = std::min(nearest(i), (points.row(i) - centers.row(c)).squaredNorm());
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double dist = (points.row(i) - centers.row(c)).squaredNorm();
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    // recompute; re-seed empty clusters at the worst-fitted point
    Matrix sums = Matrix::Zero(k, d);
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[i]) += points.row(i);
      ++counts[labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / counts[c];
        continue;
      }
      Eigen::Index worst = -1;
      double worst_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[labels[i]] < 2) continue;
        double dist = (points.row(i) - centers.row(labels[i])).squaredNorm();
        if (dist > worst_d) {
          worst_d = dist;
          worst = i;
        }
      }
      if (worst < 0) continue;
      --counts[labels[worst]];
      labels[worst] = c;
      counts[c] = 1;
      centers.row(c) = points.row(worst);
      changed = true;
    }
    if (!changed && iter > 0) break;
  }
  // final centroids from the final labels
  Matrix sums = Matrix::Zero(k, d);
  std::vector<int> counts(k, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    sums.row(labels[i]) += points.row(i);
    ++counts[labels[i]];
  }
  for (int c = 0; c < k; ++c)
    if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) inertia += (points.row(i) - centers.row(labels[i])).squaredNorm();
  return {std::move(labels), std::move(centers), inertia};
}

}  // namespace

std::vector<double> local_scales(const Matrix& points, int neighbor_rank) {
  const auto n = points.rows();
  if (neighbor_rank < 1) throw InvalidArgument("neighbour rank must be >= 1");
  if (n <= neighbor_rank)
    throw InvalidArgument("local_scales: need more than K = " + std::to_string(neighbor_rank) +
                          " points");
  Matrix d2 = squared_distances(points);
  double diameter = std::sqrt(d2.maxCoeff());
  if (!(diameter > 0.0)) throw InvalidArgument("local_scales: all profiles are identical");
  const double floor = 1e-9 * diameter;
  std::vector<double> alphas(static_cast<std::size_t>(n));
  std::vector<double> row;
  for (Eigen::Index i = 0; i < n; ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) row.push_back(d2(i, j));
    std::nth_element(row.begin(), row.begin() + (neighbor_rank - 1), row.end());
    alphas[i] = std::max(std::sqrt(row[neighbor_rank - 1]), floor);
  }
  return alphas;
}

Matrix normalized_laplacian(const Matrix& weights) {
  const auto n = weights.rows();
  if (weights.cols() != n) throw InvalidArgument("affinity matrix must be square");
  Vector degrees = weights.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(degrees(i) > 0.0)) throw NumericalError("isolated vertex " + std::to_string(i) + " in affinity graph");
  Matrix l(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) l(i, j) = weights(i, j) / std::sqrt(degrees(i) * degrees(j));
  return l;
}

AffinityGraph build_affinity(const Matrix& points, std::span<const double> alphas) {
  const auto n = points.rows();
  if (static_cast<Eigen::Index>(alphas.size()) != n) throw InvalidArgument("one scale per point required");
  for (double a : alphas)
    if (!(a > 0.0)) throw InvalidArgument("local scales must be positive");
  AffinityGraph g;
  g.alphas.assign(alphas.begin(), alphas.end());
  Matrix d2 = squared_distances(points);
  g.weights = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double w = std::exp(-d2(i, j) / (alphas[i] * alphas[j]));
      g.weights(i, j) = w;
      g.weights(j, i) = w;
    }
  g.degrees = g.weights.rowwise().sum();
  g.laplacian = normalized_laplacian(g.weights);
  return g;
}

Matrix spectral_embed(const Matrix& laplacian, int k) {
  if (k < 2 || k > laplacian.rows()) throw InvalidArgument("spectral_embed: need 2 <= k <= n");
  return embed_leading(eigenvectors_of(laplacian), k);
}

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, KMeansOptions options) {
  const auto n = points.rows();
  if (k < 1 || k > n) throw InvalidArgument("kmeans: need 1 <= k <= n");
  LloydRun best{{}, {}, std::numeric_limits<double>::infinity()};
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r), 0x6B6Du};
    std::mt19937_64 rng(seq);
    auto run = lloyd(points, k, rng, options.max_iterations);
    if (run.inertia < best.inertia) best = std::move(run);
  }

  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (Eigen::Index c = 0; c < points.cols(); ++c) {
      if (best.centroids(a, c) != best.centroids(b, c)) return best.centroids(a, c) < best.centroids(b, c);
    }
    return a < b;
  });
  std::vector<int> rank(k);
  for (int i = 0; i < k; ++i) rank[order[i]] = i;

  KMeansResult out;
  out.labels.resize(best.labels.size());
  for (std::size_t i = 0; i < best.labels.size(); ++i) out.labels[i] = rank[best.labels[i]];
  out.centroids.resize(k, points.cols());
  for (int i = 0; i < k; ++i) out.centroids.row(i) = best.centroids.row(order[i]);
  out.inertia = best.inertia;
  return out;
}

double davies_bouldin(const Matrix& points, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != points.rows())
    throw InvalidArgument("davies_bouldin: one label per point required");
  std::map<int, std::vector<Eigen::Index>> clusters;
  for (std::size_t i = 0; i < labels.size(); ++i) clusters[labels[i]].push_back(static_cast<Eigen::Index>(i));
  if (clusters.size() < 2) throw InvalidArgument("davies_bouldin: need at least two clusters");

  std::vector<Vector> centroid;
  std::vector<double> scatter;
  for (const auto& [label, members] : clusters) {
    Vector c = Vector::Zero(points.cols());
    for (auto i : members) c += points.row(i).transpose();
    c /= static_cast<double>(members.size());
    double s = 0.0;
    for (auto i : members) s += (points.row(i).transpose() - c).norm();
    centroid.push_back(std::move(c));
    scatter.push_back(s / static_cast<double>(members.size()));
  }
  const auto m = centroid.size();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      double sep = (centroid[i] - centroid[j]).norm();
      double ratio = sep > 0.0 ? (scatter[i] + scatter[j]) / sep : std::numeric_limits<double>::infinity();
      worst = std::max(worst, ratio);
    }
    total += worst;
  }
  return total / static_cast<double>(m);
}

double ncut(const Matrix& weights, std::span<const int> labels) {
  std::map<int, std::pair<double, double>> parts;  // cut, volume
  const auto n = weights.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& p = parts[labels[i]];
    for (Eigen::Index j = 0; j < n; ++j) {
      p.second += weights(i, j);
      if (labels[j] != labels[i]) p.first += weights(i, j);
    }
  }
  double total = 0.0;
  for (const auto& [label, p] : parts) total += p.second > 0.0 ? p.first / p.second : 0.0;
  return total;
}

KSelection select_k(const Matrix& points, const SpectralOptions& options, std::uint64_t seed) {
  const auto n = static_cast<int>(points.rows());
  if (options.k_min < 2 || options.k_max > n - 1 || options.k_min > options.k_max)
    throw InvalidArgument("select_k: k range must lie within [2, n-1]");
  auto alphas = local_scales(points, options.neighbor_rank);
  auto graph = build_affinity(points, alphas);
  Matrix vectors = eigenvectors_of(graph.laplacian);

  KSelection out, fallback;
  double best = std::numeric_limits<double>::infinity();
  double best_any = std::numeric_limits<double>::infinity();
  for (int k = options.k_min; k <= options.k_max; ++k) {
    Matrix embedding = embed_leading(vectors, k);
    auto clusters = kmeans(embedding, k, seed + static_cast<std::uint64_t>(k), options.kmeans);
    double dbi = davies_bouldin(points, clusters.labels);
    out.dbi_curve.emplace_back(k, dbi);
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int l : clusters.labels) ++sizes[static_cast<std::size_t>(l)];
    const bool eligible = *std::min_element(sizes.begin(), sizes.end()) >= options.min_cluster_size;
    if (eligible && (dbi < best || out.labels.empty())) {
      best = dbi;
      out.k = k;
      out.labels = clusters.labels;
    }
    if (dbi < best_any || fallback.labels.empty()) {
      best_any = dbi;
      fallback.k = k;
      fallback.labels = std::move(clusters.labels);
    }
  }
  if (out.labels.empty()) {
    out.k = fallback.k;
    out.labels = std::move(fallback.labels);
  }
  return out;
}

Matrix profile_matrix(std::span<const DailyProfile> profiles, bool normalize) {
  Matrix m(static_cast<Eigen::Index>(profiles.size()), kHoursPerDay);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto& v = profiles[i].values;
    double total = normalize ? std::accumulate(v.begin(), v.end(), 0.0) : 1.0;
    if (normalize && !(total > 0.0))
      throw InvalidArgument("profile of " + profiles[i].owner + " has zero daily energy");
    for (int h = 0; h < kHoursPerDay; ++h) m(static_cast<Eigen::Index>(i), h) = v[h] / total;
  }
  return m;
}

const SubsetPatterns& PatternBank::find(CustomerType type, DayKind kind) const {
  for (const auto& s : subsets)
    if (s.type == type && s.day_kind == kind) return s;
  throw InvalidArgument("pattern bank has no " + std::string(to_string(type)) + "/" +
                        std::string(to_string(kind)) + " subset");
}

bool PatternBank::contains(CustomerType type, DayKind kind) const {
  return std::any_of(subsets.begin(), subsets.end(),
                     [&](const SubsetPatterns& s) { return s.type == type && s.day_kind == kind; });
}

int PatternBank::class_of(std::string_view customer, CustomerType type, DayKind kind) const {
  for (const auto& c : find(type, kind).classes)
    if (std::find(c.members.begin(), c.members.end(), customer) != c.members.end()) return c.id;
  return -1;
}

PatternBank build_pattern_bank(std::span<const DataSubset> subsets, const SpectralOptions& options,
                               std::uint64_t seed) {
  PatternBank bank;
  for (const auto& subset : subsets) {
    const int n = static_cast<int>(subset.profiles.size());
    if (n < 4)
      throw InvalidArgument("subset " + std::string(to_string(subset.type)) + "/" +
                            std::string(to_string(subset.day_kind)) + " has " + std::to_string(n) +
                            " profiles; at least 4 are needed to cluster");
    SpectralOptions local = options;
    local.neighbor_rank = std::min(options.neighbor_rank, n - 1);
    local.k_max = std::min(options.k_max, n - 1);
    local.k_min = std::min(std::max(options.k_min, 2), local.k_max);

    Matrix shapes = profile_matrix(subset.profiles, true);
    auto selection = select_k(shapes, local, seed + 7919ull * subset_slot(subset.type, subset.day_kind));

    SubsetPatterns patterns;
    patterns.type = subset.type;
    patterns.day_kind = subset.day_kind;
    patterns.k = selection.k;
    patterns.dbi_curve = selection.dbi_curve;
    patterns.classes.resize(static_cast<std::size_t>(selection.k));
    for (int c = 0; c < selection.k; ++c) patterns.classes[c].id = c;
    for (int i = 0; i < n; ++i) {
      auto& cls = patterns.classes[selection.labels[i]];
      cls.members.push_back(subset.profiles[i].owner);
      cls.member_profiles.push_back(subset.profiles[i].values);
      for (int h = 0; h < kHoursPerDay; ++h) {
        cls.centroid[h] += subset.profiles[i].values[h];
        cls.shape[h] += shapes(i, h);
      }
    }
    for (auto& cls : patterns.classes) {
      double m = static_cast<double>(cls.members.size());
      for (int h = 0; h < kHoursPerDay; ++h) {
        cls.centroid[h] /= m;
        cls.shape[h] /= m;
      }
    }
    bank.subsets.push_back(std::move(patterns));
  }
  return bank;
}

namespace {
using nlohmann::json;
constexpr int kBankSchema = 1;
}  // namespace

std::string serialize_bank(const PatternBank& bank) {
  json doc;
  doc["schema_version"] = kBankSchema;
  doc["kind"] = "pattern_bank";
  doc["subsets"] = json::array();
  for (const auto& s : bank.subsets) {
    json js;
    js["type"] = std::string(to_string(s.type));
    js["day_kind"] = std::string(to_string(s.day_kind));
    js["k"] = s.k;
    js["dbi_curve"] = json::array();
    for (const auto& [k, dbi] : s.dbi_curve) js["dbi_curve"].push_back({{"k", k}, {"dbi", std::isfinite(dbi) ? json(dbi) : json(nullptr)}});
    js["classes"] = json::array();
    for (const auto& c : s.classes) {
      js["classes"].push_back({{"id", c.id},
                               {"centroid", c.centroid},
                               {"shape", c.shape},
                               {"members", c.members},
                               {"member_profiles", c.member_profiles}});
    }
    doc["subsets"].push_back(std::move(js));
  }
  return doc.dump();
}

PatternBank parse_bank(std::string_view text) {
  try {
    auto doc = json::parse(text);
    if (doc.at("schema_version").get<int>() != kBankSchema) throw ParseError("unsupported pattern bank schema");
    PatternBank bank;
    for (const auto& js : doc.at("subsets")) {
      SubsetPatterns s;
      s.type = parse_customer_type(js.at("type").get<std::string>());
      s.day_kind = parse_day_kind(js.at("day_kind").get<std::string>());
      s.k = js.at("k").get<int>();
      for (const auto& p : js.at("dbi_curve")) {
        double dbi = p.at("dbi").is_null() ? std::numeric_limits<double>::infinity() : p.at("dbi").get<double>();
        s.dbi_curve.emplace_back(p.at("k").get<int>(), dbi);
      }
      for (const auto& jc : js.at("classes")) {
        PatternClass c;
        c.id = jc.at("id").get<int>();
        c.centroid = jc.at("centroid").get<Profile24>();
        c.shape = jc.at("shape").get<Profile24>();
        c.members = jc.at("members").get<std::vector<std::string>>();
        c.member_profiles = jc.at("member_profiles").get<std::vector<Profile24>>();
        s.classes.push_back(std::move(c));
      }
      bank.subsets.push_back(std::move(s));
    }
    return bank;
  } catch (const json::exception& e) {
    throw ParseError(std::string("pattern bank: ") + e.what());
  }
}

void save_bank(const PatternBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize_bank(bank) << '\n';
}

PatternBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_bank(buf.str());
}

void write_dbi_curves(const PatternBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "type,day_kind,k,dbi,selected\n";
  for (const auto& s : bank.subsets)
    for (const auto& [k, dbi] : s.dbi_curve)
      out << to_string(s.type) << ',' << to_string(s.day_kind) << ',' << k << ',' << dbi << ','
          << (k == s.k ? 1 : 0) << '\n';
}

}  // namespace gridobs
