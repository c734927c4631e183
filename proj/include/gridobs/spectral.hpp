#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gridobs/amigen.hpp"

namespace gridobs {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Self-tuning scale of every row of `points`: distance to its K-th nearest
/// neighbour, floored at 1e-9 of the dataset diameter so duplicates survive.
std::vector<double> local_scales(const Matrix& points, int neighbor_rank);

struct AffinityGraph {
  Matrix weights;              // symmetric, zero diagonal, entries in [0, 1]
  std::vector<double> alphas;
  Vector degrees;
  Matrix laplacian;            // D^-1/2 W D^-1/2
};

/// Gaussian-kernel affinity w_ij = exp(-|Vi - Vj|^2 / (alpha_i alpha_j)).
AffinityGraph build_affinity(const Matrix& points, std::span<const double> alphas);

Matrix normalized_laplacian(const Matrix& weights);

/// Eigenvectors of the k largest eigenvalues, columns ordered by decreasing
/// eigenvalue, each column signed so its largest-magnitude entry is
/// positive; rows normalised to unit length.
Matrix spectral_embed(const Matrix& laplacian, int k);

struct KMeansOptions {
  int restarts = 10;
  int max_iterations = 300;
};

struct KMeansResult {
  std::vector<int> labels;
  Matrix centroids;  // k x d
  double inertia = 0.0;
};

/// Lloyd iterations from farthest-point seeding; best of `restarts`.
/// Clusters are numbered in lexicographic order of their centroids, which
/// makes labels invariant to input order.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, KMeansOptions options = {});

/// Davies-Bouldin index; +inf when two centroids coincide.
double davies_bouldin(const Matrix& points, std::span<const int> labels);

// Normalized-cut objective of a labelling on affinity W.
double ncut(const Matrix& weights, std::span<const int> labels);

struct SpectralOptions {
  int neighbor_rank = 7;
  int k_min = 2;
  int k_max = 10;
  // A candidate k whose clustering leaves a cluster smaller than this is not
  // eligible (its DBI is still reported). When no k is eligible the plain
  // DBI minimum is used.
  int min_cluster_size = 3;
  KMeansOptions kmeans;
};

struct KSelection {
  int k = 0;
  std::vector<std::pair<int, double>> dbi_curve;
  std::vector<int> labels;
};

/// Runs the spectral pipeline for every k in [k_min, k_max] and keeps the k
/// with the smallest DBI (ties go to the smaller k). DBI is measured in the
/// input space so scores for different k are comparable.
KSelection select_k(const Matrix& points, const SpectralOptions& options, std::uint64_t seed);

// Rows are profiles; with `normalize`, each divided by its daily sum.
Matrix profile_matrix(std::span<const DailyProfile> profiles, bool normalize);

struct PatternClass {
  int id = 0;
  Profile24 centroid{};  // mean of the members' raw profiles (kWh)
  Profile24 shape{};     // mean of the members' unit-sum profiles
  std::vector<std::string> members;
  std::vector<Profile24> member_profiles;
};

struct SubsetPatterns {
  CustomerType type = CustomerType::Residential;
  DayKind day_kind = DayKind::Weekday;
  int k = 0;
  std::vector<std::pair<int, double>> dbi_curve;
  std::vector<PatternClass> classes;
};

class PatternBank {
 public:
  std::vector<SubsetPatterns> subsets;

  const SubsetPatterns& find(CustomerType type, DayKind kind) const;
  bool contains(CustomerType type, DayKind kind) const;
  // Class holding the customer in the given subset, or -1.
  int class_of(std::string_view customer, CustomerType type, DayKind kind) const;
};

PatternBank build_pattern_bank(std::span<const DataSubset> subsets, const SpectralOptions& options,
                               std::uint64_t seed);

std::string serialize_bank(const PatternBank& bank);
PatternBank parse_bank(std::string_view text);
void save_bank(const PatternBank& bank, const std::filesystem::path& path);
PatternBank load_bank(const std::filesystem::path& path);
// k,dbi rows for every subset.
void write_dbi_curves(const PatternBank& bank, const std::filesystem::path& path);

}  // namespace gridobs
