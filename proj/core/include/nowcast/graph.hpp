#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nowcast/matrix.hpp"

namespace nowcast {

struct StaticFeatures {
  bool in_floodplain = false;
  double residential_ratio = 0.0;  // [0, 1]
  std::string watershed_id;
  double dist_coast = 0.0;   // meters
  double dist_stream = 0.0;  // meters
};

struct UnitNode {
  std::string id;
  double x = 0.0;  // planar meters
  double y = 0.0;
  StaticFeatures features;
};

/// Population mean/std of the numeric static fields. A field whose std is
/// zero is dropped from the static distance.
struct StaticNormStats {
  struct Field {
    double mean = 0.0;
    double std = 0.0;
    bool active() const { return std > 0.0; }
    double z(double v) const { return (v - mean) / std; }
  };
  Field floodplain;
  Field residential;
  Field coast;
  Field stream;

  static StaticNormStats fit(const std::vector<UnitNode>& nodes);
};

/// Euclidean distance over [z(floodplain), z(residential), watershed
/// mismatch (0/1), z(dist_coast), z(dist_stream)].
double pairwise_static_distance(const StaticFeatures& a, const StaticFeatures& b,
                                const StaticNormStats& stats);

struct AdjacencyOptions {
  double w_dist = 0.9;
  double w_feat = 0.1;
  double epsilon = 1e-4;  // weights below this are zeroed
};

/// Mixture of Gaussian kernels on centroid distance and static distance:
///   A_ij = w_dist exp(-(d_ij/sd_d)^2) + w_feat exp(-(s_ij/sd_s)^2),  A_ii = 0
/// with sd_* the population std of the off-diagonal distances.
/// Appends a message to `warnings` (if given) when a bandwidth falls back to 1.
Matrix build_adjacency(const std::vector<UnitNode>& nodes, const AdjacencyOptions& options = {},
                       std::vector<std::string>* warnings = nullptr);

/// L = D - A.
Matrix laplacian(const Matrix& adjacency);

struct PowerIterationResult {
  double eigenvalue = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Largest eigenvalue of a symmetric PSD matrix. Stops when the eigen-residual
/// ||Mv - lambda v|| falls below tol * lambda.
PowerIterationResult largest_eigenvalue(const Matrix& m, double tol = 1e-9, int max_iterations = 10000);

struct ScaledLaplacian {
  Matrix matrix;  // (2 / lambda_max) L - I
  double lambda_max = 0.0;
  bool degenerate = false;  // edgeless graph, lambda_max forced to 2
};

ScaledLaplacian scaled_laplacian(const Matrix& laplacian, std::vector<std::string>* warnings = nullptr);

/// T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}.
std::vector<Matrix> chebyshev_basis(const Matrix& scaled, int order);

/// Graph over geographic units with every operator the model needs.
/// Immutable once built.
class RegionGraph {
 public:
  static RegionGraph build(std::vector<UnitNode> nodes, int cheb_order = 3,
                           const AdjacencyOptions& options = {});
  /// Same nodes with no edges (A = 0, L~ = -I).
  static RegionGraph edgeless(std::vector<UnitNode> nodes, int cheb_order = 3);
  /// Relabels nodes so that new node i is old node perm[i].
  RegionGraph permuted(const std::vector<std::size_t>& perm) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<UnitNode>& nodes() const noexcept { return nodes_; }
  const Matrix& adjacency() const noexcept { return adjacency_; }
  const Matrix& laplacian() const noexcept { return laplacian_; }
  const Matrix& scaled_laplacian() const noexcept { return scaled_.matrix; }
  double lambda_max() const noexcept { return scaled_.lambda_max; }
  const std::vector<Matrix>& cheb_basis() const noexcept { return basis_; }
  int cheb_order() const noexcept { return static_cast<int>(basis_.size()); }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

 private:
  static RegionGraph from_adjacency(std::vector<UnitNode> nodes, Matrix adjacency, int cheb_order,
                                    std::vector<std::string> warnings);

  std::vector<UnitNode> nodes_;
  Matrix adjacency_;
  Matrix laplacian_;
  ScaledLaplacian scaled_;
  std::vector<Matrix> basis_;
  std::vector<std::string> warnings_;
};

/// nodes CSV: id,x,y,in_floodplain,residential_ratio,watershed_id,dist_coast,dist_stream
std::vector<UnitNode> read_nodes_csv(const std::filesystem::path& path);
void write_nodes_csv(const std::filesystem::path& path, const std::vector<UnitNode>& nodes);
/// Upper triangle, nonzero entries only: id_i,id_j,weight
void write_adjacency_csv(const std::filesystem::path& path, const RegionGraph& graph);

}  // namespace nowcast
