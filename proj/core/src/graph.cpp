#include "nowcast/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "nowcast/csv.hpp"
#include "nowcast/error.hpp"
#include "nowcast/log.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// Matrix helpers

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw UsageError("matrix product: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double v = a(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += v * b(k, j);
    }
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw UsageError("matrix difference: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix transposed(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix permuted(const Matrix& m, const std::vector<std::size_t>& perm) {
  if (m.rows() != perm.size() || m.cols() != perm.size()) throw UsageError("permuted: size mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < perm.size(); ++j) out(i, j) = m(perm[i], perm[j]);
  return out;
}

// ---------------------------------------------------------------------------
// Static features

namespace {

StaticNormStats::Field fit_field(const std::vector<UnitNode>& nodes, double (*get)(const UnitNode&)) {
  StaticNormStats::Field f;
  const double n = static_cast<double>(nodes.size());
  for (const auto& node : nodes) f.mean += get(node);
  f.mean /= n;
  double var = 0.0;
  for (const auto& node : nodes) var += (get(node) - f.mean) * (get(node) - f.mean);
  f.std = std::sqrt(var / n);
  // Treat round-off spread of a constant field as constant.
  if (f.std <= 1e-12 * std::max(1.0, std::abs(f.mean))) f.std = 0.0;
  return f;
}

void validate_node(const UnitNode& n) {
  if (!std::isfinite(n.x) || !std::isfinite(n.y)) throw UsageError("node " + n.id + ": non-finite centroid");
  const auto& s = n.features;
  if (!(s.residential_ratio >= 0.0 && s.residential_ratio <= 1.0)) {
    throw UsageError("node " + n.id + ": residential_ratio outside [0,1]");
  }
  if (!(s.dist_coast >= 0.0) || !(s.dist_stream >= 0.0)) {
    throw UsageError("node " + n.id + ": distances must be nonnegative and finite");
  }
}

}  // namespace

StaticNormStats StaticNormStats::fit(const std::vector<UnitNode>& nodes) {
  if (nodes.empty()) throw UsageError("StaticNormStats::fit: no nodes");
  StaticNormStats s;
  s.floodplain = fit_field(nodes, [](const UnitNode& n) { return n.features.in_floodplain ? 1.0 : 0.0; });
  s.residential = fit_field(nodes, [](const UnitNode& n) { return n.features.residential_ratio; });
  s.coast = fit_field(nodes, [](const UnitNode& n) { return n.features.dist_coast; });
  s.stream = fit_field(nodes, [](const UnitNode& n) { return n.features.dist_stream; });
  return s;
}

double pairwise_static_distance(const StaticFeatures& a, const StaticFeatures& b, const StaticNormStats& stats) {
  double sq = 0.0;
  auto add = [&sq](const StaticNormStats::Field& f, double va, double vb) {
    if (!f.active()) return;
    const double d = f.z(va) - f.z(vb);
    sq += d * d;
  };
  add(stats.floodplain, a.in_floodplain ? 1.0 : 0.0, b.in_floodplain ? 1.0 : 0.0);
  add(stats.residential, a.residential_ratio, b.residential_ratio);
  if (a.watershed_id != b.watershed_id) sq += 1.0;
  add(stats.coast, a.dist_coast, b.dist_coast);
  add(stats.stream, a.dist_stream, b.dist_stream);
  const double d = std::sqrt(sq);
  if (!std::isfinite(d)) throw DomainError("pairwise_static_distance: non-finite input");
  return d;
}

// ---------------------------------------------------------------------------
// Adjacency and Laplacians

namespace {

double off_diagonal_std(const Matrix& d) {
  const std::size_t n = d.rows();
  double mean = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        mean += d(i, j);
        ++count;
      }
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) var += (d(i, j) - mean) * (d(i, j) - mean);
  return std::sqrt(var / static_cast<double>(count));
}

void warn(std::vector<std::string>* sink, const std::string& msg) {
  log().warn("{}", msg);
  if (sink) sink->push_back(msg);
}

void require_symmetric(const Matrix& a, const char* op) {
  if (a.rows() != a.cols()) throw UsageError(std::string(op) + ": matrix is not square");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-12) throw UsageError(std::string(op) + ": matrix is not symmetric");
}

}  // namespace

Matrix build_adjacency(const std::vector<UnitNode>& nodes, const AdjacencyOptions& options,
                       std::vector<std::string>* warnings) {
  const std::size_t n = nodes.size();
  if (n < 2) throw UsageError("build_adjacency: need at least 2 nodes");
  if (options.w_dist < 0.0 || options.w_feat < 0.0 || std::abs(options.w_dist + options.w_feat - 1.0) > 1e-12) {
    throw UsageError("build_adjacency: weights must be nonnegative and sum to 1");
  }
  std::set<std::string> ids;
  for (const auto& node : nodes) {
    validate_node(node);
    if (!ids.insert(node.id).second) throw UsageError("build_adjacency: duplicate node id " + node.id);
  }

  const StaticNormStats stats = StaticNormStats::fit(nodes);
  Matrix dist(n, n), feat(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::hypot(nodes[i].x - nodes[j].x, nodes[i].y - nodes[j].y);
      const double s = pairwise_static_distance(nodes[i].features, nodes[j].features, stats);
      dist(i, j) = dist(j, i) = d;
      feat(i, j) = feat(j, i) = s;
    }

  double sd_dist = off_diagonal_std(dist);
  double sd_feat = off_diagonal_std(feat);
  if (sd_dist <= 0.0) {
    warn(warnings, "build_adjacency: all centroid distances identical, using bandwidth 1");
    sd_dist = 1.0;
  }
  if (sd_feat <= 0.0) {
    warn(warnings, "build_adjacency: all static distances identical, using bandwidth 1");
    sd_feat = 1.0;
  }

  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double rd = dist(i, j) / sd_dist;
      const double rs = feat(i, j) / sd_feat;
      double w = options.w_dist * std::exp(-rd * rd) + options.w_feat * std::exp(-rs * rs);
      if (w < options.epsilon) w = 0.0;
      a(i, j) = a(j, i) = w;
    }
  return a;
}

Matrix laplacian(const Matrix& adjacency) {
  require_symmetric(adjacency, "laplacian");
  const std::size_t n = adjacency.rows();
  Matrix l(n, n);
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (adjacency(i, j) < 0.0) throw UsageError("laplacian: negative adjacency weight");
      if (i != j) {
        row.push_back(adjacency(i, j));
        l(i, j) = -adjacency(i, j);
      }
    }
    // Summing in sorted order keeps the degree independent of node labels.
    std::sort(row.begin(), row.end());
    l(i, i) = std::accumulate(row.begin(), row.end(), 0.0);
  }
  return l;
}

PowerIterationResult largest_eigenvalue(const Matrix& m, double tol, int max_iterations) {
  const std::size_t n = m.rows();
  PowerIterationResult result;
  if (n == 0) return result;
  // Fixed pseudo-random start: never orthogonal to the dominant eigenvector in
  // practice, and reproducible.
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  std::vector<double> v(n), w(n);
  for (auto& x : v) x = unif(rng) * ((&x - v.data()) % 2 ? -1.0 : 1.0);

  auto normalize = [](std::vector<double>& x) {
    double norm = 0.0;
    for (double e : x) norm += e * e;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (auto& e : x) e /= norm;
    return norm;
  };
  auto apply = [&m, n](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += m(i, j) * x[j];
      y[i] = acc;
    }
  };

  normalize(v);
  for (int it = 1; it <= max_iterations; ++it) {
    apply(v, w);
    double lambda = 0.0;
    for (std::size_t i = 0; i < n; ++i) lambda += v[i] * w[i];
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) residual += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
    residual = std::sqrt(residual);
    result.eigenvalue = lambda;
    result.iterations = it;
    const double wnorm = normalize(w);
    if (wnorm == 0.0 || residual <= tol * std::abs(lambda)) {
      result.converged = true;
      return result;
    }
    v.swap(w);
  }
  return result;
}

ScaledLaplacian scaled_laplacian(const Matrix& lap, std::vector<std::string>* warnings) {
  require_symmetric(lap, "scaled_laplacian");
  const std::size_t n = lap.rows();
  ScaledLaplacian out;
  const auto power = largest_eigenvalue(lap);
  if (!power.converged) {
    warn(warnings, "scaled_laplacian: power iteration did not converge after " +
                       std::to_string(power.iterations) + " iterations");
  }
  out.lambda_max = power.eigenvalue;
  if (out.lambda_max < 1e-12) {
    warn(warnings, "scaled_laplacian: edgeless graph (lambda_max ~ 0), using lambda_max = 2");
    out.lambda_max = 2.0;
    out.degenerate = true;
  }
  out.matrix = Matrix(n, n);
  const double f = 2.0 / out.lambda_max;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.matrix(i, j) = f * lap(i, j) - (i == j ? 1.0 : 0.0);
  return out;
}

std::vector<Matrix> chebyshev_basis(const Matrix& scaled, int order) {
  if (order < 1) throw UsageError("chebyshev_basis: order must be >= 1");
  if (scaled.rows() != scaled.cols()) throw UsageError("chebyshev_basis: matrix is not square");
  const std::size_t n = scaled.rows();
  std::vector<Matrix> basis;
  basis.reserve(static_cast<std::size_t>(order));
  basis.push_back(Matrix::identity(n));
  if (order > 1) basis.push_back(scaled);
  for (int k = 2; k < order; ++k) {
    Matrix next = scaled * basis[k - 1];
    const Matrix& prev2 = basis[k - 2];
    for (std::size_t i = 0; i < next.data().size(); ++i) next.data()[i] = 2.0 * next.data()[i] - prev2.data()[i];
    basis.push_back(std::move(next));
  }
  return basis;
}

// ---------------------------------------------------------------------------
// RegionGraph

RegionGraph RegionGraph::from_adjacency(std::vector<UnitNode> nodes, Matrix adjacency, int cheb_order,
                                        std::vector<std::string> warnings) {
  RegionGraph g;
  g.nodes_ = std::move(nodes);
  g.warnings_ = std::move(warnings);
  g.adjacency_ = std::move(adjacency);
  g.laplacian_ = nowcast::laplacian(g.adjacency_);
  g.scaled_ = nowcast::scaled_laplacian(g.laplacian_, &g.warnings_);
  g.basis_ = chebyshev_basis(g.scaled_.matrix, cheb_order);
  return g;
}

RegionGraph RegionGraph::build(std::vector<UnitNode> nodes, int cheb_order, const AdjacencyOptions& options) {
  std::vector<std::string> warnings;
  Matrix a = build_adjacency(nodes, options, &warnings);
  return from_adjacency(std::move(nodes), std::move(a), cheb_order, std::move(warnings));
}

RegionGraph RegionGraph::edgeless(std::vector<UnitNode> nodes, int cheb_order) {
  const std::size_t n = nodes.size();
  if (n < 1) throw UsageError("RegionGraph::edgeless: no nodes");
  // The degenerate lambda_max branch is expected here; keep it out of the log.
  RegionGraph g;
  g.nodes_ = std::move(nodes);
  g.adjacency_ = Matrix(n, n);
  g.laplacian_ = Matrix(n, n);
  g.scaled_.lambda_max = 2.0;
  g.scaled_.degenerate = true;
  g.scaled_.matrix = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) g.scaled_.matrix(i, i) = -1.0;
  g.basis_ = chebyshev_basis(g.scaled_.matrix, cheb_order);
  return g;
}

RegionGraph RegionGraph::permuted(const std::vector<std::size_t>& perm) const {
  if (perm.size() != size()) throw UsageError("RegionGraph::permuted: size mismatch");
  RegionGraph g;
  for (auto p : perm) g.nodes_.push_back(nodes_.at(p));
  g.adjacency_ = nowcast::permuted(adjacency_, perm);
  g.laplacian_ = nowcast::permuted(laplacian_, perm);
  g.scaled_ = scaled_;
  g.scaled_.matrix = nowcast::permuted(scaled_.matrix, perm);
  for (const auto& t : basis_) g.basis_.push_back(nowcast::permuted(t, perm));
  g.warnings_ = warnings_;
  return g;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<UnitNode> read_nodes_csv(const std::filesystem::path& path) {
  const auto table = CsvTable::read(path);
  const auto c_id = table.column("id"), c_x = table.column("x"), c_y = table.column("y"),
             c_fp = table.column("in_floodplain"), c_res = table.column("residential_ratio"),
             c_ws = table.column("watershed_id"), c_coast = table.column("dist_coast"),
             c_stream = table.column("dist_stream");
  std::vector<UnitNode> nodes;
  nodes.reserve(table.rows());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    UnitNode n;
    n.id = table.cell(r, c_id);
    n.x = table.number(r, c_x);
    n.y = table.number(r, c_y);
    const auto fp = table.integer(r, c_fp);
    if (fp != 0 && fp != 1) throw UsageError(path.string() + ": in_floodplain must be 0 or 1");
    n.features.in_floodplain = fp == 1;
    n.features.residential_ratio = table.number(r, c_res);
    n.features.watershed_id = table.cell(r, c_ws);
    n.features.dist_coast = table.number(r, c_coast);
    n.features.dist_stream = table.number(r, c_stream);
    validate_node(n);
    nodes.push_back(std::move(n));
  }
  return nodes;
}

void write_nodes_csv(const std::filesystem::path& path, const std::vector<UnitNode>& nodes) {
  std::ostringstream os;
  os << "id,x,y,in_floodplain,residential_ratio,watershed_id,dist_coast,dist_stream\n";
  for (const auto& n : nodes) {
    os << n.id << ',' << format_double(n.x) << ',' << format_double(n.y) << ','
       << (n.features.in_floodplain ? 1 : 0) << ',' << format_double(n.features.residential_ratio) << ','
       << n.features.watershed_id << ',' << format_double(n.features.dist_coast) << ','
       << format_double(n.features.dist_stream) << '\n';
  }
  write_text_file(path, os.str());
}

void write_adjacency_csv(const std::filesystem::path& path, const RegionGraph& graph) {
  std::ostringstream os;
  os << "id_i,id_j,weight\n";
  const auto& a = graph.adjacency();
  for (std::size_t i = 0; i < graph.size(); ++i)
    for (std::size_t j = i + 1; j < graph.size(); ++j)
      if (a(i, j) != 0.0) {
        os << graph.nodes()[i].id << ',' << graph.nodes()[j].id << ',' << format_double(a(i, j)) << '\n';
      }
  write_text_file(path, os.str());
}

}  // namespace nowcast
