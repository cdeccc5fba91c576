#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <random>

#include "nowcast/error.hpp"
#include "nowcast/graph.hpp"

using namespace nowcast;

namespace {

std::vector<UnitNode> random_nodes(std::size_t n, std::mt19937_64& rng, double side = 5000.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<UnitNode> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i].id = "n" + std::to_string(i);
    nodes[i].x = u(rng) * side;
    nodes[i].y = u(rng) * side;
    nodes[i].features.in_floodplain = u(rng) < 0.4;
    nodes[i].features.residential_ratio = u(rng);
    nodes[i].features.watershed_id = u(rng) < 0.5 ? "a" : "b";
    nodes[i].features.dist_coast = u(rng) * 3000;
    nodes[i].features.dist_stream = u(rng) * 800;
  }
  return nodes;
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

double scalar_chebyshev(int k, double x) {
  double t0 = 1.0, t1 = x;
  if (k == 0) return t0;
  for (int i = 2; i <= k; ++i) {
    const double t2 = 2 * x * t1 - t0;
    t0 = t1;
    t1 = t2;
  }
  return t1;
}

UnitNode plain_node(const std::string& id, double x, double y) {
  UnitNode u;
  u.id = id;
  u.x = x;
  u.y = y;
  u.features.watershed_id = "w";
  return u;
}

}  // namespace

TEST_CASE("pairwise static distance") {
  StaticNormStats stats;
  stats.residential = {0.0, 1.0};
  stats.coast = {0.0, 1.0};
  StaticFeatures a, b;
  a.watershed_id = b.watershed_id = "x";
  CHECK(pairwise_static_distance(a, b, stats) == 0.0);
  b.watershed_id = "y";
  CHECK(pairwise_static_distance(a, b, stats) == 1.0);
  b.watershed_id = "x";
  b.residential_ratio = 3.0;
  b.dist_coast = 4.0;
  CHECK(pairwise_static_distance(a, b, stats) == doctest::Approx(5.0).epsilon(1e-15));
  // Inactive fields (std 0) do not contribute.
  b.dist_stream = 100.0;
  CHECK(pairwise_static_distance(a, b, stats) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("static stats drop constant fields and use population std") {
  std::vector<UnitNode> nodes = {plain_node("a", 0, 0), plain_node("b", 1, 0)};
  nodes[0].features.residential_ratio = 0.2;
  nodes[1].features.residential_ratio = 0.6;
  const auto s = StaticNormStats::fit(nodes);
  CHECK(s.residential.active());
  CHECK(s.residential.mean == doctest::Approx(0.4));
  CHECK(s.residential.std == doctest::Approx(0.2));
  CHECK_FALSE(s.coast.active());
  CHECK_FALSE(s.floodplain.active());
}

TEST_CASE("adjacency of three collinear nodes") {
  const std::vector<UnitNode> nodes = {plain_node("a", 0, 0), plain_node("b", 1, 0), plain_node("c", 2, 0)};
  std::vector<std::string> warnings;
  const auto a = build_adjacency(nodes, {}, &warnings);
  // sigma_d = population std of {1, 1, 2}
  const double sd = std::sqrt(((1 - 4.0 / 3) * (1 - 4.0 / 3) * 2 + (2 - 4.0 / 3) * (2 - 4.0 / 3)) / 3);
  CHECK(sd == doctest::Approx(0.4714).epsilon(1e-4));
  const double expected = 0.9 * std::exp(-(1 / sd) * (1 / sd)) + 0.1;
  CHECK(a(0, 1) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(a(0, 1) == doctest::Approx(0.110).epsilon(1e-3));
  CHECK(a(0, 0) == 0.0);
  CHECK(a(1, 0) == a(0, 1));
  // identical static features: sigma_s = 0 falls back to 1 with a warning
  CHECK_FALSE(warnings.empty());
}

TEST_CASE("coincident nodes with identical features get weight 1") {
  const std::vector<UnitNode> nodes = {plain_node("a", 0, 0), plain_node("b", 0, 0), plain_node("c", 3, 4)};
  const auto a = build_adjacency(nodes);
  CHECK(a(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("adjacency errors") {
  CHECK_THROWS_AS(build_adjacency({plain_node("a", 0, 0)}), UsageError);
  CHECK_THROWS_AS(build_adjacency({plain_node("a", 0, 0), plain_node("a", 1, 0)}), UsageError);
  AdjacencyOptions bad;
  bad.w_dist = 0.5;
  CHECK_THROWS_AS(build_adjacency({plain_node("a", 0, 0), plain_node("b", 1, 0)}, bad), UsageError);
}

TEST_CASE("graph invariants on random graphs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 2 + seed % 9;
    const auto g = RegionGraph::build(random_nodes(n, rng), 4);
    const auto& a = g.adjacency();
    const auto& l = g.laplacian();
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(a(i, i) == 0.0);
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(a(i, j) == a(j, i));
        CHECK(a(i, j) >= 0.0);
        CHECK(a(i, j) <= 1.0);
        CHECK((a(i, j) == 0.0 || a(i, j) >= 1e-4));
        row += l(i, j);
      }
      CHECK(std::abs(row) <= 1e-12);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(g.scaled_laplacian()));
    CHECK(es.eigenvalues().minCoeff() >= -1 - 1e-9);
    CHECK(es.eigenvalues().maxCoeff() <= 1 + 1e-9);
  }
}

TEST_CASE("laplacian examples") {
  Matrix a(2, 2);
  a(0, 1) = a(1, 0) = 1;
  const auto l = laplacian(a);
  CHECK(l(0, 0) == 1);
  CHECK(l(0, 1) == -1);
  CHECK(laplacian(Matrix(3, 3)) == Matrix(3, 3));
  Matrix asym(2, 2);
  asym(0, 1) = 1;
  CHECK_THROWS_AS(laplacian(asym), UsageError);
}

TEST_CASE("scaled laplacian of the 2-node path") {
  Matrix l(2, 2);
  l(0, 0) = l(1, 1) = 1;
  l(0, 1) = l(1, 0) = -1;
  const auto s = scaled_laplacian(l);
  CHECK(s.lambda_max == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(std::abs(s.matrix(0, 0)) <= 1e-9);
  CHECK(s.matrix(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));

  std::vector<std::string> warnings;
  const auto z = scaled_laplacian(Matrix(3, 3), &warnings);
  CHECK(z.degenerate);
  CHECK(z.matrix == [] {
    Matrix m(3, 3);
    for (std::size_t i = 0; i < 3; ++i) m(i, i) = -1;
    return m;
  }());
  CHECK(warnings.size() == 1);
}

TEST_CASE("power iteration matches a dense eigensolver") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    Eigen::MatrixXd b(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) b(i, j) = u(rng);
    const Eigen::MatrixXd psd = b * b.transpose();
    Matrix m(6, 6);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) m(i, j) = psd(static_cast<int>(i), static_cast<int>(j));
    const auto r = largest_eigenvalue(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(psd);
    const double ref = es.eigenvalues().maxCoeff();
    CHECK(r.converged);
    CHECK(std::abs(r.eigenvalue - ref) / ref < 1e-8);
  }
}

TEST_CASE("chebyshev basis examples") {
  Matrix s(2, 2);
  s(0, 1) = s(1, 0) = -1;
  const auto k1 = chebyshev_basis(s, 1);
  REQUIRE(k1.size() == 1);
  CHECK(k1[0] == Matrix::identity(2));
  const auto k3 = chebyshev_basis(s, 3);
  CHECK(k3[1] == s);
  CHECK(k3[2] == Matrix::identity(2));
  CHECK_THROWS_AS(chebyshev_basis(s, 0), UsageError);
}

TEST_CASE("chebyshev basis matches the spectral definition") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::size_t n = 2 + seed % 7;
    const auto g = RegionGraph::build(random_nodes(n, rng), 4);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(g.scaled_laplacian()));
    const auto& u = es.eigenvectors();
    for (int k = 0; k < 4; ++k) {
      Eigen::VectorXd diag(static_cast<int>(n));
      for (int i = 0; i < static_cast<int>(n); ++i) diag(i) = scalar_chebyshev(k, es.eigenvalues()(i));
      const Eigen::MatrixXd ref = u * diag.asDiagonal() * u.transpose();
      const auto& tk = g.cheb_basis()[static_cast<std::size_t>(k)];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(tk(i, j) - ref(static_cast<int>(i), static_cast<int>(j))) <= 1e-8);
    }
  }
}

TEST_CASE("relabelling nodes permutes every operator exactly") {
  std::mt19937_64 rng(9);
  const auto nodes = random_nodes(6, rng);
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  const auto g = RegionGraph::build(nodes, 3);
  std::vector<UnitNode> relabelled;
  for (auto p : perm) relabelled.push_back(nodes[p]);
  const auto h = RegionGraph::build(relabelled, 3);
  CHECK(h.adjacency() == permuted(g.adjacency(), perm));
  CHECK(h.laplacian() == permuted(g.laplacian(), perm));
  const auto gp = g.permuted(perm);
  for (std::size_t k = 0; k < 3; ++k) CHECK(gp.cheb_basis()[k] == permuted(g.cheb_basis()[k], perm));
}

TEST_CASE("feature weight leaves the nearest neighbour unchanged when features are identical") {
  std::mt19937_64 rng(4);
  auto nodes = random_nodes(7, rng);
  for (auto& n : nodes) n.features = nodes[0].features;
  AdjacencyOptions pure{1.0, 0.0, 0.0};
  const auto a0 = build_adjacency(nodes, pure);
  for (double wf : {0.1, 0.3, 0.5}) {
    const auto a = build_adjacency(nodes, {1.0 - wf, wf, 0.0});
    for (std::size_t i = 0; i < 7; ++i) {
      auto argmax = [&](const Matrix& m) {
        std::size_t best = i == 0 ? 1 : 0;
        for (std::size_t j = 0; j < 7; ++j)
          if (j != i && m(i, j) > m(i, best)) best = j;
        return best;
      };
      CHECK(argmax(a) == argmax(a0));
    }
  }
}

TEST_CASE("edgeless graph has T_k = +-I") {
  std::mt19937_64 rng(2);
  const auto g = RegionGraph::edgeless(random_nodes(4, rng), 4);
  const auto eye = Matrix::identity(4);
  Matrix neg(4, 4);
  for (std::size_t i = 0; i < 4; ++i) neg(i, i) = -1;
  CHECK(g.cheb_basis()[0] == eye);
  CHECK(g.cheb_basis()[1] == neg);
  CHECK(g.cheb_basis()[2] == eye);
  CHECK(g.cheb_basis()[3] == neg);
}
