// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <utility>

#include "nowcast/error.hpp"
#include "nowcast/features.hpp"
#include "nowcast/graph.hpp"
#include "nowcast/log.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/model.hpp"
#include "nowcast/scenario.hpp"
#include "nowcast/trainer.hpp"

using namespace nowcast;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("criterion %d %s: %s (%s; %.1f s)\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<UnitNode> random_nodes(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<UnitNode> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i].id = "n" + std::to_string(i);
    nodes[i].x = 1000.0 * u(rng);
    nodes[i].y = 1000.0 * u(rng);
    nodes[i].features.in_floodplain = u(rng) < 0.5;
    nodes[i].features.residential_ratio = u(rng);
    nodes[i].features.watershed_id = u(rng) < 0.5 ? "a" : "b";
    nodes[i].features.dist_coast = 5000.0 * u(rng);
    nodes[i].features.dist_stream = 800.0 * u(rng);
  }
  return nodes;
}

Tensor normal_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// 1 -------------------------------------------------------------------------

// Per-element central differences, also tracking the worst error over
// elements whose gradient is large enough to sit above roundoff noise.
struct GradScan {
  double worst = 0.0, worst_grad = 0.0, worst_large = 0.0;
};

void scan_param(const std::function<Tensor()>& loss, Tensor& param, double eps, GradScan& out) {
  param.zero_grad();
  backward(loss());
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  auto v = param.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double o = v[i];
    double plus = 0.0, minus = 0.0;
    {
      NoGradGuard guard;
      v[i] = o + eps;
      plus = loss().values()[0];
      v[i] = o - eps;
      minus = loss().values()[0];
    }
    v[i] = o;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic[i] - numeric) / scale;
    if (err > out.worst) {
      out.worst = err;
      out.worst_grad = analytic[i];
    }
    if (scale >= 1e-6) out.worst_large = std::max(out.worst_large, err);
  }
}

Outcome gradient_correctness() {
  GradScan scan;
  std::string worst_group;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const auto graph = RegionGraph::build(random_nodes(3, rng));
    const auto ops = GraphOperators::from(graph, 3);
    ModelConfig mc;
    mc.nodes = 3;
    mc.block_channels = {4};
    mc.window = 4;
    mc.seed = seed;
    auto p = ModelParams::init(mc);
    const auto x = normal_tensor({3, kChannels, 4}, rng);
    const std::vector<int> labels = {0, 1, 2};
    auto loss = [&] { return cross_entropy(forward(x, ops, p).logits, labels, {1.0, 1.5, 2.0}); };
    for (auto& [name, tensor] : p.parameters()) {
      const double before = scan.worst;
      scan_param(loss, *tensor, 1e-5, scan);
      if (scan.worst > before) worst_group = name + " seed " + std::to_string(seed);
    }
  }
  return {scan.worst < 1e-4, "max relative error " + fmt("%.3g", scan.worst) + " at " + worst_group + " (|grad| " +
                                 fmt("%.2g", std::abs(scan.worst_grad)) + "), max over |grad| >= 1e-6: " +
                                 fmt("%.3g", scan.worst_large)};
}

// 2 -------------------------------------------------------------------------

Outcome spectral_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> size(2, 8);
  std::uniform_int_distribution<int> order(1, 4);
  double worst = 0.0, lo = 0.0, hi = 0.0;
  for (int g = 0; g < 10; ++g) {
    const std::size_t n = size(rng);
    const int k = order(rng);
    const auto graph = RegionGraph::build(random_nodes(n, rng), k);
    const auto& lt = graph.scaled_laplacian();
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) = lt(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    const auto& lam = eig.eigenvalues();
    lo = std::min(lo, lam.minCoeff());
    hi = std::max(hi, lam.maxCoeff());
    for (int order_k = 0; order_k < k; ++order_k) {
      Eigen::VectorXd tk(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double l = std::clamp(lam(static_cast<Eigen::Index>(i)), -1.0, 1.0);
        tk(static_cast<Eigen::Index>(i)) = std::cos(order_k * std::acos(l));
      }
      const Eigen::MatrixXd ref = eig.eigenvectors() * tk.asDiagonal() * eig.eigenvectors().transpose();
      const auto& got = graph.cheb_basis()[static_cast<std::size_t>(order_k)];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          worst = std::max(worst, std::abs(got(i, j) - ref(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
  }
  const bool in_range = lo >= -1.0 - 1e-9 && hi <= 1.0 + 1e-9;
  return {worst <= 1e-8 && in_range, "max |T_k - U T_k(L) U^T| " + fmt("%.3g", worst) + ", spectrum [" +
                                         fmt("%.12f", lo) + ", " + fmt("%.12f", hi) + "]"};
}

// 3 -------------------------------------------------------------------------

Outcome metrics_fixtures() {
  const std::vector<int> labels = {0, 0, 1, 2}, preds = {0, 1, 1, 2};
  const auto m = macro_metrics(confusion(preds, labels));
  bool ok = std::abs(m.macro_precision - 2.5 / 3.0) <= 1e-12 && std::abs(m.macro_recall - 2.5 / 3.0) <= 1e-12 &&
            std::abs(m.macro_f1 - 7.0 / 9.0) <= 1e-12 && std::abs(m.accuracy - 0.75) <= 1e-12;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cls(0, 2);
  std::array<int, 3> perm = {0, 1, 2};
  int held = 0;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<int> y(40), p(40), yp(40), pp(40);
    for (auto& v : y) v = cls(rng);
    for (auto& v : p) v = cls(rng);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < 40; ++i) {
      yp[i] = perm[y[i]];
      pp[i] = perm[p[i]];
    }
    const auto a = macro_metrics(confusion(p, y)), b = macro_metrics(confusion(pp, yp));
    bool same = std::abs(a.macro_f1 - b.macro_f1) <= 1e-15 && std::abs(a.macro_precision - b.macro_precision) <= 1e-15 &&
                std::abs(a.macro_recall - b.macro_recall) <= 1e-15 && a.accuracy == b.accuracy;
    for (int c = 0; c < 3; ++c) same = same && a.f1[c] == b.f1[perm[c]];
    held += same;
  }
  ok = ok && held == 100;
  return {ok, "P " + fmt("%.4f", m.macro_precision) + " R " + fmt("%.4f", m.macro_recall) + " F1 " +
                  fmt("%.4f", m.macro_f1) + " acc " + fmt("%.2f", m.accuracy) + ", permutation " +
                  std::to_string(held) + "/100"};
}

// 4 -------------------------------------------------------------------------

Outcome pipeline_fixtures() {
  std::vector<GaugeStation> gs(2);
  gs[0].id = "g1";
  gs[0].x = 1000;
  gs[1].id = "g2";
  gs[1].x = -3000;
  const auto w = nearest_two_gauges(0, 0, gs);
  const std::vector<double> a = {10.0}, b = {20.0};
  const double blend = blend_gauge_channel(a, b, w)[0];

  std::vector<double> impulse(12, 0.0);
  impulse[5] = 3.0;
  const auto rolled = accumulate_rainfall(impulse, kRain2hWindow);
  bool impulse_ok = true;
  for (std::size_t t = 0; t < 12; ++t) impulse_ok = impulse_ok && rolled[t] == (t >= 5 && t < 9 ? 3.0 : 0.0);

  const bool labels_ok = label_flood_class(0.005) == 0 && label_flood_class(0.05) == 1 && label_flood_class(0.15) == 2;
  return {blend == 12.5 && impulse_ok && labels_ok, "blend " + fmt("%.17g", blend) + ", impulse " +
                                                        (impulse_ok ? "ok" : "wrong") + ", labels " +
                                                        (labels_ok ? "ok" : "wrong")};
}

// 5 -------------------------------------------------------------------------

Outcome equivariance() {
  std::mt19937_64 rng(5);
  const std::size_t n = 5;
  const auto graph = RegionGraph::build(random_nodes(n, rng));
  ModelConfig mc;
  mc.nodes = n;
  mc.block_channels = {8, 8, 8};
  mc.window = 12;
  mc.seed = 5;
  const auto params = ModelParams::init(mc);
  const auto x = normal_tensor({n, kChannels, 12}, rng);
  const auto base = forward(x, graph, params).logits;
  int exact = 0, trials = 0;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t per_node = kChannels * 12;
    std::vector<double> xp(x.numel());
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(perm[i] * per_node), per_node,
                  xp.begin() + static_cast<std::ptrdiff_t>(i * per_node));
    const auto out = forward(Tensor::from({n, kChannels, 12}, xp), graph.permuted(perm), params.permuted(perm)).logits;
    bool same = true;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 3; ++j) same = same && out.at({i, j}) == base.at({perm[i], j});
    exact += same;
    ++trials;
  }
  return {exact == trials, std::to_string(exact) + "/" + std::to_string(trials) + " permutations bitwise equal"};
}

// 6 and 8 -------------------------------------------------------------------

struct Variant {
  const char* name;
  GraphMode graph;
  ChannelMode channels;
};

constexpr Variant kVariants[] = {{"full", GraphMode::Full, ChannelMode::All},
                                 {"graph-off", GraphMode::Edgeless, ChannelMode::All},
                                 {"physics-only", GraphMode::Full, ChannelMode::PhysicsOnly}};

struct BestRun {
  double test_f1 = -1.0;
  std::uint64_t seed = 0;
  TrainConfig config;
  ModelParams params;
  MetricsReport metrics;
};

TrainConfig desk_config(std::uint64_t seed, const Variant& v) {
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs = 25;
  tc.patience = 8;
  tc.batch_size = 8;
  tc.model.block_channels = {16};
  tc.model.graph = v.graph;
  tc.model.channels = v.channels;
  return tc;
}

Dataset default_dataset(std::uint64_t seed) {
  ScenarioConfig sc;
  sc.seed = seed;
  const auto s = generate(sc);
  return Dataset{s.nodes, build_features(s.pipeline_inputs(), s.grid, 288)};
}

MetricsReport test_metrics(const Dataset& ds, const TrainResult& run) {
  const auto graph = make_graph(ds.nodes, run.params.config.graph, run.params.config.cheb_order);
  const WindowSource src(ds.features, run.params.config.channels);
  return evaluate(run.params, graph, src, run.windows.test, run.class_weights).metrics;
}

BestRun best_overall;

Outcome ablation_ordering() {
  const auto t0 = Clock::now();
  int graph_wins = 0, channel_wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto ds = default_dataset(seed);
    double f1[3];
    for (int v = 0; v < 3; ++v) {
      const auto tuned = tune(ds, desk_config(seed, kVariants[v]), {1e-3, 3e-3}, {0.0, 0.3});
      const auto m = test_metrics(ds, tuned.best_run);
      f1[v] = m.macro_f1;
      if (v == 0 && m.macro_f1 > best_overall.test_f1) {
        best_overall = {m.macro_f1, seed, tuned.best_config, tuned.best_run.params.clone(), m};
      }
    }
    graph_wins += f1[0] >= f1[1];
    channel_wins += f1[0] >= f1[2];
    std::printf("  seed %llu: test macro-F1 full %.4f, graph-off %.4f, physics-only %.4f\n",
                static_cast<unsigned long long>(seed), f1[0], f1[1], f1[2]);
    std::fflush(stdout);
  }
  const double secs = seconds_since(t0);
  detail = "full>=graph-off in " + std::to_string(graph_wins) + "/3, all>=physics-only in " +
           std::to_string(channel_wins) + "/3, " + fmt("%.0f", secs) + " s of 900";
  return {graph_wins >= 2 && channel_wins >= 2 && secs < 900.0, detail};
}

Outcome determinism() {
  if (best_overall.test_f1 < 0) return {false, "criterion 6 produced no run"};
  const auto ds = default_dataset(best_overall.seed);
  const auto rerun = train(ds, best_overall.config);
  const auto m = test_metrics(ds, rerun);
  const auto a = std::as_const(best_overall.params).parameters(), b = std::as_const(rerun.params).parameters();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) {
    const auto va = a[i].second->values(), vb = b[i].second->values();
    same = std::equal(va.begin(), va.end(), vb.begin(), vb.end());
  }
  const bool metrics_same = to_json(m) == to_json(best_overall.metrics) && m.macro_f1 == best_overall.metrics.macro_f1 &&
                            m.confusion == best_overall.metrics.confusion;
  return {same && metrics_same, std::string("weights ") + (same ? "identical" : "differ") + ", metrics " +
                                    (metrics_same ? "identical" : "differ") + " (seed " +
                                    std::to_string(best_overall.seed) + ")"};
}

// 7 -------------------------------------------------------------------------

Outcome overfit() {
  const auto t0 = Clock::now();
  int reached = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ScenarioConfig sc;
    sc.n_nodes = 5;
    sc.n_timesteps = 60;
    sc.seed = seed;
    sc.n_gauges = 3;
    sc.region_size = 3000;
    sc.storm_radius = 1500;
    sc.storm_count = 3;
    const auto s = generate(sc);
    const Dataset ds{s.nodes, build_features(s.pipeline_inputs(), s.grid, 36)};
    TrainConfig tc;
    tc.seed = seed;
    tc.epochs = 500;
    tc.patience = 0;
    tc.validation_fraction = 0.0;
    tc.learning_rate = 1e-2;
    tc.batch_size = 4;
    tc.model.block_channels = {16};
    tc.stop_at_train_accuracy = 0.95;
    const auto r = train(ds, tc);
    const auto& last = r.history.epochs.back();
    reached += last.train_accuracy >= 0.95;
    detail += (detail.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " acc " +
              fmt("%.3f", last.train_accuracy) + " at epoch " + std::to_string(last.epoch);
  }
  const double secs = seconds_since(t0);
  return {reached >= 2 && secs < 120.0, detail};
}

}  // namespace

int main() {
  report(1, "gradient correctness", gradient_correctness);
  report(2, "spectral oracle", spectral_oracle);
  report(3, "metrics fixtures", metrics_fixtures);
  report(4, "pipeline fixtures", pipeline_fixtures);
  report(5, "equivariance", equivariance);
  report(7, "overfit sanity", overfit);
  report(6, "ablation ordering", ablation_ordering);
  report(8, "determinism", determinism);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
