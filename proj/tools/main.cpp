// nowcast: generate -> prepare -> train / tune -> evaluate / predict.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "manifest.hpp"
#include "nowcast/csv.hpp"
#include "nowcast/dataset_io.hpp"
#include "nowcast/error.hpp"
#include "nowcast/log.hpp"
#include "nowcast/scenario.hpp"
#include "nowcast/trainer.hpp"
#include "nowcast/weights_io.hpp"

namespace fs = std::filesystem;
using namespace nowcast;
using nowcast::cli::RunManifest;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4 };

struct ModelFlags {
  std::string ablation = "none";
  std::string channels = "all";
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--ablation", ablation, "Model ablation")
        ->check(CLI::IsMember({"none", "attention-off", "graph-off"}));
    cmd->add_option("--channels", channels, "Input channels")->check(CLI::IsMember({"all", "physics-only"}));
    cmd->add_option("--seed", seed, "Override the config seed");
  }

  void apply(TrainConfig& c, RunManifest& m) const {
    if (seed) c.seed = *seed;
    if (ablation == "attention-off") c.model.attention = false;
    if (ablation == "graph-off") c.model.graph = GraphMode::Edgeless;
    if (channels != "all") c.model.channels = parse_channel_mode(channels);
    m.seed(c.seed);
    m.flag("ablation", ablation);
    m.flag("channels", to_string(c.model.channels));
  }
};

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

TrainConfig load_train_config(const std::string& path, RunManifest& m) {
  if (path.empty()) return TrainConfig{};
  m.config(path);
  return read_train_config(path);
}

Dataset load_dataset(const fs::path& dir, RunManifest& m) {
  auto ds = read_dataset(dir);
  m.input_dir(dir);
  return ds;
}

void check_compatible(const ModelParams& p, const Dataset& ds) {
  if (p.config.nodes != ds.features.nodes) {
    throw UsageError("weights expect " + std::to_string(p.config.nodes) + " nodes, dataset has " +
                     std::to_string(ds.features.nodes));
  }
  if (p.config.window + p.config.horizon > ds.features.steps) {
    throw UsageError("dataset is shorter than the model's window plus horizon");
  }
}

/// Split points for a checkpoint: explicit config, else the train_config.json
/// written next to the weights, else defaults.
SplitPoints checkpoint_splits(const std::string& config_path, const fs::path& weights, const Dataset& ds,
                              RunManifest& m) {
  TrainConfig c;
  if (!config_path.empty()) {
    c = load_train_config(config_path, m);
  } else if (const auto sibling = weights.parent_path() / "train_config.json"; fs::exists(sibling)) {
    c = load_train_config(sibling.string(), m);
  }
  return split_points(c, ds.features);
}

std::vector<Window> split_windows(const std::string& split, const SplitPoints& sp, const ModelConfig& mc,
                                  std::size_t steps) {
  if (split == "all") return windows_in_span(steps, mc.window, mc.horizon, 0, steps);
  const auto sets = make_windows(steps, mc.window, mc.horizon, sp.split, sp.validation_start);
  const auto& w = split == "train" ? sets.train : split == "validation" ? sets.validation : sets.test;
  if (w.empty()) throw UsageError("the " + split + " split has no windows");
  return w;
}

void write_metrics(const fs::path& out, const MetricsReport& report, RunManifest& m) {
  write_text_file(out / "metrics.json", to_json(report));
  write_text_file(out / "confusion.csv", to_csv(report.confusion));
  m.output("metrics.json");
  m.output("confusion.csv");
}

/// Test-split metrics of a trained model, if the dataset has a test span.
void write_test_metrics(const fs::path& out, const Dataset& ds, const TrainResult& run, RunManifest& m) {
  if (run.windows.test.empty()) {
    log().warn("no test windows after the split; metrics.json not written");
    return;
  }
  const auto graph = make_graph(ds.nodes, run.params.config.graph, run.params.config.cheb_order);
  const WindowSource source(ds.features, run.params.config.channels);
  const auto ev = evaluate(run.params, graph, source, run.windows.test, run.class_weights);
  write_metrics(out, ev.metrics, m);
  std::cout << "test macro-F1 " << format_double(ev.metrics.macro_f1) << ", accuracy "
            << format_double(ev.metrics.accuracy) << "\n";
}

void write_run(const fs::path& out, const TrainConfig& config, const TrainResult& run, RunManifest& m) {
  save_weights(out / "weights.bin", run.params);
  write_text_file(out / "history.csv", run.history.to_csv());
  write_text_file(out / "train_config.json", to_json(config));
  m.output("weights.bin");
  m.output("history.csv");
  m.output("train_config.json");
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("not a number list: " + text);
    }
  }
  if (out.empty()) throw UsageError("empty number list");
  return out;
}

/// 3-node, one-block model: max relative FD error per parameter group.
int run_gradcheck(std::uint64_t seed, double eps, double tol, const std::string& out_dir, RunManifest& m) {
  std::vector<UnitNode> nodes(3);
  const double xs[] = {0.0, 800.0, 300.0}, ys[] = {0.0, 200.0, 900.0};
  for (std::size_t i = 0; i < 3; ++i) {
    nodes[i].id = "n" + std::to_string(i);
    nodes[i].x = xs[i];
    nodes[i].y = ys[i];
    nodes[i].features.watershed_id = i == 2 ? "b" : "a";
    nodes[i].features.residential_ratio = 0.3 * static_cast<double>(i + 1);
  }
  ModelConfig mc;
  mc.nodes = 3;
  mc.block_channels = {4};
  mc.window = 4;
  mc.seed = seed;
  const auto params = ModelParams::init(mc);
  const auto graph = RegionGraph::build(nodes, mc.cheb_order);
  const auto ops = GraphOperators::from(graph, mc.cheb_order);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> xv(3 * kChannels * mc.window);
  for (auto& v : xv) v = normal(rng);
  const Tensor x = Tensor::from({3, kChannels, mc.window}, std::move(xv));
  const std::vector<int> labels = {0, 1, 2};
  const std::array<double, 3> weights = {1.0, 1.5, 2.0};

  auto p = params.clone();
  auto loss = [&] { return cross_entropy(forward(x, ops, p).logits, labels, weights); };
  nlohmann::ordered_json report;
  report["seed"] = seed;
  report["eps"] = eps;
  double worst = 0.0;
  for (auto& [name, tensor] : p.parameters()) {
    const double err = gradient_check_param(loss, *tensor, eps);
    worst = std::max(worst, err);
    report["groups"][name] = err;
    std::cout << name << " " << format_double(err) << "\n";
  }
  report["max_relative_error"] = worst;
  report["passed"] = worst < tol;
  if (!out_dir.empty()) {
    make_out_dir(out_dir);
    write_text_file(fs::path(out_dir) / "gradcheck.json", report.dump(2) + "\n");
    m.output("gradcheck.json");
    m.write(out_dir);
  }
  std::cout << "max relative error " << format_double(worst) << (worst < tol ? " (pass)" : " (FAIL)") << "\n";
  return worst < tol ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ASTGCN flood nowcasting"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  std::string config, out, data, scenario_dir, weights, split = "test", lrs = "1e-3,3e-3", dropouts = "0,0.3";
  std::optional<std::uint64_t> gen_seed;
  std::size_t train_steps = 0;
  int cheb_order = 3, jobs = 1;
  double eps = 1e-5, tol = 1e-4;
  std::uint64_t gc_seed = 1;

  auto* gen = app.add_subcommand("generate", "Write a synthetic scenario directory");
  gen->add_option("--config", config, "Scenario config JSON")->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "Override the config seed");
  gen->add_option("--out", out, "Output directory")->required();

  auto* prep = app.add_subcommand("prepare", "Scenario directory -> feature tensor dataset");
  prep->add_option("--scenario", scenario_dir, "Scenario directory")->required()->check(CLI::ExistingDirectory);
  prep->add_option("--train-steps", train_steps, "Training span in steps (default 60% of the grid)");
  prep->add_option("--cheb-order", cheb_order, "Chebyshev order for the adjacency export");
  prep->add_option("--out", out, "Output directory")->required();

  ModelFlags train_flags, tune_flags;
  auto* tr = app.add_subcommand("train", "Train one model and score the test span");
  tr->add_option("--data", data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--config", config, "Training config JSON")->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Output directory")->required();
  train_flags.add_to(tr);

  auto* tu = app.add_subcommand("tune", "Grid search over learning rate and dropout");
  tu->add_option("--data", data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
  tu->add_option("--config", config, "Base training config JSON")->check(CLI::ExistingFile);
  tu->add_option("--out", out, "Output directory")->required();
  tu->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  tu->add_option("--lrs", lrs, "Comma-separated learning rates");
  tu->add_option("--dropouts", dropouts, "Comma-separated dropout rates");
  tune_flags.add_to(tu);

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on one split");
  ev->add_option("--data", data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--weights", weights, "Weight file")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "validation", "test", "all"}));
  ev->add_option("--config", config, "Training config that defines the splits")->check(CLI::ExistingFile);
  ev->add_option("--out", out, "Output directory")->required();

  auto* pr = app.add_subcommand("predict", "Per-node class probabilities as CSV");
  pr->add_option("--data", data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
  pr->add_option("--weights", weights, "Weight file")->required()->check(CLI::ExistingFile);
  pr->add_option("--split", split, "Windows to predict")->check(CLI::IsMember({"train", "validation", "test", "all"}));
  pr->add_option("--config", config, "Training config that defines the splits")->check(CLI::ExistingFile);
  pr->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  gc->add_option("--seed", gc_seed, "Initialisation and input seed");
  gc->add_option("--eps", eps, "Central-difference step");
  gc->add_option("--tol", tol, "Maximum relative error");
  gc->add_option("--out", out, "Output directory for gradcheck.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunManifest m(app.get_subcommands().front()->get_name(), args);

    if (gen->parsed()) {
      ScenarioConfig sc;
      if (!config.empty()) {
        m.config(config);
        sc = read_scenario_config(config);
      }
      if (gen_seed) sc.seed = *gen_seed;
      m.seed(sc.seed);
      const auto s = generate(sc);
      for (const auto& f : write_scenario(out, s)) m.output(f);
      m.write(out);
      std::cout << "wrote " << s.nodes.size() << " nodes x " << s.grid.steps << " steps to " << out << "\n";
    } else if (prep->parsed()) {
      m.input_dir(scenario_dir);
      PipelineReport report;
      const auto ds = prepare_dataset(scenario_dir, train_steps, &report);
      make_out_dir(out);
      write_dataset(out, ds, cheb_order);
      nlohmann::ordered_json r;
      r["reports"] = {{"total", report.reports_total}, {"snapped", report.reports_snapped},
                      {"outside_grid", report.reports_outside_grid}};
      r["tweets"] = {{"total", report.tweets_total}, {"snapped", report.tweets_snapped},
                     {"outside_grid", report.tweets_outside_grid}};
      r["uncovered_nodes"] = report.uncovered_nodes;
      r["unmapped_tiles"] = report.unmapped_tiles;
      write_text_file(fs::path(out) / "pipeline_report.json", r.dump(2) + "\n");
      for (const char* f : {"dataset.bin", "dataset.json", "nodes.csv", "adjacency.csv", "pipeline_report.json"}) {
        m.output(f);
      }
      m.write(out);
      std::cout << "dataset " << ds.features.nodes << " nodes x " << ds.features.steps << " steps, train span "
                << ds.features.train_steps << "\n";
    } else if (tr->parsed()) {
      auto tc = load_train_config(config, m);
      train_flags.apply(tc, m);
      const auto ds = load_dataset(data, m);
      make_out_dir(out);
      const auto run = train(ds, tc);
      write_run(out, tc, run, m);
      write_test_metrics(out, ds, run, m);
      m.write(out);
    } else if (tu->parsed()) {
      auto tc = load_train_config(config, m);
      tune_flags.apply(tc, m);
      const auto ds = load_dataset(data, m);
      make_out_dir(out);
      const auto lr_grid = parse_list(lrs), dr_grid = parse_list(dropouts);
      const auto result = tune(ds, tc, lr_grid, dr_grid, jobs);
      std::ostringstream lb;
      lb << "rank,learning_rate,dropout,val_macro_f1,val_loss,best_epoch\n";
      for (std::size_t i = 0; i < result.leaderboard.size(); ++i) {
        const auto& e = result.leaderboard[i];
        lb << i + 1 << ',' << format_double(e.learning_rate) << ',' << format_double(e.dropout) << ','
           << format_double(e.val_macro_f1) << ',' << format_double(e.val_loss) << ',' << e.best_epoch << '\n';
      }
      write_text_file(fs::path(out) / "leaderboard.csv", lb.str());
      m.output("leaderboard.csv");
      write_run(out, result.best_config, result.best_run, m);
      write_test_metrics(out, ds, result.best_run, m);
      m.write(out);
    } else if (ev->parsed() || pr->parsed()) {
      const auto ds = load_dataset(data, m);
      m.input(weights);
      const auto params = load_weights(weights);
      check_compatible(params, ds);
      const auto sp = checkpoint_splits(config, weights, ds, m);
      const auto windows = split_windows(split, sp, params.config, ds.features.steps);
      const auto graph = make_graph(ds.nodes, params.config.graph, params.config.cheb_order);
      const WindowSource source(ds.features, params.config.channels);
      const auto result = evaluate(params, graph, source, windows);
      make_out_dir(out);
      m.flag("split", split);
      if (ev->parsed()) {
        write_metrics(out, result.metrics, m);
        std::cout << to_json(result.metrics);
      } else {
        std::ostringstream os;
        os << "node_id,timestep,prob_no,prob_moderate,prob_severe,pred_class\n";
        const std::size_t n = ds.features.nodes;
        for (std::size_t w = 0; w < windows.size(); ++w)
          for (std::size_t i = 0; i < n; ++i) {
            const auto& p = result.probabilities[w * n + i];
            os << ds.features.node_ids[i] << ',' << windows[w].label_index << ',' << format_double(p[0]) << ','
               << format_double(p[1]) << ',' << format_double(p[2]) << ',' << result.predictions[w * n + i] << '\n';
          }
        write_text_file(fs::path(out) / "predictions.csv", os.str());
        m.output("predictions.csv");
        std::cout << "wrote " << windows.size() * n << " predictions\n";
      }
      m.write(out);
    } else if (gc->parsed()) {
      m.seed(gc_seed);
      return run_gradcheck(gc_seed, eps, tol, out, m);
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
