#include "nowcast/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "nowcast/csv.hpp"
#include "nowcast/error.hpp"
#include "nowcast/log.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// Windows

std::vector<Window> windows_in_span(std::size_t steps, std::size_t window, std::size_t horizon, std::size_t span_begin,
                                    std::size_t span_end) {
  if (window < 1) throw UsageError("windows: window length must be >= 1");
  if (steps < window + horizon) {
    throw UsageError("windows: " + std::to_string(steps) + " steps cannot hold a window of " + std::to_string(window) +
                     " plus horizon " + std::to_string(horizon));
  }
  std::vector<Window> out;
  span_end = std::min(span_end, steps);
  for (std::size_t end = window - 1; end + horizon < steps; ++end) {
    const std::size_t label = end + horizon;
    if (label < span_begin || label >= span_end) continue;
    if (span_begin > 0 && end < span_begin) continue;
    out.push_back({end, label});
  }
  return out;
}

WindowSets make_windows(std::size_t steps, std::size_t window, std::size_t horizon, std::size_t split,
                        std::size_t validation_start) {
  if (split > steps || validation_start > split) throw UsageError("make_windows: split points out of order");
  WindowSets s;
  s.train = windows_in_span(steps, window, horizon, 0, validation_start);
  if (validation_start < split) s.validation = windows_in_span(steps, window, horizon, validation_start, split);
  if (split < steps) s.test = windows_in_span(steps, window, horizon, split, steps);
  return s;
}

// ---------------------------------------------------------------------------
// Data views

WindowSource::WindowSource(const FeatureTensor& f, ChannelMode channels)
    : nodes_(f.nodes), steps_(f.steps), normalized_(f.values.size()), labels_(f.labels) {
  for (std::size_t n = 0; n < f.nodes; ++n)
    for (std::size_t c = 0; c < kChannels; ++c) {
      const bool masked = channels == ChannelMode::PhysicsOnly && c >= kReports311;
      for (std::size_t t = 0; t < f.steps; ++t) {
        normalized_[(n * kChannels + c) * f.steps + t] = masked ? 0.0 : f.normalized(n, c, t);
      }
    }
}

Tensor WindowSource::input(const Window& w, std::size_t window) const {
  if (w.end >= steps_ || w.end + 1 < window) throw UsageError("WindowSource: window outside the series");
  std::vector<double> v(nodes_ * kChannels * window);
  const std::size_t first = w.end + 1 - window;
  for (std::size_t n = 0; n < nodes_; ++n)
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double* src = normalized_.data() + (n * kChannels + c) * steps_ + first;
      std::copy(src, src + window, v.begin() + static_cast<std::ptrdiff_t>((n * kChannels + c) * window));
    }
  return Tensor::from({nodes_, kChannels, window}, std::move(v));
}

std::vector<int> WindowSource::labels(const Window& w) const {
  if (w.label_index >= steps_) throw UsageError("WindowSource: label index outside the series");
  std::vector<int> out(nodes_);
  for (std::size_t n = 0; n < nodes_; ++n) out[n] = labels_[n * steps_ + w.label_index];
  return out;
}

RegionGraph make_graph(const std::vector<UnitNode>& nodes, GraphMode mode, int cheb_order) {
  return mode == GraphMode::Full ? RegionGraph::build(nodes, cheb_order) : RegionGraph::edgeless(nodes, cheb_order);
}

// ---------------------------------------------------------------------------
// Loss

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, const std::array<double, 3>& class_weights) {
  if (logits.rank() != 2 || logits.dim(1) != 3 || logits.dim(0) != labels.size()) {
    throw UsageError("cross_entropy: logits " + shape_str(logits.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size();
  std::vector<double> pick(n * 3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y > 2) throw UsageError("cross_entropy: label " + std::to_string(y) + " out of range");
    pick[i * 3 + static_cast<std::size_t>(y)] = -class_weights[static_cast<std::size_t>(y)] / static_cast<double>(n);
  }
  return sum(mul(log_softmax(logits, 1), Tensor::from({n, 3}, std::move(pick))));
}

std::array<double, 3> inverse_frequency_weights(std::span<const long long> counts) {
  if (counts.size() != 3) throw UsageError("inverse_frequency_weights: expected 3 class counts");
  std::array<double, 3> w{1.0, 1.0, 1.0};
  double mean_inv = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    if (counts[c] > 0) {
      mean_inv += 1.0 / static_cast<double>(counts[c]);
      ++present;
    }
  }
  if (present == 0) return w;
  long long first = 0;
  bool balanced = true;
  for (long long n : counts) {
    if (n == 0) continue;
    if (first == 0) first = n;
    balanced = balanced && n == first;
  }
  if (balanced) return w;
  mean_inv /= present;
  for (std::size_t c = 0; c < 3; ++c) {
    if (counts[c] > 0) w[c] = (1.0 / static_cast<double>(counts[c])) / mean_inv;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UsageError("train config: learning_rate must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("train config: dropout must lie in [0, 1)");
  if (epochs < 1) throw UsageError("train config: epochs must be >= 1");
  if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw UsageError("train config: validation_fraction must lie in [0, 1)");
  }
  if (stop_at_train_accuracy && !(*stop_at_train_accuracy > 0.0 && *stop_at_train_accuracy <= 1.0)) {
    throw UsageError("train config: stop_at_train_accuracy must lie in (0, 1]");
  }
}

namespace {

const std::set<std::string> kTrainKeys = {"learning_rate", "dropout", "epochs", "batch_size", "class_weights",
                                          "optimizer", "seed", "patience", "validation_fraction", "split", "model",
                                          "stop_at_train_accuracy"};
const std::set<std::string> kModelKeys = {"block_channels", "cheb_order", "kernel_width", "window",
                                          "horizon", "attention", "graph", "channels"};

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw UsageError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

TrainConfig read_train_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  TrainConfig c;
  try {
    if (!j.is_object()) throw UsageError(path.string() + ": expected a JSON object");
    reject_unknown(j, kTrainKeys, path.string());
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.dropout = j.value("dropout", c.dropout);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    if (j.contains("split")) c.split = j.at("split").get<std::size_t>();
    if (j.contains("stop_at_train_accuracy")) c.stop_at_train_accuracy = j.at("stop_at_train_accuracy").get<double>();
    const auto cw = j.value("class_weights", std::string("inverse-frequency"));
    if (cw == "none") c.class_weights = ClassWeighting::None;
    else if (cw == "inverse-frequency") c.class_weights = ClassWeighting::InverseFrequency;
    else throw UsageError(path.string() + ": class_weights must be none or inverse-frequency");
    const auto opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") c.optimizer = OptimizerKind::Adam;
    else if (opt == "sgd") c.optimizer = OptimizerKind::Sgd;
    else throw UsageError(path.string() + ": optimizer must be adam or sgd");
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, kModelKeys, path.string() + " model");
      c.model.block_channels = m.value("block_channels", c.model.block_channels);
      c.model.cheb_order = m.value("cheb_order", c.model.cheb_order);
      c.model.kernel_width = m.value("kernel_width", c.model.kernel_width);
      c.model.window = m.value("window", c.model.window);
      c.model.horizon = m.value("horizon", c.model.horizon);
      c.model.attention = m.value("attention", c.model.attention);
      c.model.graph = parse_graph_mode(m.value("graph", std::string("full")));
      c.model.channels = parse_channel_mode(m.value("channels", std::string("all")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

std::string to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["dropout"] = c.dropout;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["class_weights"] = c.class_weights == ClassWeighting::None ? "none" : "inverse-frequency";
  j["optimizer"] = c.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
  j["seed"] = c.seed;
  j["patience"] = c.patience;
  j["validation_fraction"] = c.validation_fraction;
  if (c.split) j["split"] = *c.split;
  if (c.stop_at_train_accuracy) j["stop_at_train_accuracy"] = *c.stop_at_train_accuracy;
  j["model"] = {{"block_channels", c.model.block_channels}, {"cheb_order", c.model.cheb_order},
                {"kernel_width", c.model.kernel_width},     {"window", c.model.window},
                {"horizon", c.model.horizon},               {"attention", c.model.attention},
                {"graph", to_string(c.model.graph)},        {"channels", to_string(c.model.channels)}};
  return j.dump(2) + "\n";
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_macro_f1\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.train_accuracy) << ','
       << format_double(e.val_macro_f1) << '\n';
  }
  return os.str();
}

SplitPoints split_points(const TrainConfig& config, const FeatureTensor& features) {
  SplitPoints sp;
  sp.split = config.split.value_or(features.train_steps);
  if (sp.split == 0 || sp.split > features.steps) throw UsageError("train: split outside the series");
  const auto val_steps = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(sp.split)));
  sp.validation_start = sp.split - std::min(val_steps, sp.split);
  return sp;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

int argmax3(std::span<const double> row) {
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(best)]) best = c;
  return best;
}

}  // namespace

Evaluation evaluate(const ModelParams& params, const RegionGraph& graph, const WindowSource& source,
                    const std::vector<Window>& windows, const std::array<double, 3>& class_weights) {
  if (windows.empty()) throw UsageError("evaluate: no windows to score");
  NoGradGuard no_grad;
  const auto ops = GraphOperators::from(graph, params.config.cheb_order);
  Evaluation ev;
  double loss_total = 0.0;
  const std::size_t n = source.nodes();
  for (const auto& w : windows) {
    const auto result = forward(source.input(w, params.config.window), ops, params);
    const auto labels = source.labels(w);
    loss_total += cross_entropy(result.logits, labels, class_weights).item();
    const auto probs = result.probs.values();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = probs.subspan(i * 3, 3);
      ev.predictions.push_back(argmax3(row));
      ev.probabilities.push_back({row[0], row[1], row[2]});
    }
    ev.labels.insert(ev.labels.end(), labels.begin(), labels.end());
  }
  ev.loss = loss_total / static_cast<double>(windows.size());
  ev.metrics = macro_metrics(confusion(ev.predictions, ev.labels));
  return ev;
}

// ---------------------------------------------------------------------------
// Optimisation

namespace {

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::size_t groups) : kind_(kind), lr_(lr), m_(groups), v_(groups) {}

  void step(std::vector<NamedParam>& params) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i].tensor;
      const auto g = p.grad();
      auto w = p.mutable_values();
      if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * g[k];
        continue;
      }
      auto& m = m_[i];
      auto& v = v_[i];
      if (m.empty()) {
        m.assign(w.size(), 0.0);
        v.assign(w.size(), 0.0);
      }
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config_in) {
  config_in.validate();
  TrainConfig config = config_in;
  const auto& features = dataset.features;
  config.model.nodes = features.nodes;
  config.model.in_channels = kChannels;
  config.model.dropout = config.dropout;
  config.model.seed = config.seed;
  config.model.validate();

  const SplitPoints sp = split_points(config, features);
  const RegionGraph graph = make_graph(dataset.nodes, config.model.graph, config.model.cheb_order);
  const auto ops = GraphOperators::from(graph, config.model.cheb_order);
  const WindowSource source(features, config.model.channels);

  TrainResult result;
  result.windows = make_windows(features.steps, config.model.window, config.model.horizon, sp.split, sp.validation_start);
  const auto& train_windows = result.windows.train;
  if (train_windows.empty()) throw UsageError("train: no training windows (series too short for the window)");

  std::array<long long, 3> counts{};
  for (const auto& w : train_windows)
    for (int y : source.labels(w)) ++counts[static_cast<std::size_t>(y)];
  if (std::count_if(counts.begin(), counts.end(), [](long long c) { return c > 0; }) < 2) {
    log().warn("train: fewer than 2 distinct classes in the training span");
  }
  result.class_weights = config.class_weights == ClassWeighting::InverseFrequency
                             ? inverse_frequency_weights(counts)
                             : std::array<double, 3>{1.0, 1.0, 1.0};

  ModelParams params = ModelParams::init(config.model);
  auto slots = params.parameters();
  Optimizer optimizer(config.optimizer, config.learning_rate, slots.size());
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<Window> order = train_windows;
  double best_f1 = -1.0;
  int since_best = 0;
  const bool have_validation = !result.windows.validation.empty();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t stop = std::min(order.size(), start + config.batch_size);
        const double inv_batch = 1.0 / static_cast<double>(stop - start);
        for (auto& s : slots) s.tensor->zero_grad();
        for (std::size_t i = start; i < stop; ++i) {
          const auto& w = order[i];
          const auto out = forward(source.input(w, config.model.window), ops, params, {true, &rng});
          const Tensor loss = cross_entropy(out.logits, source.labels(w), result.class_weights);
          loss_sum += loss.item();
          backward(scale(loss, inv_batch));
        }
        optimizer.step(slots);
      }
      for (auto& s : slots) {
        for (double v : s.tensor->values())
          if (!std::isfinite(v)) throw DomainError("parameter " + s.name + " became non-finite");
      }
    } catch (const DomainError& e) {
      throw DivergenceError(epoch, e.what());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = evaluate(params, graph, source, train_windows, result.class_weights).metrics.accuracy;
    if (have_validation) {
      const auto val = evaluate(params, graph, source, result.windows.validation, result.class_weights);
      rec.val_macro_f1 = val.metrics.macro_f1;
      rec.val_loss = val.loss;
    }
    result.history.epochs.push_back(rec);
    log().debug("epoch {}: loss {:.5f} train_acc {:.4f} val_f1 {:.4f}", epoch, rec.train_loss, rec.train_accuracy,
                rec.val_macro_f1);

    const bool improved = !have_validation || rec.val_macro_f1 > best_f1;
    if (improved) {
      best_f1 = rec.val_macro_f1;
      result.params = params.clone();
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      log().debug("early stop after epoch {}", epoch);
      break;
    }
    if (config.stop_at_train_accuracy && rec.train_accuracy >= *config.stop_at_train_accuracy) {
      log().debug("training accuracy target reached after epoch {}", epoch);
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Tuning

TuneResult tune(const Dataset& dataset, const TrainConfig& base, const std::vector<double>& learning_rates,
                const std::vector<double>& dropouts, int jobs) {
  if (learning_rates.empty() || dropouts.empty()) throw UsageError("tune: empty hyperparameter grid");
  struct Point {
    TrainConfig config;
    LeaderboardEntry entry;
    std::optional<TrainResult> run;
  };
  std::vector<Point> grid;
  for (double lr : learning_rates)
    for (double dr : dropouts) {
      Point p;
      p.config = base;
      p.config.learning_rate = lr;
      p.config.dropout = dr;
      p.entry.order = grid.size();
      p.entry.learning_rate = lr;
      p.entry.dropout = dr;
      grid.push_back(std::move(p));
    }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      try {
        auto run = train(dataset, grid[i].config);
        const auto& best = run.history.best();
        grid[i].entry.val_macro_f1 = best.val_macro_f1;
        grid[i].entry.val_loss = best.val_loss;
        grid[i].entry.best_epoch = run.history.best_epoch;
        grid[i].run = std::move(run);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, static_cast<int>(grid.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::size_t> rank(grid.size());
  for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = grid[a].entry;
    const auto& eb = grid[b].entry;
    if (ea.val_macro_f1 != eb.val_macro_f1) return ea.val_macro_f1 > eb.val_macro_f1;
    if (ea.val_loss != eb.val_loss) return ea.val_loss < eb.val_loss;
    return ea.order < eb.order;
  });
  TuneResult out;
  for (auto i : rank) out.leaderboard.push_back(grid[i].entry);
  out.best_config = grid[rank.front()].config;
  out.best_run = std::move(*grid[rank.front()].run);
  return out;
}

}  // namespace nowcast
