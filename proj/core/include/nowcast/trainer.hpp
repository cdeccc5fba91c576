#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/dataset_io.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/model.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// Windows

/// Input steps [end - window + 1, end], target label at end + horizon.
struct Window {
  std::size_t end = 0;
  std::size_t label_index = 0;
  bool operator==(const Window&) const = default;
};

/// Windows whose label lies in [span_begin, span_end). Unless span_begin is 0,
/// the window must also end at or after span_begin, so windows straddling a
/// boundary belong to neither side.
std::vector<Window> windows_in_span(std::size_t steps, std::size_t window, std::size_t horizon,
                                    std::size_t span_begin, std::size_t span_end);

struct WindowSets {
  std::vector<Window> train;
  std::vector<Window> validation;
  std::vector<Window> test;
};

/// Training labels in [0, validation_start), validation labels in
/// [validation_start, split), test labels in [split, steps).
/// validation_start == split means no validation set.
WindowSets make_windows(std::size_t steps, std::size_t window, std::size_t horizon, std::size_t split,
                        std::size_t validation_start);

// ---------------------------------------------------------------------------
// Data views

/// Normalised features for model input; physics-only mode zeroes channels 4-6.
class WindowSource {
 public:
  WindowSource(const FeatureTensor& features, ChannelMode channels);

  std::size_t nodes() const noexcept { return nodes_; }
  std::size_t steps() const noexcept { return steps_; }
  /// [N, 6, window] ending at w.end.
  Tensor input(const Window& w, std::size_t window) const;
  /// Labels of all nodes at w.label_index.
  std::vector<int> labels(const Window& w) const;

 private:
  std::size_t nodes_ = 0;
  std::size_t steps_ = 0;
  std::vector<double> normalized_;  // [node, channel, time]
  std::vector<int> labels_;         // [node, time]
};

/// Graph as seen by the model for the given mode.
RegionGraph make_graph(const std::vector<UnitNode>& nodes, GraphMode mode, int cheb_order);

// ---------------------------------------------------------------------------
// Loss

/// mean_i w[y_i] * -log softmax(logits_i)[y_i]
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, const std::array<double, 3>& class_weights);

enum class ClassWeighting { None, InverseFrequency };
enum class OptimizerKind { Adam, Sgd };

/// Inverse-frequency weights normalised to mean 1 over the classes present;
/// absent classes get weight 1.
std::array<double, 3> inverse_frequency_weights(std::span<const long long> counts);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  double dropout = 0.0;
  int epochs = 50;
  std::size_t batch_size = 16;  // windows per optimizer step
  ClassWeighting class_weights = ClassWeighting::InverseFrequency;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 1;
  int patience = 10;               // epochs without validation improvement; <= 0 disables
  double validation_fraction = 0.15;  // tail of the training span
  std::optional<std::size_t> split;   // defaults to the dataset's training span
  std::optional<double> stop_at_train_accuracy;  // end training once reached
  // Architecture and ablations. nodes and dropout are filled in from the data
  // and the fields above.
  ModelConfig model;

  void validate() const;
};

TrainConfig read_train_config(const std::filesystem::path& path);
std::string to_json(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // epoch of the returned checkpoint (1-based)

  const EpochRecord& best() const { return epochs.at(static_cast<std::size_t>(best_epoch - 1)); }
  /// epoch,train_loss,train_acc,val_macro_f1
  std::string to_csv() const;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
  WindowSets windows;
  std::array<double, 3> class_weights{};
};

/// Split indices implied by the config for a dataset of `steps` steps.
struct SplitPoints {
  std::size_t validation_start = 0;
  std::size_t split = 0;
};
SplitPoints split_points(const TrainConfig& config, const FeatureTensor& features);

/// Trains from seeded Glorot init; returns the checkpoint with the best
/// validation macro-F1 (the last epoch when there is no validation set).
/// Throws DivergenceError on a non-finite loss.
TrainResult train(const Dataset& dataset, const TrainConfig& config);

struct Evaluation {
  MetricsReport metrics;
  double loss = 0.0;  // class-weighted cross-entropy, mean over windows
  std::vector<int> predictions;  // [window, node]
  std::vector<int> labels;
  std::vector<std::array<double, 3>> probabilities;  // [window, node]
};

Evaluation evaluate(const ModelParams& params, const RegionGraph& graph, const WindowSource& source,
                    const std::vector<Window>& windows, const std::array<double, 3>& class_weights = {1, 1, 1});

/// Grid search over learning rate x dropout with a shared seed.
struct LeaderboardEntry {
  std::size_t order = 0;  // position in the grid enumeration
  double learning_rate = 0.0;
  double dropout = 0.0;
  double val_macro_f1 = 0.0;
  double val_loss = 0.0;
  int best_epoch = 0;
};

struct TuneResult {
  TrainConfig best_config;
  std::vector<LeaderboardEntry> leaderboard;  // best first
  TrainResult best_run;
};

TuneResult tune(const Dataset& dataset, const TrainConfig& base, const std::vector<double>& learning_rates,
                const std::vector<double>& dropouts, int jobs = 1);

}  // namespace nowcast
