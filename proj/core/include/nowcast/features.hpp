#pragma once

// Heterogeneous sensor streams -> aligned [node, channel, time] features on a
// fixed 30-minute grid, plus per-node flood classes.

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nowcast/graph.hpp"

namespace nowcast {

using Timestamp = std::chrono::sys_seconds;

/// ISO-8601 UTC, "YYYY-MM-DDTHH:MM:SSZ" (the trailing Z may be omitted).
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

struct TimeGrid {
  Timestamp start{};
  std::chrono::seconds step{1800};
  std::size_t steps = 0;

  Timestamp at(std::size_t t) const { return start + step * static_cast<std::int64_t>(t); }
};

struct TimedValue {
  Timestamp time;
  double value = 0.0;
};

struct GaugeReading {
  Timestamp time;
  double rain_increment_mm = 0.0;
  double water_elevation_m = 0.0;
};

struct GaugeStation {
  std::string id;
  double x = 0.0;
  double y = 0.0;
  double flood_threshold = 1.0;  // water elevation at which flooding starts, m
  std::vector<GaugeReading> readings;
};

struct GaugeWeight {
  std::size_t gauge = 0;  // index into the station list
  double weight = 0.0;
};

/// Two closest gauges with inverse-distance weights summing to 1. A gauge at
/// distance 0 takes weight 1; ties in distance go to the smaller gauge id.
std::array<GaugeWeight, 2> nearest_two_gauges(double x, double y, const std::vector<GaugeStation>& gauges);

/// Linear interpolation between bracketing readings, constant hold outside
/// the observed span.
std::vector<double> resample_series(std::span<const TimedValue> readings, const TimeGrid& grid);

/// out[t] = sum of incremental[t - window + 1 .. t], truncated at the grid start.
std::vector<double> accumulate_rainfall(std::span<const double> incremental, int window_steps);

std::vector<double> water_ratio(std::span<const double> elevation, double threshold);

/// w1 * first + w2 * second, pointwise.
std::vector<double> blend_gauge_channel(std::span<const double> first, std::span<const double> second,
                                        const std::array<GaugeWeight, 2>& weights);

enum class EventKind { Report311, Tweet, ActivityTile };
std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view text);

struct EventRecord {
  EventKind kind = EventKind::Report311;
  Timestamp time;
  double x = 0.0;  // point events
  double y = 0.0;
  std::string tile_id;  // activity tiles
  double value = 1.0;
};

/// Row-major [node, time] array.
struct NodeSeries {
  std::size_t nodes = 0;
  std::size_t steps = 0;
  std::vector<double> values;

  NodeSeries() = default;
  NodeSeries(std::size_t n, std::size_t t) : nodes(n), steps(t), values(n * t, 0.0) {}
  double& operator()(std::size_t n, std::size_t t) { return values[n * steps + t]; }
  double operator()(std::size_t n, std::size_t t) const { return values[n * steps + t]; }
};

/// Index of the grid interval (t - step, t] holding `time`, or -1 if none does.
std::ptrdiff_t grid_interval(const TimeGrid& grid, Timestamp time);

struct PointAggregation {
  NodeSeries counts;
  std::size_t total = 0;         // events of the requested kind
  std::size_t in_region = 0;     // inside some node's region
  std::size_t snapped = 0;       // outside all regions, given to the nearest centroid
  std::size_t outside_grid = 0;  // timestamp outside every grid interval, not counted
};

/// Counts events of `kind` per node and grid interval. A node's region is the
/// set of points whose nearest centroid is that node, within `region_radius`
/// of it. Events outside all regions are assigned to the nearest centroid and
/// logged. region_radius <= 0 picks twice the largest nearest-neighbour
/// spacing between centroids.
PointAggregation aggregate_point_events(std::span<const EventRecord> events, EventKind kind,
                                        const std::vector<UnitNode>& nodes, const TimeGrid& grid,
                                        double region_radius = 0.0);

struct ActivityAggregation {
  NodeSeries values;
  std::vector<std::string> uncovered_nodes;  // ids of nodes with no tiles (channel left at 0)
  std::size_t unmapped_records = 0;          // tiles missing from the tile map
};

/// Mean tile index per node per raw window, then resampled to the grid.
ActivityAggregation aggregate_activity(std::span<const EventRecord> events,
                                       const std::map<std::string, std::size_t>& tile_to_node,
                                       const std::vector<UnitNode>& nodes, const TimeGrid& grid);

/// < 0.01 -> 0 (no flood), [0.01, 0.10] -> 1 (moderate), > 0.10 -> 2 (severe).
int label_flood_class(double flooded_fraction);

inline constexpr std::size_t kChannels = 6;
enum Channel : std::size_t { kRain2h = 0, kRain24h, kWaterRatio, kReports311, kTweets, kActivity };
inline constexpr std::array<std::string_view, kChannels> kChannelNames = {
    "rain_2h", "rain_24h", "water_ratio", "reports_311", "tweets", "activity"};
inline constexpr int kRain2hWindow = 4;    // 2 h of 30-minute steps
inline constexpr int kRain24hWindow = 48;  // 24 h

struct ChannelStats {
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> std{};
};

/// Raw (un-normalised) features plus labels and the normalisation fitted on
/// the training span.
struct FeatureTensor {
  std::size_t nodes = 0;
  std::size_t steps = 0;
  std::vector<double> values;  // [node, channel, time]
  std::vector<int> labels;     // [node, time]
  TimeGrid grid;
  std::vector<std::string> node_ids;
  std::size_t train_steps = 0;  // [0, train_steps) is the training span
  ChannelStats stats;

  double value(std::size_t n, std::size_t c, std::size_t t) const { return values[(n * kChannels + c) * steps + t]; }
  int label(std::size_t n, std::size_t t) const { return labels[n * steps + t]; }
  double normalized(std::size_t n, std::size_t c, std::size_t t) const {
    return (value(n, c, t) - stats.mean[c]) / stats.std[c];
  }
};

/// Per-channel [node, time] inputs for assemble(), in channel order.
using ChannelInputs = std::array<NodeSeries, kChannels>;

/// Stacks channels, validates them and fits z-score stats on t < train_steps.
/// A channel with zero spread on the training span gets std 1.
FeatureTensor assemble(const std::vector<std::string>& node_ids, const ChannelInputs& channels,
                       const NodeSeries& flooded_fraction, const TimeGrid& grid, std::size_t train_steps);

/// Diagnostics collected while building features from files.
struct PipelineReport {
  std::size_t reports_total = 0, reports_snapped = 0, reports_outside_grid = 0;
  std::size_t tweets_total = 0, tweets_snapped = 0, tweets_outside_grid = 0;
  std::vector<std::string> uncovered_nodes;
  std::size_t unmapped_tiles = 0;
};

struct PipelineInputs {
  std::vector<UnitNode> nodes;
  std::vector<GaugeStation> gauges;
  std::vector<EventRecord> events;
  std::map<std::string, std::size_t> tile_to_node;
  NodeSeries flooded_fraction;  // already on the grid
};

/// Full gauge/event/label pipeline for an in-memory input set.
FeatureTensor build_features(const PipelineInputs& inputs, const TimeGrid& grid, std::size_t train_steps,
                             PipelineReport* report = nullptr);

}  // namespace nowcast
