#pragma once

// Seeded synthetic flood scenarios: nodes in a square, drifting storms,
// threshold-spill flooding, and the gauge / 3-1-1 / tweet / activity streams
// that the feature pipeline consumes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nowcast/dataset_io.hpp"
#include "nowcast/features.hpp"

namespace nowcast {

struct ScenarioConfig {
  std::size_t n_nodes = 50;
  std::size_t n_timesteps = 480;
  std::uint64_t seed = 7;
  std::size_t n_gauges = 6;
  double region_size = 10000.0;  // side of the square, m
  std::size_t n_watersheds = 4;
  std::string start = "2017-08-25T00:00:00Z";

  // storms
  std::size_t storm_count = 8;
  double storm_amplitude = 12.0;   // peak rain, mm per step
  double storm_radius = 3000.0;    // m
  double storm_duration = 6.0;     // temporal std, steps
  double storm_speed = 250.0;      // drift, m per step

  // flood dynamics
  double absorption_threshold = 4.0;  // mm per step
  double floodplain_factor = 0.6;     // threshold multiplier inside the floodplain
  double absorption_rate = 0.005;      // fraction per excess mm
  double drainage_rate = 0.012;        // fraction per step
  double spill_coefficient = 0.025;  // inflow from uphill neighbours
  std::size_t spill_neighbors = 4;

  // sensors
  double rain_noise = 0.5;          // mm
  double elevation_noise = 0.02;    // m
  double reading_drop_rate = 0.05;  // probability a gauge reading is missing
  double gauge_threshold = 2.0;     // water elevation at flooding, m
  double report_rate = 8.0;         // 3-1-1 reports per step at full flooding
  std::size_t report_lag = 1;
  double tweet_rate = 5.0;
  std::size_t tweet_lag = 0;
  double quiet_fraction = 0.4;      // share of nodes that never report or tweet
  double activity_baseline = 0.8;
  double activity_depression = 0.6;
  double activity_noise = 0.03;
  std::size_t activity_window = 8;  // steps per telemetry window
  std::size_t tiles_per_node = 2;

  // Shortest window + horizon the scenario has to support.
  std::size_t min_window = 12;
  std::size_t min_horizon = 1;

  void validate() const;
};

ScenarioConfig read_scenario_config(const std::filesystem::path& path);
std::string to_json(const ScenarioConfig& config);

struct ScenarioDataset {
  ScenarioConfig config;
  TimeGrid grid;
  std::vector<UnitNode> nodes;
  std::vector<GaugeStation> gauges;
  std::vector<EventRecord> events;
  std::map<std::string, std::size_t> tile_to_node;
  NodeSeries rain;              // latent rainfall at each node, mm per step
  NodeSeries flooded_fraction;  // latent truth, [0, 1]
  std::uint64_t effective_seed = 0;  // seed of the accepted draw
  int attempts = 1;
  double report_correlation = 0.0;  // corr(reports[t], f[t - lag]) over all nodes

  PipelineInputs pipeline_inputs() const;
};

/// One step of the latent flood field:
/// clamp(f + a * max(rain - threshold, 0) + c * neighbour_mean - drainage, 0, 1).
double flood_update(double f, double rain, double threshold, double neighbour_mean, const ScenarioConfig& config);

/// Deterministic in config. A draw whose report/flood correlation falls below
/// 0.3 is redrawn from a derived seed (up to 10 attempts).
ScenarioDataset generate(const ScenarioConfig& config);

/// nodes.csv, gauges.csv, gauge_readings.csv, events.csv, tile_map.csv,
/// road_status.csv, scenario_meta.json. Returns the written file names.
std::vector<std::string> write_scenario(const std::filesystem::path& dir, const ScenarioDataset& scenario);

struct AblationViews {
  Dataset full;
  Dataset physics_only;  // channels 4-6 zeroed, with mean 0 / std 1 stats
};
AblationViews ablation_variants(const Dataset& dataset);

}  // namespace nowcast
