#pragma once

// File formats for raw scenario inputs and prepared datasets.
//
// Scenario directory (CSV, ISO-8601 UTC timestamps):
//   nodes.csv           id,x,y,in_floodplain,residential_ratio,watershed_id,dist_coast,dist_stream
//   gauges.csv          id,x,y,threshold
//   gauge_readings.csv  gauge_id,timestamp,rain_increment_mm,water_elevation_m
//   events.csv          kind,timestamp,x,y,tile_id,value   (x,y empty for tiles; tile_id empty for points)
//   tile_map.csv        tile_id,node_id
//   road_status.csv     node_id,timestamp,flooded_fraction
//
// Prepared dataset directory:
//   dataset.bin    "NCDSET01", u64 nodes, u64 channels, u64 steps (little endian),
//                  f64 values [node, channel, time] row-major, then i32 labels [node, time]
//   dataset.json   shapes, channel order, node ids, grid, training span,
//                  normalisation stats, SHA-256 of dataset.bin
//   nodes.csv      copy of the node table (the graph is rebuilt from it)
//   adjacency.csv  id_i,id_j,weight (upper triangle, nonzero only)

#include <filesystem>
#include <vector>

#include "nowcast/features.hpp"
#include "nowcast/graph.hpp"

namespace nowcast {

struct ScenarioFiles {
  PipelineInputs inputs;
  TimeGrid grid;  // spans the road-status timestamps
};

/// Reads every scenario CSV. The grid starts at the first road-status
/// timestamp and ends at the last, in 30-minute steps.
ScenarioFiles read_scenario_dir(const std::filesystem::path& dir);

struct Dataset {
  std::vector<UnitNode> nodes;
  FeatureTensor features;
};

/// Training span defaults to 60% of the grid (288 of 480 steps).
std::size_t default_train_steps(std::size_t steps);

/// Pipeline from a scenario directory to a dataset in memory.
Dataset prepare_dataset(const std::filesystem::path& scenario_dir, std::size_t train_steps = 0,
                        PipelineReport* report = nullptr);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset, int cheb_order = 3);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace nowcast
