#include "nowcast/dataset_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <map>

#include <nlohmann/json.hpp>

#include "nowcast/csv.hpp"
#include "nowcast/digest.hpp"
#include "nowcast/error.hpp"

namespace nowcast {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'N', 'C', 'D', 'S', 'E', 'T', '0', '1'};
constexpr int kFormatVersion = 1;

template <class T>
void append_raw(std::string& out, const T& v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T read_raw(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw UsageError("dataset.bin: truncated payload");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::map<std::string, std::size_t> index_by_id(const std::vector<UnitNode>& nodes) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!idx.emplace(nodes[i].id, i).second) throw UsageError("duplicate node id " + nodes[i].id);
  }
  return idx;
}

}  // namespace

ScenarioFiles read_scenario_dir(const std::filesystem::path& dir) {
  ScenarioFiles out;
  auto& in = out.inputs;
  in.nodes = read_nodes_csv(dir / "nodes.csv");
  const auto node_index = index_by_id(in.nodes);

  {
    const auto t = CsvTable::read(dir / "gauges.csv");
    const auto c_id = t.column("id"), c_x = t.column("x"), c_y = t.column("y"), c_th = t.column("threshold");
    for (std::size_t r = 0; r < t.rows(); ++r) {
      GaugeStation g;
      g.id = t.cell(r, c_id);
      g.x = t.number(r, c_x);
      g.y = t.number(r, c_y);
      g.flood_threshold = t.number(r, c_th);
      if (!(g.flood_threshold > 0.0)) throw UsageError("gauge " + g.id + ": threshold must be positive");
      in.gauges.push_back(std::move(g));
    }
  }
  std::map<std::string, std::size_t> gauge_index;
  for (std::size_t i = 0; i < in.gauges.size(); ++i) gauge_index[in.gauges[i].id] = i;
  {
    const auto t = CsvTable::read(dir / "gauge_readings.csv");
    const auto c_id = t.column("gauge_id"), c_ts = t.column("timestamp"), c_rain = t.column("rain_increment_mm"),
               c_elev = t.column("water_elevation_m");
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto it = gauge_index.find(t.cell(r, c_id));
      if (it == gauge_index.end()) throw UsageError("gauge_readings.csv: unknown gauge " + t.cell(r, c_id));
      in.gauges[it->second].readings.push_back(
          {parse_timestamp(t.cell(r, c_ts)), t.number(r, c_rain), t.number(r, c_elev)});
    }
    for (const auto& g : in.gauges) {
      for (std::size_t i = 1; i < g.readings.size(); ++i) {
        if (g.readings[i].time <= g.readings[i - 1].time) {
          throw UsageError("gauge " + g.id + ": reading timestamps must be strictly increasing");
        }
      }
    }
  }
  {
    const auto t = CsvTable::read(dir / "events.csv");
    const auto c_kind = t.column("kind"), c_ts = t.column("timestamp"), c_x = t.column("x"), c_y = t.column("y"),
               c_tile = t.column("tile_id"), c_val = t.column("value");
    in.events.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
      EventRecord e;
      e.kind = parse_event_kind(t.cell(r, c_kind));
      e.time = parse_timestamp(t.cell(r, c_ts));
      e.value = t.number(r, c_val);
      if (e.kind == EventKind::ActivityTile) {
        e.tile_id = t.cell(r, c_tile);
        e.x = e.y = std::nan("");
        if (e.tile_id.empty()) throw UsageError("events.csv row " + std::to_string(r + 1) + ": tile_id missing");
      } else {
        e.x = t.number(r, c_x);
        e.y = t.number(r, c_y);
        if (e.value < 0.0) throw DomainError("events.csv row " + std::to_string(r + 1) + ": negative count");
      }
      in.events.push_back(std::move(e));
    }
  }
  if (std::filesystem::exists(dir / "tile_map.csv")) {
    const auto t = CsvTable::read(dir / "tile_map.csv");
    const auto c_tile = t.column("tile_id"), c_node = t.column("node_id");
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto it = node_index.find(t.cell(r, c_node));
      if (it == node_index.end()) throw UsageError("tile_map.csv: unknown node " + t.cell(r, c_node));
      in.tile_to_node[t.cell(r, c_tile)] = it->second;
    }
  }
  {
    const auto t = CsvTable::read(dir / "road_status.csv");
    const auto c_node = t.column("node_id"), c_ts = t.column("timestamp"), c_frac = t.column("flooded_fraction");
    if (t.rows() == 0) throw UsageError("road_status.csv: no rows");
    std::vector<std::vector<TimedValue>> per_node(in.nodes.size());
    Timestamp first = Timestamp::max(), last = Timestamp::min();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto it = node_index.find(t.cell(r, c_node));
      if (it == node_index.end()) throw UsageError("road_status.csv: unknown node " + t.cell(r, c_node));
      const auto ts = parse_timestamp(t.cell(r, c_ts));
      const double f = t.number(r, c_frac);
      if (!(f >= 0.0 && f <= 1.0)) throw DomainError("road_status.csv: flooded_fraction outside [0,1]");
      per_node[it->second].push_back({ts, f});
      first = std::min(first, ts);
      last = std::max(last, ts);
    }
    out.grid.start = first;
    const auto span = (last - first).count();
    if (span % out.grid.step.count() != 0) throw UsageError("road_status.csv: timestamps are not on a 30-minute grid");
    out.grid.steps = static_cast<std::size_t>(span / out.grid.step.count()) + 1;
    in.flooded_fraction = NodeSeries(in.nodes.size(), out.grid.steps);
    for (std::size_t i = 0; i < in.nodes.size(); ++i) {
      auto& series = per_node[i];
      std::sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
      if (series.size() < 2) throw UsageError("road_status.csv: node " + in.nodes[i].id + " has fewer than 2 rows");
      const auto grid_values = resample_series(series, out.grid);
      for (std::size_t s = 0; s < out.grid.steps; ++s) in.flooded_fraction(i, s) = grid_values[s];
    }
  }
  return out;
}

std::size_t default_train_steps(std::size_t steps) { return steps * 3 / 5; }

Dataset prepare_dataset(const std::filesystem::path& scenario_dir, std::size_t train_steps, PipelineReport* report) {
  auto files = read_scenario_dir(scenario_dir);
  if (train_steps == 0) train_steps = default_train_steps(files.grid.steps);
  Dataset ds;
  ds.features = build_features(files.inputs, files.grid, train_steps, report);
  ds.nodes = std::move(files.inputs.nodes);
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset, int cheb_order) {
  std::filesystem::create_directories(dir);
  const auto& ft = dataset.features;

  std::string bin;
  bin.reserve(32 + ft.values.size() * 8 + ft.labels.size() * 4);
  bin.append(kMagic, sizeof kMagic);
  append_raw<std::uint64_t>(bin, ft.nodes);
  append_raw<std::uint64_t>(bin, kChannels);
  append_raw<std::uint64_t>(bin, ft.steps);
  for (double v : ft.values) append_raw(bin, v);
  for (int l : ft.labels) append_raw<std::int32_t>(bin, l);
  write_text_file(dir / "dataset.bin", bin);

  nlohmann::ordered_json meta;
  meta["format_version"] = kFormatVersion;
  meta["nodes"] = ft.nodes;
  meta["channels"] = kChannels;
  meta["steps"] = ft.steps;
  meta["channel_order"] = std::vector<std::string>(kChannelNames.begin(), kChannelNames.end());
  meta["node_ids"] = ft.node_ids;
  meta["grid"] = {{"start", format_timestamp(ft.grid.start)}, {"step_seconds", ft.grid.step.count()}};
  meta["train_steps"] = ft.train_steps;
  meta["normalization"] = {{"mean", ft.stats.mean}, {"std", ft.stats.std}};
  meta["payload_sha256"] = sha256_hex(bin);
  write_text_file(dir / "dataset.json", meta.dump(2) + "\n");

  write_nodes_csv(dir / "nodes.csv", dataset.nodes);
  write_adjacency_csv(dir / "adjacency.csv", RegionGraph::build(dataset.nodes, cheb_order));
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(dir / "dataset.json"));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("dataset.json: " + std::string(e.what()));
  }
  const std::string bin = read_text_file(dir / "dataset.bin");
  try {
    if (meta.at("format_version").get<int>() != kFormatVersion) throw UsageError("dataset.json: unsupported format version");
    if (meta.at("payload_sha256").get<std::string>() != sha256_hex(bin)) {
      throw UsageError("dataset.bin: checksum does not match dataset.json");
    }
    auto& ft = ds.features;
    std::size_t pos = 0;
    if (bin.size() < sizeof kMagic || std::memcmp(bin.data(), kMagic, sizeof kMagic) != 0) {
      throw UsageError("dataset.bin: bad magic");
    }
    pos = sizeof kMagic;
    ft.nodes = read_raw<std::uint64_t>(bin, pos);
    const auto channels = read_raw<std::uint64_t>(bin, pos);
    ft.steps = read_raw<std::uint64_t>(bin, pos);
    if (channels != kChannels) throw UsageError("dataset.bin: expected 6 channels");
    if (bin.size() != pos + ft.nodes * kChannels * ft.steps * 8 + ft.nodes * ft.steps * 4) {
      throw UsageError("dataset.bin: payload size does not match header");
    }
    ft.values.resize(ft.nodes * kChannels * ft.steps);
    for (auto& v : ft.values) v = read_raw<double>(bin, pos);
    ft.labels.resize(ft.nodes * ft.steps);
    for (auto& l : ft.labels) {
      l = read_raw<std::int32_t>(bin, pos);
      if (l < 0 || l > 2) throw UsageError("dataset.bin: label out of range");
    }
    ft.node_ids = meta.at("node_ids").get<std::vector<std::string>>();
    ft.grid.start = parse_timestamp(meta.at("grid").at("start").get<std::string>());
    ft.grid.step = std::chrono::seconds(meta.at("grid").at("step_seconds").get<std::int64_t>());
    ft.grid.steps = ft.steps;
    ft.train_steps = meta.at("train_steps").get<std::size_t>();
    const auto mean = meta.at("normalization").at("mean").get<std::vector<double>>();
    const auto sd = meta.at("normalization").at("std").get<std::vector<double>>();
    if (mean.size() != kChannels || sd.size() != kChannels) throw UsageError("dataset.json: bad normalization block");
    std::copy(mean.begin(), mean.end(), ft.stats.mean.begin());
    std::copy(sd.begin(), sd.end(), ft.stats.std.begin());
    if (ft.node_ids.size() != ft.nodes) throw UsageError("dataset.json: node_ids length mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("dataset.json: " + std::string(e.what()));
  }
  ds.nodes = read_nodes_csv(dir / "nodes.csv");
  if (ds.nodes.size() != ds.features.nodes) throw UsageError("nodes.csv does not match dataset.bin");
  for (std::size_t i = 0; i < ds.nodes.size(); ++i) {
    if (ds.nodes[i].id != ds.features.node_ids[i]) throw UsageError("nodes.csv order does not match dataset.json");
  }
  return ds;
}

}  // namespace nowcast
