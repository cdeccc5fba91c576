#include "nowcast/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nowcast/csv.hpp"
#include "nowcast/error.hpp"
#include "nowcast/log.hpp"

namespace nowcast {

namespace {

// Every config field under its JSON key, in declaration order.
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
  f("n_nodes", c.n_nodes);
  f("n_timesteps", c.n_timesteps);
  f("seed", c.seed);
  f("n_gauges", c.n_gauges);
  f("region_size", c.region_size);
  f("n_watersheds", c.n_watersheds);
  f("start", c.start);
  f("storm_count", c.storm_count);
  f("storm_amplitude", c.storm_amplitude);
  f("storm_radius", c.storm_radius);
  f("storm_duration", c.storm_duration);
  f("storm_speed", c.storm_speed);
  f("absorption_threshold", c.absorption_threshold);
  f("floodplain_factor", c.floodplain_factor);
  f("absorption_rate", c.absorption_rate);
  f("drainage_rate", c.drainage_rate);
  f("spill_coefficient", c.spill_coefficient);
  f("spill_neighbors", c.spill_neighbors);
  f("rain_noise", c.rain_noise);
  f("elevation_noise", c.elevation_noise);
  f("reading_drop_rate", c.reading_drop_rate);
  f("gauge_threshold", c.gauge_threshold);
  f("report_rate", c.report_rate);
  f("report_lag", c.report_lag);
  f("tweet_rate", c.tweet_rate);
  f("quiet_fraction", c.quiet_fraction);
  f("tweet_lag", c.tweet_lag);
  f("activity_baseline", c.activity_baseline);
  f("activity_depression", c.activity_depression);
  f("activity_noise", c.activity_noise);
  f("activity_window", c.activity_window);
  f("tiles_per_node", c.tiles_per_node);
  f("min_window", c.min_window);
  f("min_horizon", c.min_horizon);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  if (a.empty()) return 0.0;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::string padded(const std::string& prefix, std::size_t i, int width) {
  std::string digits = std::to_string(i);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

struct Storm {
  double t0, x0, y0, vx, vy;
};

ScenarioDataset draw(const ScenarioConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double side = c.region_size;
  const std::size_t n = c.n_nodes, steps = c.n_timesteps;

  ScenarioDataset s;
  s.config = c;
  s.effective_seed = seed;
  s.grid.start = parse_timestamp(c.start);
  s.grid.steps = steps;

  // Nodes and static features.
  std::vector<std::pair<double, double>> sheds(std::max<std::size_t>(c.n_watersheds, 1));
  for (auto& p : sheds) p = {unit(rng) * side, unit(rng) * side};
  const double stream_x = (0.3 + 0.4 * unit(rng)) * side;
  const int id_width = static_cast<int>(std::to_string(std::max<std::size_t>(n, 1) - 1).size());
  for (std::size_t i = 0; i < n; ++i) {
    UnitNode u;
    u.id = padded("n", i, std::max(id_width, 3));
    u.x = unit(rng) * side;
    u.y = unit(rng) * side;
    std::size_t shed = 0;
    double best = INFINITY;
    for (std::size_t k = 0; k < sheds.size(); ++k) {
      const double d = std::hypot(u.x - sheds[k].first, u.y - sheds[k].second);
      if (d < best) {
        best = d;
        shed = k;
      }
    }
    u.features.watershed_id = "ws" + std::to_string(shed);
    u.features.dist_coast = u.y;
    u.features.dist_stream = std::abs(u.x - stream_x);
    u.features.in_floodplain = u.features.dist_stream < 0.12 * side;
    u.features.residential_ratio = 0.2 + 0.7 * unit(rng);
    s.nodes.push_back(std::move(u));
  }

  // Spill neighbours: the k nearest uphill nodes (farther from the coast at
  // y = 0), so water runs toward the coast and every flood eventually drains.
  std::vector<std::vector<std::size_t>> neighbours(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (s.nodes[j].y > s.nodes[i].y) d.emplace_back(std::hypot(s.nodes[i].x - s.nodes[j].x, s.nodes[i].y - s.nodes[j].y), j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t k = 0; k < std::min(c.spill_neighbors, d.size()); ++k) neighbours[i].push_back(d[k].second);
  }
  std::vector<double> nn_dist(n, side);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) nn_dist[i] = std::min(nn_dist[i], std::hypot(s.nodes[i].x - s.nodes[j].x, s.nodes[i].y - s.nodes[j].y));

  // Storms, one per stratum of the timeline so every split sees weather.
  std::vector<Storm> storms;
  for (std::size_t k = 0; k < c.storm_count; ++k) {
    const double stratum = static_cast<double>(steps) / static_cast<double>(c.storm_count);
    const double angle = 2.0 * std::numbers::pi * unit(rng);
    Storm st;
    st.t0 = stratum * (static_cast<double>(k) + 0.15 + 0.6 * unit(rng));
    st.x0 = unit(rng) * side;
    st.y0 = unit(rng) * side;
    st.vx = c.storm_speed * std::cos(angle);
    st.vy = c.storm_speed * std::sin(angle);
    storms.push_back(st);
  }
  auto rain_at = [&](double x, double y, std::size_t t) {
    double r = 0.0;
    for (const auto& st : storms) {
      const double dt = static_cast<double>(t) - st.t0;
      const double cx = st.x0 + st.vx * dt, cy = st.y0 + st.vy * dt;
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      r += c.storm_amplitude * std::exp(-d2 / (2.0 * c.storm_radius * c.storm_radius) -
                                        dt * dt / (2.0 * c.storm_duration * c.storm_duration));
    }
    return r;
  };

  // Latent rain and flooding.
  s.rain = NodeSeries(n, steps);
  s.flooded_fraction = NodeSeries(n, steps);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < steps; ++t) s.rain(i, t) = rain_at(s.nodes[i].x, s.nodes[i].y, t);
  for (std::size_t t = 0; t + 1 < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double thr = c.absorption_threshold * (s.nodes[i].features.in_floodplain ? c.floodplain_factor : 1.0);
      double spill = 0.0;
      if (!neighbours[i].empty()) {
        for (auto j : neighbours[i]) spill += s.flooded_fraction(j, t);
        spill /= static_cast<double>(neighbours[i].size());
      }
      s.flooded_fraction(i, t + 1) = flood_update(s.flooded_fraction(i, t), s.rain(i, t), thr, spill, c);
    }
  }

  // Gauges: noisy rain increments and a leaky water level.
  std::bernoulli_distribution drop(c.reading_drop_rate);
  for (std::size_t g = 0; g < c.n_gauges; ++g) {
    GaugeStation st;
    st.id = padded("g", g, 2);
    st.x = unit(rng) * side;
    st.y = unit(rng) * side;
    st.flood_threshold = c.gauge_threshold;
    double level = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const double r = rain_at(st.x, st.y, t);
      level = level * 0.95 + 0.02 * r;
      const double inc = std::max(0.0, r + c.rain_noise * normal(rng));
      const double elev = std::max(0.0, 1.0 + level + c.elevation_noise * normal(rng));
      const bool dropped = drop(rng);
      if (dropped && t != 0 && t + 1 != steps) continue;
      st.readings.push_back({s.grid.at(t), inc, elev});
    }
    s.gauges.push_back(std::move(st));
  }

  // Human-sensed point events, timestamped inside their grid interval.
  std::uniform_int_distribution<int> second_in_step(0, static_cast<int>(s.grid.step.count()) - 1);
  std::vector<double> counts, lagged;
  std::vector<char> quiet(n, 0);
  std::bernoulli_distribution is_quiet(c.quiet_fraction);
  for (auto& q : quiet) q = is_quiet(rng);
  auto emit_points = [&](EventKind kind, double rate, std::size_t lag, bool track) {
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        const double f = t >= lag ? s.flooded_fraction(i, t - lag) : 0.0;
        const double mean = quiet[i] ? 0.0 : rate * f;
        const int k = mean > 0.0 ? std::poisson_distribution<int>(mean)(rng) : 0;
        if (track && t >= lag && !quiet[i]) {
          counts.push_back(k);
          lagged.push_back(f);
        }
        for (int e = 0; e < k; ++e) {
          const double r = 0.1 * nn_dist[i] * std::sqrt(unit(rng));
          const double a = 2.0 * std::numbers::pi * unit(rng);
          EventRecord ev;
          ev.kind = kind;
          ev.time = s.grid.at(t) - std::chrono::seconds(second_in_step(rng));
          ev.x = s.nodes[i].x + r * std::cos(a);
          ev.y = s.nodes[i].y + r * std::sin(a);
          ev.value = 1.0;
          s.events.push_back(ev);
        }
      }
  };
  emit_points(EventKind::Report311, c.report_rate, c.report_lag, true);
  emit_points(EventKind::Tweet, c.tweet_rate, c.tweet_lag, false);
  s.report_correlation = pearson(counts, lagged);

  // Activity tiles: each window's index reflects the previous window's
  // flooding, stamped at the window's last step.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c.tiles_per_node; ++k) s.tile_to_node[padded("t", i, 3) + "_" + std::to_string(k)] = i;
  for (std::size_t start = 0; start < steps; start += c.activity_window) {
    const std::size_t end = std::min(steps, start + c.activity_window) - 1;
    for (std::size_t i = 0; i < n; ++i) {
      double f = 0.0;
      std::size_t m = 0;
      for (std::size_t t = start >= c.activity_window ? start - c.activity_window : start; t < start; ++t, ++m) {
        f += s.flooded_fraction(i, t);
      }
      if (m > 0) f /= static_cast<double>(m);
      for (std::size_t k = 0; k < c.tiles_per_node; ++k) {
        EventRecord ev;
        ev.kind = EventKind::ActivityTile;
        ev.time = s.grid.at(end);
        ev.x = ev.y = std::nan("");
        ev.tile_id = padded("t", i, 3) + "_" + std::to_string(k);
        ev.value = std::clamp(c.activity_baseline - c.activity_depression * f + c.activity_noise * normal(rng), 0.0, 1.0);
        s.events.push_back(ev);
      }
    }
  }
  return s;
}

}  // namespace

double flood_update(double f, double rain, double threshold, double neighbour_mean, const ScenarioConfig& c) {
  const double next = f + c.absorption_rate * std::max(rain - threshold, 0.0) + c.spill_coefficient * neighbour_mean -
                      c.drainage_rate;
  return std::clamp(next, 0.0, 1.0);
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("scenario config: " + msg); };
  if (n_nodes < 4) fail("n_nodes must be >= 4");
  if (n_timesteps < 2 * (min_window + min_horizon)) {
    fail("n_timesteps must be >= 2 * (window + horizon) = " + std::to_string(2 * (min_window + min_horizon)));
  }
  if (n_gauges < 2) fail("n_gauges must be >= 2");
  if (n_watersheds < 1) fail("n_watersheds must be >= 1");
  if (activity_window < 1) fail("activity_window must be >= 1");
  if (!(region_size > 0.0)) fail("region_size must be positive");
  if (!(storm_radius > 0.0) || !(storm_duration > 0.0)) fail("storm radius and duration must be positive");
  const std::pair<const char*, double> rates[] = {
      {"storm_amplitude", storm_amplitude},     {"storm_speed", storm_speed},
      {"absorption_threshold", absorption_threshold}, {"floodplain_factor", floodplain_factor},
      {"absorption_rate", absorption_rate},     {"drainage_rate", drainage_rate},
      {"spill_coefficient", spill_coefficient}, {"rain_noise", rain_noise},
      {"elevation_noise", elevation_noise},     {"gauge_threshold", gauge_threshold},
      {"report_rate", report_rate},             {"tweet_rate", tweet_rate},
      {"activity_depression", activity_depression}, {"activity_noise", activity_noise}};
  for (const auto& [name, v] : rates) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(std::string(name) + " must be a finite value >= 0");
  }
  if (!(gauge_threshold > 0.0)) fail("gauge_threshold must be positive");
  if (!(reading_drop_rate >= 0.0 && reading_drop_rate < 1.0)) fail("reading_drop_rate must lie in [0, 1)");
  if (!(quiet_fraction >= 0.0 && quiet_fraction < 1.0)) fail("quiet_fraction must lie in [0, 1)");
  if (!(activity_baseline >= 0.0 && activity_baseline <= 1.0)) fail("activity_baseline must lie in [0, 1]");
  parse_timestamp(start);
}

ScenarioConfig read_scenario_config(const std::filesystem::path& path) {
  ScenarioConfig c;
  try {
    const auto j = nlohmann::json::parse(read_text_file(path));
    if (!j.is_object()) throw UsageError(path.string() + ": expected a JSON object");
    std::set<std::string> known;
    visit_fields(c, [&](const char* key, auto&) { known.insert(key); });
    for (const auto& [key, _] : j.items()) {
      if (!known.count(key)) throw UsageError(path.string() + ": unknown key '" + key + "'");
    }
    visit_fields(c, [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    });
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

std::string to_json(const ScenarioConfig& config) {
  nlohmann::ordered_json j;
  visit_fields(config, [&](const char* key, const auto& field) { j[key] = field; });
  return j.dump(2) + "\n";
}

PipelineInputs ScenarioDataset::pipeline_inputs() const {
  PipelineInputs in;
  in.nodes = nodes;
  in.gauges = gauges;
  in.events = events;
  in.tile_to_node = tile_to_node;
  in.flooded_fraction = flooded_fraction;
  return in;
}

ScenarioDataset generate(const ScenarioConfig& config) {
  config.validate();
  constexpr int kMaxAttempts = 10;
  bool any_flooding = false;
  ScenarioDataset s;
  for (int attempt = 1; attempt <= kMaxAttempts; ++attempt) {
    const std::uint64_t seed =
        attempt == 1 ? config.seed : config.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(attempt - 1);
    s = draw(config, seed);
    s.attempts = attempt;
    any_flooding = std::any_of(s.flooded_fraction.values.begin(), s.flooded_fraction.values.end(),
                               [](double f) { return f > 0.0; });
    // Without flooding or without reports there is nothing to correlate.
    if (!any_flooding || config.report_rate == 0.0 || s.report_correlation > 0.3) return s;
    log().info("scenario draw {} has report correlation {:.3f}; redrawing", attempt, s.report_correlation);
  }
  log().warn("scenario: report correlation still {:.3f} after {} draws", s.report_correlation, kMaxAttempts);
  return s;
}

std::vector<std::string> write_scenario(const std::filesystem::path& dir, const ScenarioDataset& s) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::string> written;

  write_nodes_csv(dir / "nodes.csv", s.nodes);
  written.push_back("nodes.csv");

  {
    std::ostringstream os;
    os << "id,x,y,threshold\n";
    for (const auto& g : s.gauges) {
      os << g.id << ',' << format_double(g.x) << ',' << format_double(g.y) << ',' << format_double(g.flood_threshold)
         << '\n';
    }
    write_text_file(dir / "gauges.csv", os.str());
    written.push_back("gauges.csv");
  }
  {
    std::ostringstream os;
    os << "gauge_id,timestamp,rain_increment_mm,water_elevation_m\n";
    for (const auto& g : s.gauges)
      for (const auto& r : g.readings) {
        os << g.id << ',' << format_timestamp(r.time) << ',' << format_double(r.rain_increment_mm) << ','
           << format_double(r.water_elevation_m) << '\n';
      }
    write_text_file(dir / "gauge_readings.csv", os.str());
    written.push_back("gauge_readings.csv");
  }
  {
    std::ostringstream os;
    os << "kind,timestamp,x,y,tile_id,value\n";
    for (const auto& e : s.events) {
      os << to_string(e.kind) << ',' << format_timestamp(e.time) << ',';
      if (e.kind == EventKind::ActivityTile) {
        os << ",," << e.tile_id;
      } else {
        os << format_double(e.x) << ',' << format_double(e.y) << ',';
      }
      os << ',' << format_double(e.value) << '\n';
    }
    write_text_file(dir / "events.csv", os.str());
    written.push_back("events.csv");
  }
  {
    std::ostringstream os;
    os << "tile_id,node_id\n";
    for (const auto& [tile, node] : s.tile_to_node) os << tile << ',' << s.nodes.at(node).id << '\n';
    write_text_file(dir / "tile_map.csv", os.str());
    written.push_back("tile_map.csv");
  }
  {
    std::ostringstream os;
    os << "node_id,timestamp,flooded_fraction\n";
    for (std::size_t i = 0; i < s.nodes.size(); ++i)
      for (std::size_t t = 0; t < s.grid.steps; ++t) {
        os << s.nodes[i].id << ',' << format_timestamp(s.grid.at(t)) << ',' << format_double(s.flooded_fraction(i, t))
           << '\n';
      }
    write_text_file(dir / "road_status.csv", os.str());
    written.push_back("road_status.csv");
  }
  {
    std::array<std::size_t, 3> classes{};
    for (double f : s.flooded_fraction.values) ++classes[static_cast<std::size_t>(label_flood_class(f))];
    nlohmann::ordered_json meta;
    meta["config"] = nlohmann::ordered_json::parse(to_json(s.config));
    meta["seed"] = s.config.seed;
    meta["effective_seed"] = s.effective_seed;
    meta["attempts"] = s.attempts;
    meta["report_correlation"] = s.report_correlation;
    meta["grid"] = {{"start", format_timestamp(s.grid.start)},
                    {"step_seconds", s.grid.step.count()},
                    {"steps", s.grid.steps}};
    meta["label_counts"] = classes;
    write_text_file(dir / "scenario_meta.json", meta.dump(2) + "\n");
    written.push_back("scenario_meta.json");
  }
  return written;
}

AblationViews ablation_variants(const Dataset& dataset) {
  AblationViews v{dataset, dataset};
  auto& ft = v.physics_only.features;
  for (std::size_t n = 0; n < ft.nodes; ++n)
    for (std::size_t c = kReports311; c < kChannels; ++c)
      std::fill_n(ft.values.begin() + static_cast<std::ptrdiff_t>((n * kChannels + c) * ft.steps), ft.steps, 0.0);
  for (std::size_t c = kReports311; c < kChannels; ++c) {
    ft.stats.mean[c] = 0.0;
    ft.stats.std[c] = 1.0;
  }
  return v;
}

}  // namespace nowcast
