#include "nowcast/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>

#include "nowcast/error.hpp"
#include "nowcast/log.hpp"

namespace nowcast {

// ---------------------------------------------------------------------------
// Time

Timestamp parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  auto num = [&text](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > text.size()) return false;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
    return ec == std::errc() && ptr == text.data() + pos + len;
  };
  const bool shape_ok = text.size() >= 19 && text[4] == '-' && text[7] == '-' && text[10] == 'T' &&
                        text[13] == ':' && text[16] == ':' &&
                        (text.size() == 19 || (text.size() == 20 && text[19] == 'Z'));
  if (!shape_ok || !num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d) || !num(11, 2, h) || !num(14, 2, mi) ||
      !num(17, 2, s)) {
    throw UsageError("bad ISO-8601 UTC timestamp: '" + std::string(text) + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) throw UsageError("invalid date/time: '" + std::string(text) + "'");
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto days = floor<std::chrono::days>(t);
  const year_month_day ymd{days};
  const hh_mm_ss hms{t - days};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

std::ptrdiff_t grid_interval(const TimeGrid& grid, Timestamp time) {
  const auto delta = (time - grid.start).count();
  const auto step = grid.step.count();
  // ceil(delta / step) for either sign.
  std::int64_t idx = delta / step;
  if (delta % step != 0 && delta > 0) ++idx;
  if (idx < 0 || idx >= static_cast<std::int64_t>(grid.steps)) return -1;
  return static_cast<std::ptrdiff_t>(idx);
}

// ---------------------------------------------------------------------------
// Gauges

std::array<GaugeWeight, 2> nearest_two_gauges(double x, double y, const std::vector<GaugeStation>& gauges) {
  if (gauges.size() < 2) throw UsageError("nearest_two_gauges: need at least 2 gauges");
  std::vector<std::size_t> order(gauges.size());
  std::vector<double> dist(gauges.size());
  for (std::size_t i = 0; i < gauges.size(); ++i) {
    order[i] = i;
    dist[i] = std::hypot(gauges[i].x - x, gauges[i].y - y);
  }
  std::partial_sort(order.begin(), order.begin() + 2, order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return gauges[a].id < gauges[b].id;
  });
  const std::size_t g1 = order[0], g2 = order[1];
  if (dist[g1] == 0.0) return {GaugeWeight{g1, 1.0}, GaugeWeight{g2, 0.0}};
  const double inv1 = 1.0 / dist[g1], inv2 = 1.0 / dist[g2];
  return {GaugeWeight{g1, inv1 / (inv1 + inv2)}, GaugeWeight{g2, inv2 / (inv1 + inv2)}};
}

std::vector<double> resample_series(std::span<const TimedValue> readings, const TimeGrid& grid) {
  if (readings.size() < 2) throw UsageError("resample_series: need at least 2 readings");
  for (std::size_t i = 1; i < readings.size(); ++i) {
    if (readings[i].time <= readings[i - 1].time) {
      throw UsageError("resample_series: timestamps must be strictly increasing");
    }
  }
  std::vector<double> out(grid.steps);
  std::size_t k = 0;  // readings[k] is the last reading at or before the grid time
  for (std::size_t t = 0; t < grid.steps; ++t) {
    const Timestamp g = grid.at(t);
    if (g <= readings.front().time) {
      out[t] = readings.front().value;
      continue;
    }
    if (g >= readings.back().time) {
      out[t] = readings.back().value;
      continue;
    }
    while (readings[k + 1].time < g) ++k;
    const auto& a = readings[k];
    const auto& b = readings[k + 1];
    if (b.time == g) {
      out[t] = b.value;
      continue;
    }
    const double span = static_cast<double>((b.time - a.time).count());
    const double frac = static_cast<double>((g - a.time).count()) / span;
    out[t] = a.value + frac * (b.value - a.value);
  }
  return out;
}

std::vector<double> accumulate_rainfall(std::span<const double> incremental, int window_steps) {
  if (window_steps < 1) throw UsageError("accumulate_rainfall: window must be >= 1");
  for (double v : incremental) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("accumulate_rainfall: negative or non-finite increment");
  }
  const auto w = static_cast<std::size_t>(window_steps);
  std::vector<double> out(incremental.size());
  for (std::size_t t = 0; t < incremental.size(); ++t) {
    // Summed directly rather than as a running difference so the result is
    // exact for integer-valued inputs and never drifts below zero.
    double acc = 0.0;
    for (std::size_t i = t + 1 > w ? t + 1 - w : 0; i <= t; ++i) acc += incremental[i];
    out[t] = acc;
  }
  return out;
}

std::vector<double> water_ratio(std::span<const double> elevation, double threshold) {
  if (!(threshold > 0.0)) throw UsageError("water_ratio: threshold must be positive");
  std::vector<double> out(elevation.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = elevation[t] / threshold;
  return out;
}

std::vector<double> blend_gauge_channel(std::span<const double> first, std::span<const double> second,
                                        const std::array<GaugeWeight, 2>& weights) {
  if (first.size() != second.size()) throw UsageError("blend_gauge_channel: grid mismatch");
  if (std::abs(weights[0].weight + weights[1].weight - 1.0) > 1e-12) {
    throw UsageError("blend_gauge_channel: weights must sum to 1");
  }
  std::vector<double> out(first.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t] = weights[0].weight * first[t] + weights[1].weight * second[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Events

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Report311: return "report_311";
    case EventKind::Tweet: return "tweet";
    case EventKind::ActivityTile: return "activity_tile";
  }
  return "?";
}

EventKind parse_event_kind(std::string_view text) {
  if (text == "report_311") return EventKind::Report311;
  if (text == "tweet") return EventKind::Tweet;
  if (text == "activity_tile") return EventKind::ActivityTile;
  throw UsageError("unknown event kind '" + std::string(text) + "'");
}

namespace {

std::size_t nearest_node(double x, double y, const std::vector<UnitNode>& nodes, double* distance) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double d = std::hypot(nodes[i].x - x, nodes[i].y - y);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  *distance = best_d;
  return best;
}

double default_region_radius(const std::vector<UnitNode>& nodes) {
  double widest = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double nn = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nodes.size(); ++j)
      if (i != j) nn = std::min(nn, std::hypot(nodes[i].x - nodes[j].x, nodes[i].y - nodes[j].y));
    if (std::isfinite(nn)) widest = std::max(widest, nn);
  }
  return widest > 0.0 ? 2.0 * widest : std::numeric_limits<double>::infinity();
}

}  // namespace

PointAggregation aggregate_point_events(std::span<const EventRecord> events, EventKind kind,
                                        const std::vector<UnitNode>& nodes, const TimeGrid& grid,
                                        double region_radius) {
  if (nodes.empty()) throw UsageError("aggregate_point_events: no nodes");
  if (kind == EventKind::ActivityTile) throw UsageError("aggregate_point_events: activity tiles are not point events");
  const double radius = region_radius > 0.0 ? region_radius : default_region_radius(nodes);
  PointAggregation agg;
  agg.counts = NodeSeries(nodes.size(), grid.steps);
  for (const auto& e : events) {
    if (e.kind != kind) continue;
    ++agg.total;
    if (!std::isfinite(e.x) || !std::isfinite(e.y)) {
      throw UsageError("aggregate_point_events: event without a resolvable location");
    }
    const auto t = grid_interval(grid, e.time);
    if (t < 0) {
      ++agg.outside_grid;
      continue;
    }
    double d = 0.0;
    const std::size_t n = nearest_node(e.x, e.y, nodes, &d);
    if (d <= radius) {
      ++agg.in_region;
    } else {
      ++agg.snapped;
      log().info("{} event at ({}, {}) outside all node regions, assigned to nearest node {}", to_string(kind), e.x,
                 e.y, nodes[n].id);
    }
    agg.counts(n, static_cast<std::size_t>(t)) += 1.0;
  }
  if (agg.outside_grid > 0) {
    log().info("{} {} events fall outside the time grid", agg.outside_grid, to_string(kind));
  }
  return agg;
}

ActivityAggregation aggregate_activity(std::span<const EventRecord> events,
                                       const std::map<std::string, std::size_t>& tile_to_node,
                                       const std::vector<UnitNode>& nodes, const TimeGrid& grid) {
  ActivityAggregation agg;
  agg.values = NodeSeries(nodes.size(), grid.steps);
  // node -> window time -> (sum, count)
  std::vector<std::map<Timestamp, std::pair<double, int>>> windows(nodes.size());
  for (const auto& e : events) {
    if (e.kind != EventKind::ActivityTile) continue;
    if (!(e.value >= 0.0 && e.value <= 1.0)) {
      throw DomainError("aggregate_activity: activity index " + std::to_string(e.value) + " outside [0,1]");
    }
    auto it = tile_to_node.find(e.tile_id);
    if (it == tile_to_node.end()) {
      ++agg.unmapped_records;
      continue;
    }
    if (it->second >= nodes.size()) throw UsageError("aggregate_activity: tile map points past the node list");
    auto& cell = windows[it->second][e.time];
    cell.first += e.value;
    cell.second += 1;
  }
  if (agg.unmapped_records > 0) log().warn("{} activity records have tiles missing from the tile map", agg.unmapped_records);
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const auto& w = windows[n];
    if (w.empty()) {
      agg.uncovered_nodes.push_back(nodes[n].id);
      continue;
    }
    std::vector<TimedValue> series;
    series.reserve(w.size());
    for (const auto& [time, acc] : w) series.push_back({time, acc.first / acc.second});
    if (series.size() == 1) {
      for (std::size_t t = 0; t < grid.steps; ++t) agg.values(n, t) = series.front().value;
    } else {
      const auto resampled = resample_series(series, grid);
      std::copy(resampled.begin(), resampled.end(), agg.values.values.begin() + static_cast<std::ptrdiff_t>(n * grid.steps));
    }
  }
  if (!agg.uncovered_nodes.empty()) {
    log().warn("{} nodes have no activity tiles; their activity channel is 0", agg.uncovered_nodes.size());
  }
  return agg;
}

int label_flood_class(double flooded_fraction) {
  if (!(flooded_fraction >= 0.0 && flooded_fraction <= 1.0)) {
    throw DomainError("label_flood_class: flooded fraction " + std::to_string(flooded_fraction) + " outside [0,1]");
  }
  if (flooded_fraction < 0.01) return 0;
  if (flooded_fraction <= 0.10) return 1;
  return 2;
}

// ---------------------------------------------------------------------------
// Assembly

FeatureTensor assemble(const std::vector<std::string>& node_ids, const ChannelInputs& channels,
                       const NodeSeries& flooded_fraction, const TimeGrid& grid, std::size_t train_steps) {
  const std::size_t n = node_ids.size(), steps = grid.steps;
  if (n == 0 || steps == 0) throw UsageError("assemble: empty node set or grid");
  if (train_steps == 0 || train_steps > steps) throw UsageError("assemble: training span must lie within the grid");
  for (std::size_t c = 0; c < kChannels; ++c) {
    const auto& ch = channels[c];
    if (ch.values.empty()) throw UsageError("assemble: missing channel " + std::string(kChannelNames[c]));
    if (ch.nodes != n || ch.steps != steps || ch.values.size() != n * steps) {
      throw UsageError("assemble: channel " + std::string(kChannelNames[c]) + " is not on the grid");
    }
  }
  if (flooded_fraction.nodes != n || flooded_fraction.steps != steps) {
    throw UsageError("assemble: flooded fraction is not on the grid");
  }

  FeatureTensor ft;
  ft.nodes = n;
  ft.steps = steps;
  ft.grid = grid;
  ft.node_ids = node_ids;
  ft.train_steps = train_steps;
  ft.values.resize(n * kChannels * steps);
  ft.labels.resize(n * steps);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      for (std::size_t t = 0; t < steps; ++t) {
        const double v = channels[c](i, t);
        if (!std::isfinite(v)) {
          throw DomainError("assemble: non-finite " + std::string(kChannelNames[c]) + " at node " + node_ids[i] +
                            ", step " + std::to_string(t));
        }
        ft.values[(i * kChannels + c) * steps + t] = v;
      }
    }
    for (std::size_t t = 0; t < steps; ++t) ft.labels[i * steps + t] = label_flood_class(flooded_fraction(i, t));
  }

  const double count = static_cast<double>(n * train_steps);
  for (std::size_t c = 0; c < kChannels; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < train_steps; ++t) mean += ft.value(i, c, t);
    mean /= count;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < train_steps; ++t) var += (ft.value(i, c, t) - mean) * (ft.value(i, c, t) - mean);
    const double sd = std::sqrt(var / count);
    ft.stats.mean[c] = mean;
    ft.stats.std[c] = sd > 1e-12 ? sd : 1.0;
  }
  return ft;
}

FeatureTensor build_features(const PipelineInputs& in, const TimeGrid& grid, std::size_t train_steps,
                             PipelineReport* report) {
  const std::size_t n = in.nodes.size();
  if (in.gauges.size() < 2) throw UsageError("build_features: need at least 2 gauges");

  // Per-gauge channels on the grid.
  struct GaugeChannels {
    std::vector<double> rain_2h, rain_24h, ratio;
  };
  std::vector<GaugeChannels> per_gauge;
  per_gauge.reserve(in.gauges.size());
  for (const auto& g : in.gauges) {
    std::vector<TimedValue> rain, elev;
    for (const auto& r : g.readings) {
      rain.push_back({r.time, r.rain_increment_mm});
      elev.push_back({r.time, r.water_elevation_m});
    }
    GaugeChannels gc;
    const auto rain_grid = resample_series(rain, grid);
    gc.rain_2h = accumulate_rainfall(rain_grid, kRain2hWindow);
    gc.rain_24h = accumulate_rainfall(rain_grid, kRain24hWindow);
    gc.ratio = water_ratio(resample_series(elev, grid), g.flood_threshold);
    per_gauge.push_back(std::move(gc));
  }

  ChannelInputs ch;
  for (std::size_t c = 0; c < 3; ++c) ch[c] = NodeSeries(n, grid.steps);
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = nearest_two_gauges(in.nodes[i].x, in.nodes[i].y, in.gauges);
    const auto& a = per_gauge[w[0].gauge];
    const auto& b = per_gauge[w[1].gauge];
    const std::array<const std::vector<double>*, 3> sa = {&a.rain_2h, &a.rain_24h, &a.ratio};
    const std::array<const std::vector<double>*, 3> sb = {&b.rain_2h, &b.rain_24h, &b.ratio};
    for (std::size_t c = 0; c < 3; ++c) {
      const auto blended = blend_gauge_channel(*sa[c], *sb[c], w);
      std::copy(blended.begin(), blended.end(), ch[c].values.begin() + static_cast<std::ptrdiff_t>(i * grid.steps));
    }
  }

  auto reports = aggregate_point_events(in.events, EventKind::Report311, in.nodes, grid);
  auto tweets = aggregate_point_events(in.events, EventKind::Tweet, in.nodes, grid);
  auto activity = aggregate_activity(in.events, in.tile_to_node, in.nodes, grid);
  ch[kReports311] = std::move(reports.counts);
  ch[kTweets] = std::move(tweets.counts);
  ch[kActivity] = std::move(activity.values);

  if (report) {
    report->reports_total = reports.total;
    report->reports_snapped = reports.snapped;
    report->reports_outside_grid = reports.outside_grid;
    report->tweets_total = tweets.total;
    report->tweets_snapped = tweets.snapped;
    report->tweets_outside_grid = tweets.outside_grid;
    report->uncovered_nodes = activity.uncovered_nodes;
    report->unmapped_tiles = activity.unmapped_records;
  }

  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& node : in.nodes) ids.push_back(node.id);
  return assemble(ids, ch, in.flooded_fraction, grid, train_steps);
}

}  // namespace nowcast
