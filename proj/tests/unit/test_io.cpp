#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nowcast/csv.hpp"
#include "nowcast/digest.hpp"
#include "nowcast/error.hpp"
#include "nowcast/scenario.hpp"
#include "nowcast/weights_io.hpp"

using namespace nowcast;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("nowcast_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("csv parsing") {
  const auto t = CsvTable::parse("a,b\n1,x\n2.5,y\n");
  CHECK(t.rows() == 2);
  CHECK(t.number(1, t.column("a")) == 2.5);
  CHECK(t.cell(1, 1) == "y");
  CHECK_THROWS_AS(t.column("c"), UsageError);
  CHECK_THROWS_AS(t.number(0, 1), UsageError);
  CHECK_THROWS_AS(CsvTable::parse("a,b\n1\n"), UsageError);
  CHECK_THROWS_AS(CsvTable::read("/nonexistent/file.csv"), IoError);
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("sha256 of a known string") {
  CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("weights round-trip bitwise and detect corruption") {
  const auto dir = scratch("weights");
  ModelConfig mc;
  mc.nodes = 4;
  mc.block_channels = {5, 3};
  mc.window = 6;
  mc.seed = 9;
  mc.graph = GraphMode::Edgeless;
  const auto p = ModelParams::init(mc);
  save_weights(dir / "w.bin", p);
  const auto q = load_weights(dir / "w.bin");
  CHECK(model_config_json(q.config) == model_config_json(mc));
  const auto pa = p.parameters(), pb = q.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second->shape() == pb[i].second->shape());
    const auto va = pa[i].second->values(), vb = pb[i].second->values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin(), vb.end()));
  }

  auto bytes = read_text_file(dir / "w.bin");
  bytes[bytes.size() - 3] ^= 0x40;
  write_text_file(dir / "bad.bin", bytes);
  CHECK_THROWS_AS(load_weights(dir / "bad.bin"), UsageError);
  write_text_file(dir / "short.bin", bytes.substr(0, 20));
  CHECK_THROWS_AS(load_weights(dir / "short.bin"), UsageError);
  write_text_file(dir / "magic.bin", "NOTMAGIC" + bytes.substr(8));
  CHECK_THROWS_AS(load_weights(dir / "magic.bin"), UsageError);
  CHECK_THROWS_AS(load_weights(dir / "absent.bin"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("dataset round-trip") {
  const auto dir = scratch("dataset");
  ScenarioConfig sc;
  sc.n_nodes = 6;
  sc.n_timesteps = 60;
  sc.n_gauges = 2;
  const auto s = generate(sc);
  const Dataset ds{s.nodes, build_features(s.pipeline_inputs(), s.grid, 36)};
  write_dataset(dir, ds);
  for (const char* f : {"dataset.bin", "dataset.json", "nodes.csv", "adjacency.csv"}) CHECK(fs::exists(dir / f));
  const auto back = read_dataset(dir);
  CHECK(back.features.values == ds.features.values);
  CHECK(back.features.labels == ds.features.labels);
  CHECK(back.features.node_ids == ds.features.node_ids);
  CHECK(back.features.train_steps == 36);
  CHECK(back.features.stats.mean == ds.features.stats.mean);
  CHECK(back.features.stats.std == ds.features.stats.std);
  CHECK(back.features.grid.start == ds.features.grid.start);
  CHECK(back.nodes.size() == 6);
  CHECK(back.nodes[2].x == ds.nodes[2].x);

  auto bytes = read_text_file(dir / "dataset.bin");
  bytes[40] ^= 0x01;
  write_text_file(dir / "dataset.bin", bytes);
  CHECK_THROWS_AS(read_dataset(dir), UsageError);
  CHECK_THROWS_AS(read_dataset(dir / "nope"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("scenario reader rejects malformed inputs") {
  const auto dir = scratch("scenario");
  ScenarioConfig sc;
  sc.n_nodes = 5;
  sc.n_timesteps = 40;
  sc.n_gauges = 2;
  sc.min_window = 4;
  write_scenario(dir, generate(sc));
  CHECK_NOTHROW(read_scenario_dir(dir));
  auto events = read_text_file(dir / "events.csv");
  write_text_file(dir / "events.csv", events + "flood,2017-08-25T00:00:00Z,0,0,,1\n");
  CHECK_THROWS_AS(read_scenario_dir(dir), UsageError);
  write_text_file(dir / "events.csv", events);
  fs::remove(dir / "gauges.csv");
  CHECK_THROWS_AS(read_scenario_dir(dir), IoError);
  fs::remove_all(dir);
}
