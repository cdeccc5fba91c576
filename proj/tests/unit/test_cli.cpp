#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "nowcast/csv.hpp"
#include "nowcast/digest.hpp"

namespace fs = std::filesystem;
using nowcast::read_text_file;
using nowcast::sha256_file;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "nowcast_cli_tests";

int run(const std::string& args) {
  const std::string cmd = std::string(NOWCAST_CLI) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string path(const std::string& name) { return (kRoot / name).string(); }

void write(const std::string& name, const std::string& text) { std::ofstream(kRoot / name) << text; }

// Scenario, dataset and a short training config shared by the cases below.
struct Fixture {
  Fixture() {
    static bool ready = false;
    if (ready) return;
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    write("scenario.json", R"({"n_nodes": 8, "n_timesteps": 96, "n_gauges": 3, "storm_count": 4})");
    write("train.json", R"({"epochs": 3, "batch_size": 4, "model": {"block_channels": [4], "window": 4}})");
    REQUIRE(run("generate --config " + path("scenario.json") + " --seed 5 --out " + path("scen")) == 0);
    REQUIRE(run("prepare --scenario " + path("scen") + " --out " + path("data")) == 0);
    ready = true;
  }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("train --data " + path("data") + " --config " + path("missing.json") + " --out " + path("x")) == 2);
  CHECK(run("train --data " + path("data") + " --out " + path("x") + " --ablation sideways") == 2);
  write("bad.json", R"({"epochs": 3, "momentum": 0.9})");
  CHECK(run("train --data " + path("data") + " --config " + path("bad.json") + " --out " + path("x")) == 2);
  CHECK(run("generate --out " + path("g") + " --config " + path("bad.json")) == 2);
}

TEST_CASE_FIXTURE(Fixture, "generate is reproducible per seed") {
  REQUIRE(run("generate --config " + path("scenario.json") + " --seed 5 --out " + path("scen2")) == 0);
  for (const char* f : {"nodes.csv", "events.csv", "gauge_readings.csv", "road_status.csv", "scenario_meta.json"}) {
    INFO(f);
    CHECK(sha256_file(kRoot / "scen" / f) == sha256_file(kRoot / "scen2" / f));
  }
  REQUIRE(run("generate --config " + path("scenario.json") + " --seed 6 --out " + path("scen3")) == 0);
  CHECK(sha256_file(kRoot / "scen" / "events.csv") != sha256_file(kRoot / "scen3" / "events.csv"));
  const auto manifest = nlohmann::json::parse(read_text_file(kRoot / "scen" / "run_manifest.json"));
  CHECK(manifest["command"] == "generate");
  CHECK(manifest["seeds"][0] == 5);
  CHECK(manifest.contains("wall_clock_seconds"));
}

TEST_CASE_FIXTURE(Fixture, "train writes its artifacts and ablations change results") {
  REQUIRE(run("train --data " + path("data") + " --config " + path("train.json") + " --out " + path("full")) == 0);
  for (const char* f : {"weights.bin", "history.csv", "train_config.json", "metrics.json", "confusion.csv",
                        "run_manifest.json"}) {
    INFO(f);
    CHECK(fs::exists(kRoot / "full" / f));
  }
  const auto history = read_text_file(kRoot / "full" / "history.csv");
  CHECK(history.rfind("epoch,train_loss,train_acc,val_macro_f1\n", 0) == 0);

  REQUIRE(run("train --data " + path("data") + " --config " + path("train.json") + " --out " + path("noatt") +
              " --ablation attention-off") == 0);
  const auto m = nlohmann::json::parse(read_text_file(kRoot / "noatt" / "run_manifest.json"));
  CHECK(m["flags"]["ablation"] == "attention-off");
  CHECK(sha256_file(kRoot / "full" / "weights.bin") != sha256_file(kRoot / "noatt" / "weights.bin"));
  CHECK(read_text_file(kRoot / "full" / "history.csv") != read_text_file(kRoot / "noatt" / "history.csv"));

  // evaluate reproduces the test metrics written by train
  REQUIRE(run("evaluate --data " + path("data") + " --weights " + path("full/weights.bin") + " --out " + path("ev1")) == 0);
  REQUIRE(run("evaluate --data " + path("data") + " --weights " + path("full/weights.bin") + " --out " + path("ev2")) == 0);
  CHECK(read_text_file(kRoot / "ev1" / "metrics.json") == read_text_file(kRoot / "ev2" / "metrics.json"));
  CHECK(read_text_file(kRoot / "ev1" / "metrics.json") == read_text_file(kRoot / "full" / "metrics.json"));

  REQUIRE(run("predict --data " + path("data") + " --weights " + path("full/weights.bin") + " --out " + path("pr")) == 0);
  const auto preds = nowcast::CsvTable::read(kRoot / "pr" / "predictions.csv");
  CHECK(preds.header() ==
        std::vector<std::string>{"node_id", "timestep", "prob_no", "prob_moderate", "prob_severe", "pred_class"});
  CHECK(preds.rows() > 0);

  // weights for 8 nodes against a 10-node dataset
  write("scenario10.json", R"({"n_nodes": 10, "n_timesteps": 96, "n_gauges": 3})");
  REQUIRE(run("generate --config " + path("scenario10.json") + " --out " + path("scen10")) == 0);
  REQUIRE(run("prepare --scenario " + path("scen10") + " --out " + path("data10")) == 0);
  CHECK(run("evaluate --data " + path("data10") + " --weights " + path("full/weights.bin") + " --out " + path("ev3")) == 2);
}

TEST_CASE_FIXTURE(Fixture, "training with the same seed is bitwise reproducible") {
  REQUIRE(run("train --data " + path("data") + " --config " + path("train.json") + " --seed 11 --out " + path("s1")) == 0);
  REQUIRE(run("train --data " + path("data") + " --config " + path("train.json") + " --seed 11 --out " + path("s2")) == 0);
  CHECK(sha256_file(kRoot / "s1" / "weights.bin") == sha256_file(kRoot / "s2" / "weights.bin"));
  CHECK(read_text_file(kRoot / "s1" / "metrics.json") == read_text_file(kRoot / "s2" / "metrics.json"));
}

TEST_CASE_FIXTURE(Fixture, "divergence exits with 4") {
  write("huge.json", R"({"epochs": 2, "learning_rate": 1e200, "optimizer": "sgd", "model": {"block_channels": [4], "window": 4}})");
  CHECK(run("train --data " + path("data") + " --config " + path("huge.json") + " --out " + path("div")) == 4);
}

TEST_CASE_FIXTURE(Fixture, "io errors exit with 3") {
  fs::create_directories(kRoot / "empty");
  CHECK(run("train --data " + path("empty") + " --out " + path("x")) == 3);
  CHECK(run("prepare --scenario " + path("empty") + " --out " + path("x")) == 3);
}

TEST_CASE_FIXTURE(Fixture, "tune writes a leaderboard") {
  REQUIRE(run("tune --data " + path("data") + " --config " + path("train.json") + " --lrs 1e-3,1e-2 --dropouts 0 --jobs 2 --out " +
              path("tune")) == 0);
  const auto lb = nowcast::CsvTable::read(kRoot / "tune" / "leaderboard.csv");
  CHECK(lb.rows() == 2);
  CHECK(fs::exists(kRoot / "tune" / "weights.bin"));
}

TEST_CASE_FIXTURE(Fixture, "gradcheck passes") {
  CHECK(run("gradcheck --seed 2 --out " + path("gc")) == 0);
  const auto report = nlohmann::json::parse(read_text_file(kRoot / "gc" / "gradcheck.json"));
  CHECK(report["passed"] == true);
}
