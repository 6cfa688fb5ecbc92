#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mtseg/config.hpp"
#include "mtseg/error.hpp"

using namespace mtseg;
using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  json j;
  in >> j;
  return j;
}

std::string error_of(const json& doc) {
  try {
    (void)run_config_from_json(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("paper presets match the golden configuration files") {
  const std::filesystem::path golden = MTSEG_GOLDEN_DIR;
  for (const std::string name : {"paper-semi", "paper-supervised"}) {
    CAPTURE(name);
    CHECK(to_json(preset(name)) == read_json(golden / (name + ".json")));
  }
}

TEST_CASE("paper presets carry the published hyperparameters") {
  const RunConfig semi = preset("paper-semi");
  const RunConfig sup = preset("paper-supervised");
  CHECK(semi.train.mode == TrainMode::kSemiSupervised);
  CHECK(sup.train.mode == TrainMode::kSupervised);
  CHECK(semi.train.l2 == 0.0006);
  CHECK(sup.train.l2 == 0.0008);
  CHECK(semi.train.epochs == 350);
  CHECK(sup.train.epochs == 1600);
  for (const RunConfig* c : {&semi, &sup}) {
    CHECK(c->train.adam_beta1 == 0.9);
    CHECK(c->train.adam_beta2 == 0.999);
    CHECK(c->train.batch_size == 8);
    CHECK(c->train.model.dropout_rate == 0.5);
    CHECK(c->train.model.bn_momentum == 0.9);
    CHECK(c->train.schedule.lr_max == 0.0006);
    CHECK(c->train.schedule.lr_rampup_epochs == 50);
    CHECK(c->train.schedule.consistency_max == 2.9);
    CHECK(c->train.schedule.consistency_rampup_epochs == 100);
    CHECK(c->train.alpha.early == 0.99);
    CHECK(c->train.alpha.late == 0.999);
    CHECK(c->train.alpha.switch_epoch == 50);
    CHECK(c->train.augment.rotation_bound_deg == 4.5);
    CHECK(c->train.augment.noise_std == 0.1);
  }
}

TEST_CASE("every preset validates and round-trips through JSON") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const RunConfig c = preset(name);
    CHECK_NOTHROW(c.validate());
    const RunConfig back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
  }
  CHECK_THROWS_AS((void)preset("paper"), ConfigError);
}

TEST_CASE("config errors are aggregated") {
  json doc = to_json(preset("synth-smoke"));
  doc["train"].erase("l2");
  doc["model"].erase("dropout_rate");
  doc["train"]["learning_rate"] = 0.1;
  doc["extra"] = json::object();
  const std::string msg = error_of(doc);
  CHECK(msg.find("train.l2") != std::string::npos);
  CHECK(msg.find("model.dropout_rate") != std::string::npos);
  CHECK(msg.find("train.learning_rate") != std::string::npos);
  CHECK(msg.find("extra") != std::string::npos);

  json bad_type = {{"preset", "synth-smoke"}, {"train", {{"epochs", "many"}}}};
  CHECK(error_of(bad_type).find("train.epochs") != std::string::npos);
  json bad_value = {{"preset", "synth-smoke"}, {"train", {{"consistency", "kl"}}}};
  CHECK_FALSE(error_of(bad_value).empty());
  json bad_range = {{"preset", "synth-smoke"}, {"schedule", {{"lr_rampup_epochs", 10}}}};
  CHECK_FALSE(error_of(bad_range).empty());
}

TEST_CASE("a preset key supplies defaults for a partial document") {
  const json doc = {{"preset", "paper-semi"}, {"train", {{"seed", 7}}}, {"model", {{"base_channels", 8}}}};
  const RunConfig c = run_config_from_json(doc);
  CHECK(c.train.seed == 7);
  CHECK(c.train.model.base_channels == 8);
  CHECK(c.train.epochs == 350);
  CHECK(config_hash(c) != config_hash(preset("paper-semi")));
}

TEST_CASE("overrides and environment") {
  const RunConfig base = preset("synth-smoke");
  const RunConfig c = apply_overrides(base, {"train.epochs=9", "schedule.lr_max=0.001", "train.mode=supervised",
                                             "data.source=synthetic-dir", "data.root=/tmp/x"});
  CHECK(c.train.epochs == 9);
  CHECK(c.train.schedule.lr_max == 0.001);
  CHECK(c.train.mode == TrainMode::kSupervised);
  CHECK(c.data.source == DataSource::kSyntheticDir);
  CHECK(c.data.root == "/tmp/x");
  CHECK_THROWS_AS((void)apply_overrides(base, {"train.nope=1"}), ConfigError);
  CHECK_THROWS_AS((void)apply_overrides(base, {"epochs"}), ConfigError);

  RunConfig env = preset("paper-semi");
  ::setenv("MTSEG_DATA_ROOT", "/data/elsewhere", 1);
  apply_environment(env);
  ::unsetenv("MTSEG_DATA_ROOT");
  CHECK(env.data.root == "/data/elsewhere");
  RunConfig untouched = preset("paper-semi");
  apply_environment(untouched);
  CHECK(untouched.data.root == "data/scgm");
}

TEST_CASE("config files on disk") {
  const auto dir = std::filesystem::temp_directory_path() / "mtseg_test_config";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "ok.json") << R"({"preset": "synth-smoke", "train": {"epochs": 3}})";
    std::ofstream(dir / "broken.json") << "{ not json";
  }
  CHECK(load_run_config(dir / "ok.json").train.epochs == 3);
  CHECK_THROWS_AS((void)load_run_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS((void)load_run_config(dir / "absent.json"), ConfigError);
}
