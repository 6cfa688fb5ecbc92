#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"

using namespace mtseg;
using namespace mtseg::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mtseg_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A seconds-scale semi-supervised run on a small synthetic set.
ConfigArgs small_run(std::vector<std::string> extra = {}) {
  ConfigArgs c;
  c.preset = "synth-smoke";
  c.overrides = {"model.base_channels=4", "data.synth_size=32", "data.synth_unlabeled=8", "data.synth_validation=4",
                 "data.synth_test=4", "train.epochs=2", "train.batch_size=4", "train.steps_per_epoch=2"};
  c.overrides.insert(c.overrides.end(), extra.begin(), extra.end());
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("train --dry-run echoes the resolved paper configuration") {
  TrainArgs args;
  args.config.preset = "paper-semi";
  args.dry_run = true;
  args.run_dir = scratch("dry") / "run";
  std::ostringstream out, err;
  CHECK(cmd_train(args, out, err) == kExitOk);
  const auto j = nlohmann::json::parse(out.str());
  CHECK(j["train"]["l2"] == 0.0006);
  CHECK(j["train"]["epochs"] == 350);
  CHECK(j["schedule"]["alpha_early"] == 0.99);
  CHECK(j["schedule"]["alpha_late"] == 0.999);
  CHECK(j["schedule"]["consistency_max"] == 2.9);
  CHECK_FALSE(fs::exists(args.run_dir));

  args.config.preset = "paper-supervised";
  std::ostringstream out2;
  CHECK(cmd_train(args, out2, err) == kExitOk);
  const auto k = nlohmann::json::parse(out2.str());
  CHECK(k["train"]["l2"] == 0.0008);
  CHECK(k["train"]["epochs"] == 1600);
}

TEST_CASE("configuration problems exit with code 2") {
  std::ostringstream out, err;
  TrainArgs unknown;
  unknown.config.preset = "no-such-preset";
  CHECK(cmd_train(unknown, out, err) == kExitConfig);
  CHECK(err.str().find("no-such-preset") != std::string::npos);

  TrainArgs both;
  both.config.preset = "synth-smoke";
  both.config.config = "x.json";
  CHECK(cmd_train(both, out, err) == kExitConfig);

  TrainArgs bad_key;
  bad_key.config = small_run({"train.speed=3"});
  bad_key.dry_run = true;
  CHECK(cmd_train(bad_key, out, err) == kExitConfig);

  TrainArgs no_data;
  no_data.config.preset = "paper-semi";
  no_data.config.overrides = {"data.root=/nonexistent/scgm"};
  no_data.run_dir = scratch("nodata");
  CHECK(cmd_train(no_data, out, err) == kExitConfig);

  EvalArgs eval;
  eval.checkpoint = "/nonexistent/best.ckpt";
  CHECK(cmd_eval(eval, out, err) == kExitConfig);

  ReportArgs empty;
  CHECK(cmd_report(empty, out, err) == kExitConfig);
  ReportArgs missing;
  missing.runs = {scratch("not-a-run")};
  CHECK(cmd_report(missing, out, err) == kExitConfig);
}

TEST_CASE("train, eval and report on a small synthetic run") {
  const fs::path root = scratch("pipeline");
  std::ostringstream out, err;
  TrainArgs semi;
  semi.config = small_run();
  semi.run_dir = root / "semi";
  REQUIRE(cmd_train(semi, out, err) == kExitOk);
  for (const char* f : {"config.json", "log.csv", "best.ckpt", "final.ckpt", "loss.svg", "val_dice.svg",
                        "test_metrics.csv", "test_metrics.json"})
    CHECK(fs::exists(semi.run_dir / f));
  const auto metrics = nlohmann::json::parse(slurp(semi.run_dir / "test_metrics.json"));
  CHECK(metrics.contains("final_student"));
  CHECK(metrics.contains("final_teacher"));
  CHECK(metrics["selected_model"] == "teacher");

  EvalArgs eval;
  eval.checkpoint = semi.run_dir / "final.ckpt";
  eval.model = "student";
  eval.out = root / "eval.csv";
  CHECK(cmd_eval(eval, out, err) == kExitOk);
  CHECK(fs::exists(root / "eval.csv"));
  eval.split = "training";
  CHECK(cmd_eval(eval, out, err) == kExitConfig);

  TrainArgs sup;
  sup.config = small_run({"train.mode=supervised"});
  sup.run_dir = root / "sup";
  REQUIRE(cmd_train(sup, out, err) == kExitOk);

  ReportArgs report;
  report.runs = {semi.run_dir, sup.run_dir};
  report.out_dir = root / "report";
  std::ostringstream table;
  CHECK(cmd_report(report, table, err) == kExitOk);
  const std::string csv = slurp(root / "report" / "table.csv");
  CHECK(csv.rfind("method,runs,Dice_mean,Dice_std", 0) == 0);
  CHECK(csv.find("67.915") != std::string::npos);
  CHECK(csv.find("70.209") != std::string::npos);
  CHECK(csv.find("Supervised (this run)") != std::string::npos);
  CHECK(csv.find("Semi-supervised (this run)") != std::string::npos);
  CHECK(table.str().find("Dice") != std::string::npos);
}

TEST_CASE("synth writes a dataset that training can read back") {
  const fs::path root = scratch("synth");
  std::ostringstream out, err;
  SynthArgs s;
  s.out = root / "data";
  s.seed = 4;
  s.synth = {4, 8, 4, 4, 32};
  REQUIRE(cmd_synth(s, out, err) == kExitOk);
  TrainArgs t;
  t.config = small_run({"data.source=synthetic-dir", "data.root=" + s.out.string()});
  t.run_dir = root / "run";
  CHECK(cmd_train(t, out, err) == kExitOk);
}

TEST_CASE("divergence exits with code 3 and leaves a diagnostic") {
  const fs::path root = scratch("diverge");
  std::ostringstream out, err;
  TrainArgs t;
  t.config = small_run({"schedule.lr_max=1e30"});
  t.run_dir = root / "run";
  CHECK(cmd_train(t, out, err) == kExitDiverged);
  CHECK(fs::exists(t.run_dir / "divergence.txt"));
  CHECK(slurp(t.run_dir / "divergence.txt").find("step") != std::string::npos);
}
