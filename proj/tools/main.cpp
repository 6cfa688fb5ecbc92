#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace mtseg::cli;
  CLI::App app{"Mean-teacher semi-supervised segmentation"};
  app.require_subcommand(1);

  auto add_config = [](CLI::App* cmd, ConfigArgs& c) {
    cmd->add_option("--config", c.config, "JSON configuration file");
    cmd->add_option("--preset", c.preset, "named preset (paper-semi, paper-supervised, synth-smoke, ...)");
    cmd->add_option("--set", c.overrides, "override, e.g. train.seed=3")->take_all();
  };

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_config(train_cmd, train.config);
  train_cmd->add_option("--run-dir", train.run_dir, "output directory")->capture_default_str();
  train_cmd->add_option("--resume", train.resume, "continue from a checkpoint");
  train_cmd->add_option("--runs", train.runs, "number of seeds (seed, seed+1, ...)")->capture_default_str();
  train_cmd->add_flag("--dry-run", train.dry_run, "print the resolved configuration and exit");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", eval.checkpoint, "checkpoint file")->required();
  add_config(eval_cmd, eval.config);
  eval_cmd->add_option("--model", eval.model, "student or teacher")->capture_default_str();
  eval_cmd->add_option("--split", eval.split, "test, validation or labeled")->capture_default_str();
  eval_cmd->add_option("--out", eval.out, "write the metrics CSV here");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--labeled", synth.synth.labeled)->capture_default_str();
  synth_cmd->add_option("--unlabeled", synth.synth.unlabeled)->capture_default_str();
  synth_cmd->add_option("--validation", synth.synth.validation)->capture_default_str();
  synth_cmd->add_option("--test", synth.synth.test)->capture_default_str();
  synth_cmd->add_option("--size", synth.synth.size)->capture_default_str();

  ReportArgs report;
  bool no_paper = false;
  auto* report_cmd = app.add_subcommand("report", "aggregate completed runs into a comparison table");
  report_cmd->add_option("runs", report.runs, "run directories")->required();
  report_cmd->add_option("--out-dir", report.out_dir, "write table.csv and table.txt here");
  report_cmd->add_flag("--no-paper", no_paper, "omit the published reference rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*train_cmd) return cmd_train(train, std::cout, std::cerr);
  if (*eval_cmd) return cmd_eval(eval, std::cout, std::cerr);
  if (*synth_cmd) return cmd_synth(synth, std::cout, std::cerr);
  report.include_paper = !no_paper;
  return cmd_report(report, std::cout, std::cerr);
}
