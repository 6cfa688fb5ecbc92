#include "commands.hpp"

#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "mtseg/error.hpp"
#include "svg.hpp"

namespace mtseg::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IngestionError(path.string() + ": cannot write");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(path.string() + ": cannot read");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_plots(const fs::path& dir, const std::vector<EpochLog>& log) {
  Series seg{"seg loss", {}, {}}, cons{"cons loss", {}, {}}, student{"student", {}, {}}, teacher{"teacher", {}, {}};
  for (const auto& e : log) {
    const double x = static_cast<double>(e.epoch);
    seg.x.push_back(x);
    seg.y.push_back(e.seg_loss);
    cons.x.push_back(x);
    cons.y.push_back(e.cons_loss);
    student.x.push_back(x);
    student.y.push_back(e.val_dice_student);
    teacher.x.push_back(x);
    teacher.y.push_back(e.val_dice_teacher);
  }
  write_line_plot(dir / "loss.svg", "Training losses", "epoch", {seg, cons});
  write_line_plot(dir / "val_dice.svg", "Validation Dice (%)", "epoch", {student, teacher});
}

std::string report_json(const MetricsReport& r) {
  nlohmann::json j;
  const auto v = r.values();
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) j[std::string(kMetricNames[k])] = v[k];
  return j.dump();
}

// Trains one seed into `dir` and evaluates the test pool.
std::optional<MetricsReport> train_one(const RunConfig& cfg, const SlicePools& pools, const fs::path& dir,
                                       std::optional<TrainState> resume, std::ostream& out) {
  fs::create_directories(dir);
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
  FitOptions options;
  options.run_dir = dir;
  options.resume = std::move(resume);
  options.on_epoch = [&](const EpochLog& e) {
    out << fmt::format("epoch {:4d} step {:7d}  seg {:+.4f}  cons {:.4f}  w {:.3f}  lr {:.2e}  val dice S {:6.2f} T {:6.2f}\n",
                       e.epoch, e.step, e.seg_loss, e.cons_loss, e.weight, e.lr, e.val_dice_student,
                       e.val_dice_teacher)
        << std::flush;
  };
  FitResult fr = fit(cfg.train, pools, std::move(options));
  write_plots(dir, fr.log);
  if (pools.test.empty()) return std::nullopt;

  UNet selected = cfg.train.select == Selection::kTeacher ? fr.state.teacher_model : fr.state.student;
  if (fr.best_weights) {
    selected.set_weights(*fr.best_weights);
    selected.set_buffers(*fr.best_buffers);
  }
  const MetricsReport report = evaluate(selected, pools.test, cfg.train.threshold, cfg.train.per_slice_metrics);
  const ModelReports final_reports = evaluate_both(fr.state, pools.test);
  write_text(dir / "test_metrics.csv", report_csv(report));
  write_text(dir / "test_metrics.json",
             fmt::format("{{\"selected\": {}, \"selected_model\": \"{}\", \"best_epoch\": {}, \"final_student\": {}, "
                         "\"final_teacher\": {}}}\n",
                         report_json(report), to_string(cfg.train.select), fr.best_epoch,
                         report_json(final_reports.student), report_json(final_reports.teacher)));
  std::vector<TableRow> rows{{fmt::format("{} (seed {})", to_string(cfg.train.mode), cfg.train.seed),
                              aggregate({report}), {}}};
  out << format_table_text(rows);
  return report;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IngestionError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitDiverged;
  }
}

}  // namespace

RunConfig resolve_config(const ConfigArgs& args) {
  if (args.config && args.preset) throw ConfigError("give either --config or --preset, not both");
  RunConfig cfg;
  if (args.config) cfg = load_run_config(*args.config);
  else if (args.preset) cfg = preset(*args.preset);
  else throw ConfigError("a configuration is required (--config FILE or --preset NAME)");
  cfg = apply_overrides(cfg, args.overrides);
  apply_environment(cfg);
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.runs < 1) throw ConfigError("--runs must be positive");
    const RunConfig cfg = resolve_config(args.config);
    out << to_json(cfg).dump(2) << "\n";
    if (args.dry_run) return kExitOk;

    std::optional<TrainState> resume;
    if (args.resume) {
      if (args.runs != 1) throw ConfigError("--resume trains a single run");
      resume = load_checkpoint(*args.resume);
      if (config_hash(resume->cfg) != config_hash(cfg.train))
        throw ConfigError("checkpoint " + args.resume->string() + " was written with a different configuration");
    }
    const SlicePools pools = load_pools(cfg.data);
    out << fmt::format("data: {} labeled, {} unlabeled, {} validation, {} test slices\n", pools.labeled.size(),
                       pools.unlabeled.size(), pools.validation.size(), pools.test.size());

    if (args.runs == 1) {
      try {
        train_one(cfg, pools, args.run_dir, std::move(resume), out);
      } catch (const DivergenceError& e) {
        write_text(args.run_dir / "divergence.txt", std::string(e.what()) + "\n");
        throw;
      }
      return kExitOk;
    }

    std::vector<MetricsReport> reports;
    TableRow row{std::string(to_string(cfg.train.mode)), {}, {}};
    for (int r = 0; r < args.runs; ++r) {
      RunConfig run = cfg;
      run.train.seed = cfg.train.seed + static_cast<std::uint64_t>(r);
      const fs::path dir = args.run_dir / fmt::format("seed-{}", run.train.seed);
      out << fmt::format("== run {}/{} (seed {})\n", r + 1, args.runs, run.train.seed);
      try {
        if (auto rep = train_one(run, pools, dir, std::nullopt, out)) reports.push_back(*rep);
      } catch (const DivergenceError& e) {
        write_text(dir / "divergence.txt", std::string(e.what()) + "\n");
        row.notes.push_back(fmt::format("seed {} failed: {}", run.train.seed, e.what()));
      }
    }
    if (!reports.empty()) row.result = aggregate(reports);
    write_text(args.run_dir / "summary.csv", format_table_csv({row}));
    write_text(args.run_dir / "summary.txt", format_table_text({row}));
    out << format_table_text({row});
    return reports.size() == static_cast<std::size_t>(args.runs) ? kExitOk : kExitDiverged;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!fs::exists(args.checkpoint)) throw ConfigError("checkpoint not found: " + args.checkpoint.string());
    const Selection which = parse_selection(args.model);
    ConfigArgs cargs = args.config;
    if (!cargs.config && !cargs.preset) {
      const fs::path snapshot = args.checkpoint.parent_path() / "config.json";
      if (!fs::exists(snapshot)) throw ConfigError("no configuration given and no config.json next to the checkpoint");
      cargs.config = snapshot;
    }
    const RunConfig cfg = resolve_config(cargs);
    const TrainState state = load_checkpoint(args.checkpoint);
    const SlicePools pools = load_pools(cfg.data);
    const std::vector<SliceSample>* samples = nullptr;
    if (args.split == "test") samples = &pools.test;
    else if (args.split == "validation") samples = &pools.validation;
    else if (args.split == "labeled") samples = &pools.labeled;
    else throw ConfigError("unknown split '" + args.split + "' (expected test, validation or labeled)");

    UNet model = which == Selection::kTeacher ? state.teacher_model : state.student;
    const MetricsReport report = evaluate(model, *samples, state.cfg.threshold, state.cfg.per_slice_metrics);
    const std::string label = fmt::format("{} @ step {}", to_string(which), state.step);
    out << format_table_text({{label, aggregate({report}), {}}});
    if (args.out) write_text(*args.out, report_csv(report));
    return kExitOk;
  });
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    save_synth_dataset(args.out, args.synth, args.seed);
    out << fmt::format("wrote {} samples to {}\n",
                       args.synth.labeled + args.synth.unlabeled + args.synth.validation + args.synth.test,
                       args.out.string());
    return kExitOk;
  });
}

int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.runs.empty()) throw ConfigError("report: no run directories given");
    std::map<TrainMode, std::vector<MetricsReport>> by_mode;
    for (const auto& dir : args.runs) {
      const fs::path metrics = dir / "test_metrics.csv";
      const fs::path config = dir / "config.json";
      if (!fs::exists(metrics) || !fs::exists(config))
        throw ConfigError(dir.string() + ": not a completed run (test_metrics.csv and config.json required)");
      const auto report = parse_report_csv(read_text(metrics));
      if (!report) throw ConfigError(metrics.string() + ": metric set does not match " + std::string(kMetricNames[0]) + ".." +
                                     std::string(kMetricNames[5]));
      const RunConfig cfg = load_run_config(config);
      by_mode[cfg.train.mode].push_back(*report);
    }
    std::vector<TableRow> rows;
    if (args.include_paper) rows = paper_reference_rows();
    if (by_mode.count(TrainMode::kSupervised))
      rows.push_back({"Supervised (this run)", aggregate(by_mode[TrainMode::kSupervised]), {}});
    if (by_mode.count(TrainMode::kSemiSupervised))
      rows.push_back({"Semi-supervised (this run)", aggregate(by_mode[TrainMode::kSemiSupervised]), {}});
    const std::string text = format_table_text(rows);
    out << text;
    if (args.out_dir) {
      fs::create_directories(*args.out_dir);
      write_text(*args.out_dir / "table.csv", format_table_csv(rows));
      write_text(*args.out_dir / "table.txt", text);
    }
    return kExitOk;
  });
}

}  // namespace mtseg::cli
