#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtseg/config.hpp"

namespace mtseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;

struct ConfigArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> preset;
  std::vector<std::string> overrides;
};

// --config file or --preset name, then overrides, then the environment.
[[nodiscard]] RunConfig resolve_config(const ConfigArgs& args);

struct TrainArgs {
  ConfigArgs config;
  std::filesystem::path run_dir = "runs/latest";
  std::optional<std::filesystem::path> resume;
  int runs = 1;
  bool dry_run = false;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  ConfigArgs config;
  std::string model = "teacher";
  std::string split = "test";
  std::optional<std::filesystem::path> out;
};

struct SynthArgs {
  std::filesystem::path out;
  std::uint64_t seed = 0;
  SynthConfig synth;
};

struct ReportArgs {
  std::vector<std::filesystem::path> runs;
  std::optional<std::filesystem::path> out_dir;
  bool include_paper = true;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);
int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err);

}  // namespace mtseg::cli
