#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtseg/augment.hpp"
#include "mtseg/data.hpp"
#include "mtseg/ema.hpp"
#include "mtseg/losses.hpp"
#include "mtseg/metrics.hpp"
#include "mtseg/model.hpp"
#include "mtseg/schedules.hpp"

namespace mtseg {

enum class TrainMode { kSupervised, kSemiSupervised };

[[nodiscard]] TrainMode parse_train_mode(std::string_view name);
[[nodiscard]] std::string_view to_string(TrainMode mode);

enum class Selection { kTeacher, kStudent };

[[nodiscard]] Selection parse_selection(std::string_view name);
[[nodiscard]] std::string_view to_string(Selection s);

struct TrainConfig {
  TrainMode mode = TrainMode::kSemiSupervised;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double l2 = 0.0006;
  int epochs = 350;
  int batch_size = 8;
  // 0 means ceil(batch_size / 2) in mixed batches.
  int labeled_per_batch = 0;
  // 0 derives the epoch length from the data pools.
  int steps_per_epoch = 0;
  std::uint64_t seed = 0;
  ConsistencyKind consistency = ConsistencyKind::kBce;
  Selection select = Selection::kTeacher;
  bool per_slice_metrics = false;
  double threshold = 0.5;

  // Epoch-denominated; total_epochs and steps_per_epoch are filled in from
  // `epochs` and the resolved epoch length.
  ScheduleConfig schedule;
  AlphaSchedule alpha;
  UNetConfig model;
  AugmentConfig augment;

  void validate() const;
  [[nodiscard]] MixConfig mix() const;
};

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t step = 0;
};

// Everything that evolves during training. Batches and augmentation draws are
// derived from (seed, step), so this state alone determines the continuation.
struct TrainState {
  TrainConfig cfg;
  int steps_per_epoch = 1;
  UNet student;
  TeacherState<float> teacher;
  // Network view of `teacher`, kept in sync after every update.
  UNet teacher_model;
  AdamState adam;
  std::int64_t step = 0;

  [[nodiscard]] std::int64_t epoch() const { return step / steps_per_epoch; }
  [[nodiscard]] ScheduleConfig schedule() const;
  void sync_teacher_model();
};

// Resolves the epoch length from the pool sizes and initialises both models
// from cfg.seed.
[[nodiscard]] TrainState make_train_state(const TrainConfig& cfg, std::size_t labeled_size,
                                          std::size_t unlabeled_size);

struct StepStats {
  std::int64_t step = 0;  // value of t when the step started
  double seg_loss = 0.0;
  double cons_loss = 0.0;
  double total_loss = 0.0;
  double weight = 0.0;
  double lr = 0.0;
  double alpha = 0.0;
};

// One iteration of the mean-teacher loop on an explicit batch.
StepStats train_step(TrainState& state, const Batch& batch);

// The batch used at global step `step`.
[[nodiscard]] std::vector<BatchItem> batch_items(const TrainState& state, std::size_t labeled_size,
                                                 std::size_t unlabeled_size, std::int64_t step);

// Runs `count` steps from the current state using the deterministic batch plan.
std::vector<StepStats> run_steps(TrainState& state, const SlicePools& pools, std::int64_t count);

// ---------------------------------------------------------------------------

struct EpochLog {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double seg_loss = 0.0;
  double cons_loss = 0.0;
  double weight = 0.0;
  double lr = 0.0;
  double val_dice_student = 0.0;
  double val_dice_teacher = 0.0;
};

struct FitOptions {
  std::optional<std::filesystem::path> run_dir;
  // Resume from this state instead of a fresh initialisation.
  std::optional<TrainState> resume;
  std::function<void(const EpochLog&)> on_epoch;
  bool validate_each_epoch = true;
};

struct FitResult {
  TrainState state;
  std::vector<EpochLog> log;
  double best_val_dice = -1.0;
  std::int64_t best_epoch = -1;
  std::optional<WeightSet<float>> best_weights;
  std::optional<WeightSet<float>> best_buffers;
};

FitResult fit(const TrainConfig& cfg, const SlicePools& pools, FitOptions options = {});

// Eval-mode forward over every sample; p > threshold is foreground.
[[nodiscard]] MetricsReport evaluate(UNet& model, const std::vector<SliceSample>& samples, double threshold = 0.5,
                                     bool per_slice = false);

struct ModelReports {
  MetricsReport student;
  MetricsReport teacher;
};
[[nodiscard]] ModelReports evaluate_both(const TrainState& state, const std::vector<SliceSample>& samples);

// Predicted binary masks for a set of samples.
[[nodiscard]] std::vector<Mask> predict_masks(UNet& model, const std::vector<SliceSample>& samples,
                                              double threshold = 0.5);

struct RunOutcome {
  std::uint64_t seed = 0;
  std::optional<MetricsReport> report;
  std::string failure;
};

struct MultiRunResult {
  std::vector<RunOutcome> runs;
  TableRow row;
};

// fit + evaluate on the test pool for seeds cfg.seed + 0 .. n - 1.
[[nodiscard]] MultiRunResult multi_run(const TrainConfig& cfg, const SlicePools& pools, int n_runs,
                                       const std::string& label);

// ---------------------------------------------------------------------------
// Checkpoints: "MTSC" magic, u64 little-endian JSON length, JSON metadata, then
// the raw little-endian float32 arrays it indexes.

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
[[nodiscard]] TrainState load_checkpoint(const std::filesystem::path& path);

// Arrays of a checkpoint, by name, for inspection and evaluation without the
// training state.
struct CheckpointContents {
  std::string metadata_json;
  std::map<std::string, NamedTensor<float>> arrays;
};
[[nodiscard]] CheckpointContents read_checkpoint(const std::filesystem::path& path);

}  // namespace mtseg
