#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtseg/augment.hpp"
#include "mtseg/grid.hpp"
#include "mtseg/io.hpp"

namespace mtseg {

// One 2D axial slice. A slice is labeled exactly when it carries a mask.
struct SliceSample {
  Image image;
  std::optional<Mask> mask;
  std::string subject_id;

  [[nodiscard]] bool labeled() const { return mask.has_value(); }
};

// ---------------------------------------------------------------------------
// Volumes and slices

// Resamples x/y to the target spacing; z is untouched. Continuous mode is
// bilinear (edge-clamped), nearest mode preserves the value set.
[[nodiscard]] Volume resample_inplane(const Volume& v, double target_x, double target_y, InterpMode mode);

// Per-slice zero-mean / unit-variance standardisation. Constant slices become
// all zeros (a warning is logged).
void standardize(Image& image);

[[nodiscard]] Image axial_slice(const Volume& v, int z);

// One sample per axial plane. When `mask` is given it must match the image
// grid; its slices are binarised (> 0.5).
[[nodiscard]] std::vector<SliceSample> extract_slices(const Volume& image, const Volume* mask = nullptr);

// Makes the grid divisible by `multiple` by symmetric zero padding.
[[nodiscard]] Image pad_to_multiple(const Image& img, int multiple);
[[nodiscard]] Mask pad_to_multiple(const Mask& m, int multiple);

// ---------------------------------------------------------------------------
// Subject-level split

struct SplitSizes {
  int train_labeled = 8;
  int validation = 8;
  int unlabeled = 40;
  int test = 12;

  [[nodiscard]] int total() const { return train_labeled + validation + unlabeled + test; }
};

struct DatasetSplit {
  std::vector<std::string> train_labeled;
  std::vector<std::string> validation;
  std::vector<std::string> unlabeled;
  std::vector<std::string> test;
};

// Deterministic shuffle-and-cut of the subject list. Throws ConfigError when
// there are fewer subjects than the sizes require.
[[nodiscard]] DatasetSplit make_split(std::vector<std::string> subjects, std::uint64_t seed,
                                      const SplitSizes& sizes = {});

// True when no subject appears in two partitions.
[[nodiscard]] bool split_is_disjoint(const DatasetSplit& split);

// Subject directories under `root`: <root>/<subject_id>/image.nii[.gz] and mask.nii[.gz].
struct SubjectFiles {
  std::string subject_id;
  std::string center_id;
  std::filesystem::path image;
  std::filesystem::path mask;
};
[[nodiscard]] std::vector<SubjectFiles> scan_subjects(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Slice pools feeding training and evaluation

struct SlicePools {
  std::vector<SliceSample> labeled;
  std::vector<SliceSample> unlabeled;  // never carry masks
  std::vector<SliceSample> validation;
  std::vector<SliceSample> test;
};

struct MriDataConfig {
  std::filesystem::path root;
  double target_spacing_mm = 0.25;
  std::uint64_t split_seed = 0;
  SplitSizes sizes;
};

// Loads, resamples and slices every subject of the split. Images are zero
// padded to a multiple of 8 so they fit the U-Net.
[[nodiscard]] SlicePools load_mri_pools(const MriDataConfig& cfg);

// ---------------------------------------------------------------------------
// Synthetic data: a bright elliptical cord with a darker two-lobed inner
// structure (the foreground) under random pose, contrast and noise.

inline constexpr int kSynthGeneratorVersion = 1;

struct SynthConfig {
  int labeled = 8;
  int unlabeled = 200;
  int validation = 16;
  int test = 50;
  int size = 64;

  void validate() const;
};

[[nodiscard]] SliceSample synth_sample(const SynthConfig& cfg, std::uint64_t seed, std::uint64_t index);
// `count` labeled samples with indices [first, first + count).
[[nodiscard]] std::vector<SliceSample> synth_generate(const SynthConfig& cfg, std::uint64_t seed, int count,
                                                      std::uint64_t first = 0);
// Pools sized per cfg; unlabeled samples have their masks dropped.
[[nodiscard]] SlicePools synth_pools(const SynthConfig& cfg, std::uint64_t seed);

// Directory of image_*.npy / mask_*.npy plus manifest.json.
void save_synth_dataset(const std::filesystem::path& dir, const SynthConfig& cfg, std::uint64_t seed);
[[nodiscard]] SlicePools load_synth_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  std::vector<Image> images;
  std::vector<std::optional<Mask>> masks;
  std::vector<bool> labeled;

  [[nodiscard]] std::size_t size() const { return images.size(); }
  [[nodiscard]] std::size_t labeled_count() const;
  // Throws ContractViolation when flags and mask presence disagree or shapes differ.
  void check() const;
};

struct BatchItem {
  bool labeled = true;
  std::size_t index = 0;

  friend bool operator==(const BatchItem&, const BatchItem&) = default;
};
using BatchPlan = std::vector<std::vector<BatchItem>>;

struct MixConfig {
  int batch_size = 8;
  // Labeled items per mixed batch; 0 means ceil(batch_size / 2).
  int labeled_per_batch = 0;
  // Steps per epoch; 0 derives it from the pools (one pass over the unlabeled
  // pool, or over the labeled pool in labeled-only mode).
  int steps_per_epoch = 0;

  [[nodiscard]] int labeled_slots(std::size_t unlabeled_size) const;
};

[[nodiscard]] int steps_per_epoch(const MixConfig& cfg, std::size_t labeled_size, std::size_t unlabeled_size);

// Batch composition for one epoch, a pure function of (seed, epoch). Both pools
// are reshuffled per epoch; the labeled pool is cycled when it runs out.
[[nodiscard]] BatchPlan mixed_batches(const MixConfig& cfg, std::size_t labeled_size, std::size_t unlabeled_size,
                                      std::uint64_t seed, std::int64_t epoch);

[[nodiscard]] Batch materialize(const std::vector<BatchItem>& items, const SlicePools& pools);

}  // namespace mtseg
