#include "mtseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "mtseg/error.hpp"

namespace mtseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Volumes and slices

Volume resample_inplane(const Volume& v, double target_x, double target_y, InterpMode mode) {
  if (!(target_x > 0.0) || !(target_y > 0.0)) throw ConfigError("resample_inplane: target spacing must be positive");
  if (!(v.spacing[0] > 0.0) || !(v.spacing[1] > 0.0)) throw ConfigError("resample_inplane: volume spacing must be positive");
  if (v.spacing[0] == target_x && v.spacing[1] == target_y) return v;

  Volume out;
  out.subject_id = v.subject_id;
  out.center_id = v.center_id;
  out.nx = std::max(1, static_cast<int>(std::lround(v.nx * v.spacing[0] / target_x)));
  out.ny = std::max(1, static_cast<int>(std::lround(v.ny * v.spacing[1] / target_y)));
  out.nz = v.nz;
  out.spacing = {target_x, target_y, v.spacing[2]};
  out.voxels.resize(static_cast<std::size_t>(out.nx) * out.ny * out.nz);

  const double rx = target_x / v.spacing[0];
  const double ry = target_y / v.spacing[1];
  for (int z = 0; z < out.nz; ++z) {
    for (int y = 0; y < out.ny; ++y) {
      const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, v.ny - 1.0);
      for (int x = 0; x < out.nx; ++x) {
        const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, v.nx - 1.0);
        float value;
        if (mode == InterpMode::kNearest) {
          value = v.at(static_cast<int>(std::lround(sx)), static_cast<int>(std::lround(sy)), z);
        } else {
          const int x0 = static_cast<int>(std::floor(sx));
          const int y0 = static_cast<int>(std::floor(sy));
          const int x1 = std::min(x0 + 1, v.nx - 1);
          const int y1 = std::min(y0 + 1, v.ny - 1);
          const double ax = sx - x0;
          const double ay = sy - y0;
          const double top = (1 - ax) * v.at(x0, y0, z) + ax * v.at(x1, y0, z);
          const double bottom = (1 - ax) * v.at(x0, y1, z) + ax * v.at(x1, y1, z);
          value = static_cast<float>((1 - ay) * top + ay * bottom);
        }
        out.at(x, y, z) = value;
      }
    }
  }
  return out;
}

void standardize(Image& image) {
  if (image.values.empty()) return;
  double sum = 0.0;
  for (float v : image.values) sum += v;
  const double mean = sum / static_cast<double>(image.values.size());
  double ss = 0.0;
  for (float v : image.values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(image.values.size()));
  if (!(sd > 1e-12)) {
    std::clog << "warning: constant slice standardised to zeros\n";
    std::fill(image.values.begin(), image.values.end(), 0.0f);
    return;
  }
  for (auto& v : image.values) v = static_cast<float>((v - mean) / sd);
}

Image axial_slice(const Volume& v, int z) {
  Image img(v.ny, v.nx);
  for (int y = 0; y < v.ny; ++y)
    for (int x = 0; x < v.nx; ++x) img.at(y, x) = v.at(x, y, z);
  return img;
}

std::vector<SliceSample> extract_slices(const Volume& image, const Volume* mask) {
  if (mask != nullptr && (mask->nx != image.nx || mask->ny != image.ny || mask->nz != image.nz)) {
    throw ContractViolation("extract_slices: mask grid differs from image grid for " + image.subject_id);
  }
  std::vector<SliceSample> out;
  out.reserve(image.nz);
  for (int z = 0; z < image.nz; ++z) {
    SliceSample s;
    s.image = axial_slice(image, z);
    standardize(s.image);
    s.subject_id = image.subject_id;
    if (mask != nullptr) {
      const Image m = axial_slice(*mask, z);
      Mask bin(m.height, m.width);
      for (std::size_t i = 0; i < m.values.size(); ++i) bin.values[i] = m.values[i] > 0.5f ? 1 : 0;
      s.mask = std::move(bin);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

template <class T>
Grid2D<T> pad_grid(const Grid2D<T>& g, int multiple) {
  const int h = (g.height + multiple - 1) / multiple * multiple;
  const int w = (g.width + multiple - 1) / multiple * multiple;
  if (h == g.height && w == g.width) return g;
  Grid2D<T> out(h, w);
  const int top = (h - g.height) / 2;
  const int left = (w - g.width) / 2;
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) out.at(r + top, c + left) = g.at(r, c);
  return out;
}

}  // namespace

Image pad_to_multiple(const Image& img, int multiple) { return pad_grid(img, multiple); }
Mask pad_to_multiple(const Mask& m, int multiple) { return pad_grid(m, multiple); }

// ---------------------------------------------------------------------------
// Split

DatasetSplit make_split(std::vector<std::string> subjects, std::uint64_t seed, const SplitSizes& sizes) {
  if (sizes.train_labeled <= 0 || sizes.validation < 0 || sizes.unlabeled < 0 || sizes.test < 0)
    throw ConfigError("make_split: partition sizes must be non-negative with at least one labeled subject");
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (static_cast<int>(subjects.size()) < sizes.total()) {
    throw ConfigError("make_split: need " + std::to_string(sizes.total()) + " subjects, found " +
                      std::to_string(subjects.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  DatasetSplit split;
  auto it = subjects.begin();
  auto take = [&](std::vector<std::string>& dst, int n) {
    dst.assign(it, it + n);
    std::sort(dst.begin(), dst.end());
    it += n;
  };
  take(split.train_labeled, sizes.train_labeled);
  take(split.validation, sizes.validation);
  take(split.unlabeled, sizes.unlabeled);
  take(split.test, sizes.test);
  return split;
}

bool split_is_disjoint(const DatasetSplit& split) {
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const auto* part : {&split.train_labeled, &split.validation, &split.unlabeled, &split.test}) {
    seen.insert(part->begin(), part->end());
    total += part->size();
  }
  return seen.size() == total;
}

std::vector<SubjectFiles> scan_subjects(const fs::path& root) {
  if (!fs::is_directory(root)) throw IngestionError(root.string() + ": data root is not a directory");
  auto find = [](const fs::path& dir, const std::string& stem) -> fs::path {
    for (const char* ext : {".nii.gz", ".nii"}) {
      fs::path p = dir / (stem + ext);
      if (fs::exists(p)) return p;
    }
    return {};
  };
  std::vector<SubjectFiles> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    SubjectFiles s;
    s.subject_id = entry.path().filename().string();
    const auto dash = s.subject_id.find('-');
    s.center_id = dash == std::string::npos ? "unknown" : s.subject_id.substr(0, dash);
    s.image = find(entry.path(), "image");
    s.mask = find(entry.path(), "mask");
    if (s.image.empty()) continue;
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
  return out;
}

SlicePools load_mri_pools(const MriDataConfig& cfg) {
  const auto subjects = scan_subjects(cfg.root);
  std::vector<std::string> ids;
  for (const auto& s : subjects) ids.push_back(s.subject_id);
  const DatasetSplit split = make_split(ids, cfg.split_seed, cfg.sizes);

  auto load = [&](const std::string& id, bool keep_mask) {
    const auto& files = *std::find_if(subjects.begin(), subjects.end(), [&](const auto& s) { return s.subject_id == id; });
    Volume img = load_volume(files.image);
    img.subject_id = files.subject_id;
    img.center_id = files.center_id;
    img = resample_inplane(img, cfg.target_spacing_mm, cfg.target_spacing_mm, InterpMode::kContinuous);
    std::vector<SliceSample> slices;
    if (keep_mask) {
      if (files.mask.empty()) throw IngestionError(files.image.parent_path().string() + ": missing mask file");
      Volume mask = load_volume(files.mask);
      mask = resample_inplane(mask, cfg.target_spacing_mm, cfg.target_spacing_mm, InterpMode::kNearest);
      slices = extract_slices(img, &mask);
    } else {
      slices = extract_slices(img);
    }
    for (auto& s : slices) {
      s.image = pad_to_multiple(s.image, 8);
      if (s.mask) s.mask = pad_to_multiple(*s.mask, 8);
    }
    return slices;
  };
  auto fill = [&](std::vector<SliceSample>& dst, const std::vector<std::string>& part, bool keep_mask) {
    for (const auto& id : part) {
      auto slices = load(id, keep_mask);
      std::move(slices.begin(), slices.end(), std::back_inserter(dst));
    }
  };

  SlicePools pools;
  fill(pools.labeled, split.train_labeled, true);
  fill(pools.validation, split.validation, true);
  fill(pools.unlabeled, split.unlabeled, false);
  fill(pools.test, split.test, true);
  return pools;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthConfig::validate() const {
  if (labeled <= 0) throw ConfigError("synth: need at least one labeled sample");
  if (unlabeled < 0 || validation < 0 || test < 0) throw ConfigError("synth: counts must be non-negative");
  if (size < 16 || size % 8 != 0) throw ConfigError("synth: size must be a multiple of 8 and at least 16");
}

SliceSample synth_sample(const SynthConfig& cfg, std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x53594eu};
  std::mt19937_64 rng(seq);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const int n = cfg.size;
  const double s = n / 64.0;
  const double cx = (n - 1) * 0.5 + uni(-6, 6) * s;
  const double cy = (n - 1) * 0.5 + uni(-6, 6) * s;
  const double semi_a = uni(14, 19) * s;
  const double semi_b = uni(10, 14) * s;
  const double pose = uni(-35, 35) * std::numbers::pi / 180.0;
  const double background = uni(0.1, 0.3);
  const double cord = uni(0.65, 1.0);
  const double inner = cord - uni(0.18, 0.4);
  const double lobe_scale = uni(0.85, 1.2);
  const double lobe_tilt = (20.0 + uni(-8, 8)) * std::numbers::pi / 180.0;
  const double bias_x = uni(-0.15, 0.15) / n;
  const double bias_y = uni(-0.15, 0.15) / n;
  const double noise_sd = uni(0.03, 0.08);

  const double cp = std::cos(pose), sp = std::sin(pose);
  const double ct = std::cos(lobe_tilt), st = std::sin(lobe_tilt);
  // 0 background, 1 cord, 2 inner structure
  auto classify = [&](double x, double y) {
    const double dx = x - cx, dy = y - cy;
    const double u = (cp * dx + sp * dy) / semi_a;
    const double v = (-sp * dx + cp * dy) / semi_b;
    if (u * u + v * v > 1.0) return 0;
    const double lu = 0.13 * lobe_scale, lv = 0.42 * lobe_scale, off = 0.32 * lobe_scale;
    for (int side : {-1, 1}) {
      const double du = u - side * off;
      const double a = ct * du + side * st * v;
      const double b = -side * st * du + ct * v;
      if ((a / lu) * (a / lu) + (b / lv) * (b / lv) <= 1.0) return 2;
    }
    if (std::abs(u) < off && std::abs(v) < 0.07 * lobe_scale) return 2;
    return 1;
  };
  const double level[3] = {background, cord, inner};

  SliceSample out;
  out.image = Image(n, n);
  Mask mask(n, n);
  std::normal_distribution<double> noise(0.0, noise_sd);
  constexpr int kSub = 3;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int i = 0; i < kSub; ++i)
        for (int j = 0; j < kSub; ++j) acc += level[classify(c + (j + 0.5) / kSub - 0.5, r + (i + 0.5) / kSub - 0.5)];
      const double bias = 1.0 + bias_x * (c - cx) + bias_y * (r - cy);
      out.image.at(r, c) = static_cast<float>(acc / (kSub * kSub) * bias + noise(rng));
      mask.at(r, c) = classify(c, r) == 2 ? 1 : 0;
    }
  }
  standardize(out.image);
  out.mask = std::move(mask);
  out.subject_id = "synth-" + std::to_string(index);
  return out;
}

std::vector<SliceSample> synth_generate(const SynthConfig& cfg, std::uint64_t seed, int count, std::uint64_t first) {
  std::vector<SliceSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(synth_sample(cfg, seed, first + static_cast<std::uint64_t>(i)));
  return out;
}

SlicePools synth_pools(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SlicePools pools;
  std::uint64_t next = 0;
  auto take = [&](int count) {
    auto v = synth_generate(cfg, seed, count, next);
    next += static_cast<std::uint64_t>(count);
    return v;
  };
  pools.labeled = take(cfg.labeled);
  pools.unlabeled = take(cfg.unlabeled);
  for (auto& s : pools.unlabeled) s.mask.reset();
  pools.validation = take(cfg.validation);
  pools.test = take(cfg.test);
  return pools;
}

namespace {

constexpr const char* kPoolNames[] = {"labeled", "unlabeled", "validation", "test"};

}  // namespace

void save_synth_dataset(const fs::path& dir, const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IngestionError(dir.string() + ": cannot create dataset directory");

  nlohmann::json manifest;
  manifest["generator"] = "mtseg-synth";
  manifest["generator_version"] = kSynthGeneratorVersion;
  manifest["seed"] = seed;
  manifest["size"] = cfg.size;
  manifest["counts"] = {{"labeled", cfg.labeled}, {"unlabeled", cfg.unlabeled}, {"validation", cfg.validation},
                        {"test", cfg.test}};
  nlohmann::json files = nlohmann::json::array();
  const int counts[] = {cfg.labeled, cfg.unlabeled, cfg.validation, cfg.test};
  std::uint64_t next = 0;
  const std::vector<std::size_t> shape{static_cast<std::size_t>(cfg.size), static_cast<std::size_t>(cfg.size)};
  for (int p = 0; p < 4; ++p) {
    for (int i = 0; i < counts[p]; ++i, ++next) {
      const SliceSample s = synth_sample(cfg, seed, next);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%05d", kPoolNames[p], i);
      const std::string image_file = std::string(name) + "_image.npy";
      const std::string mask_file = std::string(name) + "_mask.npy";
      write_npy(dir / image_file, shape, s.image.values);
      write_npy(dir / mask_file, shape, s.mask->values);
      files.push_back({{"pool", kPoolNames[p]}, {"image", image_file}, {"mask", mask_file}, {"subject_id", s.subject_id}});
    }
  }
  manifest["samples"] = std::move(files);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IngestionError((dir / "manifest.json").string() + ": cannot write");
  out << manifest.dump(2) << "\n";
}

SlicePools load_synth_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IngestionError(manifest_path.string() + ": cannot open manifest");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(manifest_path.string() + ": " + e.what());
  }
  SlicePools pools;
  for (const auto& entry : manifest.at("samples")) {
    const std::string pool = entry.at("pool");
    SliceSample s;
    s.subject_id = entry.value("subject_id", "");
    const NpyArray img = read_npy(dir / entry.at("image").get<std::string>());
    if (img.shape.size() != 2 || img.dtype != "<f4") throw IngestionError(dir.string() + ": bad image array");
    s.image.height = static_cast<int>(img.shape[0]);
    s.image.width = static_cast<int>(img.shape[1]);
    s.image.values = img.f32;
    if (pool != "unlabeled") {
      const NpyArray m = read_npy(dir / entry.at("mask").get<std::string>());
      if (m.shape != img.shape || m.dtype != "|u1") throw IngestionError(dir.string() + ": bad mask array");
      Mask mask;
      mask.height = s.image.height;
      mask.width = s.image.width;
      mask.values = m.u8;
      s.mask = std::move(mask);
    }
    if (pool == "labeled") pools.labeled.push_back(std::move(s));
    else if (pool == "unlabeled") pools.unlabeled.push_back(std::move(s));
    else if (pool == "validation") pools.validation.push_back(std::move(s));
    else if (pool == "test") pools.test.push_back(std::move(s));
    else throw IngestionError(manifest_path.string() + ": unknown pool '" + pool + "'");
  }
  return pools;
}

// ---------------------------------------------------------------------------
// Batching

std::size_t Batch::labeled_count() const {
  return static_cast<std::size_t>(std::count(labeled.begin(), labeled.end(), true));
}

void Batch::check() const {
  if (masks.size() != images.size() || labeled.size() != images.size())
    throw ContractViolation("batch: images, masks and flags differ in length");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labeled[i] != masks[i].has_value()) throw ContractViolation("batch: labeled flag disagrees with mask presence");
    if (!images[i].same_shape(images.front())) throw ContractViolation("batch: items differ in shape");
    if (masks[i] && (masks[i]->height != images[i].height || masks[i]->width != images[i].width))
      throw ContractViolation("batch: mask shape differs from image shape");
  }
}

int MixConfig::labeled_slots(std::size_t unlabeled_size) const {
  if (unlabeled_size == 0) return batch_size;
  return labeled_per_batch > 0 ? labeled_per_batch : (batch_size + 1) / 2;
}

int steps_per_epoch(const MixConfig& cfg, std::size_t labeled_size, std::size_t unlabeled_size) {
  if (labeled_size == 0) throw ConfigError("batching: the labeled pool is empty");
  if (cfg.batch_size <= 0) throw ConfigError("batching: batch_size must be positive");
  if (unlabeled_size > 0 && cfg.batch_size < 2) throw ConfigError("batching: mixed batches need batch_size >= 2");
  const int lslots = cfg.labeled_slots(unlabeled_size);
  if (unlabeled_size > 0 && (lslots <= 0 || lslots >= cfg.batch_size))
    throw ConfigError("batching: labeled_per_batch must leave room for unlabeled items");
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  if (unlabeled_size == 0) return static_cast<int>((labeled_size + cfg.batch_size - 1) / cfg.batch_size);
  const std::size_t uslots = static_cast<std::size_t>(cfg.batch_size - lslots);
  return static_cast<int>((unlabeled_size + uslots - 1) / uslots);
}

BatchPlan mixed_batches(const MixConfig& cfg, std::size_t labeled_size, std::size_t unlabeled_size,
                        std::uint64_t seed, std::int64_t epoch) {
  const int steps = steps_per_epoch(cfg, labeled_size, unlabeled_size);
  const int lslots = cfg.labeled_slots(unlabeled_size);
  const int uslots = unlabeled_size > 0 ? cfg.batch_size - lslots : 0;

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x42415443u};
  std::mt19937_64 rng(seq);

  std::vector<std::size_t> unl(unlabeled_size);
  std::iota(unl.begin(), unl.end(), std::size_t{0});
  std::shuffle(unl.begin(), unl.end(), rng);

  std::vector<std::size_t> lab(labeled_size);
  std::iota(lab.begin(), lab.end(), std::size_t{0});
  std::shuffle(lab.begin(), lab.end(), rng);
  std::size_t lab_pos = 0;
  auto next_labeled = [&] {
    if (lab_pos == lab.size()) {
      std::shuffle(lab.begin(), lab.end(), rng);
      lab_pos = 0;
    }
    return lab[lab_pos++];
  };

  BatchPlan plan(static_cast<std::size_t>(steps));
  std::size_t unl_pos = 0;
  for (auto& batch : plan) {
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < lslots; ++i) batch.push_back({true, next_labeled()});
    for (int i = 0; i < uslots; ++i) batch.push_back({false, unl[unl_pos++ % unl.size()]});
  }
  return plan;
}

Batch materialize(const std::vector<BatchItem>& items, const SlicePools& pools) {
  Batch b;
  for (const auto& it : items) {
    const auto& pool = it.labeled ? pools.labeled : pools.unlabeled;
    if (it.index >= pool.size()) throw ContractViolation("materialize: batch item index out of range");
    const SliceSample& s = pool[it.index];
    if (it.labeled && !s.mask) throw ContractViolation("materialize: labeled pool sample without mask");
    b.images.push_back(s.image);
    b.masks.push_back(it.labeled ? s.mask : std::nullopt);
    b.labeled.push_back(it.labeled);
  }
  b.check();
  return b;
}

}  // namespace mtseg
