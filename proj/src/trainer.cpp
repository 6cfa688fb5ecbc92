#include "mtseg/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mtseg/config.hpp"
#include "mtseg/error.hpp"

namespace mtseg {

namespace fs = std::filesystem;

TrainMode parse_train_mode(std::string_view name) {
  if (name == "supervised") return TrainMode::kSupervised;
  if (name == "semi-supervised" || name == "semi") return TrainMode::kSemiSupervised;
  throw ConfigError("unknown training mode '" + std::string(name) + "' (expected supervised or semi-supervised)");
}

std::string_view to_string(TrainMode mode) {
  return mode == TrainMode::kSupervised ? "supervised" : "semi-supervised";
}

Selection parse_selection(std::string_view name) {
  if (name == "teacher") return Selection::kTeacher;
  if (name == "student") return Selection::kStudent;
  throw ConfigError("unknown model selection '" + std::string(name) + "' (expected teacher or student)");
}

std::string_view to_string(Selection s) { return s == Selection::kTeacher ? "teacher" : "student"; }

void TrainConfig::validate() const {
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
  if (!(l2 >= 0.0)) throw ConfigError("train: l2 must be non-negative");
  if (epochs <= 0) throw ConfigError("train: epochs must be positive");
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (labeled_per_batch < 0) throw ConfigError("train: labeled_per_batch must be non-negative");
  if (mode == TrainMode::kSemiSupervised && labeled_per_batch >= batch_size)
    throw ConfigError("train: labeled_per_batch must leave room for unlabeled items");
  if (steps_per_epoch < 0) throw ConfigError("train: steps_per_epoch must be non-negative");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("train: threshold must lie in (0, 1)");
  ScheduleConfig s = schedule;
  s.total_epochs = epochs;
  s.steps_per_epoch = 1;
  s.validate();
  if (!(alpha.early >= 0.0 && alpha.early <= 1.0) || !(alpha.late >= 0.0 && alpha.late <= 1.0))
    throw ConfigError("schedule: alpha values must lie in [0, 1]");
  if (alpha.switch_epoch < 0) throw ConfigError("schedule: alpha_switch_epoch must be non-negative");
  model.validate();
  augment.validate();
}

MixConfig TrainConfig::mix() const { return {batch_size, labeled_per_batch, steps_per_epoch}; }

ScheduleConfig TrainState::schedule() const {
  ScheduleConfig s = cfg.schedule;
  s.total_epochs = cfg.epochs;
  s.steps_per_epoch = steps_per_epoch;
  return s;
}

void TrainState::sync_teacher_model() {
  teacher_model.set_weights(teacher.weights);
  teacher_model.set_buffers(teacher.buffers);
}

namespace {

enum StreamTag : std::uint32_t {
  kInitTag = 0x494e4954,
  kStudentAugTag = 0x53415547,
  kTeacherNoiseTag = 0x544e4f49,
  kStudentDropTag = 0x53445250,
  kTeacherDropTag = 0x54445250,
};

// Independent generator per (seed, step, item, purpose).
std::mt19937_64 stream(std::uint64_t seed, std::int64_t step, std::uint64_t item, StreamTag tag) {
  const auto ustep = static_cast<std::uint64_t>(step);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(ustep), static_cast<std::uint32_t>(ustep >> 32),
                    static_cast<std::uint32_t>(item), static_cast<std::uint32_t>(item >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

std::uint64_t init_seed(std::uint64_t seed) { return stream(seed, -1, 0, kInitTag)(); }

std::size_t pool_unlabeled(const TrainConfig& cfg, std::size_t unlabeled_size) {
  return cfg.mode == TrainMode::kSemiSupervised ? unlabeled_size : 0;
}

void put_plane(Tensor& t, int item, const Image& img) {
  std::memcpy(t.data.data() + static_cast<std::size_t>(item) * t.plane(), img.values.data(),
              img.values.size() * sizeof(float));
}

void adam_step(TrainState& s, double lr) {
  auto params = s.student.parameters();
  auto& adam = s.adam;
  if (adam.m.empty()) {
    for (const auto* p : params) {
      adam.m.emplace_back(p->value.size(), 0.0f);
      adam.v.emplace_back(p->value.size(), 0.0f);
    }
  }
  ++adam.step;
  const double b1 = s.cfg.adam_beta1, b2 = s.cfg.adam_beta2, eps = s.cfg.adam_eps, l2 = s.cfg.l2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k]->value;
    const auto& g = params[k]->grad;
    auto& m = adam.m[k];
    auto& v = adam.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + l2 * static_cast<double>(w[i]);
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      w[i] = static_cast<float>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

}  // namespace

TrainState make_train_state(const TrainConfig& cfg, std::size_t labeled_size, std::size_t unlabeled_size) {
  cfg.validate();
  const int spe = steps_per_epoch(cfg.mix(), labeled_size, pool_unlabeled(cfg, unlabeled_size));
  UNet student(cfg.model, init_seed(cfg.seed));
  UNet teacher_model = student;
  TeacherState<float> teacher = init_teacher(student.weights(), student.buffers(), cfg.alpha.early);
  return TrainState{cfg, spe, std::move(student), std::move(teacher), std::move(teacher_model), {}, 0};
}

StepStats train_step(TrainState& s, const Batch& batch) {
  batch.check();
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw ContractViolation("train_step: empty batch");
  const std::size_t n_labeled = batch.labeled_count();
  if (n_labeled == 0) throw ContractViolation("train_step: batch has no labeled items");
  const bool semi = s.cfg.mode == TrainMode::kSemiSupervised;
  if (!semi && n_labeled != batch.size()) throw ContractViolation("train_step: supervised batches must be fully labeled");

  const ScheduleConfig sched = s.schedule();
  const std::int64_t t = s.step;
  StepStats st;
  st.step = t;
  st.weight = semi ? consistency_weight(t, sched) : 0.0;
  st.lr = learning_rate(t, sched);
  st.alpha = alpha_at(s.epoch(), s.cfg.alpha);

  const int h = batch.images.front().height;
  const int w = batch.images.front().width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  // (1) per-sample perturbation parameters
  std::vector<AugmentationParams> aug(n);
  std::vector<PixelParams> teacher_pixel(n);
  for (int i = 0; i < n; ++i) {
    auto rs = stream(s.cfg.seed, t, i, kStudentAugTag);
    aug[i] = sample_params(rs, s.cfg.augment);
    auto rt = stream(s.cfg.seed, t, i, kTeacherNoiseTag);
    teacher_pixel[i] = sample_pixel_params(rt, s.cfg.augment);
  }

  // (2) student forward
  Tensor xs(1, n, h, w);
  for (int i = 0; i < n; ++i) put_plane(xs, i, student_view(batch.images[i], aug[i]));
  auto student_drop = stream(s.cfg.seed, t, 0, kStudentDropTag);
  const Tensor logits = s.student.forward(xs, ForwardMode::kTrain, &student_drop, true);
  std::vector<double> prob(logits.data.size());
  for (std::size_t k = 0; k < prob.size(); ++k) prob[k] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[k])));

  // (3), (4) teacher forward without gradients, then delayed spatial alignment.
  // The pass also refreshes the teacher's own batch-norm running statistics.
  Tensor xt(1, n, h, w);
  for (int i = 0; i < n; ++i) put_plane(xt, i, teacher_view(batch.images[i], teacher_pixel[i]));
  auto teacher_drop = stream(s.cfg.seed, t, 0, kTeacherDropTag);
  const Tensor tlogits = s.teacher_model.forward(xt, ForwardMode::kTrain, &teacher_drop, false);
  s.teacher.buffers = s.teacher_model.buffers();
  MapBatch teacher_target;
  if (semi) {
    teacher_target = MapBatch(n, h, w);
    Image tp(h, w);
    for (int i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < plane; ++k) tp.values[k] = sigmoid(tlogits.data[i * plane + k]);
      const Image aligned = align_teacher_prediction(tp, aug[i].spatial);
      for (std::size_t k = 0; k < plane; ++k) teacher_target.values[i * plane + k] = aligned.values[k];
    }
  }

  // (5) segmentation loss over the labeled items
  std::vector<int> labeled_items;
  for (int i = 0; i < n; ++i)
    if (batch.labeled[i]) labeled_items.push_back(i);
  MapBatch seg_pred(static_cast<int>(labeled_items.size()), h, w);
  MapBatch seg_target(static_cast<int>(labeled_items.size()), h, w);
  for (std::size_t j = 0; j < labeled_items.size(); ++j) {
    const int i = labeled_items[j];
    const Mask gt = align_ground_truth(*batch.masks[i], aug[i].spatial);
    for (std::size_t k = 0; k < plane; ++k) {
      seg_pred.values[j * plane + k] = prob[i * plane + k];
      seg_target.values[j * plane + k] = gt.values[k];
    }
  }
  const LossGrad seg = dice_loss_grad(seg_pred, seg_target);
  st.seg_loss = seg.value;

  // (6) consistency loss over every item
  LossGrad cons;
  std::vector<std::size_t> cons_index;
  if (semi) {
    if (s.cfg.augment.mask_border) {
      for (int i = 0; i < n; ++i) {
        const Mask valid = valid_region(h, w, aug[i].spatial);
        for (std::size_t k = 0; k < plane; ++k)
          if (valid.values[k]) cons_index.push_back(i * plane + k);
      }
      const int count = static_cast<int>(cons_index.size());
      MapBatch sp(1, 1, count), tp(1, 1, count);
      for (int k = 0; k < count; ++k) {
        sp.values[k] = prob[cons_index[k]];
        tp.values[k] = teacher_target.values[cons_index[k]];
      }
      cons = consistency_loss_grad(sp, tp, s.cfg.consistency);
    } else {
      MapBatch sp({n, h, w}, prob);
      cons = consistency_loss_grad(sp, teacher_target, s.cfg.consistency);
    }
    st.cons_loss = cons.value;
  }

  // (7) total objective
  st.total_loss = total_loss(st.seg_loss, st.cons_loss, st.weight);
  if (!std::isfinite(st.total_loss)) {
    throw DivergenceError(fmt::format("non-finite loss at step {} (epoch {}): lr={:.6g} w={:.6g} seg_loss={} cons_loss={}",
                                      t, s.epoch(), st.lr, st.weight, st.seg_loss, st.cons_loss));
  }

  std::vector<double> dprob(prob.size(), 0.0);
  for (std::size_t j = 0; j < labeled_items.size(); ++j) {
    const std::size_t base = static_cast<std::size_t>(labeled_items[j]) * plane;
    for (std::size_t k = 0; k < plane; ++k) dprob[base + k] = seg.grad[j * plane + k];
  }
  if (semi && st.weight != 0.0) {
    if (s.cfg.augment.mask_border) {
      for (std::size_t k = 0; k < cons_index.size(); ++k) dprob[cons_index[k]] += st.weight * cons.grad[k];
    } else {
      for (std::size_t k = 0; k < dprob.size(); ++k) dprob[k] += st.weight * cons.grad[k];
    }
  }
  Tensor dlogits(1, n, h, w);
  for (std::size_t k = 0; k < dprob.size(); ++k)
    dlogits.data[k] = static_cast<float>(dprob[k] * prob[k] * (1.0 - prob[k]));

  s.student.zero_grad();
  s.student.backward(dlogits);

  // (8) Adam with the L2 term on the student; (9) advance t; (10) EMA teacher
  adam_step(s, st.lr);
  ++s.step;
  ema_update(s.teacher, s.student.weights(), st.alpha);
  s.teacher_model.set_weights(s.teacher.weights);
  return st;
}

std::vector<BatchItem> batch_items(const TrainState& state, std::size_t labeled_size, std::size_t unlabeled_size,
                                   std::int64_t step) {
  const std::int64_t epoch = step / state.steps_per_epoch;
  const BatchPlan plan = mixed_batches(state.cfg.mix(), labeled_size, pool_unlabeled(state.cfg, unlabeled_size),
                                       state.cfg.seed, epoch);
  return plan.at(static_cast<std::size_t>(step % state.steps_per_epoch));
}

std::vector<StepStats> run_steps(TrainState& state, const SlicePools& pools, std::int64_t count) {
  const std::size_t labeled = pools.labeled.size();
  const std::size_t unlabeled = pool_unlabeled(state.cfg, pools.unlabeled.size());
  std::vector<StepStats> out;
  std::int64_t plan_epoch = -1;
  BatchPlan plan;
  for (std::int64_t k = 0; k < count; ++k) {
    const std::int64_t epoch = state.epoch();
    if (epoch != plan_epoch) {
      plan = mixed_batches(state.cfg.mix(), labeled, unlabeled, state.cfg.seed, epoch);
      plan_epoch = epoch;
    }
    const auto& items = plan.at(static_cast<std::size_t>(state.step % state.steps_per_epoch));
    out.push_back(train_step(state, materialize(items, pools)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

// Consecutive runs of equally sized slices, at most `limit` long.
template <class F>
void for_each_chunk(const std::vector<SliceSample>& samples, std::size_t limit, F&& f) {
  std::size_t start = 0;
  while (start < samples.size()) {
    std::size_t end = start + 1;
    while (end < samples.size() && end - start < limit && samples[end].image.same_shape(samples[start].image)) ++end;
    f(start, end);
    start = end;
  }
}

}  // namespace

std::vector<Mask> predict_masks(UNet& model, const std::vector<SliceSample>& samples, double threshold) {
  std::vector<Mask> out;
  out.reserve(samples.size());
  for_each_chunk(samples, 8, [&](std::size_t begin, std::size_t end) {
    const int n = static_cast<int>(end - begin);
    const int h = samples[begin].image.height;
    const int w = samples[begin].image.width;
    Tensor x(1, n, h, w);
    for (int i = 0; i < n; ++i) put_plane(x, i, samples[begin + i].image);
    const Tensor logits = model.forward(x, ForwardMode::kEval, nullptr, false);
    for (int i = 0; i < n; ++i) {
      Mask m(h, w);
      for (std::size_t k = 0; k < m.values.size(); ++k) {
        const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[i * x.plane() + k])));
        m.values[k] = p > threshold ? 1 : 0;
      }
      out.push_back(std::move(m));
    }
  });
  return out;
}

MetricsReport evaluate(UNet& model, const std::vector<SliceSample>& samples, double threshold, bool per_slice) {
  if (samples.empty()) throw ConfigError("evaluate: empty dataset");
  for (const auto& s : samples)
    if (!s.mask) throw ContractViolation("evaluate: sample '" + s.subject_id + "' has no ground truth");
  const std::vector<Mask> pred = predict_masks(model, samples, threshold);
  if (!per_slice) {
    ConfusionCounts c;
    for (std::size_t i = 0; i < samples.size(); ++i) c += confusion(pred[i], *samples[i].mask);
    return compute_metrics(c);
  }
  std::array<double, 6> sum{};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto v = compute_metrics(confusion(pred[i], *samples[i].mask)).values();
    for (int k = 0; k < 6; ++k) sum[k] += v[k];
  }
  for (auto& x : sum) x /= static_cast<double>(samples.size());
  return MetricsReport::from_values(sum);
}

ModelReports evaluate_both(const TrainState& state, const std::vector<SliceSample>& samples) {
  UNet student = state.student;
  UNet teacher = state.teacher_model;
  return {evaluate(student, samples, state.cfg.threshold, state.cfg.per_slice_metrics),
          evaluate(teacher, samples, state.cfg.threshold, state.cfg.per_slice_metrics)};
}

// ---------------------------------------------------------------------------
// Fit

namespace {

constexpr const char* kLogHeader = "epoch,step,seg_loss,cons_loss,w,lr,val_dice_student,val_dice_teacher";

void append_log(const fs::path& path, const EpochLog& e) {
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IngestionError(path.string() + ": cannot write training log");
  if (fresh) out << kLogHeader << "\n";
  out << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.6f},{:.6f}\n", e.epoch, e.step, e.seg_loss, e.cons_loss,
                     e.weight, e.lr, e.val_dice_student, e.val_dice_teacher);
}

}  // namespace

FitResult fit(const TrainConfig& cfg, const SlicePools& pools, FitOptions options) {
  cfg.validate();
  if (pools.labeled.empty()) throw ConfigError("fit: no labeled training data");
  if (options.run_dir) {
    std::error_code ec;
    fs::create_directories(*options.run_dir, ec);
    if (ec) throw IngestionError(options.run_dir->string() + ": cannot create run directory");
  }

  FitResult result{options.resume ? std::move(*options.resume)
                                  : make_train_state(cfg, pools.labeled.size(), pools.unlabeled.size()),
                   {}, -1.0, -1, std::nullopt, std::nullopt};
  TrainState& state = result.state;
  const std::int64_t total = static_cast<std::int64_t>(state.cfg.epochs) * state.steps_per_epoch;
  const bool validate = options.validate_each_epoch && !pools.validation.empty();

  while (state.step < total) {
    const std::int64_t epoch = state.epoch();
    const std::int64_t end = std::min((epoch + 1) * state.steps_per_epoch, total);
    const auto stats = run_steps(state, pools, end - state.step);

    EpochLog e;
    e.epoch = epoch;
    e.step = state.step;
    for (const auto& st : stats) {
      e.seg_loss += st.seg_loss;
      e.cons_loss += st.cons_loss;
    }
    e.seg_loss /= static_cast<double>(stats.size());
    e.cons_loss /= static_cast<double>(stats.size());
    e.weight = stats.back().weight;
    e.lr = stats.back().lr;
    if (validate) {
      const ModelReports r = evaluate_both(state, pools.validation);
      e.val_dice_student = r.student.dice;
      e.val_dice_teacher = r.teacher.dice;
      const double score = state.cfg.select == Selection::kTeacher ? e.val_dice_teacher : e.val_dice_student;
      if (score > result.best_val_dice) {
        result.best_val_dice = score;
        result.best_epoch = epoch;
        const UNet& chosen = state.cfg.select == Selection::kTeacher ? state.teacher_model : state.student;
        result.best_weights = chosen.weights();
        result.best_buffers = chosen.buffers();
        if (options.run_dir) save_checkpoint(*options.run_dir / "best.ckpt", state);
      }
    }
    result.log.push_back(e);
    if (options.run_dir) append_log(*options.run_dir / "log.csv", e);
    if (options.on_epoch) options.on_epoch(e);
  }
  if (options.run_dir) save_checkpoint(*options.run_dir / "final.ckpt", state);
  return result;
}

MultiRunResult multi_run(const TrainConfig& cfg, const SlicePools& pools, int n_runs, const std::string& label) {
  if (n_runs < 1) throw ConfigError("multi_run: n_runs must be positive");
  if (pools.test.empty()) throw ConfigError("multi_run: empty test set");
  MultiRunResult out;
  std::vector<MetricsReport> reports;
  for (int r = 0; r < n_runs; ++r) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(r);
    RunOutcome outcome;
    outcome.seed = run_cfg.seed;
    try {
      FitResult fr = fit(run_cfg, pools);
      UNet model = run_cfg.select == Selection::kTeacher ? fr.state.teacher_model : fr.state.student;
      if (fr.best_weights) {
        model.set_weights(*fr.best_weights);
        model.set_buffers(*fr.best_buffers);
      }
      outcome.report = evaluate(model, pools.test, run_cfg.threshold, run_cfg.per_slice_metrics);
      reports.push_back(*outcome.report);
    } catch (const DivergenceError& e) {
      outcome.failure = e.what();
      out.row.notes.push_back(fmt::format("seed {} failed: {}", run_cfg.seed, e.what()));
    }
    out.runs.push_back(std::move(outcome));
  }
  out.row.label = label;
  if (!reports.empty()) out.row.result = aggregate(reports);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'M', 'T', 'S', 'C'};
constexpr int kCheckpointVersion = 1;

struct ArrayRef {
  std::string name;
  std::vector<int> shape;
  const std::vector<float>* data;
};

}  // namespace

void save_checkpoint(const fs::path& path, const TrainState& state) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  std::vector<ArrayRef> arrays;
  const auto add = [&](const std::string& prefix, const WeightSet<float>& set) {
    for (const auto& t : set) arrays.push_back({prefix + t.name, t.shape, &t.data});
  };
  const WeightSet<float> student_w = state.student.weights();
  const WeightSet<float> student_b = state.student.buffers();
  add("student/", student_w);
  add("student_buffer/", student_b);
  add("teacher/", state.teacher.weights);
  add("teacher_buffer/", state.teacher.buffers);
  const auto params = state.student.parameters();
  if (!state.adam.m.empty()) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      arrays.push_back({"adam_m/" + params[k]->name, params[k]->shape, &state.adam.m[k]});
      arrays.push_back({"adam_v/" + params[k]->name, params[k]->shape, &state.adam.v[k]});
    }
  }

  nlohmann::json meta;
  meta["format"] = "mtseg-checkpoint";
  meta["version"] = kCheckpointVersion;
  meta["step"] = state.step;
  meta["epoch"] = state.epoch();
  meta["steps_per_epoch"] = state.steps_per_epoch;
  meta["adam_step"] = state.adam.step;
  meta["teacher_alpha"] = state.teacher.alpha;
  meta["teacher_step"] = state.teacher.step;
  meta["rng"] = {{"kind", "counter"}, {"seed", state.cfg.seed}};
  meta["config"] = train_config_json(state.cfg);
  meta["config_hash"] = fmt::format("{:016x}", config_hash(state.cfg));
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    index.push_back({{"name", a.name}, {"dtype", "float32"}, {"shape", a.shape}, {"offset", offset},
                     {"count", a.data->size()}});
    offset += a.data->size() * sizeof(float);
  }
  meta["arrays"] = std::move(index);
  const std::string text = meta.dump();

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError(tmp.string() + ": cannot write checkpoint");
    out.write(kMagic, 4);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : arrays)
      out.write(reinterpret_cast<const char*>(a.data->data()), static_cast<std::streamsize>(a.data->size() * sizeof(float)));
    if (!out) throw IngestionError(tmp.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

CheckpointContents read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(path.string() + ": cannot open checkpoint");
  char magic[4];
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IngestionError(path.string() + ": not a checkpoint file");
  if (len > (1u << 30)) throw IngestionError(path.string() + ": implausible metadata length");
  CheckpointContents c;
  c.metadata_json.resize(len);
  in.read(c.metadata_json.data(), static_cast<std::streamsize>(len));
  if (!in) throw IngestionError(path.string() + ": truncated metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(c.metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path.string() + ": bad metadata: " + e.what());
  }
  const std::streamoff base = in.tellg();
  for (const auto& a : meta.at("arrays")) {
    NamedTensor<float> t;
    t.name = a.at("name").get<std::string>();
    t.shape = a.at("shape").get<std::vector<int>>();
    t.data.resize(a.at("count").get<std::size_t>());
    in.seekg(base + static_cast<std::streamoff>(a.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw IngestionError(path.string() + ": truncated array '" + t.name + "'");
    c.arrays.emplace(t.name, std::move(t));
  }
  return c;
}

TrainState load_checkpoint(const fs::path& path) {
  CheckpointContents c = read_checkpoint(path);
  const nlohmann::json meta = nlohmann::json::parse(c.metadata_json);
  if (meta.value("format", "") != "mtseg-checkpoint" || meta.value("version", 0) != kCheckpointVersion)
    throw IngestionError(path.string() + ": unsupported checkpoint format");
  TrainConfig cfg = train_config_from_json(meta.at("config"));
  if (fmt::format("{:016x}", config_hash(cfg)) != meta.at("config_hash").get<std::string>())
    throw IngestionError(path.string() + ": configuration fingerprint mismatch");

  UNet student(cfg.model, 0);
  const auto take = [&](const std::string& prefix, WeightSet<float> layout) {
    for (auto& t : layout) {
      auto it = c.arrays.find(prefix + t.name);
      if (it == c.arrays.end()) throw IngestionError(path.string() + ": missing array '" + prefix + t.name + "'");
      if (it->second.data.size() != t.data.size())
        throw IngestionError(path.string() + ": size mismatch for '" + prefix + t.name + "'");
      t.data = std::move(it->second.data);
    }
    return layout;
  };
  student.set_weights(take("student/", student.weights()));
  student.set_buffers(take("student_buffer/", student.buffers()));
  TeacherState<float> teacher{take("teacher/", student.weights()), take("teacher_buffer/", student.buffers()),
                              meta.at("teacher_alpha").get<double>(), meta.at("teacher_step").get<std::int64_t>()};
  UNet teacher_model = student;
  AdamState adam;
  adam.step = meta.at("adam_step").get<std::int64_t>();
  if (adam.step > 0) {
    for (const auto* p : student.parameters()) {
      auto m = c.arrays.find("adam_m/" + p->name);
      auto v = c.arrays.find("adam_v/" + p->name);
      if (m == c.arrays.end() || v == c.arrays.end())
        throw IngestionError(path.string() + ": missing optimizer state for '" + p->name + "'");
      adam.m.push_back(std::move(m->second.data));
      adam.v.push_back(std::move(v->second.data));
    }
  }
  TrainState state{cfg, meta.at("steps_per_epoch").get<int>(), std::move(student), std::move(teacher),
                   std::move(teacher_model), std::move(adam), meta.at("step").get<std::int64_t>()};
  state.sync_teacher_model();
  return state;
}

}  // namespace mtseg
