#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "mtseg/error.hpp"
#include "mtseg/trainer.hpp"

using namespace mtseg;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 4;
  c.batch_size = 4;
  c.steps_per_epoch = 3;
  c.schedule.lr_rampup_epochs = 1;
  c.schedule.consistency_rampup_epochs = 2;
  c.schedule.lr_max = 0.003;
  c.alpha.switch_epoch = 2;
  c.model.base_channels = 4;
  return c;
}

const SlicePools& tiny_pools() {
  static const SlicePools pools = synth_pools({4, 8, 4, 4, 32}, 3);
  return pools;
}

SlicePools labeled_only_pools() {
  SlicePools p = tiny_pools();
  p.unlabeled.clear();
  return p;
}

float max_abs_diff(const WeightSet<float>& a, const WeightSet<float>& b) {
  REQUIRE(a.size() == b.size());
  float m = 0.0f;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].data.size(); ++i) m = std::max(m, std::abs(a[k].data[i] - b[k].data[i]));
  return m;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mtseg_test_trainer" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("teacher starts equal to the student and alpha 0 keeps it there") {
  TrainConfig cfg = tiny_config(TrainMode::kSemiSupervised);
  cfg.alpha.early = 0.0;
  cfg.alpha.late = 0.0;
  TrainState s = make_train_state(cfg, 4, 8);
  CHECK(s.teacher.weights == s.student.weights());
  run_steps(s, tiny_pools(), 3);
  CHECK(s.step == 3);
  CHECK(s.teacher.weights == s.student.weights());
  CHECK(s.teacher_model.weights() == s.teacher.weights);
}

TEST_CASE("alpha 1 freezes the teacher weights: no gradient reaches them") {
  TrainConfig cfg = tiny_config(TrainMode::kSemiSupervised);
  cfg.alpha.early = 1.0;
  cfg.alpha.late = 1.0;
  TrainState s = make_train_state(cfg, 4, 8);
  const auto before = s.teacher.weights;
  const auto student_before = s.student.weights();
  const auto stats = run_steps(s, tiny_pools(), 3);
  CHECK(s.teacher.weights == before);
  CHECK(max_abs_diff(s.student.weights(), student_before) > 0.0f);
  CHECK(stats.back().cons_loss > 0.0);
}

TEST_CASE("teacher change after a step is exactly the EMA update") {
  TrainState s = make_train_state(tiny_config(TrainMode::kSemiSupervised), 4, 8);
  run_steps(s, tiny_pools(), 2);
  const auto before = s.teacher.weights;
  const double alpha = alpha_at(s.epoch(), s.cfg.alpha);
  run_steps(s, tiny_pools(), 1);
  const auto student = s.student.weights();
  for (std::size_t k = 0; k < before.size(); ++k)
    for (std::size_t i = 0; i < before[k].data.size(); ++i) {
      const double expect = alpha * before[k].data[i] + (1.0 - alpha) * student[k].data[i];
      REQUIRE(std::abs(s.teacher.weights[k].data[i] - expect) <= 1e-7);
    }
}

TEST_CASE("student updates do not depend on the teacher when the consistency weight is 0") {
  TrainConfig cfg = tiny_config(TrainMode::kSemiSupervised);
  cfg.schedule.consistency_max = 0.0;
  TrainState a = make_train_state(cfg, 4, 8);
  TrainState b = make_train_state(cfg, 4, 8);
  for (auto& t : b.teacher.weights)
    for (auto& x : t.data) x += 0.25f;
  b.sync_teacher_model();
  run_steps(a, tiny_pools(), 4);
  run_steps(b, tiny_pools(), 4);
  CHECK(max_abs_diff(a.student.weights(), b.student.weights()) <= 1e-7f);
  CHECK(a.student.buffers() == b.student.buffers());
}

TEST_CASE("consistency gradient changes the student when the weight is positive") {
  TrainConfig cfg = tiny_config(TrainMode::kSemiSupervised);
  cfg.schedule.consistency_rampup_epochs = 1;
  TrainState a = make_train_state(cfg, 4, 8);
  TrainState b = make_train_state(cfg, 4, 8);
  for (auto& t : b.teacher.weights)
    for (auto& x : t.data) x += 0.25f;
  b.sync_teacher_model();
  run_steps(a, tiny_pools(), 4);
  run_steps(b, tiny_pools(), 4);
  CHECK(max_abs_diff(a.student.weights(), b.student.weights()) > 1e-6f);
}

TEST_CASE("batches without labeled items are rejected") {
  TrainState s = make_train_state(tiny_config(TrainMode::kSemiSupervised), 4, 8);
  const Batch unl = materialize({{false, 0}, {false, 1}}, tiny_pools());
  CHECK_THROWS_AS((void)train_step(s, unl), ContractViolation);
  CHECK(s.step == 0);
  TrainState sup = make_train_state(tiny_config(TrainMode::kSupervised), 4, 0);
  const Batch mixed = materialize({{true, 0}, {false, 1}}, tiny_pools());
  CHECK_THROWS_AS((void)train_step(sup, mixed), ContractViolation);
  for (const auto& items : mixed_batches(s.cfg.mix(), 4, 8, 0, 0)) {
    std::size_t nl = 0;
    for (const auto& it : items) nl += it.labeled;
    CHECK(nl >= 1);
  }
}

TEST_CASE("semi-supervised with zero consistency weight reduces to supervised training") {
  TrainConfig semi = tiny_config(TrainMode::kSemiSupervised);
  semi.schedule.consistency_max = 0.0;
  TrainConfig sup = tiny_config(TrainMode::kSupervised);
  const SlicePools pools = labeled_only_pools();
  TrainState a = make_train_state(semi, 4, 0);
  TrainState b = make_train_state(sup, 4, 0);
  REQUIRE(a.student.weights() == b.student.weights());
  const auto sa = run_steps(a, pools, 12);
  const auto sb = run_steps(b, pools, 12);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i].seg_loss == sb[i].seg_loss);
    CHECK(sa[i].total_loss == sb[i].total_loss);
  }
  CHECK(a.student.weights() == b.student.weights());
  CHECK(a.student.buffers() == b.student.buffers());
  CHECK(a.teacher.weights == b.teacher.weights);
}

TEST_CASE("alpha switches at the first step of the switch epoch") {
  TrainState s = make_train_state(tiny_config(TrainMode::kSemiSupervised), 4, 8);
  const auto stats = run_steps(s, tiny_pools(), 7);
  for (const auto& st : stats) CHECK(st.alpha == (st.step < 6 ? 0.99 : 0.999));
  CHECK(stats[0].weight < stats[5].weight);
  CHECK(stats[0].lr < stats[2].lr);
}

TEST_CASE("checkpoint resume continues the identical trajectory") {
  const TrainConfig cfg = tiny_config(TrainMode::kSemiSupervised);
  TrainState straight = make_train_state(cfg, 4, 8);
  run_steps(straight, tiny_pools(), 6);

  TrainState first = make_train_state(cfg, 4, 8);
  run_steps(first, tiny_pools(), 3);
  const fs::path ckpt = scratch("resume") / "mid.ckpt";
  save_checkpoint(ckpt, first);
  TrainState resumed = load_checkpoint(ckpt);
  CHECK(resumed.step == 3);
  run_steps(resumed, tiny_pools(), 3);
  CHECK(resumed.student.weights() == straight.student.weights());
  CHECK(resumed.student.buffers() == straight.student.buffers());
  CHECK(resumed.teacher.weights == straight.teacher.weights);
  CHECK(resumed.teacher.buffers == straight.teacher.buffers);
  CHECK(resumed.adam.m == straight.adam.m);
  CHECK(resumed.adam.v == straight.adam.v);

  const CheckpointContents c = read_checkpoint(ckpt);
  for (const std::string prefix : {"student/", "student_buffer/", "teacher/", "teacher_buffer/", "adam_m/", "adam_v/"}) {
    CAPTURE(prefix);
    const auto it = c.arrays.lower_bound(prefix);
    CHECK((it != c.arrays.end() && it->first.rfind(prefix, 0) == 0));
  }
  CHECK(c.metadata_json.find("\"step\"") != std::string::npos);

  { std::ofstream(ckpt.parent_path() / "junk.ckpt") << "MTSCgarbage"; }
  CHECK_THROWS_AS((void)load_checkpoint(ckpt.parent_path() / "junk.ckpt"), IngestionError);
  CHECK_THROWS_AS((void)load_checkpoint(ckpt.parent_path() / "none.ckpt"), IngestionError);
}

TEST_CASE("two-epoch fit writes logs and loadable checkpoints") {
  TrainConfig cfg = tiny_config(TrainMode::kSemiSupervised);
  cfg.epochs = 2;
  cfg.schedule.consistency_rampup_epochs = 1;
  const fs::path dir = scratch("fit");
  FitOptions opt;
  opt.run_dir = dir;
  int callbacks = 0;
  opt.on_epoch = [&](const EpochLog&) { ++callbacks; };
  const FitResult r = fit(cfg, tiny_pools(), opt);
  CHECK(callbacks == 2);
  REQUIRE(r.log.size() == 2);
  CHECK(r.log[0].step < r.log[1].step);
  CHECK(r.log[1].step == 6);
  CHECK(r.log[1].cons_loss > 0.0);
  CHECK(r.log[1].weight > 0.0);
  CHECK(r.best_epoch >= 0);
  CHECK(fs::exists(dir / "log.csv"));
  CHECK(fs::exists(dir / "best.ckpt"));
  CHECK(fs::exists(dir / "final.ckpt"));
  std::ifstream log(dir / "log.csv");
  std::string header, line;
  std::getline(log, header);
  CHECK(header == "epoch,step,seg_loss,cons_loss,w,lr,val_dice_student,val_dice_teacher");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 2);
  const TrainState final_state = load_checkpoint(dir / "final.ckpt");
  CHECK(final_state.step == 6);
  CHECK(final_state.student.weights() == r.state.student.weights());
}

TEST_CASE("supervised logs have zero consistency") {
  TrainConfig cfg = tiny_config(TrainMode::kSupervised);
  cfg.epochs = 1;
  cfg.schedule.consistency_rampup_epochs = 1;
  const FitResult r = fit(cfg, labeled_only_pools());
  REQUIRE(r.log.size() == 1);
  CHECK(r.log[0].cons_loss == 0.0);
  CHECK(r.log[0].weight == 0.0);
}

TEST_CASE("evaluation of degenerate predictors") {
  const auto& test = tiny_pools().test;
  UNetConfig mc;
  mc.base_channels = 4;
  mc.zero_head = true;
  UNet zero(mc, 1);
  const MetricsReport r = evaluate(zero, test);  // p = 0.5 everywhere, not above threshold
  CHECK(r.recall == 0.0);
  CHECK(r.specificity == 100.0);
  CHECK(r.dice == 0.0);
  CHECK(r.accuracy > 80.0);
  const auto masks = predict_masks(zero, test);
  REQUIRE(masks.size() == test.size());
  for (const auto& m : masks)
    for (auto v : m.values) CHECK(v == 0);

  std::vector<Mask> truth;
  for (const auto& s : test) truth.push_back(*s.mask);
  const MetricsReport perfect = compute_metrics(confusion(truth, truth));
  for (double v : perfect.values()) CHECK(v == 100.0);
}

TEST_CASE("divergence is reported as an error") {
  TrainConfig cfg = tiny_config(TrainMode::kSupervised);
  TrainState s = make_train_state(cfg, 4, 0);
  auto w = s.student.weights();
  w.front().data.front() = std::nanf("");
  s.student.set_weights(w);
  CHECK_THROWS_AS((void)run_steps(s, labeled_only_pools(), 1), DivergenceError);
}
