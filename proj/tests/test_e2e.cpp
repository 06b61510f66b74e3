// Trained-model behavior: tracker self-consistency, resume, and the
// MI-ablation direction guard. These train small real models and take a
// few minutes.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "drmim/metrics.hpp"
#include "drmim/rng.hpp"
#include "drmim/tracker.hpp"
#include "drmim/trainer.hpp"

using namespace drmim;

namespace {

std::vector<Sequence> make_sequences(std::uint64_t base_seed, int count, double vel_max,
                                     double occluder_prob) {
  std::vector<Sequence> out;
  for (int i = 0; i < count; ++i) {
    SynthConfig cfg;
    cfg.seed = mix_seed(base_seed, static_cast<std::uint64_t>(i));
    cfg.length = 30;
    cfg.vel_max = vel_max;
    cfg.occluder_prob = occluder_prob;
    out.push_back(generate_synthetic(cfg));
  }
  return out;
}

TrainConfig shared_config() {
  TrainConfig cfg;
  cfg.steps = 240;
  cfg.seed = 9;
  return cfg;
}

const std::vector<Sequence>& train_data() {
  static std::vector<Sequence> data = make_sequences(21, 8, 3.0, 0.03);
  return data;
}

// trained once, shared across the cases below
const ModelParams& trained_model() {
  static ModelParams params = [] {
    ModelParams p = train(default_architecture(), shared_config(), train_data());
    p.set_requires_grad(false);
    return p;
  }();
  return params;
}

double mean_precision20(const ModelParams& params, const std::vector<Sequence>& seqs) {
  double acc = 0.0;
  for (const Sequence& seq : seqs) {
    TrackResult r = track_sequence(params, seq);
    acc += precision_curve(r.boxes, seq.boxes).precision20;
  }
  return acc / static_cast<double>(seqs.size());
}

}  // namespace

TEST_CASE("init then update on the identical frame stays centered") {
  const ModelParams& params = trained_model();
  Sequence seq = make_sequences(300, 1, 0.0, 0.0)[0];

  TrackerState state = tracker_init(params, seq.frames[0], seq.boxes[0]);
  Box out = tracker_update(state, params, seq.frames[0]);
  CHECK(std::abs(out.cx() - seq.boxes[0].cx()) <= 2.0);
  CHECK(std::abs(out.cy() - seq.boxes[0].cy()) <= 2.0);
}

TEST_CASE("static synthetic sequence tracks with IoU >= 0.6 on every frame") {
  const ModelParams& params = trained_model();
  SynthConfig cfg;
  cfg.seed = 301;
  cfg.length = 30;
  cfg.vel_min = 0.0;
  cfg.vel_max = 0.0;
  cfg.drift_rate = 0.0;
  cfg.occluder_prob = 0.0;
  cfg.noise_sigma = 0.0;
  Sequence seq = generate_synthetic(cfg);

  TrackResult r = track_sequence(params, seq);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    CAPTURE(i);
    CHECK(iou(r.boxes[i], seq.boxes[i]) >= 0.6);
  }
}

TEST_CASE("resuming from a checkpoint lands within 2 precision points") {
  const std::vector<Sequence>& data = train_data();
  std::vector<Sequence> eval_seqs = make_sequences(310, 3, 1.5, 0.0);

  // uninterrupted reference
  const ModelParams& full = trained_model();

  // same schedule, split at the midpoint
  TrainConfig first_half = shared_config();
  first_half.steps = 120;
  ModelParams half = train(default_architecture(), first_half, data);

  TrainConfig second_half = shared_config();
  second_half.steps = 120;
  second_half.start_step = 120;
  ModelParams resumed = train(default_architecture(), second_half, data, nullptr, &half);
  resumed.set_requires_grad(false);

  const double p_full = mean_precision20(full, eval_seqs);
  const double p_resumed = mean_precision20(resumed, eval_seqs);
  CAPTURE(p_full);
  CAPTURE(p_resumed);
  CHECK(std::abs(p_full - p_resumed) <= 0.02);
}

TEST_CASE("MI and idsim terms do not cost more than 2 precision points") {
  const std::vector<Sequence>& data = train_data();
  std::vector<Sequence> eval_seqs = make_sequences(310, 3, 1.5, 0.0);

  const ModelParams& with_mi = trained_model();  // rho = gamma = omega = 0.05

  TrainConfig ablated = shared_config();
  ablated.weights.rho = 0.0;
  ablated.weights.gamma = 0.0;
  ablated.weights.omega = 0.0;
  ModelParams without_mi = train(default_architecture(), ablated, data);
  without_mi.set_requires_grad(false);

  const double p_with = mean_precision20(with_mi, eval_seqs);
  const double p_without = mean_precision20(without_mi, eval_seqs);
  CAPTURE(p_with);
  CAPTURE(p_without);
  CHECK(p_with >= p_without - 0.02);
}
