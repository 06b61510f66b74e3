#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "drmim/errors.hpp"
#include "drmim/loss.hpp"
#include "drmim/rng.hpp"
#include "drmim/tracker.hpp"

using namespace drmim;
namespace fs = std::filesystem;

namespace {

ArchitectureSpec test_spec() { return default_architecture(80, 192); }

Sequence static_sequence(std::uint64_t seed, int length) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.length = length;
  cfg.vel_min = 0.0;
  cfg.vel_max = 0.0;
  cfg.drift_rate = 0.0;
  cfg.occluder_prob = 0.0;
  cfg.noise_sigma = 0.0;
  cfg.canvas_w = 120;
  cfg.canvas_h = 96;
  cfg.obj_min = 24.0;
  cfg.obj_max = 32.0;
  return generate_synthetic(cfg);
}

}  // namespace

TEST_CASE("init rejects degenerate and out-of-frame boxes") {
  ArchitectureSpec spec = test_spec();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 1);
  params.set_requires_grad(false);
  Sequence seq = static_sequence(1, 2);

  CHECK_THROWS_AS(tracker_init(params, seq.frames[0], Box{10, 10, 1.0, 20}, {}), ContractError);
  CHECK_THROWS_AS(tracker_init(params, seq.frames[0], Box{500, 500, 20, 20}, {}), ContractError);
}

TEST_CASE("init stores post-neck template kernels of the traced size") {
  ArchitectureSpec spec = test_spec();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 2);
  params.set_requires_grad(false);
  Sequence seq = static_sequence(2, 2);
  TrackerState state = tracker_init(params, seq.frames[0], seq.boxes[0]);

  const Geometry geo = params.geometry();
  CHECK(state.kernel_cls.dim(1) == geo.neck_template);
  CHECK(state.kernel_reg.dim(1) == geo.neck_template);
  CHECK(state.window.size() ==
        static_cast<std::size_t>(geo.score_size) * static_cast<std::size_t>(geo.score_size));
  // window peaks at the center and stays in [0,1]
  const int s = geo.score_size;
  const std::size_t center = static_cast<std::size_t>(s / 2) * s + s / 2;
  for (std::size_t i = 0; i < state.window.size(); ++i) {
    CHECK(state.window[i] >= 0.0);
    CHECK(state.window[i] <= state.window[center] + 1e-12);
  }
}

TEST_CASE("box touching the frame edge crops without crashing") {
  ArchitectureSpec spec = test_spec();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 3);
  params.set_requires_grad(false);
  Sequence seq = static_sequence(3, 2);
  Box edge{0.0, 0.0, 24.0, 24.0};
  TrackerState state = tracker_init(params, seq.frames[0], edge);
  Box out = tracker_update(state, params, seq.frames[1]);
  CHECK(std::isfinite(out.x));
  CHECK(out.w > 0.0);
  CHECK(out.h > 0.0);
}

TEST_CASE("window weight 1.0 forces the argmax to the map center") {
  ArchitectureSpec spec = test_spec();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 4);
  params.set_requires_grad(false);
  Sequence seq = static_sequence(4, 2);

  TrackerConfig cfg;
  cfg.window_influence = 1.0;
  TrackerState state = tracker_init(params, seq.frames[0], seq.boxes[0], cfg);
  const Box before = state.box;
  Box out = tracker_update(state, params, seq.frames[1]);
  // argmax at the window center decodes around the previous center
  const GridGeometry grid = grid_from(params.geometry());
  const double max_jump =
      std::abs(grid.point_x(params.geometry().score_size / 2) - spec.search_size / 2.0) + 1.0;
  (void)max_jump;
  CHECK(std::abs(out.cx() - before.cx()) < 60.0 * 0.25);  // well inside the crop
  CHECK(out.w > 0.0);
  CHECK(out.h > 0.0);
}

TEST_CASE("with window and penalty off the argmax follows raw scores") {
  ArchitectureSpec spec = test_spec();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 5);
  params.set_requires_grad(false);
  Sequence seq = static_sequence(5, 2);

  TrackerConfig cfg;
  cfg.window_influence = 0.0;
  cfg.penalty_k = 0.0;
  TrackerState state = tracker_init(params, seq.frames[0], seq.boxes[0], cfg);

  // reproduce the raw argmax independently
  const auto& sp = params.spec();
  const Geometry geo = params.geometry();
  const double s_z = context_side(state.box);
  const double s_x = s_z * sp.search_size / sp.template_size;
  CropWindow xw{state.box.cx(), state.box.cy(), s_x, sp.search_size};
  Tensor x = crop_resize(seq.frames[1], xw);
  Tensor f_r_x = dr_split(params, backbone_forward(params, x)).second;
  HeadOutputs heads =
      head_forward(params, correlate(state.kernel_cls, run_block(params, "neck_cls_x", f_r_x)),
                   correlate(state.kernel_reg, run_block(params, "neck_reg_x", f_r_x)));
  const int s = geo.score_size;
  std::size_t best = 0;
  double best_v = -1.0;
  for (int i = 0; i < s * s; ++i) {
    const double cls = heads.cls_logits.data()[static_cast<std::size_t>(i)];
    const double q = heads.quality_logits.data()[static_cast<std::size_t>(i)];
    const double v = 1.0 / (1.0 + std::exp(-cls)) / (1.0 + std::exp(-q));
    if (v > best_v) {
      best_v = v;
      best = static_cast<std::size_t>(i);
    }
  }
  const GridGeometry grid = grid_from(geo);
  const double px = grid.point_x(static_cast<int>(best) % s);
  const double py = grid.point_y(static_cast<int>(best) / s);
  const std::size_t hw = static_cast<std::size_t>(s) * s;
  const Box crop_box = decode_box(px, py, heads.reg_offsets.data()[best],
                                  heads.reg_offsets.data()[hw + best],
                                  heads.reg_offsets.data()[2 * hw + best],
                                  heads.reg_offsets.data()[3 * hw + best]);
  const Box expect_frame = xw.to_frame(crop_box);

  Box out = tracker_update(state, params, seq.frames[1]);
  CHECK(out.cx() == doctest::Approx(expect_frame.cx()).epsilon(1e-9));
  CHECK(out.cy() == doctest::Approx(expect_frame.cy()).epsilon(1e-9));
}

TEST_CASE("emitted boxes are always finite and positive") {
  ArchitectureSpec spec = test_spec();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 6);
  params.set_requires_grad(false);
  SynthConfig cfg;
  cfg.seed = 6;
  cfg.length = 10;
  cfg.canvas_w = 120;
  cfg.canvas_h = 96;
  cfg.vel_max = 5.0;
  Sequence seq = generate_synthetic(cfg);

  TrackerState state = tracker_init(params, seq.frames[0], seq.boxes[0]);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    Box b = tracker_update(state, params, seq.frames[i]);
    CHECK(std::isfinite(b.x));
    CHECK(std::isfinite(b.y));
    CHECK(b.w > 0.0);
    CHECK(b.h > 0.0);
  }
}

TEST_CASE("track_sequence emits one box per frame and positive timings") {
  ArchitectureSpec spec = test_spec();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 7);
  params.set_requires_grad(false);
  Sequence seq = static_sequence(7, 6);

  TrackResult result = track_sequence(params, seq);
  CHECK(result.boxes.size() == seq.size());
  CHECK(result.update_seconds.size() == seq.size() - 1);
  for (double t : result.update_seconds) CHECK(t > 0.0);
  // frame 1 carries the init box untouched (one-pass protocol)
  CHECK(result.boxes[0].x == seq.boxes[0].x);
  CHECK(result.boxes[0].w == seq.boxes[0].w);

  CHECK_THROWS_AS(track_sequence(params, Sequence{}), ContractError);
}

TEST_CASE("identical checkpoint and sequence give identical trajectories") {
  ArchitectureSpec spec = test_spec();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 8);
  params.set_requires_grad(false);
  Sequence seq = static_sequence(8, 6);

  TrackResult a = track_sequence(params, seq);
  TrackResult b = track_sequence(params, seq);
  REQUIRE(a.boxes.size() == b.boxes.size());
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    CHECK(a.boxes[i].x == b.boxes[i].x);
    CHECK(a.boxes[i].y == b.boxes[i].y);
    CHECK(a.boxes[i].w == b.boxes[i].w);
    CHECK(a.boxes[i].h == b.boxes[i].h);
  }
}

TEST_CASE("result files round trip") {
  const std::string path = (fs::temp_directory_path() / "drmim_result.txt").string();
  std::vector<Box> boxes{{1.5, 2.25, 30.0, 40.0}, {2.0, 3.0, 31.0, 41.0}};
  write_result_file(path, boxes);
  std::vector<Box> back = read_result_file(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].x == doctest::Approx(1.5));
  CHECK(back[1].h == doctest::Approx(41.0));
  fs::remove(path);
}
