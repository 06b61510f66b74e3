#include "drmim/tracker.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "drmim/errors.hpp"
#include "drmim/loss.hpp"

namespace drmim {

namespace {

std::vector<double> cosine_window(int s) {
  // outer product of Hann windows, normalized to [0,1] with peak at center
  std::vector<double> hann(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    hann[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * (i + 1) / (s + 1)));
  }
  std::vector<double> w(static_cast<std::size_t>(s) * s);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      w[static_cast<std::size_t>(y) * s + x] = hann[static_cast<std::size_t>(y)] * hann[static_cast<std::size_t>(x)];
    }
  }
  return w;
}

double size_with_context(double w, double h) {
  const double p = (w + h) / 2.0;
  return std::sqrt((w + p) * (h + p));
}

double change_ratio(double a, double b) { return std::max(a / b, b / a); }

}  // namespace

TrackerState tracker_init(const ModelParams& params, const Image& frame, const Box& box,
                          const TrackerConfig& config) {
  if (box.w < 2.0 || box.h < 2.0) {
    throw ContractError("initial box is degenerate (needs w,h >= 2 px)");
  }
  if (box.x2() <= 0.0 || box.y2() <= 0.0 || box.x >= frame.width || box.y >= frame.height) {
    throw ContractError("initial box lies outside the frame");
  }

  const auto& spec = params.spec();
  CropWindow zw{box.cx(), box.cy(), context_side(box), spec.template_size};
  Tensor z = crop_resize(frame, zw);
  Tensor f_r = dr_split(params, backbone_forward(params, z)).second;

  TrackerState state;
  state.kernel_cls = run_block(params, "neck_cls_z", f_r);
  state.kernel_reg = run_block(params, "neck_reg_z", f_r);
  state.box = box;
  state.window = cosine_window(params.geometry().score_size);
  state.config = config;
  return state;
}

Box tracker_update(TrackerState& state, const ModelParams& params, const Image& frame) {
  if (!state.kernel_cls.defined()) throw ContractError("tracker is not initialized");
  const auto& spec = params.spec();
  const Geometry& geo = params.geometry();
  const GridGeometry grid = grid_from(geo);
  const int s = geo.score_size;

  const double s_z = context_side(state.box);
  const double s_x = s_z * spec.search_size / spec.template_size;
  CropWindow xw{state.box.cx(), state.box.cy(), s_x, spec.search_size};
  Tensor x = crop_resize(frame, xw);

  Tensor f_r_x = dr_split(params, backbone_forward(params, x)).second;
  Tensor cls_feat = run_block(params, "neck_cls_x", f_r_x);
  Tensor reg_feat = run_block(params, "neck_reg_x", f_r_x);
  HeadOutputs heads = head_forward(params, correlate(state.kernel_cls, cls_feat),
                                   correlate(state.kernel_reg, reg_feat));

  const auto& cls = heads.cls_logits.data();
  const auto& qual = heads.quality_logits.data();
  const auto& reg = heads.reg_offsets.data();
  const std::size_t hw = static_cast<std::size_t>(s) * s;

  // previous size expressed in crop pixels, for the change penalty
  const double crop_scale = static_cast<double>(spec.search_size) / s_x;
  const double prev_w = state.box.w * crop_scale;
  const double prev_h = state.box.h * crop_scale;
  const double prev_sc = size_with_context(prev_w, prev_h);
  const double prev_ratio = prev_w / prev_h;

  const double wi = state.config.window_influence;
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < hw; ++i) {
    const double score = 1.0 / (1.0 + std::exp(-cls[i])) / (1.0 + std::exp(-qual[i]));
    const double bw = reg[0 * hw + i] + reg[2 * hw + i];
    const double bh = reg[1 * hw + i] + reg[3 * hw + i];
    const double penalty = std::exp(-state.config.penalty_k *
                                    (change_ratio(bw / bh, prev_ratio) *
                                         change_ratio(size_with_context(bw, bh), prev_sc) -
                                     1.0));
    const double blended = (1.0 - wi) * penalty * score + wi * state.window[i];
    if (blended > best_score) {
      best_score = blended;
      best = i;
    }
  }

  const int iy = static_cast<int>(best / static_cast<std::size_t>(s));
  const int ix = static_cast<int>(best % static_cast<std::size_t>(s));
  const double px = grid.point_x(ix);
  const double py = grid.point_y(iy);
  const Box crop_box = decode_box(px, py, reg[0 * hw + best], reg[1 * hw + best],
                                  reg[2 * hw + best], reg[3 * hw + best]);
  const Box frame_box = xw.to_frame(crop_box);

  const double lr = state.config.size_lr;
  double new_w = (1.0 - lr) * state.box.w + lr * frame_box.w;
  double new_h = (1.0 - lr) * state.box.h + lr * frame_box.h;
  new_w = std::clamp(new_w, 2.0, static_cast<double>(frame.width));
  new_h = std::clamp(new_h, 2.0, static_cast<double>(frame.height));
  double cx = std::clamp(frame_box.cx(), 0.0, static_cast<double>(frame.width));
  double cy = std::clamp(frame_box.cy(), 0.0, static_cast<double>(frame.height));

  state.box = Box::from_center(cx, cy, new_w, new_h);
  return state.box;
}

TrackResult track_sequence(const ModelParams& params, const Sequence& seq,
                           const TrackerConfig& config) {
  if (seq.size() < 2) throw ContractError("track_sequence needs at least two frames");
  if (seq.boxes.size() != seq.frames.size()) {
    throw ContractError("sequence frame and annotation counts differ");
  }

  TrackResult result;
  TrackerState state = tracker_init(params, seq.frames[0], seq.boxes[0], config);
  result.boxes.push_back(state.box);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Box box = tracker_update(state, params, seq.frames[i]);
    result.update_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    result.boxes.push_back(box);
  }
  return result;
}

void write_result_file(const std::string& path, const std::vector<Box>& boxes) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open result file '" + path + "'");
  char line[160];
  for (const Box& b : boxes) {
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f\n", b.x, b.y, b.w, b.h);
    out << line;
  }
}

std::vector<Box> read_result_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open result file '" + path + "'");
  std::vector<Box> boxes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    double x = 0, y = 0, w = 0, h = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &x, &y, &w, &h) != 4) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'x,y,w,h'");
    }
    boxes.push_back(Box{x, y, w, h});
  }
  return boxes;
}

}  // namespace drmim
