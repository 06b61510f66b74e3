#pragma once

#include <string>
#include <vector>

#include "drmim/data.hpp"
#include "drmim/model.hpp"

namespace drmim {

struct TrackerConfig {
  double window_influence = 0.3;  // cosine window blend weight
  double size_lr = 0.6;           // smoothing toward the newly decoded size
  double penalty_k = 0.04;        // scale / aspect change penalty exponent
};

struct TrackerState {
  Tensor kernel_cls;  // template features after the cls neck
  Tensor kernel_reg;  // template features after the reg neck
  Box box;            // current estimate, frame coordinates
  std::vector<double> window;  // S*S cosine window, peak at center
  TrackerConfig config;
};

// Crops a context template around the box and stores the identity-related
// template features. Rejects degenerate boxes (w or h < 2 px).
TrackerState tracker_init(const ModelParams& params, const Image& frame, const Box& box,
                          const TrackerConfig& config = {});

// One tracking step: search crop around the previous box, model forward,
// penalized and windowed argmax, box decode, size smoothing.
Box tracker_update(TrackerState& state, const ModelParams& params, const Image& frame);

struct TrackResult {
  std::vector<Box> boxes;                // one per frame, frame 1 = init box
  std::vector<double> update_seconds;    // per update() call, excludes init and io
};

// One-pass evaluation: ground truth is read only at frame 1.
TrackResult track_sequence(const ModelParams& params, const Sequence& seq,
                           const TrackerConfig& config = {});

void write_result_file(const std::string& path, const std::vector<Box>& boxes);
std::vector<Box> read_result_file(const std::string& path);

}  // namespace drmim
