#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drmim/arch.hpp"
#include "drmim/geometry.hpp"
#include "drmim/tensor.hpp"

namespace drmim {

// Interleaved 8-bit RGB frame.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

struct Sequence {
  std::string name;
  std::vector<Image> frames;
  std::vector<Box> boxes;  // per-frame ground truth

  std::size_t size() const { return frames.size(); }
};

Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& image);

// Directory of 000001.ppm... frames plus groundtruth.txt ("x,y,w,h" lines).
Sequence load_sequence(const std::string& dir);
void save_sequence(const std::string& dir, const Sequence& seq);

struct SynthConfig {
  int canvas_w = 160;
  int canvas_h = 120;
  int length = 40;
  double obj_min = 26.0;
  double obj_max = 44.0;
  double vel_min = 0.5;
  double vel_max = 3.0;
  int clutter = 14;           // background rectangles
  double noise_sigma = 2.0;   // per-pixel Gaussian, 0..255 scale
  double drift_rate = 0.003;  // appearance drift per frame
  double occluder_prob = 0.03;
  std::uint64_t seed = 1;
};

// Moving textured rectangle over static clutter; deterministic given seed.
Sequence generate_synthetic(const SynthConfig& config);

// Square crop window in frame coordinates, resampled to out_size x out_size.
struct CropWindow {
  double cx = 0.0;
  double cy = 0.0;
  double side = 0.0;
  int out_size = 0;

  double scale() const { return static_cast<double>(out_size) / side; }
  Box to_crop(const Box& frame_box) const;
  Box to_frame(const Box& crop_box) const;
};

// Bilinear resample; samples outside the frame take the frame's channel means.
Tensor crop_resize(const Image& frame, const CropWindow& window);

// SiamFC-style context side: sqrt((w + p)(h + p)) with p = (w + h) / 2.
double context_side(const Box& box);

struct TrainingTuple {
  Tensor z;        // template crop, earlier frame
  Tensor x;        // search crop, later frame
  Tensor z_prime;  // same-identity template cut from the search frame gt
  Box gt_in_crop;  // ground truth in search-crop coordinates
  CropWindow x_window;  // recorded search-crop transform
};

// Frames at most 30 apart; the search crop center is jittered by up to
// +/-16 crop pixels so the target is not always centered.
TrainingTuple sample_tuple(const Sequence& seq, const ArchitectureSpec& spec,
                           std::uint64_t seed);

}  // namespace drmim
