#include "drmim/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "drmim/errors.hpp"
#include "drmim/rng.hpp"

namespace fs = std::filesystem;

namespace drmim {

// --- PPM (P6, maxval 255) ---

namespace {

int read_ppm_token(std::istream& in, const std::string& path) {
  // skip whitespace and '#' comments between header fields
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) throw ParseError(path + ": truncated PPM header");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw ParseError(path + ": malformed PPM header");
  return value;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw ParseError(path + ": not a binary PPM (P6) file");
  Image img;
  img.width = read_ppm_token(in, path);
  img.height = read_ppm_token(in, path);
  const int maxval = read_ppm_token(in, path);
  if (img.width <= 0 || img.height <= 0) throw ParseError(path + ": non-positive dimensions");
  if (maxval != 255) throw ParseError(path + ": only maxval 255 is supported");
  img.rgb.resize(img.pixel_count() * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.rgb.size()) {
    throw ParseError(path + ": truncated pixel data");
  }
  return img;
}

void write_ppm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

// --- sequence directory io ---

namespace {

std::string frame_name(std::size_t index1) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu.ppm", index1);
  return buf;
}

Box parse_box_line(const std::string& line, const std::string& path, std::size_t line_no) {
  std::array<double, 4> v{};
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    std::size_t used = 0;
    try {
      v[i] = std::stod(line.substr(pos), &used);
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'x,y,w,h', got '" +
                       line + "'");
    }
    pos += used;
    if (i < 3) {
      if (pos >= line.size() || line[pos] != ',') {
        throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'x,y,w,h', got '" +
                         line + "'");
      }
      ++pos;
    }
  }
  return Box{v[0], v[1], v[2], v[3]};
}

}  // namespace

Sequence load_sequence(const std::string& dir) {
  const fs::path root(dir);
  const std::string gt_path = (root / "groundtruth.txt").string();
  std::ifstream gt(gt_path);
  if (!gt) throw IoError("cannot open '" + gt_path + "'");

  Sequence seq;
  seq.name = root.filename().string();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(gt, line)) {
    ++line_no;
    if (line.empty()) continue;
    Box b = parse_box_line(line, gt_path, line_no);
    if (!(b.w > 0.0 && b.h > 0.0)) {
      throw ParseError(gt_path + ":" + std::to_string(line_no) + ": non-positive box size");
    }
    seq.boxes.push_back(b);
  }
  if (seq.boxes.empty()) throw ParseError(gt_path + ": no ground-truth boxes");

  for (std::size_t i = 1; i <= seq.boxes.size(); ++i) {
    const fs::path frame = root / frame_name(i);
    if (!fs::exists(frame)) {
      throw ParseError(dir + ": missing frame '" + frame_name(i) + "' (sequence has " +
                       std::to_string(seq.boxes.size()) + " annotations)");
    }
    seq.frames.push_back(read_ppm(frame.string()));
  }
  return seq;
}

void save_sequence(const std::string& dir, const Sequence& seq) {
  fs::create_directories(dir);
  const fs::path root(dir);
  std::ofstream gt(root / "groundtruth.txt", std::ios::trunc);
  if (!gt) throw IoError("cannot write groundtruth in '" + dir + "'");
  char line[128];
  for (std::size_t i = 0; i < seq.size(); ++i) {
    write_ppm((root / frame_name(i + 1)).string(), seq.frames[i]);
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f\n", seq.boxes[i].x, seq.boxes[i].y,
                  seq.boxes[i].w, seq.boxes[i].h);
    gt << line;
  }
}

// --- synthetic sequences ---

namespace {

struct Rect {
  int x, y, w, h;
  std::array<double, 3> color;
};

void fill_rect(Image& img, int x0, int y0, int w, int h, const std::array<double, 3>& color) {
  const int x1 = std::min(img.width, x0 + w);
  const int y1 = std::min(img.height, y0 + h);
  for (int y = std::max(0, y0); y < y1; ++y) {
    for (int x = std::max(0, x0); x < x1; ++x) {
      std::uint8_t* p = img.rgb.data() + (static_cast<std::size_t>(y) * img.width + x) * 3;
      for (int c = 0; c < 3; ++c) {
        p[c] = static_cast<std::uint8_t>(std::clamp(color[c], 0.0, 255.0));
      }
    }
  }
}

}  // namespace

Sequence generate_synthetic(const SynthConfig& config) {
  if (config.canvas_w < 16 || config.canvas_h < 16 || config.length < 1) {
    throw ConfigError("synthetic canvas must be at least 16x16 with length >= 1");
  }
  if (!(config.obj_min >= 4.0 && config.obj_max >= config.obj_min)) {
    throw ConfigError("object size range is invalid");
  }
  if (config.obj_max >= std::min(config.canvas_w, config.canvas_h)) {
    throw ConfigError("object does not fit the canvas");
  }

  Rng rng(config.seed);

  // static background: dim gradient plus clutter rectangles
  Image background;
  background.width = config.canvas_w;
  background.height = config.canvas_h;
  background.rgb.resize(background.pixel_count() * 3);
  const double base_r = rng.uniform(30.0, 70.0);
  const double base_g = rng.uniform(30.0, 70.0);
  const double base_b = rng.uniform(30.0, 70.0);
  for (int y = 0; y < background.height; ++y) {
    for (int x = 0; x < background.width; ++x) {
      std::uint8_t* p = background.rgb.data() + (static_cast<std::size_t>(y) * background.width + x) * 3;
      const double shade = 20.0 * (static_cast<double>(y) / background.height);
      p[0] = static_cast<std::uint8_t>(std::clamp(base_r + shade, 0.0, 255.0));
      p[1] = static_cast<std::uint8_t>(std::clamp(base_g + shade, 0.0, 255.0));
      p[2] = static_cast<std::uint8_t>(std::clamp(base_b + shade, 0.0, 255.0));
    }
  }
  std::vector<Rect> clutter;
  for (int i = 0; i < config.clutter; ++i) {
    Rect r;
    r.w = rng.uniform_int(6, 24);
    r.h = rng.uniform_int(6, 24);
    r.x = rng.uniform_int(0, std::max(0, config.canvas_w - r.w));
    r.y = rng.uniform_int(0, std::max(0, config.canvas_h - r.h));
    r.color = {rng.uniform(20.0, 120.0), rng.uniform(20.0, 120.0), rng.uniform(20.0, 120.0)};
    clutter.push_back(r);
  }
  for (const Rect& r : clutter) fill_rect(background, r.x, r.y, r.w, r.h, r.color);

  // object: bright 4x4 texture grid, distinct from the dim background
  const double ow = rng.uniform(config.obj_min, config.obj_max);
  const double oh = rng.uniform(config.obj_min, config.obj_max);
  constexpr int kCells = 4;
  std::array<std::array<double, 3>, kCells * kCells> texture_a, texture_b;
  for (auto& cell : texture_a) {
    cell = {rng.uniform(150.0, 255.0), rng.uniform(150.0, 255.0), rng.uniform(150.0, 255.0)};
  }
  for (auto& cell : texture_b) {
    cell = {rng.uniform(150.0, 255.0), rng.uniform(150.0, 255.0), rng.uniform(150.0, 255.0)};
  }

  double cx = rng.uniform(ow / 2.0 + 1.0, config.canvas_w - ow / 2.0 - 1.0);
  double cy = rng.uniform(oh / 2.0 + 1.0, config.canvas_h - oh / 2.0 - 1.0);
  const double speed = rng.uniform(config.vel_min, config.vel_max);
  const double heading = rng.uniform(0.0, 2.0 * M_PI);
  double vx = speed * std::cos(heading);
  double vy = speed * std::sin(heading);

  Sequence seq;
  seq.name = "synth_" + std::to_string(config.seed);
  int occluder_frames_left = 0;
  Rect occluder{};

  for (int frame_idx = 0; frame_idx < config.length; ++frame_idx) {
    if (frame_idx > 0) {
      cx += vx;
      cy += vy;
      // reflect at walls so the box always fits the canvas
      const double min_cx = ow / 2.0, max_cx = config.canvas_w - ow / 2.0;
      const double min_cy = oh / 2.0, max_cy = config.canvas_h - oh / 2.0;
      if (cx < min_cx) { cx = 2.0 * min_cx - cx; vx = -vx; }
      if (cx > max_cx) { cx = 2.0 * max_cx - cx; vx = -vx; }
      if (cy < min_cy) { cy = 2.0 * min_cy - cy; vy = -vy; }
      if (cy > max_cy) { cy = 2.0 * max_cy - cy; vy = -vy; }
    }

    Image frame = background;
    const double drift = std::min(0.5, config.drift_rate * frame_idx);
    const int x0 = static_cast<int>(std::lround(cx - ow / 2.0));
    const int y0 = static_cast<int>(std::lround(cy - oh / 2.0));
    const int wi = std::max(1, static_cast<int>(std::lround(ow)));
    const int hi = std::max(1, static_cast<int>(std::lround(oh)));
    for (int ty = 0; ty < kCells; ++ty) {
      for (int tx = 0; tx < kCells; ++tx) {
        const auto& a = texture_a[static_cast<std::size_t>(ty) * kCells + tx];
        const auto& b = texture_b[static_cast<std::size_t>(ty) * kCells + tx];
        std::array<double, 3> mixed;
        for (int c = 0; c < 3; ++c) mixed[c] = (1.0 - drift) * a[c] + drift * b[c];
        const int cx0 = x0 + tx * wi / kCells;
        const int cy0 = y0 + ty * hi / kCells;
        const int cx1 = x0 + (tx + 1) * wi / kCells;
        const int cy1 = y0 + (ty + 1) * hi / kCells;
        fill_rect(frame, cx0, cy0, cx1 - cx0, cy1 - cy0, mixed);
      }
    }

    if (occluder_frames_left > 0) {
      --occluder_frames_left;
      fill_rect(frame, occluder.x, occluder.y, occluder.w, occluder.h, occluder.color);
    } else if (rng.uniform() < config.occluder_prob) {
      occluder.w = std::max(4, wi / 2);
      occluder.h = hi + 8;
      occluder.x = x0 + rng.uniform_int(0, std::max(1, wi - occluder.w));
      occluder.y = y0 - 4;
      occluder.color = {90.0, 90.0, 90.0};
      occluder_frames_left = rng.uniform_int(1, 3);
      fill_rect(frame, occluder.x, occluder.y, occluder.w, occluder.h, occluder.color);
    }

    if (config.noise_sigma > 0.0) {
      for (std::uint8_t& v : frame.rgb) {
        const double noisy = static_cast<double>(v) + rng.normal(0.0, config.noise_sigma);
        v = static_cast<std::uint8_t>(std::clamp(noisy, 0.0, 255.0));
      }
    }

    seq.frames.push_back(std::move(frame));
    seq.boxes.push_back(Box{cx - ow / 2.0, cy - oh / 2.0, ow, oh});
  }
  return seq;
}

// --- crops ---

Box CropWindow::to_crop(const Box& frame_box) const {
  const double s = scale();
  return Box{(frame_box.x - (cx - side / 2.0)) * s, (frame_box.y - (cy - side / 2.0)) * s,
             frame_box.w * s, frame_box.h * s};
}

Box CropWindow::to_frame(const Box& crop_box) const {
  const double s = scale();
  return Box{crop_box.x / s + (cx - side / 2.0), crop_box.y / s + (cy - side / 2.0),
             crop_box.w / s, crop_box.h / s};
}

Tensor crop_resize(const Image& frame, const CropWindow& window) {
  if (window.out_size < 1 || !(window.side > 0.0)) {
    throw ContractError("crop window needs positive side and output size");
  }
  const int n = window.out_size;
  const int w = frame.width, h = frame.height;

  // frame channel means fill out-of-frame samples
  double mean_c[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < frame.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) mean_c[c] += frame.rgb[i * 3 + c];
  }
  for (double& m : mean_c) m /= (255.0 * static_cast<double>(frame.pixel_count()));

  auto sample = [&](int x, int y, int c) -> double {
    if (x < 0 || y < 0 || x >= w || y >= h) return mean_c[c];
    return frame.rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  };

  std::vector<double> out(static_cast<std::size_t>(3) * n * n);
  const double step = window.side / n;
  const double x_org = window.cx - window.side / 2.0;
  const double y_org = window.cy - window.side / 2.0;
  for (int oy = 0; oy < n; ++oy) {
    const double sy = y_org + (oy + 0.5) * step - 0.5;
    const int y0 = static_cast<int>(std::floor(sy));
    const double fy = sy - y0;
    for (int ox = 0; ox < n; ++ox) {
      const double sx = x_org + (ox + 0.5) * step - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - fy) * ((1.0 - fx) * sample(x0, y0, c) + fx * sample(x0 + 1, y0, c)) +
                         fy * ((1.0 - fx) * sample(x0, y0 + 1, c) + fx * sample(x0 + 1, y0 + 1, c));
        out[(static_cast<std::size_t>(c) * n + oy) * n + ox] = v;
      }
    }
  }
  return Tensor::from_data({3, n, n}, std::move(out));
}

double context_side(const Box& box) {
  const double p = (box.w + box.h) / 2.0;
  return std::sqrt((box.w + p) * (box.h + p));
}

TrainingTuple sample_tuple(const Sequence& seq, const ArchitectureSpec& spec,
                           std::uint64_t seed) {
  if (seq.size() < 1 || seq.size() != seq.boxes.size()) {
    throw ContractError("sequence needs matching frames and boxes");
  }
  Rng rng(seed);
  const int last = static_cast<int>(seq.size()) - 1;
  const int i = rng.uniform_int(0, last);
  const int gap = rng.uniform_int(0, std::min(30, last - i));
  const int j = i + gap;

  const Box& bz = seq.boxes[static_cast<std::size_t>(i)];
  const Box& bx = seq.boxes[static_cast<std::size_t>(j)];

  TrainingTuple t;
  // template: context crop like the tracker uses at init
  CropWindow zw{bz.cx(), bz.cy(), context_side(bz), spec.template_size};
  t.z = crop_resize(seq.frames[static_cast<std::size_t>(i)], zw);

  // search: context window scaled up, center jittered by up to 16 crop px,
  // side jittered so inference-time crop scales stay in distribution
  const double scale_jitter = std::exp(rng.uniform(std::log(0.8), std::log(1.25)));
  const double s_x = context_side(bx) * spec.search_size / spec.template_size * scale_jitter;
  const double crop_to_frame = s_x / spec.search_size;
  const double jx = rng.uniform(-16.0, 16.0) * crop_to_frame;
  const double jy = rng.uniform(-16.0, 16.0) * crop_to_frame;
  CropWindow xw{bx.cx() + jx, bx.cy() + jy, s_x, spec.search_size};
  t.x = crop_resize(seq.frames[static_cast<std::size_t>(j)], xw);
  t.gt_in_crop = xw.to_crop(bx);
  t.x_window = xw;

  // same-identity template: the search frame's exact gt region
  CropWindow zpw{bx.cx(), bx.cy(), std::max(bx.w, bx.h), spec.template_size};
  t.z_prime = crop_resize(seq.frames[static_cast<std::size_t>(j)], zpw);
  return t;
}

}  // namespace drmim
