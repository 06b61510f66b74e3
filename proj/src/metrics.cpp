#include "drmim/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "drmim/errors.hpp"

namespace drmim {

namespace {

void check_lengths(const std::vector<Box>& pred, const std::vector<Box>& gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw DimensionError("prediction and ground-truth lists must match and be non-empty");
  }
}

}  // namespace

PrecisionCurve precision_curve(const std::vector<Box>& pred, const std::vector<Box>& gt) {
  check_lengths(pred, gt);
  std::vector<double> errors(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) errors[i] = center_error(pred[i], gt[i]);

  PrecisionCurve curve;
  for (int tau = 0; tau <= 50; ++tau) {
    int hits = 0;
    for (double e : errors) {
      if (e <= static_cast<double>(tau)) ++hits;
    }
    curve.thresholds.push_back(static_cast<double>(tau));
    curve.values.push_back(static_cast<double>(hits) / static_cast<double>(errors.size()));
  }
  curve.precision20 = curve.values[20];
  return curve;
}

SuccessCurve success_auc(const std::vector<Box>& pred, const std::vector<Box>& gt) {
  check_lengths(pred, gt);
  std::vector<double> ious(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) ious[i] = iou(pred[i], gt[i]);

  SuccessCurve curve;
  double acc = 0.0;
  for (int k = 0; k <= 20; ++k) {
    const double theta = 0.05 * k;
    int hits = 0;
    for (double v : ious) {
      if (v > theta) ++hits;
    }
    const double frac = static_cast<double>(hits) / static_cast<double>(ious.size());
    curve.thresholds.push_back(theta);
    curve.values.push_back(frac);
    acc += frac;
  }
  curve.auc = acc / 21.0;
  return curve;
}

double fps_report(const std::vector<double>& update_seconds) {
  if (update_seconds.empty()) throw ContractError("fps_report needs at least one timed frame");
  double total = 0.0;
  for (double s : update_seconds) total += s;
  if (!(total > 0.0)) throw ContractError("fps_report needs positive total time");
  return static_cast<double>(update_seconds.size()) / total;
}

EvalReport summarize(std::vector<SequenceEval> sequences) {
  EvalReport report;
  report.sequences = std::move(sequences);
  if (report.sequences.empty()) return report;
  for (const auto& s : report.sequences) {
    report.mean_precision20 += s.precision20;
    report.mean_auc += s.auc;
    report.mean_fps += s.fps;
  }
  const double n = static_cast<double>(report.sequences.size());
  report.mean_precision20 /= n;
  report.mean_auc /= n;
  report.mean_fps /= n;
  return report;
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open report '" + path + "'");
  out << "sequence,frames,precision20,auc,fps\n";
  char line[256];
  int frames_total = 0;
  for (const auto& s : report.sequences) {
    std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.2f\n", s.name.c_str(), s.frames,
                  s.precision20, s.auc, s.fps);
    out << line;
    frames_total += s.frames;
  }
  std::snprintf(line, sizeof(line), "mean,%d,%.6f,%.6f,%.2f\n", frames_total,
                report.mean_precision20, report.mean_auc, report.mean_fps);
  out << line;
}

namespace {

constexpr int kPlotW = 640, kPlotH = 480;
constexpr int kMarginL = 56, kMarginR = 16, kMarginT = 40, kMarginB = 48;

const char* kSeriesColors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                               "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Series {
  std::string label;
  const std::vector<double>* xs;
  const std::vector<double>* ys;
};

void write_plot(const std::string& path, const std::string& title, const std::string& x_label,
                double x_max, const std::vector<Series>& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open plot '" + path + "'");
  char buf[512];

  auto px = [&](double x) { return kMarginL + x / x_max * (kPlotW - kMarginL - kMarginR); };
  auto py = [&](double y) { return kPlotH - kMarginB - y * (kPlotH - kMarginT - kMarginB); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPlotW << "\" height=\""
      << kPlotH << "\" viewBox=\"0 0 " << kPlotW << " " << kPlotH << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" "
                "text-anchor=\"middle\">%s</text>\n",
                kPlotW / 2, title.c_str());
  out << buf;

  // axes, ticks, gridlines
  for (int i = 0; i <= 5; ++i) {
    const double fy = i / 5.0;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#dddddd\"/>\n",
                  px(0.0), py(fy), px(x_max), py(fy));
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"end\">%.1f</text>\n",
                  px(0.0) - 6.0, py(fy) + 4.0, fy);
    out << buf;
    const double fx = x_max * i / 5.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"middle\">%.2f</text>\n",
                  px(fx), py(0.0) + 16.0, fx);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                px(0.0), py(0.0), px(x_max), py(0.0));
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                px(0.0), py(0.0), px(0.0), py(1.0));
  out << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" "
                "text-anchor=\"middle\">%s</text>\n",
                kPlotW / 2, kPlotH - 10, x_label.c_str());
  out << buf;

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kSeriesColors[s % (sizeof(kSeriesColors) / sizeof(kSeriesColors[0]))];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].xs->size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "", px((*series[s].xs)[i]),
                    py((*series[s].ys)[i]));
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                  "fill=\"%s\">%s</text>\n",
                  kPlotW - kMarginR - 180, kMarginT + 14 * static_cast<int>(s) + 8, color,
                  series[s].label.c_str());
    out << buf;
  }
  out << "</svg>\n";
}

std::string label_with(const std::string& name, const char* metric, double value) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s [%s %.3f]", name.c_str(), metric, value);
  return buf;
}

}  // namespace

void write_precision_svg(const std::string& path, const EvalReport& report) {
  std::vector<Series> series;
  std::vector<std::string> labels;
  labels.reserve(report.sequences.size());
  for (const auto& s : report.sequences) {
    labels.push_back(label_with(s.name, "p20", s.precision20));
    series.push_back({labels.back(), &s.precision.thresholds, &s.precision.values});
  }
  write_plot(path, "Precision (center error)", "location error threshold [px]", 50.0, series);
}

void write_success_svg(const std::string& path, const EvalReport& report) {
  std::vector<Series> series;
  std::vector<std::string> labels;
  labels.reserve(report.sequences.size());
  for (const auto& s : report.sequences) {
    labels.push_back(label_with(s.name, "auc", s.auc));
    series.push_back({labels.back(), &s.success.thresholds, &s.success.values});
  }
  write_plot(path, "Success (IoU > threshold, strict)", "overlap threshold", 1.0, series);
}

}  // namespace drmim
