#pragma once

#include <string>
#include <vector>

#include "drmim/geometry.hpp"

namespace drmim {

// OPE precision curve: thresholds 0..50 px step 1, headline at 20 px.
struct PrecisionCurve {
  std::vector<double> thresholds;
  std::vector<double> values;  // fraction of frames with center error <= tau
  double precision20 = 0.0;
};

// OPE success curve: IoU thresholds 0..1 step 0.05, strict inequality,
// AUC = mean over the threshold grid.
struct SuccessCurve {
  std::vector<double> thresholds;
  std::vector<double> values;  // fraction of frames with IoU > theta
  double auc = 0.0;
};

PrecisionCurve precision_curve(const std::vector<Box>& pred, const std::vector<Box>& gt);
SuccessCurve success_auc(const std::vector<Box>& pred, const std::vector<Box>& gt);

// frames / summed update wall time; init and io excluded by construction
double fps_report(const std::vector<double>& update_seconds);

struct SequenceEval {
  std::string name;
  int frames = 0;
  double precision20 = 0.0;
  double auc = 0.0;
  double fps = 0.0;
  PrecisionCurve precision;
  SuccessCurve success;
};

struct EvalReport {
  std::vector<SequenceEval> sequences;
  double mean_precision20 = 0.0;
  double mean_auc = 0.0;
  double mean_fps = 0.0;
};

EvalReport summarize(std::vector<SequenceEval> sequences);

// "sequence,frames,precision20,auc,fps" rows plus a trailing mean row
void write_report_csv(const std::string& path, const EvalReport& report);

// Self-contained SVG line plots; byte-deterministic for identical inputs.
void write_precision_svg(const std::string& path, const EvalReport& report);
void write_success_svg(const std::string& path, const EvalReport& report);

}  // namespace drmim
