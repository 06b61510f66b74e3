#pragma once

#include <functional>
#include <vector>

#include "drmim/geometry.hpp"
#include "drmim/model.hpp"
#include "drmim/tensor.hpp"

namespace drmim {

struct LossWeights {
  double rho = 0.05;    // global MI coefficient
  double gamma = 0.05;  // local MI coefficient
  double omega = 0.05;  // identity similarity coefficient
  double lambda1 = 1.0;  // quality term
  double lambda2 = 3.0;  // regression term
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

void validate_weights(const LossWeights& w);

// Jensen-Shannon MI surrogate over discriminator scores:
// mean(-softplus(-joint)) - mean(softplus(marginal)). Bounded above by 0,
// equals -2 ln 2 when every score is 0.
Tensor jsd_mi(const std::vector<Tensor>& scores_joint, const std::vector<Tensor>& scores_marginal);

using PairScorer = std::function<Tensor(const Tensor& f, const Tensor& f_tilde)>;

// Joint pairs (f_i, ft_i); marginals pair f_i with ft of the next batch
// element (cyclic derangement). Batch size must be >= 2.
Tensor global_mi(const std::vector<Tensor>& fs, const std::vector<Tensor>& f_tildes,
                 const PairScorer& scorer);

// map_scorer returns one score per spatial site of f; the estimate averages
// the per-site JSD terms over sites and batch.
Tensor local_mi(const std::vector<Tensor>& fs, const std::vector<Tensor>& f_tildes,
                const PairScorer& map_scorer);

// Product discriminators backed by ModelParams blocks.
Tensor disc_global_score(const ModelParams& params, const Tensor& f, const Tensor& f_tilde);
Tensor disc_local_scores(const ModelParams& params, const Tensor& f, const Tensor& f_tilde);
PairScorer make_global_scorer(const ModelParams& params);
PairScorer make_local_scorer(const ModelParams& params);

// rho * global + gamma * local; an objective to maximize. Terms with zero
// weight are skipped entirely.
Tensor mi_loss(const std::vector<Tensor>& fs, const std::vector<Tensor>& f_tildes,
               const ModelParams& params, const LossWeights& w);

// omega * ||f_r(Z) - f_r(Z')||^2, summed over all elements
Tensor idsim_loss(const Tensor& f_r_z, const Tensor& f_r_zprime, double omega);

struct GridGeometry {
  int score_size = 0;
  int stride = 0;
  double offset = 0.0;  // crop pixel of grid location 0

  double point_x(int ix) const { return offset + static_cast<double>(stride) * ix; }
  double point_y(int iy) const { return offset + static_cast<double>(stride) * iy; }
};

GridGeometry grid_from(const Geometry& g);

// Per-location training targets for one search crop.
struct TargetMaps {
  int score_size = 0;
  std::vector<double> cls_labels;   // S*S, 0/1
  std::vector<double> quality;      // S*S, centerness at positives, else 0
  std::vector<double> reg;          // 4*S*S, l/t/r/b at positives, else 0
  int n_pos = 0;
};

// Positive iff the grid point lies strictly inside the box. Box outside the
// crop yields n_pos = 0 (flagged by the caller, not an error).
TargetMaps assign_targets(const GridGeometry& grid, const Box& gt);

// Per-location sums; cr_loss applies the 1/N_pos normalization.
Tensor focal_loss(const Tensor& cls_logits, const TargetMaps& targets, double alpha,
                  double gamma_f);
Tensor quality_bce(const Tensor& quality_logits, const TargetMaps& targets);
Tensor iou_loss(const Tensor& reg_offsets, const TargetMaps& targets, const GridGeometry& grid);

struct CrLoss {
  Tensor value;
  int n_pos = 0;
  bool no_positives = false;  // focal-only, normalized by 1
};

CrLoss cr_loss(const HeadOutputs& heads, const TargetMaps& targets, const GridGeometry& grid,
               const LossWeights& w);

// L = cr - (rho * mi_global + gamma * mi_local) + idsim. Undefined tensors
// and zero weights drop their term, leaving cr bit-identical when all three
// coefficients are zero.
Tensor total_loss(const Tensor& cr, const Tensor& mi_global, const Tensor& mi_local,
                  const Tensor& idsim, const LossWeights& w);

// Closed-form MI of a bivariate Gaussian; estimator-ordering test oracle.
double exact_mi_gaussian(double correlation);

// IoU of the boxes decoded from two positive l/t/r/b offset vectors at one
// grid point (used by iou_loss and the tracker's own decoding).
Box decode_box(double px, double py, double l, double t, double r, double b);

}  // namespace drmim
