#include "drmim/loss.hpp"

#include <cmath>

#include "drmim/errors.hpp"

namespace drmim {

void validate_weights(const LossWeights& w) {
  for (double v : {w.rho, w.gamma, w.omega, w.lambda1, w.lambda2, w.focal_alpha, w.focal_gamma}) {
    if (!(v >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
}

Tensor jsd_mi(const std::vector<Tensor>& scores_joint, const std::vector<Tensor>& scores_marginal) {
  if (scores_joint.empty() || scores_marginal.empty()) {
    throw ContractError("jsd_mi needs non-empty joint and marginal score sets");
  }
  auto mean_of = [](const std::vector<Tensor>& scores, bool negate_input) {
    Tensor acc;
    for (const Tensor& s : scores) {
      Tensor term = mean(softplus(negate_input ? scalar_mul(s, -1.0) : s));
      acc = acc.defined() ? add(acc, term) : term;
    }
    return scalar_mul(acc, 1.0 / static_cast<double>(scores.size()));
  };
  // mean(-softplus(-joint)) - mean(softplus(marginal))
  return sub(scalar_mul(mean_of(scores_joint, true), -1.0), mean_of(scores_marginal, false));
}

namespace {

void check_batch(const std::vector<Tensor>& fs, const std::vector<Tensor>& f_tildes) {
  if (fs.size() != f_tildes.size()) throw ContractError("MI batch lists differ in length");
  if (fs.size() < 2) throw ContractError("MI estimation needs batch size >= 2 for negative pairs");
}

}  // namespace

Tensor global_mi(const std::vector<Tensor>& fs, const std::vector<Tensor>& f_tildes,
                 const PairScorer& scorer) {
  check_batch(fs, f_tildes);
  const std::size_t b = fs.size();
  std::vector<Tensor> joint, marginal;
  joint.reserve(b);
  marginal.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    joint.push_back(scorer(fs[i], f_tildes[i]));
    marginal.push_back(scorer(fs[i], f_tildes[(i + 1) % b]));  // cyclic derangement
  }
  return jsd_mi(joint, marginal);
}

Tensor local_mi(const std::vector<Tensor>& fs, const std::vector<Tensor>& f_tildes,
                const PairScorer& map_scorer) {
  check_batch(fs, f_tildes);
  const std::size_t b = fs.size();
  std::vector<Tensor> joint, marginal;
  joint.reserve(b);
  marginal.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    joint.push_back(map_scorer(fs[i], f_tildes[i]));
    marginal.push_back(map_scorer(fs[i], f_tildes[(i + 1) % b]));
  }
  // Sites share the batch expectation, so averaging every site score of
  // every element equals the mean over sites of per-site JSD terms.
  return jsd_mi(joint, marginal);
}

Tensor disc_global_score(const ModelParams& params, const Tensor& f, const Tensor& f_tilde) {
  Tensor scored = run_block(params, "disc_global", concat_channels(f, f_tilde));
  return sum(scored);  // [1,1,1] -> scalar
}

Tensor disc_local_scores(const ModelParams& params, const Tensor& f, const Tensor& f_tilde) {
  Tensor summary = broadcast_spatial(spatial_mean(f_tilde), f.dim(1), f.dim(2));
  return run_block(params, "disc_local", concat_channels(f, summary));
}

PairScorer make_global_scorer(const ModelParams& params) {
  return [&params](const Tensor& f, const Tensor& ft) { return disc_global_score(params, f, ft); };
}

PairScorer make_local_scorer(const ModelParams& params) {
  return [&params](const Tensor& f, const Tensor& ft) { return disc_local_scores(params, f, ft); };
}

Tensor mi_loss(const std::vector<Tensor>& fs, const std::vector<Tensor>& f_tildes,
               const ModelParams& params, const LossWeights& w) {
  Tensor total;
  if (w.rho > 0.0) {
    total = scalar_mul(global_mi(fs, f_tildes, make_global_scorer(params)), w.rho);
  }
  if (w.gamma > 0.0) {
    Tensor local = scalar_mul(local_mi(fs, f_tildes, make_local_scorer(params)), w.gamma);
    total = total.defined() ? add(total, local) : local;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

Tensor idsim_loss(const Tensor& f_r_z, const Tensor& f_r_zprime, double omega) {
  if (f_r_z.shape() != f_r_zprime.shape()) {
    throw DimensionError("idsim_loss: feature shapes differ");
  }
  return scalar_mul(squared_l2(sub(f_r_z, f_r_zprime)), omega);
}

GridGeometry grid_from(const Geometry& g) {
  return GridGeometry{g.score_size, g.stride, g.offset};
}

TargetMaps assign_targets(const GridGeometry& grid, const Box& gt) {
  if (!(gt.w > 0.0 && gt.h > 0.0)) throw ContractError("ground-truth box must have positive size");
  const int s = grid.score_size;
  TargetMaps t;
  t.score_size = s;
  t.cls_labels.assign(static_cast<std::size_t>(s) * s, 0.0);
  t.quality.assign(static_cast<std::size_t>(s) * s, 0.0);
  t.reg.assign(static_cast<std::size_t>(4) * s * s, 0.0);

  const std::size_t hw = static_cast<std::size_t>(s) * s;
  for (int iy = 0; iy < s; ++iy) {
    const double py = grid.point_y(iy);
    for (int ix = 0; ix < s; ++ix) {
      const double px = grid.point_x(ix);
      const bool inside = px > gt.x && px < gt.x2() && py > gt.y && py < gt.y2();
      if (!inside) continue;
      const std::size_t i = static_cast<std::size_t>(iy) * s + ix;
      const double l = px - gt.x, r = gt.x2() - px;
      const double tp = py - gt.y, bt = gt.y2() - py;
      t.cls_labels[i] = 1.0;
      t.reg[0 * hw + i] = l;
      t.reg[1 * hw + i] = tp;
      t.reg[2 * hw + i] = r;
      t.reg[3 * hw + i] = bt;
      t.quality[i] = std::sqrt((std::min(l, r) / std::max(l, r)) *
                               (std::min(tp, bt) / std::max(tp, bt)));
      ++t.n_pos;
    }
  }
  return t;
}

namespace {

void check_map(const Tensor& m, int channels, int s, const char* what) {
  if (m.rank() != 3 || m.dim(0) != channels || m.dim(1) != s || m.dim(2) != s) {
    throw DimensionError(std::string(what) + " must be [" + std::to_string(channels) + "," +
                         std::to_string(s) + "," + std::to_string(s) + "], got " +
                         shape_str(m.shape()));
  }
}

}  // namespace

Tensor focal_loss(const Tensor& cls_logits, const TargetMaps& targets, double alpha,
                  double gamma_f) {
  const int s = targets.score_size;
  check_map(cls_logits, 1, s, "cls_logits");
  const Shape map_shape{1, s, s};
  Tensor pos = Tensor::from_data(map_shape, targets.cls_labels);
  std::vector<double> neg_mask(targets.cls_labels.size());
  for (std::size_t i = 0; i < neg_mask.size(); ++i) neg_mask[i] = 1.0 - targets.cls_labels[i];
  Tensor neg = Tensor::from_data(map_shape, std::move(neg_mask));

  Tensor p = sigmoid(cls_logits);
  // stable log-probabilities via softplus
  Tensor log_p = scalar_mul(softplus(scalar_mul(cls_logits, -1.0)), -1.0);
  Tensor log_1mp = scalar_mul(softplus(cls_logits), -1.0);
  Tensor one_m_p = scalar_add(scalar_mul(p, -1.0), 1.0);

  Tensor pos_term = mul(pos, mul(pow_const(one_m_p, gamma_f), log_p));
  Tensor neg_term = mul(neg, mul(pow_const(p, gamma_f), log_1mp));
  return add(scalar_mul(sum(pos_term), -alpha), scalar_mul(sum(neg_term), -(1.0 - alpha)));
}

Tensor quality_bce(const Tensor& quality_logits, const TargetMaps& targets) {
  const int s = targets.score_size;
  check_map(quality_logits, 1, s, "quality_logits");
  const Shape map_shape{1, s, s};
  Tensor mask = Tensor::from_data(map_shape, targets.cls_labels);
  Tensor q = Tensor::from_data(map_shape, targets.quality);
  std::vector<double> one_m_q(targets.quality.size());
  for (std::size_t i = 0; i < one_m_q.size(); ++i) one_m_q[i] = 1.0 - targets.quality[i];
  Tensor q_c = Tensor::from_data(map_shape, std::move(one_m_q));

  Tensor log_p = scalar_mul(softplus(scalar_mul(quality_logits, -1.0)), -1.0);
  Tensor log_1mp = scalar_mul(softplus(quality_logits), -1.0);
  Tensor bce = scalar_mul(add(mul(q, log_p), mul(q_c, log_1mp)), -1.0);
  return sum(mul(mask, bce));
}

Tensor iou_loss(const Tensor& reg_offsets, const TargetMaps& targets, const GridGeometry& grid) {
  const int s = targets.score_size;
  check_map(reg_offsets, 4, s, "reg_offsets");
  (void)grid;  // decoding cancels out: IoU at a shared point depends only on offsets
  const std::size_t hw = static_cast<std::size_t>(s) * s;
  const Shape map_shape{1, s, s};

  // gt offsets dummied to 1 at negatives so log stays defined; masked after
  auto gt_channel = [&](int c) {
    std::vector<double> v(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      v[i] = targets.cls_labels[i] > 0.0 ? targets.reg[static_cast<std::size_t>(c) * hw + i] : 1.0;
    }
    return Tensor::from_data(map_shape, std::move(v));
  };
  Tensor lg = gt_channel(0), tg = gt_channel(1), rg = gt_channel(2), bg = gt_channel(3);
  Tensor lp = slice_channels(reg_offsets, 0, 1);
  Tensor tp = slice_channels(reg_offsets, 1, 1);
  Tensor rp = slice_channels(reg_offsets, 2, 1);
  Tensor bp = slice_channels(reg_offsets, 3, 1);

  Tensor iw = add(minimum(lp, lg), minimum(rp, rg));
  Tensor ih = add(minimum(tp, tg), minimum(bp, bg));
  Tensor inter = mul(iw, ih);
  Tensor area_p = mul(add(lp, rp), add(tp, bp));
  Tensor area_g = mul(add(lg, rg), add(tg, bg));
  Tensor uni = sub(add(area_p, area_g), inter);
  Tensor neg_log_iou = scalar_mul(log(div(inter, uni)), -1.0);

  Tensor mask = Tensor::from_data(map_shape, targets.cls_labels);
  return sum(mul(mask, neg_log_iou));
}

CrLoss cr_loss(const HeadOutputs& heads, const TargetMaps& targets, const GridGeometry& grid,
               const LossWeights& w) {
  validate_weights(w);
  CrLoss out;
  out.n_pos = targets.n_pos;
  out.no_positives = targets.n_pos == 0;

  Tensor focal = focal_loss(heads.cls_logits, targets, w.focal_alpha, w.focal_gamma);
  if (out.no_positives) {
    out.value = focal;  // normalized by 1; quality/reg have no support
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(targets.n_pos);
  Tensor total = focal;
  if (w.lambda1 > 0.0) {
    total = add(total, scalar_mul(quality_bce(heads.quality_logits, targets), w.lambda1));
  }
  if (w.lambda2 > 0.0) {
    total = add(total, scalar_mul(iou_loss(heads.reg_offsets, targets, grid), w.lambda2));
  }
  out.value = scalar_mul(total, inv_n);
  return out;
}

Tensor total_loss(const Tensor& cr, const Tensor& mi_global, const Tensor& mi_local,
                  const Tensor& idsim, const LossWeights& w) {
  if (!cr.defined() || !cr.is_scalar()) throw ContractError("total_loss needs a scalar cr term");
  Tensor total = cr;
  Tensor mi;
  if (w.rho > 0.0 && mi_global.defined()) mi = scalar_mul(mi_global, w.rho);
  if (w.gamma > 0.0 && mi_local.defined()) {
    Tensor lt = scalar_mul(mi_local, w.gamma);
    mi = mi.defined() ? add(mi, lt) : lt;
  }
  if (mi.defined()) total = sub(total, mi);  // maximize MI inside a minimized total
  if (w.omega > 0.0 && idsim.defined()) total = add(total, idsim);
  return total;
}

double exact_mi_gaussian(double correlation) {
  if (!(std::abs(correlation) < 1.0)) {
    throw DomainError("bivariate Gaussian MI needs |correlation| < 1");
  }
  return -0.5 * std::log(1.0 - correlation * correlation);
}

Box decode_box(double px, double py, double l, double t, double r, double b) {
  return Box{px - l, py - t, l + r, t + b};
}

}  // namespace drmim
