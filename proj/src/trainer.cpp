#include "drmim/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "drmim/errors.hpp"
#include "drmim/rng.hpp"

namespace drmim {

void validate_train_config(const TrainConfig& config) {
  if (config.batch < 2) throw ConfigError("batch size must be >= 2 (MI negative sampling)");
  if (config.steps < 1) throw ConfigError("steps must be >= 1");
  if (!(config.lr >= 0.0) || !(config.momentum >= 0.0) || !(config.weight_decay >= 0.0)) {
    throw ConfigError("optimizer settings must be non-negative");
  }
  validate_weights(config.weights);
  validate_prune(PruneConfig{config.mu});
}

std::string format_log_record(const TrainLogRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.3f", r.step, r.total,
                r.cr, r.mi_global, r.mi_local, r.idsim, r.n_pos, r.ms);
  return buf;
}

namespace {

void sgd_update(ModelParams& params, const TrainConfig& config, SgdState& opt) {
  double scale = 1.0;
  if (config.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, t] : params.entries()) {
      if (!t.has_grad()) continue;
      for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config.grad_clip) scale = config.grad_clip / norm;
  }

  for (auto& [name, t] : params.entries()) {
    if (!t.has_grad()) continue;  // e.g. discriminators with MI disabled
    auto& v = opt.velocity[name];
    if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
    auto& data = t.mutable_data();
    const auto& g = t.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = config.momentum * v[i] + scale * g[i] + config.weight_decay * data[i];
      data[i] -= config.lr * v[i];
    }
  }
}

}  // namespace

TrainLogRecord train_step(ModelParams& params, const std::vector<TrainingTuple>& batch,
                          const TrainConfig& config, SgdState& opt) {
  if (batch.size() < 2) throw ContractError("train_step needs a batch of >= 2 tuples");
  const auto start = std::chrono::steady_clock::now();
  const LossWeights& w = config.weights;
  const GridGeometry grid = grid_from(params.geometry());

  params.zero_grads();

  std::vector<Tensor> fs, f_tildes;
  Tensor cr_sum, cr_fallback_sum, idsim_sum;
  int n_pos_total = 0;
  int cr_valid = 0;

  for (const TrainingTuple& tuple : batch) {
    PairForward fwd = forward_pair(params, tuple.z, tuple.x);
    TargetMaps targets = assign_targets(grid, tuple.gt_in_crop);
    CrLoss cr = cr_loss(fwd.heads, targets, grid, w);
    n_pos_total += cr.n_pos;
    if (cr.no_positives) {
      // skipped from the cr average, still counted for MI / idsim
      cr_fallback_sum = cr_fallback_sum.defined() ? add(cr_fallback_sum, cr.value) : cr.value;
    } else {
      cr_sum = cr_sum.defined() ? add(cr_sum, cr.value) : cr.value;
      ++cr_valid;
    }

    if (w.rho > 0.0 || w.gamma > 0.0) {
      fs.push_back(fwd.f_z);
      f_tildes.push_back(concat_channels(fwd.f_r_z, fwd.f_u_z));
    }
    if (w.omega > 0.0) {
      Tensor f_r_zp = dr_split(params, backbone_forward(params, tuple.z_prime)).second;
      Tensor term = idsim_loss(fwd.f_r_z, f_r_zp, w.omega);
      idsim_sum = idsim_sum.defined() ? add(idsim_sum, term) : term;
    }
  }

  Tensor cr_mean;
  if (cr_valid > 0) {
    cr_mean = scalar_mul(cr_sum, 1.0 / static_cast<double>(cr_valid));
  } else {
    cr_mean = scalar_mul(cr_fallback_sum, 1.0 / static_cast<double>(batch.size()));
  }

  Tensor mi_global, mi_local;
  if (w.rho > 0.0) mi_global = global_mi(fs, f_tildes, make_global_scorer(params));
  if (w.gamma > 0.0) mi_local = local_mi(fs, f_tildes, make_local_scorer(params));
  Tensor idsim_mean;
  if (idsim_sum.defined()) {
    idsim_mean = scalar_mul(idsim_sum, 1.0 / static_cast<double>(batch.size()));
  }

  Tensor total = total_loss(cr_mean, mi_global, mi_local, idsim_mean, w);
  if (!std::isfinite(total.item())) {
    throw TrainError("non-finite loss (" + std::to_string(total.item()) + ")");
  }
  backward(total);
  sgd_update(params, config, opt);

  TrainLogRecord rec;
  rec.total = total.item();
  rec.cr = cr_mean.item();
  rec.mi_global = mi_global.defined() ? mi_global.item() : 0.0;
  rec.mi_local = mi_local.defined() ? mi_local.item() : 0.0;
  rec.idsim = idsim_mean.defined() ? idsim_mean.item() : 0.0;
  rec.n_pos = n_pos_total;
  rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

ModelParams train(const ArchitectureSpec& spec, const TrainConfig& config,
                  const std::vector<Sequence>& dataset, std::vector<TrainLogRecord>* records,
                  const ModelParams* resume) {
  validate_train_config(config);
  if (dataset.empty()) throw ConfigError("training dataset is empty");

  ModelParams params =
      resume ? *resume : build_model(spec, PruneConfig{config.mu}, config.seed);
  SgdState opt;

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open training log '" + config.log_path + "'");
    log << kTrainLogHeader << "\n";
  }

  for (int i = 0; i < config.steps; ++i) {
    const int step = config.start_step + i + 1;
    Rng step_rng(mix_seed(config.seed, static_cast<std::uint64_t>(step)));
    std::vector<TrainingTuple> batch;
    batch.reserve(static_cast<std::size_t>(config.batch));
    for (int b = 0; b < config.batch; ++b) {
      const int seq = step_rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);
      const std::uint64_t tuple_seed = step_rng.next_u64();
      batch.push_back(sample_tuple(dataset[static_cast<std::size_t>(seq)], spec, tuple_seed));
    }

    TrainLogRecord rec;
    try {
      rec = train_step(params, batch, config, opt);
    } catch (const TrainError& e) {
      throw TrainError("step " + std::to_string(step) + ": " + e.what());
    }
    rec.step = step;
    if (records) records->push_back(rec);
    if (log) log << format_log_record(rec) << "\n";

    if (!config.checkpoint_path.empty() && config.checkpoint_every > 0 &&
        step % config.checkpoint_every == 0) {
      save_checkpoint(params, config.checkpoint_path);
    }
  }

  if (!config.checkpoint_path.empty()) save_checkpoint(params, config.checkpoint_path);
  return params;
}

}  // namespace drmim
