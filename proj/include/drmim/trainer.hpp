#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "drmim/data.hpp"
#include "drmim/loss.hpp"
#include "drmim/model.hpp"

namespace drmim {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 5.0;  // global gradient norm cap; 0 disables
  int batch = 2;   // >= 2, MI negative sampling needs mismatched pairs
  int steps = 200;
  std::uint64_t seed = 1;
  LossWeights weights;
  double mu = 0.5;
  int start_step = 0;        // resumed runs continue the sampling schedule
  int checkpoint_every = 0;  // 0 = final checkpoint only
  std::string checkpoint_path;
  std::string log_path;
};

void validate_train_config(const TrainConfig& config);

struct TrainLogRecord {
  int step = 0;
  double total = 0.0;
  double cr = 0.0;
  double mi_global = 0.0;  // raw estimates; total = cr - (rho*g + gamma*l) + idsim
  double mi_local = 0.0;
  double idsim = 0.0;
  int n_pos = 0;
  double ms = 0.0;
};

constexpr const char* kTrainLogHeader = "step,total,cr,mi_global,mi_local,idsim,n_pos,ms";
std::string format_log_record(const TrainLogRecord& r);

struct SgdState {
  std::unordered_map<std::string, std::vector<double>> velocity;
};

// One SGD-with-momentum update over network and discriminators jointly.
TrainLogRecord train_step(ModelParams& params, const std::vector<TrainingTuple>& batch,
                          const TrainConfig& config, SgdState& opt);

// Full loop over sampled tuples; returns the final parameters and appends
// one CSV row per step to `records`.
ModelParams train(const ArchitectureSpec& spec, const TrainConfig& config,
                  const std::vector<Sequence>& dataset,
                  std::vector<TrainLogRecord>* records = nullptr,
                  const ModelParams* resume = nullptr);

}  // namespace drmim
