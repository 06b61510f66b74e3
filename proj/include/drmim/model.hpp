#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "drmim/arch.hpp"
#include "drmim/tensor.hpp"

namespace drmim {

// Learned weights for one built network. Entries keep build order so
// initialization and checkpoints are reproducible byte for byte.
class ModelParams {
 public:
  ModelParams() = default;

  const ArchitectureSpec& spec() const { return spec_; }
  const Geometry& geometry() const { return geometry_; }
  double mu() const { return prune_.mu; }
  const PruneConfig& prune() const { return prune_; }
  std::uint64_t seed() const { return seed_; }
  const std::array<std::uint8_t, 32>& hash() const { return hash_; }
  const std::vector<BuiltLayer>& layers() const { return layers_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  bool has(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t parameter_count() const;
  void set_requires_grad(bool requires_grad);
  void zero_grads();

 private:
  friend ModelParams build_model(const ArchitectureSpec&, const PruneConfig&, std::uint64_t);
  friend ModelParams load_checkpoint(const std::string&, const ArchitectureSpec*);

  void add(const std::string& name, Tensor t);
  void finish(ArchitectureSpec spec, PruneConfig prune, std::uint64_t seed);

  ArchitectureSpec spec_;
  PruneConfig prune_;
  Geometry geometry_;
  std::uint64_t seed_ = 0;
  std::array<std::uint8_t, 32> hash_{};
  std::vector<BuiltLayer> layers_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Prunes channel counts by the global ratio, then allocates seeded
// fan-in-scaled Gaussian weights. Same (spec, mu, seed) gives identical bits.
ModelParams build_model(const ArchitectureSpec& spec, const PruneConfig& prune,
                        std::uint64_t seed);

enum class Task { Cls, Reg };

struct HeadOutputs {
  Tensor cls_logits;      // [1,S,S]
  Tensor quality_logits;  // [1,S,S]
  Tensor reg_offsets;     // [4,S,S], l/t/r/b in crop pixels, positive
};

Tensor run_block(const ModelParams& params, const std::string& block, const Tensor& input);

// crop must match template_size or search_size
Tensor backbone_forward(const ModelParams& params, const Tensor& crop);

// f -> (f_u, f_r) = (E1(f), E2(f))
std::pair<Tensor, Tensor> dr_split(const ModelParams& params, const Tensor& f);

// depthwise cross-correlation normalized by the kernel window area; raw
// window sums grow with kernel size and destabilize the heads
Tensor correlate(const Tensor& kernel, const Tensor& search);

// task-specific neck on each branch, then normalized cross-correlation
Tensor couple(const ModelParams& params, const Tensor& f_r_z, const Tensor& f_r_x, Task task);

HeadOutputs head_forward(const ModelParams& params, const Tensor& coupled_cls,
                         const Tensor& coupled_reg);

// Template-to-response pipeline for one (Z, X) pair.
struct PairForward {
  Tensor f_z, f_u_z, f_r_z;
  Tensor f_x, f_r_x;
  HeadOutputs heads;
};
PairForward forward_pair(const ModelParams& params, const Tensor& z, const Tensor& x);

// Binary checkpoint: magic "DRMIM1", version byte, 32-byte spec hash, then
// {name_len u32, name, rank u32, extents u64[], values f64[]} records, all
// little-endian. mu and seed ride as leading meta records.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path, const ArchitectureSpec* spec = nullptr);

}  // namespace drmim
