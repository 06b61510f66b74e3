#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace drmim {

// What feeds the first layer of a block. Later layers chain within the block.
enum class BlockInput {
  Image,         // raw crop, spec.in_channels
  Backbone,      // backbone output f
  DrRelated,     // identity-related features f_r
  CoupledCls,    // cls correlation map
  CoupledReg,    // reg correlation map
  HeadClsTower,  // shared cls/quality tower output
  HeadRegTower,  // reg tower output
  MiPairGlobal,  // concat [f, f_tilde]
  MiPairLocal,   // concat [f, broadcast spatial summary of f_tilde]
};

struct ConvLayerSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  bool relu = true;
  bool prune_out = true;  // output channels subject to the global ratio
};

struct BlockSpec {
  std::string name;
  BlockInput input = BlockInput::Image;
  std::vector<ConvLayerSpec> layers;
};

// Declarative, unpruned network description. Channel counts here are the
// mu = 0 widths; build_model derives the pruned widths.
struct ArchitectureSpec {
  int in_channels = 3;
  int template_size = 96;
  int search_size = 256;
  int total_stride = 8;
  // two fixed coordinate ramp channels appended to each head tower input;
  // lets the towers regress location-dependent offsets from correlation maps
  bool head_coords = true;
  std::vector<BlockSpec> blocks;

  const BlockSpec& block(const std::string& name) const;
  bool has_block(const std::string& name) const;
};

struct PruneConfig {
  double mu = 0.5;  // global pruning ratio in [0, 0.9]
};

void validate_prune(const PruneConfig& prune);
void validate_spec(const ArchitectureSpec& spec);

// round-half-up; a prunable layer that would lose every channel is a
// configuration error
int kept_channels(int channels, double mu);

// One conv layer with pruning applied and input width resolved from wiring.
struct BuiltLayer {
  std::string block;
  int index = 0;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  bool relu = true;

  std::string param_name(const char* suffix) const;
  std::size_t weight_count() const;
  std::size_t param_count() const;  // weights + biases
};

std::vector<BuiltLayer> resolve_layers(const ArchitectureSpec& spec, const PruneConfig& prune);

// Feature-map and score-grid sizes traced through the layer arithmetic.
// Grid location i maps to crop pixel offset + stride * i.
struct Geometry {
  int backbone_template = 0;
  int backbone_search = 0;
  int neck_template = 0;
  int neck_search = 0;
  int score_size = 0;
  int stride = 0;
  double offset = 0.0;
};

Geometry trace_geometry(const ArchitectureSpec& spec);

ArchitectureSpec default_architecture(int template_size = 96, int search_size = 256);

// Canonical text form of (spec, mu); its SHA-256 is the checkpoint spec hash.
std::string canonical_description(const ArchitectureSpec& spec, const PruneConfig& prune);
std::array<std::uint8_t, 32> spec_hash(const ArchitectureSpec& spec, const PruneConfig& prune);

}  // namespace drmim
