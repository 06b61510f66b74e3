#include "drmim/arch.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <sstream>

#include "drmim/errors.hpp"

namespace drmim {

const BlockSpec& ArchitectureSpec::block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw ConfigError("architecture has no block '" + name + "'");
}

bool ArchitectureSpec::has_block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return true;
  }
  return false;
}

void validate_prune(const PruneConfig& prune) {
  if (!(prune.mu >= 0.0 && prune.mu <= 0.9)) {
    throw ConfigError("pruning ratio must lie in [0, 0.9], got " + std::to_string(prune.mu));
  }
}

int kept_channels(int channels, double mu) {
  const int kept = static_cast<int>(std::floor(channels * (1.0 - mu) + 0.5));
  if (kept < 1) {
    throw ConfigError("pruning ratio " + std::to_string(mu) + " rounds a " +
                      std::to_string(channels) + "-channel layer to zero channels");
  }
  return kept;
}

std::string BuiltLayer::param_name(const char* suffix) const {
  return block + "." + std::to_string(index) + "." + suffix;
}

std::size_t BuiltLayer::weight_count() const {
  return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
}

std::size_t BuiltLayer::param_count() const {
  return weight_count() + static_cast<std::size_t>(out_channels);
}

namespace {

const char* kRequiredBlocks[] = {
    "backbone",       "dr_unrelated",   "dr_related",     "neck_cls_z",
    "neck_cls_x",     "neck_reg_z",     "neck_reg_x",     "head_cls_tower",
    "head_cls_score", "head_quality",   "head_reg_tower", "head_reg_offsets",
    "disc_global",    "disc_local"};

int block_out_channels(const BlockSpec& b) { return b.layers.back().out_channels; }

int trace_size(const std::vector<ConvLayerSpec>& layers, int size) {
  for (const auto& l : layers) {
    size = (size + 2 * l.pad - l.kernel) / l.stride + 1;
    if (size < 1) throw ConfigError("block reduces feature map below 1x1");
  }
  return size;
}

}  // namespace

void validate_spec(const ArchitectureSpec& spec) {
  if (spec.in_channels < 1) throw ConfigError("in_channels must be positive");
  if (spec.template_size < 1 || spec.search_size <= spec.template_size) {
    throw ConfigError("need search_size > template_size >= 1");
  }
  for (const char* name : kRequiredBlocks) {
    if (!spec.has_block(name)) throw ConfigError(std::string("missing block '") + name + "'");
  }
  for (const auto& b : spec.blocks) {
    if (b.layers.empty()) throw ConfigError("block '" + b.name + "' has no layers");
    for (const auto& l : b.layers) {
      if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0) {
        throw ConfigError("block '" + b.name + "' has an invalid layer descriptor");
      }
    }
  }

  // E1 and E2 share one architecture (independent weights).
  const auto& e1 = spec.block("dr_unrelated").layers;
  const auto& e2 = spec.block("dr_related").layers;
  if (e1.size() != e2.size()) throw ConfigError("DR encoders must share layer count");
  for (std::size_t i = 0; i < e1.size(); ++i) {
    if (e1[i].out_channels != e2[i].out_channels || e1[i].kernel != e2[i].kernel ||
        e1[i].stride != e2[i].stride || e1[i].pad != e2[i].pad) {
      throw ConfigError("DR encoders must share layer shapes");
    }
  }

  int stride = 1;
  for (const auto& l : spec.block("backbone").layers) stride *= l.stride;
  if (stride != spec.total_stride) {
    throw ConfigError("backbone stride product " + std::to_string(stride) +
                      " does not match total_stride " + std::to_string(spec.total_stride));
  }
}

std::vector<BuiltLayer> resolve_layers(const ArchitectureSpec& spec, const PruneConfig& prune) {
  validate_spec(spec);
  validate_prune(prune);
  const double mu = prune.mu;

  // Pruned output width of each block, resolved in declaration order.
  auto block_width = [&](const std::string& name) {
    const auto& b = spec.block(name);
    int w = 0;
    for (const auto& l : b.layers) w = l.prune_out ? kept_channels(l.out_channels, mu) : l.out_channels;
    return w;
  };

  const int f_ch = block_width("backbone");
  const int fu_ch = block_width("dr_unrelated");
  const int fr_ch = block_width("dr_related");
  const int ftilde_ch = fr_ch + fu_ch;

  const int coords = spec.head_coords ? 2 : 0;
  auto input_width = [&](BlockInput input) {
    switch (input) {
      case BlockInput::Image: return spec.in_channels;
      case BlockInput::Backbone: return f_ch;
      case BlockInput::DrRelated: return fr_ch;
      case BlockInput::CoupledCls: return block_width("neck_cls_z") + coords;
      case BlockInput::CoupledReg: return block_width("neck_reg_z") + coords;
      case BlockInput::HeadClsTower: return block_width("head_cls_tower");
      case BlockInput::HeadRegTower: return block_width("head_reg_tower");
      case BlockInput::MiPairGlobal: return f_ch + ftilde_ch;
      case BlockInput::MiPairLocal: return f_ch + ftilde_ch;
    }
    throw ConfigError("unknown block input");
  };

  std::vector<BuiltLayer> out;
  for (const auto& b : spec.blocks) {
    int in_ch = input_width(b.input);
    for (std::size_t i = 0; i < b.layers.size(); ++i) {
      const auto& l = b.layers[i];
      BuiltLayer built;
      built.block = b.name;
      built.index = static_cast<int>(i);
      built.in_channels = in_ch;
      built.out_channels = l.prune_out ? kept_channels(l.out_channels, mu) : l.out_channels;
      built.kernel = l.kernel;
      built.stride = l.stride;
      built.pad = l.pad;
      built.relu = l.relu;
      out.push_back(built);
      in_ch = built.out_channels;
    }
  }
  return out;
}

Geometry trace_geometry(const ArchitectureSpec& spec) {
  Geometry g;
  g.backbone_template = trace_size(spec.block("backbone").layers, spec.template_size);
  g.backbone_search = trace_size(spec.block("backbone").layers, spec.search_size);
  int t = trace_size(spec.block("dr_related").layers, g.backbone_template);
  int s = trace_size(spec.block("dr_related").layers, g.backbone_search);
  g.neck_template = trace_size(spec.block("neck_cls_z").layers, t);
  g.neck_search = trace_size(spec.block("neck_cls_x").layers, s);
  if (g.neck_template > g.neck_search) throw ConfigError("template features exceed search features");
  g.score_size = g.neck_search - g.neck_template + 1;
  g.stride = spec.total_stride;
  g.offset = (spec.search_size - static_cast<double>(g.score_size - 1) * g.stride) / 2.0;
  return g;
}

ArchitectureSpec default_architecture(int template_size, int search_size) {
  ArchitectureSpec spec;
  spec.in_channels = 3;
  spec.template_size = template_size;
  spec.search_size = search_size;
  spec.total_stride = 8;

  // AlexNet-shaped backbone, scaled-down widths, stride carried by convs.
  spec.blocks.push_back(
      {"backbone",
       BlockInput::Image,
       {{32, 5, 2, 0, true, true},
        {64, 3, 2, 0, true, true},
        {96, 3, 2, 0, true, true},
        {96, 3, 1, 0, true, true},
        {64, 3, 1, 0, true, true}}});

  const std::vector<ConvLayerSpec> dr_layers = {{32, 3, 1, 1, true, true},
                                                {32, 3, 1, 1, false, true}};
  spec.blocks.push_back({"dr_unrelated", BlockInput::Backbone, dr_layers});
  spec.blocks.push_back({"dr_related", BlockInput::Backbone, dr_layers});

  const std::vector<ConvLayerSpec> neck = {{32, 3, 1, 0, true, true}};
  spec.blocks.push_back({"neck_cls_z", BlockInput::DrRelated, neck});
  spec.blocks.push_back({"neck_cls_x", BlockInput::DrRelated, neck});
  spec.blocks.push_back({"neck_reg_z", BlockInput::DrRelated, neck});
  spec.blocks.push_back({"neck_reg_x", BlockInput::DrRelated, neck});

  const std::vector<ConvLayerSpec> tower = {{32, 3, 1, 1, true, true},
                                            {32, 3, 1, 1, true, true}};
  spec.blocks.push_back({"head_cls_tower", BlockInput::CoupledCls, tower});
  spec.blocks.push_back({"head_cls_score", BlockInput::HeadClsTower, {{1, 3, 1, 1, false, false}}});
  spec.blocks.push_back({"head_quality", BlockInput::HeadClsTower, {{1, 3, 1, 1, false, false}}});
  spec.blocks.push_back({"head_reg_tower", BlockInput::CoupledReg, tower});
  spec.blocks.push_back({"head_reg_offsets", BlockInput::HeadRegTower, {{4, 3, 1, 1, false, false}}});

  // Global scorer flattens via a full-kernel conv over the template feature map.
  const int feat_t = trace_size(spec.block("backbone").layers, template_size);
  spec.blocks.push_back({"disc_global",
                         BlockInput::MiPairGlobal,
                         {{32, 1, 1, 0, true, false},
                          {16, feat_t, 1, 0, true, false},
                          {1, 1, 1, 0, false, false}}});
  spec.blocks.push_back({"disc_local",
                         BlockInput::MiPairLocal,
                         {{32, 1, 1, 0, true, false}, {1, 1, 1, 0, false, false}}});

  validate_spec(spec);
  return spec;
}

std::string canonical_description(const ArchitectureSpec& spec, const PruneConfig& prune) {
  std::ostringstream os;
  os << "drmim-arch v1\n";
  os << "in=" << spec.in_channels << " template=" << spec.template_size
     << " search=" << spec.search_size << " stride=" << spec.total_stride
     << " coords=" << (spec.head_coords ? 1 : 0) << "\n";
  char mu[32];
  std::snprintf(mu, sizeof(mu), "mu=%.17g\n", prune.mu);
  os << mu;
  for (const auto& l : resolve_layers(spec, prune)) {
    os << l.block << "." << l.index << " in=" << l.in_channels << " out=" << l.out_channels
       << " k=" << l.kernel << " s=" << l.stride << " p=" << l.pad << " relu=" << (l.relu ? 1 : 0)
       << "\n";
  }
  return os.str();
}

std::array<std::uint8_t, 32> spec_hash(const ArchitectureSpec& spec, const PruneConfig& prune) {
  const std::string text = canonical_description(spec, prune);
  std::array<std::uint8_t, 32> digest{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != digest.size()) {
    throw Error("internal", "SHA-256 digest failed");
  }
  return digest;
}

}  // namespace drmim
