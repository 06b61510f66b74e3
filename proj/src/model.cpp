#include "drmim/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "drmim/errors.hpp"
#include "drmim/rng.hpp"

namespace drmim {

bool ModelParams::has(const std::string& name) const { return index_.count(name) > 0; }

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) {
    if (name.rfind("meta.", 0) == 0) continue;
    n += t.numel();
  }
  return n;
}

void ModelParams::set_requires_grad(bool requires_grad) {
  for (auto& [name, t] : entries_) {
    t = Tensor::from_data(t.shape(), t.data(), requires_grad);
  }
}

void ModelParams::zero_grads() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ModelParams::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
}

void ModelParams::finish(ArchitectureSpec spec, PruneConfig prune, std::uint64_t seed) {
  spec_ = std::move(spec);
  prune_ = prune;
  seed_ = seed;
  geometry_ = trace_geometry(spec_);
  layers_ = resolve_layers(spec_, prune_);
  hash_ = spec_hash(spec_, prune_);
}

ModelParams build_model(const ArchitectureSpec& spec, const PruneConfig& prune,
                        std::uint64_t seed) {
  ModelParams params;
  params.finish(spec, prune, seed);

  Rng rng(seed);
  for (const auto& l : params.layers()) {
    const std::size_t n = l.weight_count();
    const double stddev = std::sqrt(2.0 / (static_cast<double>(l.in_channels) * l.kernel * l.kernel));
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = rng.normal() * stddev;
    params.add(l.param_name("weight"),
               Tensor::from_data({l.out_channels, l.in_channels, l.kernel, l.kernel},
                                 std::move(w), true));

    std::vector<double> b(static_cast<std::size_t>(l.out_channels), 0.0);
    if (l.block == "head_cls_score") {
      // classification prior ~0.01 keeps early focal loss from saturating
      std::fill(b.begin(), b.end(), -std::log(99.0));
    } else if (l.block == "head_reg_offsets") {
      // exp mapping starts near 16 px offsets
      std::fill(b.begin(), b.end(), std::log(16.0));
    }
    params.add(l.param_name("bias"), Tensor::from_data({l.out_channels}, std::move(b), true));
  }
  return params;
}

Tensor run_block(const ModelParams& params, const std::string& block, const Tensor& input) {
  Tensor x = input;
  bool found = false;
  for (const auto& l : params.layers()) {
    if (l.block != block) continue;
    found = true;
    x = conv2d(x, params.at(l.param_name("weight")), params.at(l.param_name("bias")),
               l.stride, l.pad);
    if (l.relu) x = relu(x);
  }
  if (!found) throw ContractError("model has no block '" + block + "'");
  return x;
}

Tensor backbone_forward(const ModelParams& params, const Tensor& crop) {
  const auto& spec = params.spec();
  if (crop.rank() != 3 || crop.dim(0) != spec.in_channels) {
    throw DimensionError("backbone input must be [" + std::to_string(spec.in_channels) +
                         ",s,s], got " + shape_str(crop.shape()));
  }
  const int s = crop.dim(1);
  if (crop.dim(2) != s || (s != spec.template_size && s != spec.search_size)) {
    throw DimensionError("backbone input side " + std::to_string(s) +
                         " is neither template_size nor search_size");
  }
  return run_block(params, "backbone", crop);
}

std::pair<Tensor, Tensor> dr_split(const ModelParams& params, const Tensor& f) {
  Tensor f_u = run_block(params, "dr_unrelated", f);
  Tensor f_r = run_block(params, "dr_related", f);
  return {f_u, f_r};
}

Tensor correlate(const Tensor& kernel, const Tensor& search) {
  Tensor response = depthwise_xcorr(kernel, search);
  return scalar_mul(response, 1.0 / (static_cast<double>(kernel.dim(1)) * kernel.dim(2)));
}

Tensor couple(const ModelParams& params, const Tensor& f_r_z, const Tensor& f_r_x, Task task) {
  Tensor kz = run_block(params, task == Task::Cls ? "neck_cls_z" : "neck_reg_z", f_r_z);
  Tensor kx = run_block(params, task == Task::Cls ? "neck_cls_x" : "neck_reg_x", f_r_x);
  return correlate(kz, kx);
}

namespace {

// two ramp channels in [-1,1]; gives the towers the grid location
Tensor coord_channels(int h, int w) {
  std::vector<double> v(static_cast<std::size_t>(2) * h * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      v[static_cast<std::size_t>(y) * w + x] = w > 1 ? 2.0 * x / (w - 1) - 1.0 : 0.0;
      v[static_cast<std::size_t>(h) * w + static_cast<std::size_t>(y) * w + x] =
          h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
    }
  }
  return Tensor::from_data({2, h, w}, std::move(v));
}

Tensor with_coords(const ModelParams& params, const Tensor& coupled) {
  if (!params.spec().head_coords) return coupled;
  return concat_channels(coupled, coord_channels(coupled.dim(1), coupled.dim(2)));
}

}  // namespace

HeadOutputs head_forward(const ModelParams& params, const Tensor& coupled_cls,
                         const Tensor& coupled_reg) {
  Tensor cls_tower = run_block(params, "head_cls_tower", with_coords(params, coupled_cls));
  Tensor reg_tower = run_block(params, "head_reg_tower", with_coords(params, coupled_reg));
  HeadOutputs out;
  out.cls_logits = run_block(params, "head_cls_score", cls_tower);
  out.quality_logits = run_block(params, "head_quality", cls_tower);
  // clamped exponent keeps the decoded offsets strictly positive and finite
  out.reg_offsets = exp(clamp(run_block(params, "head_reg_offsets", reg_tower), -12.0, 12.0));
  return out;
}

PairForward forward_pair(const ModelParams& params, const Tensor& z, const Tensor& x) {
  PairForward r;
  r.f_z = backbone_forward(params, z);
  auto [fu_z, fr_z] = dr_split(params, r.f_z);
  r.f_u_z = fu_z;
  r.f_r_z = fr_z;
  r.f_x = backbone_forward(params, x);
  r.f_r_x = dr_split(params, r.f_x).second;
  Tensor cc = couple(params, r.f_r_z, r.f_r_x, Task::Cls);
  Tensor cr = couple(params, r.f_r_z, r.f_r_x, Task::Reg);
  r.heads = head_forward(params, cc, cr);
  return r;
}

// --- checkpoint io ---

namespace {

constexpr char kMagic[6] = {'D', 'R', 'M', 'I', 'M', '1'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw CheckpointError("truncated checkpoint file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool done() const { return pos == buf.size(); }
};

void put_record(std::string& out, const std::string& name, const Shape& shape,
                const std::vector<double>& values) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) put_u64(out, static_cast<std::uint64_t>(d));
  for (double v : values) put_f64(out, v);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  out.push_back(static_cast<char>(kVersion));
  out.append(reinterpret_cast<const char*>(params.hash().data()), params.hash().size());

  put_record(out, "meta.mu", {1}, {params.mu()});
  put_record(out, "meta.seed", {1}, {std::bit_cast<double>(params.seed())});
  put_record(out, "meta.template_size", {1}, {static_cast<double>(params.spec().template_size)});
  put_record(out, "meta.search_size", {1}, {static_cast<double>(params.spec().search_size)});
  for (const auto& [name, t] : params.entries()) {
    put_record(out, name, t.shape(), t.data());
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint '" + path + "'");
}

ModelParams load_checkpoint(const std::string& path, const ArchitectureSpec* spec) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw CheckpointError("bad magic; not a DRMIM1 checkpoint");
  }
  const std::string ver = r.bytes(1);
  if (static_cast<std::uint8_t>(ver[0]) != kVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(static_cast<int>(static_cast<std::uint8_t>(ver[0]))));
  }
  std::array<std::uint8_t, 32> stored_hash{};
  const std::string hash_bytes = r.bytes(32);
  std::memcpy(stored_hash.data(), hash_bytes.data(), 32);

  double mu = -1.0;
  std::uint64_t seed = 0;
  int template_size = 0, search_size = 0;
  std::vector<std::pair<std::string, Tensor>> records;
  while (!r.done()) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t d = r.u64();
      if (d == 0 || d > (1u << 30)) throw CheckpointError("implausible extent in record '" + name + "'");
      shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    std::vector<double> values(numel);
    for (std::size_t i = 0; i < numel; ++i) values[i] = r.f64();

    if (name == "meta.mu") {
      mu = values.at(0);
    } else if (name == "meta.seed") {
      seed = std::bit_cast<std::uint64_t>(values.at(0));
    } else if (name == "meta.template_size") {
      template_size = static_cast<int>(values.at(0));
    } else if (name == "meta.search_size") {
      search_size = static_cast<int>(values.at(0));
    } else {
      records.emplace_back(name, Tensor::from_data(shape, std::move(values), true));
    }
  }
  if (mu < 0.0) throw CheckpointError("checkpoint is missing the meta.mu record");
  if (!spec && (template_size < 1 || search_size < 1)) {
    throw CheckpointError("checkpoint is missing the crop size records");
  }

  ArchitectureSpec arch = spec ? *spec : default_architecture(template_size, search_size);
  ModelParams params;
  params.finish(arch, PruneConfig{mu}, seed);
  if (params.hash() != stored_hash) {
    throw CheckpointError("spec hash mismatch; checkpoint was built from a different architecture");
  }

  // Records must cover the resolved layer set exactly, with matching shapes.
  for (auto& [name, t] : records) params.add(name, std::move(t));
  for (const auto& l : params.layers()) {
    for (const char* suffix : {"weight", "bias"}) {
      const std::string name = l.param_name(suffix);
      if (!params.has(name)) throw CheckpointError("checkpoint is missing record '" + name + "'");
      const Shape expect = std::strcmp(suffix, "weight") == 0
                               ? Shape{l.out_channels, l.in_channels, l.kernel, l.kernel}
                               : Shape{l.out_channels};
      if (params.at(name).shape() != expect) {
        throw CheckpointError("record '" + name + "' has shape " +
                              shape_str(params.at(name).shape()) + ", expected " +
                              shape_str(expect));
      }
    }
  }
  const std::size_t expected_records = params.layers().size() * 2;
  if (records.size() != expected_records) {
    throw CheckpointError("checkpoint holds " + std::to_string(records.size()) +
                          " records, expected " + std::to_string(expected_records));
  }
  return params;
}

}  // namespace drmim
