#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "drmim/errors.hpp"
#include "drmim/model.hpp"
#include "drmim/rng.hpp"
#include "oracles.hpp"

using namespace drmim;
namespace fs = std::filesystem;

namespace {

Tensor random_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(3) * side * side);
  for (double& x : v) x = rng.uniform();
  return Tensor::from_data({3, side, side}, std::move(v));
}

std::string temp_path(const char* name) {
  return (fs::temp_directory_path() / (std::string("drmim_test_") + name)).string();
}

}  // namespace

TEST_CASE("mu = 0 keeps the spec widths exactly") {
  ArchitectureSpec spec = default_architecture();
  const auto layers = resolve_layers(spec, PruneConfig{0.0});
  for (const auto& l : layers) {
    if (l.block == "backbone" && l.index == 0) {
      CHECK(l.in_channels == 3);
      CHECK(l.out_channels == 32);
    }
    if (l.block == "backbone" && l.index == 4) CHECK(l.out_channels == 64);
    if (l.block == "dr_related" && l.index == 1) CHECK(l.out_channels == 32);
  }
}

TEST_CASE("mu = 0.5 halves a 64-channel layer") {
  ArchitectureSpec spec = default_architecture();
  for (const auto& l : resolve_layers(spec, PruneConfig{0.5})) {
    if (l.block == "backbone" && l.index == 1) CHECK(l.out_channels == 32);  // 64 -> 32
    if (l.block == "backbone" && l.index == 4) CHECK(l.out_channels == 32);
  }
}

TEST_CASE("channel rounding is half-up with a hard floor") {
  CHECK(kept_channels(5, 0.5) == 3);   // 2.5 rounds up
  CHECK(kept_channels(96, 0.5) == 48);
  CHECK(kept_channels(1, 0.5) == 1);   // 0.5 rounds to 1
  CHECK_THROWS_AS(kept_channels(1, 0.9), ConfigError);
  CHECK_THROWS_AS(validate_prune(PruneConfig{0.95}), ConfigError);
  CHECK_THROWS_AS(validate_prune(PruneConfig{-0.1}), ConfigError);
}

TEST_CASE("parameter counts match the independent counting oracle") {
  ArchitectureSpec spec = default_architecture();
  const Geometry geo = trace_geometry(spec);
  for (double mu : {0.0, 0.2, 0.5, 0.8}) {
    ModelParams params = build_model(spec, PruneConfig{mu}, 1);
    CHECK(params.parameter_count() == oracles::oracle_default_param_count(mu, geo.backbone_template));
  }
}

TEST_CASE("parameter count is monotone non-increasing in mu") {
  ArchitectureSpec spec = default_architecture();
  std::size_t prev = SIZE_MAX;
  for (double mu : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}) {
    std::size_t count = 0;
    for (const auto& l : resolve_layers(spec, PruneConfig{mu})) count += l.param_count();
    CHECK(count <= prev);
    prev = count;
  }
}

TEST_CASE("interior conv weight count scales like (1 - mu)^2") {
  ArchitectureSpec spec = default_architecture();
  const auto full = resolve_layers(spec, PruneConfig{0.0});
  const auto half = resolve_layers(spec, PruneConfig{0.5});
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (full[i].block == "backbone" && full[i].index == 3) {  // 96 -> 96 interior conv
      const double ratio = static_cast<double>(half[i].weight_count()) /
                           static_cast<double>(full[i].weight_count());
      CHECK(ratio == doctest::Approx(0.25).epsilon(1e-12));  // exact: 48*48 / (96*96)
    }
  }
}

TEST_CASE("identical (spec, mu, seed) builds bit-identical parameters") {
  ArchitectureSpec spec = default_architecture();
  ModelParams a = build_model(spec, PruneConfig{0.5}, 7);
  ModelParams b = build_model(spec, PruneConfig{0.5}, 7);
  REQUIRE(a.entries().size() == b.entries().size());
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& ta = a.entries()[i].second.data();
    const auto& tb = b.entries()[i].second.data();
    REQUIRE(ta.size() == tb.size());
    CHECK(std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(double)) == 0);
  }
  ModelParams c = build_model(spec, PruneConfig{0.5}, 8);
  CHECK(c.at("backbone.0.weight").data() != a.at("backbone.0.weight").data());
}

TEST_CASE("backbone template feature size follows the stride arithmetic") {
  ArchitectureSpec spec = default_architecture();
  const Geometry geo = trace_geometry(spec);
  CHECK(geo.backbone_template == 6);   // 96 through the 5-conv stride-8 stack
  CHECK(geo.backbone_search == 26);
  CHECK(geo.score_size == 21);
  CHECK(geo.offset == doctest::Approx(48.0));

  ModelParams params = build_model(spec, PruneConfig{0.5}, 1);
  Tensor f = backbone_forward(params, random_image(96, 1));
  CHECK(f.shape() == Shape{32, 6, 6});
  Tensor fx = backbone_forward(params, random_image(256, 2));
  CHECK(fx.shape() == Shape{32, 26, 26});
  CHECK_THROWS_AS(backbone_forward(params, random_image(100, 3)), DimensionError);
}

TEST_CASE("backbone forward is deterministic and zero-preserving") {
  ArchitectureSpec spec = default_architecture();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 3);
  Tensor img = random_image(96, 9);
  Tensor f1 = backbone_forward(params, img);
  Tensor f2 = backbone_forward(params, img);
  CHECK(std::memcmp(f1.data().data(), f2.data().data(), f1.numel() * sizeof(double)) == 0);

  // zero input with zero biases stays zero through conv + relu
  for (auto& [name, t] : params.entries()) {
    if (name.find(".bias") != std::string::npos) {
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    }
  }
  Tensor fz = backbone_forward(params, Tensor::zeros({3, 96, 96}));
  for (double v : fz.data()) CHECK(v == 0.0);
}

TEST_CASE("dr_split contract") {
  ArchitectureSpec spec = default_architecture();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 4);
  Tensor f = backbone_forward(params, random_image(96, 5));
  auto [f_u, f_r] = dr_split(params, f);

  SUBCASE("output widths follow the pruned encoder width") {
    CHECK(f_u.shape() == Shape{16, 6, 6});
    CHECK(f_r.shape() == Shape{16, 6, 6});
  }
  SUBCASE("concat feeds the discriminators") {
    Tensor ft = concat_channels(f_r, f_u);
    const auto& layers = params.layers();
    for (const auto& l : layers) {
      if (l.block == "disc_global" && l.index == 0) {
        CHECK(l.in_channels == f.dim(0) + ft.dim(0));
      }
    }
  }
  SUBCASE("E1 and E2 hold independent weights") {
    double max_diff = 0.0;
    for (std::size_t i = 0; i < f_u.numel(); ++i) {
      max_diff = std::max(max_diff, std::abs(f_u.data()[i] - f_r.data()[i]));
    }
    CHECK(max_diff > 1e-6);
  }
  SUBCASE("E1/E2 layer shape lists are twins") {
    const auto& e1 = spec.block("dr_unrelated").layers;
    const auto& e2 = spec.block("dr_related").layers;
    REQUIRE(e1.size() == e2.size());
    for (std::size_t i = 0; i < e1.size(); ++i) {
      CHECK(e1[i].out_channels == e2[i].out_channels);
      CHECK(e1[i].kernel == e2[i].kernel);
    }
  }
}

TEST_CASE("couple produces same-shape cls and reg maps") {
  ArchitectureSpec spec = default_architecture();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 6);
  Tensor f_r_z = dr_split(params, backbone_forward(params, random_image(96, 7))).second;
  Tensor f_r_x = dr_split(params, backbone_forward(params, random_image(256, 8))).second;
  Tensor cc = couple(params, f_r_z, f_r_x, Task::Cls);
  Tensor cr = couple(params, f_r_z, f_r_x, Task::Reg);
  CHECK(cc.shape() == cr.shape());
  CHECK(cc.dim(1) == params.geometry().score_size);

  SUBCASE("zero template features give a zero response map") {
    Tensor zero_z = Tensor::zeros(f_r_z.shape());
    Tensor response = couple(params, zero_z, f_r_x, Task::Cls);
    for (double v : response.data()) CHECK(v == 0.0);
  }

  SUBCASE("head accepts the coupled maps and emits matched spatial sizes") {
    HeadOutputs heads = head_forward(params, cc, cr);
    CHECK(heads.cls_logits.shape() == Shape{1, 21, 21});
    CHECK(heads.quality_logits.shape() == Shape{1, 21, 21});
    CHECK(heads.reg_offsets.shape() == Shape{4, 21, 21});
    for (double v : heads.reg_offsets.data()) CHECK(v > 0.0);
  }
}

TEST_CASE("full pair forward is differentiable to every parameter") {
  ArchitectureSpec spec = default_architecture();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 10);
  PairForward fwd = forward_pair(params, random_image(96, 11), random_image(256, 12));
  Tensor loss = add(sum(fwd.heads.cls_logits),
                    add(sum(fwd.heads.quality_logits), sum(fwd.heads.reg_offsets)));
  // the discriminators and E1 only join through the MI path
  Tensor ft = concat_channels(fwd.f_r_z, fwd.f_u_z);
  Tensor mi_in = concat_channels(fwd.f_z, ft);
  loss = add(loss, sum(run_block(params, "disc_global", mi_in)));
  loss = add(loss, sum(run_block(params, "disc_local", mi_in)));
  backward(loss);
  for (const auto& [name, t] : params.entries()) {
    CAPTURE(name);
    CHECK(t.has_grad());
  }
}

TEST_CASE("Siamese weight sharing: one backbone serves both branches") {
  ArchitectureSpec spec = default_architecture();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 13);
  Tensor img = random_image(96, 14);
  Tensor before = backbone_forward(params, img);

  params.at("backbone.2.weight").mutable_data()[123] += 0.25;
  Tensor after_z = backbone_forward(params, img);
  Tensor after_x = backbone_forward(params, img);

  bool changed = false;
  for (std::size_t i = 0; i < before.numel(); ++i) {
    if (after_z.data()[i] != before.data()[i]) changed = true;
    CHECK(after_z.data()[i] == after_x.data()[i]);
  }
  CHECK(changed);
}

TEST_CASE("checkpoint round trip is byte-exact") {
  ArchitectureSpec spec = default_architecture();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 21);
  const std::string p1 = temp_path("ckpt_a.bin");
  const std::string p2 = temp_path("ckpt_b.bin");
  save_checkpoint(params, p1);
  ModelParams loaded = load_checkpoint(p1);
  CHECK(loaded.mu() == 0.5);
  CHECK(loaded.seed() == 21);
  save_checkpoint(loaded, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("checkpoint validation rejects corruption") {
  ArchitectureSpec spec = default_architecture();
  ModelParams params = build_model(spec, PruneConfig{0.5}, 22);
  const std::string path = temp_path("ckpt_c.bin");
  save_checkpoint(params, path);

  SUBCASE("corrupted magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XX", 2);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  SUBCASE("wrong version byte") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(6);
    const char v = 9;
    f.write(&v, 1);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  SUBCASE("truncated file") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  SUBCASE("hash mismatch against a different architecture") {
    ArchitectureSpec other = default_architecture(96, 192);
    CHECK_THROWS_AS(load_checkpoint(path, &other), CheckpointError);
  }
  fs::remove(path);
}

TEST_CASE("checkpoint size shrinks by the oracle-predicted ratio") {
  ArchitectureSpec spec = default_architecture();
  const Geometry geo = trace_geometry(spec);
  const std::string p0 = temp_path("ckpt_mu0.bin");
  const std::string p5 = temp_path("ckpt_mu5.bin");
  save_checkpoint(build_model(spec, PruneConfig{0.0}, 1), p0);
  save_checkpoint(build_model(spec, PruneConfig{0.5}, 1), p5);

  // expected bytes: header + meta records + per-record name/rank/extents/values
  auto expected_bytes = [&](double mu) {
    std::size_t bytes = 6 + 1 + 32;
    for (const char* meta : {"meta.mu", "meta.seed", "meta.template_size", "meta.search_size"}) {
      bytes += 4 + std::strlen(meta) + 4 + 8 + 8;
    }
    for (const auto& l : resolve_layers(spec, PruneConfig{mu})) {
      const std::string w = l.param_name("weight"), b = l.param_name("bias");
      bytes += 4 + w.size() + 4 + 4 * 8 + 8 * l.weight_count();
      bytes += 4 + b.size() + 4 + 1 * 8 + 8 * static_cast<std::size_t>(l.out_channels);
    }
    return bytes;
  };
  CHECK(fs::file_size(p0) == expected_bytes(0.0));
  CHECK(fs::file_size(p5) == expected_bytes(0.5));
  CHECK(oracles::oracle_default_param_count(0.5, geo.backbone_template) <
        oracles::oracle_default_param_count(0.0, geo.backbone_template));
  CHECK(fs::file_size(p5) < fs::file_size(p0));
  fs::remove(p0);
  fs::remove(p5);
}
