#include "drmim/selftest.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "drmim/loss.hpp"
#include "drmim/model.hpp"
#include "drmim/rng.hpp"
#include "drmim/tensor.hpp"

namespace drmim {

namespace {

// Weighted scalar so every output element sees a distinct adjoint.
Tensor weighted_sum(const Tensor& t, Rng& rng) {
  std::vector<double> w(t.numel());
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return sum(mul(t, Tensor::from_data(t.shape(), std::move(w))));
}

using OpBuilder = std::function<Tensor(std::vector<Tensor>&, Rng&)>;

double max_rel_err_fd(const OpBuilder& build, const std::vector<Shape>& input_shapes,
                      Rng& rng, double lo, double hi) {
  std::vector<Tensor> inputs;
  inputs.reserve(input_shapes.size());
  for (const Shape& s : input_shapes) {
    std::vector<double> v(shape_numel(s));
    for (double& x : v) x = rng.uniform(lo, hi);
    inputs.push_back(Tensor::from_data(s, std::move(v), true));
  }
  const std::uint64_t weight_seed = rng.next_u64();

  auto eval = [&]() {
    Rng wrng(weight_seed);
    std::vector<Tensor> in = inputs;
    return weighted_sum(build(in, wrng), wrng);
  };

  Tensor loss = eval();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& in : inputs) analytic.push_back(in.grad());

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& data = inputs[t].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = eval().item();
      data[i] = keep - h;
      const double down = eval().item();
      data[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

struct OpCheck {
  std::string name;
  std::vector<Shape> shapes;
  double lo, hi;
  OpBuilder build;
};

std::vector<OpCheck> op_checks() {
  auto u = [](std::vector<Tensor>& in, auto f) { return f(in[0]); };
  (void)u;
  return {
      {"conv2d", {{2, 5, 5}, {3, 2, 3, 3}, {3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return conv2d(in[0], in[1], in[2], 1, 0); }},
      {"conv2d_stride_pad", {{2, 6, 6}, {2, 2, 3, 3}, {2}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return conv2d(in[0], in[1], in[2], 2, 1); }},
      {"depthwise_xcorr", {{3, 2, 2}, {3, 5, 5}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return depthwise_xcorr(in[0], in[1]); }},
      {"softplus", {{2, 3, 3}}, -4.0, 4.0,
       [](std::vector<Tensor>& in, Rng&) { return softplus(in[0]); }},
      {"relu", {{2, 3, 3}}, 0.2, 2.0,
       [](std::vector<Tensor>& in, Rng&) { return relu(in[0]); }},
      {"sigmoid", {{2, 3, 3}}, -4.0, 4.0,
       [](std::vector<Tensor>& in, Rng&) { return sigmoid(in[0]); }},
      {"exp", {{2, 3, 3}}, -2.0, 2.0,
       [](std::vector<Tensor>& in, Rng&) { return exp(in[0]); }},
      {"log", {{2, 3, 3}}, 0.3, 3.0,
       [](std::vector<Tensor>& in, Rng&) { return log(in[0]); }},
      {"add", {{2, 3, 3}, {2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return add(in[0], in[1]); }},
      {"sub", {{2, 3, 3}, {2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return sub(in[0], in[1]); }},
      {"mul", {{2, 3, 3}, {2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return mul(in[0], in[1]); }},
      {"div", {{2, 3, 3}, {2, 3, 3}}, 0.5, 2.0,
       [](std::vector<Tensor>& in, Rng&) { return div(in[0], in[1]); }},
      {"minimum", {{2, 3, 3}, {2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return minimum(in[0], in[1]); }},
      {"scalar_mul", {{2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng& r) { return scalar_mul(in[0], r.uniform(-2.0, 2.0)); }},
      {"scalar_add", {{2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng& r) { return scalar_add(in[0], r.uniform(-2.0, 2.0)); }},
      {"clamp", {{2, 3, 3}}, -0.8, 0.8,
       [](std::vector<Tensor>& in, Rng&) { return clamp(in[0], -1.0, 1.0); }},
      {"pow_const", {{2, 3, 3}}, 0.3, 2.0,
       [](std::vector<Tensor>& in, Rng& r) { return pow_const(in[0], r.uniform(0.5, 3.0)); }},
      {"sum", {{2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return sum(in[0]); }},
      {"mean", {{2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return mean(in[0]); }},
      {"concat_channels", {{2, 3, 3}, {3, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return concat_channels(in[0], in[1]); }},
      {"slice_channels", {{4, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return slice_channels(in[0], 1, 2); }},
      {"squared_l2", {{2, 3, 3}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return squared_l2(in[0]); }},
      {"spatial_mean", {{3, 4, 4}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return spatial_mean(in[0]); }},
      {"broadcast_spatial", {{3, 1, 1}}, -1.0, 1.0,
       [](std::vector<Tensor>& in, Rng&) { return broadcast_spatial(in[0], 4, 5); }},
  };
}

bool report(std::ostream& out, const std::string& name, bool pass, const std::string& detail) {
  out << (pass ? "[PASS] " : "[FAIL] ") << name;
  if (!detail.empty()) out << " (" << detail << ")";
  out << "\n";
  return pass;
}

}  // namespace

int run_selftest(std::ostream& out) {
  bool all_pass = true;
  constexpr int kInstances = 20;
  constexpr double kTol = 1e-4;

  for (const OpCheck& check : op_checks()) {
    Rng rng(0x5e1f7e57 + std::hash<std::string>{}(check.name));
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      worst = std::max(worst, max_rel_err_fd(check.build, check.shapes, rng, check.lo, check.hi));
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max rel err %.3g", worst);
    all_pass &= report(out, "grad/" + check.name, worst < kTol, detail);
  }

  // estimator anchors
  {
    std::vector<Tensor> zeros{Tensor::scalar(0.0), Tensor::scalar(0.0)};
    const double v = jsd_mi(zeros, zeros).item();
    all_pass &= report(out, "jsd_mi(0,0) = -2 ln 2", std::abs(v + 2.0 * std::log(2.0)) < 1e-12,
                       std::to_string(v));

    Rng rng(99);
    bool bounded = true;
    for (int i = 0; i < 200 && bounded; ++i) {
      std::vector<Tensor> joint, marg;
      for (int j = 0; j < 4; ++j) {
        joint.push_back(Tensor::scalar(rng.uniform(-8.0, 8.0)));
        marg.push_back(Tensor::scalar(rng.uniform(-8.0, 8.0)));
      }
      bounded = jsd_mi(joint, marg).item() <= 0.0;
    }
    all_pass &= report(out, "jsd_mi <= 0", bounded, "");
  }

  // full model forward/backward reaches every parameter
  {
    ArchitectureSpec spec = default_architecture();
    ModelParams params = build_model(spec, PruneConfig{0.5}, 7);
    Rng rng(11);
    std::vector<double> z(static_cast<std::size_t>(3) * spec.template_size * spec.template_size);
    std::vector<double> x(static_cast<std::size_t>(3) * spec.search_size * spec.search_size);
    for (double& v : z) v = rng.uniform();
    for (double& v : x) v = rng.uniform();
    PairForward fwd = forward_pair(
        params, Tensor::from_data({3, spec.template_size, spec.template_size}, std::move(z)),
        Tensor::from_data({3, spec.search_size, spec.search_size}, std::move(x)));

    Tensor head_sum = add(sum(fwd.heads.cls_logits),
                          add(sum(fwd.heads.quality_logits), sum(fwd.heads.reg_offsets)));
    std::vector<Tensor> fs{fwd.f_z, fwd.f_z};
    std::vector<Tensor> fts{concat_channels(fwd.f_r_z, fwd.f_u_z),
                            concat_channels(scalar_mul(fwd.f_r_z, 0.5), fwd.f_u_z)};
    Tensor mi = mi_loss(fs, fts, params, LossWeights{});
    backward(add(head_sum, mi));

    bool populated = true;
    std::string missing;
    for (const auto& [name, t] : params.entries()) {
      if (!t.has_grad()) {
        populated = false;
        missing = name;
        break;
      }
    }
    all_pass &= report(out, "end-to-end gradients populated", populated, missing);
  }

  out << (all_pass ? "selftest: OK" : "selftest: FAILED") << "\n";
  return all_pass ? 0 : 1;
}

}  // namespace drmim
