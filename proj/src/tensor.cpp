#include "drmim/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "drmim/errors.hpp"

namespace drmim {

namespace {

std::atomic<std::uint64_t> g_seq{1};
std::atomic<std::uint64_t> g_visit{1};

std::uint64_t next_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) with saturation guards
double stable_softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  if (x < -30.0) return std::log1p(std::exp(x));
  return std::log1p(std::exp(x));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void check_rank3(const Tensor& t, const char* op) {
  if (t.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected rank-3 tensor, got " +
                         shape_str(t.shape()));
  }
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = next_seq();
  return n;
}

// Result node for an op. Parents and the backprop closure are only retained
// when some input requires grad; inference passes build no graph.
NodePtr make_result(Shape shape, std::vector<double> value,
                    std::initializer_list<NodePtr> parents,
                    std::function<void(detail::Node&)> backprop) {
  auto n = make_node(std::move(shape), std::move(value));
  bool rg = false;
  for (const auto& p : parents) rg = rg || (p && p->requires_grad);
  if (rg) {
    n->requires_grad = true;
    n->parents.assign(parents.begin(), parents.end());
    n->backprop = std::move(backprop);
  }
  return n;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

// --- Tensor ---

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto n = make_node(shape, std::vector<double>(shape_numel(shape), value));
  n->requires_grad = requires_grad;
  return from_node(std::move(n));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto n = make_node(shape, std::move(data));
  n->requires_grad = requires_grad;
  return from_node(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value.size();
}

double Tensor::item() const {
  if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

const std::vector<double>& Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

std::vector<double>& Tensor::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

double Tensor::at(int c, int y, int x) const {
  check_rank3(*this, "at");
  const Shape& s = shape();
  if (c < 0 || c >= s[0] || y < 0 || y >= s[1] || x < 0 || x >= s[2]) {
    throw DimensionError("index out of range");
  }
  return node_->value[(static_cast<std::size_t>(c) * s[1] + y) * s[2] + x];
}

// --- elementwise helpers ---

namespace {

Tensor unary_op(const Tensor& x, const char* /*name*/,
                const std::function<double(double)>& f,
                const std::function<double(double, double)>& dfdx_from_xy) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return Tensor::from_node(make_result(
      x.shape(), std::move(out), {xn}, [xn, dfdx_from_xy](detail::Node& n) {
        if (!xn->requires_grad) return;
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          gx[i] += n.grad[i] * dfdx_from_xy(xn->value[i], n.value[i]);
        }
      }));
}

}  // namespace

Tensor softplus(const Tensor& x) {
  return unary_op(x, "softplus", stable_softplus,
                  [](double xi, double) { return stable_sigmoid(xi); });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double xi, double) { return xi > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid", stable_sigmoid,
                  [](double, double yi) { return yi * (1.0 - yi); });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](double v) { return std::exp(v); },
                  [](double, double yi) { return yi; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive input");
  }
  return unary_op(x, "log", [](double v) { return std::log(v); },
                  [](double xi, double) { return 1.0 / xi; });
}

Tensor scalar_mul(const Tensor& x, double a) {
  return unary_op(x, "scalar_mul", [a](double v) { return a * v; },
                  [a](double, double) { return a; });
}

Tensor scalar_add(const Tensor& x, double b) {
  return unary_op(x, "scalar_add", [b](double v) { return v + b; },
                  [](double, double) { return 1.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) throw ContractError("clamp needs lo < hi");
  return unary_op(x, "clamp",
                  [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
                  [lo, hi](double xi, double) { return (xi > lo && xi < hi) ? 1.0 : 0.0; });
}

Tensor pow_const(const Tensor& x, double p) {
  for (double v : x.data()) {
    if (v < 0.0) throw DomainError("pow_const requires non-negative input");
    if (v == 0.0 && p < 1.0) throw DomainError("pow_const gradient unbounded at 0 for p < 1");
  }
  return unary_op(x, "pow_const", [p](double v) { return std::pow(v, p); },
                  [p](double xi, double yi) {
                    if (xi == 0.0) return p == 1.0 ? 1.0 : 0.0;  // p > 1 at the origin
                    return p * yi / xi;
                  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto &av = a.data(), &bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor::from_node(
      make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& n) {
        if (an->requires_grad) {
          auto& ga = an->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i];
        }
      }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto &av = a.data(), &bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor::from_node(
      make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& n) {
        if (an->requires_grad) {
          auto& ga = an->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] -= n.grad[i];
        }
      }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto &av = a.data(), &bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor::from_node(
      make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& n) {
        if (an->requires_grad) {
          auto& ga = an->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * an->value[i];
        }
      }));
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  const auto &av = a.data(), &bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor::from_node(
      make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& n) {
        if (an->requires_grad) {
          auto& ga = an->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] / bn->value[i];
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) {
            gb[i] -= n.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
          }
        }
      }));
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "minimum");
  const auto &av = a.data(), &bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::min(av[i], bv[i]);
  auto an = a.node(), bn = b.node();
  return Tensor::from_node(
      make_result(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          if (an->value[i] <= bn->value[i]) {
            if (an->requires_grad) an->ensure_grad()[i] += n.grad[i];
          } else if (bn->requires_grad) {
            bn->ensure_grad()[i] += n.grad[i];
          }
        }
      }));
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;  // fixed row-major order
  auto xn = x.node();
  return Tensor::from_node(make_result({1}, {acc}, {xn}, [xn](detail::Node& n) {
    if (!xn->requires_grad) return;
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[0];
  }));
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  auto xn = x.node();
  return Tensor::from_node(make_result({1}, {acc * inv}, {xn}, [xn, inv](detail::Node& n) {
    if (!xn->requires_grad) return;
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[0] * inv;
  }));
}

Tensor squared_l2(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  auto xn = x.node();
  return Tensor::from_node(make_result({1}, {acc}, {xn}, [xn](detail::Node& n) {
    if (!xn->requires_grad) return;
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * xn->value[i] * n.grad[0];
  }));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_rank3(a, "concat_channels");
  check_rank3(b, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_channels: spatial mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  const auto &av = a.data(), &bv = b.data();
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  out.insert(out.end(), av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  auto an = a.node(), bn = b.node();
  const std::size_t na = av.size();
  return Tensor::from_node(make_result({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)},
                                       std::move(out), {an, bn},
                                       [an, bn, na](detail::Node& n) {
                                         if (an->requires_grad) {
                                           auto& ga = an->ensure_grad();
                                           for (std::size_t i = 0; i < na; ++i) ga[i] += n.grad[i];
                                         }
                                         if (bn->requires_grad) {
                                           auto& gb = bn->ensure_grad();
                                           for (std::size_t i = 0; i < gb.size(); ++i) {
                                             gb[i] += n.grad[na + i];
                                           }
                                         }
                                       }));
}

Tensor slice_channels(const Tensor& x, int begin, int count) {
  check_rank3(x, "slice_channels");
  if (begin < 0 || count <= 0 || begin + count > x.dim(0)) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") outside " + shape_str(x.shape()));
  }
  const int hw = x.dim(1) * x.dim(2);
  const auto& xv = x.data();
  std::vector<double> out(xv.begin() + static_cast<std::size_t>(begin) * hw,
                          xv.begin() + static_cast<std::size_t>(begin + count) * hw);
  auto xn = x.node();
  const std::size_t off = static_cast<std::size_t>(begin) * hw;
  return Tensor::from_node(make_result({count, x.dim(1), x.dim(2)}, std::move(out), {xn},
                                       [xn, off](detail::Node& n) {
                                         if (!xn->requires_grad) return;
                                         auto& gx = xn->ensure_grad();
                                         for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                           gx[off + i] += n.grad[i];
                                         }
                                       }));
}

Tensor spatial_mean(const Tensor& x) {
  check_rank3(x, "spatial_mean");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const double inv = 1.0 / static_cast<double>(h * w);
  const auto& xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    const double* p = xv.data() + static_cast<std::size_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) acc += p[i];
    out[ch] = acc * inv;
  }
  auto xn = x.node();
  return Tensor::from_node(make_result({c, 1, 1}, std::move(out), {xn},
                                       [xn, c, h, w, inv](detail::Node& n) {
                                         if (!xn->requires_grad) return;
                                         auto& gx = xn->ensure_grad();
                                         for (int ch = 0; ch < c; ++ch) {
                                           const double g = n.grad[ch] * inv;
                                           double* p = gx.data() + static_cast<std::size_t>(ch) * h * w;
                                           for (int i = 0; i < h * w; ++i) p[i] += g;
                                         }
                                       }));
}

Tensor broadcast_spatial(const Tensor& x, int h, int w) {
  check_rank3(x, "broadcast_spatial");
  if (x.dim(1) != 1 || x.dim(2) != 1) {
    throw DimensionError("broadcast_spatial expects [C,1,1], got " + shape_str(x.shape()));
  }
  if (h <= 0 || w <= 0) throw DimensionError("broadcast_spatial: non-positive target size");
  const int c = x.dim(0);
  const auto& xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(c) * h * w);
  for (int ch = 0; ch < c; ++ch) {
    std::fill_n(out.begin() + static_cast<std::size_t>(ch) * h * w, h * w, xv[ch]);
  }
  auto xn = x.node();
  return Tensor::from_node(make_result({c, h, w}, std::move(out), {xn},
                                       [xn, c, h, w](detail::Node& n) {
                                         if (!xn->requires_grad) return;
                                         auto& gx = xn->ensure_grad();
                                         for (int ch = 0; ch < c; ++ch) {
                                           double acc = 0.0;
                                           const double* p = n.grad.data() + static_cast<std::size_t>(ch) * h * w;
                                           for (int i = 0; i < h * w; ++i) acc += p[i];
                                           gx[ch] += acc;
                                         }
                                       }));
}

// --- convolution ---

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad) {
  check_rank3(input, "conv2d");
  if (weight.rank() != 4) {
    throw DimensionError("conv2d: weight must be rank 4, got " + shape_str(weight.shape()));
  }
  if (bias.rank() != 1) {
    throw DimensionError("conv2d: bias must be rank 1, got " + shape_str(bias.shape()));
  }
  const int cin = input.dim(0), hin = input.dim(1), win = input.dim(2);
  const int cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(cin));
  }
  if (weight.dim(3) != k) throw DimensionError("conv2d: kernel must be square");
  if (bias.dim(0) != cout) throw DimensionError("conv2d: bias length mismatch");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d: pad must be >= 0");
  if (k > hin + 2 * pad || k > win + 2 * pad) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                         shape_str(input.shape()));
  }

  const int hout = (hin + 2 * pad - k) / stride + 1;
  const int wout = (win + 2 * pad - k) / stride + 1;

  const double* in = input.data().data();
  const double* w = weight.data().data();
  const double* b = bias.data().data();
  std::vector<double> out(static_cast<std::size_t>(cout) * hout * wout);

  // offsets stay signed; iy0/ix0 go negative under padding
  using idx = std::ptrdiff_t;
  for (int oc = 0; oc < cout; ++oc) {
    double* orow = out.data() + static_cast<std::size_t>(oc) * hout * wout;
    for (int oy = 0; oy < hout; ++oy) {
      const int iy0 = oy * stride - pad;
      const int ky_lo = std::max(0, -iy0);
      const int ky_hi = std::min(k, hin - iy0);
      for (int ox = 0; ox < wout; ++ox) {
        const int ix0 = ox * stride - pad;
        const int kx_lo = std::max(0, -ix0);
        const int kx_hi = std::min(k, win - ix0);
        double acc = b[oc];
        for (int ic = 0; ic < cin; ++ic) {
          const idx ibase = (static_cast<idx>(ic) * hin + iy0) * win + ix0;
          const idx wbase = (static_cast<idx>(oc) * cin + ic) * k * k;
          for (int ky = ky_lo; ky < ky_hi; ++ky) {
            const idx irow = ibase + static_cast<idx>(ky) * win;
            const idx wrow = wbase + static_cast<idx>(ky) * k;
            for (int kx = kx_lo; kx < kx_hi; ++kx) acc += in[irow + kx] * w[wrow + kx];
          }
        }
        orow[static_cast<std::size_t>(oy) * wout + ox] = acc;
      }
    }
  }

  auto in_n = input.node(), w_n = weight.node(), b_n = bias.node();
  return Tensor::from_node(make_result(
      {cout, hout, wout}, std::move(out), {in_n, w_n, b_n},
      [in_n, w_n, b_n, cin, hin, win, cout, k, stride, pad, hout, wout](detail::Node& n) {
        const double* g = n.grad.data();
        const double* in = in_n->value.data();
        const double* w = w_n->value.data();
        double* gin = in_n->requires_grad ? in_n->ensure_grad().data() : nullptr;
        double* gw = w_n->requires_grad ? w_n->ensure_grad().data() : nullptr;
        double* gb = b_n->requires_grad ? b_n->ensure_grad().data() : nullptr;

        using idx = std::ptrdiff_t;
        for (int oc = 0; oc < cout; ++oc) {
          const double* grow = g + static_cast<std::size_t>(oc) * hout * wout;
          for (int oy = 0; oy < hout; ++oy) {
            const int iy0 = oy * stride - pad;
            const int ky_lo = std::max(0, -iy0);
            const int ky_hi = std::min(k, hin - iy0);
            for (int ox = 0; ox < wout; ++ox) {
              const double go = grow[static_cast<std::size_t>(oy) * wout + ox];
              if (gb) gb[oc] += go;
              if (!gin && !gw) continue;
              const int ix0 = ox * stride - pad;
              const int kx_lo = std::max(0, -ix0);
              const int kx_hi = std::min(k, win - ix0);
              for (int ic = 0; ic < cin; ++ic) {
                const idx ibase = (static_cast<idx>(ic) * hin + iy0) * win + ix0;
                const idx wbase = (static_cast<idx>(oc) * cin + ic) * k * k;
                for (int ky = ky_lo; ky < ky_hi; ++ky) {
                  const idx irow = ibase + static_cast<idx>(ky) * win;
                  const idx wrow = wbase + static_cast<idx>(ky) * k;
                  for (int kx = kx_lo; kx < kx_hi; ++kx) {
                    if (gw) gw[wrow + kx] += go * in[irow + kx];
                    if (gin) gin[irow + kx] += go * w[wrow + kx];
                  }
                }
              }
            }
          }
        }
      }));
}

// --- depthwise cross-correlation ---

Tensor depthwise_xcorr(const Tensor& tmpl, const Tensor& search) {
  check_rank3(tmpl, "depthwise_xcorr");
  check_rank3(search, "depthwise_xcorr");
  const int c = tmpl.dim(0), th = tmpl.dim(1), tw = tmpl.dim(2);
  const int sh = search.dim(1), sw = search.dim(2);
  if (search.dim(0) != c) {
    throw DimensionError("depthwise_xcorr: channel mismatch " + shape_str(tmpl.shape()) +
                         " vs " + shape_str(search.shape()));
  }
  if (th > sh || tw > sw) {
    throw DimensionError("depthwise_xcorr: template " + shape_str(tmpl.shape()) +
                         " larger than search " + shape_str(search.shape()));
  }
  const int oh = sh - th + 1, ow = sw - tw + 1;
  const double* t = tmpl.data().data();
  const double* s = search.data().data();
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);

  for (int ch = 0; ch < c; ++ch) {
    const double* tpl = t + static_cast<std::size_t>(ch) * th * tw;
    const double* spl = s + static_cast<std::size_t>(ch) * sh * sw;
    double* opl = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ty = 0; ty < th; ++ty) {
          const double* srow = spl + static_cast<std::size_t>(oy + ty) * sw + ox;
          const double* trow = tpl + static_cast<std::size_t>(ty) * tw;
          for (int tx = 0; tx < tw; ++tx) acc += trow[tx] * srow[tx];
        }
        opl[static_cast<std::size_t>(oy) * ow + ox] = acc;
      }
    }
  }

  auto t_n = tmpl.node(), s_n = search.node();
  return Tensor::from_node(make_result(
      {c, oh, ow}, std::move(out), {t_n, s_n},
      [t_n, s_n, c, th, tw, sh, sw, oh, ow](detail::Node& n) {
        const double* g = n.grad.data();
        const double* t = t_n->value.data();
        const double* s = s_n->value.data();
        double* gt = t_n->requires_grad ? t_n->ensure_grad().data() : nullptr;
        double* gs = s_n->requires_grad ? s_n->ensure_grad().data() : nullptr;
        for (int ch = 0; ch < c; ++ch) {
          const double* gpl = g + static_cast<std::size_t>(ch) * oh * ow;
          const double* tpl = t + static_cast<std::size_t>(ch) * th * tw;
          const double* spl = s + static_cast<std::size_t>(ch) * sh * sw;
          double* gtp = gt ? gt + static_cast<std::size_t>(ch) * th * tw : nullptr;
          double* gsp = gs ? gs + static_cast<std::size_t>(ch) * sh * sw : nullptr;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const double go = gpl[static_cast<std::size_t>(oy) * ow + ox];
              for (int ty = 0; ty < th; ++ty) {
                const double* srow = spl + static_cast<std::size_t>(oy + ty) * sw + ox;
                const double* trow = tpl + static_cast<std::size_t>(ty) * tw;
                double* gsrow = gsp ? gsp + static_cast<std::size_t>(oy + ty) * sw + ox : nullptr;
                double* gtrow = gtp ? gtp + static_cast<std::size_t>(ty) * tw : nullptr;
                for (int tx = 0; tx < tw; ++tx) {
                  if (gtrow) gtrow[tx] += go * srow[tx];
                  if (gsrow) gsrow[tx] += go * trow[tx];
                }
              }
            }
          }
        }
      }));
}

// --- backward ---

void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw ContractError("backward requires a defined scalar loss");
  }
  auto root = loss.node();
  if (!root->requires_grad) {
    throw ContractError("backward: loss does not depend on any differentiable tensor");
  }

  const std::uint64_t mark = g_visit.fetch_add(1, std::memory_order_relaxed);

  // Gather the recorded graph below the loss.
  std::vector<detail::Node*> nodes;
  std::vector<detail::Node*> stack{root.get()};
  root->visit_mark = mark;
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p && p->requires_grad && p->visit_mark != mark) {
        p->visit_mark = mark;
        stack.push_back(p.get());
      }
    }
  }

  // Replay adjoints in reverse execution order, each node exactly once.
  std::sort(nodes.begin(), nodes.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  for (detail::Node* n : nodes) {
    n->grad.assign(n->value.size(), 0.0);
  }
  root->grad[0] = 1.0;
  for (detail::Node* n : nodes) {
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace drmim
