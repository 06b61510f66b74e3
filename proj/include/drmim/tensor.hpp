#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace drmim {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One recorded differentiable operation (or a leaf). The backward pass
// replays `backprop` closures in reverse creation order.
struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated lazily, only while participating
  std::uint64_t seq = 0;     // global creation order
  std::uint64_t visit_mark = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // pushes this node's grad into parents

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats with reverse-mode autodiff.
// Value-semantics handle onto a shared node; copying shares storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int dim(std::size_t axis) const;
  std::size_t numel() const;
  bool is_scalar() const { return defined() && numel() == 1; }
  double item() const;

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();  // in-place edits (optimizer steps)

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // [C,H,W] element access
  double at(int c, int y, int x) const;

  // internal node handle, used by the op implementations
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- differentiable operations ---

// input [Cin,H,W], weight [Cout,Cin,k,k], bias [Cout] -> [Cout,H',W']
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad);

// template [C,h,w], search [C,H,W] -> [C,H-h+1,W-w+1], per-channel, no flip
Tensor depthwise_xcorr(const Tensor& tmpl, const Tensor& search);

Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // domain error on non-positive input
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);  // ties route grad to a
Tensor scalar_mul(const Tensor& x, double a);
Tensor scalar_add(const Tensor& x, double b);
Tensor clamp(const Tensor& x, double lo, double hi);  // grad passes inside the range
Tensor pow_const(const Tensor& x, double p);  // domain: x >= 0 elementwise
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int begin, int count);
Tensor squared_l2(const Tensor& x);  // sum of squares, scalar
Tensor spatial_mean(const Tensor& x);                    // [C,H,W] -> [C,1,1]
Tensor broadcast_spatial(const Tensor& x, int h, int w);  // [C,1,1] -> [C,h,w]

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Populates grad for every requires_grad tensor that participated in the
// graph below `loss`. Loss must be scalar.
void backward(const Tensor& loss);

}  // namespace drmim
