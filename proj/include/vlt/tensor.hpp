#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlt/rng.hpp"

namespace vlt {

enum class DType { F32, F64 };

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DTypeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LayoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tensor;
class Tape;

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  DType dtype = DType::F64;
  bool requires_grad = false;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  std::vector<Tensor> parents;
  std::function<void(TensorImpl&)> backward_fn;
  Tape* tape = nullptr;

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  void accum_grad(const std::vector<double>& g);
  void ensure_grad();
};

// Value handle over a node in the autodiff graph. Data is row-major f64
// storage; the F32 dtype rounds every op output through float so results
// are exactly representable in checkpoints.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor from_data(Shape shape, std::vector<double> data,
                          DType dtype = DType::F64, bool requires_grad = false);
  static Tensor zeros(Shape shape, DType dtype = DType::F64,
                      bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dtype = DType::F64,
                     bool requires_grad = false);
  static Tensor scalar(double value, DType dtype = DType::F64);
  static Tensor randn(Rng& rng, Shape shape, double stddev,
                      DType dtype = DType::F64, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t size() const { return impl_->size(); }
  DType dtype() const { return impl_->dtype; }
  bool requires_grad() const { return impl_->requires_grad; }

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& mutable_data() { return impl_->data; }
  const std::vector<double>& grad() const;
  double item() const;
  double at(std::int64_t i) const { return impl_->data[i]; }

  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  void zero_grad() { impl_->grad.clear(); }

  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Recording context for reverse-mode differentiation. Single-owner, one
// backward() per tape; activation is thread-local and nests.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& scalar_output);
  void record(const Tensor& node);
  static Tape* current();
  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<Tensor> nodes_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

// ---- primitive catalog ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softmax(const Tensor& x, std::int64_t axis);
Tensor sum(const Tensor& x, std::int64_t axis);
Tensor mean(const Tensor& x, std::int64_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, std::int64_t axis);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start,
             std::int64_t len);
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& dims);
Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
// Depthwise width-k same-padded convolution over axis 0 of an (N, C) input;
// weight is (C, k) with k odd, bias is (C).
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

// Custom-node constructor for kernels with hand-written backward rules.
Tensor make_op(std::vector<Tensor> parents, Shape shape,
               std::vector<double> data,
               std::function<void(TensorImpl&)> backward_fn);

// Max over all coordinates of |analytic - central difference| /
// (|analytic| + |central| + denom_floor), with f evaluated by rebuilding
// its graph on fresh tapes. Leaves must be f64. For large compound graphs
// pass a denom_floor around 1e-4: coordinates whose true gradient sits
// below the cancellation noise of the central difference cannot be
// resolved to any relative tolerance.
double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& leaves, double eps = 1e-5,
                         double denom_floor = 1e-12);

}  // namespace vlt
