#include "vlt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vlt {

namespace {

thread_local Tape* g_active_tape = nullptr;

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_inplace(std::vector<double>& v, DType dtype) {
  if (dtype == DType::F32) {
    for (auto& x : v) x = round_f32(x);
  }
}

DType common_dtype(const std::vector<Tensor>& xs, const char* op) {
  DType d = xs.front().dtype();
  for (const auto& x : xs) {
    if (x.dtype() != d) {
      throw DTypeError(std::string(op) + ": mixed dtypes");
    }
  }
  return d;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::int64_t normalize_axis(std::int64_t axis, std::size_t rank,
                            const char* op) {
  if (axis < 0) axis += static_cast<std::int64_t>(rank);
  if (axis < 0 || axis >= static_cast<std::int64_t>(rank)) {
    throw ShapeError(std::string(op) + ": axis out of range");
  }
  return axis;
}

struct AxisSplit {
  std::int64_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::int64_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::int64_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}


Tensor unary_op(const Tensor& x, const char*,
                const std::function<double(double)>& f,
                const std::function<double(double, double)>& dfdx_from_x_y) {
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.at(i));
  Tensor xc = x;
  return make_op({x}, x.shape(), std::move(out), [xc, dfdx_from_x_y](TensorImpl& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = self.grad[i] * dfdx_from_x_y(xc.at(i), self.data[i]);
    }
    xc.impl()->accum_grad(g);
  });
}

}  // namespace

std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void TensorImpl::accum_grad(const std::vector<double>& g) {
  if (!requires_grad && parents.empty() && !backward_fn) return;
  ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, DType dtype,
                         bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("from_data: data length " +
                     std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  round_inplace(data, dtype);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->requires_grad = requires_grad;
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) {
  std::vector<double> d(numel(shape), 0.0);
  return from_data(std::move(shape), std::move(d), dtype, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, DType dtype,
                    bool requires_grad) {
  std::vector<double> d(numel(shape), value);
  return from_data(std::move(shape), std::move(d), dtype, requires_grad);
}

Tensor Tensor::scalar(double value, DType dtype) {
  return from_data({}, {value}, dtype);
}

Tensor Tensor::randn(Rng& rng, Shape shape, double stddev, DType dtype,
                     bool requires_grad) {
  std::vector<double> d(numel(shape));
  for (auto& v : d) v = rng.normal() * stddev;
  return from_data(std::move(shape), std::move(d), dtype, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor has " + std::to_string(size()) +
                     " elements");
  }
  return impl_->data[0];
}

Tape::Tape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::current() { return g_active_tape; }

void Tape::record(const Tensor& node) {
  node.impl()->tape = this;
  nodes_.push_back(node);
}

void Tape::backward(const Tensor& scalar_output) {
  if (consumed_) throw TapeError("backward: tape already consumed");
  if (scalar_output.size() != 1 || !scalar_output.shape().empty()) {
    throw ShapeError("backward: output must be a 0-dim scalar");
  }
  if (scalar_output.impl()->tape != this) {
    throw TapeError("backward: output is detached from this tape");
  }
  consumed_ = true;
  scalar_output.impl()->ensure_grad();
  scalar_output.impl()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorImpl* impl = it->impl();
    if (!impl->backward_fn) continue;
    if (impl->grad.empty()) continue;  // not on any path to the output
    impl->backward_fn(*impl);
  }
  nodes_.clear();
}

Tensor make_op(std::vector<Tensor> parents, Shape shape,
               std::vector<double> data,
               std::function<void(TensorImpl&)> backward_fn) {
  DType dtype = parents.empty() ? DType::F64 : common_dtype(parents, "op");
  round_inplace(data, dtype);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->data = std::move(data);
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  Tensor out(std::move(impl));
  if (needs_grad && Tape::current() != nullptr) {
    out.impl()->requires_grad = true;
    out.impl()->parents = std::move(parents);
    out.impl()->backward_fn = std::move(backward_fn);
    Tape::current()->record(out);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  common_dtype({a, b}, "add");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Tensor ac = a, bc = b;
  return make_op({a, b}, a.shape(), std::move(out), [ac, bc](TensorImpl& self) {
    ac.impl()->accum_grad(self.grad);
    bc.impl()->accum_grad(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  common_dtype({a, b}, "sub");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  Tensor ac = a, bc = b;
  return make_op({a, b}, a.shape(), std::move(out), [ac, bc](TensorImpl& self) {
    ac.impl()->accum_grad(self.grad);
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
    bc.impl()->accum_grad(g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  common_dtype({a, b}, "mul");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  Tensor ac = a, bc = b;
  return make_op({a, b}, a.shape(), std::move(out), [ac, bc](TensorImpl& self) {
    std::vector<double> ga(self.grad.size()), gb(self.grad.size());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] = self.grad[i] * bc.at(i);
      gb[i] = self.grad[i] * ac.at(i);
    }
    ac.impl()->accum_grad(ga);
    bc.impl()->accum_grad(gb);
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  common_dtype({a, b}, "div");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) / b.at(i);
  Tensor ac = a, bc = b;
  return make_op({a, b}, a.shape(), std::move(out), [ac, bc](TensorImpl& self) {
    std::vector<double> ga(self.grad.size()), gb(self.grad.size());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double inv = 1.0 / bc.at(i);
      ga[i] = self.grad[i] * inv;
      gb[i] = -self.grad[i] * ac.at(i) * inv * inv;
    }
    ac.impl()->accum_grad(ga);
    bc.impl()->accum_grad(gb);
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "maximum");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(a.at(i), b.at(i));
  Tensor ac = a, bc = b;
  return make_op({a, b}, a.shape(), std::move(out), [ac, bc](TensorImpl& self) {
    std::vector<double> ga(self.grad.size(), 0.0), gb(self.grad.size(), 0.0);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (ac.at(i) >= bc.at(i)) ga[i] = self.grad[i];
      else gb[i] = self.grad[i];
    }
    ac.impl()->accum_grad(ga);
    bc.impl()->accum_grad(gb);
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "minimum");
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(a.at(i), b.at(i));
  Tensor ac = a, bc = b;
  return make_op({a, b}, a.shape(), std::move(out), [ac, bc](TensorImpl& self) {
    std::vector<double> ga(self.grad.size(), 0.0), gb(self.grad.size(), 0.0);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (ac.at(i) <= bc.at(i)) ga[i] = self.grad[i];
      else gb[i] = self.grad[i];
    }
    ac.impl()->accum_grad(ga);
    bc.impl()->accum_grad(gb);
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  common_dtype({a, b}, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto& A = a.data();
  const auto& B = b.data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Tensor ac = a, bc = b;
  return make_op({a, b}, {m, n}, std::move(out), [ac, bc, m, k, n](TensorImpl& self) {
    const auto& G = self.grad;
    std::vector<double> ga(m * k, 0.0), gb(k * n, 0.0);
    const auto& A = ac.data();
    const auto& B = bc.data();
    // dA = G B^T ; dB = A^T G
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* grow = G.data() + i * n;
        const double* brow = B.data() + p * n;
        for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ga[i * k + p] = acc;
      }
    }
    for (std::int64_t p = 0; p < k; ++p) {
      for (std::int64_t i = 0; i < m; ++i) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        const double* grow = G.data() + i * n;
        double* gbrow = gb.data() + p * n;
        for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
      }
    }
    ac.impl()->accum_grad(ga);
    bc.impl()->accum_grad(gb);
  });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, "neg", [](double v) { return -v; },
                  [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](double v) { return std::exp(v); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, "log", [](double v) { return std::log(v); },
                  [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(x, "sqrt", [](double v) { return std::sqrt(v); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(x, "abs", [](double v) { return std::abs(v); },
                  [](double v, double) { return v >= 0.0 ? 1.0 : -1.0; });
}

namespace {
double sigmoid_val(double v) { return 1.0 / (1.0 + std::exp(-v)); }
double softplus_val(double v) {
  return v > 30.0 ? v : std::log1p(std::exp(v));
}
}  // namespace

Tensor softplus(const Tensor& x) {
  return unary_op(x, "softplus", softplus_val,
                  [](double v, double) { return sigmoid_val(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid", sigmoid_val,
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary_op(x, "silu", [](double v) { return v * sigmoid_val(v); },
                  [](double v, double) {
                    const double s = sigmoid_val(v);
                    return s * (1.0 + v * (1.0 - s));
                  });
}

Tensor tanh(const Tensor& x) {
  return unary_op(x, "tanh", [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const auto s = split_axis(x.shape(), axis);
  std::vector<double> out(x.data().size());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      double mx = -1e300;
      for (std::int64_t j = 0; j < s.n; ++j)
        mx = std::max(mx, x.at((o * s.n + j) * s.inner + in));
      double z = 0.0;
      for (std::int64_t j = 0; j < s.n; ++j) {
        const auto idx = (o * s.n + j) * s.inner + in;
        out[idx] = std::exp(x.at(idx) - mx);
        z += out[idx];
      }
      for (std::int64_t j = 0; j < s.n; ++j)
        out[(o * s.n + j) * s.inner + in] /= z;
    }
  }
  Tensor xc = x;
  return make_op({x}, x.shape(), std::move(out), [xc, s](TensorImpl& self) {
    std::vector<double> g(self.grad.size());
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t in = 0; in < s.inner; ++in) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < s.n; ++j) {
          const auto idx = (o * s.n + j) * s.inner + in;
          dot += self.grad[idx] * self.data[idx];
        }
        for (std::int64_t j = 0; j < s.n; ++j) {
          const auto idx = (o * s.n + j) * s.inner + in;
          g[idx] = self.data[idx] * (self.grad[idx] - dot);
        }
      }
    }
    xc.impl()->accum_grad(g);
  });
}

namespace {
Tensor reduce_axis(const Tensor& x, std::int64_t axis, bool take_mean,
                   const char* name) {
  axis = normalize_axis(axis, x.rank(), name);
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.rank()); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t j = 0; j < s.n; ++j)
      for (std::int64_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += x.at((o * s.n + j) * s.inner + in);
  const double scale = take_mean ? 1.0 / static_cast<double>(s.n) : 1.0;
  if (take_mean)
    for (auto& v : out) v *= scale;
  Tensor xc = x;
  return make_op({x}, std::move(out_shape), std::move(out),
                 [xc, s, scale](TensorImpl& self) {
                   std::vector<double> g(xc.size());
                   for (std::int64_t o = 0; o < s.outer; ++o)
                     for (std::int64_t j = 0; j < s.n; ++j)
                       for (std::int64_t in = 0; in < s.inner; ++in)
                         g[(o * s.n + j) * s.inner + in] =
                             self.grad[o * s.inner + in] * scale;
                   xc.impl()->accum_grad(g);
                 });
}
}  // namespace

Tensor sum(const Tensor& x, std::int64_t axis) {
  return reduce_axis(x, axis, false, "sum");
}

Tensor mean(const Tensor& x, std::int64_t axis) {
  return reduce_axis(x, axis, true, "mean");
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  Tensor xc = x;
  return make_op({x}, {}, {acc}, [xc](TensorImpl& self) {
    std::vector<double> g(xc.size(), self.grad[0]);
    xc.impl()->accum_grad(g);
  });
}

Tensor mean_all(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  Tensor xc = x;
  return make_op({x}, {}, {acc / n}, [xc, n](TensorImpl& self) {
    std::vector<double> g(xc.size(), self.grad[0] / n);
    xc.impl()->accum_grad(g);
  });
}

Tensor concat(const std::vector<Tensor>& xs, std::int64_t axis) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  axis = normalize_axis(axis, xs.front().rank(), "concat");
  common_dtype(xs, "concat");
  Shape out_shape = xs.front().shape();
  std::int64_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != out_shape.size())
      throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < out_shape.size(); ++i) {
      if (static_cast<std::int64_t>(i) != axis && x.dim(i) != out_shape[i])
        throw ShapeError("concat: shape mismatch off-axis");
    }
    total += x.dim(axis);
  }
  out_shape[axis] = total;
  const auto s = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::int64_t offset = 0;
  for (const auto& x : xs) {
    const std::int64_t nx = x.dim(axis);
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < nx; ++j)
        for (std::int64_t in = 0; in < s.inner; ++in)
          out[(o * s.n + offset + j) * s.inner + in] =
              x.at((o * nx + j) * s.inner + in);
    offset += nx;
  }
  std::vector<Tensor> parents = xs;
  return make_op(xs, std::move(out_shape), std::move(out),
                 [parents, s, axis](TensorImpl& self) {
                   std::int64_t off = 0;
                   for (const auto& x : parents) {
                     const std::int64_t nx = x.shape()[axis];
                     std::vector<double> g(x.size());
                     for (std::int64_t o = 0; o < s.outer; ++o)
                       for (std::int64_t j = 0; j < nx; ++j)
                         for (std::int64_t in = 0; in < s.inner; ++in)
                           g[(o * nx + j) * s.inner + in] =
                               self.grad[(o * s.n + off + j) * s.inner + in];
                     x.impl()->accum_grad(g);
                     off += nx;
                   }
                 });
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start,
             std::int64_t len) {
  axis = normalize_axis(axis, x.rank(), "slice");
  if (start < 0 || len < 0 || start + len > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const auto s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(numel(out_shape));
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t j = 0; j < len; ++j)
      for (std::int64_t in = 0; in < s.inner; ++in)
        out[(o * len + j) * s.inner + in] =
            x.at((o * s.n + start + j) * s.inner + in);
  Tensor xc = x;
  return make_op({x}, std::move(out_shape), std::move(out),
                 [xc, s, start, len](TensorImpl& self) {
                   std::vector<double> g(xc.size(), 0.0);
                   for (std::int64_t o = 0; o < s.outer; ++o)
                     for (std::int64_t j = 0; j < len; ++j)
                       for (std::int64_t in = 0; in < s.inner; ++in)
                         g[(o * s.n + start + j) * s.inner + in] =
                             self.grad[(o * len + j) * s.inner + in];
                   xc.impl()->accum_grad(g);
                 });
}

namespace {
std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> st(shape.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * shape[i + 1];
  return st;
}
}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& dims) {
  if (dims.size() != x.rank()) throw ShapeError("permute: dims rank mismatch");
  std::vector<bool> seen(dims.size(), false);
  Shape out_shape(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 0 || dims[i] >= static_cast<std::int64_t>(dims.size()) ||
        seen[dims[i]])
      throw ShapeError("permute: invalid permutation");
    seen[dims[i]] = true;
    out_shape[i] = x.dim(dims[i]);
  }
  const auto in_st = strides_of(x.shape());
  const auto out_st = strides_of(out_shape);
  std::vector<double> out(x.data().size());
  const std::int64_t n = x.size();
  const std::size_t r = dims.size();
  for (std::int64_t idx = 0; idx < n; ++idx) {
    std::int64_t rem = idx, src = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const std::int64_t coord = rem / out_st[i];
      rem %= out_st[i];
      src += coord * in_st[dims[i]];
    }
    out[idx] = x.at(src);
  }
  Tensor xc = x;
  return make_op({x}, std::move(out_shape), std::move(out),
                 [xc, dims, in_st, out_st, r](TensorImpl& self) {
                   std::vector<double> g(xc.size());
                   const std::int64_t n = xc.size();
                   for (std::int64_t idx = 0; idx < n; ++idx) {
                     std::int64_t rem = idx, src = 0;
                     for (std::size_t i = 0; i < r; ++i) {
                       const std::int64_t coord = rem / out_st[i];
                       rem %= out_st[i];
                       src += coord * in_st[dims[i]];
                     }
                     g[src] = self.grad[idx];
                   }
                   xc.impl()->accum_grad(g);
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: element count mismatch " +
                     shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor xc = x;
  std::vector<double> out = x.data();
  return make_op({x}, std::move(shape), std::move(out), [xc](TensorImpl& self) {
    xc.impl()->accum_grad(self.grad);
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.rank() > shape.size())
    throw ShapeError("broadcast: source rank exceeds target");
  // Align trailing dims; each source dim must be 1 or equal.
  Shape src = x.shape();
  src.insert(src.begin(), shape.size() - src.size(), 1);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (src[i] != 1 && src[i] != shape[i])
      throw ShapeError("broadcast: dim " + std::to_string(i) +
                       " incompatible: " + shape_str(x.shape()) + " -> " +
                       shape_str(shape));
  }
  const auto src_st = strides_of(src);
  const auto out_st = strides_of(shape);
  std::vector<double> out(numel(shape));
  const std::size_t r = shape.size();
  for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(out.size());
       ++idx) {
    std::int64_t rem = idx, sidx = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const std::int64_t coord = rem / out_st[i];
      rem %= out_st[i];
      if (src[i] != 1) sidx += coord * src_st[i];
    }
    out[idx] = x.at(sidx);
  }
  Tensor xc = x;
  return make_op({x}, shape, std::move(out),
                 [xc, src, src_st, out_st, r](TensorImpl& self) {
                   std::vector<double> g(xc.size(), 0.0);
                   for (std::int64_t idx = 0;
                        idx < static_cast<std::int64_t>(self.grad.size());
                        ++idx) {
                     std::int64_t rem = idx, sidx = 0;
                     for (std::size_t i = 0; i < r; ++i) {
                       const std::int64_t coord = rem / out_st[i];
                       rem %= out_st[i];
                       if (src[i] != 1) sidx += coord * src_st[i];
                     }
                     g[sidx] += self.grad[idx];
                   }
                   xc.impl()->accum_grad(g);
                 });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
    throw ShapeError("conv1d: expects x (N,C), weight (C,k), bias (C)");
  const std::int64_t n = x.dim(0), c = x.dim(1), k = weight.dim(1);
  if (weight.dim(0) != c || bias.dim(0) != c)
    throw ShapeError("conv1d: channel mismatch " + shape_str(x.shape()) +
                     " vs " + shape_str(weight.shape()));
  if (k % 2 == 0) throw ShapeError("conv1d: kernel width must be odd");
  const std::int64_t half = k / 2;
  std::vector<double> out(n * c, 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = bias.at(ch);
      for (std::int64_t t = 0; t < k; ++t) {
        const std::int64_t j = i + t - half;
        if (j >= 0 && j < n) acc += weight.at(ch * k + t) * x.at(j * c + ch);
      }
      out[i * c + ch] = acc;
    }
  Tensor xc = x, wc = weight, bc = bias;
  return make_op({x, weight, bias}, {n, c}, std::move(out),
                 [xc, wc, bc, n, c, k, half](TensorImpl& self) {
                   std::vector<double> gx(n * c, 0.0), gw(c * k, 0.0),
                       gb(c, 0.0);
                   for (std::int64_t i = 0; i < n; ++i)
                     for (std::int64_t ch = 0; ch < c; ++ch) {
                       const double g = self.grad[i * c + ch];
                       gb[ch] += g;
                       for (std::int64_t t = 0; t < k; ++t) {
                         const std::int64_t j = i + t - half;
                         if (j >= 0 && j < n) {
                           gx[j * c + ch] += g * wc.at(ch * k + t);
                           gw[ch * k + t] += g * xc.at(j * c + ch);
                         }
                       }
                     }
                   xc.impl()->accum_grad(gx);
                   wc.impl()->accum_grad(gw);
                   bc.impl()->accum_grad(gb);
                 });
}

Tensor layer_norm(const Tensor& x, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const std::int64_t n = x.dim(x.rank() - 1);
  const std::int64_t rows = x.size() / n;
  std::vector<double> out(x.data().size());
  std::vector<double> inv_std(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mu += x.at(r * n + j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double d = x.at(r * n + j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < n; ++j)
      out[r * n + j] = (x.at(r * n + j) - mu) * inv_std[r];
  }
  Tensor xc = x;
  return make_op({x}, x.shape(), std::move(out),
                 [xc, rows, n, inv_std](TensorImpl& self) {
                   std::vector<double> g(xc.size());
                   for (std::int64_t r = 0; r < rows; ++r) {
                     double gsum = 0.0, gysum = 0.0;
                     for (std::int64_t j = 0; j < n; ++j) {
                       gsum += self.grad[r * n + j];
                       gysum += self.grad[r * n + j] * self.data[r * n + j];
                     }
                     const double gm = gsum / static_cast<double>(n);
                     const double gym = gysum / static_cast<double>(n);
                     for (std::int64_t j = 0; j < n; ++j) {
                       g[r * n + j] = inv_std[r] *
                                      (self.grad[r * n + j] - gm -
                                       self.data[r * n + j] * gym);
                     }
                   }
                   xc.impl()->accum_grad(g);
                 });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(x, "add_scalar", [c](double v) { return v + c; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op(x, "mul_scalar", [c](double v) { return v * c; },
                  [c](double, double) { return c; });
}

double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& leaves, double eps,
                         double denom_floor) {
  std::vector<std::vector<double>> analytic;
  for (auto leaf : leaves) leaf.zero_grad();
  {
    Tape tape;
    Tensor out = f();
    if (!std::isfinite(out.item()))
      throw NumericError("finite_diff_check: non-finite function value");
    tape.backward(out);
    for (const auto& leaf : leaves) analytic.push_back(leaf.grad());
  }
  double max_rel = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    for (std::int64_t i = 0; i < leaf.size(); ++i) {
      const double saved = leaf.mutable_data()[i];
      leaf.mutable_data()[i] = saved + eps;
      const double fp = f().item();
      leaf.mutable_data()[i] = saved - eps;
      const double fm = f().item();
      leaf.mutable_data()[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_diff_check: non-finite perturbed value");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[li][i];
      const double rel = std::abs(a - numeric) /
                         (std::abs(a) + std::abs(numeric) + denom_floor);
      max_rel = std::max(max_rel, rel);
    }
  }
  for (auto leaf : leaves) leaf.zero_grad();
  return max_rel;
}

}  // namespace vlt
