#include "fot/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace fot {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  int64_t n = shape_numel(shape);
  if (n < 0) fail("tensor shape with negative dim " + shape_str(shape));
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<size_t>(n), 0.0f);
  return t;
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    fail("from_data: " + shape_str(shape) + " incompatible with buffer of " +
         std::to_string(data.size()));
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  return t;
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }

int64_t Tensor::dim(int i) const {
  int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) fail("dim index out of range");
  return impl_->shape[i];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data.size()); }
std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
  if (numel() != 1) fail("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  impl_->needs_grad = value || impl_->needs_grad;
  return *this;
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::needs_grad() const { return impl_ && impl_->needs_grad; }
std::span<const float> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0f); }

void Tensor::accumulate_grad(std::span<const float> g) {
  if (g.size() != impl_->data.size()) fail("gradient size mismatch");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  for (size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

namespace {

// Accumulates into the parent's grad buffer, allocating it on first touch.
float* grad_buffer(Tensor::Impl& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0f);
  return node.grad.data();
}

Tensor make_node(Shape shape, std::vector<float> data, std::vector<Tensor> parents,
                 std::function<void(Tensor::Impl&)> backward_fn) {
  Tensor t = Tensor::from_data(std::move(shape), std::move(data));
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents)
      if (p.defined() && p.needs_grad()) track = true;
  }
  if (track) {
    t.impl_->needs_grad = true;
    t.impl_->parents = std::move(parents);
    t.impl_->backward_fn = std::move(backward_fn);
  }
  return t;
}

}  // namespace

void Tensor::backward() const {
  if (!defined() || numel() != 1) fail("backward() requires a scalar loss");
  // Post-order DFS; the order vector owns the nodes so parent lists can be
  // released as soon as each node has run.
  std::vector<std::shared_ptr<Impl>> order;
  std::unordered_set<Impl*> visited;
  struct Frame {
    std::shared_ptr<Impl> node;
    size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({impl_});
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      std::shared_ptr<Impl> p = f.node->parents[f.next++].impl_;
      if (p && p->needs_grad && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.push_back({std::move(p)});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  impl_->grad.assign(1, 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl& node = **it;
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
    node.backward_fn = nullptr;
    node.parents.clear();
  }
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      fail("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `in` right-aligned against `out`, 0 on broadcast dims.
std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> strides(out.size(), 0);
  int64_t s = 1;
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    size_t oi = out.size() - in.size() + i;
    strides[oi] = (in[i] == 1 && out[oi] != 1) ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) over every element of out_shape.
template <class F>
void for_each_bcast(const Shape& out_shape, const Shape& a, const Shape& b, F&& f) {
  int64_t n = shape_numel(out_shape);
  size_t r = out_shape.size();
  auto sa = bcast_strides(a, out_shape);
  auto sb = bcast_strides(b, out_shape);
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
      idx[i]++;
      ia += sa[i];
      ib += sb[i];
      if (idx[i] < out_shape[i]) break;
      ia -= sa[i] * out_shape[i];
      ib -= sb[i] * out_shape[i];
      idx[i] = 0;
    }
  }
}

// dz laid out as out_shape, reduced back onto a tensor of shape `target`.
void reduce_to_shape(const float* dz, const Shape& out_shape, const Shape& target,
                     float* acc) {
  Shape dummy = target;
  for_each_bcast(out_shape, target, dummy,
                 [&](int64_t o, int64_t t, int64_t) { acc[t] += dz[o]; });
}

template <class FwdF, class DaF, class DbF>
Tensor binary_op(const Tensor& a, const Tensor& b, FwdF fwd, DaF da_of, DbF db_of,
                 const char* name) {
  if (!a.defined() || !b.defined()) fail(std::string(name) + ": undefined operand");
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<float> out(static_cast<size_t>(shape_numel(out_shape)));
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
  } else {
    for_each_bcast(out_shape, a.shape(), b.shape(),
                   [&](int64_t o, int64_t ia, int64_t ib) { out[o] = fwd(pa[ia], pb[ib]); });
  }
  Tensor av = a, bv = b;
  return make_node(out_shape, std::move(out), {a, b}, [av, bv, da_of, db_of](Tensor::Impl& self) {
    const float* gy = self.grad.data();
    const float* pa2 = av.data().data();
    const float* pb2 = bv.data().data();
    bool same = av.shape() == bv.shape() && av.shape() == self.shape;
    if (av.needs_grad()) {
      float* ga = grad_buffer(*av.impl_);
      if (same) {
        for (size_t i = 0; i < self.data.size(); ++i) ga[i] += gy[i] * da_of(pa2[i], pb2[i]);
      } else {
        for_each_bcast(self.shape, av.shape(), bv.shape(),
                       [&](int64_t o, int64_t ia, int64_t ib) { ga[ia] += gy[o] * da_of(pa2[ia], pb2[ib]); });
      }
    }
    if (bv.needs_grad()) {
      float* gb = grad_buffer(*bv.impl_);
      if (same) {
        for (size_t i = 0; i < self.data.size(); ++i) gb[i] += gy[i] * db_of(pa2[i], pb2[i]);
      } else {
        for_each_bcast(self.shape, av.shape(), bv.shape(),
                       [&](int64_t o, int64_t ia, int64_t ib) { gb[ib] += gy[o] * db_of(pa2[ia], pb2[ib]); });
      }
    }
  });
}

template <class FwdF, class DF>
Tensor unary_op(const Tensor& a, FwdF fwd, DF dval, const char* name) {
  if (!a.defined()) fail(std::string(name) + ": undefined operand");
  std::vector<float> out(a.data().begin(), a.data().end());
  for (float& v : out) v = fwd(v);
  Tensor av = a;
  return make_node(a.shape(), std::move(out), {a}, [av, dval](Tensor::Impl& self) {
    if (!av.needs_grad()) return;
    const float* gy = self.grad.data();
    const float* x = av.data().data();
    const float* y = self.data.data();
    float* ga = grad_buffer(*av.impl_);
    for (size_t i = 0; i < self.data.size(); ++i) ga[i] += gy[i] * dval(x[i], y[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
      [](float, float) { return 1.0f; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
      [](float, float) { return -1.0f; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](float x, float y) { return x * y; }, [](float, float y) { return y; },
      [](float x, float) { return x; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](float x, float y) { return x / y; }, [](float, float y) { return 1.0f / y; },
      [](float x, float y) { return -x / (y * y); }, "div");
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary_op(
      a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; }, "add_scalar");
}

Tensor mul_scalar(const Tensor& a, float s) {
  return unary_op(
      a, [s](float x) { return x * s; }, [s](float, float) { return s; }, "mul_scalar");
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](float x) { return x > 0.0f ? x : 0.0f; },
      [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; }, "relu");
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](float x) { return std::exp(x); }, [](float, float y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; }, "log");
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](float x) { return std::fabs(x); },
      [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); }, "abs");
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; },
      "tanh");
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](float x) {
        if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
        float e = std::exp(x);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); }, "sigmoid");
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a,
      [](float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); },
      [](float x, float) {
        if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
        float e = std::exp(x);
        return e / (1.0f + e);
      },
      "softplus");
}

Tensor pow_scalar(const Tensor& a, float p) {
  return unary_op(
      a, [p](float x) { return std::pow(x, p); },
      [p](float x, float) { return p * std::pow(x, p - 1.0f); }, "pow_scalar");
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor normal_cdf(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op(
      a,
      [](float x) {
        return static_cast<float>(0.5 * std::erfc(-static_cast<double>(x) * kInvSqrt2));
      },
      [](float x, float) {
        double xd = x;
        return static_cast<float>(kInvSqrt2Pi * std::exp(-0.5 * xd * xd));
      },
      "normal_cdf");
}

Tensor clamp_min(const Tensor& a, float bound) {
  if (!a.defined()) fail("clamp_min: undefined operand");
  std::vector<float> out(a.data().begin(), a.data().end());
  for (float& v : out) v = std::max(v, bound);
  Tensor av = a;
  return make_node(a.shape(), std::move(out), {a}, [av, bound](Tensor::Impl& self) {
    if (!av.needs_grad()) return;
    const float* gy = self.grad.data();
    const float* x = av.data().data();
    float* ga = grad_buffer(*av.impl_);
    for (size_t i = 0; i < self.data.size(); ++i)
      if (x[i] >= bound || gy[i] < 0.0f) ga[i] += gy[i];
  });
}

namespace {
float round_half_even(float v) {
  float fl = std::floor(v);
  float diff = v - fl;
  if (diff > 0.5f) return fl + 1.0f;
  if (diff < 0.5f) return fl;
  return std::fmod(fl, 2.0f) == 0.0f ? fl : fl + 1.0f;
}
}  // namespace

Tensor ste_round(const Tensor& a) {
  return unary_op(
      a, [](float x) { return round_half_even(x); }, [](float, float) { return 1.0f; },
      "ste_round");
}

Tensor softmax(const Tensor& a, int axis) {
  if (!a.defined()) fail("softmax: undefined operand");
  int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("softmax: bad axis");
  const Shape& s = a.shape();
  int64_t L = s[axis];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  for (int i = 0; i < axis; ++i) outer *= s[i];
  std::vector<float> out(a.data().size());
  const float* x = a.data().data();
  for (int64_t ou = 0; ou < outer; ++ou) {
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = ou * L * inner + in;
      float m = -std::numeric_limits<float>::infinity();
      for (int64_t j = 0; j < L; ++j) m = std::max(m, x[base + j * inner]);
      double total = 0.0;
      for (int64_t j = 0; j < L; ++j) {
        float e = std::exp(x[base + j * inner] - m);
        out[base + j * inner] = e;
        total += e;
      }
      float invt = static_cast<float>(1.0 / total);
      for (int64_t j = 0; j < L; ++j) out[base + j * inner] *= invt;
    }
  }
  Tensor av = a;
  return make_node(s, std::move(out), {a}, [av, L, inner, outer](Tensor::Impl& self) {
    if (!av.needs_grad()) return;
    const float* gy = self.grad.data();
    const float* y = self.data.data();
    float* ga = grad_buffer(*av.impl_);
    for (int64_t ou = 0; ou < outer; ++ou) {
      for (int64_t in = 0; in < inner; ++in) {
        int64_t base = ou * L * inner + in;
        double dot = 0.0;
        for (int64_t j = 0; j < L; ++j) dot += static_cast<double>(gy[base + j * inner]) * y[base + j * inner];
        for (int64_t j = 0; j < L; ++j) {
          int64_t k = base + j * inner;
          ga[k] += y[k] * (gy[k] - static_cast<float>(dot));
        }
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  if (!a.defined()) fail("sum: undefined operand");
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor av = a;
  return make_node({1}, {static_cast<float>(acc)}, {a}, [av](Tensor::Impl& self) {
    if (!av.needs_grad()) return;
    float g = self.grad[0];
    float* ga = grad_buffer(*av.impl_);
    for (size_t i = 0; i < av.data().size(); ++i) ga[i] += g;
  });
}

Tensor sum_axis(const Tensor& a, int axis, bool keepdim) {
  if (!a.defined()) fail("sum_axis: undefined operand");
  int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("sum_axis: bad axis");
  const Shape& s = a.shape();
  int64_t L = s[axis];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  for (int i = 0; i < axis; ++i) outer *= s[i];
  Shape out_shape;
  for (int i = 0; i < r; ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(s[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<float> out(static_cast<size_t>(outer * inner));
  const float* x = a.data().data();
  for (int64_t ou = 0; ou < outer; ++ou)
    for (int64_t in = 0; in < inner; ++in) {
      double acc = 0.0;
      for (int64_t j = 0; j < L; ++j) acc += x[ou * L * inner + j * inner + in];
      out[ou * inner + in] = static_cast<float>(acc);
    }
  Tensor av = a;
  return make_node(out_shape, std::move(out), {a}, [av, L, inner, outer](Tensor::Impl& self) {
    if (!av.needs_grad()) return;
    const float* gy = self.grad.data();
    float* ga = grad_buffer(*av.impl_);
    for (int64_t ou = 0; ou < outer; ++ou)
      for (int64_t in = 0; in < inner; ++in) {
        float g = gy[ou * inner + in];
        for (int64_t j = 0; j < L; ++j) ga[ou * L * inner + j * inner + in] += g;
      }
  });
}

Tensor mean(const Tensor& a) {
  return mul_scalar(sum(a), 1.0f / static_cast<float>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (!a.defined()) fail("reshape: undefined operand");
  if (shape_numel(shape) != a.numel())
    fail("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<float> out(a.data().begin(), a.data().end());
  Tensor av = a;
  return make_node(std::move(shape), std::move(out), {a}, [av](Tensor::Impl& self) {
    if (!av.needs_grad()) return;
    const float* gy = self.grad.data();
    float* ga = grad_buffer(*av.impl_);
    for (size_t i = 0; i < self.data.size(); ++i) ga[i] += gy[i];
  });
}

namespace {
std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}
}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& dims) {
  if (!a.defined()) fail("permute: undefined operand");
  int r = a.rank();
  if (static_cast<int>(dims.size()) != r) fail("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) {
    if (dims[i] < 0 || dims[i] >= r || seen[dims[i]]) fail("permute: bad axis list");
    seen[dims[i]] = true;
    out_shape[i] = a.shape()[dims[i]];
  }
  auto in_strides = row_major_strides(a.shape());
  std::vector<int64_t> strides(r);
  for (int i = 0; i < r; ++i) strides[i] = in_strides[dims[i]];
  int64_t n = a.numel();
  std::vector<float> out(static_cast<size_t>(n));
  const float* x = a.data().data();
  std::vector<int64_t> idx(r, 0);
  int64_t src = 0;
  for (int64_t o = 0; o < n; ++o) {
    out[o] = x[src];
    for (int i = r - 1; i >= 0; --i) {
      idx[i]++;
      src += strides[i];
      if (idx[i] < out_shape[i]) break;
      src -= strides[i] * out_shape[i];
      idx[i] = 0;
    }
  }
  Tensor av = a;
  std::vector<int64_t> strides_copy = strides;
  Shape out_copy = out_shape;
  return make_node(std::move(out_shape), std::move(out), {a},
                   [av, strides_copy, out_copy](Tensor::Impl& self) {
                     if (!av.needs_grad()) return;
                     const float* gy = self.grad.data();
                     float* ga = grad_buffer(*av.impl_);
                     int r2 = static_cast<int>(out_copy.size());
                     std::vector<int64_t> idx2(r2, 0);
                     int64_t src2 = 0;
                     int64_t n2 = static_cast<int64_t>(self.data.size());
                     for (int64_t o = 0; o < n2; ++o) {
                       ga[src2] += gy[o];
                       for (int i = r2 - 1; i >= 0; --i) {
                         idx2[i]++;
                         src2 += strides_copy[i];
                         if (idx2[i] < out_copy[i]) break;
                         src2 -= strides_copy[i] * out_copy[i];
                         idx2[i] = 0;
                       }
                     }
                   });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  if (!a.defined()) fail("slice: undefined operand");
  int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("slice: bad axis");
  const Shape& s = a.shape();
  if (start < 0 || len <= 0 || start + len > s[axis]) fail("slice: out of range");
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  for (int i = 0; i < axis; ++i) outer *= s[i];
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<float> out(static_cast<size_t>(outer * len * inner));
  const float* x = a.data().data();
  for (int64_t ou = 0; ou < outer; ++ou)
    std::memcpy(out.data() + ou * len * inner, x + (ou * s[axis] + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(float));
  Tensor av = a;
  int64_t L = s[axis];
  return make_node(std::move(out_shape), std::move(out), {a},
                   [av, outer, inner, L, start, len](Tensor::Impl& self) {
                     if (!av.needs_grad()) return;
                     const float* gy = self.grad.data();
                     float* ga = grad_buffer(*av.impl_);
                     for (int64_t ou = 0; ou < outer; ++ou) {
                       const float* g = gy + ou * len * inner;
                       float* dst = ga + (ou * L + start) * inner;
                       for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                     }
                   });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) fail("concat: no inputs");
  int r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("concat: bad axis");
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r) fail("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.shape()[i] != out_shape[i]) fail("concat: shape mismatch");
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  std::vector<float> out(static_cast<size_t>(outer * total * inner));
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    int64_t L = p.shape()[axis];
    const float* x = p.data().data();
    for (int64_t ou = 0; ou < outer; ++ou)
      std::memcpy(out.data() + (ou * total + offset) * inner, x + ou * L * inner,
                  static_cast<size_t>(L * inner) * sizeof(float));
    offset += L;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  std::vector<Tensor> held = parents;
  return make_node(std::move(out_shape), std::move(out), std::move(parents),
                   [held, axis, outer, inner, total](Tensor::Impl& self) {
                     const float* gy = self.grad.data();
                     int64_t offset2 = 0;
                     for (const Tensor& p : held) {
                       int64_t L = p.shape()[axis];
                       if (p.needs_grad()) {
                         float* ga = grad_buffer(*p.impl_);
                         for (int64_t ou = 0; ou < outer; ++ou) {
                           const float* g = gy + (ou * total + offset2) * inner;
                           float* dst = ga + ou * L * inner;
                           for (int64_t i = 0; i < L * inner; ++i) dst[i] += g[i];
                         }
                       }
                       offset2 += L;
                     }
                   });
}

Tensor expand(const Tensor& a, const Shape& shape) {
  if (!a.defined()) fail("expand: undefined operand");
  Shape check = broadcast_shape(a.shape(), shape);
  if (check != shape) fail("expand: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<float> out(static_cast<size_t>(shape_numel(shape)));
  const float* x = a.data().data();
  for_each_bcast(shape, a.shape(), a.shape(),
                 [&](int64_t o, int64_t ia, int64_t) { out[o] = x[ia]; });
  Tensor av = a;
  Shape out_copy = shape;
  return make_node(out_copy, std::move(out), {a}, [av, out_copy](Tensor::Impl& self) {
    if (!av.needs_grad()) return;
    reduce_to_shape(self.grad.data(), out_copy, av.shape(), grad_buffer(*av.impl_));
  });
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) fail("matmul: undefined operand");
  int ra = a.rank(), rb = b.rank();
  if (ra < 2 || rb < 2) fail("matmul: operands must have rank >= 2");
  int64_t M = a.dim(-2), K = a.dim(-1);
  int64_t Kb = b.dim(-2), N = b.dim(-1);
  if (K != Kb)
    fail("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  bool shared_b = rb == 2 && ra > 2;
  Shape batch_shape(a.shape().begin(), a.shape().end() - 2);
  if (!shared_b) {
    Shape bb(b.shape().begin(), b.shape().end() - 2);
    if (bb != batch_shape)
      fail("matmul: batch dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  int64_t B = shape_numel(batch_shape);
  Shape out_shape = batch_shape;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<float> out(static_cast<size_t>(B * M * N));
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (int64_t i = 0; i < B; ++i) {
    CMapRM ma(pa + i * M * K, M, K);
    CMapRM mb(shared_b ? pb : pb + i * K * N, K, N);
    MapRM mo(out.data() + i * M * N, M, N);
    mo.noalias() = ma * mb;
  }
  Tensor av = a, bv = b;
  return make_node(std::move(out_shape), std::move(out), {a, b},
                   [av, bv, B, M, K, N, shared_b](Tensor::Impl& self) {
                     const float* gy = self.grad.data();
                     const float* pa2 = av.data().data();
                     const float* pb2 = bv.data().data();
                     if (av.needs_grad()) {
                       float* ga = grad_buffer(*av.impl_);
                       for (int64_t i = 0; i < B; ++i) {
                         CMapRM mg(gy + i * M * N, M, N);
                         CMapRM mb(shared_b ? pb2 : pb2 + i * K * N, K, N);
                         MapRM mda(ga + i * M * K, M, K);
                         mda.noalias() += mg * mb.transpose();
                       }
                     }
                     if (bv.needs_grad()) {
                       float* gb = grad_buffer(*bv.impl_);
                       for (int64_t i = 0; i < B; ++i) {
                         CMapRM ma(pa2 + i * M * K, M, K);
                         CMapRM mg(gy + i * M * N, M, N);
                         MapRM mdb(shared_b ? gb : gb + i * K * N, K, N);
                         mdb.noalias() += ma.transpose() * mg;
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace {

// cols[(c,ky,kx)][(oy,ox)] = img[c][oy*stride-pad+ky][ox*stride-pad+kx], 0 outside.
void im2col(const float* img, int64_t C, int64_t H, int64_t W, int k, int stride, int pad,
            int64_t outH, int64_t outW, float* cols) {
  int64_t P = outH * outW;
  for (int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = cols + ((c * k + ky) * k + kx) * P;
        for (int64_t oy = 0; oy < outH; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * outW, row + (oy + 1) * outW, 0.0f);
            continue;
          }
          const float* src = img + (c * H + iy) * W;
          for (int64_t ox = 0; ox < outW; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            row[oy * outW + ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: img[c][iy][ix] += cols[(c,ky,kx)][(oy,ox)].
void col2im(const float* cols, int64_t C, int64_t H, int64_t W, int k, int stride, int pad,
            int64_t outH, int64_t outW, float* img) {
  int64_t P = outH * outW;
  for (int64_t c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols + ((c * k + ky) * k + kx) * P;
        for (int64_t oy = 0; oy < outH; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          float* dst = img + (c * H + iy) * W;
          for (int64_t ox = 0; ox < outW; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * outW + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  if (!x.defined() || !w.defined()) fail("conv2d: undefined operand");
  if (x.rank() != 4 || w.rank() != 4) fail("conv2d: expects x[N,C,H,W], w[M,C,kh,kw]");
  if (stride != 1 && stride != 2) fail("conv2d: stride must be 1 or 2");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t M = w.dim(0), wc = w.dim(1);
  int k = static_cast<int>(w.dim(2));
  if (w.dim(3) != k) fail("conv2d: kernel must be square");
  if (wc != C)
    fail("conv2d: input has " + std::to_string(C) + " channels but weight expects " +
         std::to_string(wc));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != M)) fail("conv2d: bad bias shape");
  int64_t outH = (H + 2 * padding - k) / stride + 1;
  int64_t outW = (W + 2 * padding - k) / stride + 1;
  if (H + 2 * padding < k || W + 2 * padding < k) fail("conv2d: input smaller than kernel");
  int64_t K = C * k * k, P = outH * outW;
  std::vector<float> out(static_cast<size_t>(N * M * P));
  std::vector<float> cols(static_cast<size_t>(K * P));
  const float* px = x.data().data();
  const float* pw = w.data().data();
  for (int64_t n = 0; n < N; ++n) {
    im2col(px + n * C * H * W, C, H, W, k, stride, padding, outH, outW, cols.data());
    CMapRM mw(pw, M, K);
    CMapRM mc(cols.data(), K, P);
    MapRM mo(out.data() + n * M * P, M, P);
    mo.noalias() = mw * mc;
  }
  if (b.defined()) {
    const float* pb = b.data().data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t m = 0; m < M; ++m) {
        float* dst = out.data() + (n * M + m) * P;
        float bias = pb[m];
        for (int64_t p = 0; p < P; ++p) dst[p] += bias;
      }
  }
  Tensor xv = x, wv = w, bv = b;
  return make_node({N, M, outH, outW}, std::move(out), {x, w, b},
                   [xv, wv, bv, N, C, H, W, M, k, stride, padding, outH, outW, K,
                    P](Tensor::Impl& self) {
                     const float* gy = self.grad.data();
                     const float* px2 = xv.data().data();
                     const float* pw2 = wv.data().data();
                     std::vector<float> cols(static_cast<size_t>(K * P));
                     if (bv.defined() && bv.needs_grad()) {
                       float* gb = grad_buffer(*bv.impl_);
                       for (int64_t n = 0; n < N; ++n)
                         for (int64_t m = 0; m < M; ++m) {
                           const float* g = gy + (n * M + m) * P;
                           double acc = 0.0;
                           for (int64_t p = 0; p < P; ++p) acc += g[p];
                           gb[m] += static_cast<float>(acc);
                         }
                     }
                     if (wv.needs_grad()) {
                       float* gw = grad_buffer(*wv.impl_);
                       MapRM mgw(gw, M, K);
                       for (int64_t n = 0; n < N; ++n) {
                         im2col(px2 + n * C * H * W, C, H, W, k, stride, padding, outH, outW,
                                cols.data());
                         CMapRM mg(gy + n * M * P, M, P);
                         CMapRM mc(cols.data(), K, P);
                         mgw.noalias() += mg * mc.transpose();
                       }
                     }
                     if (xv.needs_grad()) {
                       float* gx = grad_buffer(*xv.impl_);
                       CMapRM mw(pw2, M, K);
                       for (int64_t n = 0; n < N; ++n) {
                         CMapRM mg(gy + n * M * P, M, P);
                         MapRM mc(cols.data(), K, P);
                         mc.noalias() = mw.transpose() * mg;
                         col2im(cols.data(), C, H, W, k, stride, padding, outH, outW,
                                gx + n * C * H * W);
                       }
                     }
                   });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        int padding, int output_padding) {
  if (!x.defined() || !w.defined()) fail("conv_transpose2d: undefined operand");
  if (x.rank() != 4 || w.rank() != 4) fail("conv_transpose2d: expects x[N,C,H,W], w[C,M,kh,kw]");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t wc = w.dim(0), M = w.dim(1);
  int k = static_cast<int>(w.dim(2));
  if (w.dim(3) != k) fail("conv_transpose2d: kernel must be square");
  if (wc != C)
    fail("conv_transpose2d: input has " + std::to_string(C) + " channels but weight expects " +
         std::to_string(wc));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != M)) fail("conv_transpose2d: bad bias shape");
  int64_t outH = (H - 1) * stride - 2 * padding + k + output_padding;
  int64_t outW = (W - 1) * stride - 2 * padding + k + output_padding;
  if (outH <= 0 || outW <= 0) fail("conv_transpose2d: empty output");
  int64_t K = M * k * k, P = H * W;
  std::vector<float> out(static_cast<size_t>(N * M * outH * outW), 0.0f);
  std::vector<float> cols(static_cast<size_t>(K * P));
  const float* px = x.data().data();
  const float* pw = w.data().data();
  for (int64_t n = 0; n < N; ++n) {
    CMapRM mw(pw, C, K);
    CMapRM mx(px + n * C * P, C, P);
    MapRM mc(cols.data(), K, P);
    mc.noalias() = mw.transpose() * mx;
    col2im(cols.data(), M, outH, outW, k, stride, padding, H, W, out.data() + n * M * outH * outW);
  }
  if (b.defined()) {
    const float* pb = b.data().data();
    int64_t OP = outH * outW;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t m = 0; m < M; ++m) {
        float* dst = out.data() + (n * M + m) * OP;
        float bias = pb[m];
        for (int64_t p = 0; p < OP; ++p) dst[p] += bias;
      }
  }
  Tensor xv = x, wv = w, bv = b;
  return make_node({N, M, outH, outW}, std::move(out), {x, w, b},
                   [xv, wv, bv, N, C, H, W, M, k, stride, padding, outH, outW, K,
                    P](Tensor::Impl& self) {
                     const float* gy = self.grad.data();
                     const float* px2 = xv.data().data();
                     const float* pw2 = wv.data().data();
                     int64_t OP = outH * outW;
                     std::vector<float> cols(static_cast<size_t>(K * P));
                     if (bv.defined() && bv.needs_grad()) {
                       float* gb = grad_buffer(*bv.impl_);
                       for (int64_t n = 0; n < N; ++n)
                         for (int64_t m = 0; m < M; ++m) {
                           const float* g = gy + (n * M + m) * OP;
                           double acc = 0.0;
                           for (int64_t p = 0; p < OP; ++p) acc += g[p];
                           gb[m] += static_cast<float>(acc);
                         }
                     }
                     for (int64_t n = 0; n < N; ++n) {
                       bool need = wv.needs_grad() || xv.needs_grad();
                       if (!need) break;
                       im2col(gy + n * M * OP, M, outH, outW, k, stride, padding, H, W,
                              cols.data());
                       CMapRM mc(cols.data(), K, P);
                       if (wv.needs_grad()) {
                         float* gw = grad_buffer(*wv.impl_);
                         CMapRM mx(px2 + n * C * P, C, P);
                         MapRM mgw(gw, C, K);
                         mgw.noalias() += mx * mc.transpose();
                       }
                       if (xv.needs_grad()) {
                         float* gx = grad_buffer(*xv.impl_);
                         CMapRM mw(pw2, C, K);
                         MapRM mgx(gx + n * C * P, C, P);
                         mgx.noalias() += mw * mc;
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace {
struct LerpTap {
  int64_t i0, i1;
  float w1;  // weight of i1; i0 gets 1-w1
};

std::vector<LerpTap> upsample_taps(int64_t in_len) {
  std::vector<LerpTap> taps(static_cast<size_t>(2 * in_len));
  for (int64_t o = 0; o < 2 * in_len; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    double fl = std::floor(src);
    float w1 = static_cast<float>(src - fl);
    int64_t i0 = static_cast<int64_t>(fl);
    int64_t i1 = i0 + 1;
    taps[o] = {std::clamp<int64_t>(i0, 0, in_len - 1), std::clamp<int64_t>(i1, 0, in_len - 1), w1};
  }
  return taps;
}
}  // namespace

Tensor bilinear_upsample2x(const Tensor& x) {
  if (!x.defined() || x.rank() != 4) fail("bilinear_upsample2x: expects [N,C,H,W]");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto ty = upsample_taps(H);
  auto tx = upsample_taps(W);
  int64_t OH = 2 * H, OW = 2 * W;
  std::vector<float> out(static_cast<size_t>(N * C * OH * OW));
  const float* px = x.data().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const float* src = px + nc * H * W;
    float* dst = out.data() + nc * OH * OW;
    for (int64_t oy = 0; oy < OH; ++oy) {
      const LerpTap& a = ty[oy];
      const float* r0 = src + a.i0 * W;
      const float* r1 = src + a.i1 * W;
      float wy1 = a.w1, wy0 = 1.0f - a.w1;
      for (int64_t ox = 0; ox < OW; ++ox) {
        const LerpTap& t = tx[ox];
        float top = (1.0f - t.w1) * r0[t.i0] + t.w1 * r0[t.i1];
        float bot = (1.0f - t.w1) * r1[t.i0] + t.w1 * r1[t.i1];
        dst[oy * OW + ox] = wy0 * top + wy1 * bot;
      }
    }
  }
  Tensor xv = x;
  return make_node({N, C, OH, OW}, std::move(out), {x},
                   [xv, N, C, H, W, OH, OW, ty, tx](Tensor::Impl& self) {
                     if (!xv.needs_grad()) return;
                     const float* gy = self.grad.data();
                     float* gx = grad_buffer(*xv.impl_);
                     for (int64_t nc = 0; nc < N * C; ++nc) {
                       float* dst = gx + nc * H * W;
                       const float* g = gy + nc * OH * OW;
                       for (int64_t oy = 0; oy < OH; ++oy) {
                         const LerpTap& a = ty[oy];
                         for (int64_t ox = 0; ox < OW; ++ox) {
                           const LerpTap& t = tx[ox];
                           float gv = g[oy * OW + ox];
                           dst[a.i0 * W + t.i0] += (1.0f - a.w1) * (1.0f - t.w1) * gv;
                           dst[a.i0 * W + t.i1] += (1.0f - a.w1) * t.w1 * gv;
                           dst[a.i1 * W + t.i0] += a.w1 * (1.0f - t.w1) * gv;
                           dst[a.i1 * W + t.i1] += a.w1 * t.w1 * gv;
                         }
                       }
                     }
                   });
}

Tensor avg_pool2d(const Tensor& x, int k) {
  if (!x.defined() || x.rank() != 4) fail("avg_pool2d: expects [N,C,H,W]");
  if (k < 1) fail("avg_pool2d: bad kernel");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t OH = H / k, OW = W / k;
  if (OH < 1 || OW < 1) fail("avg_pool2d: input smaller than kernel");
  float inv = 1.0f / static_cast<float>(k * k);
  std::vector<float> out(static_cast<size_t>(N * C * OH * OW));
  const float* px = x.data().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const float* src = px + nc * H * W;
    float* dst = out.data() + nc * OH * OW;
    for (int64_t oy = 0; oy < OH; ++oy)
      for (int64_t ox = 0; ox < OW; ++ox) {
        float acc = 0.0f;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) acc += src[(oy * k + dy) * W + ox * k + dx];
        dst[oy * OW + ox] = acc * inv;
      }
  }
  Tensor xv = x;
  return make_node({N, C, OH, OW}, std::move(out), {x},
                   [xv, N, C, H, W, OH, OW, k, inv](Tensor::Impl& self) {
                     if (!xv.needs_grad()) return;
                     const float* gy = self.grad.data();
                     float* gx = grad_buffer(*xv.impl_);
                     for (int64_t nc = 0; nc < N * C; ++nc) {
                       float* dst = gx + nc * H * W;
                       const float* g = gy + nc * OH * OW;
                       for (int64_t oy = 0; oy < OH; ++oy)
                         for (int64_t ox = 0; ox < OW; ++ox) {
                           float gv = g[oy * OW + ox] * inv;
                           for (int dy = 0; dy < k; ++dy)
                             for (int dx = 0; dx < k; ++dx)
                               dst[(oy * k + dy) * W + ox * k + dx] += gv;
                         }
                     }
                   });
}

}  // namespace fot
