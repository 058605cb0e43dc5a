#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fot {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major float32 tensor with optional reverse-mode gradient
/// tracking. Copies are shallow (shared storage); forward results are
/// deterministic for identical inputs.
class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool needs_grad = false;  // requires_grad or depends on such a tensor
    std::vector<Tensor> parents;
    std::function<void(Impl&)> backward_fn;
  };

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from_data(Shape shape, std::vector<float> data);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int64_t dim(int i) const;  // supports negative indices
  int64_t numel() const;
  std::span<const float> data() const;
  std::span<float> mutable_data();  // direct storage access, no graph
  float item() const;               // requires numel() == 1

  Tensor& set_requires_grad(bool value);
  bool requires_grad() const;
  bool needs_grad() const;
  std::span<const float> grad() const;  // empty when never accumulated
  void zero_grad();                     // allocates a zero buffer
  void accumulate_grad(std::span<const float> g);

  /// Reverse-mode pass from a scalar. Frees the recorded graph as it goes.
  void backward() const;

  Impl* node() const { return impl_.get(); }

  std::shared_ptr<Impl> impl_;
};

/// Scoped switch that disables graph recording (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Elementwise ops, broadcasting over trailing dimensions (NumPy rules).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor pow_scalar(const Tensor& a, float p);  // requires a > 0 for non-integer p
Tensor square(const Tensor& a);

/// Standard normal CDF, elementwise; derivative is the normal pdf.
Tensor normal_cdf(const Tensor& a);

/// max(a, bound). Gradient passes when the input is above the bound or when
/// the upstream gradient pushes the value upward, so clamped values can
/// recover during training.
Tensor clamp_min(const Tensor& a, float bound);

/// Round half to even in the forward pass, identity gradient.
Tensor ste_round(const Tensor& a);

Tensor softmax(const Tensor& a, int axis);

Tensor sum(const Tensor& a);                             // scalar, f64 accumulation
Tensor sum_axis(const Tensor& a, int axis, bool keepdim);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& dims);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor expand(const Tensor& a, const Shape& shape);

/// Batched matmul: [B..., M, K] x [B..., K, N] with equal batch dims, or a
/// plain 2-D right-hand side shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: [N,C,H,W], w: [M,C,kh,kw], b: [M] or undefined. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding);

/// x: [N,C,H,W], w: [C,M,kh,kw] (input-major, as the adjoint of conv2d).
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride, int padding, int output_padding);

/// Factor-2 bilinear upsampling, half-pixel centers, edges clamped.
Tensor bilinear_upsample2x(const Tensor& x);

/// Non-overlapping k x k average pooling (floor semantics on odd dims).
Tensor avg_pool2d(const Tensor& x, int k);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace fot
