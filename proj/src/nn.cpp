#include "fot/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace fot {

Tensor apply_activation(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kNone:
      return x;
    case Activation::kRelu:
      return relu(x);
  }
  throw std::logic_error("unknown activation");
}

namespace {

void check_kernel(int k) {
  if (k != 1 && k != 3 && k != 5) throw std::invalid_argument("kernel size must be 1, 3 or 5");
}

// Kaiming-style uniform fan-in init.
Tensor init_weight(Shape shape, int64_t fan_in, Rng& rng, float gain = 1.0f) {
  float bound = gain * std::sqrt(6.0f / static_cast<float>(fan_in));
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (float& v : data) v = rng.uniform(-bound, bound);
  Tensor t = Tensor::from_data(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride_, Rng& rng, float init_gain) {
  check_kernel(k);
  stride = stride_;
  padding = (k - 1) / 2;
  weight = init_weight({out_ch, in_ch, k, k}, static_cast<int64_t>(in_ch) * k * k, rng, init_gain);
  bias = Tensor::zeros({out_ch});
  bias.set_requires_grad(true);
}

Conv2d Conv2d::identity(int ch) {
  Conv2d c;
  c.stride = 1;
  c.padding = 0;
  c.weight = Tensor::zeros({ch, ch, 1, 1});
  auto w = c.weight.mutable_data();
  for (int i = 0; i < ch; ++i) w[static_cast<size_t>(i) * ch + i] = 1.0f;
  c.bias = Tensor::zeros({ch});
  return c;
}

Conv2d Conv2d::avg_down2(int ch) {
  // Taps (1,1),(1,2),(2,1),(2,2) of a 3x3 stride-2 pad-1 kernel average each
  // non-overlapping 2x2 block for even input dims.
  Conv2d c;
  c.stride = 2;
  c.padding = 1;
  c.weight = Tensor::zeros({ch, ch, 3, 3});
  auto w = c.weight.mutable_data();
  for (int i = 0; i < ch; ++i) {
    size_t base = (static_cast<size_t>(i) * ch + i) * 9;
    w[base + 4] = 0.25f;  // (1,1)
    w[base + 5] = 0.25f;  // (1,2)
    w[base + 7] = 0.25f;  // (2,1)
    w[base + 8] = 0.25f;  // (2,2)
  }
  c.bias = Tensor::zeros({ch});
  return c;
}

void Conv2d::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int k, int stride_, Rng& rng) {
  check_kernel(k);
  stride = stride_;
  // out = (H-1)*s - 2p + k + op; for s==2 these give exactly 2H.
  if (k == 5) {
    padding = 2;
    output_padding = stride - 1;
  } else if (k == 3) {
    padding = 1;
    output_padding = stride - 1;
  } else {
    padding = 0;
    output_padding = stride - 1;
  }
  weight = init_weight({in_ch, out_ch, k, k}, static_cast<int64_t>(in_ch) * k * k, rng);
  bias = Tensor::zeros({out_ch});
  bias.set_requires_grad(true);
}

void ConvTranspose2d::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    size_t n = params_[i].tensor.data().size();
    m_[i].assign(n, 0.0f);
    v_[i].assign(n, 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step() {
  for (const auto& p : params_) {
    for (float g : p.tensor.grad())
      if (!std::isfinite(g))
        throw std::runtime_error("adam: non-finite gradient in parameter '" + p.name + "'");
  }
  ++step_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    auto grad = t.grad();
    if (grad.empty()) continue;  // parameter not touched by any loss yet
    auto data = t.mutable_data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (size_t j = 0; j < data.size(); ++j) {
      double g = grad[j];
      double mj = beta1_ * m[j] + (1.0 - beta1_) * g;
      double vj = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      double mhat = mj / bc1;
      double vhat = vj / bc2;
      data[j] = static_cast<float>(data[j] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

}  // namespace fot
