#include "fot/entropy_model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fot {

namespace {
std::atomic<int64_t> g_gaussian_clamps{0};

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }
}  // namespace

int64_t gaussian_clamp_count() { return g_gaussian_clamps.load(); }

Tensor quantize(const Tensor& y, QuantMode mode, Rng* rng) {
  if (mode == QuantMode::kRound) return ste_round(y);
  if (rng == nullptr) fail("quantize: noise mode requires a seeded rng");
  std::vector<float> noise(y.data().size());
  for (float& v : noise) v = rng->uniform() - 0.5f;
  return add(y, Tensor::from_data(y.shape(), std::move(noise)));
}

Tensor gaussian_likelihood(const Tensor& y_hat, const Tensor& sigma) {
  int64_t bad = 0;
  for (float s : sigma.data())
    if (s <= 0.0f) ++bad;
  if (bad > 0) g_gaussian_clamps.fetch_add(bad);
  Tensor s = clamp_min(sigma, kScaleBound);
  // Evaluate both CDF terms in the lower tail (at -|v|) where they are
  // small, avoiding the cancellation of two values near 1.
  Tensor a = neg(abs(y_hat));
  Tensor upper = normal_cdf(div(add_scalar(a, 0.5f), s));
  Tensor lower = normal_cdf(div(add_scalar(a, -0.5f), s));
  return clamp_min(sub(upper, lower), kLikelihoodFloor);
}

FactorizedDensity::FactorizedDensity(int channels, Rng& rng) : channels_(channels) {
  // Filter dims 1 -> 3 -> 3 -> 3 -> 1; init follows the usual univariate
  // density construction (matrices at log(expm1(1/scale/fan_out))).
  const int dims[kDepth + 1] = {1, kWidth, kWidth, kWidth, 1};
  const double init_scale = std::pow(10.0, 1.0 / kDepth);
  for (int layer = 0; layer < kDepth; ++layer) {
    int din = dims[layer], dout = dims[layer + 1];
    float minit = static_cast<float>(std::log(std::expm1(1.0 / init_scale / dout)));
    Tensor m = Tensor::full({1, channels, dout, din}, minit);
    m.set_requires_grad(true);
    matrices_.push_back(m);
    std::vector<float> b(static_cast<size_t>(channels * dout));
    for (float& v : b) v = rng.uniform(-0.5f, 0.5f);
    Tensor bt = Tensor::from_data({1, channels, dout, 1}, std::move(b));
    bt.set_requires_grad(true);
    biases_.push_back(bt);
    if (layer + 1 < kDepth) {
      Tensor f = Tensor::zeros({1, channels, dout, 1});
      f.set_requires_grad(true);
      factors_.push_back(f);
    }
  }
}

Tensor FactorizedDensity::cumulative(const Tensor& v) const {
  if (v.rank() != 4 || v.dim(1) != channels_)
    fail("factorized cumulative: expected [N," + std::to_string(channels_) + ",H,W], got " +
         shape_str(v.shape()));
  int64_t N = v.dim(0), H = v.dim(2), W = v.dim(3);
  Tensor u = reshape(v, {N, channels_, 1, H * W});
  for (int layer = 0; layer < kDepth; ++layer) {
    Tensor m = softplus(matrices_[static_cast<size_t>(layer)]);
    Shape mshape = m.shape();
    mshape[0] = N;
    u = matmul(expand(m, mshape), u);
    u = add(u, biases_[static_cast<size_t>(layer)]);
    if (layer + 1 < kDepth)
      u = add(u, mul(tanh(factors_[static_cast<size_t>(layer)]), tanh(u)));
  }
  return reshape(sigmoid(u), {N, channels_, H, W});
}

Tensor FactorizedDensity::likelihood(const Tensor& z_hat) const {
  Tensor upper = cumulative(add_scalar(z_hat, 0.5f));
  Tensor lower = cumulative(add_scalar(z_hat, -0.5f));
  return clamp_min(sub(upper, lower), kLikelihoodFloor);
}

void FactorizedDensity::collect(const std::string& prefix, ParamList& out) {
  for (int layer = 0; layer < kDepth; ++layer) {
    std::string base = prefix + ".l" + std::to_string(layer);
    out.push_back({base + ".matrix", matrices_[static_cast<size_t>(layer)]});
    out.push_back({base + ".bias", biases_[static_cast<size_t>(layer)]});
    if (layer + 1 < kDepth) out.push_back({base + ".factor", factors_[static_cast<size_t>(layer)]});
  }
}

double estimate_rate(const Tensor& p) {
  constexpr double kInvLn2 = 1.4426950408889634074;
  double bits = 0.0;
  for (float v : p.data()) {
    if (v <= 0.0f) fail("estimate_rate: non-positive likelihood");
    bits -= std::log(static_cast<double>(v)) * kInvLn2;
  }
  return bits;
}

Tensor rate_bits(const Tensor& p) {
  constexpr float kInvLn2 = 1.4426950408889634074f;
  return mul_scalar(sum(log(p)), -kInvLn2);
}

void CdfContext::validate() const {
  if (cdf.size() < 2) throw std::logic_error("cdf context with no slots");
  if (cdf.front() != 0 || cdf.back() != CdfTable::kTotal)
    throw std::logic_error("cdf must span [0, 2^16]");
  for (size_t i = 1; i < cdf.size(); ++i)
    if (cdf[i] <= cdf[i - 1]) throw std::logic_error("cdf slot with zero frequency");
}

double CdfTable::expected_bits(std::span<const int32_t> values,
                               std::span<const int32_t> context_ids) const {
  if (values.size() != context_ids.size()) fail("expected_bits: size mismatch");
  constexpr double kInvLn2 = 1.4426950408889634074;
  double bits = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    const CdfContext& ctx = contexts[static_cast<size_t>(context_ids[i])];
    int32_t rel = values[i] - ctx.min_symbol;
    if (rel >= 0 && rel < ctx.in_range_count()) {
      bits -= std::log(ctx.freq(static_cast<int>(rel)) / 65536.0) * kInvLn2;
    } else {
      if (!ctx.has_escape) fail("expected_bits: symbol outside support without escape");
      bits -= std::log(ctx.freq(ctx.escape_index()) / 65536.0) * kInvLn2;
      bits += 32.0;
    }
  }
  return bits;
}

std::vector<uint16_t> CdfTable::serialize() const {
  std::vector<uint16_t> out;
  out.push_back(static_cast<uint16_t>(contexts.size() & 0xFFFF));
  out.push_back(static_cast<uint16_t>(contexts.size() >> 16));
  for (const CdfContext& ctx : contexts) {
    uint32_t min_bits = static_cast<uint32_t>(ctx.min_symbol);
    out.push_back(static_cast<uint16_t>(min_bits & 0xFFFF));
    out.push_back(static_cast<uint16_t>(min_bits >> 16));
    out.push_back(static_cast<uint16_t>(ctx.has_escape ? 1 : 0));
    out.push_back(static_cast<uint16_t>(ctx.slot_count()));
    for (int s = 0; s < ctx.slot_count(); ++s) out.push_back(static_cast<uint16_t>(ctx.freq(s)));
  }
  return out;
}

CdfTable CdfTable::deserialize(const std::vector<uint16_t>& words) {
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > words.size()) throw std::runtime_error("cdf table: truncated record");
  };
  need(2);
  uint32_t count = words[0] | (static_cast<uint32_t>(words[1]) << 16);
  pos = 2;
  CdfTable table;
  for (uint32_t i = 0; i < count; ++i) {
    need(4);
    CdfContext ctx;
    ctx.min_symbol = static_cast<int32_t>(words[pos] | (static_cast<uint32_t>(words[pos + 1]) << 16));
    ctx.has_escape = words[pos + 2] != 0;
    int slots = words[pos + 3];
    pos += 4;
    need(static_cast<size_t>(slots));
    ctx.cdf.resize(static_cast<size_t>(slots) + 1);
    ctx.cdf[0] = 0;
    for (int s = 0; s < slots; ++s) {
      uint32_t f = words[pos++];
      ctx.cdf[static_cast<size_t>(s) + 1] = ctx.cdf[static_cast<size_t>(s)] + f;
    }
    ctx.validate();
    table.contexts.push_back(std::move(ctx));
  }
  return table;
}

std::vector<uint32_t> quantize_pmf(const std::vector<double>& pmf_in) {
  if (pmf_in.empty()) fail("quantize_pmf: empty pmf");
  const uint32_t total = CdfTable::kTotal;
  size_t n = pmf_in.size();
  double mass = 0.0;
  for (double p : pmf_in) {
    if (!(p >= 0.0)) fail("quantize_pmf: negative or NaN probability");
    mass += p;
  }
  if (mass <= 0.0) fail("quantize_pmf: zero total mass");
  std::vector<double> target(n);
  for (size_t i = 0; i < n; ++i) target[i] = pmf_in[i] / mass * total;
  std::vector<uint32_t> freq(n);
  int64_t sum = 0;
  for (size_t i = 0; i < n; ++i) {
    freq[i] = std::max<uint32_t>(1, static_cast<uint32_t>(std::lround(target[i])));
    sum += freq[i];
  }
  // Largest-remainder style fix-up toward an exact total; always keeps
  // every slot >= 1 and is deterministic (stable index order on ties).
  while (sum != total) {
    if (sum < total) {
      size_t best = 0;
      double best_def = -1e300;
      for (size_t i = 0; i < n; ++i) {
        double deficit = target[i] - freq[i];
        if (deficit > best_def) {
          best_def = deficit;
          best = i;
        }
      }
      freq[best] += 1;
      ++sum;
    } else {
      size_t best = n;
      double best_exc = -1e300;
      for (size_t i = 0; i < n; ++i) {
        if (freq[i] <= 1) continue;
        double excess = freq[i] - target[i];
        if (excess > best_exc) {
          best_exc = excess;
          best = i;
        }
      }
      if (best == n) fail("quantize_pmf: cannot reach total with all slots at 1");
      freq[best] -= 1;
      --sum;
    }
  }
  return freq;
}

GaussianConditional GaussianConditional::standard() {
  GaussianConditional gc;
  constexpr int kEntries = 64;
  const double lo = std::log(static_cast<double>(kScaleBound));
  const double hi = std::log(256.0);
  for (int i = 0; i < kEntries; ++i)
    gc.scale_table.push_back(
        static_cast<float>(std::exp(lo + (hi - lo) * i / (kEntries - 1))));
  return gc;
}

int GaussianConditional::scale_index(float sigma) const {
  float s = std::max(sigma, kScaleBound);
  auto it = std::lower_bound(scale_table.begin(), scale_table.end(), s);
  if (it == scale_table.end()) return static_cast<int>(scale_table.size()) - 1;
  return static_cast<int>(it - scale_table.begin());
}

namespace {

double normal_cdf_d(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

// z with 2*Phi(-z) == kTailMass, by bisection.
double tail_z() {
  double lo = 0.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (2.0 * normal_cdf_d(-mid) > kTailMass)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

CdfTable build_gaussian_cdf(const GaussianConditional& gc) {
  static const double z = tail_z();
  CdfTable table;
  for (float scale : gc.scale_table) {
    double sigma = scale;
    int64_t half = static_cast<int64_t>(std::ceil(sigma * z + 0.5));
    int64_t support = 2 * half + 1;
    if (support > (1 << 15))
      throw std::invalid_argument("gaussian cdf: support overflow (> 2^15 symbols)");
    std::vector<double> pmf(static_cast<size_t>(support) + 1);
    double covered = 0.0;
    for (int64_t v = -half; v <= half; ++v) {
      double p = normal_cdf_d((v + 0.5) / sigma) - normal_cdf_d((v - 0.5) / sigma);
      pmf[static_cast<size_t>(v + half)] = p;
      covered += p;
    }
    pmf.back() = std::max(1.0 - covered, 1e-12);  // escape
    CdfContext ctx;
    ctx.min_symbol = static_cast<int32_t>(-half);
    ctx.has_escape = true;
    auto freq = quantize_pmf(pmf);
    ctx.cdf.resize(freq.size() + 1);
    ctx.cdf[0] = 0;
    for (size_t i = 0; i < freq.size(); ++i) ctx.cdf[i + 1] = ctx.cdf[i] + freq[i];
    ctx.validate();
    table.contexts.push_back(std::move(ctx));
  }
  return table;
}

namespace {

// Cumulative at per-channel scalar probes, evaluated through the model.
std::vector<double> cumulative_probe(const FactorizedDensity& fd,
                                     const std::vector<double>& v) {
  NoGradGuard ng;
  int C = fd.channels();
  std::vector<float> probe(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) probe[static_cast<size_t>(c)] = static_cast<float>(v[static_cast<size_t>(c)]);
  Tensor t = Tensor::from_data({1, C, 1, 1}, std::move(probe));
  Tensor c = fd.cumulative(t);
  std::vector<double> out(static_cast<size_t>(C));
  for (int i = 0; i < C; ++i) out[static_cast<size_t>(i)] = c.data()[static_cast<size_t>(i)];
  return out;
}

}  // namespace

CdfTable build_factorized_cdf(const FactorizedDensity& fd) {
  int C = fd.channels();
  const double half_tail = kTailMass / 2.0;
  const int64_t limit = 1 << 20;  // search horizon, far beyond any support cap

  // Per-channel support bounds by bisection on the monotone cumulative.
  std::vector<double> lo(static_cast<size_t>(C), -static_cast<double>(limit));
  std::vector<double> hi(static_cast<size_t>(C), static_cast<double>(limit));
  std::vector<int64_t> vmin(static_cast<size_t>(C)), vmax(static_cast<size_t>(C));
  // lower edge: smallest v with c(v-0.5) > half_tail
  for (int step = 0; step < 50; ++step) {
    std::vector<double> mid(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) mid[static_cast<size_t>(c)] = 0.5 * (lo[static_cast<size_t>(c)] + hi[static_cast<size_t>(c)]);
    std::vector<double> probes(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) probes[static_cast<size_t>(c)] = std::floor(mid[static_cast<size_t>(c)]) - 0.5;
    auto cv = cumulative_probe(fd, probes);
    for (int c = 0; c < C; ++c) {
      if (cv[static_cast<size_t>(c)] > half_tail)
        hi[static_cast<size_t>(c)] = mid[static_cast<size_t>(c)];
      else
        lo[static_cast<size_t>(c)] = mid[static_cast<size_t>(c)];
    }
  }
  for (int c = 0; c < C; ++c) vmin[static_cast<size_t>(c)] = static_cast<int64_t>(std::floor(hi[static_cast<size_t>(c)]));
  // upper edge: largest v with c(v+0.5) < 1 - half_tail
  std::fill(lo.begin(), lo.end(), -static_cast<double>(limit));
  std::fill(hi.begin(), hi.end(), static_cast<double>(limit));
  for (int step = 0; step < 50; ++step) {
    std::vector<double> mid(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) mid[static_cast<size_t>(c)] = 0.5 * (lo[static_cast<size_t>(c)] + hi[static_cast<size_t>(c)]);
    std::vector<double> probes(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) probes[static_cast<size_t>(c)] = std::ceil(mid[static_cast<size_t>(c)]) + 0.5;
    auto cv = cumulative_probe(fd, probes);
    for (int c = 0; c < C; ++c) {
      if (cv[static_cast<size_t>(c)] < 1.0 - half_tail)
        lo[static_cast<size_t>(c)] = mid[static_cast<size_t>(c)];
      else
        hi[static_cast<size_t>(c)] = mid[static_cast<size_t>(c)];
    }
  }
  for (int c = 0; c < C; ++c) vmax[static_cast<size_t>(c)] = static_cast<int64_t>(std::ceil(lo[static_cast<size_t>(c)]));

  CdfTable table;
  for (int c = 0; c < C; ++c) {
    int64_t a = std::min(vmin[static_cast<size_t>(c)], vmax[static_cast<size_t>(c)]);
    int64_t b = std::max(vmin[static_cast<size_t>(c)], vmax[static_cast<size_t>(c)]);
    int64_t support = b - a + 1;
    if (support > (1 << 15))
      throw std::invalid_argument("factorized cdf: support overflow (> 2^15 symbols)");
    // Evaluate the cumulative on the half-integer grid for this channel.
    NoGradGuard ng;
    std::vector<float> grid(static_cast<size_t>(C * (support + 1)));
    for (int ch = 0; ch < C; ++ch)
      for (int64_t i = 0; i <= support; ++i)
        grid[static_cast<size_t>(ch * (support + 1) + i)] = static_cast<float>(a + i) - 0.5f;
    Tensor ct = fd.cumulative(
        Tensor::from_data({1, C, 1, support + 1}, std::move(grid)));
    std::vector<double> pmf(static_cast<size_t>(support) + 1);
    double covered = 0.0;
    for (int64_t i = 0; i < support; ++i) {
      double p = static_cast<double>(ct.data()[static_cast<size_t>(c * (support + 1) + i + 1)]) -
                 static_cast<double>(ct.data()[static_cast<size_t>(c * (support + 1) + i)]);
      p = std::max(p, 0.0);
      pmf[static_cast<size_t>(i)] = p;
      covered += p;
    }
    pmf.back() = std::max(1.0 - covered, 1e-12);  // escape
    CdfContext ctx;
    ctx.min_symbol = static_cast<int32_t>(a);
    ctx.has_escape = true;
    auto freq = quantize_pmf(pmf);
    ctx.cdf.resize(freq.size() + 1);
    ctx.cdf[0] = 0;
    for (size_t i = 0; i < freq.size(); ++i) ctx.cdf[i + 1] = ctx.cdf[i] + freq[i];
    ctx.validate();
    table.contexts.push_back(std::move(ctx));
  }
  return table;
}

}  // namespace fot
