#include "fot/fusion_decoder.hpp"

#include <stdexcept>

#include "fot/entropy_model.hpp"

namespace fot {

AttentionParams::AttentionParams(int channels, int reduction_, Rng& rng) {
  if (reduction_ < 1 || channels % reduction_ != 0)
    throw std::invalid_argument("attention: reduction must divide the channel width");
  reduction = reduction_;
  int cr = channels / reduction_;
  auto init = [&](int out_ch, int in_ch) {
    float bound = std::sqrt(6.0f / static_cast<float>(in_ch));
    std::vector<float> w(static_cast<size_t>(out_ch) * in_ch);
    for (float& v : w) v = rng.uniform(-bound, bound);
    Tensor t = Tensor::from_data({out_ch, in_ch, 1, 1}, std::move(w));
    t.set_requires_grad(true);
    return t;
  };
  q_weight = init(cr, channels);
  k_weight = init(cr, channels);
  v_weight = init(channels, channels);
  q_bias = Tensor::zeros({cr}).set_requires_grad(true);
  k_bias = Tensor::zeros({cr}).set_requires_grad(true);
  v_bias = Tensor::zeros({channels}).set_requires_grad(true);
}

int64_t AttentionParams::param_count() const {
  return q_weight.numel() + q_bias.numel() + k_weight.numel() + k_bias.numel() +
         v_weight.numel() + v_bias.numel();
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".q.weight", q_weight});
  out.push_back({prefix + ".q.bias", q_bias});
  out.push_back({prefix + ".k.weight", k_weight});
  out.push_back({prefix + ".k.bias", k_bias});
  out.push_back({prefix + ".v.weight", v_weight});
  out.push_back({prefix + ".v.bias", v_bias});
}

Tensor criss_cross_attention(const Tensor& f, const AttentionParams& params) {
  if (f.rank() != 4) throw std::invalid_argument("criss_cross_attention: expects [N,C,H,W]");
  if (f.dim(1) != params.channels())
    throw std::invalid_argument("criss_cross_attention: channel mismatch");
  int64_t H = f.dim(2), W = f.dim(3);
  Tensor q = conv2d(f, params.q_weight, params.q_bias, 1, 0);
  Tensor k = conv2d(f, params.k_weight, params.k_bias, 1, 0);
  Tensor v = conv2d(f, params.v_weight, params.v_bias, 1, 0);

  // Row affinities e[n,i,j,j'] and column affinities e[n,i,j,i'].
  Tensor e_row = matmul(permute(q, {0, 2, 3, 1}), permute(k, {0, 2, 1, 3}));
  Tensor e_col = permute(matmul(permute(q, {0, 3, 2, 1}), permute(k, {0, 3, 1, 2})), {0, 2, 1, 3});

  // The shared position (i,j) lives in both branches; mask it out of the
  // column branch so it is counted once. exp underflows the -1e9 to zero.
  Tensor mask = Tensor::zeros({1, H, 1, H});
  {
    auto m = mask.mutable_data();
    for (int64_t i = 0; i < H; ++i) m[static_cast<size_t>(i * H + i)] = -1e9f;
  }
  e_col = add(e_col, mask);

  std::array<Tensor, 2> parts = {e_row, e_col};
  Tensor weights = softmax(concat(parts, 3), 3);
  Tensor a_row = slice(weights, 3, 0, W);
  Tensor a_col = slice(weights, 3, W, H);

  Tensor out_row = matmul(a_row, permute(v, {0, 2, 3, 1}));
  Tensor out_col =
      permute(matmul(permute(a_col, {0, 2, 1, 3}), permute(v, {0, 3, 2, 1})), {0, 2, 1, 3});
  Tensor agg = permute(add(out_row, out_col), {0, 3, 1, 2});
  return add(f, agg);
}

FusionDecoder::FusionDecoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  int L = cfg.latent_channels, H = cfg.hyper_channels;
  for (Split s : kAllSplits) {
    size_t i = static_cast<size_t>(s);
    hdec1_[i] = ConvTranspose2d(H, H, 5, 2, rng);
    hdec2_[i] = ConvTranspose2d(H, H, 5, 2, rng);
    hdec3_[i] = Conv2d(H, L, 3, 1, rng);
    // start sigma near the initial latent scale instead of exp(0)=1
    std::fill(hdec3_[i].bias.mutable_data().begin(), hdec3_[i].bias.mutable_data().end(), 0.9f);
    attn_[i] = AttentionParams(L, cfg.attention_reduction, rng);
    int depth = s == Split::kHigh ? 4 : (s == Split::kMid ? 3 : 2);
    for (int d = 0; d < depth; ++d) {
      int in_ch = L;
      int out_ch = (d == depth - 1) ? 3 : L;
      branch_[i].emplace_back(in_ch, out_ch, 5, 2, rng);
    }
  }
}

Tensor FusionDecoder::hyper_decode(const Tensor& z_hat, Split split) const {
  size_t i = static_cast<size_t>(split);
  Tensor t = apply_activation(hdec1_[i](z_hat), cfg_.act());
  t = apply_activation(hdec2_[i](t), cfg_.act());
  return clamp_min(exp(hdec3_[i](t)), kScaleBound);
}

Tensor FusionDecoder::branch(const Tensor& y_hat, Split split) const {
  size_t i = static_cast<size_t>(split);
  const auto& chain = branch_[i];
  Tensor t = apply_activation(chain[0](y_hat), cfg_.act());
  t = criss_cross_attention(t, attn_[i]);
  for (size_t d = 1; d + 1 < chain.size(); ++d) t = apply_activation(chain[d](t), cfg_.act());
  return chain.back()(t);
}

Tensor FusionDecoder::reconstruct(const LatentBundle& latents, const SplitMask& mask) const {
  if (!mask.any()) throw std::invalid_argument("reconstruct: empty split mask");
  Tensor acc;
  for (Split s : kAllSplits) {
    if (!mask.get(s)) continue;
    const Tensor& y = latents.y_hat_of(s);
    if (!y.defined())
      throw std::invalid_argument(std::string("reconstruct: split '") + split_name(s) +
                                  "' enabled but its latent is missing");
    Tensor part = branch(y, s);
    acc = acc.defined() ? add(acc, part) : part;
  }
  return acc;
}

void FusionDecoder::collect(ParamList& out) {
  for (Split s : kAllSplits) {
    size_t i = static_cast<size_t>(s);
    std::string n = split_name(s);
    hdec1_[i].collect("hdec." + n + ".deconv1", out);
    hdec2_[i].collect("hdec." + n + ".deconv2", out);
    hdec3_[i].collect("hdec." + n + ".conv3", out);
    for (size_t d = 0; d < branch_[i].size(); ++d)
      branch_[i][d].collect("dec." + n + ".deconv" + std::to_string(d + 1), out);
    attn_[i].collect("dec." + n + ".attn", out);
  }
}

}  // namespace fot
