#include "fot/freq_transform.hpp"

#include <stdexcept>

#include "fot/serialize.hpp"

namespace fot {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.base_channels = 128;
  c.latent_channels = 192;
  c.hyper_channels = 128;
  return c;
}

Activation ModelConfig::act() const {
  if (activation == "relu") return Activation::kRelu;
  if (activation == "none") return Activation::kNone;
  throw std::invalid_argument("unknown activation '" + activation + "'");
}

void ModelConfig::validate() const {
  if (pyramid_depth < 1) throw std::invalid_argument("pyramid_depth must be >= 1");
  if (pyramid_depth != 2)
    throw std::invalid_argument("only the 3-level pyramid (K=2) is implemented");
  if (base_channels < 1 || latent_channels < 1 || hyper_channels < 1)
    throw std::invalid_argument("channel counts must be >= 1");
  if (attention_reduction < 1 || latent_channels % attention_reduction != 0)
    throw std::invalid_argument("attention_reduction must divide latent_channels");
  act();  // validates the name
}

std::string ModelConfig::canonical() const {
  std::string s;
  s += "pyramid_depth=" + std::to_string(pyramid_depth) + "\n";
  s += "base_channels=" + std::to_string(base_channels) + "\n";
  s += "latent_channels=" + std::to_string(latent_channels) + "\n";
  s += "hyper_channels=" + std::to_string(hyper_channels) + "\n";
  s += "attention_reduction=" + std::to_string(attention_reduction) + "\n";
  s += "activation=" + activation + "\n";
  return s;
}

uint64_t ModelConfig::id_hash() const {
  std::string c = canonical();
  return fnv1a64(c.data(), c.size());
}

SplitMask SplitMask::parse(const std::string& text) {
  SplitMask m{false, false, false};
  size_t pos = 0;
  while (pos < text.size()) {
    size_t comma = text.find(',', pos);
    std::string tok = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (tok == "low")
      m.low = true;
    else if (tok == "mid")
      m.mid = true;
    else if (tok == "high")
      m.high = true;
    else if (tok == "all")
      m = SplitMask::all();
    else
      throw std::invalid_argument("unknown split '" + tok + "' (expected low, mid, high)");
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (!m.any()) throw std::invalid_argument("split list selects nothing");
  return m;
}

FreqTransform::FreqTransform(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  int B = cfg.base_channels, L = cfg.latent_channels, H = cfg.hyper_channels;
  sample1_ = Conv2d(3, B, 3, 2, rng);
  sample2_ = Conv2d(B, B, 3, 2, rng);
  down1_ = Conv2d(B, B, 3, 2, rng);
  down2_ = Conv2d(B, B, 3, 2, rng);
  low_ = Conv2d(B, B, 3, 1, rng);
  for (int s = 0; s < 3; ++s) {
    unify1_[s] = Conv2d(B, L, 3, 1, rng);
    // latents must start well above the unit quantization bin; a plain
    // fan-in init leaves them noise-dominated for thousands of steps
    unify2_[s] = Conv2d(L, L, 3, 1, rng, 6.0f);
    henc1_[s] = Conv2d(L, H, 3, 1, rng);
    henc2_[s] = Conv2d(H, H, 5, 2, rng);
    henc3_[s] = Conv2d(H, H, 5, 2, rng);
  }
}

FreqTransform FreqTransform::linear_mode(int channels) {
  FreqTransform t;
  t.linear_ = true;
  t.cfg_ = ModelConfig::desk();
  t.cfg_.base_channels = channels;
  t.cfg_.latent_channels = channels;
  t.cfg_.activation = "none";
  t.sample1_ = Conv2d::avg_down2(channels);
  t.sample2_ = Conv2d::avg_down2(channels);
  t.down1_ = Conv2d::avg_down2(channels);
  t.down2_ = Conv2d::avg_down2(channels);
  t.low_ = Conv2d::identity(channels);
  for (int s = 0; s < 3; ++s) {
    t.unify1_[s] = Conv2d::identity(channels);
    t.unify2_[s] = Conv2d::identity(channels);
  }
  Rng rng(0);
  int H = t.cfg_.hyper_channels;
  for (int s = 0; s < 3; ++s) {
    t.henc1_[s] = Conv2d(channels, H, 3, 1, rng);
    t.henc2_[s] = Conv2d(H, H, 5, 2, rng);
    t.henc3_[s] = Conv2d(H, H, 5, 2, rng);
  }
  return t;
}

Tensor FreqTransform::spatial_sample(const Tensor& x) const {
  if (x.rank() != 4) throw std::invalid_argument("spatial_sample: expects [N,C,H,W]");
  int64_t h = x.dim(2), w = x.dim(3);
  if (h % 4 != 0 || w % 4 != 0)
    throw std::invalid_argument(
        "spatial_sample: dims " + std::to_string(h) + "x" + std::to_string(w) +
        " not divisible by 4; pad to " + std::to_string((h + 3) / 4 * 4) + "x" +
        std::to_string((w + 3) / 4 * 4) + " or larger");
  Tensor t = apply_activation(sample1_(x), cfg_.act());
  return sample2_(t);
}

FreqTransform::Decomposition FreqTransform::decompose(const Tensor& I) const {
  if (I.rank() != 4) throw std::invalid_argument("decompose: expects [N,C,H,W]");
  if (I.dim(2) % 4 != 0 || I.dim(3) % 4 != 0)
    throw std::invalid_argument("decompose: spatial dims must be divisible by 4, got " +
                                shape_str(I.shape()));
  Decomposition d;
  d.shared_down = apply_activation(down1_(I), cfg_.act());
  Tensor pre_high = down2_(d.shared_down);
  Tensor pre_mid = sub(d.shared_down, bilinear_upsample2x(pre_high));
  d.full_res = low_(I);
  Tensor pre_low = sub(d.full_res, bilinear_upsample2x(pre_mid));
  const std::array<Tensor, 3> pre = {pre_high, pre_mid, pre_low};
  for (Split s : kAllSplits) {
    size_t i = static_cast<size_t>(s);
    Tensor u = apply_activation(unify1_[i](pre[i]), cfg_.act());
    d.y[i] = unify2_[i](u);
  }
  return d;
}

Tensor FreqTransform::hyper_encode(const Tensor& y, Split split) const {
  size_t i = static_cast<size_t>(split);
  Tensor t = apply_activation(henc1_[i](abs(y)), cfg_.act());
  t = apply_activation(henc2_[i](t), cfg_.act());
  return henc3_[i](t);
}

void FreqTransform::collect(ParamList& out) {
  sample1_.collect("sample.conv1", out);
  sample2_.collect("sample.conv2", out);
  down1_.collect("pyr.down1", out);
  down2_.collect("pyr.down2", out);
  low_.collect("pyr.low", out);
  for (Split s : kAllSplits) {
    size_t i = static_cast<size_t>(s);
    std::string n = split_name(s);
    unify1_[i].collect("unify." + n + ".conv1", out);
    unify2_[i].collect("unify." + n + ".conv2", out);
    henc1_[i].collect("henc." + n + ".conv1", out);
    henc2_[i].collect("henc." + n + ".conv2", out);
    henc3_[i].collect("henc." + n + ".conv3", out);
  }
}

}  // namespace fot
