#include "fot/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

namespace fot {

CodecModel::CodecModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  transform_ = FreqTransform(cfg, rng);
  decoder_ = FusionDecoder(cfg, rng);
  for (Split s : kAllSplits)
    density_[static_cast<size_t>(s)] = FactorizedDensity(cfg.hyper_channels, rng);
}

CodecModel::Forward CodecModel::forward(const Tensor& x, QuantMode mode, Rng* noise_rng,
                                        const SplitMask& mask) const {
  Forward fw;
  Tensor I = transform_.spatial_sample(x);
  auto dec = transform_.decompose(I);
  for (Split s : kAllSplits) {
    size_t i = static_cast<size_t>(s);
    fw.latents.y[i] = dec.y[i];
    fw.latents.z[i] = transform_.hyper_encode(dec.y[i], s);
    fw.latents.z_hat[i] = quantize(fw.latents.z[i], mode, noise_rng);
    fw.latents.y_hat[i] = quantize(fw.latents.y[i], mode, noise_rng);
    fw.sigma[i] = decoder_.hyper_decode(fw.latents.z_hat[i], s);
    fw.y_likelihood[i] = gaussian_likelihood(fw.latents.y_hat[i], fw.sigma[i]);
    fw.z_likelihood[i] = density_[i].likelihood(fw.latents.z_hat[i]);
  }
  fw.x_hat = decoder_.reconstruct(fw.latents, mask);
  return fw;
}

ParamList CodecModel::parameters() {
  ParamList out;
  transform_.collect(out);
  decoder_.collect(out);
  for (Split s : kAllSplits)
    density_[static_cast<size_t>(s)].collect(std::string("fact.") + split_name(s), out);
  return out;
}

Checkpoint CodecModel::to_checkpoint(bool with_tables) const {
  Checkpoint ck;
  ck.params.emplace_back("config/pyramid_depth", Tensor::scalar(static_cast<float>(cfg_.pyramid_depth)));
  ck.params.emplace_back("config/base_channels", Tensor::scalar(static_cast<float>(cfg_.base_channels)));
  ck.params.emplace_back("config/latent_channels", Tensor::scalar(static_cast<float>(cfg_.latent_channels)));
  ck.params.emplace_back("config/hyper_channels", Tensor::scalar(static_cast<float>(cfg_.hyper_channels)));
  ck.params.emplace_back("config/attention_reduction",
                         Tensor::scalar(static_cast<float>(cfg_.attention_reduction)));
  ck.params.emplace_back("config/activation_relu",
                         Tensor::scalar(cfg_.act() == Activation::kRelu ? 1.0f : 0.0f));
  ParamList params = const_cast<CodecModel*>(this)->parameters();
  for (auto& p : params) ck.params.emplace_back(p.name, p.tensor);
  if (with_tables) {
    GaussianConditional gc = GaussianConditional::standard();
    ck.tables.emplace_back("cdf/y", build_gaussian_cdf(gc).serialize());
    for (Split s : kAllSplits)
      ck.tables.emplace_back(std::string("cdf/z/") + split_name(s),
                             build_factorized_cdf(density_[static_cast<size_t>(s)]).serialize());
  }
  return ck;
}

CodecModel CodecModel::from_checkpoint(const Checkpoint& ckpt, uint64_t seed) {
  auto get = [&](const std::string& name) {
    const Tensor* t = ckpt.find(name);
    if (!t) throw std::runtime_error("checkpoint: missing record '" + name + "'");
    return t;
  };
  ModelConfig cfg;
  cfg.pyramid_depth = static_cast<int>(get("config/pyramid_depth")->item());
  cfg.base_channels = static_cast<int>(get("config/base_channels")->item());
  cfg.latent_channels = static_cast<int>(get("config/latent_channels")->item());
  cfg.hyper_channels = static_cast<int>(get("config/hyper_channels")->item());
  cfg.attention_reduction = static_cast<int>(get("config/attention_reduction")->item());
  cfg.activation = get("config/activation_relu")->item() != 0.0f ? "relu" : "none";
  CodecModel model(cfg, seed);
  ParamList params = model.parameters();
  for (auto& p : params) {
    const Tensor* stored = get(p.name);
    if (stored->shape() != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + p.name + "': stored " +
                               shape_str(stored->shape()) + " vs model " +
                               shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    std::copy(stored->data().begin(), stored->data().end(), dst.begin());
  }
  return model;
}

namespace {

NetDesc hyper_encoder_desc(const ModelConfig& cfg, const std::string& name) {
  NetDesc d{name, {}};
  d.layers.push_back({LayerKind::kConv, cfg.latent_channels, cfg.hyper_channels, 3, 1, 1});
  d.layers.push_back({LayerKind::kConv, cfg.hyper_channels, cfg.hyper_channels, 5, 2, 2});
  d.layers.push_back({LayerKind::kConv, cfg.hyper_channels, cfg.hyper_channels, 5, 2, 2});
  return d;
}

NetDesc hyper_decoder_desc(const ModelConfig& cfg, const std::string& name) {
  NetDesc d{name, {}};
  d.layers.push_back({LayerKind::kDeconv, cfg.hyper_channels, cfg.hyper_channels, 5, 2, 2, 1});
  d.layers.push_back({LayerKind::kDeconv, cfg.hyper_channels, cfg.hyper_channels, 5, 2, 2, 1});
  d.layers.push_back({LayerKind::kConv, cfg.hyper_channels, cfg.latent_channels, 3, 1, 1});
  return d;
}

NetDesc decoder_branch_desc(const ModelConfig& cfg, Split s) {
  NetDesc d{std::string("dec.") + split_name(s), {}};
  int depth = s == Split::kHigh ? 4 : (s == Split::kMid ? 3 : 2);
  int L = cfg.latent_channels;
  d.layers.push_back({LayerKind::kDeconv, L, L, 5, 2, 2, 1});
  d.layers.push_back(
      {LayerKind::kAttention, L, L, 1, 1, 0, 0, cfg.attention_reduction});
  for (int i = 1; i < depth; ++i)
    d.layers.push_back({LayerKind::kDeconv, L, i == depth - 1 ? 3 : L, 5, 2, 2, 1});
  return d;
}

}  // namespace

NetDesc CodecModel::describe_encoder_branch(Split s) const {
  NetDesc d{std::string("enc.") + split_name(s), {}};
  int B = cfg_.base_channels, L = cfg_.latent_channels;
  // Input grid: I at m' x n'. The shared stride-2 conv and the second
  // stride-2 conv belong to the high chain; mid reuses the shared feature
  // at no extra cost; low runs the stride-1 conv at full resolution.
  if (s == Split::kHigh) {
    d.layers.push_back({LayerKind::kConv, B, B, 3, 2, 1});
    d.layers.push_back({LayerKind::kConv, B, B, 3, 2, 1});
  } else if (s == Split::kMid) {
    d.input_div = 2;  // consumes the shared stride-2 feature
  } else {
    d.layers.push_back({LayerKind::kConv, B, B, 3, 1, 1});
  }
  d.layers.push_back({LayerKind::kConv, B, L, 3, 1, 1});
  d.layers.push_back({LayerKind::kConv, L, L, 3, 1, 1});
  NetDesc henc = hyper_encoder_desc(cfg_, "");
  for (auto& l : henc.layers) d.layers.push_back(l);
  return d;
}

std::vector<NetDesc> CodecModel::describe_all() const {
  std::vector<NetDesc> nets;
  NetDesc sample{"sample", {}};
  sample.layers.push_back({LayerKind::kConv, 3, cfg_.base_channels, 3, 2, 1});
  sample.layers.push_back({LayerKind::kConv, cfg_.base_channels, cfg_.base_channels, 3, 2, 1});
  nets.push_back(sample);
  for (Split s : kAllSplits) nets.push_back(describe_encoder_branch(s));
  for (Split s : kAllSplits)
    nets.push_back(hyper_decoder_desc(cfg_, std::string("hdec.") + split_name(s)));
  for (Split s : kAllSplits) nets.push_back(decoder_branch_desc(cfg_, s));
  return nets;
}

CountResult count_params_macs(const NetDesc& net, int64_t in_h, int64_t in_w) {
  CountResult r;
  int64_t h = in_h / net.input_div, w = in_w / net.input_div;
  for (const LayerDesc& l : net.layers) {
    switch (l.kind) {
      case LayerKind::kConv: {
        int64_t oh = (h + 2 * l.padding - l.kernel) / l.stride + 1;
        int64_t ow = (w + 2 * l.padding - l.kernel) / l.stride + 1;
        int64_t per_out = static_cast<int64_t>(l.in_ch) * l.kernel * l.kernel + 1;
        r.params += l.out_ch * per_out;
        r.macs += oh * ow * l.out_ch * per_out;
        h = oh;
        w = ow;
        break;
      }
      case LayerKind::kDeconv: {
        int64_t oh = (h - 1) * l.stride - 2 * l.padding + l.kernel + l.output_padding;
        int64_t ow = (w - 1) * l.stride - 2 * l.padding + l.kernel + l.output_padding;
        r.params += static_cast<int64_t>(l.out_ch) *
                    (static_cast<int64_t>(l.in_ch) * l.kernel * l.kernel + 1);
        r.macs += h * w * static_cast<int64_t>(l.in_ch) * l.out_ch * l.kernel * l.kernel +
                  oh * ow * l.out_ch;
        h = oh;
        w = ow;
        break;
      }
      case LayerKind::kAttention: {
        int64_t c = l.in_ch;
        int64_t cr = c / l.reduction;
        r.params += (c * cr + cr) * 2 + c * c + c;
        r.macs += h * w * (cr * (c + 1) * 2 + c * (c + 1));
        break;
      }
      case LayerKind::kUpsample: {
        // bilinear x2: no learnable scalars, zero MACs by convention
        h *= 2;
        w *= 2;
        break;
      }
    }
  }
  return r;
}

}  // namespace fot
