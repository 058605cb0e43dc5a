#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fot/codec.hpp"
#include "fot/freq_transform.hpp"
#include "fot/fusion_decoder.hpp"
#include "fot/model.hpp"
#include "oracles.hpp"

using namespace fot;
using oracle::DTensor;

namespace {

void zero_params_with_prefix(ParamList& params, const std::string& prefix) {
  for (auto& p : params)
    if (p.name.rfind(prefix, 0) == 0)
      std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), 0.0f);
}

}  // namespace

TEST_SUITE("transform") {

TEST_CASE("spatial_sample: shape arithmetic and divisibility errors") {
  Rng rng(1);
  FreqTransform ft(ModelConfig::desk(), rng);
  Tensor x = oracle::random_tensor({1, 3, 64, 64}, rng, 0.0f, 1.0f);
  Tensor I = ft.spatial_sample(x);
  CHECK(I.shape() == Shape{1, 32, 16, 16});

  Tensor big = oracle::random_tensor({1, 3, 256, 256}, rng, 0.0f, 1.0f);
  CHECK(ft.spatial_sample(big).shape() == Shape{1, 32, 64, 64});

  Tensor odd = oracle::random_tensor({1, 3, 66, 64}, rng, 0.0f, 1.0f);
  CHECK_THROWS_WITH_AS(ft.spatial_sample(odd), doctest::Contains("pad"), std::invalid_argument);
}

TEST_CASE("linear-mode spatial sampling preserves constants") {
  FreqTransform lin = FreqTransform::linear_mode(3);
  Tensor x = Tensor::full({1, 3, 32, 32}, 0.625f);
  Tensor I = lin.spatial_sample(x);
  CHECK(I.shape() == Shape{1, 3, 8, 8});
  for (float v : I.data()) CHECK(v == doctest::Approx(0.625f).epsilon(1e-6));
  // against the pooling oracle on non-constant input
  Rng rng(2);
  Tensor r = oracle::random_tensor({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  DTensor ref = oracle::avg_pool2d_ref(oracle::avg_pool2d_ref(DTensor::from(r), 2), 2);
  Tensor mine = lin.spatial_sample(r);
  for (size_t i = 0; i < ref.data.size(); ++i)
    CHECK(mine.data()[i] == doctest::Approx(ref.data[i]).epsilon(1e-5));
}

TEST_CASE("decompose: resolutions 1:2:4 and learned-mode shapes") {
  Rng rng(3);
  FreqTransform ft(ModelConfig::desk(), rng);
  Tensor I = oracle::random_tensor({1, 32, 64, 64}, rng);
  auto d = ft.decompose(I);
  CHECK(d.y[split_index(Split::kHigh)].shape() == Shape{1, 32, 16, 16});
  CHECK(d.y[split_index(Split::kMid)].shape() == Shape{1, 32, 32, 32});
  CHECK(d.y[split_index(Split::kLow)].shape() == Shape{1, 32, 64, 64});
}

TEST_CASE("linear-mode pyramid telescoping identities") {
  FreqTransform lin = FreqTransform::linear_mode(4);
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor I = oracle::random_tensor({1, 4, 16, 16}, rng, -1.0f, 1.0f);
    auto d = lin.decompose(I);
    // y_low + u(y_mid) == C(I) == I
    Tensor lhs = add(d.y[split_index(Split::kLow)],
                     bilinear_upsample2x(d.y[split_index(Split::kMid)]));
    for (size_t i = 0; i < lhs.data().size(); ++i)
      CHECK(std::fabs(lhs.data()[i] - d.full_res.data()[i]) <= 1e-5);
    // y_mid + u(y_high) == Cdown2(I)
    Tensor mhs = add(d.y[split_index(Split::kMid)],
                     bilinear_upsample2x(d.y[split_index(Split::kHigh)]));
    for (size_t i = 0; i < mhs.data().size(); ++i)
      CHECK(std::fabs(mhs.data()[i] - d.shared_down.data()[i]) <= 1e-5);
  }
}

TEST_CASE("no dead branches: perturbing one pixel of I moves some split") {
  Rng rng(5);
  FreqTransform ft(ModelConfig::desk(), rng);
  Tensor I = oracle::random_tensor({1, 32, 16, 16}, rng);
  auto base = ft.decompose(I);
  std::vector<float> data(I.data().begin(), I.data().end());
  data[1234] += 0.5f;
  auto moved = ft.decompose(Tensor::from_data(I.shape(), std::move(data)));
  bool any = false;
  for (int s = 0; s < 3; ++s)
    for (size_t i = 0; i < base.y[s].data().size(); ++i)
      if (base.y[s].data()[i] != moved.y[s].data()[i]) any = true;
  CHECK(any);
}

TEST_CASE("hyper_encode: shapes, zero weights, gradient flow") {
  Rng rng(6);
  ModelConfig cfg = ModelConfig::desk();
  FreqTransform ft(cfg, rng);
  Tensor y = oracle::random_tensor({1, 32, 16, 16}, rng);
  Tensor z = ft.hyper_encode(y, Split::kHigh);
  CHECK(z.shape() == Shape{1, 16, 4, 4});

  FreqTransform zft(cfg, rng);
  ParamList params;
  zft.collect(params);
  zero_params_with_prefix(params, "henc.");
  Tensor z0 = zft.hyper_encode(y, Split::kMid);
  for (float v : z0.data()) CHECK(v == 0.0f);

  // gradient flows from z back to y
  Tensor yg = oracle::random_tensor({1, 32, 8, 8}, rng);
  yg.set_requires_grad(true);
  sum(ft.hyper_encode(yg, Split::kLow)).backward();
  double gnorm = 0.0;
  for (float g : yg.grad()) gnorm += std::fabs(g);
  CHECK(gnorm > 0.0);
}

TEST_CASE("attention: degenerate 1x1 support equals f + value(f)") {
  Rng rng(7);
  AttentionParams ap(4, 2, rng);
  Tensor f = oracle::random_tensor({2, 4, 1, 1}, rng);
  Tensor out = criss_cross_attention(f, ap);
  Tensor vproj = conv2d(f, ap.v_weight, ap.v_bias, 1, 0);
  for (size_t i = 0; i < out.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(f.data()[i] + vproj.data()[i]).epsilon(1e-5));
}

TEST_CASE("attention: zero value projection is the identity") {
  Rng rng(8);
  AttentionParams ap(8, 4, rng);
  std::fill(ap.v_weight.mutable_data().begin(), ap.v_weight.mutable_data().end(), 0.0f);
  std::fill(ap.v_bias.mutable_data().begin(), ap.v_bias.mutable_data().end(), 0.0f);
  Tensor f = oracle::random_tensor({1, 8, 5, 6}, rng);
  Tensor out = criss_cross_attention(f, ap);
  for (size_t i = 0; i < out.data().size(); ++i) CHECK(out.data()[i] == f.data()[i]);
}

TEST_CASE("attention matches the brute-force oracle on a 4x4 grid") {
  Rng rng(9);
  AttentionParams ap(6, 3, rng);
  Tensor f = oracle::random_tensor({2, 6, 4, 4}, rng);
  Tensor out = criss_cross_attention(f, ap);
  DTensor ref = oracle::criss_cross_ref(
      DTensor::from(f), DTensor::from(ap.q_weight), DTensor::from(ap.q_bias),
      DTensor::from(ap.k_weight), DTensor::from(ap.k_bias), DTensor::from(ap.v_weight),
      DTensor::from(ap.v_bias));
  for (size_t i = 0; i < ref.data.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(ref.data[i]).epsilon(2e-5));
}

TEST_CASE("attention is consistent under transposition of square inputs") {
  Rng rng(10);
  AttentionParams ap(4, 2, rng);
  Tensor f = oracle::random_tensor({1, 4, 5, 5}, rng);
  Tensor a = criss_cross_attention(f, ap);
  Tensor ft_in = permute(f, {0, 1, 3, 2});
  Tensor b = criss_cross_attention(ft_in, ap);
  Tensor bt = permute(b, {0, 1, 3, 2});
  for (size_t i = 0; i < a.data().size(); ++i)
    CHECK(a.data()[i] == doctest::Approx(bt.data()[i]).epsilon(1e-4));
}

TEST_CASE("attention parameter counts") {
  Rng rng(11);
  AttentionParams a64(64, 8, rng);
  CHECK(a64.param_count() == 5200);
  AttentionParams a8(8, 8, rng);
  CHECK(a8.param_count() == 90);
  CHECK_THROWS_AS(AttentionParams(10, 4, rng), std::invalid_argument);
}

TEST_CASE("attention gradients vs the brute-force double oracle") {
  Rng rng(12);
  AttentionParams ap(4, 2, rng);
  Tensor f = oracle::random_tensor({1, 4, 3, 4}, rng);
  f.set_requires_grad(true);
  auto r = [&] {
    Rng rr(55);
    std::vector<float> w(f.data().size());
    for (float& v : w) v = rr.uniform(-1.0f, 1.0f);
    return w;
  }();
  Tensor probe = Tensor::from_data(f.shape(), std::vector<float>(r));
  Tensor loss = sum(mul(criss_cross_attention(f, ap), probe));
  loss.backward();

  DTensor df = DTensor::from(f);
  DTensor dqw = DTensor::from(ap.q_weight), dqb = DTensor::from(ap.q_bias);
  DTensor dkw = DTensor::from(ap.k_weight), dkb = DTensor::from(ap.k_bias);
  DTensor dvw = DTensor::from(ap.v_weight), dvb = DTensor::from(ap.v_bias);
  auto ref = [&]() {
    DTensor out = oracle::criss_cross_ref(df, dqw, dqb, dkw, dkb, dvw, dvb);
    double acc = 0.0;
    for (size_t i = 0; i < out.data.size(); ++i) acc += out.data[i] * r[i];
    return acc;
  };
  CHECK(oracle::fd_compare(df.data, f.grad(), ref, rng).max_rel < 1e-4);
  CHECK(oracle::fd_compare(dqw.data, ap.q_weight.grad(), ref, rng).max_rel < 1e-4);
  CHECK(oracle::fd_compare(dqb.data, ap.q_bias.grad(), ref, rng).max_rel < 1e-4);
  CHECK(oracle::fd_compare(dkw.data, ap.k_weight.grad(), ref, rng).max_rel < 1e-4);
  CHECK(oracle::fd_compare(dvw.data, ap.v_weight.grad(), ref, rng).max_rel < 1e-4);
  CHECK(oracle::fd_compare(dvb.data, ap.v_bias.grad(), ref, rng).max_rel < 1e-4);
  // The key bias shifts every affinity by the same q*kb, which softmax
  // cancels; its true gradient is identically zero.
  auto kb_rep = oracle::fd_compare(dkb.data, ap.k_bias.grad(), ref, rng);
  CHECK(std::fabs(kb_rep.worst_fd) < 1e-6);
  for (float g : ap.k_bias.grad()) CHECK(std::fabs(g) < 1e-4);
}

TEST_CASE("hyper_decode: shape, constant case, gradient through exp") {
  Rng rng(13);
  ModelConfig cfg = ModelConfig::desk();
  FusionDecoder fd(cfg, rng);
  Tensor z = oracle::random_tensor({1, 16, 4, 4}, rng);
  Tensor sigma = fd.hyper_decode(z, Split::kHigh);
  CHECK(sigma.shape() == Shape{1, 32, 16, 16});
  for (float v : sigma.data()) CHECK(v >= 0.11f);

  FusionDecoder fz(cfg, rng);
  ParamList params;
  fz.collect(params);
  for (auto& p : params) {
    if (p.name.rfind("hdec.", 0) != 0) continue;
    bool is_final_bias = p.name.find(".conv3.bias") != std::string::npos;
    bool is_final_weight = p.name.find(".conv3.weight") != std::string::npos;
    if (is_final_weight)
      std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), 0.0f);
    if (is_final_bias)
      std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), -1.5f);
  }
  Tensor s2 = fz.hyper_decode(z, Split::kMid);
  float expect = std::max(std::exp(-1.5f), 0.11f);
  for (float v : s2.data()) CHECK(v == doctest::Approx(expect).epsilon(1e-6));

  Tensor zg = oracle::random_tensor({1, 16, 2, 2}, rng);
  zg.set_requires_grad(true);
  sum(fd.hyper_decode(zg, Split::kLow)).backward();
  double gnorm = 0.0;
  for (float g : zg.grad()) gnorm += std::fabs(g);
  CHECK(gnorm > 0.0);
}

TEST_CASE("reconstruct: masking, additivity, empty mask") {
  Rng rng(14);
  ModelConfig cfg = ModelConfig::desk();
  FusionDecoder dec(cfg, rng);
  LatentBundle latents;
  latents.y_hat[split_index(Split::kHigh)] = oracle::random_tensor({1, 32, 4, 4}, rng);
  latents.y_hat[split_index(Split::kMid)] = oracle::random_tensor({1, 32, 8, 8}, rng);
  latents.y_hat[split_index(Split::kLow)] = oracle::random_tensor({1, 32, 16, 16}, rng);

  Tensor full = dec.reconstruct(latents, SplitMask::all());
  CHECK(full.shape() == Shape{1, 3, 64, 64});

  Tensor low_only = dec.reconstruct(latents, SplitMask::only(Split::kLow));
  Tensor low_branch = dec.branch(latents.y_hat[split_index(Split::kLow)], Split::kLow);
  for (size_t i = 0; i < low_only.data().size(); ++i)
    CHECK(low_only.data()[i] == low_branch.data()[i]);

  Tensor mid_only = dec.reconstruct(latents, SplitMask::only(Split::kMid));
  Tensor high_only = dec.reconstruct(latents, SplitMask::only(Split::kHigh));
  for (size_t i = 0; i < full.data().size(); ++i) {
    float sum3 = low_only.data()[i] + mid_only.data()[i] + high_only.data()[i];
    CHECK(std::fabs(full.data()[i] - sum3) <= 1e-5);
  }

  CHECK_THROWS_AS(dec.reconstruct(latents, SplitMask{false, false, false}),
                  std::invalid_argument);
}

TEST_CASE("model forward: full pipeline shapes and determinism") {
  ModelConfig cfg = ModelConfig::desk();
  CodecModel model(cfg, 99);
  Rng rng(15);
  Tensor x = oracle::random_tensor({1, 3, 64, 64}, rng, 0.0f, 1.0f);
  auto fw1 = model.forward(x, QuantMode::kRound, nullptr);
  CHECK(fw1.x_hat.shape() == Shape{1, 3, 64, 64});
  CHECK(fw1.latents.y_hat[split_index(Split::kHigh)].shape() == Shape{1, 32, 4, 4});
  CHECK(fw1.latents.z_hat[split_index(Split::kHigh)].shape() == Shape{1, 16, 1, 1});
  CHECK(fw1.latents.z_hat[split_index(Split::kLow)].shape() == Shape{1, 16, 4, 4});
  auto fw2 = model.forward(x, QuantMode::kRound, nullptr);
  CHECK(std::equal(fw1.x_hat.data().begin(), fw1.x_hat.data().end(), fw2.x_hat.data().begin()));
  // round-quantized latents are integral
  for (float v : fw1.latents.y_hat[2].data()) CHECK(v == std::nearbyint(v));
}

TEST_CASE("checkpoint round trip preserves the forward pass exactly") {
  CodecModel model(ModelConfig::desk(), 7);
  Checkpoint ck = model.to_checkpoint(false);
  std::string path = "/tmp/fot_model_ckpt.fotw";
  save_checkpoint(path, ck);
  CodecModel loaded = CodecModel::from_checkpoint(load_checkpoint(path));
  CHECK(loaded.model_id() == model.model_id());
  Rng rng(16);
  Tensor x = oracle::random_tensor({1, 3, 64, 64}, rng, 0.0f, 1.0f);
  auto a = model.forward(x, QuantMode::kRound, nullptr);
  auto b = loaded.forward(x, QuantMode::kRound, nullptr);
  CHECK(std::equal(a.x_hat.data().begin(), a.x_hat.data().end(), b.x_hat.data().begin()));
  std::remove(path.c_str());
}

TEST_CASE("count_params_macs: attention and conv reference points") {
  NetDesc att{"att", {{LayerKind::kAttention, 64, 64, 1, 1, 0, 0, 8}}};
  CountResult r = count_params_macs(att, 16, 16);
  CHECK(r.params == 5200);
  CHECK(r.macs == 1331200);

  NetDesc att8{"att8", {{LayerKind::kAttention, 8, 8, 1, 1, 0, 0, 8}}};
  CHECK(count_params_macs(att8, 4, 4).params == 90);

  NetDesc conv{"conv", {{LayerKind::kConv, 1, 1, 3, 1, 1}}};
  CountResult c = count_params_macs(conv, 4, 4);
  CHECK(c.params == 10);
  CHECK(c.macs == 160);
}

TEST_CASE("per-branch encoder MACs: low dominates; high above mid at base-heavy widths") {
  // Per-branch ordering depends on the channel plan; with base-dominant
  // widths the shared stride-2 chain attributed to the high branch puts it
  // above mid, and low dominates everything at full resolution.
  ModelConfig cfg;
  cfg.base_channels = 192;
  cfg.latent_channels = 96;
  cfg.hyper_channels = 96;
  cfg.attention_reduction = 8;
  CodecModel model(cfg, 1);
  int64_t m = 64;  // I grid for a 256x256 input
  CountResult low = count_params_macs(model.describe_encoder_branch(Split::kLow), m, m);
  CountResult mid = count_params_macs(model.describe_encoder_branch(Split::kMid), m, m);
  CountResult high = count_params_macs(model.describe_encoder_branch(Split::kHigh), m, m);
  CHECK(low.macs > high.macs);
  CHECK(high.macs > mid.macs);
}

}  // TEST_SUITE
