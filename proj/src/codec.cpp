#include "fot/codec.hpp"

#include <cmath>
#include <future>
#include <stdexcept>

#include "fot/rans.hpp"

namespace fot {

namespace {

// Spatial divisor of each split's y grid relative to the padded image.
int y_divisor(Split s) {
  switch (s) {
    case Split::kHigh: return 16;
    case Split::kMid: return 8;
    case Split::kLow: return 4;
  }
  return 4;
}

std::vector<StreamSymbol> z_symbols(const Tensor& z_hat) {
  int64_t C = z_hat.dim(1), P = z_hat.dim(2) * z_hat.dim(3);
  std::vector<StreamSymbol> out;
  out.reserve(static_cast<size_t>(C * P));
  const float* d = z_hat.data().data();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t p = 0; p < P; ++p)
      out.push_back({static_cast<int32_t>(std::lround(d[c * P + p])), static_cast<int32_t>(c)});
  return out;
}

std::vector<StreamSymbol> y_symbols(const Tensor& y_hat, const Tensor& sigma,
                                    const GaussianConditional& gc) {
  std::vector<StreamSymbol> out;
  out.reserve(y_hat.data().size());
  const float* d = y_hat.data().data();
  const float* s = sigma.data().data();
  for (size_t i = 0; i < y_hat.data().size(); ++i)
    out.push_back({static_cast<int32_t>(std::lround(d[i])), gc.scale_index(s[i])});
  return out;
}

std::vector<int32_t> z_contexts(int64_t C, int64_t P) {
  std::vector<int32_t> ctx(static_cast<size_t>(C * P));
  for (int64_t c = 0; c < C; ++c)
    for (int64_t p = 0; p < P; ++p) ctx[static_cast<size_t>(c * P + p)] = static_cast<int32_t>(c);
  return ctx;
}

}  // namespace

CodingTables build_coding_tables(const CodecModel& model) {
  CodingTables t;
  t.gc = GaussianConditional::standard();
  t.y_table = build_gaussian_cdf(t.gc);
  for (Split s : kAllSplits)
    t.z_tables[static_cast<size_t>(s)] = build_factorized_cdf(model.density(s));
  return t;
}

CodingTables tables_from_checkpoint(const CodecModel& model, const Checkpoint& ckpt) {
  CodingTables t;
  t.gc = GaussianConditional::standard();
  const auto* y = ckpt.find_table("cdf/y");
  bool complete = y != nullptr;
  for (Split s : kAllSplits)
    complete = complete && ckpt.find_table(std::string("cdf/z/") + split_name(s)) != nullptr;
  if (!complete) return build_coding_tables(model);
  t.y_table = CdfTable::deserialize(*y);
  for (Split s : kAllSplits)
    t.z_tables[static_cast<size_t>(s)] =
        CdfTable::deserialize(*ckpt.find_table(std::string("cdf/z/") + split_name(s)));
  return t;
}

CompressedContainer encode_image(const CodecModel& model, const CodingTables& tables,
                                 const ImageBuffer& img, const SplitMask& mask, bool parallel) {
  if (!mask.any()) throw std::invalid_argument("encode_image: empty split mask");
  NoGradGuard ng;
  ImageBuffer padded = pad_to_multiple(img, 64);
  Tensor x = image_to_tensor(padded);
  Tensor I = model.transform().spatial_sample(x);
  auto dec = model.transform().decompose(I);

  CompressedContainer c;
  c.width = static_cast<uint32_t>(img.width);
  c.height = static_cast<uint32_t>(img.height);
  c.model_id = model.model_id();

  struct Job {
    int slot;
    std::vector<StreamSymbol> symbols;
    const CdfTable* table;
  };
  std::vector<Job> jobs;
  for (Split s : kAllSplits) {
    if (!mask.get(s)) continue;
    c.set_split(s);
    size_t i = static_cast<size_t>(s);
    const Tensor& y = dec.y[i];
    Tensor z = model.transform().hyper_encode(y, s);
    Tensor z_hat = quantize(z, QuantMode::kRound, nullptr);
    Tensor sigma = model.decoder().hyper_decode(z_hat, s);
    Tensor y_hat = quantize(y, QuantMode::kRound, nullptr);
    jobs.push_back({CompressedContainer::slot_index(false, s), z_symbols(z_hat),
                    &tables.z_tables[i]});
    jobs.push_back({CompressedContainer::slot_index(true, s), y_symbols(y_hat, sigma, tables.gc),
                    &tables.y_table});
  }

  auto run = [](const Job& j) { return rans_encode(j.symbols, *j.table); };
  if (parallel) {
    std::vector<std::future<std::vector<uint8_t>>> futures;
    futures.reserve(jobs.size());
    for (const Job& j : jobs)
      futures.push_back(std::async(std::launch::async, run, std::cref(j)));
    for (size_t k = 0; k < jobs.size(); ++k) {
      auto& slot = c.slots[static_cast<size_t>(jobs[k].slot)];
      slot.symbol_count = static_cast<uint32_t>(jobs[k].symbols.size());
      slot.payload = futures[k].get();
    }
  } else {
    for (const Job& j : jobs) {
      auto& slot = c.slots[static_cast<size_t>(j.slot)];
      slot.symbol_count = static_cast<uint32_t>(j.symbols.size());
      slot.payload = run(j);
    }
  }
  return c;
}

ImageBuffer decode_image(const CodecModel& model, const CodingTables& tables,
                         const CompressedContainer& container, const SplitMask& mask) {
  container.validate();
  if (container.model_id != model.model_id())
    throw ModelMismatchError("container was encoded with a different model (id mismatch)");
  SplitMask stored = container.stored_mask();
  if (!mask.subset_of(stored))
    throw std::runtime_error("requested splits {" + mask.str() +
                             "} not all present; container has {" + stored.str() + "}");
  NoGradGuard ng;
  int64_t pw = (container.width + 63) / 64 * 64;
  int64_t ph = (container.height + 63) / 64 * 64;
  int L = model.config().latent_channels;
  int Hc = model.config().hyper_channels;

  LatentBundle latents;
  for (Split s : kAllSplits) {
    if (!mask.get(s)) continue;
    size_t i = static_cast<size_t>(s);
    int64_t yd = y_divisor(s);
    int64_t yh = ph / yd, yw = pw / yd;
    int64_t zh = yh / 4, zw = yw / 4;
    if (zh < 1 || zw < 1)
      throw std::runtime_error("image too small for the hyper-latent grid");

    const auto& zslot = container.slots[static_cast<size_t>(CompressedContainer::slot_index(false, s))];
    int64_t zcount = static_cast<int64_t>(Hc) * zh * zw;
    if (zslot.symbol_count != zcount)
      throw std::runtime_error("z substream count mismatch for split " +
                               std::string(split_name(s)));
    auto zctx = z_contexts(Hc, zh * zw);
    auto zvals = rans_decode(zslot.payload, tables.z_tables[i], zctx);
    std::vector<float> zf(zvals.begin(), zvals.end());
    latents.z_hat[i] = Tensor::from_data({1, Hc, zh, zw}, std::move(zf));

    Tensor sigma = model.decoder().hyper_decode(latents.z_hat[i], s);
    const auto& yslot = container.slots[static_cast<size_t>(CompressedContainer::slot_index(true, s))];
    int64_t ycount = static_cast<int64_t>(L) * yh * yw;
    if (yslot.symbol_count != ycount)
      throw std::runtime_error("y substream count mismatch for split " +
                               std::string(split_name(s)));
    std::vector<int32_t> yctx(static_cast<size_t>(ycount));
    const float* sp = sigma.data().data();
    for (int64_t k = 0; k < ycount; ++k) yctx[static_cast<size_t>(k)] = tables.gc.scale_index(sp[k]);
    auto yvals = rans_decode(yslot.payload, tables.y_table, yctx);
    std::vector<float> yf(yvals.begin(), yvals.end());
    latents.y_hat[i] = Tensor::from_data({1, L, yh, yw}, std::move(yf));
  }

  Tensor x_hat = model.decoder().reconstruct(latents, mask);
  ImageBuffer out = tensor_to_image(x_hat);
  return crop_image(out, static_cast<int>(container.width), static_cast<int>(container.height));
}

ImageBuffer roundtrip_reference(const CodecModel& model, const ImageBuffer& img,
                                const SplitMask& mask) {
  NoGradGuard ng;
  ImageBuffer padded = pad_to_multiple(img, 64);
  Tensor x = image_to_tensor(padded);
  auto fw = model.forward(x, QuantMode::kRound, nullptr, mask);
  ImageBuffer out = tensor_to_image(fw.x_hat);
  return crop_image(out, img.width, img.height);
}

}  // namespace fot
