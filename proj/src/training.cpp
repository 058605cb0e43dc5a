#include "fot/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fot/metrics.hpp"

namespace fot {

const std::array<double, 4> kMseLambdaGrid = {0.0035, 0.0067, 0.01, 0.025};
const std::array<double, 4> kMsSsimLambdaGrid = {4.0, 16.0, 40.0, 120.0};

DistortionMetric parse_metric(const std::string& name) {
  if (name == "mse") return DistortionMetric::kMse;
  if (name == "ms-ssim" || name == "msssim") return DistortionMetric::kMsSsim;
  throw std::invalid_argument("unknown distortion metric '" + name + "' (mse | ms-ssim)");
}

const char* metric_name(DistortionMetric m) {
  return m == DistortionMetric::kMse ? "mse" : "ms-ssim";
}

void TrainConfig::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("train: lambda must be positive");
  if (crop <= 0 || crop % 64 != 0) throw std::invalid_argument("train: crop must be a multiple of 64");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (max_iters < 1) throw std::invalid_argument("train: max_iters must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "lambda=" << lambda << "\n";
  os << "metric=" << metric_name(metric) << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "crop=" << crop << "\n";
  os << "lr=" << lr << "\n";
  os << "plateau_patience=" << plateau_patience << "\n";
  os << "improve_eps=" << improve_eps << "\n";
  os << "eval_every=" << eval_every << "\n";
  os << "max_iters=" << max_iters << "\n";
  os << "seed=" << seed << "\n";
  return os.str();
}

TrainConfig TrainConfig::from_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open train config " + path);
  TrainConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "lambda")
      c.lambda = std::stod(val);
    else if (key == "metric")
      c.metric = parse_metric(val);
    else if (key == "batch_size")
      c.batch_size = std::stoi(val);
    else if (key == "crop")
      c.crop = std::stoi(val);
    else if (key == "lr")
      c.lr = std::stod(val);
    else if (key == "plateau_patience")
      c.plateau_patience = std::stoi(val);
    else if (key == "improve_eps")
      c.improve_eps = std::stod(val);
    else if (key == "eval_every")
      c.eval_every = std::stoi(val);
    else if (key == "max_iters")
      c.max_iters = std::stoll(val);
    else if (key == "seed")
      c.seed = std::stoull(val);
    else
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

void write_rd_report_csv(const std::string& path, const std::vector<RdReport>& reports) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "iteration,bpp,distortion,loss,lr\n";
  for (const RdReport& r : reports)
    f << r.iteration << "," << r.bpp << "," << r.distortion << "," << r.loss << "," << r.lr << "\n";
}

Tensor distortion(const Tensor& x, const Tensor& x_hat, DistortionMetric metric) {
  if (x.shape() != x_hat.shape())
    throw std::invalid_argument("distortion: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(x_hat.shape()));
  if (metric == DistortionMetric::kMse) {
    Tensor d = sub(x, x_hat);
    return mean(mul(d, d));
  }
  return add_scalar(neg(ms_ssim(x, x_hat)), 1.0f);
}

double distortion_loss_scale(DistortionMetric metric) {
  return metric == DistortionMetric::kMse ? 255.0 * 255.0 : 1.0;
}

Tensor rd_loss(const std::array<Tensor, 3>& latent_bits, const std::array<Tensor, 3>& hyper_bits,
               const Tensor& distortion_loss, double lambda, int64_t n_pixels) {
  if (n_pixels <= 0) throw std::invalid_argument("rd_loss: n_pixels must be positive");
  Tensor bits;
  for (int i = 0; i < 3; ++i) {
    Tensor t = add(latent_bits[static_cast<size_t>(i)], hyper_bits[static_cast<size_t>(i)]);
    bits = bits.defined() ? add(bits, t) : t;
  }
  Tensor bpp = mul_scalar(bits, static_cast<float>(1.0 / static_cast<double>(n_pixels)));
  return add(bpp, mul_scalar(distortion_loss, static_cast<float>(lambda)));
}

double rd_loss(const std::array<double, 3>& latent_bits, const std::array<double, 3>& hyper_bits,
               double distortion_loss, double lambda, int64_t n_pixels) {
  if (n_pixels <= 0) throw std::invalid_argument("rd_loss: n_pixels must be positive");
  if (!std::isfinite(distortion_loss)) throw std::invalid_argument("rd_loss: non-finite distortion");
  double bits = 0.0;
  for (int i = 0; i < 3; ++i) bits += latent_bits[static_cast<size_t>(i)] + hyper_bits[static_cast<size_t>(i)];
  return bits / static_cast<double>(n_pixels) + lambda * distortion_loss;
}

namespace {

// Random crop plus optional horizontal flip, stitched into one batch tensor.
Tensor make_batch(const std::vector<ImageBuffer>& images, const std::vector<int>& pool,
                  int batch, int crop, Rng& rng) {
  int64_t c = crop;
  std::vector<float> data(static_cast<size_t>(batch) * 3 * c * c);
  for (int b = 0; b < batch; ++b) {
    const ImageBuffer& img = images[static_cast<size_t>(pool[static_cast<size_t>(rng.index(static_cast<int64_t>(pool.size())))])];
    int64_t max_x = img.width - crop, max_y = img.height - crop;
    int64_t ox = max_x > 0 ? rng.index(max_x + 1) : 0;
    int64_t oy = max_y > 0 ? rng.index(max_y + 1) : 0;
    bool flip = rng.uniform() < 0.5f;
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t y = 0; y < c; ++y)
        for (int64_t x = 0; x < c; ++x) {
          int64_t sx = flip ? ox + c - 1 - x : ox + x;
          data[static_cast<size_t>(((b * 3 + ch) * c + y) * c + x)] =
              img.at(static_cast<int>(sx), static_cast<int>(oy + y), static_cast<int>(ch)) / 255.0f;
        }
  }
  return Tensor::from_data({batch, 3, c, c}, std::move(data));
}

// Deterministic center crop for eval.
Tensor center_crop_tensor(const ImageBuffer& img, int crop) {
  int64_t c = crop;
  int64_t ox = (img.width - crop) / 2, oy = (img.height - crop) / 2;
  std::vector<float> data(static_cast<size_t>(3 * c * c));
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t y = 0; y < c; ++y)
      for (int64_t x = 0; x < c; ++x)
        data[static_cast<size_t>((ch * c + y) * c + x)] =
            img.at(static_cast<int>(ox + x), static_cast<int>(oy + y), static_cast<int>(ch)) / 255.0f;
  return Tensor::from_data({1, 3, c, c}, std::move(data));
}

struct EvalOutcome {
  RdReport report;
  bool finite = true;
};

EvalOutcome evaluate(CodecModel& model, const std::vector<ImageBuffer>& images,
                     const std::vector<int>& eval_set, const TrainConfig& cfg, int64_t iter,
                     double lr) {
  NoGradGuard ng;
  EvalOutcome out;
  out.report.iteration = iter;
  out.report.lr = lr;
  double dist_acc = 0.0;
  int64_t pixels_per_image = static_cast<int64_t>(cfg.crop) * cfg.crop;
  for (int idx : eval_set) {
    Tensor x = center_crop_tensor(images[static_cast<size_t>(idx)], cfg.crop);
    auto fw = model.forward(x, QuantMode::kRound, nullptr);
    for (Split s : kAllSplits) {
      size_t i = static_cast<size_t>(s);
      out.report.split_rate_bits[i] += estimate_rate(fw.y_likelihood[i]);
      out.report.hyper_rate_bits[i] += estimate_rate(fw.z_likelihood[i]);
    }
    Tensor d = distortion(x, fw.x_hat, cfg.metric);
    dist_acc += d.item() * distortion_loss_scale(cfg.metric);
  }
  double n = static_cast<double>(eval_set.size());
  for (int i = 0; i < 3; ++i) {
    out.report.split_rate_bits[static_cast<size_t>(i)] /= n;
    out.report.hyper_rate_bits[static_cast<size_t>(i)] /= n;
  }
  out.report.distortion = dist_acc / n;
  out.report.loss = rd_loss(out.report.split_rate_bits, out.report.hyper_rate_bits,
                            out.report.distortion, cfg.lambda, pixels_per_image);
  double bits = 0.0;
  for (int i = 0; i < 3; ++i)
    bits += out.report.split_rate_bits[static_cast<size_t>(i)] +
            out.report.hyper_rate_bits[static_cast<size_t>(i)];
  out.report.bpp = bits / static_cast<double>(pixels_per_image);
  out.finite = std::isfinite(out.report.loss);
  return out;
}

}  // namespace

TrainResult train(CodecModel& model, const std::vector<ImageBuffer>& images,
                  const TrainConfig& config, const std::string& checkpoint_path,
                  const std::function<void(const RdReport&)>& on_eval) {
  config.validate();
  if (images.empty()) throw std::invalid_argument("train: dataset is empty");
  for (const ImageBuffer& img : images)
    if (img.width < config.crop || img.height < config.crop)
      throw std::invalid_argument("train: image smaller than the crop size");

  // Held-out eval split: every 8th image when we can afford it.
  std::vector<int> train_set, eval_set;
  if (images.size() >= 8) {
    for (size_t i = 0; i < images.size(); ++i)
      (i % 8 == 7 ? eval_set : train_set).push_back(static_cast<int>(i));
  } else {
    for (size_t i = 0; i < images.size(); ++i) train_set.push_back(static_cast<int>(i));
    eval_set = train_set;
  }

  Rng rng(config.seed);
  Adam opt(model.parameters(), config.lr);
  int64_t pixels = static_cast<int64_t>(config.crop) * config.crop * config.batch_size;

  TrainResult result;
  double best_eval = std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int64_t iter = 1; iter <= config.max_iters; ++iter) {
    Tensor x = make_batch(images, train_set, config.batch_size, config.crop, rng);
    auto fw = model.forward(x, QuantMode::kNoise, &rng);
    std::array<Tensor, 3> ybits, zbits;
    for (Split s : kAllSplits) {
      size_t i = static_cast<size_t>(s);
      ybits[i] = rate_bits(fw.y_likelihood[i]);
      zbits[i] = rate_bits(fw.z_likelihood[i]);
    }
    Tensor d = mul_scalar(distortion(x, fw.x_hat, config.metric),
                          static_cast<float>(distortion_loss_scale(config.metric)));
    Tensor loss = rd_loss(ybits, zbits, d, config.lambda, pixels);
    if (!std::isfinite(loss.item())) {
      result.diverged = true;
      result.final_lr = opt.lr();
      return result;  // last good checkpoint stays on disk
    }
    opt.zero_grad();
    loss.backward();
    opt.step();

    if (iter % config.eval_every == 0 || iter == config.max_iters) {
      EvalOutcome ev = evaluate(model, images, eval_set, config, iter, opt.lr());
      if (!ev.finite) {
        result.diverged = true;
        result.final_lr = opt.lr();
        return result;
      }
      result.reports.push_back(ev.report);
      if (on_eval) on_eval(ev.report);
      if (ev.report.loss < best_eval - config.improve_eps) {
        best_eval = ev.report.loss;
        stale = 0;
      } else if (++stale >= config.plateau_patience) {
        opt.set_lr(opt.lr() / 2.0);
        stale = 0;
      }
      if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, model.to_checkpoint());
    }
  }
  result.final_lr = opt.lr();
  return result;
}

}  // namespace fot
