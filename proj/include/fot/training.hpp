#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fot/image.hpp"
#include "fot/model.hpp"

namespace fot {

enum class DistortionMetric { kMse, kMsSsim };

DistortionMetric parse_metric(const std::string& name);
const char* metric_name(DistortionMetric m);

/// λ grids published for each metric; other positive values are accepted.
extern const std::array<double, 4> kMseLambdaGrid;     // {0.0035, 0.0067, 0.01, 0.025}
extern const std::array<double, 4> kMsSsimLambdaGrid;  // {4, 16, 40, 120}

struct TrainConfig {
  double lambda = 0.01;
  DistortionMetric metric = DistortionMetric::kMse;
  int batch_size = 8;
  int crop = 64;       // multiple of 64
  double lr = 1e-4;
  int plateau_patience = 5;   // evals without improvement before halving lr
  double improve_eps = 1e-4;  // minimum eval-loss improvement that counts
  int eval_every = 100;       // iterations between evals
  int64_t max_iters = 2000;
  uint64_t seed = 1;

  void validate() const;
  std::string to_text() const;  // key=value lines
  static TrainConfig from_text_file(const std::string& path);
};

struct RdReport {
  int64_t iteration = 0;
  std::array<double, 3> split_rate_bits{};  // per split, indexed by Split
  std::array<double, 3> hyper_rate_bits{};
  double bpp = 0.0;
  double distortion = 0.0;  // loss-domain value (255-scale MSE or 1-MS-SSIM)
  double loss = 0.0;        // bpp + lambda * distortion
  double lr = 0.0;
};

void write_rd_report_csv(const std::string& path, const std::vector<RdReport>& reports);

/// Distortion in [0,1]-image units: MSE(x,x_hat) or 1 - MS-SSIM(x,x_hat).
/// Differentiable; shapes must match.
Tensor distortion(const Tensor& x, const Tensor& x_hat, DistortionMetric metric);

/// Factor taking distortion() into the loss domain: 255^2 for MSE (so the
/// published λ grid is meaningful), 1 for MS-SSIM.
double distortion_loss_scale(DistortionMetric metric);

/// loss = (sum of all rate bits)/n_pixels + λ * D, with D already in the
/// loss domain.
Tensor rd_loss(const std::array<Tensor, 3>& latent_bits, const std::array<Tensor, 3>& hyper_bits,
               const Tensor& distortion_loss, double lambda, int64_t n_pixels);
double rd_loss(const std::array<double, 3>& latent_bits, const std::array<double, 3>& hyper_bits,
               double distortion_loss, double lambda, int64_t n_pixels);

struct TrainResult {
  std::vector<RdReport> reports;
  bool diverged = false;
  double final_lr = 0.0;
};

/// Desk-scale RD training: noise-mode quantization in the graph, Adam,
/// lr halved on eval-loss plateaus, deterministic given the seed. Held-out
/// eval split: every 8th image when the dataset has at least 8. Saves an
/// atomic checkpoint at every eval when checkpoint_path is non-empty; a NaN
/// loss aborts without overwriting the last good one.
TrainResult train(CodecModel& model, const std::vector<ImageBuffer>& images,
                  const TrainConfig& config, const std::string& checkpoint_path = "",
                  const std::function<void(const RdReport&)>& on_eval = nullptr);

}  // namespace fot
