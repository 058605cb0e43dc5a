#pragma once

#include <array>
#include <string>
#include <vector>

#include "fot/container.hpp"
#include "fot/image.hpp"
#include "fot/tensor.hpp"

namespace fot {

/// 10*log10(255^2/MSE) over 8-bit samples; +infinity for identical images.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

/// Multi-scale SSIM over [0,1] images [N,C,H,W]: 11x11 Gaussian window
/// sigma 1.5, standard 5-scale weights (renormalized prefix when the input
/// is too small for all five; min dim 176 carries all of them). Rejects
/// inputs smaller than one 11x11 window. Differentiable.
Tensor ms_ssim(const Tensor& x, const Tensor& y);
double ms_ssim_value(const Tensor& x, const Tensor& y);
double ms_ssim_value(const ImageBuffer& a, const ImageBuffer& b);

/// -10*log10(1 - score); +infinity for score 1.
double msssim_db(double score);

struct RdCurve {
  std::string metric;  // e.g. "psnr"
  std::vector<std::pair<double, double>> points;  // (bpp, quality), bpp increasing

  void validate() const;
};

/// Bjontegaard delta rate in percent (negative: test beats anchor). Cubic
/// fit of log-rate over quality, integrated over the overlapping quality
/// range. Needs >= 4 points per curve.
double bd_rate(const RdCurve& test, const RdCurve& anchor);

RdCurve read_rd_csv(const std::string& path);
void write_rd_csv(const std::string& path, const RdCurve& curve);

struct BandReport {
  int n_bands = 0;
  std::vector<double> proportions;  // per-band share of non-DC energy
  std::vector<double> edges;        // n_bands+1 radial edges, normalized
  double dc_energy = 0.0;
  double ac_energy = 0.0;
};

/// 2-D DFT power split into equal-width radial annuli over [0, sqrt(0.5)].
/// DC is excluded from the bands and reported separately; color inputs are
/// converted to Rec.601 luma. For a constant image all proportions are 0.
BandReport psd_bands(const ImageBuffer& img, int n_bands);
BandReport psd_bands_gray(const std::vector<double>& gray, int width, int height, int n_bands);

/// Per-split share of the container payload (y+z substream bytes), indexed
/// by Split; sums to 1.
std::array<double, 3> split_bit_allocation(const CompressedContainer& container);

}  // namespace fot
