#include "fot/metrics.hpp"

#include <fftw3.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fot {

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("psnr: image dimensions differ");
  double se = 0.0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  double mse = se / static_cast<double>(a.rgb.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace {

constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

Tensor gaussian_window_tensor() {
  constexpr int kSize = 11;
  constexpr double kSigma = 1.5;
  double w1[kSize];
  double total = 0.0;
  for (int i = 0; i < kSize; ++i) {
    double d = i - (kSize - 1) / 2.0;
    w1[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += w1[i];
  }
  std::vector<float> w(kSize * kSize);
  for (int i = 0; i < kSize; ++i)
    for (int j = 0; j < kSize; ++j)
      w[static_cast<size_t>(i * kSize + j)] = static_cast<float>(w1[i] * w1[j] / (total * total));
  return Tensor::from_data({1, 1, kSize, kSize}, std::move(w));
}

// Valid-mode Gaussian blur applied per channel via a single-plane conv.
Tensor blur(const Tensor& x, const Tensor& win) {
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor flat = reshape(x, {N * C, 1, H, W});
  Tensor out = conv2d(flat, win, Tensor(), 1, 0);
  return reshape(out, {N, C, out.dim(2), out.dim(3)});
}

// Mean luminance*cs and mean cs for one scale.
std::pair<Tensor, Tensor> ssim_terms(const Tensor& x, const Tensor& y, const Tensor& win) {
  constexpr float kC1 = 0.01f * 0.01f;
  constexpr float kC2 = 0.03f * 0.03f;
  Tensor mx = blur(x, win);
  Tensor my = blur(y, win);
  Tensor mxx = blur(mul(x, x), win);
  Tensor myy = blur(mul(y, y), win);
  Tensor mxy = blur(mul(x, y), win);
  Tensor vx = sub(mxx, mul(mx, mx));
  Tensor vy = sub(myy, mul(my, my));
  Tensor cxy = sub(mxy, mul(mx, my));
  Tensor l = div(add_scalar(mul_scalar(mul(mx, my), 2.0f), kC1),
                 add_scalar(add(mul(mx, mx), mul(my, my)), kC1));
  Tensor cs = div(add_scalar(mul_scalar(cxy, 2.0f), kC2), add_scalar(add(vx, vy), kC2));
  return {mean(mul(l, cs)), mean(cs)};
}

}  // namespace

Tensor ms_ssim(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) throw std::invalid_argument("ms_ssim: shape mismatch");
  if (x.rank() != 4) throw std::invalid_argument("ms_ssim: expects [N,C,H,W]");
  int64_t H = x.dim(2), W = x.dim(3);
  int scales = 0;
  while (scales < 5 && (std::min(H, W) >> scales) >= 11) ++scales;
  if (scales == 0)
    throw std::invalid_argument("ms_ssim: input smaller than one 11x11 window");
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[s];
  static const Tensor win = gaussian_window_tensor();

  Tensor cur_x = x, cur_y = y;
  Tensor result;
  for (int s = 0; s < scales; ++s) {
    auto [lcs, cs] = ssim_terms(cur_x, cur_y, win);
    float w = static_cast<float>(kMsSsimWeights[s] / wsum);
    Tensor term = pow_scalar(clamp_min(s == scales - 1 ? lcs : cs, 1e-6f), w);
    result = result.defined() ? mul(result, term) : term;
    if (s != scales - 1) {
      cur_x = avg_pool2d(cur_x, 2);
      cur_y = avg_pool2d(cur_y, 2);
    }
  }
  return result;
}

double ms_ssim_value(const Tensor& x, const Tensor& y) {
  NoGradGuard ng;
  return ms_ssim(x, y).item();
}

double ms_ssim_value(const ImageBuffer& a, const ImageBuffer& b) {
  return ms_ssim_value(image_to_tensor(a), image_to_tensor(b));
}

double msssim_db(double score) {
  if (score >= 1.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(1.0 - score);
}

void RdCurve::validate() const {
  if (points.size() < 4)
    throw std::invalid_argument("rd curve needs >= 4 points, got " + std::to_string(points.size()));
  for (size_t i = 1; i < points.size(); ++i)
    if (points[i].first <= points[i - 1].first)
      throw std::invalid_argument("rd curve bpp must be strictly increasing");
}

namespace {

// Least-squares cubic of log10(rate) over quality.
Eigen::Vector4d fit_log_rate(const RdCurve& c) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(c.points.size()), 4);
  Eigen::VectorXd b(static_cast<Eigen::Index>(c.points.size()));
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    double q = c.points[static_cast<size_t>(i)].second;
    A(i, 0) = 1.0;
    A(i, 1) = q;
    A(i, 2) = q * q;
    A(i, 3) = q * q * q;
    b(i) = std::log10(c.points[static_cast<size_t>(i)].first);
  }
  return A.colPivHouseholderQr().solve(b);
}

double integrate_cubic(const Eigen::Vector4d& p, double lo, double hi) {
  auto F = [&](double q) {
    return p(0) * q + p(1) * q * q / 2.0 + p(2) * q * q * q / 3.0 + p(3) * q * q * q * q / 4.0;
  };
  return F(hi) - F(lo);
}

}  // namespace

double bd_rate(const RdCurve& test, const RdCurve& anchor) {
  test.validate();
  anchor.validate();
  auto qrange = [](const RdCurve& c) {
    double lo = c.points.front().second, hi = lo;
    for (auto& [r, q] : c.points) {
      lo = std::min(lo, q);
      hi = std::max(hi, q);
    }
    return std::pair<double, double>(lo, hi);
  };
  auto [tlo, thi] = qrange(test);
  auto [alo, ahi] = qrange(anchor);
  double lo = std::max(tlo, alo), hi = std::min(thi, ahi);
  if (lo >= hi) throw std::invalid_argument("bd_rate: no overlapping quality range");
  Eigen::Vector4d pt = fit_log_rate(test);
  Eigen::Vector4d pa = fit_log_rate(anchor);
  double avg = (integrate_cubic(pt, lo, hi) - integrate_cubic(pa, lo, hi)) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

RdCurve read_rd_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open rd csv " + path);
  RdCurve c;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find("metric=");
      if (eq != std::string::npos) c.metric = line.substr(eq + 7);
      continue;
    }
    if (line.rfind("bpp", 0) == 0) continue;  // column header
    std::istringstream ss(line);
    std::string a, b;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ','))
      throw std::runtime_error("bad rd csv row: " + line);
    c.points.emplace_back(std::stod(a), std::stod(b));
  }
  return c;
}

void write_rd_csv(const std::string& path, const RdCurve& curve) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "# metric=" << curve.metric << "\n";
  f << "bpp,quality\n";
  for (auto& [r, q] : curve.points) f << r << "," << q << "\n";
}

BandReport psd_bands_gray(const std::vector<double>& gray, int width, int height, int n_bands) {
  if (n_bands < 2) throw std::invalid_argument("psd_bands: need at least 2 bands");
  if (static_cast<size_t>(width) * height != gray.size())
    throw std::invalid_argument("psd_bands: size mismatch");
  int64_t n = static_cast<int64_t>(width) * height;
  fftw_complex* in = fftw_alloc_complex(static_cast<size_t>(n));
  fftw_complex* out = fftw_alloc_complex(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    in[i][0] = gray[static_cast<size_t>(i)];
    in[i][1] = 0.0;
  }
  fftw_plan plan = fftw_plan_dft_2d(height, width, in, out, FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(plan);

  BandReport rep;
  rep.n_bands = n_bands;
  rep.proportions.assign(static_cast<size_t>(n_bands), 0.0);
  const double r_max = std::sqrt(0.5);
  for (int i = 0; i <= n_bands; ++i)
    rep.edges.push_back(r_max * i / n_bands);
  for (int ky = 0; ky < height; ++ky) {
    double fy = static_cast<double>(ky) / height;
    if (fy > 0.5) fy -= 1.0;
    for (int kx = 0; kx < width; ++kx) {
      double fx = static_cast<double>(kx) / width;
      if (fx > 0.5) fx -= 1.0;
      double e = out[static_cast<size_t>(ky) * width + kx][0] * out[static_cast<size_t>(ky) * width + kx][0] +
                 out[static_cast<size_t>(ky) * width + kx][1] * out[static_cast<size_t>(ky) * width + kx][1];
      if (ky == 0 && kx == 0) {
        rep.dc_energy = e;
        continue;
      }
      double r = std::sqrt(fx * fx + fy * fy);
      int band = std::min(static_cast<int>(r / r_max * n_bands), n_bands - 1);
      rep.proportions[static_cast<size_t>(band)] += e;
      rep.ac_energy += e;
    }
  }
  fftw_destroy_plan(plan);
  fftw_free(in);
  fftw_free(out);
  if (rep.ac_energy > 0.0)
    for (double& p : rep.proportions) p /= rep.ac_energy;
  return rep;
}

BandReport psd_bands(const ImageBuffer& img, int n_bands) {
  std::vector<double> gray(static_cast<size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      gray[static_cast<size_t>(y) * img.width + x] =
          0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  return psd_bands_gray(gray, img.width, img.height, n_bands);
}

std::array<double, 3> split_bit_allocation(const CompressedContainer& container) {
  container.validate();
  std::array<double, 3> out{0.0, 0.0, 0.0};
  double total = static_cast<double>(container.payload_bytes());
  if (total <= 0.0) throw std::runtime_error("split_bit_allocation: empty container payload");
  for (Split s : kAllSplits)
    out[static_cast<size_t>(s)] = static_cast<double>(container.split_payload_bytes(s)) / total;
  return out;
}

}  // namespace fot
