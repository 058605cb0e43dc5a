#include <cmath>
#include <limits>

#include "doctest.h"
#include "fot/metrics.hpp"
#include "oracles.hpp"

using namespace fot;
using oracle::DTensor;

TEST_SUITE("metrics") {

TEST_CASE("psnr: sentinel and closed-form values") {
  ImageBuffer a;
  a.width = 8;
  a.height = 8;
  a.rgb.assign(8 * 8 * 3, 100);
  ImageBuffer b = a;
  CHECK(std::isinf(psnr(a, b)));

  ImageBuffer w = a, z = a;
  for (auto& v : w.rgb) v = 255;
  for (auto& v : z.rgb) v = 0;
  CHECK(psnr(w, z) == doctest::Approx(0.0).epsilon(1e-12));

  ImageBuffer one = a;
  for (auto& v : one.rgb) v = 101;
  CHECK(psnr(a, one) == doctest::Approx(48.130803609).epsilon(1e-9));

  ImageBuffer small;
  small.width = 4;
  small.height = 8;
  small.rgb.assign(4 * 8 * 3, 0);
  CHECK_THROWS_AS(psnr(a, small), std::invalid_argument);
}

TEST_CASE("msssim_db closed forms") {
  CHECK(std::isinf(msssim_db(1.0)));
  CHECK(msssim_db(0.9) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(msssim_db(0.99) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("ms_ssim: identity, symmetry, oracle agreement") {
  Rng rng(21);
  Tensor x = oracle::random_tensor({1, 3, 48, 48}, rng, 0.0f, 1.0f);
  CHECK(ms_ssim_value(x, x) == doctest::Approx(1.0).epsilon(1e-6));

  std::vector<float> noisy(x.data().begin(), x.data().end());
  for (float& v : noisy) v = std::clamp(v + 0.05f * rng.normal(), 0.0f, 1.0f);
  Tensor y = Tensor::from_data(x.shape(), std::move(noisy));
  double xy = ms_ssim_value(x, y);
  double yx = ms_ssim_value(y, x);
  CHECK(xy == doctest::Approx(yx).epsilon(1e-7));
  CHECK(xy < 1.0);
  CHECK(xy > 0.3);

  double ref = oracle::ms_ssim_ref(DTensor::from(x), DTensor::from(y));
  CHECK(xy == doctest::Approx(ref).epsilon(1e-4));

  Tensor tiny = oracle::random_tensor({1, 1, 8, 8}, rng, 0.0f, 1.0f);
  CHECK_THROWS_AS(ms_ssim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("ms_ssim gradient vs the double oracle (looser tolerance)") {
  Rng rng(22);
  Tensor x = oracle::random_tensor({1, 1, 24, 24}, rng, 0.1f, 0.9f);
  std::vector<float> noisy(x.data().begin(), x.data().end());
  for (float& v : noisy) v = std::clamp(v + 0.08f * rng.normal(), 0.0f, 1.0f);
  Tensor y = Tensor::from_data(x.shape(), std::move(noisy));
  y.set_requires_grad(true);
  ms_ssim(x, y).backward();

  DTensor dx = DTensor::from(x), dy = DTensor::from(y);
  auto ref = [&]() { return oracle::ms_ssim_ref(dx, dy); };
  auto rep = oracle::fd_compare(dy.data, y.grad(), ref, rng, 1e-3, 60);
  CHECK(rep.max_rel < 1e-3);
}

TEST_CASE("bd_rate: identical curves, uniform rate shift, error paths") {
  RdCurve a;
  a.metric = "psnr";
  for (int i = 0; i < 5; ++i) a.points.emplace_back(0.2 + 0.2 * i, 30.0 + 1.5 * i);
  CHECK(bd_rate(a, a) == doctest::Approx(0.0).epsilon(1e-9));

  RdCurve shifted = a;
  for (auto& [r, q] : shifted.points) r *= 1.10;
  CHECK(bd_rate(shifted, a) == doctest::Approx(10.0).epsilon(1e-3));

  RdCurve three;
  three.points = {{0.1, 30}, {0.2, 31}, {0.3, 32}};
  CHECK_THROWS_AS(bd_rate(three, a), std::invalid_argument);

  RdCurve disjoint;
  for (int i = 0; i < 4; ++i) disjoint.points.emplace_back(0.1 + 0.1 * i, 80.0 + i);
  CHECK_THROWS_AS(bd_rate(disjoint, a), std::invalid_argument);

  RdCurve unsorted;
  unsorted.points = {{0.4, 30}, {0.2, 31}, {0.5, 32}, {0.6, 33}};
  CHECK_THROWS_AS(bd_rate(unsorted, a), std::invalid_argument);
}

TEST_CASE("bd_rate antisymmetry under rate-ratio inversion") {
  RdCurve a;
  for (int i = 0; i < 5; ++i) a.points.emplace_back(0.25 * std::pow(1.7, i), 29.0 + 2.0 * i);
  RdCurve b = a;
  for (auto& [r, q] : b.points) r *= 1.23;
  double ab = bd_rate(b, a) / 100.0;
  double ba = bd_rate(a, b) / 100.0;
  CHECK(std::fabs(ba + ab / (1.0 + ab)) < 1e-3);
}

TEST_CASE("bd_rate matches a dense numerical-integration oracle") {
  // True curves with log10(rate) exactly cubic in quality, so the fit is
  // exact and any disagreement comes from the integration step.
  auto log_rate_test = [](double q) {
    double t = (q - 30.0) / 10.0;
    return -0.8 + 0.9 * t - 0.12 * t * t + 0.03 * t * t * t;
  };
  auto log_rate_anchor = [](double q) {
    double t = (q - 30.0) / 10.0;
    return -0.6 + 1.0 * t - 0.05 * t * t + 0.01 * t * t * t;
  };
  RdCurve test, anchor;
  for (int i = 0; i < 6; ++i) {
    double q = 28.0 + 2.0 * i;
    test.points.emplace_back(std::pow(10.0, log_rate_test(q)), q);
  }
  for (int i = 0; i < 6; ++i) {
    double q = 29.0 + 2.0 * i;
    anchor.points.emplace_back(std::pow(10.0, log_rate_anchor(q)), q);
  }
  double mine = bd_rate(test, anchor);

  double lo = 29.0, hi = 38.0;
  const int steps = 200000;
  double acc = 0.0;
  for (int i = 0; i <= steps; ++i) {
    double q = lo + (hi - lo) * i / steps;
    double v = log_rate_test(q) - log_rate_anchor(q);
    acc += (i == 0 || i == steps) ? 0.5 * v : v;
  }
  double avg = acc / steps;
  double ref = (std::pow(10.0, avg) - 1.0) * 100.0;
  CHECK(std::fabs(mine - ref) < 0.05);
}

TEST_CASE("rd csv round trip") {
  RdCurve c;
  c.metric = "msssim_db";
  for (int i = 0; i < 4; ++i) c.points.emplace_back(0.1 * (i + 1), 10.0 + i);
  write_rd_csv("/tmp/fot_curve.csv", c);
  RdCurve back = read_rd_csv("/tmp/fot_curve.csv");
  CHECK(back.metric == "msssim_db");
  REQUIRE(back.points.size() == 4);
  CHECK(back.points[2].first == doctest::Approx(0.3));
  CHECK(back.points[2].second == doctest::Approx(12.0));
  std::remove("/tmp/fot_curve.csv");
}

TEST_CASE("psd_bands: constant image puts everything in DC") {
  ImageBuffer img;
  img.width = 32;
  img.height = 32;
  img.rgb.assign(32 * 32 * 3, 77);
  BandReport rep = psd_bands(img, 3);
  CHECK(rep.dc_energy > 0.0);
  CHECK(rep.ac_energy == doctest::Approx(0.0).epsilon(1e-9));
  for (double p : rep.proportions) CHECK(p == 0.0);
}

TEST_CASE("psd_bands: pure horizontal sinusoid lands in its band") {
  const int n = 128;
  std::vector<double> gray(n * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      gray[static_cast<size_t>(y) * n + x] = 128.0 + 100.0 * std::cos(2.0 * M_PI * 0.25 * x);
  BandReport rep = psd_bands_gray(gray, n, n, 3);
  // radial frequency 0.25 lies in band 2 of [0, sqrt(0.5)] split three ways
  CHECK(rep.proportions[1] >= 0.99);
  double total = 0.0;
  for (double p : rep.proportions) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("psd_bands: white noise matches annulus-area ratios") {
  Rng rng(33);
  const int n = 256;
  std::vector<double> gray(static_cast<size_t>(n) * n);
  for (double& v : gray) v = rng.normal();
  BandReport rep = psd_bands_gray(gray, n, n, 3);

  // Monte Carlo area of each annulus intersected with the frequency square.
  Rng mc(34);
  const int samples = 2000000;
  double r_max = std::sqrt(0.5);
  std::array<int64_t, 3> hits{0, 0, 0};
  for (int i = 0; i < samples; ++i) {
    double fx = mc.uniform(-0.5f, 0.5f);
    double fy = mc.uniform(-0.5f, 0.5f);
    double r = std::sqrt(fx * fx + fy * fy);
    int band = std::min(static_cast<int>(r / r_max * 3), 2);
    hits[static_cast<size_t>(band)]++;
  }
  for (int b = 0; b < 3; ++b) {
    double area = static_cast<double>(hits[static_cast<size_t>(b)]) / samples;
    CHECK(std::fabs(rep.proportions[static_cast<size_t>(b)] - area) / area < 0.05);
  }
}

TEST_CASE("psd_bands proportions are brightness-scale invariant") {
  Rng rng(35);
  const int n = 64;
  std::vector<double> gray(static_cast<size_t>(n) * n);
  for (double& v : gray) v = 100.0 + 30.0 * rng.normal();
  BandReport a = psd_bands_gray(gray, n, n, 4);
  std::vector<double> scaled = gray;
  for (double& v : scaled) v *= 2.5;
  BandReport b = psd_bands_gray(scaled, n, n, 4);
  for (int i = 0; i < 4; ++i)
    CHECK(a.proportions[static_cast<size_t>(i)] ==
          doctest::Approx(b.proportions[static_cast<size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("split_bit_allocation: single-split container and sum") {
  CompressedContainer c;
  c.width = 64;
  c.height = 64;
  c.set_split(Split::kLow);
  c.slots[static_cast<size_t>(CompressedContainer::slot_index(false, Split::kLow))].payload = {1, 2, 3};
  c.slots[static_cast<size_t>(CompressedContainer::slot_index(true, Split::kLow))].payload = {4, 5, 6, 7};
  auto props = split_bit_allocation(c);
  CHECK(props[static_cast<size_t>(Split::kLow)] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(props[static_cast<size_t>(Split::kMid)] == 0.0);
  CHECK(props[static_cast<size_t>(Split::kHigh)] == 0.0);

  CompressedContainer full;
  full.width = 64;
  full.height = 64;
  for (Split s : kAllSplits) {
    full.set_split(s);
    full.slots[static_cast<size_t>(CompressedContainer::slot_index(false, s))].payload.assign(
        static_cast<size_t>(3 + split_index(s)), 0);
    full.slots[static_cast<size_t>(CompressedContainer::slot_index(true, s))].payload.assign(
        static_cast<size_t>(11 * (split_index(s) + 1)), 0);
  }
  auto p2 = split_bit_allocation(full);
  CHECK(std::fabs(p2[0] + p2[1] + p2[2] - 1.0) <= 1e-9);
}

}  // TEST_SUITE
