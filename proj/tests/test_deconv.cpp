#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "atomdet/deconv.hpp"
#include "atomdet/forward.hpp"

using namespace atomdet;

namespace {

Grid2D random_grid(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Grid2D g(w, h);
  for (double& v : g.values) v = u(rng);
  return g;
}

int mirror(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -1 - i : 2 * n - 1 - i;
  return i;
}

double disk_weight(int dx, int dy, double d) {
  int hit = 0;
  for (int sy = 0; sy < 4; ++sy) {
    for (int sx = 0; sx < 4; ++sx) {
      const double x = dx - 0.375 + 0.25 * sx, y = dy - 0.375 + 0.25 * sy;
      hit += (x * x + y * y <= d * d) ? 1 : 0;
    }
  }
  return hit / 16.0;
}

// Dense spatial-domain disk smoothing followed by bilinear sampling.
double dense_disk_sample(const Grid2D& f, double d, double cx, double cy) {
  const int reach = static_cast<int>(std::ceil(d)) + 1;
  double total = 0.0;
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) total += disk_weight(dx, dy, d);
  }
  auto smooth = [&](int px, int py) {
    double s = 0.0;
    for (int dy = -reach; dy <= reach; ++dy) {
      for (int dx = -reach; dx <= reach; ++dx) {
        s += disk_weight(dx, dy, d) * f.at(mirror(px + dx, f.width), mirror(py + dy, f.height));
      }
    }
    return s / total;
  };
  const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
  const double fx = cx - x0, fy = cy - y0;
  return (1 - fx) * (1 - fy) * smooth(x0, y0) + fx * (1 - fy) * smooth(x0 + 1, y0) +
         (1 - fx) * fy * smooth(x0, y0 + 1) + fx * fy * smooth(x0 + 1, y0 + 1);
}

Grid2D convolve_direct(const Grid2D& img, const Grid2D& kernel) {
  Grid2D out(img.width, img.height);
  const int r = kernel.width / 2;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (int ky = 0; ky < kernel.height; ++ky) {
        for (int kx = 0; kx < kernel.width; ++kx) {
          const int sx = x - (kx - r), sy = y - (ky - r);
          if (sx >= 0 && sx < img.width && sy >= 0 && sy < img.height) s += kernel.at(kx, ky) * img.at(sx, sy);
        }
      }
      out.at(x, y) = s;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("psf kernel is normalized and symmetric") {
  const Grid2D k = psf_kernel(PsfModel(2.0));
  CHECK(k.width == 13);
  CHECK(std::accumulate(k.values.begin(), k.values.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(k.at(6, 5) == doctest::Approx(k.at(5, 6)).epsilon(1e-14));
  CHECK(k.at(0, 6) == doctest::Approx(k.at(12, 6)).epsilon(1e-14));
}

TEST_CASE("reflect index") {
  CHECK(reflect_index(-1, 5) == 0);
  CHECK(reflect_index(-2, 5) == 1);
  CHECK(reflect_index(5, 5) == 4);
  CHECK(reflect_index(6, 5) == 3);
  CHECK(reflect_index(3, 5) == 3);
  CHECK(reflect_index(-7, 1) == 0);
  for (int i = -20; i < 30; ++i) CHECK(reflect_index(i, 7) == mirror(i, 7));
}

TEST_CASE("disk kernel") {
  const DiskKernel k = make_disk_kernel(2.0);
  double s = 0.0;
  for (const auto& t : k.taps) {
    s += t.weight;
    CHECK(t.weight == doctest::Approx(disk_weight(t.dx, t.dy, 2.0) / [] {
            double tot = 0.0;
            for (int y = -3; y <= 3; ++y) {
              for (int x = -3; x <= 3; ++x) tot += disk_weight(x, y, 2.0);
            }
            return tot;
          }()).epsilon(1e-14));
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  const DiskKernel tiny = make_disk_kernel(0.1);
  REQUIRE(tiny.taps.size() == 1);
  CHECK(tiny.taps[0].dx == 0);
  CHECK(tiny.taps[0].weight == 1.0);
  CHECK_THROWS(make_disk_kernel(0.0));
}

TEST_CASE("very large lambda suppresses everything") {
  const Grid2D img = random_grid(24, 20, 1);
  const Grid2D out = wiener_deconvolve(img, PsfModel(2.0), 1e6);
  for (double v : out.values) CHECK(std::abs(v) < 1e-5);
  CHECK_THROWS(wiener_deconvolve(img, PsfModel(2.0), 0.0));
}

TEST_CASE("wiener filter is linear") {
  const Grid2D a = random_grid(30, 22, 2), b = random_grid(30, 22, 3);
  const WienerFilter f(30, 22, PsfModel(1.7));
  Grid2D mix(30, 22);
  for (std::size_t i = 0; i < mix.values.size(); ++i) mix.values[i] = 2.5 * a.values[i] - 0.75 * b.values[i];
  const Grid2D fa = f.apply(a, 0.01), fb = f.apply(b, 0.01), fm = f.apply(mix, 0.01);
  for (std::size_t i = 0; i < mix.values.size(); ++i) {
    CHECK(std::abs(fm.values[i] - (2.5 * fa.values[i] - 0.75 * fb.values[i])) < 1e-10);
  }
}

TEST_CASE("impulse survives a forward then inverse pass") {
  const PsfModel psf(0.5);
  Grid2D img(31, 31);
  img.at(15, 15) = 1.0;
  const Grid2D blurred = convolve_direct(img, psf_kernel(psf));
  const Grid2D back = wiener_deconvolve(blurred, psf, 1e-6);
  double total = 0.0;
  for (double v : back.values) total += std::abs(v);
  CHECK(back.at(15, 15) > 0.99);
  CHECK(back.at(15, 15) / total > 0.99);
}

TEST_CASE("uniform grid reads its value at every site") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(4, 5, 3.0, {0.3, 0.7}, 2.0);
  const Grid2D c(g.width(), g.height(), 3.25);
  for (double d : {0.1, 0.7, 1.5, 2.25}) {
    for (double v : disk_extract(c, g, d)) CHECK(v == doctest::Approx(3.25).epsilon(1e-13));
  }
}

TEST_CASE("sub-pixel disk on a pixel centre reads that pixel") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(3, 3, 4.0, {}, 2.0);
  const Grid2D f = random_grid(g.width(), g.height(), 4);
  const auto v = disk_extract(f, g, 0.1);
  for (int s = 0; s < g.n_sites(); ++s) {
    const Point2 p = g.site_position(s);
    CHECK(v[s] == f.at(static_cast<int>(p.x), static_cast<int>(p.y)));
  }
}

TEST_CASE("disk extraction matches a dense oracle") {
  const ArrayGeometry g(4, 4, 3.3, {0.4, 0.15}, 1);
  const Grid2D f = random_grid(16, 16, 5);
  const auto v = disk_extract(f, g, 2.0);
  for (int s = 0; s < g.n_sites(); ++s) {
    const Point2 p = g.site_position(s);
    CHECK(std::abs(v[s] - dense_disk_sample(f, 2.0, p.x, p.y)) < 1e-8);
  }
}

TEST_CASE("site outside the grid is rejected") {
  const ArrayGeometry g(2, 2, 3.0, {}, 1);
  const Grid2D small(3, 3);
  CHECK_THROWS_AS(disk_extract(small, g, 1.0), std::out_of_range);
}

TEST_CASE("raw estimator is linear end to end") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(6, 6, 3.0, {0.2, 0.1}, 2.0);
  const DeconvEstimator est(g, PsfModel(2.0));
  const Grid2D a = random_grid(g.width(), g.height(), 6), b = random_grid(g.width(), g.height(), 7);
  std::vector<double> mix(a.values.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = -1.5 * a.values[i] + 4.0 * b.values[i];
  const DeconvConfig cfg{0.05, 1.3};
  const auto ea = est.estimate(a.values, cfg, false), eb = est.estimate(b.values, cfg, false);
  const auto em = est.estimate(mix, cfg, false);
  for (std::size_t i = 0; i < em.size(); ++i) CHECK(std::abs(em[i] - (-1.5 * ea[i] + 4.0 * eb[i])) < 1e-8);
}

TEST_CASE("shifting image and grid together leaves interior estimates unchanged") {
  const int margin = 24;
  const ArrayGeometry g0(4, 4, 3.0, {0.0, 0.0}, margin);
  const ArrayGeometry g1 = g0.with_offset({3.0, 2.0});
  REQUIRE(g0.width() == g1.width());
  const MeasurementMatrix m0 = build_measurement_matrix(g0, PsfModel(2.0));
  const MeasurementMatrix m1 = build_measurement_matrix(g1, PsfModel(2.0));
  std::vector<double> x(16);
  for (int i = 0; i < 16; ++i) x[i] = 100.0 + 37.0 * ((i * 7) % 5);
  const auto y0 = m0.apply(x), y1 = m1.apply(x);
  const DeconvConfig cfg{0.05, 1.2};
  const auto e0 = DeconvEstimator(g0, PsfModel(2.0)).estimate(y0, cfg, false);
  const auto e1 = DeconvEstimator(g1, PsfModel(2.0)).estimate(y1, cfg, false);
  for (int i = 0; i < 16; ++i) CHECK(std::abs(e0[i] - e1[i]) < 1e-8);
}

TEST_CASE("mean removal and affine calibration") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(5, 5, 3.0, {}, 2.0);
  const DeconvEstimator est(g, PsfModel(2.0));
  const Grid2D a = random_grid(g.width(), g.height(), 8);
  std::vector<double> shifted = a.values;
  for (double& v : shifted) v += 50.0;
  const DeconvConfig cfg{0.02, 1.0};
  const auto ea = est.estimate(a.values, cfg), es = est.estimate(shifted, cfg);
  for (std::size_t i = 0; i < ea.size(); ++i) CHECK(es[i] == doctest::Approx(ea[i]).epsilon(1e-9).scale(1.0));

  std::vector<double> v{1.0, 2.0, 4.0};
  AffineCalibration{2.0, 1.0}.apply(v);
  CHECK(v == std::vector<double>{0.0, 2.0, 6.0});
  CHECK_THROWS(DeconvConfig{-1.0, 1.0}.validate());
  CHECK_THROWS(DeconvConfig{1.0, 0.0}.validate());
}
