#include "atomdet/forward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace atomdet {

namespace {

constexpr double kHalfDiagonal = 0.70710678118654752440;

}  // namespace

double gaussian_interval_mass(double centre, double sigma, double lo, double hi) {
  const double s = 1.0 / (sigma * std::sqrt(2.0));
  const double a = (lo - centre) * s;
  const double b = (hi - centre) * s;
  // erfc keeps the far tails accurate where erf differences cancel.
  if (a >= 0.0) return 0.5 * (std::erfc(a) - std::erfc(b));
  if (b <= 0.0) return 0.5 * (std::erfc(-b) - std::erfc(-a));
  return 0.5 * (std::erf(b) - std::erf(a));
}

double pixel_psf_integral(Point2 site, int px, int py, double hwhm) {
  const PsfModel psf(hwhm);
  const double dx = px - site.x;
  const double dy = py - site.y;
  const double reach = psf.truncation_radius() + kHalfDiagonal;
  if (dx * dx + dy * dy > reach * reach) return 0.0;
  const double sigma = psf.gaussian_sigma();
  return gaussian_interval_mass(site.x, sigma, px - 0.5, px + 0.5) *
         gaussian_interval_mass(site.y, sigma, py - 0.5, py + 0.5);
}

MeasurementMatrix::MeasurementMatrix(ArrayGeometry geometry, PsfModel psf, sparse::CsrMatrix by_site)
    : geometry_(std::move(geometry)),
      psf_(psf),
      by_site_(std::move(by_site)),
      by_pixel_(by_site_.transpose()) {
  if (by_site_.rows() != geometry_.n_sites() || by_site_.cols() != geometry_.n_pixels()) {
    throw std::invalid_argument("measurement matrix does not match its geometry");
  }
}

std::vector<double> MeasurementMatrix::apply(std::span<const double> x) const {
  return by_pixel_.multiply(x);
}

std::vector<double> MeasurementMatrix::apply_transpose(std::span<const double> y) const {
  return by_site_.multiply(y);
}

std::vector<double> MeasurementMatrix::row_sums() const {
  std::vector<double> s(n_pixels());
  for (int i = 0; i < n_pixels(); ++i) {
    const auto v = by_pixel_.row_values(i);
    s[i] = std::accumulate(v.begin(), v.end(), 0.0);
  }
  return s;
}

MeasurementMatrix build_measurement_matrix(const ArrayGeometry& geometry, const PsfModel& psf) {
  const double radius = psf.truncation_radius();
  if (!geometry.contains_disks(radius)) {
    throw std::invalid_argument("image margin " + std::to_string(geometry.margin()) +
                                " px cannot contain PSF disks of radius " + std::to_string(radius) +
                                " px at the given offset");
  }
  const int width = geometry.width();
  const int height = geometry.height();
  const double reach = radius + kHalfDiagonal;
  const double sigma = psf.gaussian_sigma();

  std::vector<std::int64_t> row_ptr(geometry.n_sites() + 1, 0);
  std::vector<int> col_idx;
  std::vector<double> values;
  std::vector<double> mass_x, mass_y;

  for (int s = 0; s < geometry.n_sites(); ++s) {
    const Point2 c = geometry.site_position(s);
    const int x0 = std::max(0, static_cast<int>(std::ceil(c.x - reach)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(c.x + reach)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(c.y - reach)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(c.y + reach)));
    mass_x.resize(x1 - x0 + 1);
    mass_y.resize(y1 - y0 + 1);
    for (int px = x0; px <= x1; ++px) mass_x[px - x0] = gaussian_interval_mass(c.x, sigma, px - 0.5, px + 0.5);
    for (int py = y0; py <= y1; ++py) mass_y[py - y0] = gaussian_interval_mass(c.y, sigma, py - 0.5, py + 0.5);

    const auto begin = values.size();
    double total = 0.0;
    for (int py = y0; py <= y1; ++py) {
      const double dy = py - c.y;
      for (int px = x0; px <= x1; ++px) {
        const double dx = px - c.x;
        if (dx * dx + dy * dy > reach * reach) continue;
        const double w = mass_x[px - x0] * mass_y[py - y0];
        if (w <= 0.0) continue;
        col_idx.push_back(py * width + px);
        values.push_back(w);
        total += w;
      }
    }
    for (auto p = begin; p < values.size(); ++p) values[p] /= total;
    row_ptr[s + 1] = static_cast<std::int64_t>(values.size());
  }
  sparse::CsrMatrix by_site(geometry.n_sites(), geometry.n_pixels(), std::move(row_ptr),
                            std::move(col_idx), std::move(values));
  return MeasurementMatrix(geometry, psf, std::move(by_site));
}

namespace {

sparse::CsrMatrix gram_product(const MeasurementMatrix& m, const double* pixel_weights) {
  const auto& mt = m.by_site();
  const auto& mp = m.by_pixel();
  const int n = m.n_sites();
  std::vector<std::int64_t> row_ptr(n + 1, 0);
  std::vector<int> col_idx;
  std::vector<double> values;
  std::vector<double> acc(n, 0.0);
  std::vector<int> stamp(n, -1);
  std::vector<int> touched;
  for (int j = 0; j < n; ++j) {
    touched.clear();
    const auto pix = mt.row_cols(j);
    const auto wj = mt.row_values(j);
    for (std::size_t a = 0; a < pix.size(); ++a) {
      const int i = pix[a];
      const double f = pixel_weights ? wj[a] * pixel_weights[i] : wj[a];
      const auto sites = mp.row_cols(i);
      const auto wi = mp.row_values(i);
      for (std::size_t b = 0; b < sites.size(); ++b) {
        const int l = sites[b];
        if (stamp[l] != j) {
          stamp[l] = j;
          acc[l] = 0.0;
          touched.push_back(l);
        }
        acc[l] += f * wi[b];
      }
    }
    std::sort(touched.begin(), touched.end());
    for (int l : touched) {
      col_idx.push_back(l);
      values.push_back(acc[l]);
    }
    row_ptr[j + 1] = static_cast<std::int64_t>(values.size());
  }
  return sparse::CsrMatrix(n, n, std::move(row_ptr), std::move(col_idx), std::move(values));
}

}  // namespace

GramMatrix build_gram(const MeasurementMatrix& m) { return GramMatrix{gram_product(m, nullptr)}; }

sparse::CsrMatrix build_weighted_gram(const MeasurementMatrix& m, std::span<const double> pixel_weights) {
  if (pixel_weights.size() != static_cast<std::size_t>(m.n_pixels())) {
    throw std::invalid_argument("pixel weight vector has the wrong length");
  }
  return gram_product(m, pixel_weights.data());
}

}  // namespace atomdet
