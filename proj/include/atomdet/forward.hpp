#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "atomdet/model.hpp"
#include "atomdet/sparse.hpp"

namespace atomdet {

/// Integral of the unit-area Gaussian PSF centred at `site` over the unit
/// pixel square of pixel (px, py). Zero when the pixel centre is farther than
/// truncation_radius + sqrt(2)/2 from the site.
double pixel_psf_integral(Point2 site, int px, int py, double hwhm);

/// Integral of a unit 1-D Gaussian of std `sigma` centred at `centre` over
/// [lo, hi].
double gaussian_interval_mass(double centre, double sigma, double lo, double hi);

/// Sparse pixel x site operator with unit column sums.
class MeasurementMatrix {
 public:
  MeasurementMatrix(ArrayGeometry geometry, PsfModel psf, sparse::CsrMatrix by_site);

  const ArrayGeometry& geometry() const { return geometry_; }
  const PsfModel& psf() const { return psf_; }
  int n_pixels() const { return by_pixel_.rows(); }
  int n_sites() const { return by_pixel_.cols(); }

  /// Rows are pixels (M itself).
  const sparse::CsrMatrix& by_pixel() const { return by_pixel_; }
  /// Rows are sites (M transposed).
  const sparse::CsrMatrix& by_site() const { return by_site_; }

  std::vector<double> apply(std::span<const double> x) const;            // M x
  std::vector<double> apply_transpose(std::span<const double> y) const;  // M^T y
  std::vector<double> row_sums() const;                                  // M 1

 private:
  ArrayGeometry geometry_;
  PsfModel psf_;
  sparse::CsrMatrix by_site_;
  sparse::CsrMatrix by_pixel_;
};

/// Throws std::invalid_argument when the margin cannot hold every PSF disk.
MeasurementMatrix build_measurement_matrix(const ArrayGeometry& geometry, const PsfModel& psf);

/// Unweighted Gram matrix M^T M.
struct GramMatrix {
  sparse::CsrMatrix matrix;
};

GramMatrix build_gram(const MeasurementMatrix& m);

/// M^T diag(w) M.
sparse::CsrMatrix build_weighted_gram(const MeasurementMatrix& m, std::span<const double> pixel_weights);

}  // namespace atomdet
