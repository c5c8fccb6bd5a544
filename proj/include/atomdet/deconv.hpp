#pragma once

#include <memory>
#include <span>
#include <vector>

#include "atomdet/model.hpp"

namespace atomdet {

/// Row-major real image.
struct Grid2D {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Grid2D() = default;
  Grid2D(int w, int h, std::vector<double> v);
  Grid2D(int w, int h, double fill = 0.0);

  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct DeconvConfig {
  double lambda = 1e-2;
  double disk_radius = 1.0;

  void validate() const;
};

/// Gain/offset applied to raw deconvolution output so that it shares the
/// brightness scale of the OLE: x = gain * (raw - offset).
struct AffineCalibration {
  double gain = 1.0;
  double offset = 0.0;

  void apply(std::span<double> values) const;
};

/// Unit-sum truncated Gaussian kernel of size (2R+1)^2 with R = ceil(3 hwhm),
/// entries integrated over each pixel.
Grid2D psf_kernel(const PsfModel& psf);

/// Area-normalized disk kernel, pixel weight = covered fraction on a 4x4
/// subgrid. Radii too small to cover any subsample collapse to a delta.
struct DiskKernel {
  struct Tap {
    int dx;
    int dy;
    double weight;
  };
  double radius = 0.0;
  std::vector<Tap> taps;
};
DiskKernel make_disk_kernel(double radius);

/// Half-sample symmetric reflection of an index into [0, n).
int reflect_index(int i, int n);

/// Wiener deconvolution with a uniform regularizer, caching the transform
/// plans and OTF for one image size and PSF. Concurrent use is safe.
class WienerFilter {
 public:
  WienerFilter(int width, int height, const PsfModel& psf);
  ~WienerFilter();
  WienerFilter(const WienerFilter&) = delete;
  WienerFilter& operator=(const WienerFilter&) = delete;

  int width() const { return width_; }
  int height() const { return height_; }

  /// conj(OTF) Y / (|OTF|^2 + lambda) on a reflect-padded copy, cropped back.
  Grid2D apply(const Grid2D& image, double lambda) const;

 private:
  struct Plans;
  int width_;
  int height_;
  int pad_;
  int padded_w_;
  int padded_h_;
  std::vector<double> otf_re_;
  std::vector<double> otf_im_;
  std::unique_ptr<Plans> plans_;
};

Grid2D wiener_deconvolve(const Grid2D& image, const PsfModel& psf, double lambda);

/// Disk convolution (reflective boundary) sampled bilinearly at each site.
std::vector<double> disk_extract(const Grid2D& filtered, const ArrayGeometry& geometry, double d);
std::vector<double> disk_extract(const Grid2D& filtered, const ArrayGeometry& geometry,
                                 const DiskKernel& kernel);

/// Cached per-geometry deconvolution estimator.
class DeconvEstimator {
 public:
  DeconvEstimator(ArrayGeometry geometry, PsfModel psf);

  const ArrayGeometry& geometry() const { return geometry_; }
  const PsfModel& psf() const { return psf_; }

  /// Mean-removed image as a grid.
  Grid2D centered(std::span<const double> pixels) const;
  Grid2D filter(const Grid2D& image, double lambda) const { return wiener_.apply(image, lambda); }

  /// Raw estimate. With remove_mean = false the map is strictly linear.
  std::vector<double> estimate(std::span<const double> pixels, const DeconvConfig& config,
                               bool remove_mean = true) const;

 private:
  ArrayGeometry geometry_;
  PsfModel psf_;
  WienerFilter wiener_;
};

std::vector<double> deconv_estimate(const ImageSample& image, const ArrayGeometry& geometry,
                                    const PsfModel& psf, const DeconvConfig& config,
                                    const AffineCalibration& calibration = {});

}  // namespace atomdet
