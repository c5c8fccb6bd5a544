#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace atomdet {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Square grid of sites embedded in an image. Pixel (col, row) is centred at
/// coordinates (col, row) and covers [col-0.5, col+0.5] x [row-0.5, row+0.5].
/// Site (r, c) sits at (margin + dx + c*a, margin + dy + r*a), so with zero
/// offset the top-left site coincides with a pixel centre. Image dimensions do
/// not depend on the offset, which lets a perturbed calibration describe the
/// same image.
class ArrayGeometry {
 public:
  ArrayGeometry(int n_rows, int n_cols, double spacing, Point2 offset, int margin);

  /// ceil(3*hwhm) + ceil(max|offset|).
  static int default_margin(double hwhm, Point2 offset);
  static ArrayGeometry with_default_margin(int n_rows, int n_cols, double spacing,
                                           Point2 offset, double hwhm);

  int n_rows() const { return n_rows_; }
  int n_cols() const { return n_cols_; }
  double spacing() const { return spacing_; }
  Point2 offset() const { return offset_; }
  int margin() const { return margin_; }
  int width() const { return width_; }
  int height() const { return height_; }
  int n_sites() const { return n_rows_ * n_cols_; }
  int n_pixels() const { return width_ * height_; }

  Point2 site_position(int site) const;

  /// True when a disk of `radius` around every site stays inside the image.
  bool contains_disks(double radius) const;

  ArrayGeometry with_offset(Point2 offset) const;

 private:
  int n_rows_;
  int n_cols_;
  double spacing_;
  Point2 offset_;
  int margin_;
  int width_;
  int height_;
};

/// Isotropic Gaussian PSF with unit area, truncated at 3 x HWHM.
struct PsfModel {
  double hwhm = 2.0;

  explicit PsfModel(double hwhm_px);
  double truncation_radius() const { return 3.0 * hwhm; }
  double gaussian_sigma() const;
};

struct BrightnessModel {
  double p = 0.6;
  double mu = 200.0;
  double sigma = 20.0;
  double background_k = 0.0;
  double read_noise_r = 1.0;

  void validate() const;
};

struct GroundTruth {
  std::vector<bool> occupied;
  std::vector<double> brightness;

  int n_occupied() const;
};

struct ImageSample {
  ArrayGeometry geometry;
  std::vector<double> pixels;
  std::optional<GroundTruth> truth;
  std::uint64_t seed = 0;
};

/// Deterministic 64-bit stream seed for (master, index).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

GroundTruth sample_ground_truth(const ArrayGeometry& geometry, const BrightnessModel& model,
                                std::uint64_t seed);

class MeasurementMatrix;

/// M*x + k.
std::vector<double> render_noiseless(const MeasurementMatrix& m, const GroundTruth& truth,
                                     double background_k);

/// Poisson(noiseless_i) + Normal(0, r^2) per pixel.
std::vector<double> apply_noise(std::span<const double> noiseless, double read_noise_r,
                                std::uint64_t seed);

ImageSample generate_test_image(const ArrayGeometry& geometry, const PsfModel& psf,
                                const BrightnessModel& model, std::uint64_t seed);

/// Same as above but reuses an already assembled measurement matrix.
ImageSample generate_test_image(const MeasurementMatrix& m, const BrightnessModel& model,
                                std::uint64_t seed);

/// Flat scenario parameter set, serialized with the documented JSON keys.
struct ScenarioConfig {
  int n_rows = 50;
  int n_cols = 50;
  double spacing_a = 3.0;
  double offset_dx = 0.0;
  double offset_dy = 0.0;
  double psf_hwhm = 2.0;
  double p = 0.6;
  double mu = 200.0;
  double sigma = 20.0;
  double background_k = 0.0;
  double read_noise_r = 1.0;
  std::uint64_t seed = 1;

  ArrayGeometry geometry() const;
  ArrayGeometry geometry(int margin) const;
  PsfModel psf() const { return PsfModel(psf_hwhm); }
  BrightnessModel brightness() const;
};

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);
ScenarioConfig load_scenario(const std::string& path);

}  // namespace atomdet
