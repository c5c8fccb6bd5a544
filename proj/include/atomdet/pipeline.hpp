#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "atomdet/deconv.hpp"
#include "atomdet/forward.hpp"
#include "atomdet/learn.hpp"
#include "atomdet/model.hpp"
#include "atomdet/ole.hpp"
#include "atomdet/sparse.hpp"

namespace atomdet {

struct CalibrationOptions {
  /// Starting point for gamma_ref; p, sigma/mu are used, mu is rescaled to the
  /// image's mean brightness.
  BrightnessModel guess{};
  bool use_gmm = true;
  bool tune_deconv = true;
  std::vector<double> gamma_grid;   // empty selects the default grid
  std::vector<double> lambda_grid;  // empty selects the default grid
  std::vector<double> radius_grid;  // empty selects the default grid
  GmmConfig gmm{};
  int threads = 1;
  const GroundTruth* truth = nullptr;  // diagnostics only
};

struct CalibrationReport {
  LearnedModel learned;
  GammaTuning gamma;
  std::optional<DeconvTuning> deconv;
  /// gamma_ref recomputed from the learned (p, mu, sigma2).
  double gamma_ref_learned = 0.0;
};

struct EstimateOptions {
  bool prior = true;
  bool posterior = true;
  bool deconv = true;
  bool use_gmm = true;
  GmmConfig gmm{};
};

struct ImageEstimates {
  std::vector<double> prior;
  std::vector<double> posterior;
  std::vector<double> deconv;
  std::optional<GmmFit> gmm;  // per-image fit behind the posterior
  bool gmm_fallback = false;  // calibration fit was used instead
  int prior_iterations = 0;
  int posterior_iterations = 0;
  double prior_ms = 0.0;
  double posterior_ms = 0.0;  // includes the a priori pass
  double deconv_ms = 0.0;
  double mean_brightness = 0.0;
};

/// Objects that depend only on geometry and PSF: measurement matrix, Gram
/// matrix and the deconvolution plans. After set_learned() the a priori
/// solver (with its ILU factor) is cached as well.
class EstimationPipeline {
 public:
  EstimationPipeline(ArrayGeometry geometry, PsfModel psf, double background_k, double read_noise_r,
                     sparse::SolverConfig solver = {});

  const ArrayGeometry& geometry() const { return m_.geometry(); }
  const PsfModel& psf() const { return m_.psf(); }
  const MeasurementMatrix& matrix() const { return m_; }
  const GramMatrix& gram() const { return gram_; }
  const DeconvEstimator& deconv() const { return deconv_; }
  double background_k() const { return k_; }
  double read_noise_r() const { return r_; }

  CalibrationReport calibrate(std::span<const double> pixels, const CalibrationOptions& options) const;

  void set_learned(const LearnedModel& learned);
  const LearnedModel& learned() const;
  bool has_learned() const { return learned_.has_value(); }
  const sparse::PreconditionedSolver& prior_solver() const;

  /// Thread-safe once set_learned() has been called.
  ImageEstimates estimate(std::span<const double> pixels, const EstimateOptions& options) const;

 private:
  MeasurementMatrix m_;
  GramMatrix gram_;
  DeconvEstimator deconv_;
  double k_;
  double r_;
  sparse::SolverConfig solver_config_;
  std::vector<double> m1_;
  std::optional<LearnedModel> learned_;
  std::unique_ptr<sparse::PreconditionedSolver> prior_solver_;
};

}  // namespace atomdet
