#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "atomdet/deconv.hpp"
#include "atomdet/forward.hpp"
#include "atomdet/gmm.hpp"
#include "atomdet/model.hpp"
#include "atomdet/sparse.hpp"

namespace atomdet {

/// sum_i (y_i - k) / N_s, an estimate of <x> = p mu.
double estimate_mean_brightness(std::span<const double> pixels, double k, int n_sites);

/// m4 / m2^2 with central sample moments (3 for a Gaussian).
double kurtosis(std::span<const double> values);

/// n points log-spaced over [lo, hi].
std::vector<double> log_grid(double lo, double hi, int n);
std::vector<double> linear_grid(double lo, double hi, int n);

/// Sigma_n / Sigma_x from the prior covariances of `model` under `m`.
double gamma_reference(const BrightnessModel& model, const MeasurementMatrix& m);

/// 25 points over [1e-3, 1e3] * gamma_ref.
std::vector<double> default_gamma_grid(double gamma_ref);

/// Scalar-covariance a priori estimate <x> + (M^T M + gamma I)^-1 M^T (y - k - <x> M 1).
std::vector<double> regularized_estimate(std::span<const double> pixels, double k, double mean_x,
                                         const MeasurementMatrix& m, const GramMatrix& gram,
                                         double gamma, const sparse::SolverConfig& config = {});

struct GammaTuning {
  double gamma_opt = 0.0;
  int best_index = -1;
  std::vector<double> gammas;
  std::vector<double> kurtosis;  // NaN where the solve failed
  std::vector<double> der;       // NaN unless labelled
  std::vector<int> cg_iterations;
  int skipped = 0;
};

struct TuneOptions {
  sparse::SolverConfig solver{};
  int threads = 1;
  const GroundTruth* truth = nullptr;  // enables the DER column
};

/// Grid point minimizing the kurtosis of regularized_estimate. Points whose
/// solve fails are skipped; throws std::runtime_error when all fail.
GammaTuning tune_gamma(std::span<const double> pixels, double k, double mean_x, const MeasurementMatrix& m,
                       const GramMatrix& gram, std::span<const double> grid, const TuneOptions& options = {});

struct DeconvTuning {
  double lambda_opt = 0.0;
  double d_opt = 0.0;
  std::vector<double> lambdas;
  std::vector<double> radii;
  std::vector<double> kurtosis;  // row-major, lambdas x radii
  std::vector<double> der;
  int skipped = 0;

  double kurtosis_at(int il, int id) const { return kurtosis[static_cast<std::size_t>(il) * radii.size() + id]; }
};

std::vector<double> default_lambda_grid();
/// 8 points over [0.5, 1.5 a / 2].
std::vector<double> default_radius_grid(double spacing);

DeconvTuning tune_deconv(std::span<const double> pixels, const DeconvEstimator& estimator,
                         std::span<const double> lambdas, std::span<const double> radii,
                         const TuneOptions& options = {});

struct GmmConfig {
  int max_iter = 500;
  double tol_per_sample = 1e-8;  // stop when the log-likelihood gain < tol_per_sample * n
  int n_restarts = 5;
  std::uint64_t seed = 0x9e3779b9;
};

/// Every EM start collapsed a component, typical of a unimodal histogram.
class GmmCollapseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// EM for a two-component 1-D mixture from a median split; restarts with a
/// jittered start on variance collapse.
GmmFit fit_gmm(std::span<const double> values, const GmmConfig& config = {});

struct ModelParams {
  double p = 0.0;
  double mu = 0.0;
  double sigma2 = 0.0;
};

/// p = phi, mu = mean_brightness / phi, sigma2 = max(sigma1^2 - sigma0^2, 0).
ModelParams derive_model_params(const GmmFit& gmm, double mean_brightness);

/// Occupied-mode responsibilities clamped to [1e-4, 1 - 1e-4].
std::vector<double> posterior_probabilities(std::span<const double> x_hat, const GmmFit& gmm);

/// Self-calibrated quantities reused for every image of a run.
struct LearnedModel {
  double p = 0.0;
  double mu = 0.0;
  double sigma2 = 0.0;
  double gamma_opt = 0.0;
  double gamma_ref = 0.0;
  double lambda_opt = 0.0;
  double d_opt = 0.0;
  double mean_brightness = 0.0;
  double deconv_gain = 1.0;
  double deconv_offset = 0.0;
  GmmFit gmm;

  void validate() const;
  BrightnessModel brightness(double background_k, double read_noise_r) const;
};

void to_json(nlohmann::json& j, const LearnedModel& m);
void from_json(const nlohmann::json& j, LearnedModel& m);

}  // namespace atomdet
