#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "atomdet/forward.hpp"
#include "atomdet/model.hpp"
#include "atomdet/sparse.hpp"

namespace atomdet {

enum class Flavor { prior, posterior };

const char* to_string(Flavor f);

/// First and second moments of the brightness and noise, all covariances
/// diagonal.
struct MomentModel {
  std::vector<double> mean_x;  // <x>, per site
  std::vector<double> var_x;   // diag(Sigma_x), per site
  std::vector<double> var_n;   // diag(Sigma_n), per pixel
  Flavor flavor = Flavor::prior;

  /// Mean of diag(Sigma_n) over pixels.
  double scalar_var_n() const;
};

/// Lower clamp for posterior occupancy probabilities; the upper clamp is 1 - eps.
inline constexpr double kProbabilityClamp = 1e-4;

/// Throws std::invalid_argument for a degenerate prior (zero brightness variance).
MomentModel prior_moments(const BrightnessModel& model, const MeasurementMatrix& m);

MomentModel posterior_moments(std::span<const double> p_vec, double mu, double sigma,
                              const MeasurementMatrix& m, double k, double r);

struct OleSolution {
  std::vector<double> x_hat;
  int cg_iterations = 0;
  double residual = 0.0;
  Flavor flavor = Flavor::prior;
};

/// A = Gram / Sigma_n + diag(1 / var_x) with the scalar noise variance.
sparse::CsrMatrix ole_system_matrix(const GramMatrix& gram, const MomentModel& moments);

/// b = M^T (y - M <x>) / Sigma_n.
std::vector<double> ole_rhs(std::span<const double> y, const MeasurementMatrix& m,
                            const MomentModel& moments);

/// Solves A (x_hat - <x>) = b. `y` must already have the background removed.
OleSolution ole_estimate(std::span<const double> y, const MeasurementMatrix& m,
                         const GramMatrix& gram, const MomentModel& moments,
                         const sparse::SolverConfig& config = {});

/// Same estimate reusing a prepared solver for A (the system matrix must have
/// been built from the same moments).
OleSolution ole_estimate(std::span<const double> y, const MeasurementMatrix& m,
                         const sparse::PreconditionedSolver& solver, const MomentModel& moments);

struct MseConfig {
  int exact_limit = 4096;  // exact trace up to this many sites
  int probes = 64;
  double probe_rel_tol = 1e-6;
  std::uint64_t seed = 0x5eed;
};

struct MseResult {
  double mse = 0.0;
  bool exact = true;
  double rel_error = 0.0;  // standard error / estimate for the stochastic path
  int probes = 0;
};

/// trace(A^-1) with A = M^T Sigma_n^-1 M + Sigma_x^-1 using the full diagonal
/// noise covariance; equals trace[(I - H_opt M) Sigma_x].
MseResult ole_mse(const MeasurementMatrix& m, const MomentModel& moments, const MseConfig& config = {});

/// Symmetric positive definite matrix with only a trace-of-inverse query; the
/// exact route goes through a dense Cholesky factor.
double trace_of_inverse_dense(const sparse::CsrMatrix& a);

struct SnrReport {
  double snr_db = 0.0;
  double mse = 0.0;
  bool exact = true;
  double rel_error = 0.0;
};

double snr_from_mse(int n_sites, double mu, double mse);

SnrReport snr(const BrightnessModel& model, const ArrayGeometry& geometry, const PsfModel& psf,
              const MseConfig& config = {});
SnrReport snr(const BrightnessModel& model, const MeasurementMatrix& m, const MseConfig& config = {});

/// Diagonal-Gram MSE: sum_i 1 / (G_ii + 1/var_x_i), G = M^T Sigma_n^-1 M.
double resolved_limit_mse(const MeasurementMatrix& m, const MomentModel& moments);
double snr_resolved_limit(const BrightnessModel& model, const ArrayGeometry& geometry, const PsfModel& psf);
double snr_resolved_limit(const BrightnessModel& model, const MeasurementMatrix& m);

/// sum_i [1 - G_ii S_ii / (G_ii + S_ii)] with S = Sigma_x^-1; kept only as a
/// diagnostic to compare against resolved_limit_mse.
double resolved_limit_printed_form(const MeasurementMatrix& m, const MomentModel& moments);

}  // namespace atomdet
