#include "atomdet/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace atomdet {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// Maps the raw deconvolution modes onto 0 (empty) and mu (occupied); falls
// back to a least-squares fit against the OLE when the mixture fit fails.
void fit_affine(std::span<const double> raw, std::span<const double> target, LearnedModel& learned,
                const GmmConfig& config) {
  if (learned.mu > 0.0) {
    try {
      const GmmFit g = fit_gmm(raw, config);
      learned.deconv_gain = learned.mu / (g.mu1 - g.mu0);
      learned.deconv_offset = g.mu0;
      return;
    } catch (const GmmCollapseError&) {
    }
  }
  const double n = static_cast<double>(raw.size());
  const double mr = std::accumulate(raw.begin(), raw.end(), 0.0) / n;
  const double mt = std::accumulate(target.begin(), target.end(), 0.0) / n;
  double cov = 0.0, var = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    cov += (raw[i] - mr) * (target[i] - mt);
    var += (raw[i] - mr) * (raw[i] - mr);
  }
  if (var > 0.0 && cov > 0.0) {
    learned.deconv_gain = cov / var;
    learned.deconv_offset = mr - mt / learned.deconv_gain;
  } else {
    learned.deconv_gain = 1.0;
    learned.deconv_offset = 0.0;
  }
}

}  // namespace

EstimationPipeline::EstimationPipeline(ArrayGeometry geometry, PsfModel psf, double background_k,
                                       double read_noise_r, sparse::SolverConfig solver)
    : m_(build_measurement_matrix(geometry, psf)),
      gram_(build_gram(m_)),
      deconv_(geometry, psf),
      k_(background_k),
      r_(read_noise_r),
      solver_config_(solver) {
  m1_ = m_.row_sums();
}

CalibrationReport EstimationPipeline::calibrate(std::span<const double> pixels,
                                                const CalibrationOptions& options) const {
  if (pixels.size() != static_cast<std::size_t>(m_.n_pixels())) {
    throw std::invalid_argument("image length does not match the geometry");
  }
  CalibrationReport report;
  LearnedModel& learned = report.learned;
  const double mean_b = estimate_mean_brightness(pixels, k_, m_.n_sites());
  learned.mean_brightness = mean_b;

  // Reference guess: keep the guessed p and sigma/mu ratio, rescale mu to the data.
  BrightnessModel ref = options.guess;
  ref.background_k = k_;
  ref.read_noise_r = r_;
  if (!(ref.p > 0.0 && ref.p < 1.0)) ref.p = 0.5;
  const double ratio = options.guess.mu > 0.0 ? options.guess.sigma / options.guess.mu : 0.0;
  if (mean_b > 0.0) ref.mu = mean_b / ref.p;
  if (!(ref.mu > 0.0)) ref.mu = options.guess.mu > 0.0 ? options.guess.mu : 1.0;
  ref.sigma = ratio * ref.mu;
  learned.gamma_ref = gamma_reference(ref, m_);

  const std::vector<double> grid =
      options.gamma_grid.empty() ? default_gamma_grid(learned.gamma_ref) : options.gamma_grid;
  TuneOptions tune;
  tune.solver = solver_config_;
  tune.threads = options.threads;
  tune.truth = options.truth;
  report.gamma = tune_gamma(pixels, k_, mean_b, m_, gram_, grid, tune);
  learned.gamma_opt = report.gamma.gamma_opt;
  const std::vector<double> x_hat =
      regularized_estimate(pixels, k_, mean_b, m_, gram_, learned.gamma_opt, solver_config_);

  if (options.use_gmm) {
    learned.gmm = fit_gmm(x_hat, options.gmm);
    const ModelParams params = derive_model_params(learned.gmm, mean_b);
    learned.p = params.p;
    learned.mu = params.mu;
    learned.sigma2 = params.sigma2;
    learned.validate();
    report.gamma_ref_learned = gamma_reference(learned.brightness(k_, r_), m_);
  } else {
    learned.p = options.guess.p;
    learned.mu = options.guess.mu;
    learned.sigma2 = options.guess.sigma * options.guess.sigma;
    report.gamma_ref_learned = learned.gamma_ref;
  }

  if (options.tune_deconv) {
    const std::vector<double> lambdas =
        options.lambda_grid.empty() ? default_lambda_grid() : options.lambda_grid;
    const std::vector<double> radii =
        options.radius_grid.empty() ? default_radius_grid(geometry().spacing()) : options.radius_grid;
    report.deconv = tune_deconv(pixels, deconv_, lambdas, radii, tune);
    learned.lambda_opt = report.deconv->lambda_opt;
    learned.d_opt = report.deconv->d_opt;
    const std::vector<double> raw = deconv_.estimate(pixels, {learned.lambda_opt, learned.d_opt});
    fit_affine(raw, x_hat, learned, options.use_gmm ? options.gmm : GmmConfig{});
  } else {
    learned.lambda_opt = DeconvConfig{}.lambda;
    learned.d_opt = DeconvConfig{}.disk_radius;
  }
  return report;
}

void EstimationPipeline::set_learned(const LearnedModel& learned) {
  if (!(learned.gamma_opt > 0.0)) throw std::invalid_argument("learned gamma must be positive");
  const std::vector<double> diag(m_.n_sites(), learned.gamma_opt);
  prior_solver_ = std::make_unique<sparse::PreconditionedSolver>(gram_.matrix.scaled_plus_diagonal(1.0, diag),
                                                                 solver_config_);
  learned_ = learned;
}

const LearnedModel& EstimationPipeline::learned() const {
  if (!learned_) throw std::logic_error("pipeline has not been calibrated");
  return *learned_;
}

const sparse::PreconditionedSolver& EstimationPipeline::prior_solver() const {
  if (!prior_solver_) throw std::logic_error("pipeline has not been calibrated");
  return *prior_solver_;
}

ImageEstimates EstimationPipeline::estimate(std::span<const double> pixels, const EstimateOptions& options) const {
  const LearnedModel& learned = this->learned();
  if (pixels.size() != static_cast<std::size_t>(m_.n_pixels())) {
    throw std::invalid_argument("image length does not match the geometry");
  }
  ImageEstimates out;

  if (options.prior || options.posterior) {
    const auto t0 = Clock::now();
    const double mean_b = estimate_mean_brightness(pixels, k_, m_.n_sites());
    out.mean_brightness = mean_b;
    std::vector<double> resid(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) resid[i] = pixels[i] - k_ - mean_b * m1_[i];
    const std::vector<double> b = m_.apply_transpose(resid);
    sparse::CgResult res = prior_solver_->solve(b);
    for (double& v : res.x) v += mean_b;
    out.prior = std::move(res.x);
    out.prior_iterations = res.iterations;
    out.prior_ms = elapsed_ms(t0);

    if (options.posterior) {
      const auto t1 = Clock::now();
      if (!options.use_gmm) {
        out.posterior = out.prior;
        out.posterior_iterations = 0;
      } else {
        GmmFit gmm = learned.gmm;
        try {
          gmm = fit_gmm(out.prior, options.gmm);
          out.gmm = gmm;
        } catch (const GmmCollapseError&) {
          out.gmm_fallback = true;
        }
        const std::vector<double> prob = posterior_probabilities(out.prior, gmm);
        std::vector<double> y(pixels.size());
        for (std::size_t i = 0; i < pixels.size(); ++i) y[i] = pixels[i] - k_;
        const MomentModel moments =
            posterior_moments(prob, learned.mu, std::sqrt(learned.sigma2), m_, k_, r_);
        OleSolution sol = ole_estimate(y, m_, gram_, moments, solver_config_);
        out.posterior = std::move(sol.x_hat);
        out.posterior_iterations = sol.cg_iterations;
      }
      out.posterior_ms = out.prior_ms + elapsed_ms(t1);
    }
  }

  if (options.deconv) {
    const auto t0 = Clock::now();
    out.deconv = deconv_.estimate(pixels, {learned.lambda_opt, learned.d_opt});
    AffineCalibration{learned.deconv_gain, learned.deconv_offset}.apply(out.deconv);
    out.deconv_ms = elapsed_ms(t0);
  }
  return out;
}

}  // namespace atomdet
