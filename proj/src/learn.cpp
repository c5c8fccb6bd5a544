#include "atomdet/learn.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "atomdet/detect.hpp"
#include "atomdet/ole.hpp"
#include "atomdet/parallel.hpp"

namespace atomdet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int argmin_finite(std::span<const double> v) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(v.size()); ++i) {
    if (!std::isfinite(v[i])) continue;
    if (best < 0 || v[i] < v[best]) best = i;
  }
  return best;
}

// The excess convention differs by a constant, so its argmin must coincide.
void check_excess_argmin(std::span<const double> raw, int best) {
  std::vector<double> excess(raw.begin(), raw.end());
  for (double& v : excess) v -= 3.0;
  if (argmin_finite(excess) != best) {
    throw std::logic_error("kurtosis argmin differs between raw and excess conventions");
  }
}

}  // namespace

double estimate_mean_brightness(std::span<const double> pixels, double k, int n_sites) {
  if (n_sites <= 0) throw std::invalid_argument("number of sites must be positive");
  double s = 0.0;
  for (double v : pixels) s += v - k;
  return s / n_sites;
}

double kurtosis(std::span<const double> values) {
  if (values.size() < 4) throw std::invalid_argument("kurtosis needs at least 4 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d2 = (v - mean) * (v - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) throw std::invalid_argument("kurtosis of a constant vector is undefined");
  return m4 / (m2 * m2);
}

std::vector<double> log_grid(double lo, double hi, int n) {
  if (n < 1 || !(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("invalid log grid");
  std::vector<double> g(n);
  if (n == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i) g[i] = std::exp(a + (b - a) * i / (n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

std::vector<double> linear_grid(double lo, double hi, int n) {
  if (n < 1 || !(hi >= lo)) throw std::invalid_argument("invalid linear grid");
  std::vector<double> g(n);
  if (n == 1) {
    g[0] = lo;
    return g;
  }
  for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
  g.back() = hi;
  return g;
}

double gamma_reference(const BrightnessModel& model, const MeasurementMatrix& m) {
  const MomentModel prior = prior_moments(model, m);
  return prior.scalar_var_n() / prior.var_x.front();
}

std::vector<double> default_gamma_grid(double gamma_ref) {
  if (!(gamma_ref > 0.0) || !std::isfinite(gamma_ref)) throw std::invalid_argument("gamma_ref must be positive");
  return log_grid(1e-3 * gamma_ref, 1e3 * gamma_ref, 25);
}

namespace {

sparse::CgResult regularized_solve(std::span<const double> pixels, double k, double mean_x,
                                   const MeasurementMatrix& m, const GramMatrix& gram, double gamma,
                                   const sparse::SolverConfig& config, std::vector<double>& x) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be positive");
  if (pixels.size() != static_cast<std::size_t>(m.n_pixels())) {
    throw std::invalid_argument("image length does not match the measurement matrix");
  }
  const std::vector<double> ones(m.n_sites(), 1.0);
  const std::vector<double> m1 = m.apply(ones);
  std::vector<double> residual(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) residual[i] = pixels[i] - k - mean_x * m1[i];
  const std::vector<double> b = m.apply_transpose(residual);
  const std::vector<double> diag(m.n_sites(), gamma);
  sparse::PreconditionedSolver solver(gram.matrix.scaled_plus_diagonal(1.0, diag), config);
  sparse::CgResult r = solver.solve(b);
  x = r.x;
  for (double& v : x) v += mean_x;
  return r;
}

}  // namespace

std::vector<double> regularized_estimate(std::span<const double> pixels, double k, double mean_x,
                                         const MeasurementMatrix& m, const GramMatrix& gram,
                                         double gamma, const sparse::SolverConfig& config) {
  std::vector<double> x;
  regularized_solve(pixels, k, mean_x, m, gram, gamma, config, x);
  return x;
}

GammaTuning tune_gamma(std::span<const double> pixels, double k, double mean_x, const MeasurementMatrix& m,
                       const GramMatrix& gram, std::span<const double> grid, const TuneOptions& options) {
  if (grid.empty()) throw std::invalid_argument("gamma grid is empty");
  GammaTuning out;
  out.gammas.assign(grid.begin(), grid.end());
  const int n = static_cast<int>(grid.size());
  out.kurtosis.assign(n, kNaN);
  out.der.assign(n, kNaN);
  out.cg_iterations.assign(n, 0);

  parallel_for(n, options.threads, [&](int i) {
    try {
      std::vector<double> x;
      const auto r = regularized_solve(pixels, k, mean_x, m, gram, grid[i], options.solver, x);
      out.cg_iterations[i] = r.iterations;
      out.kurtosis[i] = kurtosis(x);
      if (options.truth) out.der[i] = oracle_threshold(x, *options.truth).der;
    } catch (const sparse::ConvergenceError& e) {
      std::cerr << "warning: gamma " << grid[i] << " skipped: " << e.what() << '\n';
    } catch (const sparse::ZeroPivotError& e) {
      std::cerr << "warning: gamma " << grid[i] << " skipped: " << e.what() << '\n';
    }
  });

  for (double v : out.kurtosis) out.skipped += std::isfinite(v) ? 0 : 1;
  out.best_index = argmin_finite(out.kurtosis);
  if (out.best_index < 0) throw std::runtime_error("gamma tuning failed at every grid point");
  check_excess_argmin(out.kurtosis, out.best_index);
  out.gamma_opt = grid[out.best_index];
  return out;
}

std::vector<double> default_lambda_grid() { return log_grid(1e-4, 1e2, 20); }

std::vector<double> default_radius_grid(double spacing) {
  return linear_grid(0.5, std::max(0.5, 1.5 * spacing / 2.0), 8);
}

DeconvTuning tune_deconv(std::span<const double> pixels, const DeconvEstimator& estimator,
                         std::span<const double> lambdas, std::span<const double> radii,
                         const TuneOptions& options) {
  if (lambdas.empty() || radii.empty()) throw std::invalid_argument("deconvolution grids must be nonempty");
  DeconvTuning out;
  out.lambdas.assign(lambdas.begin(), lambdas.end());
  out.radii.assign(radii.begin(), radii.end());
  const std::size_t nl = lambdas.size(), nd = radii.size();
  out.kurtosis.assign(nl * nd, kNaN);
  out.der.assign(nl * nd, kNaN);

  std::vector<DiskKernel> kernels;
  for (double d : radii) kernels.push_back(make_disk_kernel(d));
  const Grid2D centered = estimator.centered(pixels);

  parallel_for(static_cast<int>(nl), options.threads, [&](int il) {
    const Grid2D filtered = estimator.filter(centered, lambdas[il]);
    for (std::size_t id = 0; id < nd; ++id) {
      const std::vector<double> x = disk_extract(filtered, estimator.geometry(), kernels[id]);
      try {
        out.kurtosis[il * nd + id] = kurtosis(x);
      } catch (const std::invalid_argument& e) {
        std::cerr << "warning: lambda " << lambdas[il] << " d " << radii[id] << " skipped: " << e.what() << '\n';
        continue;
      }
      if (options.truth) out.der[il * nd + id] = oracle_threshold(x, *options.truth).der;
    }
  });

  for (double v : out.kurtosis) out.skipped += std::isfinite(v) ? 0 : 1;
  const int best = argmin_finite(out.kurtosis);
  if (best < 0) throw std::runtime_error("deconvolution tuning failed at every grid point");
  check_excess_argmin(out.kurtosis, best);
  out.lambda_opt = lambdas[best / nd];
  out.d_opt = radii[best % nd];
  return out;
}

// ---- Gaussian mixture ----

void GmmFit::validate() const {
  if (!(phi > 0.0 && phi < 1.0)) throw std::invalid_argument("mixture weight must lie in (0, 1)");
  if (!(sigma0 > 0.0) || !(sigma1 > 0.0) || !std::isfinite(sigma0) || !std::isfinite(sigma1)) {
    throw std::invalid_argument("mixture standard deviations must be positive");
  }
  if (!(mu1 > mu0)) throw std::invalid_argument("occupied mode must have the higher mean");
}

double GmmFit::log_odds(double x) const {
  const double z1 = (x - mu1) / sigma1;
  const double z0 = (x - mu0) / sigma0;
  return std::log(phi / (1.0 - phi)) + std::log(sigma0 / sigma1) + 0.5 * (z0 - z1) * (z0 + z1);
}

double GmmFit::responsibility(double x) const {
  const double t = log_odds(x);
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

void to_json(nlohmann::json& j, const GmmFit& g) {
  j = nlohmann::json{{"phi", g.phi},       {"mu0", g.mu0},
                     {"sigma0", g.sigma0}, {"mu1", g.mu1},
                     {"sigma1", g.sigma1}, {"log_likelihood", g.log_likelihood},
                     {"iterations", g.iterations}};
}

void from_json(const nlohmann::json& j, GmmFit& g) {
  j.at("phi").get_to(g.phi);
  j.at("mu0").get_to(g.mu0);
  j.at("sigma0").get_to(g.sigma0);
  j.at("mu1").get_to(g.mu1);
  j.at("sigma1").get_to(g.sigma1);
  g.log_likelihood = j.value("log_likelihood", 0.0);
  g.iterations = j.value("iterations", 0);
  g.validate();
}

namespace {

struct EmStart {
  double phi, mu0, s0, mu1, s1;
};

enum class EmOutcome { converged, collapsed };

EmOutcome run_em(std::span<const double> x, EmStart s, double spread, const GmmConfig& config, GmmFit& fit) {
  const std::size_t n = x.size();
  const double floor = 1e-6 * spread;
  const double tol = config.tol_per_sample * static_cast<double>(n);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  std::vector<double> resp(n);
  fit.log_likelihood_trace.clear();
  double prev = -std::numeric_limits<double>::infinity();

  for (int it = 1; it <= config.max_iter; ++it) {
    if (!(s.s0 > floor) || !(s.s1 > floor) || !(s.phi > 0.0 && s.phi < 1.0)) return EmOutcome::collapsed;
    const double c0 = std::log1p(-s.phi) - std::log(s.s0) - half_log_2pi;
    const double c1 = std::log(s.phi) - std::log(s.s1) - half_log_2pi;
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z0 = (x[i] - s.mu0) / s.s0;
      const double z1 = (x[i] - s.mu1) / s.s1;
      const double l0 = c0 - 0.5 * z0 * z0;
      const double l1 = c1 - 0.5 * z1 * z1;
      const double mx = std::max(l0, l1);
      const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
      ll += lse;
      resp[i] = std::exp(l1 - lse);
    }
    fit.log_likelihood_trace.push_back(ll);
    fit.phi = s.phi;
    fit.mu0 = s.mu0;
    fit.sigma0 = s.s0;
    fit.mu1 = s.mu1;
    fit.sigma1 = s.s1;
    fit.log_likelihood = ll;
    fit.iterations = it;
    if (ll - prev < tol) return EmOutcome::converged;
    prev = ll;

    double n1 = 0.0, sum1 = 0.0, sum0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      n1 += resp[i];
      sum1 += resp[i] * x[i];
      sum0 += (1.0 - resp[i]) * x[i];
    }
    const double n0 = static_cast<double>(n) - n1;
    if (!(n1 > 1e-9 * n) || !(n0 > 1e-9 * n)) return EmOutcome::collapsed;
    const double mu1 = sum1 / n1, mu0 = sum0 / n0;
    double v1 = 0.0, v0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v1 += resp[i] * (x[i] - mu1) * (x[i] - mu1);
      v0 += (1.0 - resp[i]) * (x[i] - mu0) * (x[i] - mu0);
    }
    s = {n1 / static_cast<double>(n), mu0, std::sqrt(v0 / n0), mu1, std::sqrt(v1 / n1)};
  }
  return EmOutcome::converged;
}

EmStart median_split(std::span<const double> sorted, std::size_t split) {
  auto stats = [](std::span<const double> v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, std::sqrt(s / static_cast<double>(v.size()))};
  };
  const auto [m0, s0] = stats(sorted.subspan(0, split));
  const auto [m1, s1] = stats(sorted.subspan(split));
  return {static_cast<double>(sorted.size() - split) / static_cast<double>(sorted.size()), m0, s0, m1, s1};
}

}  // namespace

GmmFit fit_gmm(std::span<const double> values, const GmmConfig& config) {
  if (values.size() < 20) throw std::invalid_argument("mixture fit needs at least 20 values");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("mixture fit input must be finite");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double spread = sorted.back() - sorted.front();
  if (!(spread > 0.0)) throw GmmCollapseError("mixture fit input is constant");

  const std::size_t n = sorted.size();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> quantile(0.25, 0.75);
  std::normal_distribution<double> jitter(0.0, 1.0);

  for (int attempt = 0; attempt <= config.n_restarts; ++attempt) {
    EmStart start;
    if (attempt == 0) {
      start = median_split(sorted, n / 2);
    } else {
      const std::size_t split = std::clamp<std::size_t>(static_cast<std::size_t>(quantile(rng) * n), 1, n - 1);
      start = median_split(sorted, split);
      start.mu0 += 0.05 * spread * jitter(rng);
      start.mu1 += 0.05 * spread * jitter(rng);
      start.s0 = std::max(start.s0, 0.1 * spread) * std::exp(0.2 * jitter(rng));
      start.s1 = std::max(start.s1, 0.1 * spread) * std::exp(0.2 * jitter(rng));
    }
    GmmFit fit;
    if (run_em(values, start, spread, config, fit) == EmOutcome::collapsed) continue;
    if (fit.mu1 < fit.mu0) {
      std::swap(fit.mu0, fit.mu1);
      std::swap(fit.sigma0, fit.sigma1);
      fit.phi = 1.0 - fit.phi;
    }
    if (!(fit.mu1 > fit.mu0)) continue;
    return fit;
  }
  throw GmmCollapseError("every mixture fit collapsed a component; the histogram looks unimodal");
}

ModelParams derive_model_params(const GmmFit& gmm, double mean_brightness) {
  gmm.validate();
  ModelParams out;
  out.p = gmm.phi;
  out.mu = mean_brightness / gmm.phi;
  out.sigma2 = std::max(gmm.sigma1 * gmm.sigma1 - gmm.sigma0 * gmm.sigma0, 0.0);
  return out;
}

std::vector<double> posterior_probabilities(std::span<const double> x_hat, const GmmFit& gmm) {
  gmm.validate();
  std::vector<double> p(x_hat.size());
  for (std::size_t i = 0; i < x_hat.size(); ++i) {
    p[i] = std::clamp(gmm.responsibility(x_hat[i]), kProbabilityClamp, 1.0 - kProbabilityClamp);
  }
  return p;
}

void LearnedModel::validate() const {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("learned occupancy must lie in (0, 1)");
  if (!(sigma2 >= 0.0)) throw std::invalid_argument("learned brightness variance must be non-negative");
  if (!(mu > 0.0)) throw std::invalid_argument("learned mean brightness must be positive");
  if (!(gamma_opt > 0.0)) throw std::invalid_argument("gamma must be positive");
}

BrightnessModel LearnedModel::brightness(double background_k, double read_noise_r) const {
  return BrightnessModel{p, mu, std::sqrt(sigma2), background_k, read_noise_r};
}

void to_json(nlohmann::json& j, const LearnedModel& m) {
  j = nlohmann::json{{"p", m.p},
                     {"mu", m.mu},
                     {"sigma2", m.sigma2},
                     {"gamma_opt", m.gamma_opt},
                     {"gamma_ref", m.gamma_ref},
                     {"lambda_opt", m.lambda_opt},
                     {"d_opt", m.d_opt},
                     {"mean_brightness", m.mean_brightness},
                     {"deconv_gain", m.deconv_gain},
                     {"deconv_offset", m.deconv_offset},
                     {"gmm", m.gmm}};
}

void from_json(const nlohmann::json& j, LearnedModel& m) {
  j.at("p").get_to(m.p);
  j.at("mu").get_to(m.mu);
  j.at("sigma2").get_to(m.sigma2);
  j.at("gamma_opt").get_to(m.gamma_opt);
  m.gamma_ref = j.value("gamma_ref", 0.0);
  j.at("lambda_opt").get_to(m.lambda_opt);
  j.at("d_opt").get_to(m.d_opt);
  m.mean_brightness = j.value("mean_brightness", m.p * m.mu);
  m.deconv_gain = j.value("deconv_gain", 1.0);
  m.deconv_offset = j.value("deconv_offset", 0.0);
  j.at("gmm").get_to(m.gmm);
  m.validate();
}

}  // namespace atomdet
