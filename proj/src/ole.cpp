#include "atomdet/ole.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace atomdet {

const char* to_string(Flavor f) { return f == Flavor::prior ? "prior" : "posterior"; }

double MomentModel::scalar_var_n() const {
  if (var_n.empty()) throw std::logic_error("moment model has no noise variance");
  return std::accumulate(var_n.begin(), var_n.end(), 0.0) / static_cast<double>(var_n.size());
}

namespace {

// Shared by both flavors so that a uniform posterior reproduces the prior
// bit for bit.
MomentModel moments_from_probabilities(std::span<const double> prob, double mu, double sigma,
                                       const MeasurementMatrix& m, double k, double r, Flavor flavor) {
  MomentModel out;
  out.flavor = flavor;
  const std::size_t n = prob.size();
  out.mean_x.resize(n);
  out.var_x.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = prob[i];
    out.mean_x[i] = p * mu;
    out.var_x[i] = p * (1.0 - p) * mu * mu + p * sigma * sigma;
  }
  const std::vector<double> mp = m.apply(prob);
  out.var_n.resize(mp.size());
  for (std::size_t i = 0; i < mp.size(); ++i) out.var_n[i] = r * r + k + mu * mp[i];
  return out;
}

void check_moments(const MeasurementMatrix& m, const MomentModel& moments) {
  if (moments.mean_x.size() != static_cast<std::size_t>(m.n_sites()) ||
      moments.var_x.size() != static_cast<std::size_t>(m.n_sites()) ||
      moments.var_n.size() != static_cast<std::size_t>(m.n_pixels())) {
    throw std::invalid_argument("moment model does not match the measurement matrix");
  }
  for (double v : moments.var_x) {
    if (!(v > 0.0)) throw std::invalid_argument("brightness variance must be positive");
  }
  for (double v : moments.var_n) {
    if (!(v > 0.0)) throw std::invalid_argument("noise variance must be positive");
  }
}

std::vector<double> reciprocal(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = 1.0 / v[i];
  return out;
}

}  // namespace

MomentModel prior_moments(const BrightnessModel& model, const MeasurementMatrix& m) {
  model.validate();
  const double var_x = model.p * (1.0 - model.p) * model.mu * model.mu + model.p * model.sigma * model.sigma;
  if (!(var_x > 0.0)) {
    throw std::invalid_argument("degenerate prior: p(1-p)mu^2 + p sigma^2 is zero");
  }
  const std::vector<double> prob(m.n_sites(), model.p);
  return moments_from_probabilities(prob, model.mu, model.sigma, m, model.background_k,
                                    model.read_noise_r, Flavor::prior);
}

MomentModel posterior_moments(std::span<const double> p_vec, double mu, double sigma,
                              const MeasurementMatrix& m, double k, double r) {
  if (p_vec.size() != static_cast<std::size_t>(m.n_sites())) {
    throw std::invalid_argument("posterior probability vector has the wrong length");
  }
  std::vector<double> prob(p_vec.size());
  for (std::size_t i = 0; i < p_vec.size(); ++i) {
    if (!(p_vec[i] >= 0.0 && p_vec[i] <= 1.0)) {
      throw std::invalid_argument("posterior probabilities must lie in [0, 1]");
    }
    prob[i] = std::clamp(p_vec[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
  }
  return moments_from_probabilities(prob, mu, sigma, m, k, r, Flavor::posterior);
}

sparse::CsrMatrix ole_system_matrix(const GramMatrix& gram, const MomentModel& moments) {
  if (moments.var_x.size() != static_cast<std::size_t>(gram.matrix.rows())) {
    throw std::invalid_argument("moment model does not match the Gram matrix");
  }
  const std::vector<double> prec_x = reciprocal(moments.var_x);
  return gram.matrix.scaled_plus_diagonal(1.0 / moments.scalar_var_n(), prec_x);
}

std::vector<double> ole_rhs(std::span<const double> y, const MeasurementMatrix& m,
                            const MomentModel& moments) {
  if (y.size() != static_cast<std::size_t>(m.n_pixels())) {
    throw std::invalid_argument("image length does not match the measurement matrix");
  }
  std::vector<double> resid = m.apply(moments.mean_x);
  for (std::size_t i = 0; i < resid.size(); ++i) resid[i] = y[i] - resid[i];
  std::vector<double> b = m.apply_transpose(resid);
  const double inv = 1.0 / moments.scalar_var_n();
  for (double& v : b) v *= inv;
  return b;
}

OleSolution ole_estimate(std::span<const double> y, const MeasurementMatrix& m,
                         const sparse::PreconditionedSolver& solver, const MomentModel& moments) {
  check_moments(m, moments);
  const std::vector<double> b = ole_rhs(y, m, moments);
  sparse::CgResult res = solver.solve(b);
  OleSolution out;
  out.flavor = moments.flavor;
  out.cg_iterations = res.iterations;
  out.residual = res.residual;
  out.x_hat = std::move(res.x);
  for (std::size_t i = 0; i < out.x_hat.size(); ++i) out.x_hat[i] += moments.mean_x[i];
  return out;
}

OleSolution ole_estimate(std::span<const double> y, const MeasurementMatrix& m,
                         const GramMatrix& gram, const MomentModel& moments,
                         const sparse::SolverConfig& config) {
  check_moments(m, moments);
  const sparse::PreconditionedSolver solver(ole_system_matrix(gram, moments), config);
  return ole_estimate(y, m, solver, moments);
}

double trace_of_inverse_dense(const sparse::CsrMatrix& a) {
  const int n = a.rows();
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n, n);
  for (int r = 0; r < n; ++r) {
    const auto cols = a.row_cols(r);
    const auto vals = a.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) dense(r, cols[k]) = vals[k];
  }
  Eigen::LLT<Eigen::MatrixXd> llt(dense);
  if (llt.info() != Eigen::Success) throw std::runtime_error("MSE system matrix is not positive definite");
  // trace(A^-1) = ||L^-1||_F^2
  Eigen::MatrixXd inv_l = Eigen::MatrixXd::Identity(n, n);
  llt.matrixL().solveInPlace(inv_l);
  return inv_l.squaredNorm();
}

MseResult ole_mse(const MeasurementMatrix& m, const MomentModel& moments, const MseConfig& config) {
  check_moments(m, moments);
  const std::vector<double> w = reciprocal(moments.var_n);
  const std::vector<double> prec_x = reciprocal(moments.var_x);
  sparse::CsrMatrix a = build_weighted_gram(m, w).scaled_plus_diagonal(1.0, prec_x);

  MseResult out;
  if (m.n_sites() <= config.exact_limit) {
    out.mse = trace_of_inverse_dense(a);
    return out;
  }

  // Hutchinson estimator with Rademacher probes.
  const int n = m.n_sites();
  sparse::SolverConfig sc;
  sc.rel_tol = config.probe_rel_tol;
  sc.max_iter = 20 * sparse::default_max_iter(n);
  const sparse::PreconditionedSolver solver(std::move(a), sc);
  std::mt19937_64 rng(config.seed);
  std::vector<double> z(n);
  std::vector<double> samples;
  for (int probe = 0; probe < std::max(2, config.probes); ++probe) {
    for (double& v : z) v = (rng() & 1ULL) ? 1.0 : -1.0;
    const sparse::CgResult res = solver.solve(z);
    samples.push_back(sparse::dot(z, res.x));
  }
  const double count = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / count;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double std_err = std::sqrt(ss / (count - 1.0) / count);
  out.mse = mean;
  out.exact = false;
  out.probes = static_cast<int>(samples.size());
  out.rel_error = std_err / std::abs(mean);
  return out;
}

double snr_from_mse(int n_sites, double mu, double mse) {
  return 10.0 * std::log10(static_cast<double>(n_sites) * mu * mu / mse);
}

SnrReport snr(const BrightnessModel& model, const MeasurementMatrix& m, const MseConfig& config) {
  const MomentModel moments = prior_moments(model, m);
  const MseResult mse = ole_mse(m, moments, config);
  return SnrReport{snr_from_mse(m.n_sites(), model.mu, mse.mse), mse.mse, mse.exact, mse.rel_error};
}

SnrReport snr(const BrightnessModel& model, const ArrayGeometry& geometry, const PsfModel& psf,
              const MseConfig& config) {
  return snr(model, build_measurement_matrix(geometry, psf), config);
}

namespace {

std::vector<double> weighted_gram_diagonal(const MeasurementMatrix& m, std::span<const double> var_n) {
  const auto& mt = m.by_site();
  std::vector<double> g(m.n_sites(), 0.0);
  for (int j = 0; j < m.n_sites(); ++j) {
    const auto pix = mt.row_cols(j);
    const auto w = mt.row_values(j);
    for (std::size_t a = 0; a < pix.size(); ++a) g[j] += w[a] * w[a] / var_n[pix[a]];
  }
  return g;
}

}  // namespace

double resolved_limit_mse(const MeasurementMatrix& m, const MomentModel& moments) {
  check_moments(m, moments);
  const std::vector<double> g = weighted_gram_diagonal(m, moments.var_n);
  double mse = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) mse += 1.0 / (g[i] + 1.0 / moments.var_x[i]);
  return mse;
}

double resolved_limit_printed_form(const MeasurementMatrix& m, const MomentModel& moments) {
  check_moments(m, moments);
  const std::vector<double> g = weighted_gram_diagonal(m, moments.var_n);
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double s = 1.0 / moments.var_x[i];
    total += 1.0 - g[i] * s / (g[i] + s);
  }
  return total;
}

double snr_resolved_limit(const BrightnessModel& model, const MeasurementMatrix& m) {
  const MomentModel moments = prior_moments(model, m);
  return snr_from_mse(m.n_sites(), model.mu, resolved_limit_mse(m, moments));
}

double snr_resolved_limit(const BrightnessModel& model, const ArrayGeometry& geometry, const PsfModel& psf) {
  return snr_resolved_limit(model, build_measurement_matrix(geometry, psf));
}

}  // namespace atomdet
