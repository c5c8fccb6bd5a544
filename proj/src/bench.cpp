#include "atomdet/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "atomdet/detect.hpp"
#include "atomdet/forward.hpp"
#include "atomdet/ole.hpp"
#include "atomdet/parallel.hpp"

namespace atomdet {

const char* to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::prior: return "prior";
    case EstimatorKind::posterior: return "posterior";
    case EstimatorKind::deconv: return "deconv";
  }
  return "?";
}

EstimatorKind parse_estimator(const std::string& name) {
  if (name == "prior") return EstimatorKind::prior;
  if (name == "posterior") return EstimatorKind::posterior;
  if (name == "deconv") return EstimatorKind::deconv;
  throw std::invalid_argument("unknown estimator '" + name + "'");
}

const char* to_string(PerturbationKind p) {
  switch (p) {
    case PerturbationKind::none: return "none";
    case PerturbationKind::offset: return "offset";
    case PerturbationKind::hwhm_scale: return "hwhm_scale";
  }
  return "?";
}

PerturbationKind parse_perturbation(const std::string& name) {
  if (name == "none") return PerturbationKind::none;
  if (name == "offset") return PerturbationKind::offset;
  if (name == "hwhm_scale" || name == "scale") return PerturbationKind::hwhm_scale;
  throw std::invalid_argument("unknown perturbation '" + name + "'");
}

void Scenario::validate() const {
  if (ensemble < 1) throw std::invalid_argument("ensemble size must be at least 1");
  if (!prior && !posterior && !deconv) throw std::invalid_argument("no estimator selected");
  if (!std::isfinite(perturbation.amplitude)) throw std::invalid_argument("perturbation amplitude must be finite");
  if (perturbation.kind == PerturbationKind::hwhm_scale && !(perturbation.amplitude > 0.0)) {
    throw std::invalid_argument("HWHM scale factor must be positive");
  }
  config.brightness();
  PsfModel check(config.psf_hwhm);
  (void)check;
}

std::vector<EstimatorKind> Scenario::estimators() const {
  std::vector<EstimatorKind> out;
  if (prior) out.push_back(EstimatorKind::prior);
  if (posterior) out.push_back(EstimatorKind::posterior);
  if (deconv) out.push_back(EstimatorKind::deconv);
  return out;
}

const EstimatorStats& BenchRecord::stats(EstimatorKind kind) const {
  for (const auto& s : estimators) {
    if (s.kind == kind) return s;
  }
  throw std::out_of_range(std::string("estimator not in record: ") + to_string(kind));
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / (n - 1.0));
}

double pooled_std(double std_a, double std_b) { return std::sqrt(0.5 * (std_a * std_a + std_b * std_b)); }

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("slope fit needs two or more points");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string describe(const Scenario& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "scenario %s (%dx%d, a=%g, hwhm=%g, mu=%g, p=%g, %s %g)", s.tag.c_str(),
                s.config.n_rows, s.config.n_cols, s.config.spacing_a, s.config.psf_hwhm, s.config.mu,
                s.config.p, to_string(s.perturbation.kind), s.perturbation.amplitude);
  return buf;
}

struct PerImage {
  double der[3] = {0, 0, 0};
  double iterations[3] = {0, 0, 0};
  double ms[3] = {0, 0, 0};
};

BenchRecord run_ensemble_impl(const Scenario& scenario) {
  scenario.validate();
  const ScenarioConfig& cfg = scenario.config;
  const ArrayGeometry truth_geometry = scenario.margin < 0 ? cfg.geometry() : cfg.geometry(scenario.margin);
  const PsfModel truth_psf = cfg.psf();
  const BrightnessModel truth_model = cfg.brightness();
  const MeasurementMatrix truth_m = build_measurement_matrix(truth_geometry, truth_psf);

  ArrayGeometry est_geometry = truth_geometry;
  PsfModel est_psf = truth_psf;
  if (scenario.perturbation.kind == PerturbationKind::offset) {
    const Point2 off = truth_geometry.offset();
    est_geometry = truth_geometry.with_offset({off.x + scenario.perturbation.amplitude * cfg.spacing_a, off.y});
  } else if (scenario.perturbation.kind == PerturbationKind::hwhm_scale) {
    est_psf = PsfModel(cfg.psf_hwhm * scenario.perturbation.amplitude);
  }
  EstimationPipeline pipeline(est_geometry, est_psf, cfg.background_k, cfg.read_noise_r);

  auto image = [&](int i) { return generate_test_image(truth_m, truth_model, derive_seed(cfg.seed, i)); };

  BenchRecord record;
  record.scenario = scenario;
  {
    const ImageSample first = image(0);
    CalibrationOptions copt;
    copt.guess = truth_model;
    copt.use_gmm = scenario.use_gmm;
    copt.tune_deconv = scenario.deconv;
    copt.threads = scenario.threads;
    const CalibrationReport report = pipeline.calibrate(first.pixels, copt);
    record.learned = report.learned;
    pipeline.set_learned(report.learned);
  }

  EstimateOptions eopt;
  eopt.prior = scenario.prior;
  eopt.posterior = scenario.posterior;
  eopt.deconv = scenario.deconv;
  eopt.use_gmm = scenario.use_gmm;

  std::vector<PerImage> results(scenario.ensemble);
  parallel_for(scenario.ensemble, scenario.threads, [&](int i) {
    const ImageSample sample = image(i);
    const ImageEstimates est = pipeline.estimate(sample.pixels, eopt);
    PerImage& r = results[i];
    if (scenario.prior) {
      r.der[0] = oracle_threshold(est.prior, *sample.truth).der;
      r.iterations[0] = est.prior_iterations;
      r.ms[0] = est.prior_ms;
    }
    if (scenario.posterior) {
      r.der[1] = oracle_threshold(est.posterior, *sample.truth).der;
      r.iterations[1] = est.prior_iterations + est.posterior_iterations;
      r.ms[1] = est.posterior_ms;
    }
    if (scenario.deconv) {
      r.der[2] = oracle_threshold(est.deconv, *sample.truth).der;
      r.ms[2] = est.deconv_ms;
    }
  });

  for (EstimatorKind kind : scenario.estimators()) {
    const int e = static_cast<int>(kind);
    EstimatorStats s;
    s.kind = kind;
    std::vector<double> ms;
    double iters = 0.0;
    for (const auto& r : results) {
      s.der.push_back(r.der[e]);
      ms.push_back(r.ms[e]);
      iters += r.iterations[e];
    }
    s.der_mean = std::accumulate(s.der.begin(), s.der.end(), 0.0) / static_cast<double>(s.der.size());
    s.der_std = sample_std(s.der);
    s.cg_iter_mean = iters / static_cast<double>(results.size());
    s.runtime_ms = median(ms);
    record.estimators.push_back(std::move(s));
  }

  record.snr_db = std::numeric_limits<double>::quiet_NaN();
  if (scenario.compute_snr && truth_model.p > 0.0 && truth_model.p < 1.0) {
    record.snr_db = snr(truth_model, truth_m).snr_db;
  }
  return record;
}

}  // namespace

BenchRecord run_ensemble(const Scenario& scenario) {
  try {
    return run_ensemble_impl(scenario);
  } catch (const std::exception& e) {
    throw std::runtime_error(describe(scenario) + ": " + e.what());
  }
}

std::vector<BenchRecord> sweep_mu_a(const Scenario& base, const std::vector<double>& mu_list,
                                    const std::vector<double>& a_list, bool cut_lines) {
  if (mu_list.empty() || a_list.empty()) throw std::invalid_argument("sweep lists must be nonempty");
  std::vector<BenchRecord> out;
  auto cell = [&](double mu, double a, const char* tag) {
    Scenario s = base;
    s.config.mu = mu;
    s.config.spacing_a = a;
    s.tag = tag;
    out.push_back(run_ensemble(s));
  };
  for (double mu : mu_list) {
    for (double a : a_list) cell(mu, a, "grid");
  }
  if (cut_lines) {
    for (double a : a_list) cell(1000.0, a, "cut_mu");
    for (double mu : mu_list) cell(mu, 1.5 * base.config.psf_hwhm, "cut_a");
  }
  return out;
}

RuntimeReport runtime_scaling(const Scenario& base, const std::vector<int>& site_counts) {
  if (site_counts.size() < 2) throw std::invalid_argument("runtime scaling needs at least two sizes");
  RuntimeReport report;
  std::vector<double> ns, prior, posterior, deconv;
  for (int n : site_counts) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (side < 1 || side * side != n) throw std::invalid_argument("site counts must be perfect squares");
    Scenario s = base;
    s.config.n_rows = side;
    s.config.n_cols = side;
    s.ensemble = std::max(base.ensemble, 5);
    s.compute_snr = false;
    s.tag = "runtime";
    report.records.push_back(run_ensemble(s));
    const BenchRecord& r = report.records.back();
    ns.push_back(n);
    if (s.prior) prior.push_back(r.stats(EstimatorKind::prior).runtime_ms);
    if (s.posterior) posterior.push_back(r.stats(EstimatorKind::posterior).runtime_ms);
    if (s.deconv) deconv.push_back(r.stats(EstimatorKind::deconv).runtime_ms);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.prior_slope = prior.empty() ? nan : loglog_slope(ns, prior);
  report.posterior_slope = posterior.empty() ? nan : loglog_slope(ns, posterior);
  report.deconv_slope = deconv.empty() ? nan : loglog_slope(ns, deconv);
  return report;
}

std::vector<BenchRecord> robustness_sweep(const Scenario& base, PerturbationKind kind,
                                          const std::vector<double>& amplitudes) {
  if (amplitudes.empty()) throw std::invalid_argument("amplitude list is empty");
  double max_offset = 0.0, max_scale = 1.0;
  for (double amp : amplitudes) {
    if (!std::isfinite(amp)) throw std::invalid_argument("amplitudes must be finite");
    if (kind == PerturbationKind::offset) max_offset = std::max(max_offset, std::abs(amp) * base.config.spacing_a);
    if (kind == PerturbationKind::hwhm_scale) max_scale = std::max(max_scale, amp);
  }
  const Point2 off{std::abs(base.config.offset_dx) + max_offset, std::abs(base.config.offset_dy)};
  const int margin = std::max(base.margin, ArrayGeometry::default_margin(base.config.psf_hwhm * max_scale, off));

  std::vector<BenchRecord> out;
  for (double amp : amplitudes) {
    Scenario s = base;
    s.margin = margin;
    s.perturbation = {kind, amp};
    s.tag = "robustness";
    out.push_back(run_ensemble(s));
  }
  return out;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records, bool timing) {
  os << kBenchCsvHeader << '\n';
  char buf[512];
  for (const auto& r : records) {
    const ScenarioConfig& c = r.scenario.config;
    for (const auto& s : r.estimators) {
      std::snprintf(buf, sizeof buf, "%s,%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%s,%.10g,%d,%.6f,%s,%.8f,%.8f,%.4f,",
                    r.scenario.tag.c_str(), c.n_rows, c.n_cols, c.spacing_a, c.psf_hwhm, c.mu, c.sigma, c.p,
                    to_string(r.scenario.perturbation.kind), r.scenario.perturbation.amplitude, r.scenario.ensemble,
                    r.snr_db, to_string(s.kind), s.der_mean, s.der_std, s.cg_iter_mean);
      os << buf;
      if (timing) {
        std::snprintf(buf, sizeof buf, "%.4f", s.runtime_ms);
        os << buf;
      }
      os << '\n';
    }
  }
}

}  // namespace atomdet
