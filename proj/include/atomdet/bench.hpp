#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "atomdet/learn.hpp"
#include "atomdet/model.hpp"
#include "atomdet/pipeline.hpp"

namespace atomdet {

enum class EstimatorKind { prior, posterior, deconv };

const char* to_string(EstimatorKind e);
EstimatorKind parse_estimator(const std::string& name);

enum class PerturbationKind { none, offset, hwhm_scale };

const char* to_string(PerturbationKind p);
PerturbationKind parse_perturbation(const std::string& name);

/// Calibration error seen by the estimators only. `offset` shifts the assumed
/// site coordinates along x by amplitude * a; `hwhm_scale` multiplies the
/// assumed HWHM by amplitude.
struct Perturbation {
  PerturbationKind kind = PerturbationKind::none;
  double amplitude = 0.0;
};

struct Scenario {
  ScenarioConfig config{};
  int ensemble = 100;
  bool prior = true;
  bool posterior = true;
  bool deconv = true;
  Perturbation perturbation{};
  int margin = -1;  // < 0 selects the default margin of the true geometry
  bool use_gmm = true;
  bool compute_snr = true;
  int threads = 1;
  std::string tag = "base";

  void validate() const;
  std::vector<EstimatorKind> estimators() const;
};

struct EstimatorStats {
  EstimatorKind kind = EstimatorKind::prior;
  double der_mean = 0.0;
  double der_std = 0.0;  // n - 1 estimator
  double cg_iter_mean = 0.0;
  double runtime_ms = 0.0;  // median per-image wall time
  std::vector<double> der;  // per image
};

struct BenchRecord {
  Scenario scenario;
  double snr_db = 0.0;  // NaN when not computed
  std::vector<EstimatorStats> estimators;
  LearnedModel learned;

  const EstimatorStats& stats(EstimatorKind kind) const;
};

/// Generates the ensemble with per-image seeds, calibrates on the first image,
/// then estimates and scores every image with the oracle threshold.
BenchRecord run_ensemble(const Scenario& scenario);

/// Cartesian (mu, a) grid tagged "grid", plus the cut mu = 1000 over `a_list`
/// ("cut_mu") and a = 1.5 hwhm over `mu_list` ("cut_a") when `cut_lines` is set.
std::vector<BenchRecord> sweep_mu_a(const Scenario& base, const std::vector<double>& mu_list,
                                    const std::vector<double>& a_list, bool cut_lines = true);

struct RuntimeReport {
  std::vector<BenchRecord> records;
  double prior_slope = 0.0;  // log-log slope of runtime against N_s
  double posterior_slope = 0.0;
  double deconv_slope = 0.0;
};

/// `site_counts` must be perfect squares.
RuntimeReport runtime_scaling(const Scenario& base, const std::vector<int>& site_counts);

/// Every amplitude shares the true geometry, whose margin fits the largest
/// perturbation.
std::vector<BenchRecord> robustness_sweep(const Scenario& base, PerturbationKind kind,
                                          const std::vector<double>& amplitudes);

double sample_std(const std::vector<double>& v);
double pooled_std(double std_a, double std_b);
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

inline constexpr const char* kBenchCsvHeader =
    "tag,n_rows,n_cols,spacing_a,psf_hwhm,mu,sigma,p,perturbation,amplitude,ensemble,snr_db,"
    "estimator,der_mean,der_std,cg_iter_mean,runtime_ms";

/// One row per (record, estimator). With `timing` false runtime_ms is left
/// empty so that the table is a pure function of the scenarios.
void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records, bool timing = true);

}  // namespace atomdet
