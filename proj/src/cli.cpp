#include "atomdet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "atomdet/bench.hpp"
#include "atomdet/detect.hpp"
#include "atomdet/image_io.hpp"
#include "atomdet/ole.hpp"
#include "atomdet/pipeline.hpp"

namespace atomdet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string estimator = "all";
  int ensemble = 100;
  int threads = 1;
  bool no_timing = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "scenario JSON file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--estimator", c.estimator, "prior | posterior | deconv | all")
      ->check(CLI::IsMember({"prior", "posterior", "deconv", "all"}));
  cmd->add_option("--ensemble", c.ensemble, "number of images")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", c.threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
}

ScenarioConfig load(const Common& c) {
  ScenarioConfig cfg = c.config.empty() ? ScenarioConfig{} : load_scenario(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

Scenario scenario_from(const Common& c) {
  Scenario s;
  s.config = load(c);
  s.ensemble = c.ensemble;
  s.threads = c.threads;
  if (c.estimator != "all") {
    s.prior = c.estimator == "prior";
    s.posterior = c.estimator == "posterior";
    s.deconv = c.estimator == "deconv";
  }
  if (!(s.config.p > 0.0)) s.use_gmm = false;
  return s;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_csv(const fs::path& path, const std::vector<BenchRecord>& records, bool timing) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_bench_csv(os, records, timing);
  std::cout << "wrote " << path.string() << '\n';
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<double> image_pixels(const std::string& path, const ArrayGeometry& geometry) {
  io::RawImage img = io::read_image(path);
  if (img.width != geometry.width() || img.height != geometry.height()) {
    throw std::runtime_error("image " + path + " is " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + ", the scenario expects " +
                             std::to_string(geometry.width()) + "x" + std::to_string(geometry.height()));
  }
  return std::move(img.pixels);
}

int cmd_generate(const Common& c, const std::string& format) {
  const ScenarioConfig cfg = load(c);
  const fs::path dir = out_dir(c);
  const ArrayGeometry geometry = cfg.geometry();
  const MeasurementMatrix m = build_measurement_matrix(geometry, cfg.psf());
  const BrightnessModel model = cfg.brightness();
  write_json(dir / "scenario.json", json(cfg));
  for (int i = 0; i < c.ensemble; ++i) {
    const ImageSample s = generate_test_image(m, model, derive_seed(cfg.seed, i));
    char stem[32];
    std::snprintf(stem, sizeof stem, "image_%04d", i);
    if (format == "pgm") {
      io::write_pgm16(dir / (std::string(stem) + ".pgm"), geometry.width(), geometry.height(), s.pixels);
    } else {
      io::write_raw_f64(dir / (std::string(stem) + ".raw"), geometry.width(), geometry.height(), s.pixels);
    }
    std::snprintf(stem, sizeof stem, "truth_%04d.csv", i);
    io::write_truth_csv(dir / stem, geometry, *s.truth);
  }
  std::cout << "wrote " << c.ensemble << " image(s) to " << dir.string() << '\n';
  return 0;
}

struct CalibrateArgs {
  std::string image;
  std::string truth;
  bool export_matrices = false;
};

CalibrationReport calibrate_image(const EstimationPipeline& pipeline, const ScenarioConfig& cfg,
                                  std::span<const double> pixels, const GroundTruth* truth, int threads) {
  CalibrationOptions opt;
  opt.guess = cfg.brightness();
  opt.use_gmm = cfg.p > 0.0;
  opt.threads = threads;
  opt.truth = truth;
  return pipeline.calibrate(pixels, opt);
}

int cmd_calibrate(const Common& c, const CalibrateArgs& a) {
  const ScenarioConfig cfg = load(c);
  const fs::path dir = out_dir(c);
  EstimationPipeline pipeline(cfg.geometry(), cfg.psf(), cfg.background_k, cfg.read_noise_r);
  std::vector<double> pixels;
  std::optional<GroundTruth> truth;
  if (a.image.empty()) {
    ImageSample s = generate_test_image(pipeline.matrix(), cfg.brightness(), derive_seed(cfg.seed, 0));
    pixels = std::move(s.pixels);
    truth = std::move(s.truth);
  } else {
    pixels = image_pixels(a.image, cfg.geometry());
    if (!a.truth.empty()) truth = io::read_truth_csv(a.truth);
  }
  const CalibrationReport report = calibrate_image(pipeline, cfg, pixels, truth ? &*truth : nullptr, c.threads);
  write_json(dir / "learned.json", json(report.learned));

  {
    std::ofstream os(dir / "gamma_curve.csv");
    os << "gamma,kurtosis,der\n";
    for (std::size_t i = 0; i < report.gamma.gammas.size(); ++i) {
      os << num(report.gamma.gammas[i]) << ',' << num(report.gamma.kurtosis[i]) << ','
         << (std::isnan(report.gamma.der[i]) ? std::string() : num(report.gamma.der[i])) << '\n';
    }
  }
  if (report.deconv) {
    const DeconvTuning& d = *report.deconv;
    std::ofstream os(dir / "deconv_curve.csv");
    os << "lambda,d,kurtosis,der\n";
    for (std::size_t il = 0; il < d.lambdas.size(); ++il) {
      for (std::size_t id = 0; id < d.radii.size(); ++id) {
        const std::size_t k = il * d.radii.size() + id;
        os << num(d.lambdas[il]) << ',' << num(d.radii[id]) << ',' << num(d.kurtosis[k]) << ','
           << (std::isnan(d.der[k]) ? std::string() : num(d.der[k])) << '\n';
      }
    }
  }
  if (a.export_matrices) {
    std::ofstream mm(dir / "measurement.mtx");
    sparse::write_matrix_market(mm, pipeline.matrix().by_pixel());
    std::ofstream gm(dir / "gram.mtx");
    sparse::write_matrix_market(gm, pipeline.gram().matrix);
  }
  std::cout << json(report.learned).dump(2) << '\n';
  return 0;
}

struct EstimateArgs {
  std::string image;
  std::string truth;
  std::string learned;
};

int cmd_estimate(const Common& c, const EstimateArgs& a) {
  const ScenarioConfig cfg = load(c);
  const fs::path dir = out_dir(c);
  const ArrayGeometry geometry = cfg.geometry();
  EstimationPipeline pipeline(geometry, cfg.psf(), cfg.background_k, cfg.read_noise_r);
  const std::vector<double> pixels = image_pixels(a.image, geometry);
  std::optional<GroundTruth> truth;
  if (!a.truth.empty()) truth = io::read_truth_csv(a.truth);

  LearnedModel learned;
  if (a.learned.empty()) {
    learned = calibrate_image(pipeline, cfg, pixels, nullptr, c.threads).learned;
  } else {
    std::ifstream is(a.learned);
    if (!is) throw std::runtime_error("cannot read " + a.learned);
    learned = json::parse(is).get<LearnedModel>();
  }
  pipeline.set_learned(learned);

  EstimateOptions opt;
  opt.prior = c.estimator == "all" || c.estimator == "prior" || c.estimator == "posterior";
  opt.posterior = c.estimator == "all" || c.estimator == "posterior";
  opt.deconv = c.estimator == "all" || c.estimator == "deconv";
  opt.use_gmm = cfg.p > 0.0;
  const ImageEstimates est = pipeline.estimate(pixels, opt);

  json report;
  report["learned"] = learned;
  report["mean_brightness"] = est.mean_brightness;
  json estimators = json::object();
  auto add = [&](const char* name, const std::vector<double>& x, int iterations) {
    if (x.empty()) return;
    json e;
    e["cg_iterations"] = iterations;
    double threshold = std::numeric_limits<double>::quiet_NaN();
    try {
      threshold = gmm_threshold(fit_gmm(x));
    } catch (const std::exception& ex) {
      e["threshold_error"] = ex.what();
    }
    if (std::isfinite(threshold)) {
      const DetectionResult d = classify_and_score(x, threshold, truth ? &*truth : nullptr);
      e["threshold"] = threshold;
      e["n_occupied"] = std::count(d.labels.begin(), d.labels.end(), true);
      if (d.scored) e["der"] = d.der;
    }
    if (truth) e["oracle_der"] = oracle_threshold(x, *truth).der;
    estimators[name] = e;
  };
  add("prior", est.prior, est.prior_iterations);
  add("posterior", est.posterior, est.posterior_iterations);
  add("deconv", est.deconv, 0);
  report["estimators"] = estimators;
  write_json(dir / "estimate.json", report);

  std::ofstream os(dir / "estimates.csv");
  os << "site,row,col,prior,posterior,deconv\n";
  for (int s = 0; s < geometry.n_sites(); ++s) {
    auto col = [&](const std::vector<double>& x) { return x.empty() ? std::string() : num(x[s]); };
    os << s << ',' << s / geometry.n_cols() << ',' << s % geometry.n_cols() << ',' << col(est.prior) << ','
       << col(est.posterior) << ',' << col(est.deconv) << '\n';
  }
  std::cout << report["estimators"].dump(2) << '\n';
  return 0;
}

int cmd_bench(const Common& c) {
  const BenchRecord r = run_ensemble(scenario_from(c));
  const fs::path dir = out_dir(c);
  write_csv(dir / "bench.csv", {r}, !c.no_timing);
  write_json(dir / "learned.json", json(r.learned));
  for (const auto& s : r.estimators) {
    std::printf("%-10s DER %.3f%% +- %.3f%%  cg %.1f  %.2f ms\n", to_string(s.kind), 100 * s.der_mean,
                100 * s.der_std, s.cg_iter_mean, s.runtime_ms);
  }
  std::printf("SNR %.2f dB\n", r.snr_db);
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<double>& mus, const std::vector<double>& as, bool no_cuts) {
  const auto records = sweep_mu_a(scenario_from(c), mus, as, !no_cuts);
  write_csv(out_dir(c) / "sweep.csv", records, !c.no_timing);
  return 0;
}

int cmd_runtime(const Common& c, const std::vector<int>& sites) {
  Scenario s = scenario_from(c);
  const RuntimeReport report = runtime_scaling(s, sites);
  const fs::path dir = out_dir(c);
  write_csv(dir / "runtime.csv", report.records, !c.no_timing);
  if (!c.no_timing) {
    write_json(dir / "runtime.json", json{{"prior_slope", report.prior_slope},
                                          {"posterior_slope", report.posterior_slope},
                                          {"deconv_slope", report.deconv_slope}});
  }
  std::printf("log-log slopes: prior %.3f posterior %.3f deconv %.3f\n", report.prior_slope,
              report.posterior_slope, report.deconv_slope);
  return 0;
}

int cmd_robustness(const Common& c, const std::string& kind, const std::vector<double>& amplitudes) {
  const auto records = robustness_sweep(scenario_from(c), parse_perturbation(kind), amplitudes);
  write_csv(out_dir(c) / "robustness.csv", records, !c.no_timing);
  return 0;
}

int cmd_snr(const Common& c) {
  const ScenarioConfig cfg = load(c);
  const MeasurementMatrix m = build_measurement_matrix(cfg.geometry(), cfg.psf());
  const SnrReport r = snr(cfg.brightness(), m);
  const json j{{"snr_db", r.snr_db},
               {"mse", r.mse},
               {"exact", r.exact},
               {"rel_error", r.rel_error},
               {"snr_resolved_limit_db", snr_resolved_limit(cfg.brightness(), m)}};
  std::cout << j.dump(2) << '\n';
  if (c.out != ".") write_json(out_dir(c) / "snr.json", j);
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Atom detection from fluorescence images of site arrays"};
  app.require_subcommand(1);

  Common common;
  std::string format = "raw";
  CalibrateArgs cal;
  EstimateArgs est;
  std::vector<double> mus{100, 200, 400, 700, 1000};
  std::vector<double> as{2, 3, 4, 6, 8};
  bool no_cuts = false;
  std::vector<int> sites{100, 400, 1600, 4900, 10000};
  std::string kind = "offset";
  std::vector<double> amplitudes{0.0, 0.05, 0.1, 0.15, 0.2};

  auto* gen = app.add_subcommand("generate", "emit test images with their ground truth");
  add_common(gen, common);
  gen->add_option("--format", format, "raw | pgm")->check(CLI::IsMember({"raw", "pgm"}));

  auto* calib = app.add_subcommand("calibrate", "tune gamma, lambda and d and fit the mixture model");
  add_common(calib, common);
  calib->add_option("--image", cal.image, "image to calibrate on (default: generated from the scenario)");
  calib->add_option("--truth", cal.truth, "truth CSV, adds DER to the tuning curves");
  calib->add_flag("--export-matrices", cal.export_matrices, "also write M and the Gram matrix (Matrix Market)");

  auto* estimate = app.add_subcommand("estimate", "estimate site brightnesses of one image");
  add_common(estimate, common);
  estimate->add_option("--image", est.image, "input image (.pgm or raw float64)")->required();
  estimate->add_option("--truth", est.truth, "truth CSV for scoring");
  estimate->add_option("--learned", est.learned, "learned model JSON (default: calibrate on the image)");

  auto* bench = app.add_subcommand("bench", "ensemble DER statistics");
  add_common(bench, common);
  bench->add_flag("--no-timing", common.no_timing, "leave runtime columns empty");

  auto* sweep = app.add_subcommand("sweep", "DER and SNR over a (mu, a) grid");
  add_common(sweep, common);
  sweep->add_option("--mu", mus, "brightness values")->delimiter(',');
  sweep->add_option("--a", as, "inter-site distances")->delimiter(',');
  sweep->add_flag("--no-cuts", no_cuts, "skip the mu = 1000 and a = 1.5 hwhm cut lines");
  sweep->add_flag("--no-timing", common.no_timing, "leave runtime columns empty");

  auto* runtime = app.add_subcommand("runtime", "per-image runtime against the number of sites");
  add_common(runtime, common);
  runtime->add_option("--sites", sites, "square site counts")->delimiter(',');
  runtime->add_flag("--no-timing", common.no_timing, "leave runtime columns empty");

  auto* robust = app.add_subcommand("robustness", "DER under calibration errors");
  add_common(robust, common);
  robust->add_option("--kind", kind, "offset | hwhm_scale")->check(CLI::IsMember({"offset", "hwhm_scale", "scale"}));
  robust->add_option("--amplitudes", amplitudes, "offsets as a fraction of a, or HWHM factors")->delimiter(',');
  robust->add_flag("--no-timing", common.no_timing, "leave runtime columns empty");

  auto* snr_cmd = app.add_subcommand("snr", "predicted signal-to-noise ratio");
  add_common(snr_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_generate(common, format);
    if (*calib) return cmd_calibrate(common, cal);
    if (*estimate) return cmd_estimate(common, est);
    if (*bench) return cmd_bench(common);
    if (*sweep) return cmd_sweep(common, mus, as, no_cuts);
    if (*runtime) return cmd_runtime(common, sites);
    if (*robust) {
      if (kind == "hwhm_scale" || kind == "scale") {
        if (!robust->count("--amplitudes")) amplitudes = {0.8, 0.9, 1.0, 1.1, 1.2};
      }
      return cmd_robustness(common, kind, amplitudes);
    }
    if (*snr_cmd) return cmd_snr(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace atomdet
