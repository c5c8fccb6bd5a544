#include "atomdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include "atomdet/forward.hpp"

namespace atomdet {

namespace {

int ceil_tolerant(double v) { return static_cast<int>(std::ceil(v - 1e-9)); }

double max_abs_offset(Point2 offset) { return std::max(std::abs(offset.x), std::abs(offset.y)); }

}  // namespace

ArrayGeometry::ArrayGeometry(int n_rows, int n_cols, double spacing, Point2 offset, int margin)
    : n_rows_(n_rows), n_cols_(n_cols), spacing_(spacing), offset_(offset), margin_(margin) {
  if (n_rows <= 0 || n_cols <= 0) {
    throw std::invalid_argument("array geometry needs at least one row and one column");
  }
  if (!(spacing > 0.0) || !std::isfinite(spacing)) {
    throw std::invalid_argument("inter-site spacing must be positive and finite");
  }
  if (!std::isfinite(offset.x) || !std::isfinite(offset.y)) {
    throw std::invalid_argument("global offset must be finite");
  }
  if (margin < 0) {
    throw std::invalid_argument("image margin must be non-negative");
  }
  width_ = 2 * margin_ + ceil_tolerant((n_cols_ - 1) * spacing_) + 1;
  height_ = 2 * margin_ + ceil_tolerant((n_rows_ - 1) * spacing_) + 1;
}

int ArrayGeometry::default_margin(double hwhm, Point2 offset) {
  return ceil_tolerant(3.0 * hwhm) + ceil_tolerant(max_abs_offset(offset));
}

ArrayGeometry ArrayGeometry::with_default_margin(int n_rows, int n_cols, double spacing,
                                                 Point2 offset, double hwhm) {
  return ArrayGeometry(n_rows, n_cols, spacing, offset, default_margin(hwhm, offset));
}

Point2 ArrayGeometry::site_position(int site) const {
  const int r = site / n_cols_;
  const int c = site % n_cols_;
  return {margin_ + offset_.x + c * spacing_, margin_ + offset_.y + r * spacing_};
}

bool ArrayGeometry::contains_disks(double radius) const {
  return margin_ >= ceil_tolerant(radius + max_abs_offset(offset_));
}

ArrayGeometry ArrayGeometry::with_offset(Point2 offset) const {
  return ArrayGeometry(n_rows_, n_cols_, spacing_, offset, margin_);
}

PsfModel::PsfModel(double hwhm_px) : hwhm(hwhm_px) {
  if (!(hwhm_px > 0.0) || !std::isfinite(hwhm_px)) {
    throw std::invalid_argument("PSF HWHM must be positive and finite");
  }
}

double PsfModel::gaussian_sigma() const { return hwhm / std::sqrt(2.0 * std::log(2.0)); }

void BrightnessModel::validate() const {
  for (double v : {p, mu, sigma, background_k, read_noise_r}) {
    if (!std::isfinite(v)) throw std::invalid_argument("brightness model has a non-finite field");
  }
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("occupancy probability must lie in [0, 1]");
  if (mu < 0.0 || sigma < 0.0 || background_k < 0.0 || read_noise_r < 0.0) {
    throw std::invalid_argument("mu, sigma, background and read noise must be non-negative");
  }
}

int GroundTruth::n_occupied() const {
  return static_cast<int>(std::count(occupied.begin(), occupied.end(), true));
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  // splitmix64 finalizer over a mix of both words.
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

GroundTruth sample_ground_truth(const ArrayGeometry& geometry, const BrightnessModel& model,
                                std::uint64_t seed) {
  model.validate();
  const int n = geometry.n_sites();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  GroundTruth truth;
  truth.occupied.assign(n, false);
  truth.brightness.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    // Both draws happen for every site so the stream layout is independent of p.
    const double u = uniform(rng);
    const double g = normal(rng);
    if (u < model.p) {
      truth.occupied[i] = true;
      truth.brightness[i] = std::max(0.0, model.mu + model.sigma * g);
    }
  }
  return truth;
}

std::vector<double> render_noiseless(const MeasurementMatrix& m, const GroundTruth& truth,
                                     double background_k) {
  if (static_cast<int>(truth.brightness.size()) != m.n_sites()) {
    throw std::invalid_argument("ground truth length does not match the measurement matrix");
  }
  std::vector<double> image = m.apply(truth.brightness);
  for (double& v : image) v = std::max(0.0, v + background_k);
  return image;
}

std::vector<double> apply_noise(std::span<const double> noiseless, double read_noise_r,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(noiseless.size());
  for (std::size_t i = 0; i < noiseless.size(); ++i) {
    const double mean = noiseless[i];
    if (!(mean >= 0.0) || !std::isfinite(mean)) {
      throw std::invalid_argument("Poisson mean must be finite and non-negative (pixel " +
                                  std::to_string(i) + ")");
    }
    double counts = 0.0;
    if (mean > 0.0) {
      std::poisson_distribution<long long> poisson(mean);
      counts = static_cast<double>(poisson(rng));
    }
    if (read_noise_r > 0.0) counts += read_noise_r * normal(rng);
    out[i] = counts;
  }
  return out;
}

ImageSample generate_test_image(const MeasurementMatrix& m, const BrightnessModel& model,
                                std::uint64_t seed) {
  ImageSample sample{m.geometry(), {}, std::nullopt, seed};
  GroundTruth truth = sample_ground_truth(m.geometry(), model, derive_seed(seed, 0));
  const std::vector<double> noiseless = render_noiseless(m, truth, model.background_k);
  sample.pixels = apply_noise(noiseless, model.read_noise_r, derive_seed(seed, 1));
  sample.truth = std::move(truth);
  return sample;
}

ImageSample generate_test_image(const ArrayGeometry& geometry, const PsfModel& psf,
                                const BrightnessModel& model, std::uint64_t seed) {
  return generate_test_image(build_measurement_matrix(geometry, psf), model, seed);
}

ArrayGeometry ScenarioConfig::geometry() const {
  return ArrayGeometry::with_default_margin(n_rows, n_cols, spacing_a, {offset_dx, offset_dy},
                                            psf_hwhm);
}

ArrayGeometry ScenarioConfig::geometry(int margin) const {
  return ArrayGeometry(n_rows, n_cols, spacing_a, {offset_dx, offset_dy}, margin);
}

BrightnessModel ScenarioConfig::brightness() const {
  BrightnessModel b{p, mu, sigma, background_k, read_noise_r};
  b.validate();
  return b;
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{{"n_rows", c.n_rows},
                     {"n_cols", c.n_cols},
                     {"spacing_a", c.spacing_a},
                     {"offset_dx", c.offset_dx},
                     {"offset_dy", c.offset_dy},
                     {"psf_hwhm", c.psf_hwhm},
                     {"p", c.p},
                     {"mu", c.mu},
                     {"sigma", c.sigma},
                     {"background_k", c.background_k},
                     {"read_noise_r", c.read_noise_r},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  static const std::set<std::string> known = {
      "n_rows", "n_cols", "spacing_a", "offset_dx", "offset_dy", "psf_hwhm",
      "p",      "mu",     "sigma",     "background_k", "read_noise_r", "seed"};
  if (!j.is_object()) throw std::invalid_argument("scenario configuration must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown scenario key: " + key);
  }
  c.n_rows = j.value("n_rows", c.n_rows);
  c.n_cols = j.value("n_cols", c.n_cols);
  c.spacing_a = j.value("spacing_a", c.spacing_a);
  c.offset_dx = j.value("offset_dx", c.offset_dx);
  c.offset_dy = j.value("offset_dy", c.offset_dy);
  c.psf_hwhm = j.value("psf_hwhm", c.psf_hwhm);
  c.p = j.value("p", c.p);
  c.mu = j.value("mu", c.mu);
  c.sigma = j.value("sigma", c.sigma);
  c.background_k = j.value("background_k", c.background_k);
  c.read_noise_r = j.value("read_noise_r", c.read_noise_r);
  c.seed = j.value("seed", c.seed);
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  return j.get<ScenarioConfig>();
}

}  // namespace atomdet
