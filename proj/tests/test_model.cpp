#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "atomdet/forward.hpp"
#include "atomdet/image_io.hpp"
#include "atomdet/model.hpp"

using namespace atomdet;

namespace {

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / (v.size() - 1);
}

std::filesystem::path temp_dir() {
  auto d = std::filesystem::temp_directory_path() / "atomdet_test_model";
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("geometry places the first site on a pixel centre") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(4, 5, 3.0, {0, 0}, 2.0);
  CHECK(g.margin() == 6);
  CHECK(g.n_sites() == 20);
  CHECK(g.width() == 2 * 6 + 12 + 1);
  CHECK(g.height() == 2 * 6 + 9 + 1);
  const Point2 p = g.site_position(0);
  CHECK(p.x == std::round(p.x));
  CHECK(p.y == std::round(p.y));
  const Point2 last = g.site_position(19);
  CHECK(last.x == doctest::Approx(6 + 12));
  CHECK(last.y == doctest::Approx(6 + 9));
  CHECK(g.contains_disks(6.0));
  CHECK_FALSE(g.contains_disks(6.5));
}

TEST_CASE("default margin grows with the offset") {
  CHECK(ArrayGeometry::default_margin(2.0, {0.4, -1.2}) == 6 + 2);
  const ArrayGeometry g = ArrayGeometry::with_default_margin(3, 3, 3.0, {0.4, -1.2}, 2.0);
  CHECK(g.contains_disks(6.0));
  CHECK(g.site_position(0).x == doctest::Approx(8.4));
}

TEST_CASE("invalid geometry and psf are rejected") {
  CHECK_THROWS(ArrayGeometry(0, 3, 3.0, {}, 2));
  CHECK_THROWS(ArrayGeometry(3, 3, -1.0, {}, 2));
  CHECK_THROWS(ArrayGeometry(3, 3, 3.0, {}, -1));
  CHECK_THROWS(PsfModel(0.0));
  CHECK(PsfModel(2.0).truncation_radius() == 6.0);
  CHECK(PsfModel(2.0).gaussian_sigma() == doctest::Approx(2.0 / std::sqrt(2 * std::log(2.0))));
}

TEST_CASE("brightness model validation") {
  CHECK_NOTHROW(BrightnessModel{}.validate());
  CHECK_THROWS(BrightnessModel{1.5, 200, 20, 0, 1}.validate());
  CHECK_THROWS(BrightnessModel{0.5, -1, 20, 0, 1}.validate());
  CHECK_THROWS(BrightnessModel{0.5, 200, NAN, 0, 1}.validate());
}

TEST_CASE("ground truth degenerate distributions") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(10, 10, 3.0, {}, 2.0);
  const GroundTruth all = sample_ground_truth(g, {1.0, 200.0, 0.0, 0.0, 1.0}, 7);
  CHECK(all.n_occupied() == 100);
  for (double b : all.brightness) CHECK(b == 200.0);
  const GroundTruth none = sample_ground_truth(g, {0.0, 200.0, 20.0, 0.0, 1.0}, 7);
  CHECK(none.n_occupied() == 0);
  for (double b : none.brightness) CHECK(b == 0.0);
}

TEST_CASE("ground truth occupancy fraction and clamp") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(50, 50, 3.0, {}, 2.0);
  const GroundTruth t = sample_ground_truth(g, BrightnessModel{}, 11);
  const double frac = t.n_occupied() / 2500.0;
  CHECK(std::abs(frac - 0.6) <= 3 * std::sqrt(0.6 * 0.4 / 2500));
  for (std::size_t i = 0; i < t.brightness.size(); ++i) {
    CHECK(t.brightness[i] >= 0.0);
    if (!t.occupied[i]) CHECK(t.brightness[i] == 0.0);
  }
  const GroundTruth wide = sample_ground_truth(g, {0.9, 10.0, 50.0, 0.0, 1.0}, 3);
  for (double b : wide.brightness) CHECK(b >= 0.0);
}

TEST_CASE("seed derivation is deterministic and distinct") {
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("noiseless rendering") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(3, 3, 3.0, {}, 2.0);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(2.0));
  GroundTruth empty{std::vector<bool>(9, false), std::vector<double>(9, 0.0)};
  for (double v : render_noiseless(m, empty, 5.0)) CHECK(v == doctest::Approx(5.0));

  GroundTruth one = empty;
  one.occupied[4] = true;
  one.brightness[4] = 200.0;
  const auto img = render_noiseless(m, one, 0.0);
  CHECK(std::accumulate(img.begin(), img.end(), 0.0) == doctest::Approx(200.0).epsilon(1e-12));

  GroundTruth wrong{std::vector<bool>(4, false), std::vector<double>(4, 0.0)};
  CHECK_THROWS(render_noiseless(m, wrong, 0.0));
}

TEST_CASE("noiseless rendering of two sites matches a dense product") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(1, 2, 2.5, {0.3, 0.1}, 1.5);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(1.5));
  GroundTruth t{{true, true}, {150.0, 80.0}};
  const auto img = render_noiseless(m, t, 2.0);
  for (int py = 0; py < g.height(); ++py) {
    for (int px = 0; px < g.width(); ++px) {
      const double expect = 2.0 + 150.0 * m.by_site().at(0, py * g.width() + px) +
                            80.0 * m.by_site().at(1, py * g.width() + px);
      CHECK(img[py * g.width() + px] == doctest::Approx(expect).epsilon(1e-14));
    }
  }
}

TEST_CASE("noise statistics") {
  std::vector<double> zero(1000, 0.0);
  for (double v : apply_noise(zero, 0.0, 1)) CHECK(v == 0.0);

  std::vector<double> c(100000, 100.0);
  const auto y = apply_noise(c, 1.0, 2);
  CHECK(std::abs(mean(y) - 100.0) <= 3 * std::sqrt(101.0 / 1e5));

  const auto pois = apply_noise(c, 0.0, 3);
  const double se_var = 100.0 * std::sqrt(2.0 / 1e5) * 1.1;
  CHECK(std::abs(variance(pois) - mean(pois)) <= 3 * se_var);

  std::vector<double> bad{1.0, -0.5};
  CHECK_THROWS_AS(apply_noise(bad, 1.0, 1), std::invalid_argument);
}

TEST_CASE("generated images") {
  ScenarioConfig cfg;
  const ArrayGeometry g = cfg.geometry();
  const MeasurementMatrix m = build_measurement_matrix(g, cfg.psf());
  const ImageSample a = generate_test_image(m, cfg.brightness(), 42);
  const ImageSample b = generate_test_image(m, cfg.brightness(), 42);
  CHECK(a.pixels == b.pixels);
  CHECK(a.truth->brightness == b.truth->brightness);
  CHECK(a.seed == 42);

  const double expected = 0.6 * 200.0 * g.n_sites() / g.n_pixels();
  const double var_x = 0.24 * 200.0 * 200.0 + 0.6 * 400.0;
  const double sd = std::sqrt(g.n_sites() * var_x + g.n_sites() * 120.0 + g.n_pixels()) / g.n_pixels();
  CHECK(std::abs(mean(a.pixels) - expected) < 4 * sd);

  const ImageSample z = generate_test_image(m, {0.0, 200.0, 20.0, 0.0, 0.0}, 5);
  for (double v : z.pixels) CHECK(v == 0.0);
}

TEST_CASE("pixel sum tracks total brightness over many images") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(10, 10, 3.0, {}, 2.0);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(2.0));
  const BrightnessModel model{0.6, 200.0, 20.0, 0.0, 1.0};
  double diff = 0.0, var = 0.0;
  for (int i = 0; i < 100; ++i) {
    const ImageSample s = generate_test_image(m, model, derive_seed(9, i));
    const double sum_y = std::accumulate(s.pixels.begin(), s.pixels.end(), 0.0);
    const double sum_x = std::accumulate(s.truth->brightness.begin(), s.truth->brightness.end(), 0.0);
    diff += sum_y - sum_x;
    var += sum_x + g.n_pixels() * 1.0;
  }
  CHECK(std::abs(diff) <= 4 * std::sqrt(var));
}

TEST_CASE("scenario json round trip and strict keys") {
  ScenarioConfig c;
  c.n_rows = 7;
  c.offset_dx = 0.25;
  c.seed = 1234567890123ULL;
  const nlohmann::json j = c;
  for (const char* key : {"n_rows", "n_cols", "spacing_a", "offset_dx", "offset_dy", "psf_hwhm", "p", "mu",
                          "sigma", "background_k", "read_noise_r", "seed"}) {
    CHECK(j.contains(key));
  }
  CHECK(j.size() == 12);
  const ScenarioConfig back = j.get<ScenarioConfig>();
  CHECK(back.n_rows == 7);
  CHECK(back.offset_dx == 0.25);
  CHECK(back.seed == 1234567890123ULL);

  nlohmann::json extra = j;
  extra["bogus"] = 1;
  CHECK_THROWS(extra.get<ScenarioConfig>());
  const ScenarioConfig partial = nlohmann::json{{"mu", 500.0}}.get<ScenarioConfig>();
  CHECK(partial.mu == 500.0);
  CHECK(partial.n_rows == 50);
}

TEST_CASE("raw float image round trip") {
  const auto dir = temp_dir();
  std::vector<double> px{0.5, -1.25, 3e5, 1e-300, 7.0, 8.0};
  io::write_raw_f64(dir / "a.raw", 3, 2, px);
  const io::RawImage r = io::read_raw_f64(dir / "a.raw");
  CHECK(r.width == 3);
  CHECK(r.height == 2);
  CHECK(r.pixels == px);
  CHECK(io::read_image(dir / "a.raw").pixels == px);
}

TEST_CASE("pgm round trip within quantization step") {
  const auto dir = temp_dir();
  std::vector<double> px;
  for (int i = 0; i < 40; ++i) px.push_back(-3.0 + 17.3 * i);
  const auto q = io::write_pgm16(dir / "a.pgm", 8, 5, px);
  const io::RawImage r = io::read_pgm16(dir / "a.pgm");
  REQUIRE(r.pixels.size() == px.size());
  for (std::size_t i = 0; i < px.size(); ++i) CHECK(std::abs(r.pixels[i] - px[i]) <= 0.5 * q.scale + 1e-9);

  std::ifstream in(dir / "a.pgm", std::ios::binary);
  std::string magic;
  in >> magic;
  CHECK(magic == "P5");
}

TEST_CASE("truth csv round trip") {
  const auto dir = temp_dir();
  const ArrayGeometry g = ArrayGeometry::with_default_margin(2, 3, 3.0, {}, 2.0);
  GroundTruth t{{true, false, true, false, false, true}, {201.5, 0, 180.25, 0, 0, 1e-3}};
  io::write_truth_csv(dir / "t.csv", g, t);
  const GroundTruth back = io::read_truth_csv(dir / "t.csv");
  CHECK(back.occupied == t.occupied);
  CHECK(back.brightness == t.brightness);
}
