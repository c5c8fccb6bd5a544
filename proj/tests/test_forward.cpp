#include <doctest.h>

#include <cmath>
#include <sstream>

#include "atomdet/forward.hpp"
#include "oracles.hpp"

using namespace atomdet;

TEST_CASE("narrow psf concentrates on its pixel") {
  CHECK(pixel_psf_integral({5.0, 5.0}, 5, 5, 0.1) > 0.999);
}

TEST_CASE("mirror pixels get equal weight") {
  const Point2 s{10.0, 10.0};
  CHECK(pixel_psf_integral(s, 11, 10, 2.0) == doctest::Approx(pixel_psf_integral(s, 9, 10, 2.0)).epsilon(1e-12));
  CHECK(pixel_psf_integral(s, 12, 13, 2.0) == doctest::Approx(pixel_psf_integral(s, 8, 7, 2.0)).epsilon(1e-12));
  CHECK(std::abs(pixel_psf_integral(s, 12, 13, 2.0) - pixel_psf_integral(s, 13, 12, 2.0)) < 1e-12);
}

TEST_CASE("pixel integral matches 2-D quadrature") {
  const double exact = oracle::gaussian_pixel_quadrature(10.0, 10.0, 11, 10, 2.0);
  CHECK(std::abs(pixel_psf_integral({10.0, 10.0}, 11, 10, 2.0) - exact) < 1e-6);
  const double off = oracle::gaussian_pixel_quadrature(10.3, 9.8, 12, 8, 1.3);
  CHECK(std::abs(pixel_psf_integral({10.3, 9.8}, 12, 8, 1.3) - off) < 1e-6);
}

TEST_CASE("pixel integral vanishes beyond the truncation reach") {
  CHECK(pixel_psf_integral({10.0, 10.0}, 17, 10, 2.0) == 0.0);
  CHECK(pixel_psf_integral({10.0, 10.0}, 16, 10, 2.0) > 0.0);
}

TEST_CASE("single site column sums to one") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(1, 1, 3.0, {}, 2.0);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(2.0));
  const auto vals = m.by_site().row_values(0);
  double s = 0.0;
  for (double v : vals) {
    CHECK(v >= 0.0);
    s += v;
  }
  CHECK(std::abs(s - 1.0) < 1e-9);
}

TEST_CASE("table geometry column sums and footprint") {
  const ScenarioConfig cfg;
  const MeasurementMatrix m = build_measurement_matrix(cfg.geometry(), cfg.psf());
  CHECK(m.n_sites() == 2500);
  for (int s = 0; s < m.n_sites(); ++s) {
    const auto vals = m.by_site().row_values(s);
    CHECK(vals.size() <= 169u);
    double sum = 0.0;
    for (double v : vals) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("offset geometry keeps unit column sums") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(6, 7, 2.3, {0.37, -0.81}, 1.7);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(1.7));
  for (int s = 0; s < m.n_sites(); ++s) {
    double sum = 0.0;
    for (double v : m.by_site().row_values(s)) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("matrix entries match renormalized quadrature") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(2, 2, 3.0, {0.25, 0.4}, 2.0);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(2.0));
  const int site = 3;
  const Point2 c = g.site_position(site);
  const auto cols = m.by_site().row_cols(site);
  const auto vals = m.by_site().row_values(site);
  std::vector<double> q(cols.size());
  double total = 0.0;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    q[k] = oracle::gaussian_pixel_quadrature(c.x, c.y, cols[k] % g.width(), cols[k] / g.width(), 2.0);
    total += q[k];
  }
  for (std::size_t k = 0; k < cols.size(); ++k) CHECK(std::abs(vals[k] - q[k] / total) < 1e-6);
}

TEST_CASE("insufficient margin is rejected") {
  const ArrayGeometry g(3, 3, 3.0, {}, 2);
  CHECK_THROWS_AS(build_measurement_matrix(g, PsfModel(2.0)), std::invalid_argument);
}

TEST_CASE("shifting the offset by one lattice period translates columns") {
  const double a = 3.0;
  const ArrayGeometry g0(4, 4, a, {0.2, 0.1}, 10);
  const ArrayGeometry g1(4, 4, a, {0.2 + a, 0.1}, 10);
  const MeasurementMatrix m0 = build_measurement_matrix(g0, PsfModel(2.0));
  const MeasurementMatrix m1 = build_measurement_matrix(g1, PsfModel(2.0));
  // site (r, c) in g1 sits where site (r, c+1) sits in g0
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 3; ++c) {
      const auto a0 = m0.by_site().row_cols(r * 4 + c + 1);
      const auto a1 = m1.by_site().row_cols(r * 4 + c);
      REQUIRE(a0.size() == a1.size());
      const auto v0 = m0.by_site().row_values(r * 4 + c + 1);
      const auto v1 = m1.by_site().row_values(r * 4 + c);
      for (std::size_t k = 0; k < a0.size(); ++k) {
        CHECK(a0[k] == a1[k]);
        CHECK(v0[k] == doctest::Approx(v1[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("integer pixel offset translates rows") {
  const ArrayGeometry g0(3, 3, 2.5, {0.0, 0.0}, 9);
  const ArrayGeometry g1(3, 3, 2.5, {2.0, 1.0}, 9);
  const MeasurementMatrix m0 = build_measurement_matrix(g0, PsfModel(1.5));
  const MeasurementMatrix m1 = build_measurement_matrix(g1, PsfModel(1.5));
  const int w = g0.width();
  for (int s = 0; s < 9; ++s) {
    const auto c0 = m0.by_site().row_cols(s);
    const auto c1 = m1.by_site().row_cols(s);
    REQUIRE(c0.size() == c1.size());
    for (std::size_t k = 0; k < c0.size(); ++k) CHECK(c1[k] == c0[k] + 1 * w + 2);
  }
}

TEST_CASE("gram of a single site is the squared column norm") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(1, 1, 3.0, {}, 2.0);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(2.0));
  const GramMatrix gram = build_gram(m);
  double s = 0.0;
  for (double v : m.by_site().row_values(0)) s += v * v;
  CHECK(gram.matrix.rows() == 1);
  CHECK(gram.matrix.at(0, 0) == doctest::Approx(s).epsilon(1e-14));
}

TEST_CASE("far sites do not couple") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(1, 2, 30.0, {}, 2.0);
  const GramMatrix gram = build_gram(build_measurement_matrix(g, PsfModel(2.0)));
  CHECK(gram.matrix.at(0, 1) == 0.0);
  CHECK(gram.matrix.at(1, 0) == 0.0);
}

TEST_CASE("gram matches dense product and sparsity bound") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(3, 3, 3.0, {}, 2.0);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(2.0));
  const GramMatrix gram = build_gram(m);
  const Eigen::MatrixXd md = oracle::dense(m.by_pixel());
  const Eigen::MatrixXd expect = md.transpose() * md;
  const Eigen::MatrixXd got = oracle::dense(gram.matrix);
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(gram.matrix.asymmetry() < 1e-12);
  for (int i = 0; i < 9; ++i) CHECK(got(i, i) > 0.0);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(got);
  CHECK(eig.eigenvalues().minCoeff() > -1e-12);

  const ArrayGeometry wide = ArrayGeometry::with_default_margin(1, 3, 7.0, {}, 1.0);
  const GramMatrix gw = build_gram(build_measurement_matrix(wide, PsfModel(1.0)));
  const double reach = 2 * (3.0 + std::sqrt(0.5));
  CHECK(14.0 > reach);
  CHECK(gw.matrix.at(0, 2) == 0.0);
}

TEST_CASE("weighted gram matches dense product") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(2, 3, 2.0, {0.3, 0.0}, 1.5);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(1.5));
  std::vector<double> w(m.n_pixels());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + (i % 7) * 0.1;
  const Eigen::MatrixXd md = oracle::dense(m.by_pixel());
  const Eigen::MatrixXd expect = md.transpose() * oracle::vec(w).asDiagonal() * md;
  CHECK((oracle::dense(build_weighted_gram(m, w)) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("apply and transpose are adjoint") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(3, 4, 3.0, {}, 2.0);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(2.0));
  std::vector<double> x(m.n_sites()), y(m.n_pixels());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(i + 1.0);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::cos(0.3 * i);
  const auto mx = m.apply(x);
  const auto mty = m.apply_transpose(y);
  CHECK(sparse::dot(mx, y) == doctest::Approx(sparse::dot(x, mty)).epsilon(1e-12));
  const auto rs = m.row_sums();
  const auto ones = m.apply(std::vector<double>(m.n_sites(), 1.0));
  for (std::size_t i = 0; i < rs.size(); ++i) CHECK(rs[i] == doctest::Approx(ones[i]));
}

TEST_CASE("matrix market export") {
  const ArrayGeometry g = ArrayGeometry::with_default_margin(1, 1, 3.0, {}, 0.5);
  const MeasurementMatrix m = build_measurement_matrix(g, PsfModel(0.5));
  std::ostringstream os;
  sparse::write_matrix_market(os, m.by_pixel());
  const std::string s = os.str();
  CHECK(s.rfind("%%MatrixMarket matrix coordinate real general", 0) == 0);
}
