#include <doctest.h>

#include <cmath>
#include <random>

#include "atomdet/forward.hpp"
#include "atomdet/ole.hpp"
#include "atomdet/sparse.hpp"
#include "oracles.hpp"

using namespace atomdet;
using namespace atomdet::sparse;

namespace {

Eigen::MatrixXd random_spd(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd b(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) b(i, j) = g(rng);
  }
  return b.transpose() * b + Eigen::MatrixXd::Identity(n, n);
}

std::vector<double> random_vec(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

double true_residual(const CsrMatrix& a, std::span<const double> x, std::span<const double> b) {
  auto ax = a.multiply(x);
  for (std::size_t i = 0; i < ax.size(); ++i) ax[i] -= b[i];
  return norm2(ax) / norm2(b);
}

CsrMatrix tridiagonal(int n) {
  std::vector<CsrMatrix::Triplet> t;
  for (int i = 0; i < n; ++i) {
    t.push_back({i, i, 4.0 + 0.1 * i});
    if (i > 0) t.push_back({i, i - 1, -1.0 - 0.01 * i});
    if (i + 1 < n) t.push_back({i, i + 1, -1.0 - 0.01 * (i + 1)});
  }
  return CsrMatrix::from_triplets(n, n, t);
}

CsrMatrix table_system() {
  const ScenarioConfig cfg;
  const MeasurementMatrix m = build_measurement_matrix(cfg.geometry(), cfg.psf());
  return ole_system_matrix(build_gram(m), prior_moments(cfg.brightness(), m));
}

}  // namespace

TEST_CASE("csr construction and access") {
  const CsrMatrix a = CsrMatrix::from_triplets(3, 4, {{0, 1, 2.0}, {2, 3, 1.0}, {0, 1, 0.5}, {1, 0, -1.0}});
  CHECK(a.nnz() == 3);
  CHECK(a.at(0, 1) == 2.5);
  CHECK(a.at(0, 0) == 0.0);
  CHECK(a.at(1, 0) == -1.0);
  const CsrMatrix t = a.transpose();
  CHECK(t.rows() == 4);
  CHECK(t.at(1, 0) == 2.5);
  CHECK(t.at(3, 2) == 1.0);
  const auto y = a.multiply(std::vector<double>{1, 2, 3, 4});
  CHECK(y == std::vector<double>{5.0, -1.0, 4.0});
  CHECK_THROWS(CsrMatrix(2, 2, {0, 2, 2}, {1, 0}, {1.0, 1.0}));
}

TEST_CASE("scaled plus diagonal inserts missing diagonal entries") {
  const CsrMatrix a = CsrMatrix::from_triplets(3, 3, {{0, 1, 1.0}, {1, 0, 1.0}, {2, 2, 2.0}});
  const CsrMatrix b = a.scaled_plus_diagonal(2.0, std::vector<double>{1.0, 3.0, 1.0});
  CHECK(b.at(0, 0) == 1.0);
  CHECK(b.at(1, 1) == 3.0);
  CHECK(b.at(2, 2) == 5.0);
  CHECK(b.at(0, 1) == 2.0);
  CHECK(b.asymmetry() == 0.0);
}

TEST_CASE("diagonal matrix factors exactly and converges in one step") {
  const CsrMatrix a = CsrMatrix::identity(6).scaled_plus_diagonal(1.0, std::vector<double>{1, 2, 3, 4, 5, 6});
  const IluPreconditioner ilu = ilu_decompose(a, 1e-3, 10);
  for (int k = 0; k < 6; ++k) {
    CHECK(ilu.lower_column(k).empty());
    CHECK(ilu.upper_row(k).empty());
    CHECK(ilu.pivot(k) == doctest::Approx(k + 2.0));
  }
  const auto b = random_vec(6, 1);
  const CgResult r = cg_solve(a, b, &ilu);
  CHECK(r.iterations == 1);
  for (int i = 0; i < 6; ++i) CHECK(r.x[i] == doctest::Approx(b[i] / (i + 2.0)));
}

TEST_CASE("tridiagonal factors equal the exact LU") {
  const int n = 20;
  const CsrMatrix a = tridiagonal(n);
  const IluPreconditioner ilu = ilu_decompose(a, 0.0, 2);
  Eigen::MatrixXd ad = oracle::dense(a);
  // Doolittle without pivoting as the reference.
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(n, n), u = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) u(i, j) = ad(i, j) - l.row(i).head(i).dot(u.col(j).head(i));
    for (int j = i + 1; j < n; ++j) l(j, i) = (ad(j, i) - l.row(j).head(i).dot(u.col(i).head(i))) / u(i, i);
  }
  Eigen::MatrixXd lf = Eigen::MatrixXd::Identity(n, n), uf = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    uf(k, k) = ilu.pivot(k);
    for (const auto& e : ilu.upper_row(k)) uf(k, e.index) = e.value;
    for (const auto& e : ilu.lower_column(k)) lf(e.index, k) = e.value;
  }
  CHECK((lf - l).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((uf - u).cwiseAbs().maxCoeff() < 1e-12);

  const auto b = random_vec(n, 2);
  const CgResult r = cg_solve(a, b, &ilu);
  CHECK(r.iterations == 1);
  CHECK(r.residual < 1e-10);
}

TEST_CASE("zero pivot names the row") {
  const CsrMatrix a = CsrMatrix::from_triplets(3, 3, {{0, 0, 1.0}, {1, 1, 0.0}, {2, 2, 1.0}, {1, 2, 1.0}, {2, 1, 1.0}});
  try {
    ilu_decompose(a, 1e-3, 10);
    FAIL("expected a zero pivot");
  } catch (const ZeroPivotError& e) {
    CHECK(e.row() == 1);
  }
}

TEST_CASE("cg on the identity and on a zero right-hand side") {
  const CsrMatrix a = CsrMatrix::identity(5);
  const std::vector<double> b{1, -2, 3, 0.5, 4};
  const CgResult r = cg_solve(a, b, nullptr);
  CHECK(r.iterations == 1);
  for (int i = 0; i < 5; ++i) CHECK(r.x[i] == doctest::Approx(b[i]));
  const CgResult z = cg_solve(a, std::vector<double>(5, 0.0), nullptr);
  CHECK(z.iterations == 0);
  for (double v : z.x) CHECK(v == 0.0);
}

TEST_CASE("cg agrees with a dense solve on random spd systems") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const int n = 10 + static_cast<int>(seed % 5) * 8;
    const Eigen::MatrixXd ad = random_spd(n, seed);
    const CsrMatrix a = oracle::sparse(ad);
    const auto b = random_vec(n, 100 + seed);
    const Eigen::VectorXd exact = ad.llt().solve(oracle::vec(b));
    const double kappa = [&] {
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e(ad);
      return e.eigenvalues().maxCoeff() / e.eigenvalues().minCoeff();
    }();
    for (bool precond : {false, true}) {
      const IluPreconditioner ilu = ilu_decompose(a, 1e-3, 10);
      const CgResult r = cg_solve(a, b, precond ? &ilu : nullptr);
      CHECK(true_residual(a, r.x, b) <= 1e-2);
      CHECK(r.iterations <= n + 5);
      // ||x - x*|| / ||x*|| <= kappa * residual
      const double err = (oracle::vec(r.x) - exact).norm() / exact.norm();
      CHECK(err <= kappa * 1e-2);
    }
  }
}

TEST_CASE("reported residual is confirmed independently") {
  const CsrMatrix a = table_system();
  const auto b = random_vec(a.rows(), 5);
  const IluPreconditioner ilu = ilu_decompose(a, 1e-3, 10);
  for (double tol : {1e-2, 1e-6}) {
    CgConfig cfg;
    cfg.rel_tol = tol;
    const CgResult r = cg_solve(a, b, &ilu, cfg);
    const double res = true_residual(a, r.x, b);
    CHECK(res <= tol);
    CHECK(r.residual == doctest::Approx(res).epsilon(1e-6));
  }
}

TEST_CASE("ilu reduces iterations on the table system") {
  const CsrMatrix a = table_system();
  CHECK(a.asymmetry() < 1e-10);
  const auto b = random_vec(a.rows(), 6);
  const IluPreconditioner ilu = ilu_decompose(a, 1e-3, 10);
  CgConfig cfg;
  cfg.rel_tol = 1e-8;
  cfg.max_iter = 5000;
  const CgResult plain = cg_solve(a, b, nullptr, cfg);
  const CgResult pre = cg_solve(a, b, &ilu, cfg);
  CHECK(pre.iterations < plain.iterations);
  const CgResult plain2 = cg_solve(a, b, nullptr);
  const CgResult pre2 = cg_solve(a, b, &ilu);
  CHECK(pre2.iterations <= plain2.iterations);
}

TEST_CASE("non-convergence reports iterations and residual") {
  const Eigen::MatrixXd ad = random_spd(40, 3);
  const CsrMatrix a = oracle::sparse(ad);
  CgConfig cfg;
  cfg.rel_tol = 1e-14;
  cfg.max_iter = 2;
  try {
    cg_solve(a, random_vec(40, 4), nullptr, cfg);
    FAIL("expected non-convergence");
  } catch (const ConvergenceError& e) {
    CHECK(e.iterations() == 2);
    CHECK(e.residual() > 1e-14);
  }
}

TEST_CASE("default iteration cap") { CHECK(default_max_iter(2500) == 10 * 50 + 100); }

TEST_CASE("preconditioned solver escalates fill and stays thread-safe") {
  const CsrMatrix a = table_system();
  SolverConfig cfg;
  PreconditionedSolver solver(a, cfg);
  CHECK(solver.fill() == 10);
  const auto b = random_vec(a.rows(), 8);
  const CgResult r1 = solver.solve(b);
  const CgResult r2 = solver.solve(b);
  CHECK(r1.x == r2.x);
  CHECK(true_residual(a, r1.x, b) <= 1e-2);

  // Fill 1 stalls on this system; the doubling schedule must recover.
  SolverConfig tight;
  tight.initial_fill = 1;
  tight.max_iter = 20;
  tight.rel_tol = 1e-4;
  tight.max_doublings = 4;
  PreconditionedSolver adaptive(a, tight);
  const CgResult r3 = adaptive.solve_and_adapt(b);
  CHECK(adaptive.fill() > 1);
  CHECK(true_residual(a, r3.x, b) <= 1e-4);

  SolverConfig hopeless = tight;
  hopeless.max_iter = 1;
  hopeless.rel_tol = 1e-12;
  hopeless.max_doublings = 1;
  CHECK_THROWS_AS(PreconditionedSolver(a, hopeless).solve(b), ConvergenceError);
}
