#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace atomdet::sparse {

/// Compressed sparse row matrix with sorted column indices per row.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  CsrMatrix(int rows, int cols, std::vector<std::int64_t> row_ptr, std::vector<int> col_idx,
            std::vector<double> values);

  struct Triplet {
    int row;
    int col;
    double value;
  };
  /// Duplicate (row, col) entries are summed.
  static CsrMatrix from_triplets(int rows, int cols, std::vector<Triplet> triplets);
  static CsrMatrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::int64_t nnz() const { return static_cast<std::int64_t>(values_.size()); }

  std::span<const std::int64_t> row_ptr() const { return row_ptr_; }
  std::span<const int> col_idx() const { return col_idx_; }
  std::span<const double> values() const { return values_; }

  std::span<const int> row_cols(int row) const;
  std::span<const double> row_values(int row) const;

  /// y = A x
  void multiply(std::span<const double> x, std::span<double> y) const;
  std::vector<double> multiply(std::span<const double> x) const;

  CsrMatrix transpose() const;
  double at(int row, int col) const;
  std::vector<double> diagonal() const;

  /// scale * A + diag(d); inserts missing diagonal entries.
  CsrMatrix scaled_plus_diagonal(double scale, std::span<const double> d) const;

  /// max |A_ij - A_ji| over stored entries.
  double asymmetry() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::int64_t> row_ptr_{0};
  std::vector<int> col_idx_;
  std::vector<double> values_;
};

/// Matrix Market coordinate (real general) writer.
void write_matrix_market(std::ostream& os, const CsrMatrix& a);

class ZeroPivotError : public std::runtime_error {
 public:
  explicit ZeroPivotError(int row);
  int row() const { return row_; }

 private:
  int row_;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int iterations, double residual);
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }

 private:
  int iterations_;
  double residual_;
};

/// Crout incomplete LU factors A ~ L U, L unit lower triangular stored by
/// columns, U upper triangular stored by rows with its diagonal kept apart.
class IluPreconditioner {
 public:
  struct Entry {
    int index;
    double value;
  };

  int size() const { return static_cast<int>(diag_.size()); }
  double drop_tol() const { return drop_tol_; }
  int max_fill() const { return max_fill_; }
  std::int64_t nnz() const;

  /// Solves L U z = v.
  void apply(std::span<const double> v, std::span<double> z) const;

  std::span<const Entry> lower_column(int k) const { return lower_[k]; }
  std::span<const Entry> upper_row(int k) const { return upper_[k]; }
  double pivot(int k) const { return diag_[k]; }

 private:
  friend IluPreconditioner ilu_decompose(const CsrMatrix& a, double drop_tol, int max_fill);

  double drop_tol_ = 0.0;
  int max_fill_ = 0;
  std::vector<std::vector<Entry>> lower_;  // strictly below the diagonal, sorted by row
  std::vector<std::vector<Entry>> upper_;  // strictly right of the diagonal, sorted by column
  std::vector<double> diag_;
};

/// Crout ILU with threshold dropping: entries smaller than drop_tol times the
/// 2-norm of the matching row of A are dropped, then at most max_fill of the
/// largest survive in each row of U and each column of L. Throws
/// ZeroPivotError naming the row on a zero pivot.
IluPreconditioner ilu_decompose(const CsrMatrix& a, double drop_tol, int max_fill);

struct CgConfig {
  double rel_tol = 1e-2;
  int max_iter = 0;  // <= 0 selects 10*sqrt(n) + 100
  int true_residual_every = 25;
};

struct CgResult {
  std::vector<double> x;
  int iterations = 0;
  double residual = 0.0;  // ||Ax - b|| / ||b||
};

int default_max_iter(int n);

/// Preconditioned conjugate gradient from a zero initial guess. Stops once
/// ||Ax - b|| / ||b|| <= rel_tol, confirmed on the true residual.
CgResult cg_solve(const CsrMatrix& a, std::span<const double> b, const IluPreconditioner* precond,
                  const CgConfig& config = {});

struct SolverConfig {
  double rel_tol = 1e-2;
  int max_iter = 0;
  double drop_tol = 1e-3;
  int initial_fill = 10;
  int max_doublings = 4;
};

/// SPD system with a cached ILU preconditioner. The fill starts at
/// `initial_fill` and doubles (at most `max_doublings` times) whenever the
/// factorization hits a zero pivot or CG fails to converge.
class PreconditionedSolver {
 public:
  PreconditionedSolver(CsrMatrix a, SolverConfig config);

  /// Thread-safe; escalates the fill locally without touching the cache.
  CgResult solve(std::span<const double> b) const;

  /// Like solve(), but keeps any stronger factorization it had to build.
  CgResult solve_and_adapt(std::span<const double> b);

  const CsrMatrix& matrix() const { return a_; }
  const IluPreconditioner& preconditioner() const { return *ilu_; }
  int fill() const { return fill_; }
  const SolverConfig& config() const { return config_; }

 private:
  CgResult solve_escalating(std::span<const double> b, int start_level,
                            std::shared_ptr<const IluPreconditioner>* upgraded,
                            int* upgraded_fill) const;
  int fill_for_level(int level) const;

  CsrMatrix a_;
  SolverConfig config_;
  std::shared_ptr<const IluPreconditioner> ilu_;
  int fill_ = 0;
  int level_ = 0;
};

double norm2(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace atomdet::sparse
