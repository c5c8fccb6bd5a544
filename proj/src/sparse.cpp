#include "atomdet/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace atomdet::sparse {

CsrMatrix::CsrMatrix(int rows, int cols, std::vector<std::int64_t> row_ptr, std::vector<int> col_idx,
                     std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("negative matrix dimension");
  if (row_ptr_.size() != static_cast<std::size_t>(rows) + 1 || row_ptr_.front() != 0 ||
      row_ptr_.back() != static_cast<std::int64_t>(col_idx_.size()) ||
      col_idx_.size() != values_.size()) {
    throw std::invalid_argument("inconsistent CSR arrays");
  }
  for (int r = 0; r < rows; ++r) {
    for (auto p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) {
      if (col_idx_[p] < 0 || col_idx_[p] >= cols) throw std::invalid_argument("CSR column out of range");
      if (p > row_ptr_[r] && col_idx_[p] <= col_idx_[p - 1]) {
        throw std::invalid_argument("CSR columns must be strictly increasing within a row");
      }
    }
  }
}

CsrMatrix CsrMatrix::from_triplets(int rows, int cols, std::vector<Triplet> triplets) {
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::vector<std::int64_t> row_ptr(rows + 1, 0);
  std::vector<int> col_idx;
  std::vector<double> values;
  col_idx.reserve(triplets.size());
  values.reserve(triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const Triplet& t = triplets[i];
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
      throw std::invalid_argument("triplet index out of range");
    }
    if (i > 0 && t.row == triplets[i - 1].row && t.col == triplets[i - 1].col) {
      values.back() += t.value;
      continue;
    }
    col_idx.push_back(t.col);
    values.push_back(t.value);
    ++row_ptr[t.row + 1];
  }
  for (int r = 0; r < rows; ++r) row_ptr[r + 1] += row_ptr[r];
  return CsrMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
}

CsrMatrix CsrMatrix::identity(int n) {
  std::vector<std::int64_t> row_ptr(n + 1);
  std::vector<int> col_idx(n);
  for (int i = 0; i <= n; ++i) row_ptr[i] = i;
  for (int i = 0; i < n; ++i) col_idx[i] = i;
  return CsrMatrix(n, n, std::move(row_ptr), std::move(col_idx), std::vector<double>(n, 1.0));
}

std::span<const int> CsrMatrix::row_cols(int row) const {
  return std::span<const int>(col_idx_).subspan(row_ptr_[row], row_ptr_[row + 1] - row_ptr_[row]);
}

std::span<const double> CsrMatrix::row_values(int row) const {
  return std::span<const double>(values_).subspan(row_ptr_[row], row_ptr_[row + 1] - row_ptr_[row]);
}

void CsrMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != static_cast<std::size_t>(cols_) || y.size() != static_cast<std::size_t>(rows_)) {
    throw std::invalid_argument("matrix-vector dimension mismatch");
  }
  const int* ci = col_idx_.data();
  const double* v = values_.data();
  for (int r = 0; r < rows_; ++r) {
    double s = 0.0;
    for (auto p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) s += v[p] * x[ci[p]];
    y[r] = s;
  }
}

std::vector<double> CsrMatrix::multiply(std::span<const double> x) const {
  std::vector<double> y(rows_);
  multiply(x, y);
  return y;
}

CsrMatrix CsrMatrix::transpose() const {
  std::vector<std::int64_t> row_ptr(cols_ + 1, 0);
  for (int c : col_idx_) ++row_ptr[c + 1];
  for (int c = 0; c < cols_; ++c) row_ptr[c + 1] += row_ptr[c];
  std::vector<std::int64_t> cursor(row_ptr.begin(), row_ptr.end() - 1);
  std::vector<int> col_idx(col_idx_.size());
  std::vector<double> values(values_.size());
  for (int r = 0; r < rows_; ++r) {
    for (auto p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) {
      const auto dst = cursor[col_idx_[p]]++;
      col_idx[dst] = r;
      values[dst] = values_[p];
    }
  }
  return CsrMatrix(cols_, rows_, std::move(row_ptr), std::move(col_idx), std::move(values));
}

double CsrMatrix::at(int row, int col) const {
  const auto cols = row_cols(row);
  const auto it = std::lower_bound(cols.begin(), cols.end(), col);
  if (it == cols.end() || *it != col) return 0.0;
  return values_[row_ptr_[row] + (it - cols.begin())];
}

std::vector<double> CsrMatrix::diagonal() const {
  std::vector<double> d(std::min(rows_, cols_));
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = at(static_cast<int>(i), static_cast<int>(i));
  return d;
}

CsrMatrix CsrMatrix::scaled_plus_diagonal(double scale, std::span<const double> d) const {
  if (rows_ != cols_ || d.size() != static_cast<std::size_t>(rows_)) {
    throw std::invalid_argument("diagonal shift needs a square matrix and a matching vector");
  }
  std::vector<std::int64_t> row_ptr(rows_ + 1, 0);
  std::vector<int> col_idx;
  std::vector<double> values;
  col_idx.reserve(col_idx_.size() + rows_);
  values.reserve(values_.size() + rows_);
  for (int r = 0; r < rows_; ++r) {
    bool placed = false;
    for (auto p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) {
      const int c = col_idx_[p];
      if (!placed && c >= r) {
        if (c == r) {
          col_idx.push_back(c);
          values.push_back(scale * values_[p] + d[r]);
          placed = true;
          continue;
        }
        col_idx.push_back(r);
        values.push_back(d[r]);
        placed = true;
      }
      col_idx.push_back(c);
      values.push_back(scale * values_[p]);
    }
    if (!placed) {
      col_idx.push_back(r);
      values.push_back(d[r]);
    }
    row_ptr[r + 1] = static_cast<std::int64_t>(col_idx.size());
  }
  return CsrMatrix(rows_, cols_, std::move(row_ptr), std::move(col_idx), std::move(values));
}

double CsrMatrix::asymmetry() const {
  double worst = 0.0;
  for (int r = 0; r < rows_; ++r) {
    for (auto p = row_ptr_[r]; p < row_ptr_[r + 1]; ++p) {
      const int c = col_idx_[p];
      const double other = c < rows_ && r < cols_ ? at(c, r) : 0.0;
      worst = std::max(worst, std::abs(values_[p] - other));
    }
  }
  return worst;
}

void write_matrix_market(std::ostream& os, const CsrMatrix& a) {
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << a.rows() << ' ' << a.cols() << ' ' << a.nnz() << '\n';
  os << std::setprecision(17);
  for (int r = 0; r < a.rows(); ++r) {
    const auto cols = a.row_cols(r);
    const auto vals = a.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      os << r + 1 << ' ' << cols[k] + 1 << ' ' << vals[k] << '\n';
    }
  }
}

ZeroPivotError::ZeroPivotError(int row)
    : std::runtime_error("incomplete LU hit a zero pivot at row " + std::to_string(row)), row_(row) {}

ConvergenceError::ConvergenceError(const std::string& what, int iterations, double residual)
    : std::runtime_error(what), iterations_(iterations), residual_(residual) {}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::int64_t IluPreconditioner::nnz() const {
  std::int64_t total = size();
  for (const auto& c : lower_) total += static_cast<std::int64_t>(c.size());
  for (const auto& r : upper_) total += static_cast<std::int64_t>(r.size());
  return total;
}

void IluPreconditioner::apply(std::span<const double> v, std::span<double> z) const {
  const int n = size();
  if (v.size() != static_cast<std::size_t>(n) || z.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("preconditioner dimension mismatch");
  }
  std::copy(v.begin(), v.end(), z.begin());
  for (int k = 0; k < n; ++k) {
    const double zk = z[k];
    if (zk == 0.0) continue;
    for (const Entry& e : lower_[k]) z[e.index] -= e.value * zk;
  }
  for (int k = n - 1; k >= 0; --k) {
    double s = z[k];
    for (const Entry& e : upper_[k]) s -= e.value * z[e.index];
    z[k] = s / diag_[k];
  }
}

namespace {

using Entry = IluPreconditioner::Entry;

/// Sparse accumulator over a dense work array, reset lazily via stamps.
struct Accumulator {
  std::vector<double> value;
  std::vector<int> stamp;
  std::vector<int> touched;

  explicit Accumulator(int n) : value(n, 0.0), stamp(n, -1) {}

  void reset() { touched.clear(); }
  void add(int idx, double v, int step) {
    if (stamp[idx] != step) {
      stamp[idx] = step;
      value[idx] = v;
      touched.push_back(idx);
    } else {
      value[idx] += v;
    }
  }
};

std::vector<Entry> select_entries(const Accumulator& acc, int k, double threshold, int max_fill) {
  std::vector<Entry> kept;
  for (int idx : acc.touched) {
    if (idx <= k) continue;
    const double v = acc.value[idx];
    if (v != 0.0 && std::abs(v) >= threshold) kept.push_back({idx, v});
  }
  if (static_cast<int>(kept.size()) > max_fill) {
    const auto larger = [](const Entry& a, const Entry& b) {
      const double ma = std::abs(a.value), mb = std::abs(b.value);
      return ma != mb ? ma > mb : a.index < b.index;
    };
    std::partial_sort(kept.begin(), kept.begin() + max_fill, kept.end(), larger);
    kept.resize(max_fill);
  }
  std::sort(kept.begin(), kept.end(), [](const Entry& a, const Entry& b) { return a.index < b.index; });
  return kept;
}

}  // namespace

IluPreconditioner ilu_decompose(const CsrMatrix& a, double drop_tol, int max_fill) {
  if (a.rows() != a.cols()) throw std::invalid_argument("incomplete LU needs a square matrix");
  if (!(drop_tol >= 0.0) || max_fill < 0) throw std::invalid_argument("invalid ILU parameters");
  const int n = a.rows();
  const CsrMatrix at = a.transpose();

  IluPreconditioner f;
  f.drop_tol_ = drop_tol;
  f.max_fill_ = max_fill;
  f.lower_.resize(n);
  f.upper_.resize(n);
  f.diag_.assign(n, 0.0);

  std::vector<double> row_norm(n), col_norm(n);
  for (int k = 0; k < n; ++k) {
    row_norm[k] = norm2(a.row_values(k));
    col_norm[k] = norm2(at.row_values(k));
  }

  // Column i of L (row i of U) is linked into the list of the next row
  // (column) at which it has an entry, which gives row access to L and
  // column access to U during the Crout sweep.
  std::vector<std::size_t> l_first(n, 0), u_first(n, 0);
  std::vector<int> l_head(n, -1), l_next(n, -1), u_head(n, -1), u_next(n, -1);
  Accumulator z(n), w(n);

  for (int k = 0; k < n; ++k) {
    z.reset();
    w.reset();
    {
      const auto cols = a.row_cols(k);
      const auto vals = a.row_values(k);
      for (std::size_t p = 0; p < cols.size(); ++p) {
        if (cols[p] >= k) z.add(cols[p], vals[p], k);
      }
      z.add(k, 0.0, k);
      const auto rows = at.row_cols(k);
      const auto cvals = at.row_values(k);
      for (std::size_t p = 0; p < rows.size(); ++p) {
        if (rows[p] > k) w.add(rows[p], cvals[p], k);
      }
    }
    for (int i = l_head[k]; i != -1; i = l_next[i]) {
      const double lki = f.lower_[i][l_first[i]].value;
      const auto& urow = f.upper_[i];
      for (std::size_t q = u_first[i]; q < urow.size(); ++q) z.add(urow[q].index, -lki * urow[q].value, k);
    }
    for (int i = u_head[k]; i != -1; i = u_next[i]) {
      const double uik = f.upper_[i][u_first[i]].value;
      const auto& lcol = f.lower_[i];
      for (std::size_t q = l_first[i]; q < lcol.size(); ++q) {
        if (lcol[q].index > k) w.add(lcol[q].index, -uik * lcol[q].value, k);
      }
    }
    for (int i = l_head[k]; i != -1;) {
      const int next = l_next[i];
      if (++l_first[i] < f.lower_[i].size()) {
        const int r = f.lower_[i][l_first[i]].index;
        l_next[i] = l_head[r];
        l_head[r] = i;
      }
      i = next;
    }
    for (int i = u_head[k]; i != -1;) {
      const int next = u_next[i];
      if (++u_first[i] < f.upper_[i].size()) {
        const int c = f.upper_[i][u_first[i]].index;
        u_next[i] = u_head[c];
        u_head[c] = i;
      }
      i = next;
    }

    const double pivot = z.value[k];
    if (!std::isfinite(pivot) || std::abs(pivot) <= 1e-14 * std::max(row_norm[k], 1e-300)) {
      throw ZeroPivotError(k);
    }
    f.diag_[k] = pivot;
    f.upper_[k] = select_entries(z, k, drop_tol * row_norm[k], max_fill);
    f.lower_[k] = select_entries(w, k, drop_tol * col_norm[k], max_fill);
    for (Entry& e : f.lower_[k]) e.value /= pivot;

    if (!f.upper_[k].empty()) {
      const int c = f.upper_[k].front().index;
      u_next[k] = u_head[c];
      u_head[c] = k;
    }
    if (!f.lower_[k].empty()) {
      const int r = f.lower_[k].front().index;
      l_next[k] = l_head[r];
      l_head[r] = k;
    }
  }
  return f;
}

int default_max_iter(int n) {
  return static_cast<int>(10.0 * std::sqrt(static_cast<double>(n))) + 100;
}

CgResult cg_solve(const CsrMatrix& a, std::span<const double> b, const IluPreconditioner* precond,
                  const CgConfig& config) {
  const int n = a.rows();
  if (a.cols() != n || b.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("CG dimension mismatch");
  }
  if (precond && precond->size() != n) throw std::invalid_argument("preconditioner dimension mismatch");
  if (!(config.rel_tol > 0.0)) throw std::invalid_argument("CG tolerance must be positive");
  for (double v : b) {
    if (!std::isfinite(v)) throw std::invalid_argument("CG right-hand side is not finite");
  }

  CgResult out;
  out.x.assign(n, 0.0);
  const double bnorm = norm2(b);
  if (bnorm == 0.0) return out;

  const int max_iter = config.max_iter > 0 ? config.max_iter : default_max_iter(n);
  const int every = std::max(1, config.true_residual_every);

  std::vector<double> r(b.begin(), b.end()), z(n), p(n), q(n);
  auto precondition = [&] {
    if (precond) {
      precond->apply(r, z);
    } else {
      z = r;
    }
  };
  auto true_residual = [&] {
    a.multiply(out.x, q);
    for (int i = 0; i < n; ++i) r[i] = b[i] - q[i];
    return norm2(r) / bnorm;
  };

  precondition();
  p = z;
  double rz = dot(r, z);
  double rel = 1.0;
  for (int it = 1; it <= max_iter; ++it) {
    a.multiply(p, q);
    const double pq = dot(p, q);
    if (!(pq > 0.0) || !std::isfinite(pq)) {
      throw ConvergenceError("CG breakdown: search direction has non-positive curvature", it, rel);
    }
    const double alpha = rz / pq;
    for (int i = 0; i < n; ++i) {
      out.x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    rel = (it % every == 0) ? true_residual() : norm2(r) / bnorm;
    if (!std::isfinite(rel)) throw ConvergenceError("CG produced non-finite iterates", it, rel);
    if (rel <= config.rel_tol) {
      rel = true_residual();
      if (rel <= config.rel_tol) {
        out.iterations = it;
        out.residual = rel;
        return out;
      }
    }
    precondition();
    const double rz_next = dot(r, z);
    const double beta = rz_next / rz;
    rz = rz_next;
    for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  std::ostringstream msg;
  msg << "CG did not converge in " << max_iter << " iterations (relative residual " << rel << ")";
  throw ConvergenceError(msg.str(), max_iter, rel);
}

PreconditionedSolver::PreconditionedSolver(CsrMatrix a, SolverConfig config)
    : a_(std::move(a)), config_(config) {
  if (a_.rows() != a_.cols()) throw std::invalid_argument("solver needs a square matrix");
  for (int level = 0;; ++level) {
    try {
      ilu_ = std::make_shared<IluPreconditioner>(ilu_decompose(a_, config_.drop_tol, fill_for_level(level)));
      level_ = level;
      fill_ = fill_for_level(level);
      return;
    } catch (const ZeroPivotError&) {
      if (level >= config_.max_doublings) throw;
    }
  }
}

int PreconditionedSolver::fill_for_level(int level) const { return config_.initial_fill << level; }

CgResult PreconditionedSolver::solve_escalating(std::span<const double> b, int start_level,
                                                std::shared_ptr<const IluPreconditioner>* upgraded,
                                                int* upgraded_fill) const {
  const CgConfig cg{config_.rel_tol, config_.max_iter, 25};
  try {
    return cg_solve(a_, b, ilu_.get(), cg);
  } catch (const ConvergenceError& first) {
    int iterations = first.iterations();
    double residual = first.residual();
    for (int level = start_level + 1; level <= config_.max_doublings; ++level) {
      std::shared_ptr<const IluPreconditioner> stronger;
      try {
        stronger = std::make_shared<IluPreconditioner>(
            ilu_decompose(a_, config_.drop_tol, fill_for_level(level)));
      } catch (const ZeroPivotError&) {
        continue;
      }
      try {
        CgResult res = cg_solve(a_, b, stronger.get(), cg);
        if (upgraded) *upgraded = stronger;
        if (upgraded_fill) *upgraded_fill = level;
        return res;
      } catch (const ConvergenceError& e) {
        iterations = e.iterations();
        residual = e.residual();
      }
    }
    std::ostringstream msg;
    msg << "preconditioned CG failed up to ILU fill " << fill_for_level(config_.max_doublings)
        << " (relative residual " << residual << ")";
    throw ConvergenceError(msg.str(), iterations, residual);
  }
}

CgResult PreconditionedSolver::solve(std::span<const double> b) const {
  return solve_escalating(b, level_, nullptr, nullptr);
}

CgResult PreconditionedSolver::solve_and_adapt(std::span<const double> b) {
  std::shared_ptr<const IluPreconditioner> upgraded;
  int level = level_;
  CgResult res = solve_escalating(b, level_, &upgraded, &level);
  if (upgraded) {
    ilu_ = std::move(upgraded);
    level_ = level;
    fill_ = fill_for_level(level);
  }
  return res;
}

}  // namespace atomdet::sparse
