#pragma once

// Minimal sparse/dense linear algebra: CSR assembly from triplets, spmv,
// a reusable direct factorization for the symmetric indefinite step and
// saddle matrices, dense Cholesky, and preconditioned MINRES.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

namespace stokesoc {

struct Triplet {
  int row;
  int col;
  double value;
};

struct CsrMatrix {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<int> row_offsets; // size n_rows + 1
  std::vector<int> col_indices;
  std::vector<double> values;

  int nnz() const { return static_cast<int>(values.size()); }
};

inline CsrMatrix assemble_csr(int n_rows, int n_cols, std::vector<Triplet> triplets) {
  for (const auto& t : triplets) {
    if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols)
      throw std::out_of_range("assemble_csr: triplet index (" + std::to_string(t.row) + "," +
                              std::to_string(t.col) + ") out of range");
  }
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  CsrMatrix m;
  m.n_rows = n_rows;
  m.n_cols = n_cols;
  m.row_offsets.assign(n_rows + 1, 0);
  m.col_indices.reserve(triplets.size());
  m.values.reserve(triplets.size());
  std::size_t i = 0;
  for (int r = 0; r < n_rows; ++r) {
    while (i < triplets.size() && triplets[i].row == r) {
      const int c = triplets[i].col;
      double v = 0.0;
      while (i < triplets.size() && triplets[i].row == r && triplets[i].col == c) {
        v += triplets[i].value;
        ++i;
      }
      m.col_indices.push_back(c);
      m.values.push_back(v);
    }
    m.row_offsets[r + 1] = static_cast<int>(m.values.size());
  }
  return m;
}

inline void spmv(const CsrMatrix& a, const double* x, double* y) {
  for (int r = 0; r < a.n_rows; ++r) {
    double acc = 0.0;
    for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k)
      acc += a.values[k] * x[a.col_indices[k]];
    y[r] = acc;
  }
}

inline std::vector<double> spmv(const CsrMatrix& a, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != a.n_cols)
    throw std::invalid_argument("spmv: dimension mismatch");
  std::vector<double> y(a.n_rows);
  spmv(a, x.data(), y.data());
  return y;
}

// y += alpha * A x
inline void spmv_add(const CsrMatrix& a, double alpha, const double* x, double* y) {
  for (int r = 0; r < a.n_rows; ++r) {
    double acc = 0.0;
    for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k)
      acc += a.values[k] * x[a.col_indices[k]];
    y[r] += alpha * acc;
  }
}

inline CsrMatrix csr_transpose(const CsrMatrix& a) {
  std::vector<Triplet> trips;
  trips.reserve(a.values.size());
  for (int r = 0; r < a.n_rows; ++r)
    for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k)
      trips.push_back({a.col_indices[k], r, a.values[k]});
  return assemble_csr(a.n_cols, a.n_rows, std::move(trips));
}

inline double max_asymmetry(const CsrMatrix& a) {
  if (a.n_rows != a.n_cols) return std::numeric_limits<double>::infinity();
  const CsrMatrix at = csr_transpose(a);
  double worst = 0.0;
  for (int r = 0; r < a.n_rows; ++r) {
    int ka = a.row_offsets[r], kt = at.row_offsets[r];
    const int ea = a.row_offsets[r + 1], et = at.row_offsets[r + 1];
    while (ka < ea || kt < et) {
      const int ca = ka < ea ? a.col_indices[ka] : a.n_cols;
      const int ct = kt < et ? at.col_indices[kt] : a.n_cols;
      if (ca == ct) {
        worst = std::max(worst, std::abs(a.values[ka] - at.values[kt]));
        ++ka;
        ++kt;
      } else if (ca < ct) {
        worst = std::max(worst, std::abs(a.values[ka]));
        ++ka;
      } else {
        worst = std::max(worst, std::abs(at.values[kt]));
        ++kt;
      }
    }
  }
  return worst;
}

inline void write_matrix_market(const CsrMatrix& a, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_matrix_market: cannot open " + path);
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << a.n_rows << " " << a.n_cols << " " << a.nnz() << "\n";
  out.precision(17);
  for (int r = 0; r < a.n_rows; ++r)
    for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k)
      out << r + 1 << " " << a.col_indices[k] + 1 << " " << a.values[k] << "\n";
}

// Reusable direct factorization of a square, numerically symmetric (possibly
// indefinite) sparse matrix. Backed by a supernodal LU with fill-reducing
// column ordering; one factorization serves every dG(0) step of a sweep.
class Factorization {
 public:
  Factorization() = default;

  explicit Factorization(const CsrMatrix& a, double symmetry_tol = 1e-12) {
    if (a.n_rows != a.n_cols) throw std::invalid_argument("Factorization: matrix not square");
    double scale = 0.0;
    for (double v : a.values) scale = std::max(scale, std::abs(v));
    const double asym = max_asymmetry(a);
    if (asym > symmetry_tol * std::max(1.0, scale))
      throw std::invalid_argument("Factorization: matrix not symmetric (max asymmetry " +
                                  std::to_string(asym) + ")");
    n_ = a.n_rows;
    Eigen::SparseMatrix<double> m(n_, n_);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(a.values.size());
    for (int r = 0; r < a.n_rows; ++r)
      for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k)
        trips.emplace_back(r, a.col_indices[k], a.values[k]);
    m.setFromTriplets(trips.begin(), trips.end());
    m.makeCompressed();
    lu_ = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    lu_->compute(m);
    if (lu_->info() != Eigen::Success)
      throw std::runtime_error("Factorization: singular matrix (" + lu_->lastErrorMessage() + ")");
  }

  int size() const { return n_; }
  bool valid() const { return static_cast<bool>(lu_); }

  void solve(const double* b, double* x) const {
    Eigen::Map<const Eigen::VectorXd> bm(b, n_);
    Eigen::Map<Eigen::VectorXd> xm(x, n_);
    xm = lu_->solve(bm);
  }

  std::vector<double> solve(const std::vector<double>& b) const {
    if (static_cast<int>(b.size()) != n_)
      throw std::invalid_argument("Factorization::solve: dimension mismatch");
    std::vector<double> x(n_);
    solve(b.data(), x.data());
    return x;
  }

 private:
  int n_ = 0;
  std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
};

inline Factorization factorize(const CsrMatrix& a) { return Factorization(a); }

inline std::vector<double> solve_factored(const Factorization& f, const std::vector<double>& b) {
  return f.solve(b);
}

struct DenseMatrix {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<double> values; // row-major

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : n_rows(r), n_cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * n_cols + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n_cols + j]; }
};

class DenseCholesky {
 public:
  DenseCholesky() = default;

  explicit DenseCholesky(const DenseMatrix& s) {
    if (s.n_rows != s.n_cols) throw std::invalid_argument("dense_cholesky: matrix not square");
    n_ = s.n_rows;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        s.values.data(), n_, n_);
    llt_.compute(m);
    if (llt_.info() != Eigen::Success)
      throw std::runtime_error("dense_cholesky: matrix is not SPD");
  }

  int size() const { return n_; }

  void solve(const double* b, double* x) const {
    Eigen::Map<const Eigen::VectorXd> bm(b, n_);
    Eigen::Map<Eigen::VectorXd> xm(x, n_);
    xm = llt_.solve(bm);
  }

  std::vector<double> solve(const std::vector<double>& b) const {
    if (static_cast<int>(b.size()) != n_)
      throw std::invalid_argument("DenseCholesky::solve: dimension mismatch");
    std::vector<double> x(n_);
    solve(b.data(), x.data());
    return x;
  }

 private:
  int n_ = 0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline DenseCholesky dense_cholesky(const DenseMatrix& s) { return DenseCholesky(s); }

inline std::vector<double> dense_solve(const DenseCholesky& f, const std::vector<double>& b) {
  return f.solve(b);
}

using ApplyOp = std::function<void(const double* x, double* y)>;

struct MinresResult {
  std::vector<double> x;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void check_operator_symmetry(std::size_t n, const ApplyOp& apply_a, double tol) {
  std::mt19937_64 rng(0x5eedu);
  std::normal_distribution<double> dist;
  std::vector<double> u(n), v(n), au(n), av(n);
  for (int trial = 0; trial < 2; ++trial) {
    for (auto& x : u) x = dist(rng);
    for (auto& x : v) x = dist(rng);
    apply_a(u.data(), au.data());
    apply_a(v.data(), av.data());
    const double lhs = dot(au, v);
    const double rhs = dot(av, u);
    const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-300});
    if (std::abs(lhs - rhs) > tol * scale)
      throw std::runtime_error("minres: operator fails the symmetry check (|<Au,v>-<u,Av>| = " +
                               std::to_string(std::abs(lhs - rhs)) + ")");
  }
}

} // namespace detail

// Preconditioned MINRES (Paige-Saunders recurrences). apply_pinv must be
// symmetric positive definite; convergence is measured in the preconditioned
// residual norm relative to the initial one.
inline MinresResult minres(std::size_t n, const ApplyOp& apply_a, const ApplyOp& apply_pinv,
                           const std::vector<double>& b, double rel_tol, int max_iter,
                           const std::vector<double>* x0 = nullptr, bool check_symmetry = false) {
  if (b.size() != n) throw std::invalid_argument("minres: rhs dimension mismatch");
  if (check_symmetry) detail::check_operator_symmetry(n, apply_a, 1e-10);

  MinresResult res;
  res.x.assign(n, 0.0);
  if (x0) {
    if (x0->size() != n) throw std::invalid_argument("minres: x0 dimension mismatch");
    res.x = *x0;
  }

  std::vector<double> r1(n), r2(n), y(n), v(n), w(n, 0.0), w_prev(n, 0.0);
  apply_a(res.x.data(), r1.data());
  for (std::size_t i = 0; i < n; ++i) r1[i] = b[i] - r1[i];
  apply_pinv(r1.data(), y.data());
  double beta1 = detail::dot(r1, y);
  if (beta1 < 0.0) throw std::runtime_error("minres: preconditioner is not positive definite");
  beta1 = std::sqrt(beta1);
  if (beta1 == 0.0) {
    res.converged = true;
    return res;
  }

  double oldb = 0.0, beta = beta1, dbar = 0.0, epsln = 0.0, phibar = beta1;
  double cs = -1.0, sn = 0.0, oldeps = 0.0;
  r2 = r1;

  for (int iter = 1; iter <= max_iter; ++iter) {
    const double s = 1.0 / beta;
    for (std::size_t i = 0; i < n; ++i) v[i] = s * y[i];
    apply_a(v.data(), y.data());
    if (iter >= 2)
      for (std::size_t i = 0; i < n; ++i) y[i] -= (beta / oldb) * r1[i];
    const double alfa = detail::dot(v, y);
    for (std::size_t i = 0; i < n; ++i) y[i] -= (alfa / beta) * r2[i];
    r1 = r2;
    r2 = y;
    apply_pinv(r2.data(), y.data());
    oldb = beta;
    double beta_sq = detail::dot(r2, y);
    if (beta_sq < 0.0) throw std::runtime_error("minres: preconditioner is not positive definite");
    beta = std::sqrt(beta_sq);

    oldeps = epsln;
    const double delta = cs * dbar + sn * alfa;
    const double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    double gamma = std::hypot(gbar, beta);
    if (gamma == 0.0) throw std::runtime_error("minres: breakdown (zero pivot in QR recurrence)");
    cs = gbar / gamma;
    sn = beta / gamma;
    const double phi = cs * phibar;
    phibar = sn * phibar;

    for (std::size_t i = 0; i < n; ++i) {
      const double wi = (v[i] - oldeps * w_prev[i] - delta * w[i]) / gamma;
      w_prev[i] = w[i];
      w[i] = wi;
      res.x[i] += phi * wi;
    }

    res.iterations = iter;
    res.relative_residual = phibar / beta1;
    if (res.relative_residual <= rel_tol) {
      res.converged = true;
      return res;
    }
    if (beta <= 1e-300) { // exact subspace solution reached
      res.converged = res.relative_residual <= std::max(rel_tol, 1e-12);
      return res;
    }
  }
  return res;
}

} // namespace stokesoc
