#include "nlfem/solver.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

namespace nlfem {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double residual_norm(const CsrMatrix& A, const std::vector<double>& x, const std::vector<double>& b) {
  std::vector<double> Ax;
  A.multiply(x, Ax);
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) s += (b[i] - Ax[i]) * (b[i] - Ax[i]);
  return std::sqrt(s);
}

SolveReport dense_solve(const CsrMatrix& A, const std::vector<double>& b, double bnorm) {
  const int n = A.rows;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p) M(i, A.col[p]) = A.val[p];
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) throw SolverError("solve: matrix is not positive definite");
  Eigen::VectorXd x = llt.solve(Eigen::Map<const Eigen::VectorXd>(b.data(), n));
  SolveReport r;
  r.solution.assign(x.data(), x.data() + n);
  r.method = SolveMethod::DenseDirect;
  r.iterations = 1;
  r.relative_residual = residual_norm(A, r.solution, b) / bnorm;
  return r;
}

}  // namespace

SolveReport solve(const CsrMatrix& A, const std::vector<double>& b, const SolveOptions& opt) {
  if (!(opt.tol > 0)) throw std::invalid_argument("solve: tolerance must be positive");
  if (static_cast<int>(b.size()) != A.rows) throw std::invalid_argument("solve: dimension mismatch");
  const int n = A.rows;
  SolveReport rep;
  double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) {
    rep.solution.assign(n, 0.0);
    return rep;
  }
  if (opt.allow_dense && n <= 64) {
    rep = dense_solve(A, b, bnorm);
    if (rep.relative_residual <= opt.tol) return rep;
  }

  std::vector<double> dinv(n, 1.0);
  if (opt.jacobi)
    for (int i = 0; i < n; ++i) {
      double d = A.at(i, i);
      if (!(d > 0)) throw SolverError("solve: nonpositive diagonal entry");
      dinv[i] = 1.0 / d;
    }
  std::vector<double> x(n, 0.0), r(b), z(n), p(n), Ap;
  for (int i = 0; i < n; ++i) z[i] = dinv[i] * r[i];
  p = z;
  double rz = dot(r, z);
  rep.method = SolveMethod::CG;
  for (int it = 1; it <= opt.max_iter; ++it) {
    A.multiply(p, Ap);
    double pAp = dot(p, Ap);
    if (!(pAp > 0)) throw SolverError("solve: negative curvature direction, matrix is not positive definite");
    double alpha = rz / pAp;
    for (int i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    if (opt.observer) opt.observer(it, x);
    double rnorm = std::sqrt(dot(r, r));
    if (rnorm <= opt.tol * bnorm) {
      // Confirm with the true residual.
      double true_res = residual_norm(A, x, b);
      if (true_res <= opt.tol * bnorm) {
        rep.solution = std::move(x);
        rep.iterations = it;
        rep.relative_residual = true_res / bnorm;
        return rep;
      }
      std::vector<double> Ax;
      A.multiply(x, Ax);
      for (int i = 0; i < n; ++i) {
        r[i] = b[i] - Ax[i];
        z[i] = dinv[i] * r[i];
      }
      p = z;
      rz = dot(r, z);
      continue;
    }
    for (int i = 0; i < n; ++i) z[i] = dinv[i] * r[i];
    double rz_new = dot(r, z);
    double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw SolverError("solve: no convergence within " + std::to_string(opt.max_iter) + " iterations");
}

SolveReport solve(const LinearSystem& system, const SolveOptions& options) {
  return solve(system.matrix, system.rhs, options);
}

}  // namespace nlfem
