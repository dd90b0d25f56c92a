#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "nlfem/assembly.hpp"

namespace nlfem {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SolveMethod { CG, DenseDirect };

struct SolveOptions {
  double tol = 1e-12;
  int max_iter = 20000;
  bool jacobi = false;
  bool allow_dense = true;  // dense Cholesky when the system has <= 64 unknowns
  // Called with (iteration, iterate) after every CG update.
  std::function<void(int, const std::vector<double>&)> observer;
};

struct SolveReport {
  std::vector<double> solution;
  int iterations = 0;
  double relative_residual = 0.0;
  SolveMethod method = SolveMethod::CG;
};

SolveReport solve(const CsrMatrix& A, const std::vector<double>& b, const SolveOptions& options = {});
SolveReport solve(const LinearSystem& system, const SolveOptions& options = {});

}  // namespace nlfem
