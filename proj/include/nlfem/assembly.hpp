#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nlfem/geometry.hpp"
#include "nlfem/mesh.hpp"

namespace nlfem {

// gamma(x, y) = psi(x, y) restricted to |x - y| <= delta.
struct Kernel {
  double delta = 0.0;
  std::function<double(Point, Point)> psi;
  bool constant_scaled = false;
  double constant_value = 0.0;

  // psi = 4 / (pi delta^4), which makes the operator reproduce the
  // Laplacian on cubic polynomials.
  static Kernel constant(double delta);
  static Kernel general(double delta, std::function<double(Point, Point)> psi);
  double operator()(Point x, Point y) const { return constant_scaled ? constant_value : psi(x, y); }
};

struct ProblemData {
  std::function<double(Point)> f;  // source on Omega
  std::function<double(Point)> g;  // volume constraint on the layer
};

struct ManufacturedCase {
  ProblemData data;
  std::function<double(Point)> u;
  Kernel kernel;
};

// u = x1^2 x2 + x2^2, f = -2 (x2 + 1), g = u.
ManufacturedCase manufactured_case(double delta = 0.1);

struct CsrMatrix {
  int rows = 0;
  std::vector<int> row_ptr{0};
  std::vector<int> col;
  std::vector<double> val;

  std::size_t nnz() const { return val.size(); }
  void multiply(const std::vector<double>& x, std::vector<double>& y) const;
  double at(int i, int j) const;
  double max_abs() const;
};

struct LinearSystem {
  CsrMatrix matrix;
  std::vector<double> rhs;
  // g at the layer nodes, indexed by node - num_interior.
  std::vector<double> constraint_values;
};

struct AssemblyOptions {
  BallStrategy strategy = BallStrategy::ExactCaps;
  int cap_triangles = 1;
  int threads = 1;  // <= 0 uses the hardware concurrency
};

LinearSystem assemble(const Mesh& mesh, const Kernel& kernel, const ProblemData& data,
                      const AssemblyOptions& options);

// Hat function of vertex v restricted to element k, evaluated at y.
double hat(const Mesh& mesh, int k, int v, Point y);

// Composite cell quadrature (Gauss3 on triangles, centroid rule on caps)
// of F(element, y) over a decomposition.
double integrate_cells(const Mesh& mesh, const BallDecomposition& d,
                       const std::function<double(int, Point)>& F);

// Inner integral of (phi_j(y) - phi_j(x)) (phi_jp(y) - phi_jp(x)) psi(x, y)
// for vertices j, jp; x lies in outer element k.
double inner_integral_pair(const Mesh& mesh, const Kernel& kernel, const BallDecomposition& d, int k,
                           Point x, int j, int jp);
// Integral of psi(x, .) over the layer cells of the decomposition.
double absorption_integral(const Mesh& mesh, const Kernel& kernel, const BallDecomposition& d, Point x);

double energy_norm_diff(const CsrMatrix& A, const std::vector<double>& u1, const std::vector<double>& u2);

// Coefficients for every node (node order) from interior values and g.
std::vector<double> full_coefficients(const Mesh& mesh, const std::vector<double>& interior,
                                      const std::vector<double>& constraint_values);

void write_matrix_market(const CsrMatrix& A, const std::string& path);
void write_vector(const std::vector<double>& v, const std::string& path);

}  // namespace nlfem
