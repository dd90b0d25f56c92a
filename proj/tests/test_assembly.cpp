#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "nlfem/assembly.hpp"
#include "nlfem/mesh.hpp"
#include "nlfem/solver.hpp"

using namespace nlfem;

namespace {

constexpr double kPi = std::numbers::pi;

const BallStrategy kStrategies[] = {BallStrategy::ExactCaps,        BallStrategy::NoCaps,
                                    BallStrategy::ApproxCaps,       BallStrategy::Barycenter,
                                    BallStrategy::Overlap,          BallStrategy::Shifted,
                                    BallStrategy::BarycenterNoCaps, BallStrategy::BarycenterApproxCaps,
                                    BallStrategy::ShiftedNoCaps};

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5)), p0 = 1, p1 = z, dp = 1;
    for (int it = 0; it < 100; ++it) {
      p0 = 1;
      p1 = z;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = 0.5 * (1 - z);
    w[i] = 1.0 / ((1 - z * z) * dp * dp);
  }
}

// Integral of F(element, y) over B(x, delta), where F(k, .) is a
// polynomial of degree <= 3 on each element. Divergence theorem on each
// element-disk intersection: with H(y) = int_{x1}^{y1} F(k, (s, y2)) ds the
// integral is the counterclockwise boundary integral of H dy2, taken along
// the clipped edges and along the arcs of the circle inside the element.
double green_oracle(const Mesh& mesh, Point x, double delta, const std::function<double(int, Point)>& F) {
  static std::vector<double> gs, ws, gb, wb;
  if (gs.empty()) {
    gauss_legendre(4, gs, ws);
    gauss_legendre(32, gb, wb);
  }
  double total = 0.0;
  for (int k = 0; k < static_cast<int>(mesh.elements.size()); ++k) {
    if (dist(mesh.barycenters[k], x) > delta + mesh.h_max) continue;
    Triangle t = mesh.triangle(k);
    auto H = [&](Point y) {
      double s = 0.0, len = y.x - x.x;
      for (std::size_t i = 0; i < gs.size(); ++i) s += ws[i] * F(k, {x.x + len * gs[i], y.y});
      return len * s;
    };
    auto inside = [&](Point y) {
      for (int e = 0; e < 3; ++e)
        if (cross(t[(e + 1) % 3] - t[e], y - t[e]) < 0) return false;
      return true;
    };
    std::vector<double> angles;
    for (int e = 0; e < 3; ++e) {
      Point p = t[e], d = t[(e + 1) % 3] - t[e], f = p - x;
      double qa = dot(d, d), qb = 2 * dot(f, d), qc = dot(f, f) - delta * delta;
      double disc = qb * qb - 4 * qa * qc;
      if (disc <= 0) continue;
      double r0 = (-qb - std::sqrt(disc)) / (2 * qa), r1 = (-qb + std::sqrt(disc)) / (2 * qa);
      double lo = std::max(r0, 0.0), hi = std::min(r1, 1.0);
      if (hi > lo)
        for (std::size_t i = 0; i < gb.size(); ++i)
          total += (hi - lo) * wb[i] * H(p + (lo + (hi - lo) * gb[i]) * d) * d.y;
      for (double r : {r0, r1})
        if (r > 0 && r < 1) {
          Point c = p + r * d - x;
          angles.push_back(std::atan2(c.y, c.x));
        }
    }
    std::sort(angles.begin(), angles.end());
    if (angles.empty()) angles.push_back(0.0);
    for (std::size_t s = 0; s < angles.size(); ++s) {
      double a0 = angles[s], a1 = s + 1 < angles.size() ? angles[s + 1] : angles[0] + 2 * kPi;
      double am = 0.5 * (a0 + a1);
      if (!inside(x + delta * Point{std::cos(am), std::sin(am)})) continue;
      for (std::size_t i = 0; i < gb.size(); ++i) {
        double th = a0 + (a1 - a0) * gb[i];
        total += (a1 - a0) * wb[i] * H(x + delta * Point{std::cos(th), std::sin(th)}) * delta * std::cos(th);
      }
    }
  }
  return total;
}

// Value at y of the piecewise-linear function with nodal values c.
double eval_fe(const Mesh& mesh, const std::vector<double>& c, Point y) {
  int k = locate_element(mesh, y);
  double s = 0;
  for (int v : mesh.elements[k].v) s += c[mesh.node_of_vertex[v]] * hat(mesh, k, v, y);
  return s;
}

bool bitwise_equal(const CsrMatrix& a, const CsrMatrix& b) {
  return a.rows == b.rows && a.row_ptr == b.row_ptr && a.col == b.col &&
         std::memcmp(a.val.data(), b.val.data(), a.val.size() * sizeof(double)) == 0 && a.val.size() == b.val.size();
}

}  // namespace

TEST(Assembly, KernelAndManufacturedCase) {
  Kernel k = Kernel::constant(0.1);
  EXPECT_DOUBLE_EQ(k({0, 0}, {0.05, 0}), 4.0 / (kPi * 1e-4));
  ManufacturedCase mc = manufactured_case(0.1);
  EXPECT_DOUBLE_EQ(mc.u({0.5, 0.5}), 0.375);
  EXPECT_DOUBLE_EQ(mc.data.f({0.3, 0.7}), -3.4);
  EXPECT_DOUBLE_EQ(mc.data.g({-0.05, 0.5}), mc.u({-0.05, 0.5}));
  // -Laplacian of u matches f: second differences are exact for this cubic.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0.1, 0.9);
  for (int i = 0; i < 20; ++i) {
    Point p{U(rng), U(rng)};
    double h = 1e-2;
    double lap = (mc.u(p + Point{h, 0}) + mc.u(p - Point{h, 0}) + mc.u(p + Point{0, h}) + mc.u(p - Point{0, h}) -
                  4 * mc.u(p)) /
                 (h * h);
    EXPECT_NEAR(-lap, mc.data.f(p), 1e-9);
  }
  // Scaling: 2 psi int_B (y1 - x1)^2 dy = 2, the Laplacian of x1^2.
  EXPECT_NEAR(2 * k.constant_value * kPi * std::pow(0.1, 4) / 4, 2.0, 1e-14);
  Kernel g = Kernel::general(0.1, [](Point, Point) { return 3.0; });
  EXPECT_FALSE(g.constant_scaled);
  EXPECT_EQ(g({0, 0}, {1, 1}), 3.0);
}

TEST(Assembly, HatFunctions) {
  Mesh m = build_squared_grid(10, 0.1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    Point y{U(rng), U(rng)};
    int k = locate_element(m, y);
    double s = 0;
    for (int v : m.elements[k].v) {
      double h = hat(m, k, v, y);
      EXPECT_GE(h, -1e-12);
      s += h;
    }
    EXPECT_NEAR(s, 1.0, 1e-13);
  }
  const auto& e = m.elements[17].v;
  EXPECT_NEAR(hat(m, 17, e[0], m.vertices[e[0]]), 1.0, 1e-14);
  EXPECT_NEAR(hat(m, 17, e[0], m.vertices[e[1]]), 0.0, 1e-14);
  EXPECT_EQ(hat(m, 17, -5, m.vertices[e[0]]), 0.0);
}

TEST(Assembly, ConstantIntegrandGivesBallArea) {
  Mesh m = build_uniform_grid(20, 0.1);
  BallDecomposition d = decompose_ball(m, {0.37, 0.61}, 0.1, BallStrategy::ExactCaps);
  EXPECT_NEAR(integrate_cells(m, d, [](int, Point) { return 1.0; }), kPi * 0.01, 1e-10);
}

TEST(Assembly, LinearIntegrandMatchesBoundaryOracle) {
  Mesh m = build_squared_grid(20, 0.1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    Point x{U(rng), U(rng)};
    BallDecomposition d = decompose_ball(m, x, 0.1, BallStrategy::ExactCaps);
    auto F = [](int, Point y) { return 1.5 - 2.0 * y.x + 0.7 * y.y; };
    double got = integrate_cells(m, d, F), want = green_oracle(m, x, 0.1, F);
    EXPECT_NEAR(green_oracle(m, x, 0.1, [](int, Point) { return 1.0; }), kPi * 0.01, 1e-14);
    EXPECT_NEAR(got, want, 1e-12) << i;
  }
}

TEST(Assembly, InnerIntegralPairMatchesBoundaryOracle) {
  // With delta > 2 h the caps lie outside the supports of the outer
  // element's hats, so the cell rules are exact for this integrand.
  Mesh m = build_uniform_grid(40, 0.1);
  Kernel ker = Kernel::constant(0.1);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 8; ++i) {
    Point x{U(rng), U(rng)};
    int k = locate_element(m, x);
    BallDecomposition d = decompose_ball(m, x, 0.1, BallStrategy::ExactCaps);
    const auto& e = m.elements[k].v;
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) {
        double pj = hat(m, k, e[a], x), pjp = hat(m, k, e[b], x);
        double want = green_oracle(m, x, 0.1, [&](int el, Point y) {
          return (hat(m, el, e[a], y) - pj) * (hat(m, el, e[b], y) - pjp) * ker(x, y);
        });
        double got = inner_integral_pair(m, ker, d, k, x, e[a], e[b]);
        EXPECT_NEAR(got, want, 1e-8) << i << " " << a << b;
      }
  }
}

TEST(Assembly, AbsorptionIntegral) {
  Mesh m = build_uniform_grid(20, 0.1);
  Kernel ker = Kernel::constant(0.1);
  Point far{0.5, 0.5};
  EXPECT_EQ(absorption_integral(m, ker, decompose_ball(m, far, 0.1, BallStrategy::ExactCaps), far), 0.0);
  Point mid{0.5, 0.0};
  double half = absorption_integral(m, ker, decompose_ball(m, mid, 0.1, BallStrategy::ExactCaps), mid);
  EXPECT_NEAR(half, ker.constant_value * kPi * 0.01 / 2, 1e-6);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0.0, 1.0), V(0.0, 0.08);
  for (int i = 0; i < 5; ++i) {
    Point x{U(rng), V(rng)};
    double got = absorption_integral(m, ker, decompose_ball(m, x, 0.1, BallStrategy::ExactCaps), x);
    std::uniform_real_distribution<double> B(-0.1, 0.1);
    const int n = 400000;
    long hit = 0;
    for (int s = 0; s < n; ++s) {
      Point y{x.x + B(rng), x.y + B(rng)};
      hit += dist2(x, y) <= 0.01 && (y.x <= 0 || y.x >= 1 || y.y <= 0 || y.y >= 1);
    }
    double q = double(hit) / n, est = 0.04 * q * ker.constant_value;
    double se = 0.04 * std::sqrt(q * (1 - q) / n) * ker.constant_value;
    EXPECT_LE(std::abs(got - est), 3 * se) << i;
  }
}

TEST(Assembly, ArgumentErrors) {
  Mesh m = build_uniform_grid(10, 0.1);
  ManufacturedCase mc = manufactured_case(0.1);
  EXPECT_THROW(assemble(m, Kernel::constant(0.2), mc.data, {}), std::invalid_argument);
  AssemblyOptions bad;
  bad.cap_triangles = 0;
  bad.strategy = BallStrategy::ApproxCaps;
  EXPECT_THROW(assemble(m, mc.kernel, mc.data, bad), std::invalid_argument);
  Mesh empty = m;
  empty.num_interior = 0;
  EXPECT_THROW(assemble(empty, mc.kernel, mc.data, {}), std::invalid_argument);
}

TEST(Assembly, SymmetricPositiveDefiniteForEveryStrategy) {
  Mesh m = build_squared_grid(10, 0.1);
  ManufacturedCase mc = manufactured_case(0.1);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> N;
  for (BallStrategy s : kStrategies) {
    AssemblyOptions o;
    o.strategy = s;
    LinearSystem sys = assemble(m, mc.kernel, mc.data, o);
    const CsrMatrix& A = sys.matrix;
    ASSERT_EQ(A.rows, m.num_interior);
    double tol = 1e-12 * A.max_abs();
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(A.rows, A.rows);
    for (int i = 0; i < A.rows; ++i)
      for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p) D(i, A.col[p]) = A.val[p];
    EXPECT_LE((D - D.transpose()).cwiseAbs().maxCoeff(), tol) << strategy_name(s);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(D);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0) << strategy_name(s);
    std::vector<double> b(A.rows);
    for (double& v : b) v = N(rng);
    SolveOptions so;
    so.allow_dense = false;
    EXPECT_NO_THROW(solve(A, b, so)) << strategy_name(s);
  }
}

TEST(Assembly, SparsityRespectsSupportBound) {
  Mesh m = build_squared_grid(20, 0.1);
  ManufacturedCase mc = manufactured_case(0.1);
  for (BallStrategy s : {BallStrategy::ExactCaps, BallStrategy::Overlap, BallStrategy::BarycenterApproxCaps}) {
    AssemblyOptions o;
    o.strategy = s;
    CsrMatrix A = assemble(m, mc.kernel, mc.data, o).matrix;
    double bound = m.delta + 2 * m.h_max;
    for (int i = 0; i < A.rows; ++i) {
      EXPECT_NE(A.at(i, i), 0.0);
      for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p) {
        Point a = m.vertices[m.vertex_of_node[i]], b = m.vertices[m.vertex_of_node[A.col[p]]];
        EXPECT_LE(dist(a, b), bound);
        if (p > A.row_ptr[i]) EXPECT_LT(A.col[p - 1], A.col[p]);
      }
    }
  }
}

TEST(Assembly, NonzerosScaleWithHorizonOverMeshSize) {
  ManufacturedCase mc = manufactured_case(0.1);
  for (int n : {20, 40}) {
    Mesh m = build_uniform_grid(n, 0.1);
    AssemblyOptions o;
    o.strategy = BallStrategy::NoCaps;
    CsrMatrix A = assemble(m, mc.kernel, mc.data, o).matrix;
    // Nodes within roughly delta + h of each node: pi ((delta + h) / h)^2.
    double h = 1.0 / n;
    double model = m.num_interior * kPi * std::pow((0.1 + h) / h, 2);
    double ratio = double(A.nnz()) / model;
    EXPECT_GT(ratio, 0.5) << n;
    EXPECT_LT(ratio, 2.0) << n;
  }
}

TEST(Assembly, DeterministicAcrossWorkerCounts) {
  Mesh m = build_squared_grid(20, 0.1);
  ManufacturedCase mc = manufactured_case(0.1);
  for (BallStrategy s : {BallStrategy::ExactCaps, BallStrategy::ShiftedNoCaps, BallStrategy::BarycenterNoCaps}) {
    AssemblyOptions o;
    o.strategy = s;
    o.threads = 1;
    LinearSystem a = assemble(m, mc.kernel, mc.data, o);
    for (int t : {2, 8}) {
      o.threads = t;
      LinearSystem b = assemble(m, mc.kernel, mc.data, o);
      EXPECT_TRUE(bitwise_equal(a.matrix, b.matrix)) << strategy_name(s) << " " << t;
      EXPECT_EQ(0, std::memcmp(a.rhs.data(), b.rhs.data(), a.rhs.size() * sizeof(double)));
    }
  }
}

TEST(Assembly, ConstantsAreReproduced) {
  Mesh m = build_squared_grid(10, 0.1);
  ProblemData data{[](Point) { return 0.0; }, [](Point) { return 1.0; }};
  for (BallStrategy s : kStrategies) {
    AssemblyOptions o;
    o.strategy = s;
    LinearSystem sys = assemble(m, Kernel::constant(0.1), data, o);
    SolveReport r = solve(sys);
    for (double v : r.solution) EXPECT_NEAR(v, 1.0, 1e-9) << strategy_name(s);
  }
}

TEST(Assembly, ZeroDataGivesZeroSolution) {
  Mesh m = build_uniform_grid(10, 0.1);
  ProblemData data{[](Point) { return 0.0; }, [](Point) { return 0.0; }};
  LinearSystem sys = assemble(m, Kernel::constant(0.1), data, {});
  for (double v : sys.rhs) EXPECT_EQ(v, 0.0);
  for (double v : solve(sys).solution) EXPECT_EQ(v, 0.0);
}

TEST(Assembly, LinearDataConsistencyShrinks) {
  // The residual of the linear interpolant measures how far the discrete
  // form is from annihilating linear functions.
  ProblemData data{[](Point) { return 0.0; }, [](Point p) { return 2 + 3 * p.x - p.y; }};
  std::vector<double> res;
  for (int n : {10, 20, 40}) {
    Mesh m = build_uniform_grid(n, 0.1);
    LinearSystem sys = assemble(m, Kernel::constant(0.1), data, {});
    std::vector<double> u(m.num_interior), Au;
    for (int i = 0; i < m.num_interior; ++i) u[i] = data.g(m.vertices[m.vertex_of_node[i]]);
    sys.matrix.multiply(u, Au);
    double r = 0;
    for (int i = 0; i < m.num_interior; ++i) r = std::max(r, std::abs(Au[i] - sys.rhs[i]));
    res.push_back(r);
  }
  EXPECT_LT(res[1], res[0]);
  EXPECT_LT(res[2], res[1]);
}

TEST(Assembly, FarConstraintValuesAreNeverRead) {
  // Layer wider than the horizon: the outer ring lies beyond delta + 2 h_max.
  Mesh m = build_uniform_grid(20, 0.3);
  ManufacturedCase mc = manufactured_case(0.3);
  auto far = [](Point p) { return std::max({-p.x, p.x - 1, -p.y, p.y - 1}) > 0.3 + 2 * std::sqrt(2.0) / 20 + 1e-9; };
  ProblemData perturbed = mc.data;
  perturbed.g = [&](Point p) { return mc.data.g(p) + (far(p) ? 100.0 : 0.0); };
  AssemblyOptions o;
  o.strategy = BallStrategy::NoCaps;
  LinearSystem a = assemble(m, Kernel::constant(0.3), mc.data, o), b = assemble(m, Kernel::constant(0.3), perturbed, o);
  EXPECT_TRUE(bitwise_equal(a.matrix, b.matrix));
  EXPECT_EQ(a.rhs, b.rhs);
}

TEST(Assembly, EnergyNormDiff) {
  Mesh m = build_uniform_grid(10, 0.1);
  ManufacturedCase mc = manufactured_case(0.1);
  CsrMatrix A = assemble(m, mc.kernel, mc.data, {}).matrix;
  std::vector<double> u(A.rows, 0.3), e(A.rows, 0.0);
  EXPECT_EQ(energy_norm_diff(A, u, u), 0.0);
  std::vector<double> v = u;
  v[0] += 1.0;
  EXPECT_NEAR(energy_norm_diff(A, v, u), std::sqrt(A.at(0, 0)), 1e-12 * std::sqrt(A.at(0, 0)));
  EXPECT_THROW(energy_norm_diff(A, u, std::vector<double>(3)), std::invalid_argument);
}

TEST(Assembly, FullCoefficientsAndExport) {
  Mesh m = build_uniform_grid(10, 0.1);
  ManufacturedCase mc = manufactured_case(0.1);
  LinearSystem sys = assemble(m, mc.kernel, mc.data, {});
  ASSERT_EQ(sys.constraint_values.size(), m.vertices.size() - m.num_interior);
  std::vector<double> interior(m.num_interior, 0.0);
  auto full = full_coefficients(m, interior, sys.constraint_values);
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    int node = m.node_of_vertex[v];
    if (node >= m.num_interior) EXPECT_EQ(full[node], mc.data.g(m.vertices[v]));
  }
  EXPECT_THROW(full_coefficients(m, std::vector<double>(3), sys.constraint_values), std::invalid_argument);
  // Interpolating the exact solution and evaluating inside an element.
  for (std::size_t v = 0; v < m.vertices.size(); ++v)
    if (m.node_of_vertex[v] < m.num_interior) interior[m.node_of_vertex[v]] = mc.u(m.vertices[v]);
  full = full_coefficients(m, interior, sys.constraint_values);
  EXPECT_NEAR(eval_fe(m, full, {0.5, 0.5}), mc.u({0.5, 0.5}), 1e-12);

  std::string path = (std::filesystem::temp_directory_path() / "nlfem_test_A.mtx").string();
  write_matrix_market(sys.matrix, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "%%MatrixMarket matrix coordinate real symmetric");
  int rows, cols;
  long entries;
  in >> rows >> cols >> entries;
  EXPECT_EQ(rows, m.num_interior);
  EXPECT_EQ(cols, m.num_interior);
  long lower = 0;
  for (int i = 0; i < sys.matrix.rows; ++i)
    for (int p = sys.matrix.row_ptr[i]; p < sys.matrix.row_ptr[i + 1]; ++p) lower += sys.matrix.col[p] <= i;
  EXPECT_EQ(entries, lower);
  int r, c;
  double val;
  in >> r >> c >> val;
  EXPECT_GE(r, c);
  EXPECT_GE(c, 1);
  EXPECT_EQ(val, sys.matrix.at(r - 1, c - 1));
  std::filesystem::remove(path);
}
