#include "nlfem/assembly.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "nlfem/quadrature.hpp"

namespace nlfem {

Kernel Kernel::constant(double delta) {
  Kernel k;
  k.delta = delta;
  k.constant_scaled = true;
  k.constant_value = 4.0 / (std::numbers::pi * delta * delta * delta * delta);
  double c = k.constant_value;
  k.psi = [c](Point, Point) { return c; };
  return k;
}

Kernel Kernel::general(double delta, std::function<double(Point, Point)> psi) {
  Kernel k;
  k.delta = delta;
  k.psi = std::move(psi);
  return k;
}

ManufacturedCase manufactured_case(double delta) {
  ManufacturedCase mc;
  mc.u = [](Point p) { return p.x * p.x * p.y + p.y * p.y; };
  mc.data.f = [](Point p) { return -2.0 * (p.y + 1.0); };
  mc.data.g = mc.u;
  mc.kernel = Kernel::constant(delta);
  return mc;
}

void CsrMatrix::multiply(const std::vector<double>& x, std::vector<double>& y) const {
  y.assign(rows, 0.0);
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int p = row_ptr[i]; p < row_ptr[i + 1]; ++p) s += val[p] * x[col[p]];
    y[i] = s;
  }
}

double CsrMatrix::at(int i, int j) const {
  auto b = col.begin() + row_ptr[i], e = col.begin() + row_ptr[i + 1];
  auto it = std::lower_bound(b, e, j);
  return it != e && *it == j ? val[it - col.begin()] : 0.0;
}

double CsrMatrix::max_abs() const {
  double m = 0.0;
  for (double v : val) m = std::max(m, std::abs(v));
  return m;
}

double hat(const Mesh& mesh, int k, int v, Point y) {
  const auto& e = mesh.elements[k].v;
  int i = e[0] == v ? 0 : e[1] == v ? 1 : e[2] == v ? 2 : -1;
  if (i < 0) return 0.0;
  Point b = mesh.vertices[e[(i + 1) % 3]], c = mesh.vertices[e[(i + 2) % 3]];
  return 0.5 * cross(b - y, c - y) / mesh.areas[k];
}

namespace {

// Gauss3 or centroid points of one cell.
template <class F>
void for_cell_points(const QuadCell& c, F&& f) {
  if (c.kind == QuadCell::Kind::Cap) {
    CapPoint cp = cap_centroid_rule(c.cap);
    if (cp.w > 0) f(cp.p, cp.w);
    return;
  }
  double w = std::abs(signed_area(c.tri)) / 3.0;
  if (!(w > 0)) return;
  const Triangle& t = c.tri;
  f(0.5 * (t[1] + t[2]), w);
  f(0.5 * (t[2] + t[0]), w);
  f(0.5 * (t[0] + t[1]), w);
}

}  // namespace

double integrate_cells(const Mesh& mesh, const BallDecomposition& d,
                       const std::function<double(int, Point)>& F) {
  (void)mesh;
  double s = 0.0;
  for (const auto& r : d.cells) for_cell_points(r.cell, [&](Point y, double w) { s += w * F(r.element, y); });
  return s;
}

double inner_integral_pair(const Mesh& mesh, const Kernel& kernel, const BallDecomposition& d, int k,
                           Point x, int j, int jp) {
  double pj = hat(mesh, k, j, x), pjp = hat(mesh, k, jp, x);
  return integrate_cells(mesh, d, [&](int e, Point y) {
    return (hat(mesh, e, j, y) - pj) * (hat(mesh, e, jp, y) - pjp) * kernel(x, y);
  });
}

double absorption_integral(const Mesh& mesh, const Kernel& kernel, const BallDecomposition& d, Point x) {
  return integrate_cells(mesh, d, [&](int e, Point y) {
    return mesh.elements[e].region == Region::OmegaI ? kernel(x, y) : 0.0;
  });
}

double energy_norm_diff(const CsrMatrix& A, const std::vector<double>& u1, const std::vector<double>& u2) {
  if (u1.size() != u2.size() || static_cast<int>(u1.size()) != A.rows)
    throw std::invalid_argument("energy_norm_diff: dimension mismatch");
  std::vector<double> d(u1.size()), Ad;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = u1[i] - u2[i];
  A.multiply(d, Ad);
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * Ad[i];
  return std::sqrt(std::max(0.0, s));
}

std::vector<double> full_coefficients(const Mesh& mesh, const std::vector<double>& interior,
                                      const std::vector<double>& constraint_values) {
  std::vector<double> u(interior);
  u.insert(u.end(), constraint_values.begin(), constraint_values.end());
  if (u.size() != mesh.vertex_of_node.size()) throw std::invalid_argument("full_coefficients: size mismatch");
  return u;
}

void write_matrix_market(const CsrMatrix& A, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  std::size_t lower = 0;
  for (int i = 0; i < A.rows; ++i)
    for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p) lower += A.col[p] <= i;
  out << "%%MatrixMarket matrix coordinate real symmetric\n";
  out << A.rows << " " << A.rows << " " << lower << "\n" << std::setprecision(17);
  for (int i = 0; i < A.rows; ++i)
    for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p)
      if (A.col[p] <= i) out << i + 1 << " " << A.col[p] + 1 << " " << A.val[p] << "\n";
}

void write_vector(const std::vector<double>& v, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << std::setprecision(17);
  for (double x : v) out << x << "\n";
}

namespace {

struct Affine {
  Point v0;
  double a00, a01, a10, a11;
  void lambda(Point y, double l[3]) const {
    double dx = y.x - v0.x, dy = y.y - v0.y;
    l[1] = a00 * dx + a01 * dy;
    l[2] = a10 * dx + a11 * dy;
    l[0] = 1.0 - l[1] - l[2];
  }
};

// Kernel-weighted moments of the inner hat functions over the cells of one
// inner element: m0 = sum w psi, m1 = sum w psi lambda, m2 = sum w psi lambda
// lambda^T (upper triangle 00 01 02 11 12 22), g = sum w psi g(y).
struct Moments {
  double m0 = 0, m1[3] = {0, 0, 0}, m2[6] = {0, 0, 0, 0, 0, 0}, g = 0;
  void add(double w, const double l[3], double gy) {
    m0 += w;
    for (int i = 0; i < 3; ++i) m1[i] += w * l[i];
    m2[0] += w * l[0] * l[0];
    m2[1] += w * l[0] * l[1];
    m2[2] += w * l[0] * l[2];
    m2[3] += w * l[1] * l[1];
    m2[4] += w * l[1] * l[2];
    m2[5] += w * l[2] * l[2];
    g += w * gy;
  }
  void scale(double s) {
    m0 *= s;
    for (double& v : m1) v *= s;
    for (double& v : m2) v *= s;
    g *= s;
  }
};

constexpr int kPair[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};

// Upper-triangular pattern over interior nodes.
struct Pattern {
  std::vector<long> row_ptr;
  std::vector<int> col;
  long find(int r, int c) const {
    auto b = col.begin() + row_ptr[r], e = col.begin() + row_ptr[r + 1];
    auto it = std::lower_bound(b, e, c);
    if (it == e || *it != c) throw std::logic_error("assembly: entry outside the sparsity pattern");
    return it - col.begin();
  }
};

Pattern build_pattern(const Mesh& mesh, double radius) {
  const int n = mesh.num_interior;
  Point lo{1e300, 1e300}, hi{-1e300, -1e300};
  for (int i = 0; i < n; ++i) {
    Point p = mesh.vertices[mesh.vertex_of_node[i]];
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  double cell = radius;
  int nx = static_cast<int>((hi.x - lo.x) / cell) + 1, ny = static_cast<int>((hi.y - lo.y) / cell) + 1;
  std::vector<std::vector<int>> bins(static_cast<std::size_t>(nx) * ny);
  auto bx = [&](Point p) { return std::min(nx - 1, static_cast<int>((p.x - lo.x) / cell)); };
  auto by = [&](Point p) { return std::min(ny - 1, static_cast<int>((p.y - lo.y) / cell)); };
  for (int i = 0; i < n; ++i) {
    Point p = mesh.vertices[mesh.vertex_of_node[i]];
    bins[by(p) * nx + bx(p)].push_back(i);
  }
  Pattern pat;
  pat.row_ptr.assign(n + 1, 0);
  std::vector<int> row;
  double r2 = radius * radius;
  for (int i = 0; i < n; ++i) {
    Point p = mesh.vertices[mesh.vertex_of_node[i]];
    row.clear();
    int x0 = std::max(0, bx(p) - 1), x1 = std::min(nx - 1, bx(p) + 1);
    int y0 = std::max(0, by(p) - 1), y1 = std::min(ny - 1, by(p) + 1);
    for (int yy = y0; yy <= y1; ++yy)
      for (int xx = x0; xx <= x1; ++xx)
        for (int j : bins[yy * nx + xx])
          if (j >= i && dist2(p, mesh.vertices[mesh.vertex_of_node[j]]) <= r2) row.push_back(j);
    std::sort(row.begin(), row.end());
    pat.col.insert(pat.col.end(), row.begin(), row.end());
    pat.row_ptr[i + 1] = static_cast<long>(pat.col.size());
  }
  return pat;
}

struct Shared {
  Shared(const Mesh& m, const Kernel& k, const ProblemData& d, const AssemblyOptions& o)
      : mesh(m), kernel(k), data(d), opt(o) {}
  const Mesh& mesh;
  const Kernel& kernel;
  const ProblemData& data;
  AssemblyOptions opt;
  int n_int = 0;
  std::vector<double> g_vertex;  // g at layer vertices
  std::vector<Affine> affine;
  std::vector<Moments> whole;  // constant-kernel moments of whole elements
  std::vector<double> radius;  // max vertex distance from the barycenter
  Pattern pattern;
  std::vector<int> omega_elements;
  MappedRule g4_ref, vm7_ref;  // on the reference triangle, barycentric in points
  double P1[3] = {0, 0, 0}, P2[6] = {0, 0, 0, 0, 0, 0};  // Gauss4 moments per unit area
};

struct Worker {
  const Shared& s;
  std::vector<double> U;    // upper values, chunk-local
  std::vector<double> rhs;  // chunk-local
  long row_lo = 0, row_hi = -1;
  int rhs_lo = 0, rhs_hi = -1;

  std::vector<std::array<double, 3>> node_acc;
  std::vector<int> node_mark, node_touched;
  std::vector<std::array<double, 6>> elem_acc;
  std::vector<int> elem_mark, elem_touched;
  std::vector<int> cand;
  std::vector<CellRef> cells;

  // Current outer element.
  int k = -1;
  std::array<int, 3> kv{};
  double S0[6];
  double rhs_out[3];
  // Current outer point.
  double W = 0, phi[3] = {0, 0, 0}, pm0 = 0, pg = 0;

  explicit Worker(const Shared& sh) : s(sh) {
    U.assign(s.pattern.col.size(), 0.0);
    rhs.assign(s.n_int, 0.0);
    node_acc.assign(s.mesh.vertices.size(), {0, 0, 0});
    node_mark.assign(s.mesh.vertices.size(), 0);
    elem_acc.assign(s.mesh.elements.size(), {0, 0, 0, 0, 0, 0});
    elem_mark.assign(s.mesh.elements.size(), 0);
  }

  void add_upper(int r, int c, double v) {
    long p = s.pattern.find(r, c);
    U[p] += v;
    row_lo = std::min<long>(row_lo, r);
    row_hi = std::max<long>(row_hi, r);
  }
  void add_rhs(int r, double v) {
    rhs[r] += v;
    rhs_lo = std::min(rhs_lo, r);
    rhs_hi = std::max(rhs_hi, r);
  }
  // A(a,b) += v and A(b,a) += v for vertices a, b.
  void add_pair(int va, int vb, double v) {
    int na = s.mesh.node_of_vertex[va], nb = s.mesh.node_of_vertex[vb];
    bool ia = na < s.n_int, ib = nb < s.n_int;
    if (ia && ib) {
      if (na == nb)
        add_upper(na, na, 2 * v);
      else
        add_upper(std::min(na, nb), std::max(na, nb), v);
    } else if (ia) {
      add_rhs(na, -v * s.g_vertex[vb]);
    } else if (ib) {
      add_rhs(nb, -v * s.g_vertex[va]);
    }
  }
  void add_diag(int va, double v) {
    int na = s.mesh.node_of_vertex[va];
    if (na < s.n_int) add_upper(na, na, v);
  }

  void moments_of_cells(Point x, int kp, const CellRef* b, const CellRef* e, Moments& m) const {
    const Affine& A = s.affine[kp];
    bool layer = s.mesh.elements[kp].region == Region::OmegaI;
    for (const CellRef* r = b; r != e; ++r) {
      if (r->cell.whole && s.kernel.constant_scaled) {
        const Moments& w = s.whole[kp];
        m.m0 += w.m0;
        for (int i = 0; i < 3; ++i) m.m1[i] += w.m1[i];
        for (int i = 0; i < 6; ++i) m.m2[i] += w.m2[i];
        m.g += w.g;
        continue;
      }
      for_cell_points(r->cell, [&](Point y, double w) {
        double l[3];
        A.lambda(y, l);
        double wp = s.kernel.constant_scaled ? w * s.kernel.constant_value : w * s.kernel.psi(x, y);
        m.add(wp, l, layer ? s.data.g(y) : 0.0);
      });
    }
  }

  void begin_point(double w, const double l[3]) {
    W = w;
    for (int i = 0; i < 3; ++i) phi[i] = l[i];
    pm0 = pg = 0;
  }

  void add_inner(int kp, const Moments& m) {
    if (s.mesh.elements[kp].region == Region::OmegaI) {
      pm0 += 2 * m.m0;
      pg += m.g;
      return;
    }
    pm0 += m.m0;
    const auto& v = s.mesh.elements[kp].v;
    for (int b = 0; b < 3; ++b) {
      int vb = v[b];
      if (!node_mark[vb]) {
        node_mark[vb] = 1;
        node_touched.push_back(vb);
      }
      for (int a = 0; a < 3; ++a) node_acc[vb][a] -= W * phi[a] * m.m1[b];
    }
    if (!elem_mark[kp]) {
      elem_mark[kp] = 1;
      elem_touched.push_back(kp);
    }
    for (int i = 0; i < 6; ++i) elem_acc[kp][i] += W * m.m2[i];
  }

  void end_point() {
    for (int i = 0; i < 6; ++i) S0[i] += W * pm0 * phi[kPair[i][0]] * phi[kPair[i][1]];
    for (int a = 0; a < 3; ++a) rhs_out[a] += 2 * W * pg * phi[a];
  }

  // Constant-kernel shortcut: the inner moments do not depend on x, so the
  // Gauss4 points of the whole outer element collapse to P1, P2.
  void add_inner_aggregated(int kp, const Moments& m) {
    double area = s.mesh.areas[k];
    if (s.mesh.elements[kp].region == Region::OmegaI) {
      for (int i = 0; i < 6; ++i) S0[i] += 2 * m.m0 * area * s.P2[i];
      for (int a = 0; a < 3; ++a) rhs_out[a] += 2 * m.g * area * s.P1[a];
      return;
    }
    for (int i = 0; i < 6; ++i) S0[i] += m.m0 * area * s.P2[i];
    const auto& v = s.mesh.elements[kp].v;
    for (int b = 0; b < 3; ++b) {
      int vb = v[b];
      if (!node_mark[vb]) {
        node_mark[vb] = 1;
        node_touched.push_back(vb);
      }
      for (int a = 0; a < 3; ++a) node_acc[vb][a] -= area * s.P1[a] * m.m1[b];
    }
    if (!elem_mark[kp]) {
      elem_mark[kp] = 1;
      elem_touched.push_back(kp);
    }
    for (int i = 0; i < 6; ++i) elem_acc[kp][i] += area * m.m2[i];
  }

  // Cells of element kp against the ball B(c, delta) for a polygon strategy;
  // whole elements and misses are decided without building the cut.
  void polygon_cells(int kp, const Triangle& t, Point c, BallStrategy base) {
    const double delta = s.kernel.delta;
    double d = dist(c, s.mesh.barycenters[kp]);
    double r = s.radius[kp];
    if (d > delta * (1 + 1e-12) + r) return;
    if (d + r < delta) {
      cells.push_back({kp, {QuadCell::Kind::Triangle, true, t, {}}});
      return;
    }
    cut_cells(t, c, delta, base, s.opt.cap_triangles, kp, cells);
  }

  void per_point_strategy(BallStrategy base, Point x, double w, const double l[3], RuleKind kind) {
    const Mesh& mesh = s.mesh;
    const double delta = s.kernel.delta;
    begin_point(w, l);
    elements_near(mesh, x, delta + mesh.h_max, cand);
    const double d2 = delta * delta;
    for (int kp : cand) {
      if (select_outer_rule(mesh, k, kp, delta) != kind) continue;
      cells.clear();
      switch (base) {
        case BallStrategy::Barycenter:
          if (dist2(mesh.barycenters[kp], x) <= d2) cells.push_back({kp, {QuadCell::Kind::Triangle, true, {}, {}}});
          break;
        case BallStrategy::Overlap: {
          double d = dist(x, mesh.barycenters[kp]);
          if (d > delta * (1 + 1e-12) + s.radius[kp]) break;
          if (d + s.radius[kp] < delta || classify_overlap(mesh.triangle(kp), x, delta) != Overlap::None)
            cells.push_back({kp, {QuadCell::Kind::Triangle, true, mesh.triangle(kp), {}}});
          break;
        }
        default:
          polygon_cells(kp, mesh.triangle(kp), x, base);
      }
      if (cells.empty()) continue;
      if (cells[0].cell.whole && !s.kernel.constant_scaled) cells[0].cell.tri = mesh.triangle(kp);
      Moments m;
      moments_of_cells(x, kp, cells.data(), cells.data() + cells.size(), m);
      add_inner(kp, m);
    }
    end_point();
  }

  void outer_element(int kk) {
    const Mesh& mesh = s.mesh;
    const double delta = s.kernel.delta;
    k = kk;
    kv = mesh.elements[k].v;
    std::fill(S0, S0 + 6, 0.0);
    std::fill(rhs_out, rhs_out + 3, 0.0);
    Triangle T = mesh.triangle(k);
    double area = mesh.areas[k];
    auto to_physical = [&](const Point& ref) { return T[0] + ref.x * (T[1] - T[0]) + ref.y * (T[2] - T[0]); };
    auto ref_lambda = [](const Point& ref, double l[3]) {
      l[0] = 1 - ref.x - ref.y;
      l[1] = ref.x;
      l[2] = ref.y;
    };

    // Source term.
    for (std::size_t q = 0; q < s.g4_ref.points.size(); ++q) {
      double l[3];
      ref_lambda(s.g4_ref.points[q], l);
      double fx = s.data.f(to_physical(s.g4_ref.points[q])) * s.g4_ref.weights[q] * 2 * area;
      for (int a = 0; a < 3; ++a) rhs_out[a] += fx * l[a];
    }

    BallStrategy st = s.opt.strategy;
    switch (st) {
      case BallStrategy::ExactCaps:
      case BallStrategy::NoCaps:
      case BallStrategy::ApproxCaps:
      case BallStrategy::Barycenter:
      case BallStrategy::Overlap:
        for (RuleKind kind : {RuleKind::Gauss4, RuleKind::VertexMidside7}) {
          const MappedRule& r = kind == RuleKind::Gauss4 ? s.g4_ref : s.vm7_ref;
          for (std::size_t q = 0; q < r.points.size(); ++q) {
            double l[3];
            ref_lambda(r.points[q], l);
            per_point_strategy(st, to_physical(r.points[q]), r.weights[q] * 2 * area, l, kind);
          }
        }
        break;
      case BallStrategy::Shifted:
      case BallStrategy::ShiftedNoCaps: {
        Point c = mesh.barycenters[k];
        BallStrategy base = st == BallStrategy::Shifted ? BallStrategy::ExactCaps : BallStrategy::NoCaps;
        elements_near(mesh, c, delta + mesh.h_max, cand);
        for (int kp : cand) {
          cells.clear();
          polygon_cells(kp, mesh.triangle(kp), c, base);
          if (cells.empty()) continue;
          if (s.kernel.constant_scaled) {
            Moments m;
            moments_of_cells(c, kp, cells.data(), cells.data() + cells.size(), m);
            add_inner_aggregated(kp, m);
            continue;
          }
          for (std::size_t q = 0; q < s.g4_ref.points.size(); ++q) {
            double l[3];
            ref_lambda(s.g4_ref.points[q], l);
            Point x = to_physical(s.g4_ref.points[q]);
            begin_point(s.g4_ref.weights[q] * 2 * area, l);
            Moments m;
            moments_of_cells(x, kp, cells.data(), cells.data() + cells.size(), m);
            add_inner(kp, m);
            end_point();
          }
        }
        break;
      }
      case BallStrategy::BarycenterNoCaps:
      case BallStrategy::BarycenterApproxCaps: {
        BallStrategy base = st == BallStrategy::BarycenterNoCaps ? BallStrategy::NoCaps : BallStrategy::ApproxCaps;
        elements_near(mesh, mesh.barycenters[k], delta + mesh.h_max, cand);
        std::vector<CellRef> whole_inner(1);
        for (int kp : cand) {
          Point c = mesh.barycenters[kp];
          cells.clear();
          polygon_cells(k, T, c, base);
          if (cells.empty()) continue;
          whole_inner[0] = {kp, {QuadCell::Kind::Triangle, true, mesh.triangle(kp), {}}};
          if (cells.size() == 1 && cells[0].cell.whole && s.kernel.constant_scaled) {
            add_inner_aggregated(kp, s.whole[kp]);
            continue;
          }
          const Affine& Ak = s.affine[k];
          for (const CellRef& sub : cells) {
            const Triangle& t = sub.cell.tri;
            double sub_area = std::abs(signed_area(t));
            if (!(sub_area > 0)) continue;
            for (std::size_t q = 0; q < s.g4_ref.points.size(); ++q) {
              Point ref = s.g4_ref.points[q];
              Point x = t[0] + ref.x * (t[1] - t[0]) + ref.y * (t[2] - t[0]);
              double l[3];
              Ak.lambda(x, l);
              begin_point(s.g4_ref.weights[q] * 2 * sub_area, l);
              Moments m;
              moments_of_cells(x, kp, whole_inner.data(), whole_inner.data() + 1, m);
              add_inner(kp, m);
              end_point();
            }
          }
        }
        break;
      }
    }

    // Scatter the outer-element buffers.
    for (int i = 0; i < 6; ++i) {
      int a = kPair[i][0], b = kPair[i][1];
      if (a == b)
        add_diag(kv[a], S0[i]);
      else
        add_pair(kv[a], kv[b], S0[i]);
    }
    for (int vb : node_touched) {
      for (int a = 0; a < 3; ++a) add_pair(kv[a], vb, node_acc[vb][a]);
      node_acc[vb] = {0, 0, 0};
      node_mark[vb] = 0;
    }
    node_touched.clear();
    for (int a = 0; a < 3; ++a) {
      int na = mesh.node_of_vertex[kv[a]];
      if (na < s.n_int) add_rhs(na, rhs_out[a]);
    }
  }

  void flush_elements() {
    for (int kp : elem_touched) {
      const auto& v = s.mesh.elements[kp].v;
      for (int i = 0; i < 6; ++i) {
        int a = kPair[i][0], b = kPair[i][1];
        if (a == b)
          add_diag(v[a], elem_acc[kp][i]);
        else
          add_pair(v[a], v[b], elem_acc[kp][i]);
      }
      elem_acc[kp] = {0, 0, 0, 0, 0, 0};
      elem_mark[kp] = 0;
    }
    elem_touched.clear();
  }

  void run_chunk(int begin, int end) {
    row_lo = s.n_int;
    row_hi = -1;
    rhs_lo = s.n_int;
    rhs_hi = -1;
    for (int i = begin; i < end; ++i) outer_element(s.omega_elements[i]);
    flush_elements();
  }

  void merge_into(std::vector<double>& Ug, std::vector<double>& rhsg) {
    if (row_hi >= row_lo) {
      for (long p = s.pattern.row_ptr[row_lo]; p < s.pattern.row_ptr[row_hi + 1]; ++p) {
        Ug[p] += U[p];
        U[p] = 0.0;
      }
    }
    for (int r = rhs_lo; r <= rhs_hi; ++r) {
      rhsg[r] += rhs[r];
      rhs[r] = 0.0;
    }
  }
};

}  // namespace

LinearSystem assemble(const Mesh& mesh, const Kernel& kernel, const ProblemData& data,
                      const AssemblyOptions& options) {
  if (std::abs(mesh.delta - kernel.delta) > 1e-12 * mesh.delta)
    throw std::invalid_argument("assemble: mesh and kernel horizons differ");
  if (mesh.num_interior == 0) throw std::invalid_argument("assemble: mesh has no interior nodes");
  if (options.cap_triangles < 1) throw std::invalid_argument("assemble: cap_triangles must be positive");

  Shared s(mesh, kernel, data, options);
  s.n_int = mesh.num_interior;
  s.g_vertex.assign(mesh.vertices.size(), 0.0);
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
    if (!mesh.is_interior_vertex(static_cast<int>(v))) s.g_vertex[v] = data.g(mesh.vertices[v]);

  const std::size_t K = mesh.elements.size();
  s.affine.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    Triangle t = mesh.triangle(static_cast<int>(k));
    double j00 = t[1].x - t[0].x, j01 = t[2].x - t[0].x, j10 = t[1].y - t[0].y, j11 = t[2].y - t[0].y;
    double det = j00 * j11 - j01 * j10;
    s.affine[k] = {t[0], j11 / det, -j01 / det, -j10 / det, j00 / det};
  }
  if (kernel.constant_scaled) {
    s.whole.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      QuadCell c{QuadCell::Kind::Triangle, true, mesh.triangle(static_cast<int>(k)), {}};
      bool layer = mesh.elements[k].region == Region::OmegaI;
      Moments& m = s.whole[k];
      for_cell_points(c, [&](Point y, double w) {
        double l[3];
        s.affine[k].lambda(y, l);
        m.add(w, l, layer ? data.g(y) : 0.0);
      });
      m.scale(kernel.constant_value);
    }
  }
  s.radius.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    Triangle t = mesh.triangle(static_cast<int>(k));
    for (const Point& v : t) s.radius[k] = std::max(s.radius[k], dist(v, mesh.barycenters[k]));
    if (mesh.elements[k].region == Region::Omega) s.omega_elements.push_back(static_cast<int>(k));
  }

  // Reference rules with (lambda1, lambda2) stored as coordinates.
  for (RuleKind kind : {RuleKind::Gauss4, RuleKind::VertexMidside7}) {
    const QuadratureRule& r = rule(kind);
    MappedRule& m = kind == RuleKind::Gauss4 ? s.g4_ref : s.vm7_ref;
    for (std::size_t q = 0; q < r.points.size(); ++q) {
      m.points.push_back({r.points[q][1], r.points[q][2]});
      m.weights.push_back(r.weights[q]);
    }
  }
  {
    const QuadratureRule& r = rule(RuleKind::Gauss4);
    for (std::size_t q = 0; q < r.points.size(); ++q) {
      const auto& l = r.points[q];
      double w = 2 * r.weights[q];
      for (int a = 0; a < 3; ++a) s.P1[a] += w * l[a];
      for (int i = 0; i < 6; ++i) s.P2[i] += w * l[kPair[i][0]] * l[kPair[i][1]];
    }
  }

  s.pattern = build_pattern(mesh, kernel.delta + 2 * mesh.h_max + 1e-12 * (1 + kernel.delta));

  // Fixed chunking keeps the summation order independent of the worker count.
  const int n_outer = static_cast<int>(s.omega_elements.size());
  const int chunk = std::max(32, (n_outer + 63) / 64);
  const int n_chunks = (n_outer + chunk - 1) / chunk;
  int threads = options.threads > 0 ? options.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, std::max(1, n_chunks));

  std::vector<double> Ug(s.pattern.col.size(), 0.0), rhs(s.n_int, 0.0);
  std::atomic<int> next{0};
  int merged = 0;
  bool failed = false;
  std::exception_ptr error;
  std::mutex mu;
  std::condition_variable cv;

  auto work = [&]() {
    try {
      Worker w(s);
      for (;;) {
        int c = next.fetch_add(1);
        if (c >= n_chunks) break;
        w.run_chunk(c * chunk, std::min(n_outer, (c + 1) * chunk));
        std::unique_lock<std::mutex> lk(mu);
        cv.wait(lk, [&] { return merged == c || failed; });
        if (failed) return;
        w.merge_into(Ug, rhs);
        ++merged;
        cv.notify_all();
      }
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu);
      if (!failed) error = std::current_exception();
      failed = true;
      cv.notify_all();
    }
  };
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  // Mirror the upper triangle into full CSR storage.
  LinearSystem sys;
  CsrMatrix& A = sys.matrix;
  const int n = s.n_int;
  A.rows = n;
  std::vector<int> count(n, 0);
  for (int r = 0; r < n; ++r)
    for (long p = s.pattern.row_ptr[r]; p < s.pattern.row_ptr[r + 1]; ++p) {
      int c = s.pattern.col[p];
      if (Ug[p] == 0.0 && c != r) continue;
      ++count[r];
      if (c != r) ++count[c];
    }
  A.row_ptr.assign(n + 1, 0);
  for (int r = 0; r < n; ++r) A.row_ptr[r + 1] = A.row_ptr[r] + count[r];
  A.col.resize(A.row_ptr[n]);
  A.val.resize(A.row_ptr[n]);
  std::vector<int> fill(A.row_ptr.begin(), A.row_ptr.end() - 1);
  // Rows are visited in ascending order, so lower entries land sorted
  // before the row's own upper entries.
  for (int r = 0; r < n; ++r)
    for (long p = s.pattern.row_ptr[r]; p < s.pattern.row_ptr[r + 1]; ++p) {
      int c = s.pattern.col[p];
      if (Ug[p] == 0.0 && c != r) continue;
      A.col[fill[r]] = c;
      A.val[fill[r]++] = Ug[p];
      if (c != r) {
        A.col[fill[c]] = r;
        A.val[fill[c]++] = Ug[p];
      }
    }
  sys.rhs = std::move(rhs);
  sys.constraint_values.resize(mesh.vertex_of_node.size() - n);
  for (std::size_t j = n; j < mesh.vertex_of_node.size(); ++j)
    sys.constraint_values[j - n] = s.g_vertex[mesh.vertex_of_node[j]];
  return sys;
}

}  // namespace nlfem
