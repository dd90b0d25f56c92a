#include "nlfem/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace nlfem {

namespace {

constexpr double kInsideTol = 1e-12;
constexpr double kSliver = 1e-14;

struct WalkPoint {
  Point p;
  bool entry = false;
  bool exit = false;
};

// Roots of a*l^2 + b*l + c, ascending; disc already clamped to >= 0.
void quadratic_roots(double a, double b, double c, double disc, double& r1, double& r2) {
  double sq = std::sqrt(disc);
  double q = -0.5 * (b + std::copysign(sq, b));
  r1 = q / a;
  r2 = q != 0.0 ? c / q : r1;
  if (r1 > r2) std::swap(r1, r2);
}

bool inside_ball(Point v, Point x, double delta) {
  return dist(v, x) <= delta * (1.0 + kInsideTol);
}

bool point_in_triangle(const Triangle& t, Point y, double eps = 0.0) {
  double d0 = cross(t[1] - t[0], y - t[0]);
  double d1 = cross(t[2] - t[1], y - t[1]);
  double d2 = cross(t[0] - t[2], y - t[2]);
  double s = eps * std::abs(signed_area(t));
  return d0 >= -s && d1 >= -s && d2 >= -s;
}

// Twice-cut test for an edge with both endpoints outside.
bool edge_cut_twice(Point vi, Point vj, Point x, double delta, double* l1, double* l2) {
  Point d = vj - vi, f = vi - x;
  double a = dot(d, d);
  double lstar = -dot(f, d) / a;
  if (!(lstar > 0.0 && lstar < 1.0)) return false;
  double dmin2 = dist2(vi + lstar * d, x);
  if (dmin2 >= delta * delta * (1.0 - 2 * kInsideTol)) return false;
  if (l1) {
    double b = 2 * dot(f, d), c = dot(f, f) - delta * delta;
    quadratic_roots(a, b, c, std::max(0.0, b * b - 4 * a * c), *l1, *l2);
    *l1 = std::clamp(*l1, 0.0, 1.0);
    *l2 = std::clamp(*l2, 0.0, 1.0);
  }
  return true;
}

Cap make_cap(Point center, double delta, Point a, Point b) {
  double phi = std::atan2(cross(a - center, b - center), dot(a - center, b - center));
  if (phi < 0) phi += 2 * std::numbers::pi;
  return {center, delta, a, b, 0.5 * phi};
}

BallStrategy base_strategy(BallStrategy s) {
  switch (s) {
    case BallStrategy::Shifted: return BallStrategy::ExactCaps;
    case BallStrategy::ShiftedNoCaps: return BallStrategy::NoCaps;
    case BallStrategy::BarycenterNoCaps:
    case BallStrategy::BarycenterApproxCaps: return BallStrategy::Barycenter;
    default: return s;
  }
}

}  // namespace

const char* strategy_name(BallStrategy s) {
  switch (s) {
    case BallStrategy::ExactCaps: return "exactcaps";
    case BallStrategy::NoCaps: return "nocaps";
    case BallStrategy::ApproxCaps: return "approxcaps";
    case BallStrategy::Barycenter: return "barycenter";
    case BallStrategy::Overlap: return "overlap";
    case BallStrategy::Shifted: return "shifted";
    case BallStrategy::BarycenterNoCaps: return "barycenter-nocaps";
    case BallStrategy::BarycenterApproxCaps: return "barycenter-approxcaps";
    case BallStrategy::ShiftedNoCaps: return "shifted-nocaps";
  }
  return "?";
}

BallStrategy parse_strategy(const std::string& name) {
  for (BallStrategy s :
       {BallStrategy::ExactCaps, BallStrategy::NoCaps, BallStrategy::ApproxCaps, BallStrategy::Barycenter,
        BallStrategy::Overlap, BallStrategy::Shifted, BallStrategy::BarycenterNoCaps,
        BallStrategy::BarycenterApproxCaps, BallStrategy::ShiftedNoCaps})
    if (name == strategy_name(s)) return s;
  throw std::invalid_argument("unknown ball strategy: " + name);
}

bool is_shifted(BallStrategy s) {
  return s == BallStrategy::Shifted || s == BallStrategy::ShiftedNoCaps;
}

double QuadCell::area() const {
  if (kind == Kind::Triangle) return std::abs(signed_area(tri));
  return cap_area_from_angle(cap.theta, cap.radius);
}

double BallDecomposition::area() const {
  double s = 0.0;
  for (const auto& c : cells) s += c.cell.area();
  return s;
}

std::vector<int> candidate_elements(const Mesh& mesh, Point x, double delta) {
  std::vector<int> out;
  elements_near(mesh, x, delta + mesh.h_max, out);
  return out;
}

Overlap classify_overlap(const Triangle& t, Point x, double delta) {
  int inside = 0;
  for (const Point& v : t) inside += inside_ball(v, x, delta);
  if (inside == 3) return Overlap::Full;
  if (inside > 0) return Overlap::Partial;
  for (int i = 0; i < 3; ++i)
    if (edge_cut_twice(t[i], t[(i + 1) % 3], x, delta, nullptr, nullptr)) return Overlap::Partial;
  if (point_in_triangle(t, x)) return Overlap::Partial;
  return Overlap::None;
}

std::vector<double> edge_circle_intersections(Point vi, Point vj, Point x, double delta) {
  Point d = vj - vi, f = vi - x;
  double a = dot(d, d);
  if (!(a > 0.0)) throw std::invalid_argument("edge_circle_intersections: zero-length segment");
  double lstar = -dot(f, d) / a;
  double dmin2 = dist2(vi + lstar * d, x);
  if (dmin2 >= delta * delta * (1.0 - 2 * kInsideTol)) return {};
  double b = 2 * dot(f, d), c = dot(f, f) - delta * delta;
  double r1, r2;
  quadratic_roots(a, b, c, std::max(0.0, b * b - 4 * a * c), r1, r2);
  std::vector<double> out;
  for (double r : {r1, r2})
    if (r >= -1e-14 && r <= 1.0 + 1e-14) out.push_back(std::clamp(r, 0.0, 1.0));
  return out;
}

namespace {

// Fills cut in place so callers can reuse its buffers.
void cut_triangle_into(const Triangle& t, Point x, double delta, BallCut& cut) {
  cut.type = Overlap::None;
  cut.polygon.clear();
  cut.caps.clear();
  bool in[3];
  int inside = 0;
  for (int i = 0; i < 3; ++i) inside += in[i] = inside_ball(t[i], x, delta);
  if (inside == 3) {
    cut.type = Overlap::Full;
    cut.polygon.assign(t.begin(), t.end());
    return;
  }

  WalkPoint pts[9];
  int m = 0;
  for (int i = 0; i < 3; ++i) {
    int j = (i + 1) % 3;
    if (in[i]) pts[m++] = {t[i], false, false};
    Point d = t[j] - t[i], f = t[i] - x;
    double a = dot(d, d), b = 2 * dot(f, d), c = dot(f, f) - delta * delta;
    if (in[i] != in[j]) {
      double r1, r2;
      quadratic_roots(a, b, c, std::max(0.0, b * b - 4 * a * c), r1, r2);
      if (in[i])
        pts[m++] = {t[i] + std::clamp(r2, 0.0, 1.0) * d, false, true};
      else
        pts[m++] = {t[i] + std::clamp(r1, 0.0, 1.0) * d, true, false};
    } else if (!in[i]) {
      double r1, r2;
      if (edge_cut_twice(t[i], t[j], x, delta, &r1, &r2)) {
        pts[m++] = {t[i] + r1 * d, true, false};
        pts[m++] = {t[i] + r2 * d, false, true};
      }
    }
  }

  // Merge coincident neighbours (a vertex lying on the circle).
  WalkPoint merged[9];
  int q = 0;
  const double tol = 1e-12 * delta;
  for (int i = 0; i < m; ++i) {
    if (q > 0 && dist(merged[q - 1].p, pts[i].p) <= tol) {
      merged[q - 1].entry |= pts[i].entry;
      merged[q - 1].exit |= pts[i].exit;
      continue;
    }
    merged[q++] = pts[i];
  }
  while (q > 1 && dist(merged[q - 1].p, merged[0].p) <= tol) {
    merged[0].entry |= merged[q - 1].entry;
    merged[0].exit |= merged[q - 1].exit;
    --q;
  }

  double h = longest_edge(t);
  double cutoff = kSliver * h * h;
  if (q == 0) {
    if (!point_in_triangle(t, x)) return;
    // Disk strictly inside the triangle: two half disks.
    cut.type = Overlap::Partial;
    Point e{delta, 0.0};
    cut.caps.push_back({x, delta, x + e, x - e, 0.5 * std::numbers::pi});
    cut.caps.push_back({x, delta, x - e, x + e, 0.5 * std::numbers::pi});
    return;
  }
  cut.type = Overlap::Partial;
  for (int i = 0; i < q; ++i) cut.polygon.push_back(merged[i].p);
  if (cut.polygon.size() < 3 || polygon_area(cut.polygon) < cutoff) cut.polygon.clear();
  if (q >= 2) {
    for (int i = 0; i < q; ++i) {
      const WalkPoint& a = merged[i];
      const WalkPoint& b = merged[(i + 1) % q];
      if (!(a.exit && b.entry)) continue;
      Cap cap = make_cap(x, delta, a.p, b.p);
      if (cap_area_from_angle(cap.theta, delta) >= cutoff) cut.caps.push_back(cap);
    }
  }
}

}  // namespace

BallCut cut_triangle(const Triangle& t, Point x, double delta) {
  BallCut cut;
  cut_triangle_into(t, x, delta, cut);
  return cut;
}

std::vector<Point> intersection_polygon(const Triangle& t, Point x, double delta) {
  return cut_triangle(t, x, delta).polygon;
}

double polygon_area(const std::vector<Point>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += cross(p[i], p[(i + 1) % p.size()]);
  return 0.5 * s;
}

std::vector<Triangle> fan_triangulate(const std::vector<Point>& p) {
  std::vector<Triangle> out;
  for (std::size_t i = 1; i + 1 < p.size(); ++i) out.push_back({p[0], p[i], p[i + 1]});
  return out;
}

double cap_area_from_angle(double theta, double delta) {
  double t2 = 2 * theta;
  double g;
  if (t2 < 1e-3) {
    double s = t2 * t2;
    g = t2 * s / 6.0 * (1.0 - s / 20.0 + s * s / 840.0);
  } else {
    g = t2 - std::sin(t2);
  }
  return 0.5 * delta * delta * g;
}

double cap_area(double cord, double delta) {
  if (cord < 0 || cord > 2 * delta * (1 + 1e-15)) throw std::invalid_argument("cap_area: cord out of range");
  double s = std::min(1.0, cord / (2 * delta));
  return delta * delta * (std::asin(s) - s * std::sqrt(1.0 - s * s));
}

CapPoint cap_centroid_rule(const Cap& cap) {
  double w = cap_area_from_angle(cap.theta, cap.radius);
  if (!(w > 0.0)) return {cap.center, 0.0};
  double s = std::sin(cap.theta);
  double d = 4.0 * cap.radius * cap.radius * cap.radius * s * s * s / (6.0 * w);
  Point u = cap.a - cap.center;
  double c = std::cos(cap.theta), sn = std::sin(cap.theta);
  Point dir = (1.0 / cap.radius) * Point{c * u.x - sn * u.y, sn * u.x + c * u.y};
  return {cap.center + d * dir, w};
}

std::vector<Triangle> approximate_cap_triangles(const Cap& cap, int t) {
  if (t < 1) throw std::invalid_argument("approximate_cap_triangles: t must be positive");
  std::vector<Point> arc(t + 2);
  Point u = cap.a - cap.center;
  double step = 2 * cap.theta / (t + 1);
  arc[0] = cap.a;
  arc[t + 1] = cap.b;
  for (int i = 1; i <= t; ++i) {
    double c = std::cos(i * step), s = std::sin(i * step);
    arc[i] = cap.center + Point{c * u.x - s * u.y, s * u.x + c * u.y};
  }
  std::vector<Triangle> out;
  for (int i = 1; i <= t; ++i) out.push_back({arc[0], arc[i], arc[i + 1]});
  return out;
}

bool point_in_cap(const Cap& cap, Point y) {
  if (dist2(y, cap.center) > cap.radius * cap.radius) return false;
  // The arc lies to the right of the cord a->b.
  return cross(cap.b - cap.a, y - cap.a) <= 0.0;
}

void cut_cells(const Triangle& t, Point x, double delta, BallStrategy strategy, int cap_triangles,
               int element, std::vector<CellRef>& out) {
  thread_local BallCut cut;
  cut_triangle_into(t, x, delta, cut);
  if (cut.type == Overlap::None) return;
  if (cut.type == Overlap::Full) {
    CellRef c{element, {}};
    c.cell.whole = true;
    c.cell.tri = t;
    out.push_back(c);
    return;
  }
  for (std::size_t i = 1; i + 1 < cut.polygon.size(); ++i) {
    CellRef c{element, {}};
    c.cell.tri = {cut.polygon[0], cut.polygon[i], cut.polygon[i + 1]};
    out.push_back(c);
  }
  if (strategy == BallStrategy::NoCaps) return;
  for (const Cap& cap : cut.caps) {
    if (strategy == BallStrategy::ExactCaps) {
      CellRef c{element, {}};
      c.cell.kind = QuadCell::Kind::Cap;
      c.cell.cap = cap;
      out.push_back(c);
    } else {
      for (const Triangle& tri : approximate_cap_triangles(cap, cap_triangles)) {
        CellRef c{element, {}};
        c.cell.tri = tri;
        out.push_back(c);
      }
    }
  }
}

void decompose_ball_into(const Mesh& mesh, Point x, double delta, BallStrategy strategy, int cap_triangles,
                         int outer_element, BallDecomposition& out, std::vector<int>& scratch) {
  out.cells.clear();
  out.strategy = strategy;
  out.center = x;
  Point c = x;
  if (is_shifted(strategy)) {
    int k = outer_element >= 0 ? outer_element : locate_element(mesh, x);
    if (k < 0) throw std::invalid_argument("decompose_ball: point outside the mesh");
    c = mesh.barycenters[k];
  }
  out.shifted_center = c;
  BallStrategy base = base_strategy(strategy);
  elements_near(mesh, c, delta + mesh.h_max, scratch);
  const double d2 = delta * delta;
  for (int k : scratch) {
    switch (base) {
      case BallStrategy::Barycenter:
        if (dist2(mesh.barycenters[k], c) <= d2) {
          CellRef r{k, {}};
          r.cell.whole = true;
          r.cell.tri = mesh.triangle(k);
          out.cells.push_back(r);
        }
        break;
      case BallStrategy::Overlap:
        if (classify_overlap(mesh.triangle(k), c, delta) != Overlap::None) {
          CellRef r{k, {}};
          r.cell.whole = true;
          r.cell.tri = mesh.triangle(k);
          out.cells.push_back(r);
        }
        break;
      default:
        cut_cells(mesh.triangle(k), c, delta, base, cap_triangles, k, out.cells);
    }
  }
}

BallDecomposition decompose_ball(const Mesh& mesh, Point x, double delta, BallStrategy strategy,
                                 int cap_triangles, int outer_element) {
  BallDecomposition d;
  std::vector<int> scratch;
  decompose_ball_into(mesh, x, delta, strategy, cap_triangles, outer_element, d, scratch);
  return d;
}

namespace {

bool point_in_cell(const QuadCell& c, Point y) {
  if (c.kind == QuadCell::Kind::Cap) return point_in_cap(c.cap, y);
  return point_in_triangle(c.tri, y);
}

// Bounding-box bucket index over the cells of one decomposition.
struct CellIndex {
  Point lo;
  double cell = 1.0;
  int nx = 1, ny = 1;
  std::vector<std::vector<int>> bins;

  CellIndex(const BallDecomposition& d, double h) {
    if (d.cells.empty()) return;
    Point hi = lo = d.shifted_center;
    std::vector<std::pair<Point, Point>> boxes;
    for (const auto& r : d.cells) {
      Point a, b;
      if (r.cell.kind == QuadCell::Kind::Cap) {
        const Cap& cap = r.cell.cap;
        a = b = cap.a;
        for (const auto& t : approximate_cap_triangles(cap, 8))
          for (const Point& p : t) {
            a = {std::min(a.x, p.x), std::min(a.y, p.y)};
            b = {std::max(b.x, p.x), std::max(b.y, p.y)};
          }
        double pad = cap.radius * (1 - std::cos(cap.theta / 9.0)) + 1e-15;
        a = a - Point{pad, pad};
        b = b + Point{pad, pad};
      } else {
        a = b = r.cell.tri[0];
        for (const Point& p : r.cell.tri) {
          a = {std::min(a.x, p.x), std::min(a.y, p.y)};
          b = {std::max(b.x, p.x), std::max(b.y, p.y)};
        }
      }
      boxes.push_back({a, b});
      lo = {std::min(lo.x, a.x), std::min(lo.y, a.y)};
      hi = {std::max(hi.x, b.x), std::max(hi.y, b.y)};
    }
    cell = h > 0 ? h : 1.0;
    nx = static_cast<int>((hi.x - lo.x) / cell) + 1;
    ny = static_cast<int>((hi.y - lo.y) / cell) + 1;
    bins.assign(static_cast<std::size_t>(nx) * ny, {});
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      int x0 = ix(boxes[i].first.x), x1 = ix(boxes[i].second.x);
      int y0 = iy(boxes[i].first.y), y1 = iy(boxes[i].second.y);
      for (int yy = y0; yy <= y1; ++yy)
        for (int xx = x0; xx <= x1; ++xx) bins[yy * nx + xx].push_back(static_cast<int>(i));
    }
  }
  int ix(double v) const { return std::clamp(static_cast<int>((v - lo.x) / cell), 0, nx - 1); }
  int iy(double v) const { return std::clamp(static_cast<int>((v - lo.y) / cell), 0, ny - 1); }

  bool contains(const BallDecomposition& d, Point y) const {
    if (bins.empty()) return false;
    if (y.x < lo.x || y.y < lo.y) return false;
    int xx = static_cast<int>((y.x - lo.x) / cell), yy = static_cast<int>((y.y - lo.y) / cell);
    if (xx >= nx || yy >= ny) return false;
    for (int i : bins[yy * nx + xx])
      if (point_in_cell(d.cells[i].cell, y)) return true;
    return false;
  }
};

}  // namespace

bool point_in_decomposition(const Mesh& mesh, const BallDecomposition& d, Point y) {
  (void)mesh;
  for (const auto& r : d.cells)
    if (point_in_cell(r.cell, y)) return true;
  return false;
}

AreaEstimate ball_difference_area(const Mesh& mesh, Point x, double delta, BallStrategy strategy,
                                  long resolution, int cap_triangles, std::uint64_t seed) {
  if (resolution < 1000) throw std::invalid_argument("ball_difference_area: resolution below 1000");
  BallDecomposition d = decompose_ball(mesh, x, delta, strategy, cap_triangles);
  CellIndex index(d, mesh.h_max);
  double s = dist(x, d.shifted_center);
  double r_in = std::max(0.0, delta - mesh.h_max - s) * (1 - 1e-9);
  double r_out = (delta + mesh.h_max + s) * (1 + 1e-9);
  // Strata are uniform in r^2 and angle, so each has equal area.
  double width = r_out - r_in, mid = 0.5 * (r_in + r_out);
  long nr = std::max(1L, std::lround(std::sqrt(resolution * width / (2 * std::numbers::pi * mid))));
  long nt = (resolution + nr - 1) / nr;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double a2 = r_in * r_in, b2 = r_out * r_out;
  long hits = 0;
  for (long i = 0; i < nr; ++i)
    for (long j = 0; j < nt; ++j) {
      double r = std::sqrt(a2 + (b2 - a2) * (i + U(rng)) / nr);
      double phi = 2 * std::numbers::pi * (j + U(rng)) / nt;
      Point y = x + Point{r * std::cos(phi), r * std::sin(phi)};
      bool in_exact = dist2(y, x) <= delta * delta;
      bool in_approx = index.contains(d, y);
      hits += in_exact != in_approx;
    }
  long n = nr * nt;
  double area = std::numbers::pi * (b2 - a2);
  double p = static_cast<double>(hits) / n;
  return {area * p, area * std::sqrt(p * (1 - p) / n), n};
}

}  // namespace nlfem
