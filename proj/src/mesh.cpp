#include "nlfem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace nlfem {

namespace {

constexpr double kTol = 1e-12;

bool strictly_inside_omega(Point p) {
  return p.x > kTol && p.x < 1.0 - kTol && p.y > kTol && p.y < 1.0 - kTol;
}

bool in_closed_omega(Point p) {
  return p.x >= -kTol && p.x <= 1.0 + kTol && p.y >= -kTol && p.y <= 1.0 + kTol;
}

double distance_to_omega(Point p) {
  double dx = std::max({0.0, -p.x, p.x - 1.0});
  double dy = std::max({0.0, -p.y, p.y - 1.0});
  return std::hypot(dx, dy);
}

void build_buckets(Mesh& m) {
  BucketGrid& g = m.buckets;
  Point lo = m.barycenters.empty() ? Point{} : m.barycenters[0];
  Point hi = lo;
  for (const Point& b : m.barycenters) {
    lo = {std::min(lo.x, b.x), std::min(lo.y, b.y)};
    hi = {std::max(hi.x, b.x), std::max(hi.y, b.y)};
  }
  g.lo = lo;
  g.cell = m.h_max > 0 ? m.h_max : 1.0;
  g.nx = static_cast<int>((hi.x - lo.x) / g.cell) + 1;
  g.ny = static_cast<int>((hi.y - lo.y) / g.cell) + 1;
  std::vector<int> count(static_cast<std::size_t>(g.nx) * g.ny + 1, 0);
  auto bucket_of = [&](Point p) {
    int ix = std::clamp(static_cast<int>((p.x - g.lo.x) / g.cell), 0, g.nx - 1);
    int iy = std::clamp(static_cast<int>((p.y - g.lo.y) / g.cell), 0, g.ny - 1);
    return iy * g.nx + ix;
  };
  for (const Point& b : m.barycenters) ++count[bucket_of(b) + 1];
  for (std::size_t i = 1; i < count.size(); ++i) count[i] += count[i - 1];
  g.start = count;
  g.items.assign(m.barycenters.size(), 0);
  std::vector<int> fill(count.begin(), count.end() - 1);
  for (std::size_t k = 0; k < m.barycenters.size(); ++k)
    g.items[fill[bucket_of(m.barycenters[k])]++] = static_cast<int>(k);
}

template <class F>
void for_each_bucket_item(const Mesh& m, Point x, double r, F&& f) {
  const BucketGrid& g = m.buckets;
  int x0 = std::max(0, static_cast<int>(std::floor((x.x - r - g.lo.x) / g.cell)));
  int x1 = std::min(g.nx - 1, static_cast<int>(std::floor((x.x + r - g.lo.x) / g.cell)));
  int y0 = std::max(0, static_cast<int>(std::floor((x.y - r - g.lo.y) / g.cell)));
  int y1 = std::min(g.ny - 1, static_cast<int>(std::floor((x.y + r - g.lo.y) / g.cell)));
  for (int iy = y0; iy <= y1; ++iy)
    for (int ix = x0; ix <= x1; ++ix) {
      int b = iy * g.nx + ix;
      for (int i = g.start[b]; i < g.start[b + 1]; ++i) f(g.items[i]);
    }
}

std::vector<Point> grid_vertices(int n, int m, std::vector<std::vector<int>>& id) {
  int side = n + 2 * m + 1;
  std::vector<Point> v;
  v.reserve(static_cast<std::size_t>(side) * side);
  id.assign(side, std::vector<int>(side));
  for (int j = 0; j < side; ++j)
    for (int i = 0; i < side; ++i) {
      id[j][i] = static_cast<int>(v.size());
      v.push_back({static_cast<double>(i - m) / n, static_cast<double>(j - m) / n});
    }
  return v;
}

std::vector<Element> grid_elements(int n, int m, const std::vector<std::vector<int>>& id) {
  int cells = n + 2 * m;
  std::vector<Element> e;
  e.reserve(2 * static_cast<std::size_t>(cells) * cells);
  for (int j = 0; j < cells; ++j)
    for (int i = 0; i < cells; ++i) {
      int a = id[j][i], b = id[j][i + 1], c = id[j + 1][i + 1], d = id[j + 1][i];
      bool inside = i >= m && i < m + n && j >= m && j < m + n;
      Region r = inside ? Region::Omega : Region::OmegaI;
      e.push_back({{a, b, c}, r});
      e.push_back({{a, c, d}, r});
    }
  return e;
}

void check_grid_args(int n, double delta) {
  if (n < 2) throw std::invalid_argument("grid: n must be at least 2");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw std::invalid_argument("grid: delta must be positive");
}

int layer_cells(int n, double delta) {
  return std::max(1, static_cast<int>(std::ceil(delta * n - 1e-9)));
}

}  // namespace

Mesh finalize_mesh(std::vector<Point> vertices, std::vector<Element> elements, double delta) {
  if (!(delta > 0.0)) throw MeshError("mesh: delta must be positive");
  const int nv = static_cast<int>(vertices.size());
  for (const Point& p : vertices)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw MeshError("mesh: non-finite vertex");

  Mesh m;
  m.delta = delta;
  m.h_min = std::numeric_limits<double>::infinity();
  m.h_max = 0.0;
  for (auto& e : elements) {
    for (int i : e.v)
      if (i < 0 || i >= nv) throw MeshError("mesh: vertex index out of range");
    if (e.v[0] == e.v[1] || e.v[1] == e.v[2] || e.v[0] == e.v[2])
      throw MeshError("mesh: repeated vertex in element");
    Triangle t{vertices[e.v[0]], vertices[e.v[1]], vertices[e.v[2]]};
    double h = longest_edge(t);
    m.h_min = std::min(m.h_min, h);
    m.h_max = std::max(m.h_max, h);
  }
  if (elements.empty()) throw MeshError("mesh: no elements");

  for (auto& e : elements) {
    Triangle t{vertices[e.v[0]], vertices[e.v[1]], vertices[e.v[2]]};
    double a = signed_area(t);
    if (std::abs(a) <= 1e-14 * m.h_max * m.h_max) throw MeshError("mesh: degenerate or inverted element");
    if (a < 0) std::swap(e.v[1], e.v[2]);
  }

  // Region consistency and straddling.
  for (const auto& e : elements) {
    Point b = (1.0 / 3) * (vertices[e.v[0]] + vertices[e.v[1]] + vertices[e.v[2]]);
    if (e.region == Region::Omega) {
      for (int i : e.v)
        if (!in_closed_omega(vertices[i])) throw MeshError("mesh: element straddles the boundary of Omega");
      if (!strictly_inside_omega(b)) throw MeshError("mesh: Omega element outside Omega");
    } else {
      for (int i : e.v)
        if (strictly_inside_omega(vertices[i]))
          throw MeshError("mesh: element straddles the boundary of Omega");
      if (strictly_inside_omega(b)) throw MeshError("mesh: layer element inside Omega");
    }
  }

  // Conformity: interior edges shared by exactly two consistently oriented
  // elements; boundary edges form closed loops enclosing the total area.
  std::map<std::pair<int, int>, std::pair<int, int>> edges;  // key -> (count, first direction)
  double total_area = 0.0;
  for (const auto& e : elements) {
    total_area += signed_area({vertices[e.v[0]], vertices[e.v[1]], vertices[e.v[2]]});
    for (int i = 0; i < 3; ++i) {
      int a = e.v[i], b = e.v[(i + 1) % 3];
      auto key = std::minmax(a, b);
      auto [it, fresh] = edges.try_emplace({key.first, key.second}, 0, a < b ? 1 : -1);
      it->second.first++;
      if (!fresh) {
        if (it->second.first > 2) throw MeshError("mesh: edge shared by more than two elements");
        if (it->second.second == (a < b ? 1 : -1)) throw MeshError("mesh: overlapping elements");
      }
    }
  }
  std::vector<int> boundary_degree(nv, 0);
  double enclosed = 0.0;
  for (const auto& [key, info] : edges) {
    if (info.first != 1) continue;
    boundary_degree[key.first]++;
    boundary_degree[key.second]++;
    Point a = vertices[key.first], b = vertices[key.second];
    if (info.second < 0) std::swap(a, b);
    enclosed += 0.5 * cross(a, b);
    Point mid = 0.5 * (a + b);
    for (Point p : {a, b, mid})
      if (distance_to_omega(p) < delta * (1.0 - 1e-12))
        throw MeshError("mesh: interaction layer thinner than delta");
  }
  for (int d : boundary_degree)
    if (d != 0 && d != 2) throw MeshError("mesh: non-conforming triangulation (hanging node)");
  if (std::abs(enclosed - total_area) > 1e-10 * std::max(1.0, total_area))
    throw MeshError("mesh: elements overlap or leave gaps");

  // Corners of Omega must be mesh vertices.
  for (Point c : {Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}}) {
    bool found = std::any_of(vertices.begin(), vertices.end(),
                             [&](Point p) { return dist(p, c) <= kTol; });
    if (!found) throw MeshError("mesh: corner of Omega is not a vertex");
  }

  // Node ordering: vertices touching only Omega elements come first.
  std::vector<char> used(nv, 0), layer(nv, 0);
  for (const auto& e : elements)
    for (int i : e.v) {
      used[i] = 1;
      if (e.region == Region::OmegaI) layer[i] = 1;
    }
  m.node_of_vertex.assign(nv, -1);
  for (int v = 0; v < nv; ++v) {
    if (!used[v]) throw MeshError("mesh: unreferenced vertex");
    if (!layer[v]) {
      m.node_of_vertex[v] = static_cast<int>(m.vertex_of_node.size());
      m.vertex_of_node.push_back(v);
    }
  }
  m.num_interior = static_cast<int>(m.vertex_of_node.size());
  for (int v = 0; v < nv; ++v)
    if (layer[v]) {
      m.node_of_vertex[v] = static_cast<int>(m.vertex_of_node.size());
      m.vertex_of_node.push_back(v);
    }
  for (int v = 0; v < nv; ++v)
    if ((m.node_of_vertex[v] < m.num_interior) != strictly_inside_omega(vertices[v]))
      throw MeshError("mesh: interior vertex not covered by Omega elements");

  m.vertices = std::move(vertices);
  m.elements = std::move(elements);
  m.barycenters.resize(m.elements.size());
  m.areas.resize(m.elements.size());
  for (std::size_t k = 0; k < m.elements.size(); ++k) {
    m.barycenters[k] = element_barycenter(m, static_cast<int>(k));
    m.areas[k] = signed_area(m.triangle(static_cast<int>(k)));
    if (m.elements[k].region == Region::Omega) ++m.num_omega_elements;
  }
  build_buckets(m);
  return m;
}

Mesh build_uniform_grid(int n, double delta) {
  check_grid_args(n, delta);
  int m = layer_cells(n, delta);
  std::vector<std::vector<int>> id;
  auto v = grid_vertices(n, m, id);
  auto e = grid_elements(n, m, id);
  return finalize_mesh(std::move(v), std::move(e), delta);
}

Mesh build_squared_grid(int n, double delta) {
  check_grid_args(n, delta);
  int m = layer_cells(n, delta);
  std::vector<std::vector<int>> id;
  auto v = grid_vertices(n, m, id);
  // Whole horizontal strip 0 < x2 < 1, so the side layers follow the
  // interior rows and no element is sheared across x1 = 0 or x1 = 1.
  for (Point& p : v)
    if (p.y > 0.0 && p.y < 1.0) p.y = p.y * p.y;
  auto e = grid_elements(n, m, id);
  try {
    return finalize_mesh(std::move(v), std::move(e), delta);
  } catch (const MeshError& err) {
    throw MeshError(std::string("squared grid construction failed: ") + err.what());
  }
}

MeshFile read_mesh_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open mesh file " + path);
  std::stringstream clean;
  std::string line;
  while (std::getline(in, line)) {
    auto pos = line.find('#');
    if (pos != std::string::npos) line.erase(pos);
    clean << line << '\n';
  }
  std::string magic;
  int version = 0;
  double file_delta = 0.0;
  if (!(clean >> magic >> version >> file_delta) || magic != "nlmesh" || version != 1)
    throw MeshError("mesh parse error: bad header");
  long nv = 0, ne = 0;
  if (!(clean >> nv >> ne) || nv < 3 || ne < 1) throw MeshError("mesh parse error: bad counts");
  std::vector<Point> v(nv);
  for (auto& p : v)
    if (!(clean >> p.x >> p.y)) throw MeshError("mesh parse error: vertex list");
  std::vector<Element> e(ne);
  for (auto& el : e) {
    int r = -1;
    if (!(clean >> el.v[0] >> el.v[1] >> el.v[2])) throw MeshError("mesh parse error: element list");
    if (!(clean >> r)) throw MeshError("mesh parse error: unlabeled region");
    if (r != 0 && r != 1) throw MeshError("mesh parse error: unlabeled region");
    el.region = r == 0 ? Region::Omega : Region::OmegaI;
  }
  std::string extra;
  if (clean >> extra) throw MeshError("mesh parse error: trailing data");
  return {file_delta, std::move(v), std::move(e)};
}

Mesh load_mesh(const std::string& path, double delta) {
  MeshFile f = read_mesh_file(path);
  return finalize_mesh(std::move(f.vertices), std::move(f.elements), delta > 0 ? delta : f.delta);
}

void save_mesh(const Mesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MeshError("cannot write mesh file " + path);
  out << std::setprecision(17);
  out << "nlmesh 1 " << mesh.delta << "\n" << mesh.vertices.size() << " " << mesh.elements.size() << "\n";
  for (const Point& p : mesh.vertices) out << p.x << " " << p.y << "\n";
  for (const Element& e : mesh.elements)
    out << e.v[0] << " " << e.v[1] << " " << e.v[2] << " " << static_cast<int>(e.region) << "\n";
}

Point element_barycenter(const Mesh& mesh, int k) {
  const auto& e = mesh.elements[k].v;
  const auto& v = mesh.vertices;
  return {(v[e[0]].x + v[e[1]].x + v[e[2]].x) / 3.0, (v[e[0]].y + v[e[1]].y + v[e[2]].y) / 3.0};
}

MeshStatistics mesh_statistics(const Mesh& mesh) {
  return {mesh.h_min, mesh.h_max, static_cast<int>(mesh.vertex_of_node.size()), mesh.num_interior,
          static_cast<int>(mesh.elements.size()), mesh.num_omega_elements};
}

void elements_near(const Mesh& mesh, Point x, double r, std::vector<int>& out) {
  out.clear();
  double r2 = r * r;
  for_each_bucket_item(mesh, x, r, [&](int k) {
    if (dist2(mesh.barycenters[k], x) < r2) out.push_back(k);
  });
  std::sort(out.begin(), out.end());
}

int locate_element(const Mesh& mesh, Point y) {
  int found = -1;
  for_each_bucket_item(mesh, y, mesh.h_max, [&](int k) {
    if (found >= 0 && k > found) return;
    Triangle t = mesh.triangle(k);
    double a = mesh.areas[k];
    double l0 = 0.5 * cross(t[1] - y, t[2] - y) / a;
    double l1 = 0.5 * cross(t[2] - y, t[0] - y) / a;
    double l2 = 1.0 - l0 - l1;
    const double eps = -1e-12;
    if (l0 >= eps && l1 >= eps && l2 >= eps && (found < 0 || k < found)) found = k;
  });
  return found;
}

}  // namespace nlfem
