#include "nlfem/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

#include "nlfem/quadrature.hpp"

namespace nlfem {

GridSpec parse_grids(const std::string& text) {
  auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("grids: expected kind:list, got " + text);
  std::string kind = text.substr(0, colon);
  std::vector<std::string> items;
  std::stringstream ss(text.substr(colon + 1));
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) items.push_back(item);
  if (items.empty()) throw std::invalid_argument("grids: empty level list");
  GridSpec g;
  if (kind == "files") {
    g.kind = GridSpec::Kind::Files;
    g.files = items;
    return g;
  }
  if (kind == "uniform")
    g.kind = GridSpec::Kind::Uniform;
  else if (kind == "squared")
    g.kind = GridSpec::Kind::Squared;
  else
    throw std::invalid_argument("grids: unknown kind " + kind);
  for (const auto& it : items) {
    std::size_t pos = 0;
    int n = 0;
    try {
      n = std::stoi(it, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != it.size() || n < 2) throw std::invalid_argument("grids: bad level " + it);
    g.levels.push_back(n);
  }
  return g;
}

Mesh build_level(const GridSpec& grids, std::size_t i, double delta) {
  switch (grids.kind) {
    case GridSpec::Kind::Uniform: return build_uniform_grid(grids.levels.at(i), delta);
    case GridSpec::Kind::Squared: return build_squared_grid(grids.levels.at(i), delta);
    case GridSpec::Kind::Files: return load_mesh(grids.files.at(i), delta);
  }
  throw std::logic_error("unreachable");
}

double l2_error(const Mesh& mesh, const std::vector<double>& c, const std::function<double(Point)>& u) {
  if (c.size() != mesh.vertex_of_node.size()) throw std::invalid_argument("l2_error: coefficient size mismatch");
  const QuadratureRule& r = rule(RuleKind::ErrorRule);
  double s = 0.0;
  for (std::size_t k = 0; k < mesh.elements.size(); ++k) {
    if (mesh.elements[k].region != Region::Omega) continue;
    const auto& v = mesh.elements[k].v;
    Triangle t = mesh.triangle(static_cast<int>(k));
    double u0 = c[mesh.node_of_vertex[v[0]]], u1 = c[mesh.node_of_vertex[v[1]]], u2 = c[mesh.node_of_vertex[v[2]]];
    for (std::size_t q = 0; q < r.points.size(); ++q) {
      const auto& l = r.points[q];
      Point x = l[0] * t[0] + l[1] * t[1] + l[2] * t[2];
      double e = u(x) - (l[0] * u0 + l[1] * u1 + l[2] * u2);
      s += r.weights[q] * 2 * mesh.areas[k] * e * e;
    }
  }
  return std::sqrt(s);
}

std::vector<std::optional<double>> pairwise_rates(const std::vector<double>& h, const std::vector<double>& e) {
  std::vector<std::optional<double>> r(h.size());
  for (std::size_t i = 1; i < h.size(); ++i) r[i] = std::log(e[i - 1] / e[i]) / std::log(h[i - 1] / h[i]);
  return r;
}

double fitted_rate(const std::vector<double>& h, const std::vector<double>& v) {
  if (h.size() != v.size() || h.size() < 2) throw std::invalid_argument("fitted_rate: need two or more points");
  double n = static_cast<double>(h.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    double x = std::log(h[i]), y = std::log(v[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

LevelResult solve_manufactured(const Mesh& mesh, BallStrategy strategy, int cap_triangles, double tol,
                               int threads) {
  ManufacturedCase mc = manufactured_case(mesh.delta);
  LevelResult lr{mesh, {}, {}, 0.0};
  auto t0 = std::chrono::steady_clock::now();
  lr.system = assemble(mesh, mc.kernel, mc.data, {strategy, cap_triangles, threads});
  lr.assembly_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  SolveOptions so;
  so.tol = tol;
  lr.solve = solve(lr.system, so);
  return lr;
}

ConvergenceReport run_convergence(const StudyConfig& cfg, const std::function<void(const ReportRow&)>& progress) {
  if (cfg.grids.size() < 2) throw std::invalid_argument("convergence: at least two grid levels are required");
  ConvergenceReport rep;
  rep.strategy = cfg.strategy;
  ManufacturedCase mc = manufactured_case(cfg.delta);
  std::vector<double> hs, es;
  for (std::size_t i = 0; i < cfg.grids.size(); ++i) {
    Mesh mesh = build_level(cfg.grids, i, cfg.delta);
    LevelResult lr = solve_manufactured(mesh, cfg.strategy, cfg.cap_triangles, cfg.tol, cfg.threads);
    ReportRow row;
    row.h_min = mesh.h_min;
    row.h_max = mesh.h_max;
    row.J_omega = mesh.num_interior;
    row.l2_error = l2_error(mesh, full_coefficients(mesh, lr.solve.solution, lr.system.constraint_values), mc.u);
    row.assembly_seconds = lr.assembly_seconds;
    hs.push_back(row.h_max);
    es.push_back(row.l2_error);
    if (i > 0) row.rate = pairwise_rates(hs, es).back();
    rep.rows.push_back(row);
    if (progress) progress(row);
  }
  return rep;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_csv(const ConvergenceReport& report) {
  std::string s = "h_min,h_max,J_omega,l2_error,rate,assembly_seconds\n";
  for (const auto& r : report.rows) {
    s += fmt(r.h_min) + "," + fmt(r.h_max) + "," + std::to_string(r.J_omega) + "," + fmt(r.l2_error) + ",";
    if (r.rate) s += fmt(*r.rate);
    s += "," + fmt(r.assembly_seconds) + "\n";
  }
  return s;
}

ConvergenceReport parse_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "h_min,h_max,J_omega,l2_error,rate,assembly_seconds")
    throw std::invalid_argument("parse_csv: unexpected header");
  ConvergenceReport rep;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string item; std::getline(ls, item, ',');) f.push_back(item);
    if (line.back() == ',') f.push_back("");
    if (f.size() != 6) throw std::invalid_argument("parse_csv: expected 6 fields");
    ReportRow r;
    r.h_min = std::stod(f[0]);
    r.h_max = std::stod(f[1]);
    r.J_omega = std::stoi(f[2]);
    r.l2_error = std::stod(f[3]);
    if (!f[4].empty()) r.rate = std::stod(f[4]);
    r.assembly_seconds = std::stod(f[5]);
    rep.rows.push_back(r);
  }
  return rep;
}

std::vector<double> relative_times(const ConvergenceReport& report) {
  double m = 0.0;
  for (const auto& r : report.rows) m = std::max(m, r.assembly_seconds);
  std::vector<double> out;
  for (const auto& r : report.rows) out.push_back(m > 0 ? r.assembly_seconds / m : 0.0);
  return out;
}

GeomErrorReport run_geometric_error(const GeomConfig& cfg) {
  if (cfg.grids.size() < 3) throw std::invalid_argument("geom-error: at least three grid levels are required");
  if (cfg.samples < 50) throw std::invalid_argument("geom-error: at least 50 sampled centers are required");
  GeomErrorReport rep;
  rep.strategy = cfg.strategy;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<Point> centers(cfg.samples);
  for (auto& c : centers) c = {U(rng), U(rng)};
  std::vector<double> hs, sups;
  for (std::size_t i = 0; i < cfg.grids.size(); ++i) {
    Mesh mesh = build_level(cfg.grids, i, cfg.delta);
    GeomLevel lvl;
    lvl.h_max = mesh.h_max;
    for (std::size_t s = 0; s < centers.size(); ++s) {
      AreaEstimate a = ball_difference_area(mesh, centers[s], cfg.delta, cfg.strategy, cfg.resolution,
                                            cfg.cap_triangles, cfg.seed + 7919 * (s + 1));
      if (a.value > lvl.sup_area || s == 0) {
        lvl.sup_area = a.value;
        lvl.std_error = a.std_error;
      }
    }
    rep.levels.push_back(lvl);
    hs.push_back(lvl.h_max);
    sups.push_back(lvl.sup_area);
  }
  bool positive = std::all_of(sups.begin(), sups.end(), [](double v) { return v > 0; });
  if (cfg.strategy != BallStrategy::ExactCaps && positive) rep.rate = fitted_rate(hs, sups);
  return rep;
}

std::string to_csv(const GeomErrorReport& report) {
  std::string s = "h_max,sup_area,std_error\n";
  for (const auto& l : report.levels) s += fmt(l.h_max) + "," + fmt(l.sup_area) + "," + fmt(l.std_error) + "\n";
  return s;
}

std::vector<PatchResult> run_patch_tests(const PatchConfig& cfg) {
  std::vector<PatchResult> out;
  Kernel kernel = Kernel::constant(cfg.delta);
  SolveOptions so;
  so.tol = cfg.tol;
  for (std::size_t i = 0; i < cfg.grids.size(); ++i) {
    Mesh mesh = build_level(cfg.grids, i, cfg.delta);
    std::string grid = cfg.grids.kind == GridSpec::Kind::Files ? cfg.grids.files[i]
                                                                : std::to_string(cfg.grids.levels[i]);
    for (BallStrategy st : cfg.strategies) {
      AssemblyOptions ao{st, cfg.cap_triangles, cfg.threads};
      auto zero = [](Point) { return 0.0; };
      {
        ProblemData d{zero, [](Point) { return 1.0; }};
        LinearSystem sys = assemble(mesh, kernel, d, ao);
        SolveReport r = solve(sys, so);
        double err = 0.0;
        for (double v : r.solution) err = std::max(err, std::abs(v - 1.0));
        out.push_back({"constant", st, grid, err, 1e-9, err <= 1e-9});
      }
      {
        ProblemData d{zero, zero};
        LinearSystem sys = assemble(mesh, kernel, d, ao);
        SolveReport r = solve(sys, so);
        double err = 0.0;
        for (double v : r.solution) err = std::max(err, std::abs(v));
        out.push_back({"zero", st, grid, err, 0.0, err == 0.0});
      }
      if (st == BallStrategy::ExactCaps) {
        auto lin = [](Point p) { return 2.0 + 3.0 * p.x - p.y; };
        ProblemData d{zero, lin};
        LinearSystem sys = assemble(mesh, kernel, d, ao);
        SolveReport r = solve(sys, so);
        double err = l2_error(mesh, full_coefficients(mesh, r.solution, sys.constraint_values), lin);
        out.push_back({"linear", st, grid, err, 1e-8, err <= 1e-8});
      }
    }
  }
  return out;
}

}  // namespace nlfem
