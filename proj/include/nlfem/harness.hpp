#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nlfem/assembly.hpp"
#include "nlfem/geometry.hpp"
#include "nlfem/mesh.hpp"
#include "nlfem/solver.hpp"

namespace nlfem {

struct GridSpec {
  enum class Kind { Uniform, Squared, Files };
  Kind kind = Kind::Uniform;
  std::vector<int> levels;
  std::vector<std::string> files;
  std::size_t size() const { return kind == Kind::Files ? files.size() : levels.size(); }
};

// "uniform:10,20,40", "squared:10,20", "files:a.nlmesh,b.nlmesh"
GridSpec parse_grids(const std::string& text);
Mesh build_level(const GridSpec& grids, std::size_t i, double delta);

struct StudyConfig {
  GridSpec grids;
  BallStrategy strategy = BallStrategy::ExactCaps;
  double delta = 0.1;
  int cap_triangles = 1;
  double tol = 1e-12;
  int threads = 1;
};

struct ReportRow {
  double h_min = 0, h_max = 0;
  int J_omega = 0;
  double l2_error = 0;
  std::optional<double> rate;
  double assembly_seconds = 0;
  bool operator==(const ReportRow&) const = default;
};

struct ConvergenceReport {
  BallStrategy strategy = BallStrategy::ExactCaps;
  std::vector<ReportRow> rows;
};

struct LevelResult {
  Mesh mesh;
  LinearSystem system;
  SolveReport solve;
  double assembly_seconds = 0;
};

// Assemble and solve the manufactured problem on one mesh.
LevelResult solve_manufactured(const Mesh& mesh, BallStrategy strategy, int cap_triangles, double tol,
                               int threads);

double l2_error(const Mesh& mesh, const std::vector<double>& coefficients,
                const std::function<double(Point)>& u);

// rate_i = log(e_{i-1}/e_i) / log(h_{i-1}/h_i); the first entry is empty.
std::vector<std::optional<double>> pairwise_rates(const std::vector<double>& h, const std::vector<double>& e);
// Least-squares slope of log(value) against log(h).
double fitted_rate(const std::vector<double>& h, const std::vector<double>& value);

ConvergenceReport run_convergence(const StudyConfig& config,
                                  const std::function<void(const ReportRow&)>& progress = {});
std::string to_csv(const ConvergenceReport& report);
ConvergenceReport parse_csv(const std::string& text);
// Assembly times divided by the largest one.
std::vector<double> relative_times(const ConvergenceReport& report);

struct GeomConfig {
  GridSpec grids;
  BallStrategy strategy = BallStrategy::NoCaps;
  double delta = 0.1;
  int samples = 50;
  long resolution = 4000000;
  std::uint64_t seed = 20240601;
  int cap_triangles = 1;
};

struct GeomLevel {
  double h_max = 0;
  double sup_area = 0;
  double std_error = 0;  // of the sample attaining the sup
};

struct GeomErrorReport {
  BallStrategy strategy = BallStrategy::NoCaps;
  std::vector<GeomLevel> levels;
  std::optional<double> rate;  // not reported for exactcaps
};

GeomErrorReport run_geometric_error(const GeomConfig& config);
std::string to_csv(const GeomErrorReport& report);

struct PatchConfig {
  GridSpec grids;
  std::vector<BallStrategy> strategies;
  double delta = 0.1;
  int cap_triangles = 1;
  double tol = 1e-12;
  int threads = 1;
};

struct PatchResult {
  std::string test;
  BallStrategy strategy = BallStrategy::ExactCaps;
  std::string grid;
  double error = 0;
  double threshold = 0;
  bool pass = false;
};

std::vector<PatchResult> run_patch_tests(const PatchConfig& config);

}  // namespace nlfem
