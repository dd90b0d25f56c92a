#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "nlfem/harness.hpp"

using namespace nlfem;

namespace {

enum ExitCode { kOk = 0, kBadArgs = 2, kNumerical = 3, kMeshInvalid = 4 };

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  out << text;
}

GridSpec checked_grids(const std::string& text, bool allow_fine) {
  GridSpec g = parse_grids(text);
  for (int n : g.levels)
    if (n > 80 && !allow_fine) throw std::invalid_argument("levels above n=80 need --allow-fine");
  return g;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlocal finite-element toolkit with approximate interaction balls"};
  app.require_subcommand(1);

  std::string ball = "exactcaps", grids = "uniform:10,20,40,80", out, mesh_path, matrix_path, rhs_path;
  double delta = 0.1, tol = 1e-12;
  int cap_triangles = 1, threads = 1, samples = 50;
  long resolution = 4000000;
  std::uint64_t seed = 20240601;
  bool allow_fine = false;

  auto common = [&](CLI::App* c) {
    c->add_option("--ball", ball, "Ball strategy");
    c->add_option("--delta", delta, "Horizon");
    c->add_option("--cap-triangles", cap_triangles, "Triangles per cap for approxcaps");
    c->add_option("--threads", threads, "Assembly workers (0 = all cores)");
  };

  auto* conv = app.add_subcommand("convergence", "Manufactured-solution convergence study");
  common(conv);
  conv->add_option("--grids", grids, "uniform:n1,n2,... | squared:... | files:a,b,...");
  conv->add_option("--tol", tol, "CG relative tolerance");
  conv->add_option("--out", out, "CSV output path (stdout if omitted)");
  conv->add_option("--seed", seed, "Unused by this study; accepted for uniformity");
  conv->add_flag("--allow-fine", allow_fine, "Permit levels finer than n=80");

  auto* geom = app.add_subcommand("geom-error", "Ball difference area study");
  common(geom);
  geom->add_option("--grids", grids, "Grid levels");
  geom->add_option("--samples", samples, "Ball centers per level");
  geom->add_option("--resolution", resolution, "Sample points per center");
  geom->add_option("--seed", seed, "Random seed");
  geom->add_option("--out", out, "CSV output path");
  geom->add_flag("--allow-fine", allow_fine, "Permit levels finer than n=80");

  auto* patch = app.add_subcommand("patch", "Constant, zero and linear patch tests");
  common(patch);
  patch->add_option("--grids", grids, "Grid levels")->default_val("uniform:10");
  patch->add_option("--tol", tol, "CG relative tolerance");

  auto* asmb = app.add_subcommand("assemble", "Assemble the manufactured problem on a mesh file");
  common(asmb);
  asmb->add_option("--mesh", mesh_path, "Mesh file")->required();
  asmb->add_option("--export-matrix", matrix_path, "MatrixMarket output");
  asmb->add_option("--export-rhs", rhs_path, "Right-hand side output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadArgs;
  }

  try {
    if (cap_triangles < 1) throw std::invalid_argument("--cap-triangles must be positive");
    if (!(delta > 0)) throw std::invalid_argument("--delta must be positive");
    BallStrategy strategy = parse_strategy(ball);

    if (*conv) {
      StudyConfig cfg{checked_grids(grids, allow_fine), strategy, delta, cap_triangles, tol, threads};
      ConvergenceReport rep = run_convergence(cfg, [](const ReportRow& r) {
        std::fprintf(stderr, "J=%d h_max=%.4g error=%.3e (%.2fs)\n", r.J_omega, r.h_max, r.l2_error,
                     r.assembly_seconds);
      });
      emit(to_csv(rep), out);
      return kOk;
    }
    if (*geom) {
      GeomConfig cfg{checked_grids(grids, allow_fine), strategy, delta, samples, resolution, seed, cap_triangles};
      GeomErrorReport rep = run_geometric_error(cfg);
      std::string text = to_csv(rep);
      if (rep.rate) text += "# fitted rate " + std::to_string(*rep.rate) + "\n";
      emit(text, out);
      return kOk;
    }
    if (*patch) {
      PatchConfig cfg{checked_grids(grids, allow_fine), {strategy}, delta, cap_triangles, tol, threads};
      bool ok = true;
      for (const auto& r : run_patch_tests(cfg)) {
        std::printf("%s %s n=%s error=%.3e threshold=%.1e %s\n", r.test.c_str(), strategy_name(r.strategy),
                    r.grid.c_str(), r.error, r.threshold, r.pass ? "PASS" : "FAIL");
        ok = ok && r.pass;
      }
      return ok ? kOk : kNumerical;
    }
    if (*asmb) {
      double d = asmb->count("--delta") ? delta : 0.0;
      Mesh mesh = load_mesh(mesh_path, d);
      ManufacturedCase mc = manufactured_case(mesh.delta);
      auto t0 = std::chrono::steady_clock::now();
      LinearSystem sys = assemble(mesh, mc.kernel, mc.data, {strategy, cap_triangles, threads});
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("J_omega=%d nnz=%zu assembly_seconds=%.3f\n", mesh.num_interior, sys.matrix.nnz(), secs);
      if (!matrix_path.empty()) write_matrix_market(sys.matrix, matrix_path);
      if (!rhs_path.empty()) write_vector(sys.rhs, rhs_path);
      return kOk;
    }
  } catch (const MeshError& e) {
    std::fprintf(stderr, "mesh error: %s\n", e.what());
    return kMeshInvalid;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "solver error: %s\n", e.what());
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kBadArgs;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kOk;
}
