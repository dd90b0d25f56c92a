#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlfem/point.hpp"

namespace nlfem {

enum class Region : std::uint8_t { Omega = 0, OmegaI = 1 };

struct Element {
  std::array<int, 3> v{};
  Region region = Region::Omega;
};

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform bucket grid over element barycenters, used for range queries
// and point location.
struct BucketGrid {
  Point lo;
  double cell = 1.0;
  int nx = 0, ny = 0;
  std::vector<int> start;  // size nx*ny+1
  std::vector<int> items;
};

// Triangulation of Omega = (0,1)^2 together with its interaction layer.
struct Mesh {
  std::vector<Point> vertices;
  std::vector<Element> elements;
  // node_of_vertex[v] is the unknown index of vertex v; interior nodes of
  // Omega occupy [0, num_interior), the rest belong to the layer.
  std::vector<int> node_of_vertex;
  std::vector<int> vertex_of_node;
  int num_interior = 0;
  int num_omega_elements = 0;
  double delta = 0.0;
  double h_min = 0.0;
  double h_max = 0.0;
  std::vector<Point> barycenters;
  std::vector<double> areas;
  BucketGrid buckets;

  Triangle triangle(int k) const {
    const auto& e = elements[k].v;
    return {vertices[e[0]], vertices[e[1]], vertices[e[2]]};
  }
  bool is_interior_vertex(int v) const { return node_of_vertex[v] < num_interior; }
};

struct MeshStatistics {
  double h_min, h_max;
  int J, J_omega, K, K_omega;
};

Mesh build_uniform_grid(int n, double delta);
Mesh build_squared_grid(int n, double delta);
// Raw contents of a mesh file, before validation.
struct MeshFile {
  double delta = 0.0;
  std::vector<Point> vertices;
  std::vector<Element> elements;
};
MeshFile read_mesh_file(const std::string& path);
// delta <= 0 takes the horizon from the file header.
Mesh load_mesh(const std::string& path, double delta = 0.0);
void save_mesh(const Mesh& mesh, const std::string& path);

// Validates the triangulation and fills the derived fields. Elements are
// reoriented counterclockwise.
Mesh finalize_mesh(std::vector<Point> vertices, std::vector<Element> elements, double delta);

Point element_barycenter(const Mesh& mesh, int k);
MeshStatistics mesh_statistics(const Mesh& mesh);

// Elements whose barycenter lies strictly closer than r to x, ascending.
void elements_near(const Mesh& mesh, Point x, double r, std::vector<int>& out);
// Element containing y, or -1.
int locate_element(const Mesh& mesh, Point y);

}  // namespace nlfem
