#pragma once

#include <array>
#include <vector>

#include "nlfem/point.hpp"

namespace nlfem {

struct Mesh;

enum class RuleKind { Centroid1, Gauss3, Gauss4, VertexMidside7, ErrorRule };

// Points are barycentric coordinates on the reference triangle
// (0,0), (1,0), (0,1); weights sum to its area 1/2.
struct QuadratureRule {
  RuleKind kind;
  std::vector<std::array<double, 3>> points;
  std::vector<double> weights;
  int precision = 0;
};

struct MappedRule {
  std::vector<Point> points;
  std::vector<double> weights;
};

const QuadratureRule& rule(RuleKind kind);
const char* rule_name(RuleKind kind);

// Exact integral of x^a y^b over the reference triangle.
double reference_monomial_integral(int a, int b);

MappedRule map_to_cell(const QuadratureRule& r, const Triangle& cell);

// Gauss4 when the barycenters of k and kp are closer than delta - h_max,
// VertexMidside7 otherwise.
RuleKind select_outer_rule(const Mesh& mesh, int k, int kp, double delta);

}  // namespace nlfem
