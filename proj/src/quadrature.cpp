#include "nlfem/quadrature.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "nlfem/mesh.hpp"

namespace nlfem {

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

void add_orbit3(QuadratureRule& r, double a, double b, double w) {
  r.points.push_back({b, a, a});
  r.points.push_back({a, b, a});
  r.points.push_back({a, a, b});
  for (int i = 0; i < 3; ++i) r.weights.push_back(w);
}

void validate(const QuadratureRule& r) {
  double sum = 0.0;
  for (double w : r.weights) sum += w;
  if (std::abs(sum - 0.5) > 1e-15)
    throw std::logic_error(std::string("weights of ") + rule_name(r.kind) + " do not sum to 1/2");
  for (int deg = 0; deg <= r.precision; ++deg) {
    for (int a = 0; a <= deg; ++a) {
      int b = deg - a;
      double q = 0.0;
      for (std::size_t i = 0; i < r.points.size(); ++i)
        q += r.weights[i] * std::pow(r.points[i][1], a) * std::pow(r.points[i][2], b);
      double exact = reference_monomial_integral(a, b);
      if (std::abs(q - exact) > 1e-13 * exact)
        throw std::logic_error(std::string(rule_name(r.kind)) + " fails exactness check");
    }
  }
}

QuadratureRule make(RuleKind kind) {
  QuadratureRule r{kind, {}, {}, 0};
  switch (kind) {
    case RuleKind::Centroid1:
      r.points = {{1.0 / 3, 1.0 / 3, 1.0 / 3}};
      r.weights = {0.5};
      r.precision = 1;
      break;
    case RuleKind::Gauss3:
      // Edge midpoints.
      add_orbit3(r, 0.5, 0.0, 1.0 / 6);
      r.precision = 2;
      break;
    case RuleKind::Gauss4:
      r.points = {{1.0 / 3, 1.0 / 3, 1.0 / 3}};
      r.weights = {-27.0 / 96};
      add_orbit3(r, 0.2, 0.6, 25.0 / 96);
      r.precision = 3;
      break;
    case RuleKind::VertexMidside7:
      r.points = {{1.0 / 3, 1.0 / 3, 1.0 / 3}};
      r.weights = {27.0 / 120};
      add_orbit3(r, 0.0, 1.0, 3.0 / 120);
      add_orbit3(r, 0.5, 0.0, 8.0 / 120);
      r.precision = 3;
      break;
    case RuleKind::ErrorRule: {
      const double s = std::sqrt(15.0);
      r.points = {{1.0 / 3, 1.0 / 3, 1.0 / 3}};
      r.weights = {9.0 / 80};
      add_orbit3(r, (6.0 - s) / 21, (9.0 + 2 * s) / 21, (155.0 - s) / 2400);
      add_orbit3(r, (6.0 + s) / 21, (9.0 - 2 * s) / 21, (155.0 + s) / 2400);
      r.precision = 5;
      break;
    }
  }
  validate(r);
  return r;
}

}  // namespace

double reference_monomial_integral(int a, int b) {
  return factorial(a) * factorial(b) / factorial(a + b + 2);
}

const char* rule_name(RuleKind kind) {
  switch (kind) {
    case RuleKind::Centroid1: return "Centroid1";
    case RuleKind::Gauss3: return "Gauss3";
    case RuleKind::Gauss4: return "Gauss4";
    case RuleKind::VertexMidside7: return "VertexMidside7";
    case RuleKind::ErrorRule: return "ErrorRule";
  }
  return "?";
}

const QuadratureRule& rule(RuleKind kind) {
  static const QuadratureRule rules[] = {
      make(RuleKind::Centroid1), make(RuleKind::Gauss3), make(RuleKind::Gauss4),
      make(RuleKind::VertexMidside7), make(RuleKind::ErrorRule)};
  return rules[static_cast<int>(kind)];
}

MappedRule map_to_cell(const QuadratureRule& r, const Triangle& cell) {
  double area = signed_area(cell);
  double scale = longest_edge(cell);
  if (!(std::abs(area) > 1e-300) || std::abs(area) <= 1e-14 * scale * scale)
    throw std::invalid_argument("map_to_cell: degenerate cell");
  MappedRule m;
  m.points.reserve(r.points.size());
  m.weights.reserve(r.points.size());
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const auto& l = r.points[i];
    m.points.push_back({l[0] * cell[0].x + l[1] * cell[1].x + l[2] * cell[2].x,
                        l[0] * cell[0].y + l[1] * cell[1].y + l[2] * cell[2].y});
    m.weights.push_back(r.weights[i] * 2.0 * std::abs(area));
  }
  return m;
}

RuleKind select_outer_rule(const Mesh& mesh, int k, int kp, double delta) {
  double d = dist(mesh.barycenters[k], mesh.barycenters[kp]);
  return d < delta - mesh.h_max ? RuleKind::Gauss4 : RuleKind::VertexMidside7;
}

}  // namespace nlfem
