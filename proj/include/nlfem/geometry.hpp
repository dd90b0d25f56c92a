#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nlfem/mesh.hpp"
#include "nlfem/point.hpp"

namespace nlfem {

enum class BallStrategy {
  ExactCaps,
  NoCaps,
  ApproxCaps,
  Barycenter,
  Overlap,
  Shifted,
  BarycenterNoCaps,
  BarycenterApproxCaps,
  ShiftedNoCaps
};

const char* strategy_name(BallStrategy s);
// Accepts the CLI spellings (exactcaps, shifted-nocaps, ...).
BallStrategy parse_strategy(const std::string& name);
bool is_shifted(BallStrategy s);

enum class Overlap { Full, Partial, None };

// Circular segment cut from the ball by the cord a-b; the arc runs
// counterclockwise from a to b about center.
struct Cap {
  Point center;
  double radius = 0.0;
  Point a, b;
  double theta = 0.0;  // half of the arc angle
};

struct QuadCell {
  enum class Kind : std::uint8_t { Triangle, Cap };
  Kind kind = Kind::Triangle;
  bool whole = false;  // triangle equals the parent element
  Triangle tri{};
  Cap cap{};
  double area() const;
};

struct CellRef {
  int element = -1;
  QuadCell cell;
};

struct BallDecomposition {
  std::vector<CellRef> cells;
  BallStrategy strategy = BallStrategy::ExactCaps;
  Point center;
  Point shifted_center;
  double area() const;
};

// Intersection of a closed disk with a counterclockwise triangle.
struct BallCut {
  Overlap type = Overlap::None;
  std::vector<Point> polygon;  // convex, counterclockwise; may have < 3 points
  std::vector<Cap> caps;
};

std::vector<int> candidate_elements(const Mesh& mesh, Point x, double delta);
Overlap classify_overlap(const Triangle& t, Point x, double delta);
std::vector<double> edge_circle_intersections(Point vi, Point vj, Point x, double delta);
BallCut cut_triangle(const Triangle& t, Point x, double delta);
std::vector<Point> intersection_polygon(const Triangle& t, Point x, double delta);
std::vector<Triangle> fan_triangulate(const std::vector<Point>& polygon);
double polygon_area(const std::vector<Point>& polygon);

double cap_area(double cord, double delta);
double cap_area_from_angle(double theta, double delta);
struct CapPoint {
  Point p;
  double w = 0.0;
};
CapPoint cap_centroid_rule(const Cap& cap);
std::vector<Triangle> approximate_cap_triangles(const Cap& cap, int t);
bool point_in_cap(const Cap& cap, Point y);

// outer_element is required for the shifted strategies (its barycenter
// becomes the ball center); it is located from x when negative.
BallDecomposition decompose_ball(const Mesh& mesh, Point x, double delta, BallStrategy strategy,
                                 int cap_triangles = 1, int outer_element = -1);
// Same as decompose_ball, reusing the storage of out.
void decompose_ball_into(const Mesh& mesh, Point x, double delta, BallStrategy strategy,
                         int cap_triangles, int outer_element, BallDecomposition& out,
                         std::vector<int>& scratch);

// Cells of one triangle against one ball, for the polygon strategies.
// Appends to out.
void cut_cells(const Triangle& t, Point x, double delta, BallStrategy strategy, int cap_triangles,
               int element, std::vector<CellRef>& out);

struct AreaEstimate {
  double value = 0.0;
  double std_error = 0.0;
  long samples = 0;
};

// Stratified sampling estimate of the symmetric difference between the
// exact ball and the strategy's approximate ball.
AreaEstimate ball_difference_area(const Mesh& mesh, Point x, double delta, BallStrategy strategy,
                                  long resolution, int cap_triangles = 1, std::uint64_t seed = 1);

bool point_in_decomposition(const Mesh& mesh, const BallDecomposition& d, Point y);

}  // namespace nlfem
