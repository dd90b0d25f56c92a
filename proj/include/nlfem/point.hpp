#pragma once

#include <array>
#include <cmath>

namespace nlfem {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }
inline double dist(Point a, Point b) { return norm(a - b); }
inline double dist2(Point a, Point b) {
  Point d = a - b;
  return dot(d, d);
}

using Triangle = std::array<Point, 3>;

// Signed area, positive for counterclockwise vertex order.
inline double signed_area(const Triangle& t) {
  return 0.5 * cross(t[1] - t[0], t[2] - t[0]);
}

inline double longest_edge(const Triangle& t) {
  return std::max({dist(t[0], t[1]), dist(t[1], t[2]), dist(t[2], t[0])});
}

}  // namespace nlfem
