// Bowyer-Watson Delaunay triangulation with a convex-hull completion pass.
//
// The super-triangle variant can lose hull edges when boundary points are
// (nearly) collinear, which is exactly the situation created by the frame
// anchors. Any pocket left between the triangulated region and the convex hull
// is filled by ear clipping and the result is re-legalised with Lawson flips.

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "demorph/error.hpp"
#include "demorph/morph.hpp"

namespace demorph {

namespace {

using Real = long double;

Real orient(const Point2& a, const Point2& b, const Point2& c) {
  return (static_cast<Real>(b.x) - a.x) * (static_cast<Real>(c.y) - a.y) -
         (static_cast<Real>(b.y) - a.y) * (static_cast<Real>(c.x) - a.x);
}

// > 0 when d lies strictly inside the circumcircle of the positively oriented (a, b, c).
Real in_circle(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
  const Real adx = static_cast<Real>(a.x) - d.x, ady = static_cast<Real>(a.y) - d.y;
  const Real bdx = static_cast<Real>(b.x) - d.x, bdy = static_cast<Real>(b.y) - d.y;
  const Real cdx = static_cast<Real>(c.x) - d.x, cdy = static_cast<Real>(c.y) - d.y;
  const Real ad = adx * adx + ady * ady;
  const Real bd = bdx * bdx + bdy * bdy;
  const Real cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

using Edge = std::pair<int, int>;

struct Mesh {
  std::vector<Point2> pts;
  std::vector<Triangle> tris;  // positively oriented
  Real eps = 0;                // orientation tolerance scaled to the point cloud

  bool positive(const Triangle& t) const { return orient(pts[t[0]], pts[t[1]], pts[t[2]]) > eps; }
};

void bowyer_watson(Mesh& m, int first_real, int count) {
  for (int p = first_real; p < first_real + count; ++p) {
    const Point2& q = m.pts[p];
    std::vector<Triangle> keep;
    std::map<Edge, int> cavity_edges;
    for (const auto& t : m.tris) {
      if (in_circle(m.pts[t[0]], m.pts[t[1]], m.pts[t[2]], q) > 0) {
        for (int e = 0; e < 3; ++e) cavity_edges[{t[e], t[(e + 1) % 3]}] += 1;
      } else {
        keep.push_back(t);
      }
    }
    for (const auto& [edge, n] : cavity_edges) {
      if (cavity_edges.count({edge.second, edge.first})) continue;  // interior to the cavity
      const Triangle t{edge.first, edge.second, p};
      if (m.positive(t)) keep.push_back(t);
    }
    m.tris = std::move(keep);
  }
}

std::vector<Edge> boundary_edges(const std::vector<Triangle>& tris) {
  std::map<Edge, int> directed;
  for (const auto& t : tris) {
    for (int e = 0; e < 3; ++e) directed[{t[e], t[(e + 1) % 3]}] = 1;
  }
  std::vector<Edge> out;
  for (const auto& [edge, _] : directed) {
    if (!directed.count({edge.second, edge.first})) out.push_back(edge);
  }
  return out;
}

bool point_in_triangle(const Mesh& m, const Triangle& t, int p) {
  const auto& a = m.pts[t[0]];
  const auto& b = m.pts[t[1]];
  const auto& c = m.pts[t[2]];
  const auto& q = m.pts[p];
  return orient(a, b, q) >= -m.eps && orient(b, c, q) >= -m.eps && orient(c, a, q) >= -m.eps;
}

// Fill concave pockets of the triangulated region until its boundary is convex.
void complete_hull(Mesh& m) {
  for (int guard = 0; guard < 10000; ++guard) {
    const auto edges = boundary_edges(m.tris);
    std::map<int, int> next;
    for (const auto& [a, b] : edges) next[a] = b;
    bool added = false;
    for (const auto& [a, b] : edges) {
      const auto it = next.find(b);
      if (it == next.end()) continue;
      const int c = it->second;
      if (c == a) continue;
      // Interior lies to the left of a->b; a right turn at b marks a pocket.
      if (orient(m.pts[a], m.pts[b], m.pts[c]) >= -m.eps) continue;
      const Triangle ear{a, c, b};
      bool blocked = false;
      for (int p = 0; p < static_cast<int>(m.pts.size()) && !blocked; ++p) {
        if (p == a || p == b || p == c) continue;
        blocked = point_in_triangle(m, ear, p) && next.count(p);
      }
      if (blocked) continue;
      m.tris.push_back(ear);
      added = true;
      break;
    }
    if (!added) return;
  }
}

void legalize(Mesh& m) {
  for (int guard = 0; guard < 100000; ++guard) {
    std::map<Edge, std::pair<int, int>> owner;  // directed edge -> (triangle, opposite vertex)
    for (int i = 0; i < static_cast<int>(m.tris.size()); ++i) {
      const auto& t = m.tris[i];
      for (int e = 0; e < 3; ++e) owner[{t[e], t[(e + 1) % 3]}] = {i, t[(e + 2) % 3]};
    }
    bool flipped = false;
    for (const auto& [edge, info] : owner) {
      const auto twin = owner.find({edge.second, edge.first});
      if (twin == owner.end() || edge.first > edge.second) continue;
      const int a = edge.first, b = edge.second, c = info.second, d = twin->second.second;
      // Triangle (a, b, c) is positive; flip when d sits inside its circumcircle
      // and the quad a-d-b-c is strictly convex.
      if (in_circle(m.pts[a], m.pts[b], m.pts[c], m.pts[d]) <= 0) continue;
      const Triangle t1{c, a, d}, t2{c, d, b};
      if (!m.positive(t1) || !m.positive(t2)) continue;
      m.tris[info.first] = t1;
      m.tris[twin->second.first] = t2;
      flipped = true;
      break;
    }
    if (!flipped) return;
  }
}

}  // namespace

TriangleMesh triangulate(const LandmarkSet& landmarks, ImageSize image_size) {
  const auto all = landmarks.points();
  const double w = image_size.width;
  const double h = image_size.height;

  // Deduplicate, remembering the first original index of each distinct point.
  std::vector<Point2> unique;
  std::vector<int> original;
  for (int i = 0; i < static_cast<int>(all.size()); ++i) {
    const auto& p = all[i];
    if (!(p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h)) {
      throw Error(ErrorCategory::geometry, "morph_synthesis",
                  "point " + std::to_string(i) + " lies outside the image frame");
    }
    const bool dup = std::any_of(unique.begin(), unique.end(), [&](const Point2& q) {
      return std::abs(q.x - p.x) < 1e-9 && std::abs(q.y - p.y) < 1e-9;
    });
    if (!dup) {
      unique.push_back(p);
      original.push_back(i);
    }
  }
  if (unique.size() < 3) {
    throw Error(ErrorCategory::geometry, "morph_synthesis", "triangulation needs at least 3 distinct points");
  }

  double min_x = unique[0].x, max_x = unique[0].x, min_y = unique[0].y, max_y = unique[0].y;
  for (const auto& p : unique) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double extent = std::max({max_x - min_x, max_y - min_y, 1e-12});

  Mesh m;
  m.eps = static_cast<Real>(1e-12) * extent * extent;
  bool collinear = true;
  for (std::size_t j = 1; j < unique.size() && collinear; ++j) {
    for (std::size_t k = j + 1; k < unique.size() && collinear; ++k) {
      collinear = std::abs(orient(unique[0], unique[j], unique[k])) <= m.eps;
    }
  }
  if (collinear) {
    throw Error(ErrorCategory::geometry, "morph_synthesis", "all landmark points are collinear");
  }

  const double cx = 0.5 * (min_x + max_x);
  const double cy = 0.5 * (min_y + max_y);
  const double big = 64.0 * extent;
  const int n = static_cast<int>(unique.size());
  m.pts = unique;
  m.pts.push_back({cx - big, cy - big});
  m.pts.push_back({cx + big, cy - big});
  m.pts.push_back({cx, cy + big});
  Triangle super{n, n + 1, n + 2};
  if (!m.positive(super)) std::swap(super[1], super[2]);
  m.tris.push_back(super);

  bowyer_watson(m, 0, n);
  std::erase_if(m.tris, [n](const Triangle& t) { return t[0] >= n || t[1] >= n || t[2] >= n; });
  m.pts.resize(n);
  complete_hull(m);
  legalize(m);

  TriangleMesh mesh;
  mesh.triangles.reserve(m.tris.size());
  for (const auto& t : m.tris) mesh.triangles.push_back({original[t[0]], original[t[1]], original[t[2]]});
  std::sort(mesh.triangles.begin(), mesh.triangles.end());
  return mesh;
}

}  // namespace demorph
