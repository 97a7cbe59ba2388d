#include "bimoment/fiber.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "bimoment/binary_io.hpp"

namespace bimoment {

namespace {

inline double cross2(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

inline int orient(const Point2& o, const Point2& a, const Point2& b, double eps) {
  const double c = cross2(o, a, b);
  return c > eps ? 1 : (c < -eps ? -1 : 0);
}

bool on_segment(const Point2& a, const Point2& b, const Point2& p, double eps) {
  return std::min(a[0], b[0]) - eps <= p[0] && p[0] <= std::max(a[0], b[0]) + eps &&
         std::min(a[1], b[1]) - eps <= p[1] && p[1] <= std::max(a[1], b[1]) + eps;
}

bool segments_touch(const Point2& a, const Point2& b, const Point2& c, const Point2& d, double eps) {
  const int o1 = orient(a, b, c, eps), o2 = orient(a, b, d, eps);
  const int o3 = orient(c, d, a, eps), o4 = orient(c, d, b, eps);
  if (o1 != o2 && o3 != o4 && o1 * o2 <= 0 && o3 * o4 <= 0 && (o1 != 0 || o2 != 0)) return true;
  if (o1 == 0 && on_segment(a, b, c, eps)) return true;
  if (o2 == 0 && on_segment(a, b, d, eps)) return true;
  if (o3 == 0 && on_segment(c, d, a, eps)) return true;
  if (o4 == 0 && on_segment(c, d, b, eps)) return true;
  return false;
}

double point_segment_distance(const Point2& p, const Point2& a, const Point2& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p[0] - (a[0] + t * dx), p[1] - (a[1] + t * dy));
}

}  // namespace

void ControlPolygon::validate(const std::optional<RangeWindow>& window) const {
  if (!closed) throw ValidationError("only closed control polygons are supported");
  const std::size_t n = vertices.size();
  if (n < 3) throw ValidationError("a control polygon needs at least 3 vertices");
  for (const auto& v : vertices)
    if (!std::isfinite(v[0]) || !std::isfinite(v[1])) throw ValidationError("control polygon has non-finite vertices");

  double x0 = vertices[0][0], x1 = x0, y0 = vertices[0][1], y1 = y0;
  for (const auto& v : vertices) {
    x0 = std::min(x0, v[0]);
    x1 = std::max(x1, v[0]);
    y0 = std::min(y0, v[1]);
    y1 = std::max(y1, v[1]);
  }
  double sx = x1 - x0, sy = y1 - y0;
  double ox = x0, oy = y0;
  if (window) {
    sx = window->width1();
    sy = window->width2();
    ox = window->min1;
    oy = window->min2;
  }
  if (!(sx > 0.0) || !(sy > 0.0)) throw ValidationError("control polygon is degenerate");
  std::vector<Point2> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = {(vertices[i][0] - ox) / sx, (vertices[i][1] - oy) / sy};

  constexpr double eps = 1e-12;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % n];
    if (std::hypot(b[0] - a[0], b[1] - a[1]) <= eps) throw ValidationError("control polygon has a zero-length edge");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& c = p[j];
      const auto& d = p[(j + 1) % n];
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) {
        // Shared vertex; reject only a fold back along the same line.
        const Point2& shared = j == i + 1 ? b : a;
        const Point2& u = j == i + 1 ? a : b;
        const Point2& w = j == i + 1 ? d : c;
        if (orient(shared, u, w, eps) == 0 &&
            (u[0] - shared[0]) * (w[0] - shared[0]) + (u[1] - shared[1]) * (w[1] - shared[1]) > 0.0)
          throw ValidationError("control polygon folds back on itself");
        continue;
      }
      if (segments_touch(a, b, c, d, eps))
        throw ValidationError(fmt::format("control polygon is self-intersecting (edges {} and {})", i, j));
    }
  }
}

ControlPolygon close_polyline(const std::vector<Point2>& polyline, const RangeWindow& w) {
  if (polyline.size() < 2) throw ValidationError("a polyline needs at least 2 vertices");
  const Point2 a = polyline.front(), b = polyline.back();
  // Push both ends away from the polyline's centroid, far beyond the window.
  Point2 c{0.0, 0.0};
  for (const auto& p : polyline) {
    c[0] += p[0] / polyline.size();
    c[1] += p[1] / polyline.size();
  }
  const double far = 4.0 * std::hypot(w.width1(), w.width2());
  double dx = 0.5 * (a[0] + b[0]) - c[0], dy = 0.5 * (a[1] + b[1]) - c[1];
  double len = std::hypot(dx, dy);
  if (len == 0.0) {
    dx = -(b[1] - a[1]);
    dy = b[0] - a[0];
    len = std::hypot(dx, dy);
  }
  if (len == 0.0) throw ValidationError("cannot close a polyline whose endpoints coincide");
  dx /= len;
  dy /= len;
  ControlPolygon poly;
  poly.vertices = polyline;
  poly.vertices.push_back({b[0] + far * dx, b[1] + far * dy});
  poly.vertices.push_back({a[0] + far * dx, a[1] + far * dy});
  return poly;
}

double polygon_signed_distance(const Point2& p, const ControlPolygon& poly) {
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  double dist = std::numeric_limits<double>::infinity();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    dist = std::min(dist, point_segment_distance(p, v[j], v[i]));
    if ((v[i][1] > p[1]) != (v[j][1] > p[1])) {
      const double x = v[j][0] + (p[1] - v[j][1]) * (v[i][0] - v[j][0]) / (v[i][1] - v[j][1]);
      if (p[0] < x) inside = !inside;
    }
  }
  if (dist == 0.0) return 0.0;
  return inside ? -dist : dist;
}

// --- Marching tetrahedra -----------------------------------------------------

TriangleMesh extract_level_set(const BivariateField& field, std::span<const double> s) {
  const GridSpec& g = field.spec();
  if (s.size() != g.vertex_count()) throw ValidationError("scalar size does not match the grid");
  TriangleMesh mesh;
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] < 2) return mesh;

  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  const std::uint64_t nv = g.vertex_count();

  auto vertex_on_edge = [&](std::size_t a, std::size_t b) -> std::uint32_t {
    if (a > b) std::swap(a, b);
    const double t = s[a] / (s[a] - s[b]);
    std::uint64_t key;
    if (t <= 0.0)
      key = a * nv + a;
    else if (t >= 1.0)
      key = b * nv + b;
    else
      key = a * nv + b;
    auto [it, fresh] = edge_vertex.try_emplace(key, static_cast<std::uint32_t>(mesh.positions.size()));
    if (fresh) {
      const double tt = std::clamp(t, 0.0, 1.0);
      const Vec3 pa = g.position(a), pb = g.position(b);
      mesh.positions.push_back({pa[0] + tt * (pb[0] - pa[0]), pa[1] + tt * (pb[1] - pa[1]), pa[2] + tt * (pb[2] - pa[2])});
      const double f1 = field.f1()[a] + tt * (field.f1()[b] - field.f1()[a]);
      const double f2 = field.f2()[a] + tt * (field.f2()[b] - field.f2()[a]);
      mesh.values.push_back({f1, f2});
    }
    return it->second;
  };

  auto emit = [&](std::uint32_t i0, std::uint32_t i1, std::uint32_t i2, const Vec3& toward_outside) {
    if (i0 == i1 || i1 == i2 || i0 == i2) return;
    const auto& p0 = mesh.positions[i0];
    const auto& p1 = mesh.positions[i1];
    const auto& p2 = mesh.positions[i2];
    const Vec3 u{p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
    const Vec3 v{p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
    const Vec3 n{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    const double area = 0.5 * std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (area <= kMinTriangleArea) return;
    if (n[0] * toward_outside[0] + n[1] * toward_outside[1] + n[2] * toward_outside[2] < 0.0) std::swap(i1, i2);
    mesh.triangles.push_back({i0, i1, i2});
  };

  auto mean = [&](std::initializer_list<std::size_t> ids) {
    Vec3 m{0.0, 0.0, 0.0};
    for (auto id : ids) {
      const auto p = g.position(id);
      for (int a = 0; a < 3; ++a) m[a] += p[a] / ids.size();
    }
    return m;
  };

  for (int ck = 0; ck < g.dims[2] - 1; ++ck)
    for (int cj = 0; cj < g.dims[1] - 1; ++cj)
      for (int ci = 0; ci < g.dims[0] - 1; ++ci)
        for (const auto& tet : tet_decompose(g, ci, cj, ck)) {
          std::array<std::size_t, 4> in{}, out{};
          int nin = 0, nout = 0;
          for (auto v : tet) (s[v] < 0.0 ? in[nin++] : out[nout++]) = v;
          if (nin == 0 || nout == 0) continue;
          if (nin == 1 || nout == 1) {
            const bool lone_inside = nin == 1;
            const std::size_t lone = lone_inside ? in[0] : out[0];
            const auto& others = lone_inside ? out : in;
            const auto e0 = vertex_on_edge(lone, others[0]);
            const auto e1 = vertex_on_edge(lone, others[1]);
            const auto e2 = vertex_on_edge(lone, others[2]);
            const Vec3 lp = g.position(lone);
            const Vec3 om = mean({others[0], others[1], others[2]});
            Vec3 dir{om[0] - lp[0], om[1] - lp[1], om[2] - lp[2]};
            if (!lone_inside)
              for (auto& d : dir) d = -d;
            emit(e0, e1, e2, dir);
          } else {
            const auto e0 = vertex_on_edge(in[0], out[0]);
            const auto e1 = vertex_on_edge(in[0], out[1]);
            const auto e2 = vertex_on_edge(in[1], out[1]);
            const auto e3 = vertex_on_edge(in[1], out[0]);
            const Vec3 im = mean({in[0], in[1]});
            const Vec3 om = mean({out[0], out[1]});
            const Vec3 dir{om[0] - im[0], om[1] - im[1], om[2] - im[2]};
            emit(e0, e1, e2, dir);
            emit(e0, e2, e3, dir);
          }
        }
  return mesh;
}

TriangleMesh extract_fiber_surface(const BivariateField& field, const ControlPolygon& poly) {
  poly.validate();
  const std::size_t n = field.spec().vertex_count();
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = polygon_signed_distance({field.f1()[i], field.f2()[i]}, poly);
  return extract_level_set(field, s);
}

TriangleMesh extract_isosurface(const BivariateField& field, int channel, double iso) {
  if (channel != 1 && channel != 2) throw ValidationError("isosurface channel must be 1 or 2");
  const auto& f = channel == 1 ? field.f1() : field.f2();
  std::vector<double> s(f.values().size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = f[i] - iso;
  return extract_level_set(field, s);
}

// --- Export ------------------------------------------------------------------

MeshFormat mesh_format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".obj" || ext == ".OBJ") return MeshFormat::kObj;
  if (ext == ".json" || ext == ".JSON") return MeshFormat::kJson;
  throw ValidationError(fmt::format("cannot infer mesh format from '{}' (use .obj or .json)", path.string()));
}

std::string mesh_obj(const TriangleMesh& mesh) {
  std::string out;
  for (const auto& p : mesh.positions) out += fmt::format("v {:.17g} {:.17g} {:.17g}\n", p[0], p[1], p[2]);
  for (const auto& t : mesh.triangles) out += fmt::format("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1);
  return out;
}

std::string mesh_json(const TriangleMesh& mesh) {
  nlohmann::ordered_json j;
  j["positions"] = mesh.positions;
  j["values"] = mesh.values;
  j["triangles"] = mesh.triangles;
  return j.dump() + "\n";
}

TriangleMesh parse_mesh_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  TriangleMesh mesh;
  mesh.positions = j.at("positions").get<std::vector<Vec3>>();
  mesh.values = j.at("values").get<std::vector<Point2>>();
  mesh.triangles = j.at("triangles").get<std::vector<std::array<std::uint32_t, 3>>>();
  if (mesh.values.size() != mesh.positions.size()) throw ValidationError("mesh values and positions differ in length");
  for (const auto& t : mesh.triangles)
    for (auto i : t)
      if (i >= mesh.positions.size()) throw ValidationError("mesh triangle index out of range");
  return mesh;
}

void export_mesh(const TriangleMesh& mesh, const std::filesystem::path& path, MeshFormat format) {
  try {
    write_text(path, format == MeshFormat::kObj ? mesh_obj(mesh) : mesh_json(mesh));
  } catch (const Error& e) {
    throw Error(fmt::format("mesh export to '{}' failed: {}", path.string(), e.what()));
  }
}

ControlPolygon parse_polygon_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("polygon is not valid JSON: {}", e.what()));
  }
  if (j.is_object() && !j.contains("polygon")) throw ValidationError("polygon object needs a 'polygon' list");
  const auto& verts = j.is_object() ? j["polygon"] : j;
  if (!verts.is_array()) throw ValidationError("polygon must be a list of [u, v] pairs");
  ControlPolygon poly;
  for (const auto& v : verts) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ValidationError("polygon vertices must be [u, v] number pairs");
    poly.vertices.push_back({v[0].get<double>(), v[1].get<double>()});
  }
  return poly;
}

}  // namespace bimoment
