#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bimoment/csp.hpp"
#include "bimoment/field.hpp"

namespace bimoment {

// Closed range-space polygon selecting a fiber surface.
struct ControlPolygon {
  std::vector<Point2> vertices;
  bool closed = true;

  // At least 3 distinct vertices, closed, and simple within 1e-12 in
  // window-normalized coordinates (the polygon's own bounding box when no
  // window is given). Throws ValidationError.
  void validate(const std::optional<RangeWindow>& window = std::nullopt) const;
};

// Closes an open polyline with two extra vertices placed well outside the
// data window, so the closing edges never cut through the data range.
ControlPolygon close_polyline(const std::vector<Point2>& polyline, const RangeWindow& data_window);

// Euclidean distance to the boundary, negative inside (even-odd rule).
double polygon_signed_distance(const Point2& p, const ControlPolygon& poly);

struct TriangleMesh {
  std::vector<Vec3> positions;
  std::vector<Point2> values;  // interpolated (f1, f2) per vertex
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

inline constexpr double kMinTriangleArea = 1e-14;

// Zero level set of a per-vertex scalar over the Freudenthal tets. Edge
// crossings are keyed by the (sorted) grid edge, so neighbouring tets share
// vertices; triangles face increasing scalar.
TriangleMesh extract_level_set(const BivariateField& field, std::span<const double> scalar);

TriangleMesh extract_fiber_surface(const BivariateField& field, const ControlPolygon& poly);

// Isosurface of f1 (channel 1) or f2 (channel 2) at `iso`.
TriangleMesh extract_isosurface(const BivariateField& field, int channel, double iso);

enum class MeshFormat { kObj, kJson };

MeshFormat mesh_format_from_path(const std::filesystem::path& path);
std::string mesh_obj(const TriangleMesh& mesh);
std::string mesh_json(const TriangleMesh& mesh);
TriangleMesh parse_mesh_json(const std::string& text);
void export_mesh(const TriangleMesh& mesh, const std::filesystem::path& path, MeshFormat format);

ControlPolygon parse_polygon_json(const std::string& text);

}  // namespace bimoment
