#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "bimoment/binary_io.hpp"
#include "bimoment/fiber.hpp"
#include "test_util.hpp"

using namespace bimoment;

namespace {

ControlPolygon square(double lo, double hi) {
  ControlPolygon p;
  p.vertices = {{lo, lo}, {hi, lo}, {hi, hi}, {lo, hi}};
  return p;
}

BivariateField xy_field(int n) {
  const auto g = synthetic_grid(n, n);
  std::vector<double> a(g.vertex_count()), b(g.vertex_count());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = g.position(i)[0];
    b[i] = g.position(i)[1];
  }
  return {ScalarGrid(g, a), ScalarGrid(g, b)};
}

}  // namespace

TEST_CASE("signed distance to the unit square") {
  const auto sq = square(0.0, 1.0);
  CHECK(polygon_signed_distance({0.5, 0.5}, sq) == doctest::Approx(-0.5));
  CHECK(polygon_signed_distance({1.5, 0.5}, sq) == doctest::Approx(0.5));
  CHECK(polygon_signed_distance({-0.3, -0.4}, sq) == doctest::Approx(0.5));
  CHECK(polygon_signed_distance({1.0, 0.3}, sq) == 0.0);
  CHECK(polygon_signed_distance({0.0, 0.0}, sq) == 0.0);
}

TEST_CASE("polygon validation") {
  CHECK_NOTHROW(square(0, 1).validate());
  ControlPolygon two;
  two.vertices = {{0, 0}, {1, 1}};
  CHECK_THROWS_AS(two.validate(), ValidationError);
  ControlPolygon bowtie;
  bowtie.vertices = {{0, 0}, {1, 1}, {1, 0}, {0, 1}};
  CHECK_THROWS_AS(bowtie.validate(), ValidationError);
  ControlPolygon repeated;
  repeated.vertices = {{0, 0}, {1, 0}, {1, 0}, {0, 1}};
  CHECK_THROWS_AS(repeated.validate(), ValidationError);
  ControlPolygon open = square(0, 1);
  open.closed = false;
  CHECK_THROWS_AS(open.validate(), ValidationError);
  // Self-intersection is judged in window-normalized coordinates.
  ControlPolygon thin;
  thin.vertices = {{0, 0}, {1e-6, 0}, {1e-6, 1e-6}, {0, 1e-6}};
  CHECK_NOTHROW(thin.validate(RangeWindow{0, 1, 0, 1}));
}

TEST_CASE("polygon JSON") {
  CHECK(parse_polygon_json("[[0,0],[1,0],[0,1]]").vertices.size() == 3);
  CHECK(parse_polygon_json(R"({"polygon": [[0,0],[1,0],[0,1],[0.2,0.5]]})").vertices.size() == 4);
  CHECK_THROWS_AS(parse_polygon_json("[[0,0],[1]]"), ValidationError);
  CHECK_THROWS_AS(parse_polygon_json("{\"points\": []}"), ValidationError);
  CHECK_THROWS_AS(parse_polygon_json("not json"), ValidationError);
}

TEST_CASE("open polylines are closed outside the window") {
  const RangeWindow w{0, 1, 0, 1};
  const auto poly = close_polyline({{0.2, 0.5}, {0.5, 0.8}, {0.8, 0.5}}, w);
  REQUIRE(poly.vertices.size() == 5);
  CHECK_NOTHROW(poly.validate(w));
  for (std::size_t i = 3; i < 5; ++i) {
    const auto& v = poly.vertices[i];
    CHECK((v[0] < w.min1 || v[0] > w.max1 || v[1] < w.min2 || v[1] > w.max2));
  }
  // The cap region between the polyline and the window edge is inside.
  CHECK(polygon_signed_distance({0.5, 0.7}, poly) < 0.0);
  CHECK(polygon_signed_distance({0.5, 0.95}, poly) > 0.0);
}

TEST_CASE("square fiber on (x, y) stays within one cell of the boundary") {
  const auto f = xy_field(64);
  const auto sq = square(0.25, 0.75);
  const auto mesh = extract_fiber_surface(f, sq);
  REQUIRE_FALSE(mesh.empty());
  const double h = f.spec().spacing[0];
  const double cell_range = std::sqrt(2.0) * h;
  std::size_t bad = 0;
  for (const auto& v : mesh.values)
    if (!(std::abs(polygon_signed_distance(v, sq)) < cell_range)) ++bad;
  CHECK(bad == 0);
  // Positions agree with their interpolated values for this identity-like field.
  for (std::size_t i = 0; i < mesh.positions.size(); ++i) {
    CHECK(mesh.positions[i][0] == doctest::Approx(mesh.values[i][0]).epsilon(1e-12));
    CHECK(mesh.positions[i][1] == doctest::Approx(mesh.values[i][1]).epsilon(1e-12));
  }
  for (const auto& t : mesh.triangles)
    for (auto i : t) CHECK(i < mesh.positions.size());
}

TEST_CASE("fiber surface is watertight away from the domain boundary") {
  const auto f = xy_field(17);
  const auto mesh = extract_fiber_surface(f, square(0.3, 0.7));
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      auto a = t[e], b = t[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      ++edges[{a, b}];
    }
  auto on_cap = [&](std::uint32_t i) {
    const double z = mesh.positions[i][2];
    return z == 0.0 || z == 1.0;
  };
  int open_edges = 0;
  for (const auto& [e, n] : edges)
    if (n != 2 && !(on_cap(e.first) && on_cap(e.second))) ++open_edges;
  CHECK(open_edges == 0);
}

TEST_CASE("thin rectangle collapses onto the intersection of two isosurfaces") {
  const auto f = xy_field(32);
  const auto& g = f.spec();
  const double k1 = g.position(12, 0, 0)[0], k2 = g.position(0, 19, 0)[1];
  const double eps = 1e-4;
  ControlPolygon rect;
  rect.vertices = {{k1 - eps, k2 - eps}, {k1 + eps, k2 - eps}, {k1 + eps, k2 + eps}, {k1 - eps, k2 + eps}};
  const auto fiber = extract_fiber_surface(f, rect);
  REQUIRE_FALSE(fiber.empty());

  // Independent construction: the f1 = k1 and f2 = k2 level sets meet along
  // the vertical line through (x*, y*).
  const auto iso1 = extract_isosurface(f, 1, k1);
  const auto iso2 = extract_isosurface(f, 2, k2);
  REQUIRE_FALSE(iso1.empty());
  REQUIRE_FALSE(iso2.empty());
  double x_star = 0.0, y_star = 0.0;
  for (const auto& p : iso1.positions) x_star += p[0] / iso1.positions.size();
  for (const auto& p : iso2.positions) y_star += p[1] / iso2.positions.size();

  const double bound = std::sqrt(2.0) * g.spacing[0];
  double zmin = 1.0, zmax = 0.0;
  for (const auto& p : fiber.positions) {
    CHECK(std::hypot(p[0] - x_star, p[1] - y_star) < bound);
    zmin = std::min(zmin, p[2]);
    zmax = std::max(zmax, p[2]);
  }
  CHECK(zmin == 0.0);
  CHECK(zmax == 1.0);
}

TEST_CASE("empty meshes") {
  const auto g = synthetic_grid(6, 6);
  const BivariateField constant(ScalarGrid(g, std::vector<double>(g.vertex_count(), 0.5)),
                                ScalarGrid(g, std::vector<double>(g.vertex_count(), 0.5)));
  CHECK(extract_fiber_surface(constant, square(0.0, 1.0)).empty());
  CHECK(extract_fiber_surface(xy_field(6), square(5.0, 6.0)).empty());
  CHECK_THROWS_AS(extract_isosurface(constant, 3, 0.0), ValidationError);
}

TEST_CASE("mesh export") {
  TempDir dir("fiber");
  SUBCASE("empty mesh") {
    export_mesh({}, dir / "empty.obj", MeshFormat::kObj);
    CHECK(read_text(dir / "empty.obj").empty());
    export_mesh({}, dir / "empty.json", MeshFormat::kJson);
    CHECK(parse_mesh_json(read_text(dir / "empty.json")).empty());
  }
  SUBCASE("one triangle OBJ") {
    TriangleMesh m;
    m.positions = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    m.values = {{0, 0}, {1, 0}, {0, 1}};
    m.triangles = {{0, 1, 2}};
    export_mesh(m, dir / "tri.obj", mesh_format_from_path(dir / "tri.obj"));
    const auto text = read_text(dir / "tri.obj");
    CHECK(std::count(text.begin(), text.end(), 'v') == 3);
    CHECK(text.find("f 1 2 3\n") != std::string::npos);
  }
  SUBCASE("JSON round trip is bit-equal") {
    const auto mesh = extract_fiber_surface(xy_field(9), square(0.2, 0.7));
    export_mesh(mesh, dir / "m.json", MeshFormat::kJson);
    const auto back = parse_mesh_json(read_text(dir / "m.json"));
    CHECK(back.positions == mesh.positions);
    CHECK(back.values == mesh.values);
    CHECK(back.triangles == mesh.triangles);
  }
  SUBCASE("errors carry the path") {
    CHECK_THROWS_AS(mesh_format_from_path("mesh.ply"), ValidationError);
    std::filesystem::create_directories(dir / "blocker");
    write_text(dir / "blocker/file", "x");
    try {
      export_mesh({}, dir / "blocker/file/m.obj", MeshFormat::kObj);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("blocker/file/m.obj") != std::string::npos);
    }
  }
}
