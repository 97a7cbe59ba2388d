#include "bimoment/csp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>

namespace bimoment {

std::string segment_key(int segment_id) {
  if (segment_id == kBoundarySegment) return "boundary";
  if (segment_id == kFullDomain) return "all";
  return std::to_string(segment_id);
}

int parse_segment_key(const std::string& key) {
  if (key == "boundary") return kBoundarySegment;
  if (key == "all") return kFullDomain;
  try {
    std::size_t used = 0;
    const int id = std::stoi(key, &used);
    if (used == key.size()) return id;
  } catch (const std::exception&) {
  }
  throw ValidationError(fmt::format("bad segment key '{}'", key));
}

CSPHistogram::CSPHistogram(const RangeWindow& w, Resolution r) : window(w), res(r) {
  window.validate();
  if (res.r1 < 1 || res.r2 < 1) throw ValidationError("CSP resolution must be positive");
  density.assign(static_cast<std::size_t>(res.r1) * res.r2, 0.0);
}

double CSPHistogram::total_mass() const { return std::accumulate(density.begin(), density.end(), 0.0); }

Point2 CSPHistogram::center(int i1, int i2) const {
  const auto c = normalized_center(i1, i2);
  return {window.min1 + c[0] * window.width1(), window.min2 + c[1] * window.width2()};
}

std::size_t CSPHistogram::nonzero_bins() const {
  return static_cast<std::size_t>(std::count_if(density.begin(), density.end(), [](double d) { return d > 0.0; }));
}

CSPHistogram& CSPHistogram::operator+=(const CSPHistogram& other) {
  if (!(window == other.window) || !(res == other.res))
    throw ValidationError("cannot add CSPs with different windows or resolutions");
  for (std::size_t i = 0; i < density.size(); ++i) density[i] += other.density[i];
  out_of_window += other.out_of_window;
  return *this;
}

// --- Tetrahedral decomposition -----------------------------------------------

const std::array<std::array<int, 4>, 6> kFreudenthalCorners = {{
    {0, 1, 3, 7},
    {0, 1, 5, 7},
    {0, 2, 3, 7},
    {0, 2, 6, 7},
    {0, 4, 5, 7},
    {0, 4, 6, 7},
}};

std::array<Tet, 6> tet_decompose(const GridSpec& grid, int ci, int cj, int ck) {
  if (ci < 0 || cj < 0 || ck < 0 || ci >= grid.dims[0] - 1 || cj >= grid.dims[1] - 1 || ck >= grid.dims[2] - 1)
    throw ValidationError(fmt::format("cell ({}, {}, {}) is outside the grid", ci, cj, ck));
  std::array<std::size_t, 8> corner;
  for (int c = 0; c < 8; ++c) corner[c] = grid.index(ci + (c & 1), cj + ((c >> 1) & 1), ck + ((c >> 2) & 1));
  std::array<Tet, 6> out;
  for (int t = 0; t < 6; ++t)
    for (int v = 0; v < 4; ++v) out[t][v] = corner[kFreudenthalCorners[t][v]];
  return out;
}

double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Vec3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Vec3 w{d[0] - a[0], d[1] - a[1], d[2] - a[2]};
  const double det = u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0]) +
                     u[2] * (v[0] * w[1] - v[1] * w[0]);
  return std::abs(det) / 6.0;
}

// --- Footprints --------------------------------------------------------------

namespace {

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

double polygon_area(const std::vector<Point2>& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u[0] * v[1] - u[1] * v[0];
  }
  return 0.5 * a;
}

// Andrew's monotone chain over 4 points; returns hull indices CCW, collinear
// and duplicate points dropped.
struct HullIndices {
  std::array<int, 8> i{};
  int n = 0;
  const int* begin() const { return i.data(); }
  const int* end() const { return i.data() + n; }
};

HullIndices hull_indices(std::span<const Point2, 4> p) {
  std::array<int, 4> idx{0, 1, 2, 3};
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return p[a] < p[b]; });
  HullIndices h;
  for (int pass = 0; pass < 2; ++pass) {
    const int base = h.n;
    for (int k = 0; k < 4; ++k) {
      const int i = pass == 0 ? idx[k] : idx[3 - k];
      while (h.n >= base + 2 && cross(p[h.i[h.n - 2]], p[h.i[h.n - 1]], p[i]) <= 0.0) --h.n;
      h.i[h.n++] = i;
    }
    --h.n;
  }
  return h;
}

}  // namespace

double TetFootprint::hull_area() const { return hull.size() >= 3 ? std::abs(polygon_area(hull)) : 0.0; }

TetFootprint tet_footprint(std::span<const Point2, 4> values, double volume, double area_epsilon) {
  if (volume < 0.0) throw ValidationError("tet volume must be non-negative");
  TetFootprint fp;
  fp.volume = volume;

  const auto h = hull_indices(values);
  auto& hull = fp.hull;
  hull.reserve(4);
  for (int i : h) hull.push_back(values[i]);
  const double area = hull.size() >= 3 ? std::abs(polygon_area(hull)) : 0.0;

  if (hull.size() < 3 || area < area_epsilon) {
    int a = 0, b = 0;
    double best = -1.0;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) {
        const double dx = values[i][0] - values[j][0], dy = values[i][1] - values[j][1];
        const double d = dx * dx + dy * dy;
        if (d > best) {
          best = d;
          a = i;
          b = j;
        }
      }
    if (best <= area_epsilon * area_epsilon) {
      fp.kind = FootprintKind::kPoint;
      Point2 c{0.0, 0.0};
      for (const auto& v : values) {
        c[0] += 0.25 * v[0];
        c[1] += 0.25 * v[1];
      }
      fp.hull = {c};
      fp.apex = c;
    } else {
      fp.kind = FootprintKind::kSegment;
      fp.hull = {values[a], values[b]};
      fp.apex = {0.5 * (values[a][0] + values[b][0]), 0.5 * (values[a][1] + values[b][1])};
    }
    return fp;
  }

  fp.peak = 3.0 * volume / area;
  if (hull.size() == 3) {
    fp.kind = FootprintKind::kTriangle;
    // The vertex that is not a hull corner projects to the thickest fiber.
    for (int i = 0; i < 4; ++i)
      if (std::find(h.begin(), h.end(), i) == h.end()) fp.apex = values[i];
  } else {
    fp.kind = FootprintKind::kQuad;
    // Intersection of the diagonals h0-h2 and h1-h3.
    const auto& p0 = hull[0];
    const auto& p1 = hull[1];
    const auto& p2 = hull[2];
    const auto& p3 = hull[3];
    const double d1x = p2[0] - p0[0], d1y = p2[1] - p0[1];
    const double d2x = p3[0] - p1[0], d2y = p3[1] - p1[1];
    const double den = d1x * d2y - d1y * d2x;
    const double s = ((p1[0] - p0[0]) * d2y - (p1[1] - p0[1]) * d2x) / den;
    fp.apex = {p0[0] + s * d1x, p0[1] + s * d1y};
  }
  return fp;
}

namespace {

// Small fixed-capacity polygon for clipping.
struct Poly {
  int n = 0;
  std::array<Point2, 16> v;
};

// Keeps the part with sign * (p[axis] - value) >= 0.
Poly clip(const Poly& in, int axis, double value, double sign) {
  Poly out;
  if (in.n == 0) return out;
  for (int i = 0; i < in.n; ++i) {
    const Point2& a = in.v[i];
    const Point2& b = in.v[i + 1 < in.n ? i + 1 : 0];
    const double da = sign * (a[axis] - value);
    const double db = sign * (b[axis] - value);
    if (da >= 0.0) out.v[out.n++] = a;
    if ((da >= 0.0) != (db >= 0.0)) {
      const double t = da / (da - db);
      Point2 p{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])};
      p[axis] = value;
      out.v[out.n++] = p;
    }
  }
  return out;
}

// Both sides of p[axis] = value in one pass; vertices on the line go to both.
void split(const Poly& in, int axis, double value, Poly& below, Poly& above) {
  below.n = above.n = 0;
  for (int i = 0; i < in.n; ++i) {
    const Point2& a = in.v[i];
    const Point2& b = in.v[i + 1 < in.n ? i + 1 : 0];
    const double da = a[axis] - value;
    const double db = b[axis] - value;
    if (da <= 0.0) below.v[below.n++] = a;
    if (da >= 0.0) above.v[above.n++] = a;
    if ((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) {
      const double t = da / (da - db);
      Point2 x{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])};
      x[axis] = value;
      below.v[below.n++] = x;
      above.v[above.n++] = x;
    }
  }
}

std::pair<double, double> extent(const Poly& poly, int axis) {
  double lo = poly.v[0][axis], hi = lo;
  for (int i = 1; i < poly.n; ++i) {
    lo = std::min(lo, poly.v[i][axis]);
    hi = std::max(hi, poly.v[i][axis]);
  }
  return {lo, hi};
}

// Integral over the polygon of the linear function that is 1 at `apex` and 0
// on the line through p and q.
double integrate_tent(const Poly& poly, const Point2& apex, const Point2& p, const Point2& q) {
  double a2 = 0.0, cx = 0.0, cy = 0.0;
  for (int i = 0; i < poly.n; ++i) {
    const auto& u = poly.v[i];
    const auto& w = poly.v[(i + 1) % poly.n];
    const double c = u[0] * w[1] - w[0] * u[1];
    a2 += c;
    cx += (u[0] + w[0]) * c;
    cy += (u[1] + w[1]) * c;
  }
  if (a2 == 0.0) return 0.0;
  const Point2 centroid{cx / (3.0 * a2), cy / (3.0 * a2)};
  const double lambda = cross(centroid, p, q) / cross(apex, p, q);
  return std::abs(0.5 * a2) * std::max(lambda, 0.0);
}

struct Deposit {
  std::size_t bin;
  double mass;
};

struct Scratch {
  std::vector<Deposit> deposits;
  std::vector<double> cuts;
};

// Raster target in bin space: bin (i1, i2) is [i1, i1+1) x [i2, i2+1).
struct BinSpace {
  int r1, r2;

  bool inside(const Point2& p) const { return p[0] >= 0.0 && p[0] <= r1 && p[1] >= 0.0 && p[1] <= r2; }
  std::size_t bin_of(const Point2& p) const {
    const int i = std::clamp(static_cast<int>(std::floor(p[0])), 0, r1 - 1);
    const int j = std::clamp(static_cast<int>(std::floor(p[1])), 0, r2 - 1);
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(r1) * j;
  }
};

// Deposits a footprint given in bin-space coordinates. Returns mass placed
// outside the window.
double rasterize_bin_space(const TetFootprint& fp, const BinSpace& space, Scratch& scratch,
                           std::vector<double>& density) {
  const double volume = fp.volume;
  if (volume == 0.0) return 0.0;

  if (fp.kind == FootprintKind::kPoint) {
    if (!space.inside(fp.apex)) return volume;
    density[space.bin_of(fp.apex)] += volume;
    return 0.0;
  }

  if (fp.kind == FootprintKind::kSegment) {
    const Point2 a = fp.hull[0], b = fp.hull[1];
    // Breakpoints where the segment crosses bin edges inside the window.
    auto& cuts = scratch.cuts;
    cuts.assign({0.0, 1.0});
    for (int axis = 0; axis < 2; ++axis) {
      const double lo = std::min(a[axis], b[axis]), hi = std::max(a[axis], b[axis]);
      const double d = b[axis] - a[axis];
      if (d == 0.0) continue;
      const int limit = axis == 0 ? space.r1 : space.r2;
      const int k0 = std::max(0, static_cast<int>(std::ceil(lo)));
      const int k1 = std::min(limit, static_cast<int>(std::floor(hi)));
      for (int k = k0; k <= k1; ++k) {
        const double t = (k - a[axis]) / d;
        if (t > 0.0 && t < 1.0) cuts.push_back(t);
      }
    }
    std::sort(cuts.begin(), cuts.end());
    double out = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double dt = cuts[i + 1] - cuts[i];
      if (dt <= 0.0) continue;
      const double tm = 0.5 * (cuts[i] + cuts[i + 1]);
      const Point2 m{a[0] + tm * (b[0] - a[0]), a[1] + tm * (b[1] - a[1])};
      if (space.inside(m))
        density[space.bin_of(m)] += volume * dt;
      else
        out += volume * dt;
    }
    return out;
  }

  // Tent: fan triangles from the apex to each hull edge.
  auto& deposits = scratch.deposits;
  deposits.clear();
  double total = 0.0;
  double inside = 0.0;
  bool clipped = false;  // some fan crosses the window edge
  const std::size_t nh = fp.hull.size();
  for (std::size_t k = 0; k < nh; ++k) {
    const Point2& p = fp.hull[k];
    const Point2& q = fp.hull[(k + 1) % nh];
    const double area = 0.5 * std::abs(cross(fp.apex, p, q));
    if (area <= 0.0) continue;
    total += area / 3.0;

    double xmin = std::min({fp.apex[0], p[0], q[0]}), xmax = std::max({fp.apex[0], p[0], q[0]});
    double ymin = std::min({fp.apex[1], p[1], q[1]}), ymax = std::max({fp.apex[1], p[1], q[1]});
    if (xmax <= 0.0 || ymax <= 0.0 || xmin >= space.r1 || ymin >= space.r2) {
      clipped = true;
      continue;
    }

    const int c0 = std::max(0, static_cast<int>(std::floor(xmin)));
    const int c1 = std::min(space.r1 - 1, static_cast<int>(std::floor(xmax)));
    const int w0 = std::max(0, static_cast<int>(std::floor(ymin)));
    const int w1 = std::min(space.r2 - 1, static_cast<int>(std::floor(ymax)));
    const bool within = xmin >= 0.0 && ymin >= 0.0 && xmax <= space.r1 && ymax <= space.r2;

    if (within && c0 == c1 && w0 == w1) {
      deposits.push_back({static_cast<std::size_t>(c0) + static_cast<std::size_t>(space.r1) * w0, area / 3.0});
      inside += area / 3.0;
      continue;
    }

    Poly tri;
    tri.n = 3;
    tri.v[0] = fp.apex;
    tri.v[1] = p;
    tri.v[2] = q;
    if (cross(fp.apex, p, q) < 0.0) std::swap(tri.v[1], tri.v[2]);
    if (!within) {
      clipped = true;
      tri = clip(tri, 0, 0.0, 1.0);
      tri = clip(tri, 0, space.r1, -1.0);
      tri = clip(tri, 1, 0.0, 1.0);
      tri = clip(tri, 1, space.r2, -1.0);
    }

    // Peel off one column, then one cell, at a time; the remainders swap
    // between two buffers instead of being copied.
    Poly strip_buf, cell_buf, xa = tri, xb, ya, yb;
    Poly* rest_x = &xa;
    Poly* spare_x = &xb;
    for (int c = c0; c <= c1 && rest_x->n > 0; ++c) {
      const Poly* strip = rest_x;
      if (c < c1) {
        split(*rest_x, 0, c + 1.0, strip_buf, *spare_x);
        std::swap(rest_x, spare_x);
        strip = &strip_buf;
      }
      if (strip->n < 3) continue;
      // Rows actually touched by this strip.
      const auto [ylo, yhi] = extent(*strip, 1);
      const int s0 = std::max(w0, static_cast<int>(std::floor(ylo)));
      const int s1 = std::min(w1, static_cast<int>(std::floor(yhi)));
      const Poly* rest_y = strip;
      Poly* spare_y = &ya;
      Poly* other_y = &yb;
      for (int w = s0; w <= s1 && rest_y->n > 0; ++w) {
        const Poly* cell = rest_y;
        if (w < s1) {
          split(*rest_y, 1, w + 1.0, cell_buf, *spare_y);
          rest_y = spare_y;
          std::swap(spare_y, other_y);
          cell = &cell_buf;
        }
        if (cell->n < 3) continue;
        const double m = integrate_tent(*cell, fp.apex, p, q);
        if (m > 0.0) {
          deposits.push_back({static_cast<std::size_t>(c) + static_cast<std::size_t>(space.r1) * w, m});
          inside += m;
        }
      }
    }
  }

  if (!(total > 0.0)) {
    // Nothing integrable; keep the mass at the apex.
    if (!space.inside(fp.apex)) return volume;
    density[space.bin_of(fp.apex)] += volume;
    return 0.0;
  }
  if (!clipped && inside > 0.0) {
    const double scale = volume / inside;
    for (const auto& d : deposits) density[d.bin] += d.mass * scale;
    return 0.0;
  }
  const double scale = volume / std::max(total, inside);
  for (const auto& d : deposits) density[d.bin] += d.mass * scale;
  return std::max(0.0, volume - inside * scale);
}

TetFootprint to_bin_space(TetFootprint fp, const RangeWindow& w, Resolution res) {
  auto map = [&](Point2& p) {
    p[0] = (p[0] - w.min1) / w.width1() * res.r1;
    p[1] = (p[1] - w.min2) / w.width2() * res.r2;
  };
  for (auto& p : fp.hull) map(p);
  map(fp.apex);
  return fp;
}

}  // namespace

void rasterize_footprint(const TetFootprint& fp, CSPHistogram& hist) {
  const auto mapped = to_bin_space(fp, hist.window, hist.res);
  Scratch scratch;
  hist.out_of_window += rasterize_bin_space(mapped, BinSpace{hist.res.r1, hist.res.r2}, scratch, hist.density);
}

// --- CSP computation ---------------------------------------------------------

int default_thread_count() {
  if (const char* env = std::getenv("BIMOMENT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Accumulates every tet into slot classify(tet) (negative = skip).
template <class Classify>
std::vector<CSPHistogram> accumulate(const BivariateField& field, const RangeWindow& window, Resolution res,
                                     std::size_t nslots, Classify&& classify, const CSPOptions& opts) {
  window.validate();
  if (res.r1 < 2 || res.r2 < 2) throw ValidationError("CSP resolution must be at least 2 per axis");
  const GridSpec& g = field.spec();
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] < 2) throw ValidationError("CSP computation needs at least 2 grid points per axis");

  // Vertex values in window-normalized coordinates.
  const std::size_t nv = g.vertex_count();
  std::vector<Point2> uv(nv);
  for (std::size_t i = 0; i < nv; ++i)
    uv[i] = {(field.f1()[i] - window.min1) / window.width1(), (field.f2()[i] - window.min2) / window.width2()};

  const double tet_vol = g.cell_volume() / 6.0;
  const int cx = g.dims[0] - 1, cy = g.dims[1] - 1, cz = g.dims[2] - 1;
  const std::size_t ncells = g.cell_count();
  const BinSpace space{res.r1, res.r2};

  const int nthreads = opts.strict ? 1 : std::max(1, opts.threads > 0 ? opts.threads : default_thread_count());
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(nthreads), std::max<std::size_t>(ncells, 1)));

  auto run = [&](std::size_t begin, std::size_t end, std::vector<CSPHistogram>& hists) {
    Scratch scratch;
    for (std::size_t c = begin; c < end; ++c) {
      const int ci = static_cast<int>(c % cx);
      const int cj = static_cast<int>((c / cx) % cy);
      const int ck = static_cast<int>(c / (static_cast<std::size_t>(cx) * cy));
      (void)cz;
      for (const auto& tet : tet_decompose(g, ci, cj, ck)) {
        const long slot = classify(tet);
        if (slot < 0) continue;
        auto& h = hists[static_cast<std::size_t>(slot)];
        std::array<Point2, 4> pts;
        for (int v = 0; v < 4; ++v) pts[v] = uv[tet[v]];
        TetFootprint fp = tet_footprint(pts, tet_vol);
        for (auto& p : fp.hull) {
          p[0] *= res.r1;
          p[1] *= res.r2;
        }
        fp.apex[0] *= res.r1;
        fp.apex[1] *= res.r2;
        h.out_of_window += rasterize_bin_space(fp, space, scratch, h.density);
      }
    }
  };

  auto fresh = [&] { return std::vector<CSPHistogram>(nslots, CSPHistogram(window, res)); };

  if (workers <= 1) {
    auto hists = fresh();
    run(0, ncells, hists);
    return hists;
  }

  std::vector<std::vector<CSPHistogram>> partial(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    const std::size_t begin = ncells * w / workers, end = ncells * (w + 1) / workers;
    pool.emplace_back([&, w, begin, end] {
      partial[w] = fresh();
      run(begin, end, partial[w]);
    });
  }
  for (auto& t : pool) t.join();
  auto hists = std::move(partial[0]);
  for (int w = 1; w < workers; ++w)
    for (std::size_t s = 0; s < nslots; ++s) hists[s] += partial[w][s];
  return hists;
}

}  // namespace

CSPHistogram compute_csp(const BivariateField& field, const RangeWindow& window, Resolution res,
                         const TetMask& mask, const CSPOptions& opts) {
  auto hists = accumulate(
      field, window, res, 1, [&](const Tet& t) -> long { return !mask || mask(t) ? 0 : -1; }, opts);
  return std::move(hists[0]);
}

namespace {

void check_labels(const BivariateField& field, const LabelGrid& labels) {
  if (!(labels.spec == field.spec())) throw ValidationError("label grid does not match the field grid");
  if (labels.labels.size() != field.spec().vertex_count()) throw ValidationError("label grid has the wrong size");
}

}  // namespace

CSPHistogram peel_csp(const BivariateField& field, const LabelGrid& labels, int segment_id,
                      const RangeWindow& window, Resolution res, const CSPOptions& opts) {
  check_labels(field, labels);
  if (segment_id != kBoundarySegment && !labels.has_segment(segment_id))
    throw NotFoundError(fmt::format("unknown segment id {}", segment_id));
  const auto& l = labels.labels;
  auto mask = [&](const Tet& t) {
    const bool uniform = l[t[0]] == l[t[1]] && l[t[0]] == l[t[2]] && l[t[0]] == l[t[3]];
    return segment_id == kBoundarySegment ? !uniform : (uniform && l[t[0]] == segment_id);
  };
  return compute_csp(field, window, res, mask, opts);
}

std::map<int, CSPHistogram> peel_all(const BivariateField& field, const LabelGrid& labels,
                                     const RangeWindow& window, Resolution res, const CSPOptions& opts) {
  check_labels(field, labels);
  std::vector<int> ids;
  for (const auto& a : labels.atoms) ids.push_back(a.id);
  std::sort(ids.begin(), ids.end());
  const long boundary_slot = static_cast<long>(ids.size());
  const auto& l = labels.labels;
  auto classify = [&](const Tet& t) -> long {
    const int s = l[t[0]];
    if (s != l[t[1]] || s != l[t[2]] || s != l[t[3]]) return boundary_slot;
    const auto it = std::lower_bound(ids.begin(), ids.end(), s);
    return it != ids.end() && *it == s ? static_cast<long>(it - ids.begin()) : boundary_slot;
  };
  auto hists = accumulate(field, window, res, ids.size() + 1, classify, opts);
  std::map<int, CSPHistogram> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(hists[i]));
  out.emplace(kBoundarySegment, std::move(hists.back()));
  return out;
}

CSPHistogram mc_csp_oracle(const BivariateField& field, const RangeWindow& window, Resolution res,
                           std::size_t n_samples, std::uint64_t rng_seed) {
  if (n_samples < 1) throw ValidationError("Monte-Carlo oracle needs at least one sample");
  CSPHistogram hist(window, res);
  const GridSpec& g = field.spec();
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] < 2) throw ValidationError("Monte-Carlo oracle needs at least 2 grid points per axis");
  const Vec3 extent{(g.dims[0] - 1) * g.spacing[0], (g.dims[1] - 1) * g.spacing[1], (g.dims[2] - 1) * g.spacing[2]};
  const double mass = extent[0] * extent[1] * extent[2] / static_cast<double>(n_samples);

  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto trilinear = [&](const ScalarGrid& f, const std::array<int, 3>& c, const Vec3& t) {
    double v = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      double w = 1.0;
      std::array<int, 3> idx{};
      for (int a = 0; a < 3; ++a) {
        const int bit = (corner >> a) & 1;
        w *= bit ? t[a] : 1.0 - t[a];
        idx[a] = c[a] + bit;
      }
      v += w * f.at(idx[0], idx[1], idx[2]);
    }
    return v;
  };

  auto deposit = [&](const Vec3& frac) {
    std::array<int, 3> cell{};
    Vec3 t{};
    for (int a = 0; a < 3; ++a) {
      const double x = frac[a] * (g.dims[a] - 1);
      cell[a] = std::clamp(static_cast<int>(std::floor(x)), 0, g.dims[a] - 2);
      t[a] = x - cell[a];
    }
    const double v1 = trilinear(field.f1(), cell, t);
    const double v2 = trilinear(field.f2(), cell, t);
    const double u = (v1 - window.min1) / window.width1();
    const double w = (v2 - window.min2) / window.width2();
    if (u < 0.0 || u > 1.0 || w < 0.0 || w > 1.0) {
      hist.out_of_window += mass;
      return;
    }
    const int i1 = std::min(static_cast<int>(u * res.r1), res.r1 - 1);
    const int i2 = std::min(static_cast<int>(w * res.r2), res.r2 - 1);
    hist.at(i1, i2) += mass;
  };

  // Jittered strata, then plain uniform samples for the remainder.
  std::size_t k = static_cast<std::size_t>(std::cbrt(static_cast<double>(n_samples)));
  while ((k + 1) * (k + 1) * (k + 1) <= n_samples) ++k;
  while (k * k * k > n_samples) --k;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t c = 0; c < k; ++c)
        deposit({(a + unit(rng)) / k, (b + unit(rng)) / k, (c + unit(rng)) / k});
  for (std::size_t i = k * k * k; i < n_samples; ++i) deposit({unit(rng), unit(rng), unit(rng)});
  return hist;
}

double l1_distance(const CSPHistogram& a, const CSPHistogram& b) {
  if (!(a.window == b.window) || !(a.res == b.res))
    throw ValidationError("L1 distance needs matching windows and resolutions");
  double s = 0.0;
  for (std::size_t i = 0; i < a.density.size(); ++i) s += std::abs(a.density[i] - b.density[i]);
  return s;
}

}  // namespace bimoment
